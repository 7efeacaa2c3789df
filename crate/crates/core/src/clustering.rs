//! K-means over joint `(x, y)` points and elbow-based choice of the cluster
//! count.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, CcrError, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub num_clusters: usize,
    pub seed: u64,
    pub restarts: usize,
    pub max_iter: usize,
}

impl KMeansConfig {
    pub fn new(num_clusters: usize, seed: u64) -> Self {
        KMeansConfig {
            num_clusters,
            seed,
            restarts: 8,
            max_iter: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    /// `L x m` matrix of cluster means.
    pub centroids: Array2<f64>,
    /// Sum of squared distances of the fitting points to their centroids.
    pub inertia: f64,
    pub iterations: usize,
}

#[inline]
fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(u, v)| (u - v) * (u - v)).sum()
}

/// Index of the nearest centroid and the squared distance to it. Ties go to
/// the lowest index.
fn nearest(centroids: ArrayView2<f64>, p: ArrayView1<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (l, c) in centroids.outer_iter().enumerate() {
        let dist = sq_dist(c, p);
        if dist < best.1 {
            best = (l, dist);
        }
    }
    best
}

impl ClusterModel {
    pub fn num_clusters(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.ncols()
    }

    pub fn label(&self, p: ArrayView1<f64>) -> Result<usize> {
        if p.len() != self.dim() {
            return Err(CcrError::DimensionMismatch {
                expected: self.dim(),
                actual: p.len(),
            });
        }
        Ok(nearest(self.centroids.view(), p).0)
    }

    /// Nearest-centroid label for every row.
    pub fn assign(&self, points: ArrayView2<f64>) -> Result<Vec<usize>> {
        if points.ncols() != self.dim() {
            return Err(CcrError::DimensionMismatch {
                expected: self.dim(),
                actual: points.ncols(),
            });
        }
        Ok(points
            .outer_iter()
            .map(|p| nearest(self.centroids.view(), p).0)
            .collect())
    }

    /// Within-cluster sum of squares of `points` under nearest assignment.
    pub fn inertia_of(&self, points: ArrayView2<f64>) -> f64 {
        points
            .outer_iter()
            .map(|p| nearest(self.centroids.view(), p).1)
            .sum()
    }
}

fn check_points(points: ArrayView2<f64>) -> Result<()> {
    if points.nrows() == 0 || points.ncols() == 0 {
        return Err(invalid("k-means needs a non-empty point matrix"));
    }
    for (i, row) in points.outer_iter().enumerate() {
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(CcrError::NonFinite { row: i, column: j });
        }
    }
    Ok(())
}

/// One uniform pick followed by greedy farthest-point seeding.
fn farthest_point_init(points: ArrayView2<f64>, k: usize, rng: &mut rng::Rng) -> Array2<f64> {
    let n = points.nrows();
    let mut centroids = Array2::zeros((k, points.ncols()));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&points.row(first));
    let mut dist: Vec<f64> = points
        .outer_iter()
        .map(|p| sq_dist(p, points.row(first)))
        .collect();
    for l in 1..k {
        let (far, _) = dist
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (i, &d)| if d > b.1 { (i, d) } else { b });
        centroids.row_mut(l).assign(&points.row(far));
        for (d, p) in dist.iter_mut().zip(points.outer_iter()) {
            *d = d.min(sq_dist(p, points.row(far)));
        }
    }
    centroids
}

/// Result of Lloyd iterations from a given starting set of centroids.
#[derive(Debug, Clone)]
pub struct LloydRun {
    pub model: ClusterModel,
    pub labels: Vec<usize>,
    /// Inertia after each assignment step, in order.
    pub trace: Vec<f64>,
}

/// Lloyd iterations from `init` until the assignment stops changing or
/// `max_iter` is reached. An empty cluster is reseeded at the point farthest
/// from its current centroid.
pub fn lloyd(points: ArrayView2<f64>, init: Array2<f64>, max_iter: usize) -> Result<LloydRun> {
    check_points(points)?;
    let k = init.nrows();
    if k == 0 || k > points.nrows() {
        return Err(invalid(format!(
            "cluster count {k} must lie in 1..={}",
            points.nrows()
        )));
    }
    if init.ncols() != points.ncols() {
        return Err(CcrError::DimensionMismatch {
            expected: points.ncols(),
            actual: init.ncols(),
        });
    }
    if max_iter == 0 {
        return Err(invalid("max_iter must be at least 1"));
    }
    let n = points.nrows();
    let m = points.ncols();
    let mut centroids = init;
    let mut labels = vec![usize::MAX; n];
    let mut dists = vec![0.0; n];
    let mut trace = Vec::new();
    let mut iterations = 0;

    loop {
        iterations += 1;
        let assigned: Vec<(usize, f64)> = (0..n)
            .into_par_iter()
            .map(|i| nearest(centroids.view(), points.row(i)))
            .collect();
        let mut changed = false;
        for (i, (l, d)) in assigned.into_iter().enumerate() {
            changed |= labels[i] != l;
            labels[i] = l;
            dists[i] = d;
        }

        let mut counts = vec![0usize; k];
        for &l in &labels {
            counts[l] += 1;
        }
        for l in 0..k {
            if counts[l] > 0 {
                continue;
            }
            // Take the worst-served point from a cluster that can spare it.
            let far = (0..n)
                .filter(|&i| counts[labels[i]] > 1)
                .fold(None, |best: Option<usize>, i| match best {
                    Some(b) if dists[b] >= dists[i] => Some(b),
                    _ => Some(i),
                })
                .expect("k <= n guarantees a donor cluster");
            counts[labels[far]] -= 1;
            counts[l] = 1;
            labels[far] = l;
            dists[far] = 0.0;
            centroids.row_mut(l).assign(&points.row(far));
            changed = true;
        }
        trace.push(dists.iter().sum());

        if !changed || iterations >= max_iter {
            break;
        }

        let mut sums = Array2::<f64>::zeros((k, m));
        for (p, &l) in points.outer_iter().zip(&labels) {
            let mut row = sums.row_mut(l);
            row += &p;
        }
        for (l, mut row) in sums.axis_iter_mut(Axis(0)).enumerate() {
            row /= counts[l] as f64;
        }
        centroids = sums;
    }

    // Final inertia is measured against the returned centroids.
    let inertia = labels
        .iter()
        .zip(points.outer_iter())
        .map(|(&l, p)| sq_dist(centroids.row(l), p))
        .sum();
    Ok(LloydRun {
        model: ClusterModel {
            centroids,
            inertia,
            iterations,
        },
        labels,
        trace,
    })
}

/// Best-of-restarts K-means. Each restart uses farthest-point seeding from a
/// different random first centroid.
pub fn kmeans_fit(points: ArrayView2<f64>, cfg: &KMeansConfig) -> Result<ClusterModel> {
    check_points(points)?;
    if cfg.num_clusters == 0 || cfg.num_clusters > points.nrows() {
        return Err(invalid(format!(
            "cluster count {} must lie in 1..={}",
            cfg.num_clusters,
            points.nrows()
        )));
    }
    if cfg.restarts == 0 {
        return Err(invalid("restarts must be at least 1"));
    }
    let runs: Vec<Result<LloydRun>> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::seeded(rng::derive_seed(cfg.seed, r as u64));
            let init = farthest_point_init(points, cfg.num_clusters, &mut rng);
            lloyd(points, init, cfg.max_iter)
        })
        .collect();
    let mut best: Option<ClusterModel> = None;
    for run in runs {
        let model = run?.model;
        if best.as_ref().is_none_or(|b| model.inertia < b.inertia) {
            best = Some(model);
        }
    }
    Ok(best.expect("restarts >= 1"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElbowReport {
    pub candidate_l: Vec<usize>,
    pub inertias: Vec<f64>,
    pub chosen_l: usize,
    /// False when the largest second difference is under 5% of `I(1)`.
    pub clear_elbow: bool,
}

impl ElbowReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("num_clusters,inertia\n");
        for (l, i) in self.candidate_l.iter().zip(&self.inertias) {
            s.push_str(&format!("{l},{i:?}\n"));
        }
        s
    }
}

/// Runs K-means for `L = 1..=l_max` and picks the `L` with the largest discrete
/// second difference of the inertia curve.
pub fn elbow_select(points: ArrayView2<f64>, l_max: usize, seed: u64) -> Result<ElbowReport> {
    if l_max < 3 {
        return Err(invalid(
            "elbow selection needs l_max >= 3 for a second difference",
        ));
    }
    if l_max > points.nrows() {
        return Err(invalid(format!(
            "l_max {l_max} exceeds the number of points {}",
            points.nrows()
        )));
    }
    let candidate_l: Vec<usize> = (1..=l_max).collect();
    let inertias = candidate_l
        .iter()
        .map(|&l| kmeans_fit(points, &KMeansConfig::new(l, seed)).map(|m| m.inertia))
        .collect::<Result<Vec<f64>>>()?;
    let (chosen_l, best) = second_difference_argmax(&inertias);
    Ok(ElbowReport {
        candidate_l,
        clear_elbow: best >= 0.05 * inertias[0],
        inertias,
        chosen_l,
    })
}

/// `argmax_{2 <= L <= len-1} (I(L-1) - I(L)) - (I(L) - I(L+1))` over a curve
/// indexed from `L = 1`; returns `(L, value)`.
fn second_difference_argmax(inertias: &[f64]) -> (usize, f64) {
    let mut best = (2, f64::NEG_INFINITY);
    for l in 2..inertias.len() {
        let (prev, cur, next) = (inertias[l - 2], inertias[l - 1], inertias[l]);
        let second = (prev - cur) - (cur - next);
        if second > best.1 {
            best = (l, second);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};

    fn column(v: &[f64]) -> Array2<f64> {
        Array1::from(v.to_vec()).insert_axis(Axis(1))
    }

    #[test]
    fn two_pairs_in_one_dimension() {
        let pts = column(&[0.0, 1.0, 10.0, 11.0]);
        let m = kmeans_fit(pts.view(), &KMeansConfig::new(2, 1)).unwrap();
        let mut c: Vec<f64> = m.centroids.column(0).to_vec();
        c.sort_by(f64::total_cmp);
        assert_eq!(c, vec![0.5, 10.5]);
        assert!((m.inertia - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_points_single_cluster() {
        let pts = Array2::from_elem((5, 3), 2.5);
        let m = kmeans_fit(pts.view(), &KMeansConfig::new(1, 0)).unwrap();
        assert_eq!(m.centroids.row(0), array![2.5, 2.5, 2.5]);
        assert_eq!(m.inertia, 0.0);
    }

    #[test]
    fn one_cluster_per_point() {
        let pts = array![[0.0, 1.0], [3.0, -1.0], [7.0, 2.0], [1.0, 1.0]];
        let m = kmeans_fit(pts.view(), &KMeansConfig::new(4, 9)).unwrap();
        assert_eq!(m.inertia, 0.0);
    }

    #[test]
    fn invalid_cluster_counts() {
        let pts = column(&[0.0, 1.0]);
        assert!(kmeans_fit(pts.view(), &KMeansConfig::new(3, 0)).is_err());
        assert!(kmeans_fit(pts.view(), &KMeansConfig::new(0, 0)).is_err());
        let bad = column(&[0.0, f64::NAN]);
        assert!(matches!(
            kmeans_fit(bad.view(), &KMeansConfig::new(1, 0)),
            Err(CcrError::NonFinite { row: 1, column: 0 })
        ));
    }

    #[test]
    fn labels_nearest_with_low_index_ties() {
        let m = ClusterModel {
            centroids: column(&[0.0, 10.0]),
            inertia: 0.0,
            iterations: 0,
        };
        let labels = m.assign(column(&[4.0, 6.0, 5.0, 0.0, 10.0]).view()).unwrap();
        assert_eq!(labels, vec![0, 1, 0, 0, 1]);
        assert!(m.assign(Array2::zeros((1, 2)).view()).is_err());
    }

    #[test]
    fn empty_cluster_is_reseeded() {
        // Both initial centroids far from the data on the same side: the
        // second starts empty and must be repaired.
        let pts = column(&[0.0, 0.1, 5.0, 5.1]);
        let run = lloyd(pts.view(), column(&[-10.0, -20.0]), 100).unwrap();
        let mut counts = [0; 2];
        for &l in &run.labels {
            counts[l] += 1;
        }
        assert!(counts.iter().all(|&c| c > 0));
        assert!((run.model.inertia - 0.01).abs() < 1e-9);
    }

    #[test]
    fn training_labels_reproduced_and_inertia_consistent() {
        let mut rng = rng::seeded(4);
        let pts = Array2::from_shape_fn((60, 3), |_| rng.random::<f64>() * 4.0);
        let init = farthest_point_init(pts.view(), 5, &mut rng::seeded(1));
        let run = lloyd(pts.view(), init, 300).unwrap();
        assert_eq!(run.model.assign(pts.view()).unwrap(), run.labels);
        let direct = run.model.inertia_of(pts.view());
        assert!((direct - run.model.inertia).abs() <= 1e-9 * direct.max(1.0));
        for w in run.trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * w[0].max(1.0));
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let mut rng = rng::seeded(8);
        let pts = Array2::from_shape_fn((80, 2), |_| rng.random::<f64>());
        let cfg = KMeansConfig::new(4, 17);
        assert_eq!(
            kmeans_fit(pts.view(), &cfg).unwrap(),
            kmeans_fit(pts.view(), &cfg).unwrap()
        );
    }

    #[test]
    fn elbow_finds_two_blobs() {
        let mut rng = rng::seeded(2);
        let v: Vec<f64> = (0..40)
            .map(|i| if i % 2 == 0 { 0.0 } else { 100.0 } + rng.random_range(-0.01..0.01))
            .collect();
        let r = elbow_select(column(&v).view(), 6, 0).unwrap();
        assert_eq!(r.chosen_l, 2);
        assert!(r.clear_elbow);
        assert_eq!(r.inertias.len(), 6);
        assert!(elbow_select(column(&v).view(), 2, 0).is_err());
    }

    #[test]
    fn elbow_flags_featureless_cloud() {
        // A uniform cloud in many dimensions loses inertia at a steady rate,
        // so no L stands out.
        let mut rng = rng::seeded(3);
        let pts = Array2::from_shape_fn((400, 12), |_| rng.random::<f64>());
        let r = elbow_select(pts.view(), 6, 0).unwrap();
        assert!(!r.clear_elbow, "{:?}", r.inertias);
        for w in r.inertias.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn second_difference_rule() {
        assert_eq!(second_difference_argmax(&[100.0, 10.0, 9.0, 8.0]).0, 2);
        assert_eq!(second_difference_argmax(&[100.0, 90.0, 10.0, 9.0, 8.5]).0, 3);
    }
}
