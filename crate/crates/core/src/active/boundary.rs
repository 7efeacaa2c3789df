//! Segment search between nearby points that the classifier separates.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::active::hull::Domain;
use crate::active::score::{max_proba, ProbabilisticClassifier};
use crate::error::{invalid, CcrError, Result};
use crate::learners::argmax;

/// Objective evaluations spent per segment.
pub const SEGMENT_EVALUATIONS: usize = 31;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryPairSet {
    /// Row-index pairs `(i, j)` with `i < j` and different hard labels.
    pub pairs: Vec<(usize, usize)>,
    pub k: usize,
}

impl BoundaryPairSet {
    /// Rows with at least one differently labeled neighbor.
    pub fn boundary_points(&self) -> Vec<usize> {
        let mut pts: Vec<usize> = self.pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
        pts.sort_unstable();
        pts.dedup();
        pts
    }
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices of the `k` nearest rows to row `i`, excluding `i`; ties by index.
pub(crate) fn nearest_neighbors(data: ArrayView2<f64>, i: usize, k: usize) -> Vec<usize> {
    nearest_to(data, data.row(i), k + 1)
        .into_iter()
        .filter(|&j| j != i)
        .take(k)
        .collect()
}

pub(crate) fn nearest_to(data: ArrayView2<f64>, z: ArrayView1<f64>, k: usize) -> Vec<usize> {
    let mut order: Vec<(f64, usize)> = data
        .outer_iter()
        .enumerate()
        .map(|(j, r)| (sq_dist(r, z), j))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    order.into_iter().take(k).map(|(_, j)| j).collect()
}

pub fn boundary_pairs<C: ProbabilisticClassifier + ?Sized>(
    classifier: &C,
    data: ArrayView2<f64>,
    k: usize,
) -> Result<BoundaryPairSet> {
    if k == 0 {
        return Err(invalid("neighbor count must be at least 1"));
    }
    let labels: Vec<usize> = classifier
        .class_probabilities(data)?
        .outer_iter()
        .map(argmax)
        .collect();
    let n = data.nrows();
    let mut pairs: Vec<(usize, usize)> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let labels = &labels;
            nearest_neighbors(data, i, k)
                .into_iter()
                .filter(move |&j| labels[j] != labels[i])
                .map(move |j| (i.min(j), i.max(j)))
        })
        .collect();
    pairs.sort_unstable();
    pairs.dedup();
    Ok(BoundaryPairSet { pairs, k })
}

/// Golden-section search of `max_l g_l` on the segment from `a` to `b`.
/// Returns the best evaluated point and its value.
pub fn segment_minimum<C: ProbabilisticClassifier + ?Sized>(
    classifier: &C,
    a: ArrayView1<f64>,
    b: ArrayView1<f64>,
) -> Result<(Array1<f64>, f64)> {
    let point = |t: f64| -> Array1<f64> { &a * t + &b * (1.0 - t) };
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let mut fc = max_proba(classifier, point(c).view())?;
    let mut fd = max_proba(classifier, point(d).view())?;
    let mut best = if fc <= fd { (c, fc) } else { (d, fd) };
    for _ in 2..SEGMENT_EVALUATIONS {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = max_proba(classifier, point(c).view())?;
            if fc < best.1 {
                best = (c, fc);
            }
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = max_proba(classifier, point(d).view())?;
            if fd < best.1 {
                best = (d, fd);
            }
        }
    }
    Ok((point(best.0), best.1))
}

/// One candidate per boundary pair, kept only if it lies in the domain.
/// Rows of the result are paired with their max-probability values.
pub fn select_boundary_pairs<C: ProbabilisticClassifier + ?Sized>(
    classifier: &C,
    data: ArrayView2<f64>,
    k: usize,
    domain: &Domain,
) -> Result<(Array2<f64>, Vec<f64>)> {
    if data.ncols() != domain.dim() {
        return Err(CcrError::DimensionMismatch {
            expected: domain.dim(),
            actual: data.ncols(),
        });
    }
    let set = boundary_pairs(classifier, data, k)?;
    let found: Vec<Option<(Array1<f64>, f64)>> = set
        .pairs
        .par_iter()
        .map(|&(i, j)| {
            let (z, v) = segment_minimum(classifier, data.row(i), data.row(j))?;
            Ok(if domain.contains(z.view())? {
                Some((z, v))
            } else {
                None
            })
        })
        .collect::<Result<_>>()?;
    let kept: Vec<(Array1<f64>, f64)> = found.into_iter().flatten().collect();
    let mut out = Array2::zeros((kept.len(), data.ncols()));
    for (r, (z, _)) in kept.iter().enumerate() {
        out.row_mut(r).assign(z);
    }
    Ok((out, kept.into_iter().map(|(_, v)| v).collect()))
}
