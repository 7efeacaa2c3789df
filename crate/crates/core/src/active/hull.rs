//! Search domains: the convex hull of the initial inputs or a fixed box.

use minilp::{ComparisonOp, LinearExpr, OptimizationDirection, Problem};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng as _;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::active::score::{max_proba, ProbabilisticClassifier};
use crate::error::{invalid, CcrError, Result};
use crate::rng::{derive_seed, seeded, Rng};

/// Residual slack below which a point counts as inside.
pub const HULL_TOLERANCE: f64 = 1e-8;

/// Convex hull of a finite vertex set, tested by linear programming.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HullDomain {
    vertices: Array2<f64>,
    center: Vec<f64>,
    range: Vec<f64>,
}

impl HullDomain {
    pub fn new(vertices: Array2<f64>) -> Result<Self> {
        if vertices.nrows() == 0 || vertices.ncols() == 0 {
            return Err(invalid("hull needs at least one vertex of positive dimension"));
        }
        if let Some(((i, j), _)) = vertices.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(CcrError::NonFinite { row: i, column: j });
        }
        let d = vertices.ncols();
        let mut center = vec![0.0; d];
        let mut range = vec![1.0; d];
        for j in 0..d {
            let col = vertices.column(j);
            let lo = col.fold(f64::INFINITY, |a, &b| a.min(b));
            let hi = col.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            center[j] = 0.5 * (lo + hi);
            if hi > lo {
                range[j] = hi - lo;
            }
        }
        Ok(HullDomain {
            vertices,
            center,
            range,
        })
    }

    pub fn dim(&self) -> usize {
        self.vertices.ncols()
    }

    pub fn vertices(&self) -> ArrayView2<'_, f64> {
        self.vertices.view()
    }

    /// Per-coordinate extent of the vertex set (1 where it is flat).
    pub fn extent(&self) -> &[f64] {
        &self.range
    }

    fn normalized(&self, j: usize, v: f64) -> f64 {
        (v - self.center[j]) / self.range[j]
    }

    /// Smallest L1 distance, in normalized coordinates, from `z` to the hull.
    pub fn distance(&self, z: ArrayView1<f64>) -> Result<f64> {
        let d = self.dim();
        if z.len() != d {
            return Err(CcrError::DimensionMismatch {
                expected: d,
                actual: z.len(),
            });
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(invalid("hull query has a non-finite coordinate"));
        }
        let mut lp = Problem::new(OptimizationDirection::Minimize);
        let lambdas: Vec<_> = (0..self.vertices.nrows())
            .map(|_| lp.add_var(0.0, (0.0, f64::INFINITY)))
            .collect();
        for j in 0..d {
            let up = lp.add_var(1.0, (0.0, f64::INFINITY));
            let down = lp.add_var(1.0, (0.0, f64::INFINITY));
            let mut expr = LinearExpr::empty();
            for (i, &l) in lambdas.iter().enumerate() {
                expr.add(l, self.normalized(j, self.vertices[[i, j]]));
            }
            expr.add(up, 1.0);
            expr.add(down, -1.0);
            lp.add_constraint(expr, ComparisonOp::Eq, self.normalized(j, z[j]));
        }
        let sum: Vec<_> = lambdas.iter().map(|&l| (l, 1.0)).collect();
        lp.add_constraint(sum.as_slice(), ComparisonOp::Eq, 1.0);
        let solution = lp.solve().map_err(|e| CcrError::Solver(e.to_string()))?;
        Ok(solution.objective().max(0.0))
    }

    pub fn contains(&self, z: ArrayView1<f64>) -> Result<bool> {
        if z.len() == self.dim() {
            // Cheap rejection outside the bounding box.
            let outside = (0..self.dim()).any(|j| self.normalized(j, z[j]).abs() > 0.5 + HULL_TOLERANCE);
            if outside {
                return Ok(false);
            }
        }
        Ok(self.distance(z)? <= HULL_TOLERANCE)
    }

    /// Random convex combination of up to `d + 1` distinct vertices.
    pub fn sample_interior(&self, rng: &mut Rng) -> Array1<f64> {
        let m = self.vertices.nrows();
        let k = (self.dim() + 1).min(m);
        let picks = rand::seq::index::sample(rng, m, k);
        let weights: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
        let total: f64 = weights.iter().sum();
        let mut z = Array1::zeros(self.dim());
        for (w, i) in weights.iter().zip(picks.iter()) {
            z.scaled_add(w / total, &self.vertices.row(i));
        }
        z
    }
}

/// Where acquisition may place new points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Domain {
    Hull(HullDomain),
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

impl Domain {
    pub fn hull(vertices: Array2<f64>) -> Result<Self> {
        Ok(Domain::Hull(HullDomain::new(vertices)?))
    }

    pub fn cube(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(invalid("box bounds must be non-empty and of equal length"));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a <= b) || !a.is_finite() || !b.is_finite()) {
            return Err(invalid("box bounds must be finite with lo <= hi"));
        }
        Ok(Domain::Box { lo, hi })
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Hull(h) => h.dim(),
            Domain::Box { lo, .. } => lo.len(),
        }
    }

    pub fn contains(&self, z: ArrayView1<f64>) -> Result<bool> {
        match self {
            Domain::Hull(h) => h.contains(z),
            Domain::Box { lo, hi } => {
                if z.len() != lo.len() {
                    return Err(CcrError::DimensionMismatch {
                        expected: lo.len(),
                        actual: z.len(),
                    });
                }
                Ok(z.iter()
                    .zip(lo.iter().zip(hi))
                    .all(|(&v, (&a, &b))| v >= a && v <= b))
            }
        }
    }

    pub fn sample_interior(&self, rng: &mut Rng) -> Array1<f64> {
        match self {
            Domain::Hull(h) => h.sample_interior(rng),
            Domain::Box { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(&a, &b)| if b > a { rng.random_range(a..=b) } else { a })
                .collect(),
        }
    }

    /// Characteristic length per coordinate, used for step sizes.
    pub fn scale(&self) -> Vec<f64> {
        match self {
            Domain::Hull(h) => h.extent().to_vec(),
            Domain::Box { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(a, b)| if b > a { b - a } else { 1.0 })
                .collect(),
        }
    }
}

/// Free-function form of [`HullDomain::contains`].
pub fn hull_contains(domain: &HullDomain, z: ArrayView1<f64>) -> Result<bool> {
    domain.contains(z)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HullSearchResult {
    pub point: Array1<f64>,
    /// Largest class probability at `point`.
    pub max_proba: f64,
}

const MAX_SWEEPS: usize = 50;

/// Multi-start coordinate descent on `max_l g_l` restricted to the domain.
pub fn select_in_hull<C: ProbabilisticClassifier + ?Sized>(
    classifier: &C,
    domain: &Domain,
    starts: usize,
    seed: u64,
) -> Result<HullSearchResult> {
    if classifier.input_dim() != domain.dim() {
        return Err(CcrError::DimensionMismatch {
            expected: classifier.input_dim(),
            actual: domain.dim(),
        });
    }
    if starts == 0 {
        return Err(invalid("select_in_hull needs at least one start"));
    }
    let scale = domain.scale();
    let mut best: Option<HullSearchResult> = None;
    for s in 0..starts {
        let mut rng = seeded(derive_seed(seed, s as u64));
        let mut z = domain.sample_interior(&mut rng);
        if !domain.contains(z.view())? {
            continue;
        }
        let mut value = max_proba(classifier, z.view())?;
        let mut step = 0.25;
        let mut sweeps = 0;
        while step >= 1e-4 && sweeps < MAX_SWEEPS {
            sweeps += 1;
            let mut improved = false;
            for j in 0..z.len() {
                for sign in [1.0, -1.0] {
                    let mut trial = z.clone();
                    trial[j] += sign * step * scale[j];
                    let v = max_proba(classifier, trial.view())?;
                    if v < value && domain.contains(trial.view())? {
                        z = trial;
                        value = v;
                        improved = true;
                        break;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        if best.as_ref().is_none_or(|b| value < b.max_proba) {
            best = Some(HullSearchResult {
                point: z,
                max_proba: value,
            });
        }
    }
    best.ok_or_else(|| invalid("no start point of the hull search lay inside the domain"))
}
