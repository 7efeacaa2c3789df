//! Random candidates drawn around centers from a Markov kernel.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::active::boundary::nearest_to;
use crate::error::{invalid, CcrError, Result};
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    /// `center + width * U(-1/2, 1/2)^d`
    UniformBox,
    /// `center + width * N(0, I)`
    Gaussian,
    /// `center + width * N(0, Σ)` with Σ the covariance of the center's
    /// nearest neighbors in the reference data.
    LocalCovariance,
}

impl std::str::FromStr for KernelKind {
    type Err = CcrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform_box" => Ok(KernelKind::UniformBox),
            "gaussian" => Ok(KernelKind::Gaussian),
            "local_covariance" => Ok(KernelKind::LocalCovariance),
            other => Err(invalid(format!("unknown kernel `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbKernel {
    pub kind: KernelKind,
    pub width: f64,
    pub samples_per_center: usize,
    /// Neighborhood size for `LocalCovariance`.
    pub neighbors: usize,
}

impl Default for PerturbKernel {
    fn default() -> Self {
        PerturbKernel {
            kind: KernelKind::LocalCovariance,
            width: 1.0,
            samples_per_center: 5,
            neighbors: 5,
        }
    }
}

/// Lower-triangular factor of the neighborhood covariance, or an isotropic
/// stand-in when that covariance is not positive definite.
fn local_factor(reference: ArrayView2<f64>, center: ndarray::ArrayView1<f64>, k: usize) -> DMatrix<f64> {
    let d = reference.ncols();
    let idx = nearest_to(reference, center, k);
    let m = idx.len();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    if m >= 2 {
        let mut mean = DVector::<f64>::zeros(d);
        for &i in &idx {
            for j in 0..d {
                mean[j] += reference[[i, j]] / m as f64;
            }
        }
        for &i in &idx {
            let v = DVector::from_iterator(d, (0..d).map(|j| reference[[i, j]] - mean[j]));
            cov += &v * v.transpose() / (m - 1) as f64;
        }
    }
    if let Some(ch) = cov.clone().cholesky() {
        return ch.l();
    }
    let sigma = (cov.trace() / d as f64).max(0.0).sqrt();
    log::warn!("neighborhood covariance is degenerate; using isotropic spread {sigma:.3e}");
    DMatrix::identity(d, d) * sigma
}

/// `samples_per_center` draws for each center row, grouped by center.
/// `reference` supplies neighborhoods for the local-covariance kernel.
pub fn perturb_candidates(
    kernel: &PerturbKernel,
    centers: ArrayView2<f64>,
    reference: ArrayView2<f64>,
    seed: u64,
) -> Result<Array2<f64>> {
    if kernel.samples_per_center == 0 {
        return Err(invalid("samples_per_center must be at least 1"));
    }
    if !(kernel.width >= 0.0 && kernel.width.is_finite()) {
        return Err(invalid("kernel width must be finite and non-negative"));
    }
    let d = centers.ncols();
    if kernel.kind == KernelKind::LocalCovariance {
        if reference.ncols() != d {
            return Err(CcrError::DimensionMismatch {
                expected: d,
                actual: reference.ncols(),
            });
        }
        if reference.nrows() == 0 || kernel.neighbors == 0 {
            return Err(invalid("local covariance needs reference points and neighbors"));
        }
    }
    let n = kernel.samples_per_center;
    let mut out = Array2::zeros((centers.nrows() * n, d));
    for (c, center) in centers.outer_iter().enumerate() {
        let mut rng = seeded(derive_seed(seed, c as u64));
        let factor = match kernel.kind {
            KernelKind::LocalCovariance => Some(local_factor(reference, center, kernel.neighbors)),
            _ => None,
        };
        for s in 0..n {
            let mut row = out.row_mut(c * n + s);
            row.assign(&center);
            match kernel.kind {
                KernelKind::UniformBox => {
                    for v in row.iter_mut() {
                        *v += kernel.width * (rng.random::<f64>() - 0.5);
                    }
                }
                KernelKind::Gaussian => {
                    for v in row.iter_mut() {
                        let e: f64 = rng.sample(StandardNormal);
                        *v += kernel.width * e;
                    }
                }
                KernelKind::LocalCovariance => {
                    let e = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
                    let step = factor.as_ref().expect("factor computed above") * e;
                    for (j, v) in row.iter_mut().enumerate() {
                        *v += kernel.width * step[j];
                    }
                }
            }
        }
    }
    Ok(out)
}
