//! Closed-form discontinuous test functions, a critical-gradient transport
//! model, and input samplers for the five benchmark problems.
//!
//! The transport example uses a stand-in for the critical-gradient threshold:
//! [`StandInCriticalGradient`] has the shape of an ion-temperature-gradient
//! threshold law but is **not** a validated physical model. Any
//! [`CriticalGradientModel`] can be plugged in instead.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{invalid, CcrError, Result};
use crate::learners::LearnerKind;
use crate::pipeline::CcrConfig;
use crate::rng;

/// `x * 1{x >= 1}`.
pub fn f1(x: f64) -> f64 {
    if x >= 1.0 {
        x
    } else {
        0.0
    }
}

/// `(x + 1) * 1{x < 0} + x * 1{x >= 0}`.
pub fn f2(x: f64) -> f64 {
    if x < 0.0 {
        x + 1.0
    } else {
        x
    }
}

/// Gaussian bump up to 4, then plateaus 1, -1, 0 on `(4,6]`, `(6,8]`, `(8,inf)`.
pub fn f3(x: f64) -> f64 {
    if x <= 4.0 {
        (-x * x / 20.0).exp()
    } else if x <= 6.0 {
        1.0
    } else if x <= 8.0 {
        -1.0
    } else {
        0.0
    }
}

/// `f3(x1) * f3(x2)`.
pub fn f4(x1: f64, x2: f64) -> f64 {
    f3(x1) * f3(x2)
}

/// Breakpoints of [`f3`]; `f4` jumps across these lines in either coordinate.
pub const F3_BREAKPOINTS: [f64; 3] = [4.0, 6.0, 8.0];

/// Threshold `(R T'/T)_crit` of the normalized ion temperature gradient as a
/// function of the ten model inputs.
pub trait CriticalGradientModel: Send + Sync {
    fn critical_gradient(&self, x: ArrayView1<f64>) -> f64;
}

impl<F: Fn(ArrayView1<f64>) -> f64 + Send + Sync> CriticalGradientModel for F {
    fn critical_gradient(&self, x: ArrayView1<f64>) -> f64 {
        self(x)
    }
}

/// Named slots of the ten transport-model inputs.
pub mod slot {
    pub const DENSITY: usize = 0;
    pub const ELECTRON_TEMP: usize = 1;
    pub const ION_TEMP: usize = 2;
    pub const SAFETY_FACTOR: usize = 3;
    pub const MAGNETIC_SHEAR: usize = 4;
    pub const EFFECTIVE_CHARGE: usize = 5;
    pub const INVERSE_ASPECT: usize = 6;
    /// `R T_i' / T_i`, the gradient the diffusivity responds to.
    pub const ION_GRADIENT: usize = 7;
    pub const DENSITY_GRADIENT: usize = 8;
    pub const ELECTRON_GRADIENT: usize = 9;
    pub const COUNT: usize = 10;
}

/// Physical ranges `[lo, hi]` of the ten inputs, in slot order.
pub const TRANSPORT_INPUT_RANGES: [(f64, f64); slot::COUNT] = [
    (1.0, 10.0),  // n_e [1e19 m^-3]
    (0.5, 8.0),   // T_e [keV]
    (0.5, 8.0),   // T_i [keV]
    (1.0, 5.0),   // q
    (-3.0, 3.0),  // s_hat
    (1.0, 3.0),   // Z_eff
    (0.05, 0.35), // r/R
    (0.0, 16.0),  // R/L_Ti
    (0.0, 6.0),   // R/L_n
    (0.0, 16.0),  // R/L_Te
];

/// Threshold law shaped like `(1 + tau)(1.33 + 1.91 s/q)(1 - 1.5 eps)`, with
/// `tau = Z_eff T_e / T_i`, mild density and electron-gradient factors, and a
/// density-gradient floor `0.8 R/L_n` where the shear factor is positive.
///
/// Strongly reversed shear drives the threshold negative; there the
/// diffusivity jumps by `2 |g_crit|` at `g = |g_crit|`. This is a documented
/// stand-in, not a validated physics model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StandInCriticalGradient {
    pub shear_offset: f64,
    pub shear_slope: f64,
    pub density_floor: f64,
}

impl Default for StandInCriticalGradient {
    fn default() -> Self {
        StandInCriticalGradient {
            shear_offset: 1.33,
            shear_slope: 1.91,
            density_floor: 0.8,
        }
    }
}

impl CriticalGradientModel for StandInCriticalGradient {
    fn critical_gradient(&self, x: ArrayView1<f64>) -> f64 {
        use slot::*;
        let tau = x[EFFECTIVE_CHARGE] * x[ELECTRON_TEMP] / x[ION_TEMP];
        let shear = self.shear_offset + self.shear_slope * x[MAGNETIC_SHEAR] / x[SAFETY_FACTOR];
        let geometry = 1.0 - 1.5 * x[INVERSE_ASPECT];
        let density = 1.0 + 0.05 * x[DENSITY].ln();
        let electrons = 1.0 + 0.01 * (x[ELECTRON_GRADIENT] - 8.0);
        let base = (1.0 + tau) * shear * geometry * density * electrons;
        if base > 0.0 {
            base.max(self.density_floor * x[DENSITY_GRADIENT])
        } else {
            base
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalGradientConfig<M = StandInCriticalGradient> {
    /// Stiffness factor `S`.
    pub stiffness: f64,
    /// Exponent `alpha` on the excess gradient.
    pub exponent: f64,
    pub model: M,
    /// Seed of the primitive-to-input map used by the sampler.
    pub primitive_seed: u64,
}

impl Default for CriticalGradientConfig {
    fn default() -> Self {
        CriticalGradientConfig {
            stiffness: 1.0,
            exponent: 1.0,
            model: StandInCriticalGradient::default(),
            primitive_seed: 2018,
        }
    }
}

/// Heaviside step with `H(0) = 1`.
pub fn heaviside(t: f64) -> f64 {
    if t >= 0.0 {
        1.0
    } else {
        0.0
    }
}

/// `S (g - g_crit)^alpha H(|g / g_crit| - 1)`.
pub fn stiff_transport(g: f64, g_crit: f64, stiffness: f64, exponent: f64) -> Result<f64> {
    if g_crit == 0.0 {
        return Err(invalid("critical gradient is zero"));
    }
    let gate = heaviside((g / g_crit).abs() - 1.0);
    if gate == 0.0 {
        return Ok(0.0);
    }
    let excess = g - g_crit;
    let power = if exponent == 1.0 {
        excess
    } else {
        excess.signum() * excess.abs().powf(exponent)
    };
    Ok(stiffness * power)
}

/// Ion thermal diffusivity for one ten-component input row.
pub fn chi<M: CriticalGradientModel>(x: ArrayView1<f64>, cfg: &CriticalGradientConfig<M>) -> Result<f64> {
    if x.len() != slot::COUNT {
        return Err(CcrError::DimensionMismatch {
            expected: slot::COUNT,
            actual: x.len(),
        });
    }
    let g_crit = cfg.model.critical_gradient(x);
    stiff_transport(x[slot::ION_GRADIENT], g_crit, cfg.stiffness, cfg.exponent)
}

/// Map from primitive parameters `omega` in `[0,1]^17` to the ten transport
/// inputs: a fixed random affine mixing followed by a logistic squash into each
/// input's physical range. The mixing is dominated by a few primitives per
/// input so the samples concentrate near a curved low-dimensional set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveMap {
    pub mixing: Array2<f64>,
    pub offset: Array1<f64>,
}

pub const PRIMITIVE_DIM: usize = 17;

impl PrimitiveMap {
    pub fn new(seed: u64) -> Self {
        let mut rng = rng::seeded(seed);
        let mut mixing = Array2::<f64>::zeros((slot::COUNT, PRIMITIVE_DIM));
        for mut row in mixing.outer_iter_mut() {
            for v in row.iter_mut() {
                let g: f64 = StandardNormal.sample(&mut rng);
                *v = 0.3 * g;
            }
            // Two dominant primitives per input.
            for _ in 0..2 {
                let k = rng.random_range(0..PRIMITIVE_DIM);
                row[k] += if rng.random::<bool>() { 4.0 } else { -4.0 };
            }
        }
        let offset = Array1::from_shape_fn(slot::COUNT, |_| rng.random_range(-0.3..0.3));
        PrimitiveMap { mixing, offset }
    }

    pub fn apply(&self, omega: ArrayView1<f64>) -> Array1<f64> {
        let centered = omega.mapv(|w| w - 0.5);
        let latent = self.mixing.dot(&centered) + &self.offset;
        Array1::from_shape_fn(slot::COUNT, |j| {
            let (lo, hi) = TRANSPORT_INPUT_RANGES[j];
            lo + (hi - lo) / (1.0 + (-latent[j]).exp())
        })
    }
}

/// The five benchmark problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Example {
    F1,
    F2,
    F3,
    F4,
    Transport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sampling {
    Uniform,
    /// Regular grid; `n` is rounded to a full grid (`n` points in 1-D, `side^2` in 2-D).
    Grid,
}

impl Example {
    pub const ALL: [Example; 5] = [
        Example::F1,
        Example::F2,
        Example::F3,
        Example::F4,
        Example::Transport,
    ];

    pub fn from_number(n: u32) -> Result<Self> {
        match n {
            1 => Ok(Example::F1),
            2 => Ok(Example::F2),
            3 => Ok(Example::F3),
            4 => Ok(Example::F4),
            5 => Ok(Example::Transport),
            other => Err(invalid(format!("no benchmark example {other}; expected 1..=5"))),
        }
    }

    pub fn number(self) -> u32 {
        match self {
            Example::F1 => 1,
            Example::F2 => 2,
            Example::F3 => 3,
            Example::F4 => 4,
            Example::Transport => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Example::F1 => "f1",
            Example::F2 => "f2",
            Example::F3 => "f3",
            Example::F4 => "f4",
            Example::Transport => "chi",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            Example::F1 | Example::F2 | Example::F3 => 1,
            Example::F4 => 2,
            Example::Transport => slot::COUNT,
        }
    }

    /// Hypercube bounds of the sampling domain (transport: physical ranges).
    pub fn bounds(self) -> Vec<(f64, f64)> {
        match self {
            Example::F1 => vec![(0.0, 2.0)],
            Example::F2 => vec![(-1.0, 1.0)],
            Example::F3 => vec![(-4.0, 10.0)],
            Example::F4 => vec![(-4.0, 10.0); 2],
            Example::Transport => TRANSPORT_INPUT_RANGES.to_vec(),
        }
    }

    /// Evaluates the problem at one input row.
    pub fn evaluate(self, x: ArrayView1<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(CcrError::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        Ok(match self {
            Example::F1 => f1(x[0]),
            Example::F2 => f2(x[0]),
            Example::F3 => f3(x[0]),
            Example::F4 => f4(x[0], x[1]),
            Example::Transport => chi(x, &CriticalGradientConfig::default())?,
        })
    }

    /// Cluster count used by the reference runs; `None` defers to the elbow.
    pub fn recommended_clusters(self) -> Option<usize> {
        match self {
            Example::F1 | Example::F2 => Some(2),
            Example::F3 => Some(4),
            Example::F4 => Some(10),
            Example::Transport => None,
        }
    }

    /// (classifier, regressor) learner kinds: forests for examples 3 and 4.
    pub fn learners(self) -> (LearnerKind, LearnerKind) {
        match self {
            Example::F3 | Example::F4 => (LearnerKind::Forest, LearnerKind::Forest),
            _ => (LearnerKind::Mlp, LearnerKind::Mlp),
        }
    }

    /// Known discontinuity locations along each input axis.
    pub fn breakpoints(self) -> Vec<f64> {
        match self {
            Example::F1 => vec![1.0],
            Example::F2 => vec![0.0],
            Example::F3 | Example::F4 => F3_BREAKPOINTS.to_vec(),
            Example::Transport => Vec::new(),
        }
    }

    pub fn default_sampling(self) -> Sampling {
        match self {
            Example::F3 | Example::F4 => Sampling::Grid,
            _ => Sampling::Uniform,
        }
    }

    /// Training-set size of the reference runs.
    pub fn default_train_size(self) -> usize {
        match self {
            Example::F1 | Example::F2 => 500,
            Example::F3 => 2000,
            Example::F4 => 64 * 64,
            Example::Transport => 20_000,
        }
    }

    /// Pipeline settings of the reference runs.
    pub fn ccr_config(self, seed: u64) -> CcrConfig {
        let (classifier, regressor) = self.learners();
        CcrConfig {
            clusters: self.recommended_clusters(),
            classifier,
            regressor,
            seed,
            ..CcrConfig::default()
        }
    }
}

/// Grid of `n` points on `[lo, hi]`. The interval is cut at `breaks`, each
/// piece gets a share of the points proportional to its length, and points
/// sit at cell centres within a piece, so every point lies at least half its
/// local spacing away from each break.
pub fn grid_axis(lo: f64, hi: f64, n: usize, breaks: &[f64]) -> Vec<f64> {
    let mut edges = vec![lo];
    edges.extend(breaks.iter().copied().filter(|&b| b > lo && b < hi));
    edges.push(hi);
    let pieces = edges.len() - 1;
    let total = hi - lo;
    // Largest-remainder apportionment, at least one point per piece when possible.
    let quotas: Vec<f64> = edges
        .windows(2)
        .map(|w| n as f64 * (w[1] - w[0]) / total)
        .collect();
    let mut counts: Vec<usize> = quotas
        .iter()
        .map(|q| (q.floor() as usize).max(usize::from(n >= pieces)))
        .collect();
    let mut order: Vec<usize> = (0..pieces).collect();
    order.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())));
    let mut assigned: usize = counts.iter().sum();
    for &p in order.iter().cycle() {
        if assigned >= n {
            break;
        }
        counts[p] += 1;
        assigned += 1;
    }
    while assigned > n {
        let p = (0..pieces).max_by_key(|&p| counts[p]).expect("pieces >= 1");
        counts[p] -= 1;
        assigned -= 1;
    }
    let mut out = Vec::with_capacity(n);
    for (w, &c) in edges.windows(2).zip(&counts) {
        let h = (w[1] - w[0]) / c.max(1) as f64;
        out.extend((0..c).map(|i| w[0] + (i as f64 + 0.5) * h));
    }
    out
}

/// Draws `n` labeled rows for `example`.
pub fn sample_inputs(example: Example, n: usize, sampling: Sampling, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(invalid("sample size must be at least 1"));
    }
    let mut rng = rng::seeded(seed);
    let inputs = match (example, sampling) {
        (Example::Transport, _) => {
            let map = PrimitiveMap::new(CriticalGradientConfig::default().primitive_seed);
            let mut x = Array2::zeros((n, slot::COUNT));
            for mut row in x.outer_iter_mut() {
                let omega = Array1::from_shape_fn(PRIMITIVE_DIM, |_| rng.random::<f64>());
                row.assign(&map.apply(omega.view()));
            }
            x
        }
        (Example::F4, Sampling::Grid) => {
            let side = (n as f64).sqrt().round().max(1.0) as usize;
            let axis = grid_axis(-4.0, 10.0, side, &F3_BREAKPOINTS);
            Array2::from_shape_fn((side * side, 2), |(i, j)| {
                if j == 0 {
                    axis[i / side]
                } else {
                    axis[i % side]
                }
            })
        }
        (_, Sampling::Grid) => {
            let (lo, hi) = example.bounds()[0];
            Array2::from_shape_vec((n, 1), grid_axis(lo, hi, n, &example.breakpoints())).map_err(|e| invalid(e.to_string()))?
        }
        (_, Sampling::Uniform) => {
            let bounds = example.bounds();
            Array2::from_shape_fn((n, example.dim()), |(_, j)| {
                let (lo, hi) = bounds[j];
                rng.random_range(lo..hi)
            })
        }
    };
    let outputs = inputs
        .outer_iter()
        .map(|x| example.evaluate(x))
        .collect::<Result<Array1<f64>>>()?;
    Dataset::new(inputs, outputs)
}
