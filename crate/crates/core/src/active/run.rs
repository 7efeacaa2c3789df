//! The acquisition / labeling / refit controller.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::active::boundary::{boundary_pairs, select_boundary_pairs};
use crate::active::hull::{select_in_hull, Domain};
use crate::active::perturb::{perturb_candidates, PerturbKernel};
use crate::active::score::{max_proba_rows, most_informative, score_rows, select_from_reservoir, Reservoir, ScoreKind};
use crate::data::Dataset;
use crate::error::{invalid, CcrError, Result};
use crate::pipeline::{ccr_fit, CcrConfig, CcrModel};
use crate::rng::derive_seed;

/// Labels one input point.
pub type Oracle<'a> = &'a (dyn Fn(ArrayView1<f64>) -> Result<f64> + Sync);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Most informative unconsumed reservoir points.
    Reservoir,
    /// Continuous search over the domain.
    Hull,
    /// Segment minima between separated neighbors.
    Boundary,
    /// Kernel draws around boundary points.
    Perturb,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Reservoir => "reservoir",
            Strategy::Hull => "hull",
            Strategy::Boundary => "boundary",
            Strategy::Perturb => "perturb",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = CcrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reservoir" => Ok(Strategy::Reservoir),
            "hull" => Ok(Strategy::Hull),
            "boundary" => Ok(Strategy::Boundary),
            "perturb" => Ok(Strategy::Perturb),
            other => Err(invalid(format!("unknown strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DomainSpec {
    /// Convex hull of the initial inputs.
    Hull,
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActiveConfig {
    pub strategy: Strategy,
    pub score: ScoreKind,
    pub budget: usize,
    pub refit_every: usize,
    pub ccr: CcrConfig,
    pub hull_starts: usize,
    /// Neighbor count for boundary pairs.
    pub neighbors: usize,
    pub kernel: PerturbKernel,
    /// Boundary strategy falls back to the hull search on every batch
    /// whose number is a multiple of this.
    pub regenerate_every: usize,
    pub domain: DomainSpec,
    pub seed: u64,
}

impl Default for ActiveConfig {
    fn default() -> Self {
        ActiveConfig {
            strategy: Strategy::Reservoir,
            score: ScoreKind::Uncertainty,
            budget: 100,
            refit_every: 10,
            ccr: CcrConfig::default(),
            hull_starts: 8,
            neighbors: 5,
            kernel: PerturbKernel::default(),
            regenerate_every: 5,
            domain: DomainSpec::Hull,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub step: usize,
    pub n_train: usize,
    pub l2: Option<f64>,
    pub r2: Option<f64>,
    pub rmse: f64,
    pub strategy: String,
    pub points_added: usize,
}

#[derive(Debug, Clone)]
pub struct ActiveOutcome {
    pub model: CcrModel,
    pub history: Vec<HistoryEntry>,
    pub train: Dataset,
    /// Reservoir rows labeled, in order of selection.
    pub reservoir_picks: Vec<usize>,
}

fn entry(model: &CcrModel, test: &Dataset, step: usize, n_train: usize, strategy: &str, added: usize) -> Result<HistoryEntry> {
    let m = model.evaluate(test)?;
    Ok(HistoryEntry {
        step,
        n_train,
        l2: m.l2,
        r2: m.r2,
        rmse: m.rmse,
        strategy: strategy.to_string(),
        points_added: added,
    })
}

fn hull_batch(model: &CcrModel, domain: &Domain, cfg: &ActiveConfig, count: usize, seed: u64) -> Result<Vec<Array1<f64>>> {
    (0..count)
        .map(|i| Ok(select_in_hull(model, domain, cfg.hull_starts, derive_seed(seed, i as u64))?.point))
        .collect()
}

/// The `count` most informative rows of `candidates`.
fn best_rows(model: &CcrModel, candidates: &Array2<f64>, kind: ScoreKind, count: usize) -> Result<Vec<Array1<f64>>> {
    if candidates.nrows() == 0 {
        return Ok(Vec::new());
    }
    let scores = score_rows(model, candidates.view(), kind)?;
    Ok(most_informative(&scores, kind, count)
        .into_iter()
        .map(|i| candidates.row(i).to_owned())
        .collect())
}

fn contained_rows(domain: &Domain, candidates: Array2<f64>) -> Result<Array2<f64>> {
    let keep: Vec<usize> = (0..candidates.nrows())
        .into_par_iter()
        .map(|i| Ok(domain.contains(candidates.row(i))?.then_some(i)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    Ok(candidates.select(Axis(0), &keep))
}

/// Grows the training set by `budget` oracle-labeled points chosen by the
/// configured strategy, refitting after every `refit_every` additions.
/// Budget beyond the last whole batch is not spent.
pub fn active_loop(
    oracle: Oracle<'_>,
    initial: &Dataset,
    mut reservoir: Option<&mut Reservoir>,
    test: &Dataset,
    cfg: &ActiveConfig,
) -> Result<ActiveOutcome> {
    if cfg.refit_every == 0 {
        return Err(invalid("refit_every must be at least 1"));
    }
    let d = initial.dim();
    if test.dim() != d {
        return Err(CcrError::DimensionMismatch {
            expected: d,
            actual: test.dim(),
        });
    }
    if cfg.strategy == Strategy::Reservoir {
        match reservoir.as_deref() {
            None => return Err(invalid("reservoir strategy needs a reservoir")),
            Some(r) if r.candidates().ncols() != d => {
                return Err(CcrError::DimensionMismatch {
                    expected: d,
                    actual: r.candidates().ncols(),
                })
            }
            _ => {}
        }
    }
    let domain = match &cfg.domain {
        DomainSpec::Hull => Domain::hull(initial.inputs().to_owned())?,
        DomainSpec::Box { lo, hi } => Domain::cube(lo.clone(), hi.clone())?,
    };
    if domain.dim() != d {
        return Err(CcrError::DimensionMismatch {
            expected: d,
            actual: domain.dim(),
        });
    }

    let mut train = initial.clone();
    let mut model = ccr_fit(&train, &cfg.ccr)?;
    let mut history = vec![entry(&model, test, 0, train.len(), cfg.strategy.name(), 0)?];
    let mut picks = Vec::new();
    let batches = cfg.budget / cfg.refit_every;

    for b in 1..=batches {
        let want = cfg.refit_every;
        let seed = derive_seed(cfg.seed, b as u64);
        let mut used = cfg.strategy.name();
        let mut proposals: Vec<Array1<f64>> = Vec::with_capacity(want);
        match cfg.strategy {
            Strategy::Reservoir => {
                let r = reservoir.as_deref_mut().expect("checked above");
                let take = want.min(r.remaining());
                if take == 0 {
                    log::warn!("reservoir exhausted after {} batches", b - 1);
                    break;
                }
                let chosen = select_from_reservoir(&model, r, take, cfg.score)?;
                proposals.extend(chosen.iter().map(|&i| r.point(i).to_owned()));
                picks.extend(chosen);
            }
            Strategy::Hull => proposals = hull_batch(&model, &domain, cfg, want, seed)?,
            Strategy::Boundary => {
                let regenerate = cfg.regenerate_every > 0 && b % cfg.regenerate_every == 0;
                if regenerate {
                    used = "hull";
                } else {
                    let (found, _) = select_boundary_pairs(&model, train.inputs(), cfg.neighbors, &domain)?;
                    proposals = best_rows(&model, &found, cfg.score, want)?;
                }
                if proposals.len() < want {
                    if !regenerate {
                        log::info!("boundary search gave {} of {want} points; filling from the hull search", proposals.len());
                    }
                    let extra = hull_batch(&model, &domain, cfg, want - proposals.len(), seed)?;
                    proposals.extend(extra);
                }
            }
            Strategy::Perturb => {
                let x = train.inputs();
                let mut centers = boundary_pairs(&model, x, cfg.neighbors)?.boundary_points();
                if centers.is_empty() {
                    let conf = max_proba_rows(&model, x)?;
                    let mut order: Vec<usize> = (0..conf.len()).collect();
                    order.sort_by(|&a, &c| conf[a].total_cmp(&conf[c]).then(a.cmp(&c)));
                    order.truncate(want);
                    centers = order;
                }
                let c = x.select(Axis(0), &centers);
                let candidates = perturb_candidates(&cfg.kernel, c.view(), x, seed)?;
                let inside = contained_rows(&domain, candidates)?;
                proposals = best_rows(&model, &inside, cfg.score, want)?;
                if proposals.len() < want {
                    let extra = hull_batch(&model, &domain, cfg, want - proposals.len(), seed)?;
                    proposals.extend(extra);
                }
            }
        }
        for z in &proposals {
            if !domain.contains(z.view())? && cfg.strategy != Strategy::Reservoir {
                return Err(invalid("acquisition produced a point outside the domain"));
            }
        }
        let labels: Vec<Result<f64>> = proposals.par_iter().map(|z| oracle(z.view())).collect();
        let mut added = 0;
        for (z, y) in proposals.iter().zip(labels) {
            match y.and_then(|y| train.push(z.as_slice().expect("owned row is contiguous"), y)) {
                Ok(()) => added += 1,
                Err(e) => log::warn!("skipping point {z}: {e}"),
            }
        }
        model = ccr_fit(&train, &cfg.ccr)?;
        history.push(entry(&model, test, b, train.len(), used, added)?);
    }
    Ok(ActiveOutcome {
        model,
        history,
        train,
        reservoir_picks: picks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::{f2, sample_inputs, Example, Sampling};
    use crate::learners::{ForestConfig, LearnerKind};
    use ndarray::array;

    fn quick_config(strategy: Strategy, budget: usize, refit_every: usize) -> ActiveConfig {
        ActiveConfig {
            strategy,
            budget,
            refit_every,
            ccr: CcrConfig {
                clusters: Some(2),
                classifier: LearnerKind::Forest,
                regressor: LearnerKind::Forest,
                forest: ForestConfig {
                    num_trees: 20,
                    ..ForestConfig::default()
                },
                kmeans_restarts: 2,
                ..CcrConfig::default()
            },
            hull_starts: 3,
            ..ActiveConfig::default()
        }
    }

    fn label(x: ArrayView1<f64>) -> Result<f64> {
        Ok(f2(x[0]))
    }

    fn setup() -> (Dataset, Dataset, Reservoir) {
        let initial = sample_inputs(Example::F2, 20, Sampling::Uniform, 1).unwrap();
        let test = sample_inputs(Example::F2, 100, Sampling::Uniform, 2).unwrap();
        let pool = sample_inputs(Example::F2, 60, Sampling::Uniform, 3).unwrap();
        (initial, test, Reservoir::new(pool.inputs().to_owned()))
    }

    #[test]
    fn zero_budget_is_a_plain_fit() {
        let (initial, test, mut r) = setup();
        let cfg = quick_config(Strategy::Reservoir, 0, 5);
        let out = active_loop(&label, &initial, Some(&mut r), &test, &cfg).unwrap();
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.train, initial);
        assert_eq!(out.model, ccr_fit(&initial, &cfg.ccr).unwrap());
        assert_eq!(r.remaining(), 60);
    }

    #[test]
    fn reservoir_bookkeeping() {
        let (initial, test, mut r) = setup();
        let cfg = quick_config(Strategy::Reservoir, 23, 5);
        let out = active_loop(&label, &initial, Some(&mut r), &test, &cfg).unwrap();
        assert_eq!(out.history.len(), 23 / 5 + 1);
        let mut picks = out.reservoir_picks.clone();
        assert_eq!(picks.len(), 20);
        picks.sort_unstable();
        picks.dedup();
        assert_eq!(picks.len(), 20);
        assert_eq!(r.remaining(), 40);
        for (s, h) in out.history.iter().enumerate() {
            assert_eq!(h.step, s);
            assert_eq!(h.n_train, 20 + 5 * s);
            assert_eq!(h.points_added, if s == 0 { 0 } else { 5 });
        }
        for (k, &i) in out.reservoir_picks.iter().enumerate() {
            assert_eq!(out.train.input(20 + k), r.point(i));
        }
    }

    #[test]
    fn reservoir_exhaustion_stops_early() {
        let (initial, test, _) = setup();
        let mut small = Reservoir::new(array![[0.1], [0.2], [0.3]]);
        let cfg = quick_config(Strategy::Reservoir, 10, 2);
        let out = active_loop(&label, &initial, Some(&mut small), &test, &cfg).unwrap();
        assert_eq!(out.train.len(), 23);
        assert_eq!(out.history.len(), 3);
        assert!(active_loop(&label, &initial, None, &test, &cfg).is_err());
    }

    #[test]
    fn continuous_strategies_stay_in_domain() {
        let (initial, test, _) = setup();
        let hull = Domain::hull(initial.inputs().to_owned()).unwrap();
        for strategy in [Strategy::Hull, Strategy::Boundary, Strategy::Perturb] {
            let cfg = quick_config(strategy, 6, 3);
            let out = active_loop(&label, &initial, None, &test, &cfg).unwrap();
            assert_eq!(out.history.len(), 3);
            assert_eq!(out.train.len(), 26);
            for i in 20..26 {
                assert!(hull.contains(out.train.input(i)).unwrap(), "{strategy:?}");
            }
        }
    }

    #[test]
    fn boundary_regenerates_on_schedule() {
        let (initial, test, _) = setup();
        let mut cfg = quick_config(Strategy::Boundary, 4, 2);
        cfg.regenerate_every = 2;
        let out = active_loop(&label, &initial, None, &test, &cfg).unwrap();
        assert_eq!(out.history[1].strategy, "boundary");
        assert_eq!(out.history[2].strategy, "hull");
    }

    #[test]
    fn box_domain_and_failing_oracle() {
        let (initial, test, _) = setup();
        let mut cfg = quick_config(Strategy::Hull, 4, 4);
        cfg.domain = DomainSpec::Box {
            lo: vec![-1.0],
            hi: vec![1.0],
        };
        let picky = |x: ArrayView1<f64>| -> Result<f64> {
            if x[0] > 0.0 {
                Err(CcrError::Oracle("refused".into()))
            } else {
                Ok(f2(x[0]))
            }
        };
        let out = active_loop(&picky, &initial, None, &test, &cfg).unwrap();
        let added = out.history[1].points_added;
        assert_eq!(out.train.len(), 20 + added);
        assert!(added <= 4);
        for i in 20..out.train.len() {
            assert!(out.train.input(i)[0] <= 0.0);
        }
        cfg.refit_every = 0;
        assert!(active_loop(&picky, &initial, None, &test, &cfg).is_err());
    }

    #[test]
    fn names_round_trip() {
        for s in [Strategy::Reservoir, Strategy::Hull, Strategy::Boundary, Strategy::Perturb] {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!("committee".parse::<Strategy>().is_err());
        let cfg = ActiveConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ActiveConfig>(&text).unwrap(), cfg);
    }
}
