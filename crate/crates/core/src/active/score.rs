//! Acquisition scores and reservoir selection.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, CcrError, Result};
use crate::learners::SoftClassifier;
use crate::pipeline::CcrModel;

/// Anything producing class-probability rows for input rows.
pub trait ProbabilisticClassifier: Sync {
    fn input_dim(&self) -> usize;
    fn class_probabilities(&self, x: ArrayView2<f64>) -> Result<Array2<f64>>;
}

impl ProbabilisticClassifier for SoftClassifier {
    fn input_dim(&self) -> usize {
        self.dim()
    }

    fn class_probabilities(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.predict_proba(x)
    }
}

/// Probabilities for raw (unscaled) inputs.
impl ProbabilisticClassifier for CcrModel {
    fn input_dim(&self) -> usize {
        self.dim()
    }

    fn class_probabilities(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.predict_proba(x)
    }
}

pub(crate) fn max_proba_rows<C: ProbabilisticClassifier + ?Sized>(c: &C, x: ArrayView2<f64>) -> Result<Vec<f64>> {
    Ok(c.class_probabilities(x)?
        .outer_iter()
        .map(|p| p.fold(0.0f64, |a, &b| a.max(b)))
        .collect())
}

pub(crate) fn max_proba<C: ProbabilisticClassifier + ?Sized>(c: &C, x: ArrayView1<f64>) -> Result<f64> {
    Ok(max_proba_rows(c, x.insert_axis(Axis(0)))?[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    /// `max_l g_l(x)`; lower is more informative.
    Uncertainty,
    /// `-sum g_l ln g_l`; higher is more informative.
    Entropy,
    /// Top probability minus the runner-up; lower is more informative.
    Margin,
}

impl std::str::FromStr for ScoreKind {
    type Err = CcrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uncertainty" => Ok(ScoreKind::Uncertainty),
            "entropy" => Ok(ScoreKind::Entropy),
            "margin" => Ok(ScoreKind::Margin),
            other => Err(invalid(format!("unknown score `{other}`"))),
        }
    }
}

impl ScoreKind {
    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::Uncertainty => "uncertainty",
            ScoreKind::Entropy => "entropy",
            ScoreKind::Margin => "margin",
        }
    }

    pub fn of(self, p: ArrayView1<f64>) -> f64 {
        match self {
            ScoreKind::Uncertainty => p.fold(0.0f64, |a, &b| a.max(b)),
            ScoreKind::Entropy => -p
                .iter()
                .filter(|&&v| v > 0.0)
                .map(|&v| v * v.ln())
                .sum::<f64>(),
            ScoreKind::Margin => {
                let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
                for &v in p {
                    if v > first {
                        second = first;
                        first = v;
                    } else if v > second {
                        second = v;
                    }
                }
                if second.is_finite() {
                    first - second
                } else {
                    1.0
                }
            }
        }
    }

    /// Monotone transform where larger always means more informative.
    pub fn informativeness(self, value: f64) -> f64 {
        match self {
            ScoreKind::Entropy => value,
            ScoreKind::Uncertainty | ScoreKind::Margin => -value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionScore {
    pub kind: ScoreKind,
    pub value: f64,
}

pub fn score<C: ProbabilisticClassifier + ?Sized>(c: &C, x: ArrayView1<f64>, kind: ScoreKind) -> Result<AcquisitionScore> {
    let p = c.class_probabilities(x.insert_axis(Axis(0)))?;
    Ok(AcquisitionScore {
        kind,
        value: kind.of(p.row(0)),
    })
}

pub fn score_rows<C: ProbabilisticClassifier + ?Sized>(c: &C, x: ArrayView2<f64>, kind: ScoreKind) -> Result<Vec<f64>> {
    Ok(c.class_probabilities(x)?.outer_iter().map(|p| kind.of(p)).collect())
}

/// Indices of the `count` most informative rows; ties go to the lower index.
pub fn most_informative(scores: &[f64], kind: ScoreKind, count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        kind.informativeness(scores[b])
            .total_cmp(&kind.informativeness(scores[a]))
            .then(a.cmp(&b))
    });
    order.truncate(count);
    order
}

/// A finite pool of unlabeled candidates; selected rows are consumed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reservoir {
    candidates: Array2<f64>,
    consumed: Vec<bool>,
}

impl Reservoir {
    pub fn new(candidates: Array2<f64>) -> Self {
        let consumed = vec![false; candidates.nrows()];
        Reservoir {
            candidates,
            consumed,
        }
    }

    pub fn len(&self) -> usize {
        self.candidates.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn remaining(&self) -> usize {
        self.consumed.iter().filter(|c| !**c).count()
    }

    pub fn candidates(&self) -> ArrayView2<'_, f64> {
        self.candidates.view()
    }

    pub fn point(&self, i: usize) -> ArrayView1<'_, f64> {
        self.candidates.row(i)
    }

    pub fn is_consumed(&self, i: usize) -> bool {
        self.consumed[i]
    }

    pub fn mark_consumed(&mut self, i: usize) {
        self.consumed[i] = true;
    }
}

/// Picks the `batch` most informative unconsumed candidates and consumes them.
pub fn select_from_reservoir<C: ProbabilisticClassifier + ?Sized>(
    c: &C,
    reservoir: &mut Reservoir,
    batch: usize,
    kind: ScoreKind,
) -> Result<Vec<usize>> {
    let open: Vec<usize> = (0..reservoir.len())
        .filter(|&i| !reservoir.consumed[i])
        .collect();
    if open.is_empty() {
        return Err(invalid("reservoir is exhausted"));
    }
    if batch > open.len() {
        return Err(invalid(format!(
            "batch of {batch} exceeds the {} unconsumed candidates",
            open.len()
        )));
    }
    let rows = reservoir.candidates.select(Axis(0), &open);
    let scores = score_rows(c, rows.view(), kind)?;
    let chosen: Vec<usize> = most_informative(&scores, kind, batch)
        .into_iter()
        .map(|k| open[k])
        .collect();
    for &i in &chosen {
        reservoir.consumed[i] = true;
    }
    Ok(chosen)
}

/// Online-use fitness gate: the classifier is trusted at `x` when its top
/// probability reaches the threshold.
pub const FITNESS_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fitness {
    pub max_proba: f64,
    /// False means the point should be labeled and the machine refit.
    pub fit: bool,
}

pub fn fitness<C: ProbabilisticClassifier + ?Sized>(c: &C, x: ArrayView1<f64>, threshold: f64) -> Result<Fitness> {
    let m = max_proba(c, x)?;
    Ok(Fitness {
        max_proba: m,
        fit: m >= threshold,
    })
}
