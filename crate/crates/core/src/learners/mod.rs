//! Soft classifiers for the classify stage and regressors for the regress
//! stage, each available as a perceptron or a random forest.

pub mod adam;
pub mod forest;
pub mod mlp;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, CcrError, Result};

pub use adam::AdamState;
pub use forest::{fit_forest_classifier, fit_forest_regressor, ForestClassifier, ForestConfig, ForestRegressor};
pub use mlp::{fit_mlp_classifier, fit_mlp_regressor, softmax, FitReport, MlpClassifier, MlpConfig, MlpRegressor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerKind {
    Mlp,
    Forest,
}

impl std::str::FromStr for LearnerKind {
    type Err = CcrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(LearnerKind::Mlp),
            "forest" => Ok(LearnerKind::Forest),
            other => Err(invalid(format!("unknown learner `{other}`"))),
        }
    }
}

pub(crate) fn check_labels(n: usize, labels: &[usize], num_classes: usize) -> Result<()> {
    if labels.len() != n {
        return Err(invalid(format!("{n} rows but {} labels", labels.len())));
    }
    if num_classes < 2 {
        return Err(CcrError::TooFewClasses);
    }
    if n < num_classes {
        return Err(invalid(format!(
            "{n} rows cannot cover {num_classes} classes"
        )));
    }
    let mut seen = vec![false; num_classes];
    for &l in labels {
        if l >= num_classes {
            return Err(invalid(format!("label {l} out of range 0..{num_classes}")));
        }
        seen[l] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(CcrError::MissingClass(missing));
    }
    Ok(())
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(p: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// A probabilistic classifier `g(x)` on the class simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SoftClassifier {
    Mlp(MlpClassifier),
    Forest(ForestClassifier),
    /// Degenerate one-class model: `g(x) = [1]`.
    Single { dim: usize },
}

impl SoftClassifier {
    pub fn num_classes(&self) -> usize {
        match self {
            SoftClassifier::Mlp(m) => m.num_classes(),
            SoftClassifier::Forest(f) => f.num_classes,
            SoftClassifier::Single { .. } => 1,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SoftClassifier::Mlp(m) => m.dim(),
            SoftClassifier::Forest(f) => f.dim,
            SoftClassifier::Single { dim } => *dim,
        }
    }

    fn check(&self, x: ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.dim() {
            return Err(CcrError::DimensionMismatch {
                expected: self.dim(),
                actual: x.ncols(),
            });
        }
        if let Some(((i, j), _)) = x.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(CcrError::NonFinite { row: i, column: j });
        }
        Ok(())
    }

    /// Class-probability rows, one per input row.
    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(x)?;
        Ok(match self {
            SoftClassifier::Mlp(m) => m.predict_proba(x),
            SoftClassifier::Forest(f) => f.predict_proba(x),
            SoftClassifier::Single { .. } => Array2::ones((x.nrows(), 1)),
        })
    }

    pub fn predict_proba_one(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        let p = self.predict_proba(x.insert_axis(Axis(0)))?;
        Ok(p.row(0).to_owned())
    }

    /// Hard labels `argmax_l g_l(x)`.
    pub fn classify(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        Ok(self
            .predict_proba(x)?
            .outer_iter()
            .map(argmax)
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Regressor {
    Mlp(MlpRegressor),
    Forest(ForestRegressor),
    Constant { value: f64, dim: usize },
}

impl Regressor {
    pub fn dim(&self) -> usize {
        match self {
            Regressor::Mlp(m) => m.dim(),
            Regressor::Forest(f) => f.dim,
            Regressor::Constant { dim, .. } => *dim,
        }
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        if x.ncols() != self.dim() {
            return Err(CcrError::DimensionMismatch {
                expected: self.dim(),
                actual: x.ncols(),
            });
        }
        Ok(match self {
            Regressor::Mlp(m) => m.predict(x),
            Regressor::Forest(f) => f.predict(x),
            Regressor::Constant { value, .. } => Array1::from_elem(x.nrows(), *value),
        })
    }
}

/// Fits the configured classifier flavor.
pub fn fit_classifier(
    kind: LearnerKind,
    x: ArrayView2<f64>,
    labels: &[usize],
    num_classes: usize,
    mlp: &MlpConfig,
    forest: &ForestConfig,
) -> Result<SoftClassifier> {
    Ok(match kind {
        LearnerKind::Mlp => SoftClassifier::Mlp(fit_mlp_classifier(x, labels, num_classes, mlp)?.0),
        LearnerKind::Forest => {
            SoftClassifier::Forest(fit_forest_classifier(x, labels, num_classes, forest)?)
        }
    })
}

pub fn fit_regressor(
    kind: LearnerKind,
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    mlp: &MlpConfig,
    forest: &ForestConfig,
) -> Result<Regressor> {
    Ok(match kind {
        LearnerKind::Mlp => Regressor::Mlp(fit_mlp_regressor(x, y, mlp)?.0),
        LearnerKind::Forest => Regressor::Forest(fit_forest_regressor(x, y, forest)?),
    })
}
