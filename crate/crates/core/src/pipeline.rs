//! The cluster / classify / regress pipeline and its accuracy metrics.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{concatenate, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{elbow_select, kmeans_fit, ClusterModel, ElbowReport, KMeansConfig};
use crate::data::{fit_scaling, Dataset, ScalingTransform};
use crate::error::{invalid, CcrError, Result};
use crate::learners::{
    fit_classifier, fit_regressor, ForestConfig, LearnerKind, MlpConfig, Regressor, SoftClassifier,
};
use crate::rng::derive_seed;

/// Largest cluster count the elbow search considers.
pub const ELBOW_MAX_CLUSTERS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CcrConfig {
    /// Output amplification `C` for clustering; `None` means `10 d`.
    pub amplification_cluster: Option<f64>,
    /// Multiplier on `y` seen by the regressors; 1 fits raw outputs.
    pub amplification_regress: f64,
    /// Cluster count; `None` selects it by the elbow rule.
    pub clusters: Option<usize>,
    pub classifier: LearnerKind,
    pub regressor: LearnerKind,
    /// Templates for the learners; their seeds are replaced by ones derived from `seed`.
    pub mlp: MlpConfig,
    pub forest: ForestConfig,
    pub kmeans_restarts: usize,
    pub kmeans_max_iter: usize,
    pub seed: u64,
}

impl Default for CcrConfig {
    fn default() -> Self {
        CcrConfig {
            amplification_cluster: None,
            amplification_regress: 1.0,
            clusters: None,
            classifier: LearnerKind::Mlp,
            regressor: LearnerKind::Mlp,
            mlp: MlpConfig::default(),
            forest: ForestConfig::default(),
            kmeans_restarts: 8,
            kmeans_max_iter: 300,
            seed: 0,
        }
    }
}

impl CcrConfig {
    pub fn amplification_for(&self, d: usize) -> f64 {
        self.amplification_cluster.unwrap_or(10.0 * d as f64)
    }

    fn validate(&self, d: usize) -> Result<()> {
        if self.amplification_for(d) < 1.0 {
            return Err(invalid("cluster amplification must be at least 1"));
        }
        if !(self.amplification_regress.is_finite() && self.amplification_regress > 0.0) {
            return Err(invalid("regression amplification must be positive"));
        }
        if self.clusters == Some(0) {
            return Err(invalid("cluster count must be at least 1"));
        }
        if self.kmeans_restarts == 0 {
            return Err(invalid("k-means needs at least one restart"));
        }
        Ok(())
    }

    fn kmeans(&self, l: usize) -> KMeansConfig {
        KMeansConfig {
            num_clusters: l,
            seed: derive_seed(self.seed, 0),
            restarts: self.kmeans_restarts,
            max_iter: self.kmeans_max_iter,
        }
    }

    fn learner_configs(&self, stream: u64) -> (MlpConfig, ForestConfig) {
        let seed = derive_seed(self.seed, stream);
        let mut mlp = self.mlp.clone();
        mlp.seed = seed;
        let mut forest = self.forest.clone();
        forest.seed = seed;
        (mlp, forest)
    }
}

/// A fitted `f(x) = f_r(x, f_c(x))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcrModel {
    pub scaler: ScalingTransform,
    pub cluster: ClusterModel,
    /// Operates on scaled inputs.
    pub classifier: SoftClassifier,
    /// One per class; operate on raw inputs.
    pub regressors: Vec<Regressor>,
    pub config: CcrConfig,
    pub elbow: Option<ElbowReport>,
    /// Training rows dispatched to each class.
    pub class_sizes: Vec<usize>,
}

fn check_inputs(x: ArrayView2<f64>, d: usize) -> Result<()> {
    if x.ncols() != d {
        return Err(CcrError::DimensionMismatch {
            expected: d,
            actual: x.ncols(),
        });
    }
    if let Some(((i, j), _)) = x.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(CcrError::NonFinite { row: i, column: j });
    }
    Ok(())
}

fn group_by_class(classes: &[usize], num_classes: usize) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); num_classes];
    for (i, &c) in classes.iter().enumerate() {
        groups[c].push(i);
    }
    groups
}

impl CcrModel {
    pub fn dim(&self) -> usize {
        self.scaler.dim()
    }

    pub fn num_classes(&self) -> usize {
        self.regressors.len()
    }

    /// Class probabilities `g(x)` for raw inputs.
    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_inputs(x, self.dim())?;
        let scaled = self.scaler.scale_inputs(x)?;
        self.classifier.predict_proba(scaled.view())
    }

    /// Hard classes `f_c(x)` for raw inputs.
    pub fn classify(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        check_inputs(x, self.dim())?;
        let scaled = self.scaler.scale_inputs(x)?;
        self.classifier.classify(scaled.view())
    }

    /// Dispatches each row to the regressor of its predicted class.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        let classes = self.classify(x)?;
        let mut out = Array1::zeros(x.nrows());
        for (l, rows) in group_by_class(&classes, self.num_classes()).iter().enumerate() {
            if rows.is_empty() {
                continue;
            }
            let xs = x.select(Axis(0), rows);
            let ys = self.regressors[l].predict(xs.view())?;
            for (&i, y) in rows.iter().zip(ys.iter()) {
                out[i] = y / self.config.amplification_regress;
            }
        }
        Ok(out)
    }

    pub fn predict_one(&self, x: ArrayView1<f64>) -> Result<f64> {
        Ok(self.predict(x.insert_axis(Axis(0)))?[0])
    }

    /// Cluster labels of labeled rows under the fitted scaling and centroids.
    pub fn cluster_labels(&self, data: &Dataset) -> Result<Vec<usize>> {
        self.cluster.assign(scaled_joint(&self.scaler, data)?.view())
    }

    pub fn evaluate(&self, test: &Dataset) -> Result<Metrics> {
        if test.is_empty() {
            return Err(invalid("test set is empty"));
        }
        let pred = self.predict(test.inputs())?;
        let classes = self.classify(test.inputs())?;
        let truth = self.cluster_labels(test)?;
        let mut per_class_counts = vec![0; self.num_classes()];
        for &c in &classes {
            per_class_counts[c] += 1;
        }
        let wrong = classes.iter().zip(&truth).filter(|(a, b)| a != b).count();
        Ok(Metrics {
            n: test.len(),
            l2: l2_score(pred.view(), test.outputs()),
            r2: r2_score(pred.view(), test.outputs()),
            rmse: rmse(pred.view(), test.outputs()),
            per_class_counts,
            misclassification_rate: wrong as f64 / test.len() as f64,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: CcrModel = serde_json::from_str(text)?;
        if model.regressors.len() != model.classifier.num_classes() {
            return Err(invalid(format!(
                "model has {} regressors for {} classes",
                model.regressors.len(),
                model.classifier.num_classes()
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn scaled_joint(scaler: &ScalingTransform, data: &Dataset) -> Result<Array2<f64>> {
    let x = scaler.scale_inputs(data.inputs())?;
    let y = data.outputs().mapv(|v| scaler.scale_output(v));
    Ok(concatenate![Axis(1), x, y.insert_axis(Axis(1))])
}

/// Fits the three stages on `data`.
pub fn ccr_fit(data: &Dataset, cfg: &CcrConfig) -> Result<CcrModel> {
    let d = data.dim();
    cfg.validate(d)?;
    let n = data.len();
    let min_rows = 10.max(2 * cfg.clusters.unwrap_or(1));
    if n < min_rows {
        return Err(invalid(format!(
            "{n} rows; the pipeline needs at least {min_rows}"
        )));
    }

    // (I) cluster the scaled joint points.
    let scaler = fit_scaling(data, cfg.amplification_for(d))?;
    let joint = scaled_joint(&scaler, data)?;
    let (l, elbow) = match cfg.clusters {
        Some(l) => (l, None),
        None => {
            let report = elbow_select(joint.view(), ELBOW_MAX_CLUSTERS.min(n), derive_seed(cfg.seed, 0))?;
            if !report.clear_elbow {
                log::warn!(
                    "no clear elbow in the inertia curve; using {} clusters",
                    report.chosen_l
                );
            }
            (report.chosen_l, Some(report))
        }
    };
    let cluster = kmeans_fit(joint.view(), &cfg.kmeans(l))?;
    let labels = cluster.assign(joint.view())?;

    // (II) classify on inputs only.
    let x_scaled = scaler.scale_inputs(data.inputs())?;
    let classifier = if l == 1 {
        SoftClassifier::Single { dim: d }
    } else {
        let (mlp, forest) = cfg.learner_configs(1);
        fit_classifier(cfg.classifier, x_scaled.view(), &labels, l, &mlp, &forest)?
    };

    // (III) regress per predicted class on raw data.
    let classes = classifier.classify(x_scaled.view())?;
    let groups = group_by_class(&classes, l);
    let y_all = data.outputs().mapv(|v| v * cfg.amplification_regress);
    let global_mean = y_all.mean().unwrap_or(0.0);
    let regressors = groups
        .par_iter()
        .enumerate()
        .map(|(c, rows)| {
            if rows.len() < 2 {
                let value = if rows.is_empty() {
                    global_mean
                } else {
                    y_all[rows[0]]
                };
                log::warn!(
                    "class {c} has {} training rows; using a constant predictor",
                    rows.len()
                );
                return Ok(Regressor::Constant { value, dim: d });
            }
            let xs = data.inputs().select(Axis(0), rows);
            let ys = y_all.select(Axis(0), rows);
            let (mlp, forest) = cfg.learner_configs(100 + c as u64);
            fit_regressor(cfg.regressor, xs.view(), ys.view(), &mlp, &forest)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(CcrModel {
        scaler,
        cluster,
        classifier,
        regressors,
        config: cfg.clone(),
        elbow,
        class_sizes: groups.iter().map(Vec::len).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    /// Missing when the outputs are all zero.
    pub l2: Option<f64>,
    /// Missing when the outputs are constant.
    pub r2: Option<f64>,
    pub rmse: f64,
    /// Test rows dispatched to each class.
    pub per_class_counts: Vec<usize>,
    /// Fraction of rows whose predicted class differs from their cluster label.
    pub misclassification_rate: f64,
}

fn sse(pred: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
    pred.iter().zip(y.iter()).map(|(p, t)| (p - t) * (p - t)).sum()
}

/// `1 - sqrt(sum (p - y)^2 / sum y^2)`.
pub fn l2_score(pred: ArrayView1<f64>, y: ArrayView1<f64>) -> Option<f64> {
    let norm: f64 = y.iter().map(|t| t * t).sum();
    (norm > 0.0).then(|| 1.0 - (sse(pred, y) / norm).sqrt())
}

/// `1 - sum (p - y)^2 / sum (y - mean)^2`.
pub fn r2_score(pred: ArrayView1<f64>, y: ArrayView1<f64>) -> Option<f64> {
    let mean = y.mean()?;
    let sst: f64 = y.iter().map(|t| (t - mean) * (t - mean)).sum();
    (sst > 0.0).then(|| 1.0 - sse(pred, y) / sst)
}

pub fn rmse(pred: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
    (sse(pred, y) / y.len().max(1) as f64).sqrt()
}

fn fmt_score(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |s| format!("{s:.4}"))
}

/// Aligned `name  L2  R2` table, one row per entry.
pub fn metrics_table(rows: &[(String, Metrics)]) -> String {
    let width = rows
        .iter()
        .map(|(name, _)| name.len())
        .chain(std::iter::once("Example".len()))
        .max()
        .unwrap_or(7);
    let mut s = String::new();
    let _ = writeln!(s, "{:<width$}  {:>8}  {:>8}", "Example", "L2", "R2");
    for (name, m) in rows {
        let _ = writeln!(
            s,
            "{:<width$}  {:>8}  {:>8}",
            name,
            fmt_score(m.l2),
            fmt_score(m.r2)
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::{f1, sample_inputs, Example, Sampling};
    use ndarray::array;

    fn forest_cfg(l: usize) -> CcrConfig {
        CcrConfig {
            clusters: Some(l),
            classifier: LearnerKind::Forest,
            regressor: LearnerKind::Forest,
            forest: ForestConfig {
                num_trees: 20,
                ..ForestConfig::default()
            },
            ..CcrConfig::default()
        }
    }

    #[test]
    fn metric_definitions() {
        let y = array![1.0, 2.0, 3.0, 4.0];
        assert_eq!(l2_score(y.view(), y.view()), Some(1.0));
        assert_eq!(r2_score(y.view(), y.view()), Some(1.0));
        let mean = Array1::from_elem(4, 2.5);
        assert_eq!(r2_score(mean.view(), y.view()), Some(0.0));
        let zeros = Array1::zeros(4);
        assert_eq!(l2_score(y.view(), zeros.view()), None);
        assert_eq!(r2_score(y.view(), Array1::from_elem(4, 1.0).view()), None);
        let p = array![1.0, 2.0, 3.0, 5.0];
        assert!((l2_score(p.view(), y.view()).unwrap() - (1.0 - (1.0f64 / 30.0).sqrt())).abs() < 1e-15);
        assert!((r2_score(p.view(), y.view()).unwrap() - (1.0 - 1.0 / 5.0)).abs() < 1e-15);
        assert!((rmse(p.view(), y.view()) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn f1_forest_pipeline_splits_at_discontinuity() {
        let data = sample_inputs(Example::F1, 200, Sampling::Uniform, 3).unwrap();
        let model = ccr_fit(&data, &forest_cfg(2)).unwrap();
        assert_eq!(model.num_classes(), 2);
        for k in 0..400 {
            let x = 2.0 * (k as f64 + 0.5) / 400.0;
            if (x - 1.0).abs() < 0.05 {
                continue;
            }
            let got = model.predict_one(array![x].view()).unwrap();
            assert!((got - f1(x)).abs() < 0.05, "x={x} got={got}");
        }
    }

    #[test]
    fn single_cluster_is_plain_regression() {
        let x = Array2::from_shape_fn((50, 1), |(i, _)| i as f64 / 49.0);
        let data = Dataset::from_fn(x, |r| 3.0 * r[0] + 1.0).unwrap();
        let model = ccr_fit(&data, &forest_cfg(1)).unwrap();
        assert_eq!(model.num_classes(), 1);
        assert!(matches!(model.classifier, SoftClassifier::Single { .. }));
        let direct = model.regressors[0].predict(data.inputs()).unwrap();
        assert_eq!(model.predict(data.inputs()).unwrap(), direct);
    }

    #[test]
    fn composition_identity_and_shape() {
        let data = sample_inputs(Example::F2, 120, Sampling::Uniform, 4).unwrap();
        let model = ccr_fit(&data, &forest_cfg(2)).unwrap();
        let probe = sample_inputs(Example::F2, 37, Sampling::Uniform, 9).unwrap();
        let pred = model.predict(probe.inputs()).unwrap();
        assert_eq!(pred.len(), 37);
        let classes = model.classify(probe.inputs()).unwrap();
        for i in 0..probe.len() {
            let row = probe.inputs().slice(ndarray::s![i..i + 1, ..]).to_owned();
            let direct = model.regressors[classes[i]].predict(row.view()).unwrap()[0];
            assert_eq!(pred[i], direct);
        }
        assert_eq!(model.predict(probe.inputs()).unwrap(), pred);
    }

    #[test]
    fn rejects_bad_inputs() {
        let data = sample_inputs(Example::F2, 8, Sampling::Uniform, 1).unwrap();
        assert!(ccr_fit(&data, &forest_cfg(2)).is_err());
        let data = sample_inputs(Example::F2, 30, Sampling::Uniform, 1).unwrap();
        assert!(ccr_fit(&data, &forest_cfg(0)).is_err());
        let model = ccr_fit(&data, &forest_cfg(2)).unwrap();
        assert!(matches!(
            model.predict(Array2::zeros((2, 3)).view()),
            Err(CcrError::DimensionMismatch { .. })
        ));
        assert!(model.predict(array![[f64::NAN]].view()).is_err());
    }

    #[test]
    fn empty_class_falls_back_to_constant() {
        // Two identical clusters in y forced into three classes: one class
        // tends to get few or no rows after classification.
        let x = Array2::from_shape_fn((40, 1), |(i, _)| i as f64);
        let data = Dataset::from_fn(x, |r| if r[0] < 20.0 { 0.0 } else { 1.0 }).unwrap();
        let mut cfg = forest_cfg(3);
        cfg.forest.num_trees = 5;
        let model = ccr_fit(&data, &cfg).unwrap();
        assert_eq!(model.regressors.len(), 3);
        for (r, &size) in model.regressors.iter().zip(&model.class_sizes) {
            if size < 2 {
                assert!(matches!(r, Regressor::Constant { .. }));
            }
        }
    }

    #[test]
    fn model_json_round_trip() {
        let data = sample_inputs(Example::F2, 60, Sampling::Uniform, 2).unwrap();
        let model = ccr_fit(&data, &forest_cfg(2)).unwrap();
        let back = CcrModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back.predict(data.inputs()).unwrap(), model.predict(data.inputs()).unwrap());
    }

    #[test]
    fn metrics_permutation_invariant_and_table() {
        let data = sample_inputs(Example::F1, 100, Sampling::Uniform, 8).unwrap();
        let model = ccr_fit(&data, &forest_cfg(2)).unwrap();
        let test = sample_inputs(Example::F1, 50, Sampling::Uniform, 9).unwrap();
        let m = model.evaluate(&test).unwrap();
        let mut idx: Vec<usize> = (0..50).rev().collect();
        idx.swap(3, 17);
        let m2 = model.evaluate(&test.select(&idx).unwrap()).unwrap();
        assert!((m.l2.unwrap() - m2.l2.unwrap()).abs() < 1e-12);
        assert!((m.r2.unwrap() - m2.r2.unwrap()).abs() < 1e-12);
        assert!(m.r2.unwrap() <= 1.0 && m.l2.unwrap() <= 1.0);
        assert_eq!(m.per_class_counts.iter().sum::<usize>(), 50);
        let table = metrics_table(&[("f1".into(), m)]);
        assert!(table.lines().count() == 2 && table.contains("L2"));
    }
}
