use ccr_core::active::Reservoir;
use ccr_core::benchmarks::{sample_inputs, Example, Sampling};
use ccr_core::{active_loop, ccr_fit, ActiveConfig, CcrConfig, CcrModel, Dataset, LearnerKind, Strategy};
use ndarray::ArrayView1;

fn forest_config(clusters: usize) -> CcrConfig {
    CcrConfig {
        clusters: Some(clusters),
        classifier: LearnerKind::Forest,
        regressor: LearnerKind::Forest,
        ..CcrConfig::default()
    }
}

#[test]
fn saved_model_predicts_identically() {
    let data = sample_inputs(Example::F2, 200, Sampling::Uniform, 3).unwrap();
    let model = ccr_fit(&data, &forest_config(2)).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("m.json");
    model.save(&path).unwrap();
    let back = CcrModel::load(&path).unwrap();
    let probe = sample_inputs(Example::F2, 50, Sampling::Uniform, 4).unwrap();
    assert_eq!(model.predict(probe.inputs()).unwrap(), back.predict(probe.inputs()).unwrap());
    assert_eq!(model.classify(probe.inputs()).unwrap(), back.classify(probe.inputs()).unwrap());
}

#[test]
fn fit_is_deterministic_in_seed() {
    let data = sample_inputs(Example::F1, 150, Sampling::Uniform, 1).unwrap();
    let a = ccr_fit(&data, &forest_config(3)).unwrap();
    let b = ccr_fit(&data, &forest_config(3)).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
}

#[test]
fn step_function_is_separated_by_class() {
    let n = 100;
    let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![(i as f64 + 0.5) / n as f64]).collect();
    let ys: Vec<f64> = rows.iter().map(|r| if r[0] < 0.5 { 0.0 } else { 5.0 }).collect();
    let data = Dataset::from_rows(&rows, ys).unwrap();
    let model = ccr_fit(&data, &forest_config(2)).unwrap();
    let m = model.evaluate(&data).unwrap();
    assert!(m.rmse < 1e-9, "{m:?}");
    assert_eq!(m.per_class_counts.iter().sum::<usize>(), n);
    assert_eq!(m.misclassification_rate, 0.0);
}

#[test]
fn reservoir_loop_labels_budget_points() {
    let pool = sample_inputs(Example::F2, 300, Sampling::Uniform, 5).unwrap();
    let test = sample_inputs(Example::F2, 100, Sampling::Uniform, 6).unwrap();
    let initial = pool.select(&(0..40).collect::<Vec<_>>()).unwrap();
    let mut reservoir = Reservoir::new(pool.inputs().to_owned());
    for i in 0..40 {
        reservoir.mark_consumed(i);
    }
    let oracle = |x: ArrayView1<f64>| Example::F2.evaluate(x);
    let cfg = ActiveConfig {
        strategy: Strategy::Reservoir,
        budget: 20,
        refit_every: 10,
        ccr: forest_config(2),
        ..ActiveConfig::default()
    };
    let out = active_loop(&oracle, &initial, Some(&mut reservoir), &test, &cfg).unwrap();
    assert_eq!(out.history.len(), 3);
    assert_eq!(out.train.len(), 60);
    assert_eq!(reservoir.remaining(), 240);
    assert!(out.reservoir_picks.iter().all(|&i| i >= 40));
}
