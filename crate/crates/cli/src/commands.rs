use std::fs;
use std::path::Path;

use ccr_core::active::{active_loop, ActiveConfig, DomainSpec, Reservoir, Strategy};
use ccr_core::benchmarks::{sample_inputs, Example, Sampling};
use ccr_core::data::DataFormat;
use ccr_core::{ccr_fit, load_dataset, metrics_table, CcrConfig, CcrModel, Dataset, Metrics};
use chrono::Utc;
use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::args::{
    ActiveArgs, BenchmarkArgs, DomainArg, EvaluateArgs, FitArgs, FormatArg, LearnerArg, ModelFlags, PredictArgs,
    ScoreArg, StrategyArg,
};
use crate::error::{runtime, usage, CliError};
use crate::output::{
    input_record, prediction_pairs_csv, predictions_csv, residuals_csv, write_manifest, InputRecord, OutDir,
    RESIDUAL_BINS,
};

type CmdResult = Result<(), CliError>;

/// Values a `--config` file may supply. Flags override them.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    clusters: Option<usize>,
    classifier: Option<LearnerArg>,
    regressor: Option<LearnerArg>,
    amplification: Option<f64>,
    seed: Option<u64>,
    /// Full pipeline settings (learner hyperparameters etc.) used as the base.
    ccr: Option<CcrConfig>,
    strategy: Option<StrategyArg>,
    score: Option<ScoreArg>,
    budget: Option<usize>,
    refit_every: Option<usize>,
    initial_size: Option<usize>,
    reservoir_size: Option<usize>,
    test_size: Option<usize>,
    train_size: Option<usize>,
    domain: Option<DomainArg>,
    example: Option<u32>,
}

fn read_file_config(path: Option<&Path>) -> Result<FileConfig, CliError> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("bad config {}: {e}", path.display())))
}

/// Pipeline settings from `base`, then the config file, then the flags.
fn ccr_config(base: CcrConfig, file: &FileConfig, flags: &ModelFlags) -> Result<CcrConfig, CliError> {
    let mut cfg = file.ccr.clone().unwrap_or(base);
    if let Some(l) = flags.clusters.map(|v| v as usize).or(file.clusters) {
        if l == 0 {
            return Err(usage("--clusters must be at least 1"));
        }
        cfg.clusters = Some(l);
    }
    if let Some(k) = flags.classifier.or(file.classifier) {
        cfg.classifier = k.into();
    }
    if let Some(k) = flags.regressor.or(file.regressor) {
        cfg.regressor = k.into();
    }
    if let Some(c) = flags.amplification.or(file.amplification) {
        if !(c >= 1.0 && c.is_finite()) {
            return Err(usage("--amplification must be a finite value >= 1"));
        }
        cfg.amplification_cluster = Some(c);
    }
    if let Some(s) = flags.seed.or(file.seed) {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn data_format(path: &Path, flag: Option<FormatArg>) -> DataFormat {
    match flag {
        Some(FormatArg::Csv) => DataFormat::Csv,
        Some(FormatArg::Json) => DataFormat::Json,
        None => DataFormat::from_path(path),
    }
}

/// Loads user data; unreadable or malformed files are usage errors.
fn load(path: &Path, format: Option<FormatArg>) -> Result<Dataset, CliError> {
    load_dataset(path, data_format(path, format)).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<CcrModel, CliError> {
    CcrModel::load(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// Input rows for prediction: `d` columns, or `d + 1` with a trailing output.
fn load_inputs(path: &Path, d: usize) -> Result<Array2<f64>, CliError> {
    let bad = |m: String| usage(format!("{}: {m}", path.display()));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| bad(e.to_string()))?;
    let mut values = Vec::new();
    let mut rows = 0;
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        let parsed: Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        let row = match parsed {
            Ok(r) => r,
            Err(_) if k == 0 => continue,
            Err(e) => return Err(bad(format!("row {}: {e}", k + 1))),
        };
        if row.len() != d && row.len() != d + 1 {
            return Err(bad(format!("row {} has {} columns; the model takes {d}", k + 1, row.len())));
        }
        values.extend_from_slice(&row[..d]);
        rows += 1;
    }
    if rows == 0 {
        return Err(bad("no data rows".into()));
    }
    Array2::from_shape_vec((rows, d), values).map_err(|e| bad(e.to_string()))
}

fn to_value<T: Serialize>(v: &T) -> Result<serde_json::Value, CliError> {
    serde_json::to_value(v).map_err(|e| runtime(e.to_string()))
}

fn pretty<T: Serialize>(v: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(v).map_err(|e| runtime(e.to_string()))
}

/// Metrics JSON, prediction pairs and residual histogram for a labeled set.
fn write_evaluation(out: &mut OutDir, model: &CcrModel, data: &Dataset) -> Result<Metrics, CliError> {
    let metrics = model.evaluate(data)?;
    let pred = model.predict(data.inputs())?;
    let classes = model.classify(data.inputs())?;
    out.write("metrics.json", &pretty(&metrics)?)?;
    out.write("predictions.csv", &prediction_pairs_csv(data, pred.view(), &classes))?;
    out.write("residuals.csv", &residuals_csv(pred.view(), data.outputs(), RESIDUAL_BINS))?;
    Ok(metrics)
}

fn write_elbow(out: &mut OutDir, model: &CcrModel) -> CmdResult {
    if let Some(e) = &model.elbow {
        out.write("elbow.csv", &e.to_csv())?;
    }
    Ok(())
}

pub fn fit(args: FitArgs) -> CmdResult {
    let started = Utc::now();
    let file = read_file_config(args.model.config.as_deref())?;
    let cfg = ccr_config(CcrConfig::default(), &file, &args.model)?;
    let data = load(&args.data, args.format)?;
    let mut inputs = vec![input_record(&args.data)?];
    if let Some(c) = &args.model.config {
        inputs.push(input_record(c)?);
    }
    let mut out = OutDir::new(&args.out)?;
    let model = ccr_fit(&data, &cfg)?;
    out.write_model(&model)?;
    write_elbow(&mut out, &model)?;
    let metrics = model.evaluate(&data)?;
    out.write("metrics.json", &pretty(&metrics)?)?;
    eprintln!(
        "fitted {} classes on {} rows; training metrics:\n{}",
        model.num_classes(),
        data.len(),
        metrics_table(&[("train".to_string(), metrics)])
    );
    write_manifest(&mut out, "fit", to_value(&cfg)?, Some(cfg.seed), started, inputs)
}

pub fn predict(args: PredictArgs) -> CmdResult {
    let started = Utc::now();
    let model = load_model(&args.model)?;
    let x = load_inputs(&args.data, model.dim())?;
    let inputs = vec![input_record(&args.model)?, input_record(&args.data)?];
    let mut out = OutDir::new(&args.out)?;
    let pred = model.predict(x.view())?;
    let classes = model.classify(x.view())?;
    out.write("predictions.csv", &predictions_csv(x.view(), pred.view(), &classes))?;
    write_manifest(&mut out, "predict", serde_json::Value::Null, None, started, inputs)
}

pub fn evaluate(args: EvaluateArgs) -> CmdResult {
    let started = Utc::now();
    let model = load_model(&args.model)?;
    let data = load(&args.data, args.format)?;
    if data.dim() != model.dim() {
        return Err(usage(format!(
            "{} has {} input columns; the model takes {}",
            args.data.display(),
            data.dim(),
            model.dim()
        )));
    }
    let inputs = vec![input_record(&args.model)?, input_record(&args.data)?];
    let mut out = OutDir::new(&args.out)?;
    let metrics = write_evaluation(&mut out, &model, &data)?;
    println!("{}", serde_json::to_string(&metrics).map_err(|e| runtime(e.to_string()))?);
    println!("{}", metrics_table(&[("evaluate".to_string(), metrics)]));
    write_manifest(&mut out, "evaluate", serde_json::Value::Null, None, started, inputs)
}

#[derive(Serialize)]
struct ActiveSnapshot<'a> {
    example: Option<u32>,
    initial_size: usize,
    reservoir_size: Option<usize>,
    test_size: usize,
    active: &'a ActiveConfig,
}

fn history_jsonl(history: &[ccr_core::active::HistoryEntry]) -> Result<String, CliError> {
    let mut s = String::new();
    for h in history {
        s.push_str(&serde_json::to_string(h).map_err(|e| runtime(e.to_string()))?);
        s.push('\n');
    }
    Ok(s)
}

/// Labels for reservoir rows, looked up by exact input match.
struct LookupOracle {
    pool: Dataset,
}

impl LookupOracle {
    fn label(&self, x: ArrayView1<f64>) -> ccr_core::Result<f64> {
        (0..self.pool.len())
            .find(|&i| self.pool.input(i) == x)
            .map(|i| self.pool.output(i))
            .ok_or_else(|| ccr_core::CcrError::Oracle("point is not in the labeled reservoir".into()))
    }
}

pub fn active(args: ActiveArgs) -> CmdResult {
    let started = Utc::now();
    let file = read_file_config(args.model.config.as_deref())?;
    let example = args.example.or(file.example).map(Example::from_number).transpose().map_err(|e| usage(e.to_string()))?;
    let base = example.map(|e| e.ccr_config(0)).unwrap_or_default();
    let ccr = ccr_config(base, &file, &args.model)?;
    let seed = ccr.seed;
    let strategy: Strategy = args.strategy.or(file.strategy).unwrap_or(StrategyArg::Reservoir).into();
    let budget = args.budget.or(file.budget).unwrap_or(100);
    let refit_every = args.refit_every.map(|v| v as usize).or(file.refit_every).unwrap_or(10);
    if refit_every == 0 {
        return Err(usage("--refit-every must be at least 1"));
    }
    let mut inputs: Vec<InputRecord> = Vec::new();
    for p in [&args.data, &args.test, &args.reservoir, &args.model.config].into_iter().flatten() {
        inputs.push(input_record(p)?);
    }

    let initial_size = args.initial_size.or(file.initial_size).unwrap_or(50);
    let test_size = args.test_size.or(file.test_size).unwrap_or(500);
    let reservoir_size = args.reservoir_size.or(file.reservoir_size).unwrap_or(1000);
    let sample = |n: usize, s: u64| -> Result<Dataset, CliError> {
        let e = example.ok_or_else(|| usage("--example is required unless --data and --test are given"))?;
        Ok(sample_inputs(e, n, Sampling::Uniform, s)?)
    };
    let pool = match &args.reservoir {
        Some(p) => Some(load(p, None)?),
        None if strategy == Strategy::Reservoir => Some(sample(reservoir_size, seed)?),
        None => None,
    };
    let mut reservoir = pool.as_ref().map(|p| Reservoir::new(p.inputs().to_owned()));
    let initial = match (&args.data, &pool, &args.reservoir) {
        (Some(p), _, _) => load(p, None)?,
        // A sampled reservoir seeds the initial set from its first rows.
        (None, Some(pool), None) => {
            let first: Vec<usize> = (0..initial_size.min(pool.len())).collect();
            if let Some(r) = reservoir.as_mut() {
                for &i in &first {
                    r.mark_consumed(i);
                }
            }
            pool.select(&first)?
        }
        _ => sample(initial_size, ccr_core::rng::derive_seed(seed, 1))?,
    };
    let test = match &args.test {
        Some(p) => load(p, None)?,
        None => sample(test_size, 1000 + seed)?,
    };
    let domain = match args.domain.or(file.domain).unwrap_or(DomainArg::Hull) {
        DomainArg::Hull => DomainSpec::Hull,
        DomainArg::Box => {
            let e = example.ok_or_else(|| usage("--domain box needs --example for its bounds"))?;
            let (lo, hi) = e.bounds().into_iter().unzip();
            DomainSpec::Box { lo, hi }
        }
    };
    let cfg = ActiveConfig {
        strategy,
        score: args.score.or(file.score).unwrap_or(ScoreArg::Uncertainty).into(),
        budget,
        refit_every,
        ccr,
        domain,
        seed,
        ..ActiveConfig::default()
    };

    let lookup = args.reservoir.as_ref().and(pool.clone()).map(|pool| LookupOracle { pool });
    let oracle = |x: ArrayView1<f64>| -> ccr_core::Result<f64> {
        match (&lookup, example) {
            (Some(l), _) => l.label(x),
            (None, Some(e)) => e.evaluate(x),
            (None, None) => Err(ccr_core::CcrError::Oracle("no labeling source".into())),
        }
    };
    if lookup.is_none() && example.is_none() {
        return Err(usage("active learning needs --example or a labeled --reservoir as the oracle"));
    }

    let mut out = OutDir::new(&args.out)?;
    let result = active_loop(&oracle, &initial, reservoir.as_mut(), &test, &cfg)?;
    out.write_model(&result.model)?;
    out.write("history.jsonl", &history_jsonl(&result.history)?)?;
    let metrics = write_evaluation(&mut out, &result.model, &test)?;
    write_elbow(&mut out, &result.model)?;
    for h in &result.history {
        eprintln!("step {:>3}  n_train {:>5}  rmse {:.4}  ({}, +{})", h.step, h.n_train, h.rmse, h.strategy, h.points_added);
    }
    println!("{}", metrics_table(&[("active".to_string(), metrics)]));
    let snapshot = ActiveSnapshot {
        example: example.map(Example::number),
        initial_size: initial.len(),
        reservoir_size: pool.as_ref().map(Dataset::len),
        test_size: test.len(),
        active: &cfg,
    };
    write_manifest(&mut out, "active", to_value(&snapshot)?, Some(seed), started, inputs)
}

#[derive(Serialize)]
struct BenchmarkSnapshot<'a> {
    example: u32,
    train_size: usize,
    evaluated_on: &'a str,
    ccr: &'a CcrConfig,
}

fn append_results(out: &mut OutDir, row: &str) -> Result<String, CliError> {
    let path = out.path("results.csv");
    let mut text = fs::read_to_string(&path).unwrap_or_default();
    if text.is_empty() {
        text.push_str("example,name,seed,n_train,evaluated_on,n_eval,l2,r2,rmse\n");
    }
    text.push_str(row);
    out.write_at(path, &text)?;
    Ok(text)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

pub fn benchmark(args: BenchmarkArgs) -> CmdResult {
    if args.table2 {
        return table2(args);
    }
    let started = Utc::now();
    let file = read_file_config(args.model.config.as_deref())?;
    let number = args.example.or(file.example).ok_or_else(|| usage("--example is required"))?;
    let example = Example::from_number(number).map_err(|e| usage(e.to_string()))?;
    let seed = args.model.seed.or(file.seed).unwrap_or(0);
    let cfg = ccr_config(example.ccr_config(seed), &file, &args.model)?;
    let n = args.train_size.or(file.train_size).unwrap_or(example.default_train_size());
    if n == 0 {
        return Err(usage("--train-size must be at least 1"));
    }
    let sampling = example.default_sampling();
    let train = sample_inputs(example, n, sampling, seed)?;
    // Grid problems are scored on their training grid; the others on fresh draws.
    let (eval, evaluated_on) = match sampling {
        Sampling::Grid => (train.clone(), "train"),
        Sampling::Uniform => (sample_inputs(example, 500, Sampling::Uniform, 1000 + seed)?, "test"),
    };
    let mut inputs = Vec::new();
    if let Some(c) = &args.model.config {
        inputs.push(input_record(c)?);
    }
    let mut out = OutDir::new(&args.out)?;
    let model = ccr_fit(&train, &cfg)?;
    out.write_model(&model)?;
    write_elbow(&mut out, &model)?;
    let metrics = write_evaluation(&mut out, &model, &eval)?;
    let row = format!(
        "{},{},{seed},{},{evaluated_on},{},{},{},{:.6}\n",
        example.number(),
        example.name(),
        train.len(),
        eval.len(),
        opt(metrics.l2),
        opt(metrics.r2),
        metrics.rmse
    );
    append_results(&mut out, &row)?;
    println!("{}", metrics_table(&[(format!("{} ({evaluated_on})", example.number()), metrics)]));
    let snapshot = BenchmarkSnapshot {
        example: example.number(),
        train_size: train.len(),
        evaluated_on,
        ccr: &cfg,
    };
    write_manifest(&mut out, "benchmark", to_value(&snapshot)?, Some(seed), started, inputs)
}

#[derive(Serialize)]
struct Table2Row {
    mode: &'static str,
    n: usize,
    rmse: f64,
    l2: Option<f64>,
}

fn table2(args: BenchmarkArgs) -> CmdResult {
    let started = Utc::now();
    let file = read_file_config(args.model.config.as_deref())?;
    let seed = args.model.seed.or(file.seed).unwrap_or(0);
    let ccr = ccr_config(Example::F2.ccr_config(seed), &file, &args.model)?;
    let (pool_size, initial_size, budget, refit_every) = (1000usize, 50usize, 100usize, 10usize);
    let pool = sample_inputs(Example::F2, pool_size, Sampling::Uniform, seed)?;
    let test = sample_inputs(Example::F2, 500, Sampling::Uniform, 1000 + seed)?;
    let mut out = OutDir::new(&args.out)?;

    let passive = ccr_fit(&pool, &ccr)?.evaluate(&test)?;
    let mut reservoir = Reservoir::new(pool.inputs().to_owned());
    let first: Vec<usize> = (0..initial_size).collect();
    for &i in &first {
        reservoir.mark_consumed(i);
    }
    let cfg = ActiveConfig {
        strategy: Strategy::Reservoir,
        budget,
        refit_every,
        ccr,
        seed,
        ..ActiveConfig::default()
    };
    let oracle = |x: ArrayView1<f64>| Example::F2.evaluate(x);
    let result = active_loop(&oracle, &pool.select(&first)?, Some(&mut reservoir), &test, &cfg)?;
    let last = result.history.last().expect("history holds the initial fit");
    let rows = [
        Table2Row {
            mode: "active",
            n: last.n_train,
            rmse: last.rmse,
            l2: last.l2,
        },
        Table2Row {
            mode: "passive",
            n: pool_size,
            rmse: passive.rmse,
            l2: passive.l2,
        },
    ];
    out.write_model(&result.model)?;
    out.write("history.jsonl", &history_jsonl(&result.history)?)?;
    out.write("metrics.json", &pretty(&rows)?)?;
    println!("{:<8} {:>6} {:>8} {:>8}", "mode", "N", "RMSE", "L2");
    for r in &rows {
        println!("{:<8} {:>6} {:>8.4} {:>8}", r.mode, r.n, r.rmse, r.l2.map_or("-".into(), |v| format!("{v:.4}")));
    }
    write_manifest(&mut out, "benchmark --table2", to_value(&cfg)?, Some(seed), started, Vec::new())
}
