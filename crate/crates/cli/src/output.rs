use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ccr_core::{CcrModel, Dataset};
use chrono::{DateTime, Utc};
use ndarray::{ArrayView1, ArrayView2};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{runtime, CliError};

pub const RESIDUAL_BINS: usize = 50;

/// Where a command writes its files.
pub struct OutDir {
    pub dir: PathBuf,
    pub model: PathBuf,
    written: Vec<PathBuf>,
}

impl OutDir {
    /// A path ending in `.json` names the model file; anything else is a directory.
    pub fn new(out: &Path) -> Result<Self, CliError> {
        let is_file = out.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let (dir, model) = if is_file {
            let parent = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
            (parent.to_path_buf(), out.to_path_buf())
        } else {
            (out.to_path_buf(), out.join("model.json"))
        };
        fs::create_dir_all(&dir).map_err(|e| runtime(format!("cannot create {}: {e}", dir.display())))?;
        Ok(OutDir {
            dir,
            model,
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, text: &str) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        self.write_at(path, text)
    }

    pub fn write_at(&mut self, path: PathBuf, text: &str) -> Result<PathBuf, CliError> {
        fs::write(&path, text).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn write_model(&mut self, model: &CcrModel) -> Result<(), CliError> {
        let text = model.to_json()?;
        self.write_at(self.model.clone(), &text)?;
        Ok(())
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}

/// Content hash in the style of git objects: SHA-256 over
/// `"blob <len>\0" + bytes`.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Serialize)]
pub struct InputRecord {
    pub path: String,
    pub hash: String,
}

pub fn input_record(path: &Path) -> Result<InputRecord, CliError> {
    let bytes = fs::read(path).map_err(|e| crate::error::usage(format!("cannot read {}: {e}", path.display())))?;
    Ok(InputRecord {
        path: path.display().to_string(),
        hash: content_hash(&bytes),
    })
}

#[derive(Serialize)]
pub struct Manifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub started: String,
    pub finished: String,
    pub inputs: Vec<InputRecord>,
    pub outputs: Vec<String>,
}

pub fn timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339()
}

pub fn write_manifest(
    out: &mut OutDir,
    command: &str,
    config: serde_json::Value,
    seed: Option<u64>,
    started: DateTime<Utc>,
    inputs: Vec<InputRecord>,
) -> Result<(), CliError> {
    let manifest = Manifest {
        command: command.to_string(),
        config,
        seed,
        started: timestamp(started),
        finished: timestamp(Utc::now()),
        inputs,
        outputs: out.written().iter().map(|p| p.display().to_string()).collect(),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| runtime(e.to_string()))?;
    out.write("manifest.json", &text)?;
    Ok(())
}

fn header(d: usize, tail: &[&str]) -> String {
    let mut cols: Vec<String> = (1..=d).map(|j| format!("x{j}")).collect();
    cols.extend(tail.iter().map(|s| s.to_string()));
    cols.join(",") + "\n"
}

/// `x1..xd,truth,prediction,class` per row.
pub fn prediction_pairs_csv(data: &Dataset, pred: ArrayView1<f64>, classes: &[usize]) -> String {
    let mut s = header(data.dim(), &["truth", "prediction", "class"]);
    for i in 0..data.len() {
        for v in data.input(i) {
            let _ = write!(s, "{v:?},");
        }
        let _ = writeln!(s, "{:?},{:?},{}", data.output(i), pred[i], classes[i]);
    }
    s
}

/// `x1..xd,prediction,class` per row.
pub fn predictions_csv(x: ArrayView2<f64>, pred: ArrayView1<f64>, classes: &[usize]) -> String {
    let mut s = header(x.ncols(), &["prediction", "class"]);
    for (i, row) in x.outer_iter().enumerate() {
        for v in row {
            let _ = write!(s, "{v:?},");
        }
        let _ = writeln!(s, "{:?},{}", pred[i], classes[i]);
    }
    s
}

/// Histogram of `prediction - truth` over equal-width bins.
pub fn residuals_csv(pred: ArrayView1<f64>, truth: ArrayView1<f64>, bins: usize) -> String {
    let r: Vec<f64> = pred.iter().zip(truth).map(|(p, t)| p - t).collect();
    let mut lo = r.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in &r {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let mut s = String::from("bin_lo,bin_hi,count\n");
    for (k, c) in counts.iter().enumerate() {
        let a = lo + k as f64 * width;
        let _ = writeln!(s, "{:?},{:?},{c}", a, a + width);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn hash_matches_git_style_sha256() {
        // sha256 of b"blob 6\0hello\n", computed independently.
        assert_eq!(
            content_hash(b"hello\n"),
            "2cf8d83d9ee29543b34a87727421fdecb7e3f3a183d337639025de576db9ebb4"
        );
    }

    #[test]
    fn histogram_counts_everything() {
        let p = array![0.0, 1.0, 2.0, 3.0];
        let t = array![0.0, 0.0, 0.0, 0.0];
        let csv = residuals_csv(p.view(), t.view(), 3);
        let counts: Vec<usize> = csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
        assert_eq!(counts, vec![1, 1, 2]);
        let flat = residuals_csv(t.view(), t.view(), 50);
        assert_eq!(flat.lines().count(), 51);
    }

    #[test]
    fn out_dir_accepts_model_file() {
        let tmp = tempfile::tempdir().unwrap();
        let o = OutDir::new(&tmp.path().join("m.json")).unwrap();
        assert_eq!(o.dir, tmp.path());
        let d = OutDir::new(&tmp.path().join("run")).unwrap();
        assert_eq!(d.model, tmp.path().join("run").join("model.json"));
    }
}
