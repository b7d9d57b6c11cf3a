use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::config::TrainConfig;
use super::run::{train, EvalResult};
use crate::error::{Error, Result};

pub const ABLATION_SUMMARY_FILE: &str = "summary.csv";

/// Result of one value of an ablation axis.
#[derive(Clone, Debug)]
pub struct AblationArm {
    pub value: String,
    pub dir: PathBuf,
    pub final_eval: Option<EvalResult>,
    pub diversity: f64,
}

fn dir_name(axis: &str, value: &str) -> String {
    let clean: String = value.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect();
    format!("{axis}={clean}")
}

/// Trains once per value of `axis`, each arm in its own subdirectory of
/// `out_dir`, all with the seed of `base`. Also writes `summary.csv`.
pub fn run_ablation(base: &TrainConfig, axis: &str, values: &[String], out_dir: &Path) -> Result<Vec<AblationArm>> {
    if values.is_empty() {
        return Err(Error::Config("ablation needs at least one value".into()));
    }
    // Reject bad axes and values before any training starts.
    let configs = values
        .iter()
        .map(|v| {
            let mut cfg = base.clone();
            cfg.set_axis(axis, v.trim())?;
            Ok(cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    std::fs::create_dir_all(out_dir)?;
    let mut arms = Vec::with_capacity(values.len());
    for (value, cfg) in values.iter().zip(&configs) {
        let value = value.trim().to_string();
        let dir = out_dir.join(dir_name(axis, &value));
        let outcome = train(cfg, &dir)?;
        arms.push(AblationArm { value, dir, final_eval: outcome.final_eval, diversity: outcome.diversity });
    }
    let mut w = BufWriter::new(File::create(out_dir.join(ABLATION_SUMMARY_FILE))?);
    writeln!(w, "axis,value,eval_return,eval_success,diversity")?;
    for arm in &arms {
        let (r, s) = arm.final_eval.map_or((String::new(), String::new()), |e| (e.mean_return.to_string(), e.success_rate.to_string()));
        writeln!(w, "{axis},{},{r},{s},{}", arm.value, arm.diversity)?;
    }
    w.flush()?;
    Ok(arms)
}
