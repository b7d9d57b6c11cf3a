use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// Column names of the metrics CSV, in order.
pub const METRICS_COLUMNS: [&str; 12] = [
    "step",
    "episode",
    "eval_return",
    "eval_success",
    "critic_loss",
    "bhattacharyya",
    "mean_k",
    "mean_gbar",
    "gate_open_frac",
    "actor_grad_norms",
    "critic_grad_norm",
    "wall_clock",
];

/// One training step. Evaluation columns are empty except on steps that
/// ran an evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub episode: usize,
    pub eval_return: Option<f64>,
    pub eval_success: Option<f64>,
    pub critic_loss: f64,
    pub bhattacharyya: f64,
    /// Mean uncertainty weight over the episode's decisions.
    pub mean_k: f64,
    pub mean_gbar: f64,
    pub gate_open_frac: f64,
    /// One norm per agent, `;`-separated in the CSV.
    pub actor_grad_norms: Vec<f64>,
    pub critic_grad_norm: f64,
    /// Seconds since the start of training; 0 unless wall-clock logging is on.
    pub wall_clock: f64,
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

impl MetricsRow {
    pub fn to_csv_line(&self) -> String {
        let norms: Vec<String> = self.actor_grad_norms.iter().map(f64::to_string).collect();
        [
            self.step.to_string(),
            self.episode.to_string(),
            opt(self.eval_return),
            opt(self.eval_success),
            self.critic_loss.to_string(),
            self.bhattacharyya.to_string(),
            self.mean_k.to_string(),
            self.mean_gbar.to_string(),
            self.gate_open_frac.to_string(),
            norms.join(";"),
            self.critic_grad_norm.to_string(),
            self.wall_clock.to_string(),
        ]
        .join(",")
    }

    pub fn parse_csv_line(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != METRICS_COLUMNS.len() {
            return Err(Error::Config(format!("metrics line has {} fields: {line:?}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Config(format!("bad number {s:?} in metrics")));
        let int = |s: &str| s.parse::<usize>().map_err(|_| Error::Config(format!("bad integer {s:?} in metrics")));
        let optn = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
        Ok(Self {
            step: int(f[0])?,
            episode: int(f[1])?,
            eval_return: optn(f[2])?,
            eval_success: optn(f[3])?,
            critic_loss: num(f[4])?,
            bhattacharyya: num(f[5])?,
            mean_k: num(f[6])?,
            mean_gbar: num(f[7])?,
            gate_open_frac: num(f[8])?,
            actor_grad_norms: if f[9].is_empty() { Vec::new() } else { f[9].split(';').map(num).collect::<Result<_>>()? },
            critic_grad_norm: num(f[10])?,
            wall_clock: num(f[11])?,
        })
    }
}

/// Streams rows to a CSV file with a header row and LF line endings.
pub struct MetricsWriter<W: Write> {
    out: W,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "{}", METRICS_COLUMNS.join(","))?;
        Ok(Self { out })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        writeln!(self.out, "{}", row.to_csv_line())?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

pub fn read_metrics<R: BufRead>(r: R) -> Result<Vec<MetricsRow>> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| Error::Config("empty metrics file".into()))??;
    if header != METRICS_COLUMNS.join(",") {
        return Err(Error::Config(format!("unexpected metrics header {header:?}")));
    }
    lines.filter(|l| l.as_ref().map_or(true, |l| !l.is_empty())).map(|l| MetricsRow::parse_csv_line(&l?)).collect()
}
