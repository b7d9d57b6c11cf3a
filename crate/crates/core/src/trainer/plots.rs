use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use super::run::METRICS_FILE;
use crate::error::{Error, Result};

/// Columns rendered by [`emit_plots`]. `actor_grad_norms` is plotted as the
/// mean over agents.
pub const PLOTTED_METRICS: [&str; 9] = [
    "eval_return",
    "eval_success",
    "critic_loss",
    "bhattacharyya",
    "mean_k",
    "mean_gbar",
    "gate_open_frac",
    "actor_grad_norms",
    "critic_grad_norm",
];

/// Every `metrics.csv` under `root` (or `root` itself when it is a file),
/// sorted by path.
pub fn find_metrics_files(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    if root.is_file() {
        out.push(root.to_path_buf());
        return Ok(out);
    }
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n == METRICS_FILE) {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// step -> value for each column found in one file.
type Series = BTreeMap<String, BTreeMap<u64, f64>>;

fn read_series(path: &Path) -> Result<Series> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| Error::Config(format!("{}: empty metrics file", path.display())))?.split(',').collect();
    let step_col = header.iter().position(|h| *h == "step").ok_or_else(|| Error::Config(format!("{}: no step column", path.display())))?;
    let mut series = Series::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        let Some(step) = f.get(step_col).and_then(|s| s.parse::<u64>().ok()) else { continue };
        for (col, name) in header.iter().enumerate() {
            let Some(cell) = f.get(col).filter(|c| !c.is_empty()) else { continue };
            let parts: Vec<f64> = cell.split(';').filter_map(|p| p.parse().ok()).collect();
            if !parts.is_empty() {
                let v = parts.iter().sum::<f64>() / parts.len() as f64;
                series.entry(name.to_string()).or_default().insert(step, v);
            }
        }
    }
    Ok(series)
}

/// Per-step (mean, min, max) across runs, over the runs that have the step.
fn aggregate(runs: &[&BTreeMap<u64, f64>]) -> Vec<(u64, f64, f64, f64)> {
    let mut by_step: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for run in runs {
        for (&s, &v) in run.iter() {
            by_step.entry(s).or_default().push(v);
        }
    }
    by_step
        .into_iter()
        .map(|(s, vs)| {
            let mean = vs.iter().sum::<f64>() / vs.len() as f64;
            let lo = vs.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = vs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (s, mean, lo, hi)
        })
        .collect()
}

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

fn draw(path: &Path, metric: &str, points: &[(u64, f64, f64, f64)], runs: usize) -> Result<()> {
    let root = SVGBackend::new(path, (800, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let x0 = points.first().map_or(0, |p| p.0) as f64;
    let mut x1 = points.last().map_or(1, |p| p.0) as f64;
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    let mut y0 = points.iter().map(|p| p.2).fold(f64::INFINITY, f64::min);
    let mut y1 = points.iter().map(|p| p.3).fold(f64::NEG_INFINITY, f64::max);
    if !(y1 > y0) {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pad = 0.05 * (y1 - y0);
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("{metric} ({runs} run{})", if runs == 1 { "" } else { "s" }), ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, (y0 - pad)..(y1 + pad))
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("step").y_desc(metric).draw().map_err(plot_err)?;
    if runs > 1 {
        let band: Vec<(f64, f64)> = points
            .iter()
            .map(|p| (p.0 as f64, p.3))
            .chain(points.iter().rev().map(|p| (p.0 as f64, p.2)))
            .collect();
        chart.draw_series(std::iter::once(Polygon::new(band, BLUE.mix(0.2)))).map_err(plot_err)?;
    }
    chart.draw_series(LineSeries::new(points.iter().map(|p| (p.0 as f64, p.1)), &BLUE)).map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Renders one SVG per metric into `out_dir`: the mean over all metrics
/// files found under `in_path`, with a min-max band when there are several.
/// Metrics missing from every file are skipped with a warning on stderr.
pub fn emit_plots(in_path: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let files = find_metrics_files(in_path)?;
    if files.is_empty() {
        return Err(Error::InvalidArgument(format!("no {METRICS_FILE} found under {}", in_path.display())));
    }
    let all = files.iter().map(|f| read_series(f)).collect::<Result<Vec<_>>>()?;
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for metric in PLOTTED_METRICS {
        let runs: Vec<&BTreeMap<u64, f64>> = all.iter().filter_map(|s| s.get(metric)).filter(|m| !m.is_empty()).collect();
        if runs.is_empty() {
            eprintln!("warning: no values for metric {metric}; skipped");
            continue;
        }
        let points = aggregate(&runs);
        let path = out_dir.join(format!("{metric}.svg"));
        draw(&path, metric, &points, runs.len())?;
        written.push(path);
    }
    Ok(written)
}
