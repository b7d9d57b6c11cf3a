use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use emix::oracle::{certification_sweep, BOUND_TOL};
use emix::trainer::{emit_plots, evaluate, run_ablation, train, TrainConfig};

#[derive(Parser)]
#[command(name = "emix", version, about = "Ensemble-weighted value decomposition for cooperative multi-agent RL")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a JSON config, writing metrics and a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed and EMIX_SEED.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint (its directory must hold the run's config.json).
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 24)]
        episodes: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train once per value of one ablation axis.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "ablation")]
        out: PathBuf,
    },
    /// Render SVG plots from every metrics.csv under a directory.
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the gradient-bias bound on random tabular instances.
    Verify {
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        max_states: usize,
        #[arg(long, default_value_t = 50)]
        t_max: usize,
    },
}

fn load_config(path: &PathBuf, seed: Option<u64>) -> emix::Result<TrainConfig> {
    let mut cfg = TrainConfig::load(path)?.with_env_seed()?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

fn run(cli: Cli) -> emix::Result<bool> {
    match cli.command {
        Command::Train { config, seed, out } => {
            let cfg = load_config(&config, seed)?;
            let outcome = train(&cfg, &out)?;
            let e = outcome.final_eval;
            println!(
                "trained {} episodes (seed {}): eval return {}, success {}, diversity {:.6}",
                cfg.episodes,
                cfg.seed,
                fmt_opt(e.map(|e| e.mean_return)),
                fmt_opt(e.map(|e| e.success_rate)),
                outcome.diversity
            );
            println!("checkpoint {}", outcome.checkpoint.display());
            println!("metrics {}", outcome.metrics.display());
        }
        Command::Eval { ckpt, episodes, seed } => {
            let r = evaluate(&ckpt, episodes, seed)?;
            println!("mean_return {:.6}", r.mean_return);
            println!("success_rate {:.6}", r.success_rate);
        }
        Command::Ablate { config, axis, values, seed, out } => {
            let cfg = load_config(&config, seed)?;
            let values: Vec<String> = values.split(',').map(str::to_string).filter(|v| !v.trim().is_empty()).collect();
            let arms = run_ablation(&cfg, &axis, &values, &out)?;
            println!("{:<20} {:>12} {:>12} {:>12}", axis, "return", "success", "diversity");
            for arm in arms {
                println!(
                    "{:<20} {:>12} {:>12} {:>12.6}",
                    arm.value,
                    fmt_opt(arm.final_eval.map(|e| e.mean_return)),
                    fmt_opt(arm.final_eval.map(|e| e.success_rate)),
                    arm.diversity
                );
            }
        }
        Command::Plot { input, out } => {
            for p in emit_plots(&input, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Verify { instances, seed, max_states, t_max } => {
            let rows = certification_sweep(instances, seed, max_states, t_max)?;
            println!("{:>4} {:>5} {:>3} {:>6} {:>12} {:>12} {:>12} {:>12} {:>6} {:>6}", "inst", "S", "i", "nu", "lhs", "rhs", "rhs_printed", "lemma1", "bound", "lemma");
            let mut ok = true;
            for r in &rows {
                let lemma_ok = r.lemma1 <= BOUND_TOL;
                ok &= r.report.holds && lemma_ok;
                println!(
                    "{:>4} {:>5} {:>3} {:>6.3} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>6} {:>6}",
                    r.instance,
                    r.states,
                    r.report.agent,
                    r.report.nu,
                    r.report.lhs,
                    r.report.rhs,
                    r.report.rhs_printed,
                    r.lemma1,
                    if r.report.holds { "pass" } else { "FAIL" },
                    if lemma_ok { "pass" } else { "FAIL" }
                );
            }
            let printed = rows.iter().filter(|r| r.report.holds_printed).count();
            println!(
                "{} checks, {}; statement-form constant holds on {printed}/{}",
                rows.len(),
                if ok { "all pass" } else { "VIOLATIONS FOUND" },
                rows.len()
            );
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
