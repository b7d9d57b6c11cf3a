//! Training loop, evaluation, metrics, ablations and plots.

mod ablation;
mod config;
mod metrics;
mod plots;
mod run;

pub use ablation::{run_ablation, AblationArm, ABLATION_SUMMARY_FILE};
pub use config::{TrainConfig, SEED_ENV_VAR};
pub use metrics::{read_metrics, MetricsRow, MetricsWriter, METRICS_COLUMNS};
pub use plots::{emit_plots, find_metrics_files, PLOTTED_METRICS};
pub use run::{
    ensemble_diversity, evaluate, evaluate_actors, train, EvalResult, Model, TrainOutcome, CHECKPOINT_FILE, CONFIG_FILE,
    EPISODE_LOG_FILE, METRICS_FILE, REPLAY_FILE,
};
