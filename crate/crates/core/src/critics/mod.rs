//! Per-agent critic ensembles, the kurtosis-weighted monotonic mixer, the
//! TD(λ) and tree-backup targets, and the regularized critic loss.

mod central;
mod ensemble;
mod loss;
mod mixer;
mod targets;

pub use central::{sync_targets, CentralCritic, CriticBatch, RecordedCritic};
pub use ensemble::EnsembleCritic;
pub use loss::{critic_loss, LossBatch, LossReport};
pub use mixer::{mix, MixerNet, QtotEval};
pub use targets::{
    td_lambda_returns, td_lambda_target, td_lambda_targets, tree_backup_return, tree_backup_target, tree_backup_targets, JointPolicy,
    TargetParams,
};
