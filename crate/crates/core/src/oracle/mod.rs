//! Exact computations on tiny fully observable cooperative MDPs: true joint
//! and per-agent values, discounted state distributions, exact policy
//! gradients and a numerical check of the mixed-gradient bias bound.

mod bound;
mod mdp;
mod sweep;

pub use bound::{
    certify_bound, critic_tables, exact_mixed_grad, exact_true_grad, lemma1_check, policy_tables, score_vectors,
    BoundReport, MixedGrad, BOUND_TOL,
};
pub use mdp::{
    discounted_distribution, exact_q_i, exact_q_tot, joint_kl_enumerated, kl_at_state, max_kl, objective,
    state_distributions, ExactPolicyEval, TabularDecMDP, ROW_SUM_TOL,
};
pub use sweep::{certification_sweep, one_hot_features, OracleInstance, SweepRow};
