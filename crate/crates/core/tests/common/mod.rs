//! Criterion checks shared by the focused test targets and the acceptance
//! report. Each check returns an [`Outcome`] instead of panicking so the
//! report can print every line before failing.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use emix::actors::{
    mixed_gradient, off_policy_grad, off_policy_objective, on_policy_grad, on_policy_objective, ActorSet,
    OffPolicyBatch, OnPolicyBatch, PolicyNet,
};
use emix::critics::{critic_loss, td_lambda_target, tree_backup_target, CentralCritic, JointPolicy, LossBatch, TargetParams};
use emix::diffcore::{Gradients, ParamStore, Tensor2};
use emix::envs::EnvSpec;
use emix::exploration::ExploreMode;
use emix::oracle::{certification_sweep, BOUND_TOL};
use emix::replay::Transition;
use emix::stats::{bhattacharyya, excess_kurtosis, uncertainty_weight, DistVector, EnsembleSample, VAR_EPS};
use emix::trainer::{train, MetricsRow, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

pub fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

pub fn load_config(name: &str) -> TrainConfig {
    TrainConfig::load(configs_dir().join(name)).unwrap()
}

fn random_rows(rng: &mut impl Rng, r: usize, c: usize) -> Tensor2 {
    Tensor2::new(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Overwrites every tensor in `store` with uniform values in `[-s, s]`.
fn scramble(store: &mut ParamStore, rng: &mut impl Rng, s: f64) {
    let names: Vec<String> = store.names().cloned().collect();
    for n in names {
        for v in store.value_mut(&n).unwrap().data_mut() {
            *v = rng.random_range(-s..s);
        }
    }
}

// ---------------------------------------------------------------- formulas

pub fn formula_fidelity() -> Outcome {
    let k = excess_kurtosis(EnsembleSample::new(&[1.0, 2.0, 3.0, 4.0]).unwrap(), VAR_EPS);
    let p = DistVector::new(vec![0.5, 0.5]).unwrap();
    let q = DistVector::new(vec![0.9, 0.1]).unwrap();
    let b = bhattacharyya(&p, &q).unwrap();
    let w = uncertainty_weight(0.0, 0.01).unwrap();
    let pass = (k + 1.36).abs() <= 1e-12 && (b - 0.111572).abs() <= 1e-6 && w == 1.0;
    Outcome::new(pass, format!("excess kurtosis {k:.15}, bhattacharyya {b:.9}, k(0) = {w}"))
}

// --------------------------------------------------------------- gradients

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;

/// Random unit direction over every scalar in `store`.
fn random_direction(store: &ParamStore, rng: &mut impl Rng) -> Vec<(String, Tensor2)> {
    let mut dir: Vec<(String, Tensor2)> = store
        .iter()
        .map(|(n, v)| (n.clone(), Tensor2::new(v.rows(), v.cols(), (0..v.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()))
        .collect();
    let norm = dir.iter().map(|(_, t)| t.norm_sq()).sum::<f64>().sqrt();
    for (_, t) in &mut dir {
        t.scale_in_place(1.0 / norm);
    }
    dir
}

fn shifted(store: &ParamStore, dir: &[(String, Tensor2)], h: f64) -> ParamStore {
    let mut out = store.clone();
    for (n, d) in dir {
        out.value_mut(n).unwrap().axpy(h, d);
    }
    out
}

fn along(grads: &Gradients, dir: &[(String, Tensor2)]) -> f64 {
    dir.iter()
        .map(|(n, d)| grads.get(n).map_or(0.0, |g| g.data().iter().zip(d.data()).map(|(a, b)| a * b).sum::<f64>()))
        .sum()
}

fn rel_err(ad: f64, fd: f64) -> f64 {
    (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-8)
}

/// Worst relative error between the analytic directional derivative and a
/// central difference over `probes` seeded probes.
pub fn fd_probe(probes: usize, mut probe: impl FnMut(u64) -> (f64, f64)) -> (f64, usize) {
    let mut worst = 0.0f64;
    let mut bad = 0;
    for seed in 0..probes as u64 {
        let (ad, fd) = probe(seed);
        let e = rel_err(ad, fd);
        worst = worst.max(e);
        bad += usize::from(!(e < FD_REL_TOL));
    }
    (worst, bad)
}

fn critic_spec() -> EnvSpec {
    EnvSpec { num_agents: 2, action_counts: vec![3, 4], obs_dim: 3, state_dim: 4, max_steps: 5, gamma: 0.9 }
}

fn loss_batch(rng: &mut impl Rng, spec: &EnvSpec, n: usize) -> LossBatch {
    LossBatch {
        windows: (0..spec.num_agents).map(|_| random_rows(rng, n, spec.obs_dim)).collect(),
        states: random_rows(rng, n, spec.state_dim),
        actions: spec.action_counts.iter().map(|&m| (0..n).map(|_| rng.random_range(0..m)).collect()).collect(),
        targets: (0..n).map(|_| rng.random_range(-3.0..3.0)).collect(),
    }
}

/// Critic loss (both regression arms plus the diversity regularizer).
pub fn critic_loss_probe(seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    let spec = critic_spec();
    let critic = CentralCritic::new(&spec, 1, 3, 6, 5);
    let mut store = ParamStore::new();
    critic.init(&mut store, &mut rng).unwrap();
    scramble(&mut store, &mut rng, 0.8);
    let on = loss_batch(&mut rng, &spec, 5);
    let off = loss_batch(&mut rng, &spec, 7);
    let c = rng.random_range(0.0..1.0);
    let c2 = rng.random_range(0.0..0.5);
    let (_, grads) = critic_loss(&critic, &store, &on, &off, c, c2).unwrap();
    let dir = random_direction(&store, &mut rng);
    let f = |h: f64| critic_loss(&critic, &shifted(&store, &dir, h), &on, &off, c, c2).unwrap().0.loss;
    (along(&grads, &dir), (f(FD_STEP) - f(-FD_STEP)) / (2.0 * FD_STEP))
}

fn actor_setup(seed: u64) -> (ChaCha8Rng, PolicyNet, ParamStore, OnPolicyBatch, OffPolicyBatch) {
    let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
    let (d, m, n) = (4, 3, 6);
    let net = PolicyNet::new(0, d, m, 7);
    let mut store = ParamStore::new();
    net.init(&mut store, &mut rng).unwrap();
    scramble(&mut store, &mut rng, 0.8);
    let on = OnPolicyBatch {
        windows: random_rows(&mut rng, n, d),
        actions: (0..n).map(|_| rng.random_range(0..m)).collect(),
        advantages: (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
    };
    let off = OffPolicyBatch { windows: random_rows(&mut rng, n, d), q_values: random_rows(&mut rng, n, m) };
    (rng, net, store, on, off)
}

pub fn on_policy_probe(seed: u64) -> (f64, f64) {
    let (mut rng, net, store, on, _) = actor_setup(seed);
    let g = on_policy_grad(&net, &store, &on).unwrap();
    let dir = random_direction(&store, &mut rng);
    let f = |h: f64| on_policy_objective(&net, &shifted(&store, &dir, h), &on).unwrap();
    (along(&g, &dir), (f(FD_STEP) - f(-FD_STEP)) / (2.0 * FD_STEP))
}

pub fn off_policy_probe(seed: u64) -> (f64, f64) {
    let (mut rng, net, store, _, off) = actor_setup(seed);
    let g = off_policy_grad(&net, &store, &off).unwrap();
    let dir = random_direction(&store, &mut rng);
    let f = |h: f64| off_policy_objective(&net, &shifted(&store, &dir, h), &off).unwrap();
    (along(&g, &dir), (f(FD_STEP) - f(-FD_STEP)) / (2.0 * FD_STEP))
}

/// `(1−ν)·J_on + ν·J_off` against the combined gradient.
pub fn mixed_probe(seed: u64) -> (f64, f64) {
    let (mut rng, net, store, on, off) = actor_setup(seed);
    let nu = rng.random_range(0.0..1.0);
    let g_on = on_policy_grad(&net, &store, &on).unwrap();
    let g_off = off_policy_grad(&net, &store, &off).unwrap();
    let g = mixed_gradient(Some(&g_on), Some(&g_off), nu).unwrap();
    let dir = random_direction(&store, &mut rng);
    let f = |h: f64| {
        let s = shifted(&store, &dir, h);
        (1.0 - nu) * on_policy_objective(&net, &s, &on).unwrap() + nu * off_policy_objective(&net, &s, &off).unwrap()
    };
    (along(&g, &dir), (f(FD_STEP) - f(-FD_STEP)) / (2.0 * FD_STEP))
}

pub fn gradient_correctness(probes: usize) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, probe) in [
        ("critic", critic_loss_probe as fn(u64) -> (f64, f64)),
        ("actor-on", on_policy_probe),
        ("actor-off", off_policy_probe),
        ("actor-mixed", mixed_probe),
    ] {
        let (worst, bad) = fd_probe(probes, probe);
        pass &= bad == 0;
        parts.push(format!("{name} worst {worst:.1e}"));
    }
    Outcome::new(pass, format!("{probes} probes each: {}", parts.join(", ")))
}

// ----------------------------------------------------------------- targets

pub const TARGET_TOL: f64 = 1e-10;

fn target_spec() -> EnvSpec {
    EnvSpec { num_agents: 2, action_counts: vec![3, 2], obs_dim: 2, state_dim: 3, max_steps: 10, gamma: 0.9 }
}

/// Per-row pieces read straight off the critic outputs.
struct RowValues {
    /// `[agent][action]`
    mean: Vec<Vec<f64>>,
    /// `[agent][action][member]`
    members: Vec<Vec<Vec<f64>>>,
    lambdas: Vec<f64>,
    bias: f64,
}

fn row_values(critic: &CentralCritic, store: &ParamStore, windows: &[Vec<f64>], state: &[f64]) -> RowValues {
    let w: Vec<Tensor2> = windows.iter().map(|x| Tensor2::row_vector(x)).collect();
    let b = critic.evaluate(store, &w, &Tensor2::row_vector(state)).unwrap();
    let k = critic.num_agents();
    RowValues {
        mean: (0..k).map(|i| b.mean_q[i].row(0).to_vec()).collect(),
        members: (0..k)
            .map(|i| (0..b.mean_q[i].cols()).map(|a| b.member_q[i].iter().map(|m| m.get(0, a)).collect()).collect())
            .collect(),
        lambdas: b.lambdas.row(0).to_vec(),
        bias: b.bias.get(0, 0),
    }
}

/// `m4 / m2²` written out from the member values.
fn kurtosis_weight(values: &[f64], c1: f64) -> f64 {
    let n = values.len() as f64;
    let mu = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
    let m4 = values.iter().map(|v| (v - mu).powi(4)).sum::<f64>() / n;
    let kappa = m4 / (m2 * m2);
    0.5 + 1.0 / (1.0 + (c1 * kappa).exp())
}

impl RowValues {
    fn q_tot(&self, actions: &[usize]) -> f64 {
        self.bias + actions.iter().enumerate().map(|(i, &a)| self.lambdas[i] * self.mean[i][a]).sum::<f64>()
    }

    fn q_tot_weighted(&self, actions: &[usize], c1: f64) -> f64 {
        self.bias
            + actions
                .iter()
                .enumerate()
                .map(|(i, &a)| kurtosis_weight(&self.members[i][a], c1) * self.lambdas[i] * self.mean[i][a])
                .sum::<f64>()
    }
}

fn random_transition(rng: &mut impl Rng, spec: &EnvSpec, terminated: bool) -> Transition {
    let windows = |rng: &mut dyn rand::RngCore| (0..spec.num_agents).map(|_| (0..spec.obs_dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let state = |rng: &mut dyn rand::RngCore| (0..spec.state_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    Transition {
        state: state(rng),
        windows: windows(rng),
        actions: spec.action_counts.iter().map(|&m| rng.random_range(0..m)).collect(),
        behavior_probs: vec![0.5; spec.num_agents],
        reward: rng.random_range(-2.0..2.0),
        next_state: state(rng),
        next_windows: windows(rng),
        terminated,
    }
}

/// Three steps where each step's successor is the next stored step.
fn chained(rng: &mut impl Rng, spec: &EnvSpec, last_terminated: bool) -> Vec<Transition> {
    let mut ep: Vec<Transition> = (0..3).map(|t| random_transition(rng, spec, last_terminated && t == 2)).collect();
    for t in 0..2 {
        ep[t].next_state = ep[t + 1].state.clone();
        ep[t].next_windows = ep[t + 1].windows.clone();
    }
    ep
}

/// TD(λ) on a terminating 3-step episode against
/// `y_t = Q_t + Σ_{l≥t} (γλ)^{l−t} (r_l + γ Q^k_{l+1} − Q_l)` written out
/// for each `t`.
pub fn td_lambda_expansion(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(3000 + seed);
    let spec = target_spec();
    let critic = CentralCritic::new(&spec, 1, 4, 5, 5);
    let mut store = ParamStore::new();
    critic.init(&mut store, &mut rng).unwrap();
    scramble(&mut store, &mut rng, 1.0);
    let ep = chained(&mut rng, &spec, true);
    let p = TargetParams { lambda: 0.8, gamma: 0.9, c1: 0.7, weighting: true };
    let got = td_lambda_target(&ep, &critic, &store, &p).unwrap();

    let rows: Vec<RowValues> = ep.iter().map(|t| row_values(&critic, &store, &t.windows, &t.state)).collect();
    let q: Vec<f64> = (0..3).map(|t| rows[t].q_tot(&ep[t].actions)).collect();
    let qk: Vec<f64> = (0..3).map(|t| rows[t].q_tot_weighted(&ep[t].actions, p.c1)).collect();
    let (g, l) = (p.gamma, p.lambda);
    let (r0, r1, r2) = (ep[0].reward, ep[1].reward, ep[2].reward);
    let d0 = r0 + g * qk[1] - q[0];
    let d1 = r1 + g * qk[2] - q[1];
    let d2 = r2 - q[2];
    let want = [
        q[0] + d0 + g * l * d1 + (g * l) * (g * l) * d2,
        q[1] + d1 + g * l * d2,
        q[2] + d2,
    ];
    (0..3).map(|t| (got[t] - want[t]).abs()).fold(0.0, f64::max)
}

/// Tree backup on a non-terminal 3-step segment against the written-out
/// sum, with every expectation taken by enumerating joint actions.
pub fn tree_backup_expansion(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(4000 + seed);
    let spec = target_spec();
    let critic = CentralCritic::new(&spec, 1, 4, 5, 5);
    let mut store = ParamStore::new();
    critic.init(&mut store, &mut rng).unwrap();
    scramble(&mut store, &mut rng, 1.0);
    let actors = ActorSet::new(&[spec.obs_dim; 2], &spec.action_counts, 6, &mut rng).unwrap();
    let seg = chained(&mut rng, &spec, false);
    let p = TargetParams { lambda: 0.9, gamma: 0.95, c1: 0.4, weighting: true };
    let got = tree_backup_target(&seg, &critic, &store, &actors, &p).unwrap();

    let probs = |windows: &[Vec<f64>]| -> Vec<Vec<f64>> {
        (0..2).map(|i| actors.probs(i, &Tensor2::row_vector(&windows[i])).unwrap().row(0).to_vec()).collect()
    };
    let expect = |windows: &[Vec<f64>], state: &[f64]| -> f64 {
        let rv = row_values(&critic, &store, windows, state);
        let pi = probs(windows);
        let mut e = 0.0;
        for a0 in 0..3 {
            for a1 in 0..2 {
                e += pi[0][a0] * pi[1][a1] * rv.q_tot_weighted(&[a0, a1], p.c1);
            }
        }
        e
    };
    let q: Vec<f64> = seg.iter().map(|t| row_values(&critic, &store, &t.windows, &t.state).q_tot(&t.actions)).collect();
    let pi: Vec<f64> = seg
        .iter()
        .map(|t| {
            let pr = probs(&t.windows);
            pr[0][t.actions[0]] * pr[1][t.actions[1]]
        })
        .collect();
    let e: Vec<f64> = seg.iter().map(|t| expect(&t.next_windows, &t.next_state)).collect();
    let (g, l) = (p.gamma, p.lambda);
    let c0 = l * pi[0];
    let c1 = c0 * l * pi[1];
    let c2 = c1 * l * pi[2];
    let want = q[0]
        + c0 * (seg[0].reward + g * e[0] - q[0])
        + c1 * (seg[1].reward + g * e[1] - q[1])
        + c2 * (seg[2].reward + g * e[2] - q[2]);
    (got - want).abs()
}

pub fn target_oracles(cases: usize) -> Outcome {
    let td = (0..cases as u64).map(td_lambda_expansion).fold(0.0, f64::max);
    let tb = (0..cases as u64).map(tree_backup_expansion).fold(0.0, f64::max);
    Outcome::new(td <= TARGET_TOL && tb <= TARGET_TOL, format!("{cases} episodes: TD(λ) max err {td:.1e}, tree-backup max err {tb:.1e}"))
}

// --------------------------------------------------------------------- IGM

/// Brute-force joint argmax of the weighted joint value on the matrix game
/// against per-agent argmaxes of `k_i(a)·Q_i(a)`, plus the same check with
/// weighting off against plain `Q_i` argmaxes.
pub fn igm_check(parameterizations: usize) -> Outcome {
    let payoff = emix::envs::MatrixGame::default_payoff();
    let game = emix::envs::MatrixGame::new(payoff, 0.99).unwrap();
    let spec = emix::envs::Environment::spec(&game).clone();
    let critic = CentralCritic::new(&spec, 1, 10, 8, 8);
    let c1 = 0.01;
    let mut mismatches = 0;
    let mut min_coef = f64::INFINITY;
    for seed in 0..parameterizations as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + seed);
        let mut store = ParamStore::new();
        critic.init(&mut store, &mut rng).unwrap();
        scramble(&mut store, &mut rng, 1.5);
        let windows = vec![Tensor2::zeros(1, spec.obs_dim); 2];
        let b = critic.evaluate(&store, &windows, &Tensor2::zeros(1, spec.state_dim)).unwrap();
        let m = &spec.action_counts;
        for weighting in [true, false] {
            let mut best = (f64::NEG_INFINITY, vec![0, 0]);
            for a0 in 0..m[0] {
                for a1 in 0..m[1] {
                    let v = b.mix_at(0, &[a0, a1], weighting, c1).unwrap().total;
                    if v > best.0 {
                        best = (v, vec![a0, a1]);
                    }
                }
            }
            let per_agent: Vec<usize> = (0..2)
                .map(|i| {
                    let util: Vec<f64> = (0..m[i])
                        .map(|a| {
                            let k = if weighting { uncertainty_weight(b.raw_kurtosis(i, 0, a).unwrap(), c1).unwrap() } else { 1.0 };
                            min_coef = min_coef.min(k * b.lambdas.get(0, i));
                            k * b.mean_q[i].get(0, a)
                        })
                        .collect();
                    (0..m[i]).max_by(|&x, &y| util[x].total_cmp(&util[y])).unwrap()
                })
                .collect();
            mismatches += usize::from(per_agent != best.1);
        }
    }
    Outcome::new(
        mismatches == 0 && min_coef > 0.0,
        format!("{parameterizations} parameterizations x weighting on/off: {mismatches} mismatches, min k·λ = {min_coef:.3e}"),
    )
}

// ----------------------------------------------------------- certification

pub fn certification(instances: usize, seed: u64) -> Outcome {
    let rows = certification_sweep(instances, seed, 20, 50).unwrap();
    let bound_fail = rows.iter().filter(|r| !r.report.holds).count();
    let lemma_fail = rows.iter().filter(|r| !(r.lemma1 <= BOUND_TOL)).count();
    let worst = rows.iter().map(|r| r.report.lhs - r.report.rhs).fold(f64::NEG_INFINITY, f64::max);
    let lemma = rows.iter().map(|r| r.lemma1).fold(f64::NEG_INFINITY, f64::max);
    Outcome::new(
        bound_fail == 0 && lemma_fail == 0,
        format!(
            "{instances} instances, {} agent checks: bound violations {bound_fail}, max lhs−rhs {worst:.3e}; lemma violations {lemma_fail}, max {lemma:.3e}",
            rows.len()
        ),
    )
}

// ---------------------------------------------------------------- learning

pub const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn run(cfg: &TrainConfig) -> (emix::trainer::TrainOutcome, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let out = train(cfg, dir.path()).unwrap();
    (out, dir)
}

/// `(step, episode, eval_return, eval_success)` for every evaluation row.
pub fn evals(rows: &[MetricsRow]) -> Vec<(usize, usize, f64, f64)> {
    rows.iter()
        .filter_map(|r| Some((r.step, r.episode, r.eval_return?, r.eval_success?)))
        .collect()
}

pub fn with(base: &TrainConfig, seed: u64, edit: impl Fn(&mut TrainConfig)) -> TrainConfig {
    let mut cfg = base.clone();
    cfg.seed = seed;
    edit(&mut cfg);
    cfg
}

/// Matrix game: gated arm reaches the optimum in ≥ 90% of evaluation
/// episodes (median over seeds of the best checkpoint) and its median
/// return beats the no-bonus arm at every checkpoint past half the budget.
pub fn matrix_game_learning(base: &TrainConfig) -> Outcome {
    let arm = |mode: ExploreMode| -> Vec<Vec<(usize, usize, f64, f64)>> {
        SEEDS.iter().map(|&s| evals(&run(&with(base, s, |c| c.exploration = mode)).0.rows)).collect()
    };
    let gated = arm(ExploreMode::KurtosisGated);
    let none = arm(ExploreMode::None);
    let best = median(gated.iter().map(|e| e.iter().map(|x| x.3).fold(0.0, f64::max)).collect());
    let half = base.episodes / 2;
    let checkpoints: Vec<usize> = gated[0].iter().filter(|x| x.1 >= half).map(|x| x.0).collect();
    let at = |runs: &[Vec<(usize, usize, f64, f64)>], step: usize| median(runs.iter().map(|e| e.iter().find(|x| x.0 == step).map_or(f64::NAN, |x| x.2)).collect());
    let beaten = checkpoints.iter().filter(|&&s| at(&gated, s) > at(&none, s)).count();
    let final_g = at(&gated, *checkpoints.last().unwrap_or(&0));
    let final_n = at(&none, *checkpoints.last().unwrap_or(&0));
    Outcome::new(
        best >= 0.9 && !checkpoints.is_empty() && beaten == checkpoints.len(),
        format!(
            "median best success {best:.3}; gated > none at {beaten}/{} late checkpoints; final median return {final_g:.3} vs {final_n:.3}",
            checkpoints.len()
        ),
    )
}

/// Latest evaluation success at or before `episode`.
fn success_at(e: &[(usize, usize, f64, f64)], episode: usize) -> f64 {
    e.iter().take_while(|x| x.1 <= episode).last().map_or(0.0, |x| x.3)
}

/// Two corridors: the smallest post-closure budget at which the gated
/// median success reaches 0.9, and the no-bonus median at that budget.
pub fn corridor_adaptation(base: &TrainConfig) -> Outcome {
    let closure = match base.env {
        emix::envs::EnvConfig::TwoCorridors { closure_episode, .. } => closure_episode.unwrap_or(base.episodes / 2),
        _ => panic!("corridor criterion needs the two-corridors environment"),
    };
    let arm = |mode: ExploreMode| -> Vec<Vec<(usize, usize, f64, f64)>> {
        SEEDS.iter().map(|&s| evals(&run(&with(base, s, |c| c.exploration = mode)).0.rows)).collect()
    };
    let gated = arm(ExploreMode::KurtosisGated);
    let none = arm(ExploreMode::None);
    let med = |runs: &[Vec<(usize, usize, f64, f64)>], ep: usize| median(runs.iter().map(|e| success_at(e, ep)).collect());
    let mut budgets: Vec<usize> = gated.iter().flatten().map(|x| x.1).filter(|&e| e >= closure).collect();
    budgets.sort_unstable();
    budgets.dedup();
    let hit = budgets.iter().find(|&&b| med(&gated, b) >= 0.9);
    let last = base.episodes.saturating_sub(1);
    let peak_g = budgets.iter().map(|&b| med(&gated, b)).fold(0.0, f64::max);
    let peak_n = budgets.iter().map(|&b| med(&none, b)).fold(0.0, f64::max);
    match hit {
        Some(&b) => {
            let (g, n) = (med(&gated, b), med(&none, b));
            Outcome::new(n < g, format!("gated median {g:.3} at {} episodes after closure; no-bonus median {n:.3}", b - closure))
        }
        None => Outcome::new(
            false,
            format!(
                "gated median success never reached 0.9 within {} post-closure episodes (peak median {peak_g:.3}, no-bonus peak {peak_n:.3}, final {:.3} vs {:.3})",
                last + 1 - closure,
                med(&gated, last),
                med(&none, last)
            ),
        ),
    }
}

/// Variance of the critic gradient norm over the final half of the steps.
pub fn late_grad_variance(rows: &[MetricsRow]) -> f64 {
    let tail: Vec<f64> = rows[rows.len() / 2..].iter().map(|r| r.critic_grad_norm).collect();
    let n = tail.len() as f64;
    let mu = tail.iter().sum::<f64>() / n;
    tail.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n
}

pub struct PredatorPreyRuns {
    /// Defaults: weighting on, C2 as configured.
    pub default: Vec<(f64, f64)>,
    pub unweighted: Vec<f64>,
    pub no_regularizer: Vec<f64>,
}

/// Per seed: (late gradient-norm variance, final diversity) of the default
/// run, the variance with weighting off and the diversity with `C_2 = 0`.
pub fn predator_prey_runs(base: &TrainConfig) -> PredatorPreyRuns {
    let mut out = PredatorPreyRuns { default: Vec::new(), unweighted: Vec::new(), no_regularizer: Vec::new() };
    for &s in &SEEDS {
        let (d, _t) = run(&with(base, s, |_| {}));
        out.default.push((late_grad_variance(&d.rows), d.diversity));
        let (u, _t) = run(&with(base, s, |c| c.weighting = false));
        out.unweighted.push(late_grad_variance(&u.rows));
        let (r, _t) = run(&with(base, s, |c| c.c2 = 0.0));
        out.no_regularizer.push(r.diversity);
    }
    out
}

pub fn variance_reduction(runs: &PredatorPreyRuns) -> Outcome {
    let wins = runs.default.iter().zip(&runs.unweighted).filter(|((on, _), off)| on <= off).count();
    let pairs: Vec<String> = runs.default.iter().zip(&runs.unweighted).map(|((on, _), off)| format!("{on:.3e}/{off:.3e}")).collect();
    Outcome::new(wins >= 4, format!("weighted ≤ unweighted in {wins}/5 seed pairs (on/off: {})", pairs.join(", ")))
}

pub fn diversity_effect(runs: &PredatorPreyRuns) -> Outcome {
    let with_reg = median(runs.default.iter().map(|x| x.1).collect());
    let without = median(runs.no_regularizer.clone());
    Outcome::new(with_reg > without, format!("median diversity {with_reg:.4} with C_2 = 0.001 vs {without:.4} with C_2 = 0"))
}

/// Duplicate runs of the same (config, seed) write identical metrics files.
pub fn determinism(cfgs: &[TrainConfig]) -> Outcome {
    let mut same = 0;
    for cfg in cfgs {
        let (a, _da) = run(cfg);
        let (b, _db) = run(cfg);
        same += usize::from(std::fs::read(&a.metrics).unwrap() == std::fs::read(&b.metrics).unwrap());
    }
    Outcome::new(same == cfgs.len(), format!("{same}/{} duplicate pairs byte-identical", cfgs.len()))
}
