use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::metrics::{MetricsRow, MetricsWriter};
use crate::actors::{advantage, mixed_update, ActorSet, OffPolicyBatch, OnPolicyBatch};
use crate::critics::{
    critic_loss, sync_targets, td_lambda_targets, tree_backup_targets, CentralCritic, CriticBatch, JointPolicy, LossBatch,
    TargetParams,
};
use crate::diffcore::{ParamStore, Tensor2};
use crate::envs::{EnvSpec, Environment, ObsWindow, StepRecord};
use crate::error::{Error, Result};
use crate::exploration::{behavior_distribution, eval_action, sample_index};
use crate::replay::{EpisodeBuffer, Transition};
use crate::stats::{mean_pairwise_bhattacharyya, raw_kurtosis, uncertainty_weight, EnsembleSample, VAR_EPS};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const EPISODE_LOG_FILE: &str = "episodes.jsonl";
pub const REPLAY_FILE: &str = "replay.jsonl";

const TARGET_PREFIX: &str = "target.";

// Independent random streams of one run.
const STREAM_INIT: u64 = 0;
const STREAM_ENV: u64 = 1;
const STREAM_REPLAY: u64 = 2;
const STREAM_EVAL: u64 = 3;
const STREAM_AGENT: u64 = 16;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Learnable state of a run: critic (live and target) and actors.
#[derive(Clone, Debug)]
pub struct Model {
    pub spec: EnvSpec,
    pub window: usize,
    pub critic: CentralCritic,
    pub live: ParamStore,
    pub target: ParamStore,
    pub actors: ActorSet,
}

impl Model {
    pub fn new(cfg: &TrainConfig, spec: &EnvSpec, rng: &mut impl Rng) -> Result<Self> {
        let critic = CentralCritic::new(spec, cfg.window, cfg.ensemble_size, cfg.hidden, cfg.mixer_hidden);
        let mut live = ParamStore::new();
        critic.init(&mut live, rng)?;
        let target = live.clone();
        let dims = vec![cfg.window * spec.obs_dim; spec.num_agents];
        let actors = ActorSet::new(&dims, &spec.action_counts, cfg.hidden, rng)?;
        Ok(Self { spec: spec.clone(), window: cfg.window, critic, live, target, actors })
    }

    /// Live critic, target critic (names prefixed `target.`) and actors in
    /// one store.
    pub fn to_checkpoint(&self) -> Result<ParamStore> {
        let mut out = self.actors.merged()?;
        for (name, v) in self.live.iter() {
            out.insert(name.clone(), v.clone())?;
        }
        for (name, v) in self.target.iter() {
            out.insert(format!("{TARGET_PREFIX}{name}"), v.clone())?;
        }
        Ok(out)
    }

    pub fn from_checkpoint(cfg: &TrainConfig, spec: &EnvSpec, ckpt: &ParamStore) -> Result<Self> {
        let mut m = Self::new(cfg, spec, &mut ChaCha8Rng::seed_from_u64(0))?;
        let mismatch = |e: Error| Error::Checkpoint(format!("checkpoint does not match the configured model: {e}"));
        m.live.copy_values_from(ckpt, "").map_err(mismatch)?;
        let mut stripped = ParamStore::new();
        for (name, v) in ckpt.iter() {
            if let Some(n) = name.strip_prefix(TARGET_PREFIX) {
                stripped.insert(n, v.clone())?;
            }
        }
        m.target.copy_values_from(&stripped, "").map_err(mismatch)?;
        m.actors.load_from(ckpt).map_err(mismatch)?;
        Ok(m)
    }

    fn windows(&self) -> Vec<ObsWindow> {
        (0..self.spec.num_agents).map(|_| ObsWindow::new(self.window, self.spec.obs_dim)).collect()
    }
}

/// Mean return and success rate over evaluation episodes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalResult {
    pub mean_return: f64,
    pub success_rate: f64,
}

/// Runs `episodes` episodes with every agent drawing from its plain softmax
/// policy. Uses only `seed` for randomness.
pub fn evaluate_actors(
    actors: &ActorSet,
    env: &mut dyn Environment,
    window: usize,
    episodes: usize,
    seed: u64,
    episode_index: usize,
) -> Result<EvalResult> {
    if episodes == 0 {
        return Err(Error::InvalidArgument("evaluation needs at least one episode".into()));
    }
    let spec = env.spec().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut total, mut successes) = (0.0, 0usize);
    for _ in 0..episodes {
        env.set_episode_index(episode_index);
        let mut obs = env.reset(rng.random());
        let mut windows: Vec<ObsWindow> = (0..spec.num_agents).map(|_| ObsWindow::new(window, spec.obs_dim)).collect();
        loop {
            let mut actions = Vec::with_capacity(spec.num_agents);
            for (i, w) in windows.iter_mut().enumerate() {
                w.push(&obs.observations[i])?;
                actions.push(eval_action(actors.net(i), actors.store(i), &w.to_vec(), &mut rng)?);
            }
            obs = env.step(&actions)?;
            total += obs.reward;
            if obs.terminated {
                break;
            }
        }
        successes += usize::from(env.success());
    }
    Ok(EvalResult { mean_return: total / episodes as f64, success_rate: successes as f64 / episodes as f64 })
}

/// Loads `checkpoint` and the `config.json` next to it, then evaluates.
pub fn evaluate(checkpoint: &Path, episodes: usize, seed: Option<u64>) -> Result<EvalResult> {
    let dir = checkpoint.parent().unwrap_or_else(|| Path::new("."));
    let cfg = TrainConfig::load(dir.join(CONFIG_FILE))?;
    let ckpt = ParamStore::load(checkpoint)?;
    let mut env = cfg.env.build(cfg.gamma, cfg.episodes)?;
    let model = Model::from_checkpoint(&cfg, env.spec(), &ckpt)?;
    evaluate_actors(&model.actors, env.as_mut(), cfg.window, episodes, seed.unwrap_or(cfg.seed), cfg.episodes)
}

struct Rollout {
    transitions: Vec<Transition>,
    k_sum: f64,
    gbar_sum: f64,
    gate_open: usize,
    decisions: usize,
}

fn rollout(
    env: &mut dyn Environment,
    model: &Model,
    cfg: &TrainConfig,
    eps: f64,
    env_seed: u64,
    agent_rngs: &mut [ChaCha8Rng],
) -> Result<Rollout> {
    let explore = cfg.explore();
    let k = model.spec.num_agents;
    let mut windows = model.windows();
    let mut obs = env.reset(env_seed);
    for (w, o) in windows.iter_mut().zip(&obs.observations) {
        w.push(o)?;
    }
    let mut out = Rollout { transitions: Vec::new(), k_sum: 0.0, gbar_sum: 0.0, gate_open: 0, decisions: 0 };
    loop {
        let current: Vec<Vec<f64>> = windows.iter().map(ObsWindow::to_vec).collect();
        let mut actions = Vec::with_capacity(k);
        let mut probs = Vec::with_capacity(k);
        for i in 0..k {
            let x = Tensor2::row_vector(&current[i]);
            let logits = model.actors.net(i).logits(model.actors.store(i), &x)?;
            let members: Vec<Vec<f64>> =
                model.critic.critic(i).all_member_q(&model.live, &x)?.into_iter().map(Tensor2::into_data).collect();
            let dist = behavior_distribution(logits.row(0), &members, &explore, eps)?;
            let a = sample_index(&dist.probs, &mut agent_rngs[i]);
            let chosen: Vec<f64> = members.iter().map(|m| m[a]).collect();
            out.k_sum += uncertainty_weight(raw_kurtosis(EnsembleSample::new(&chosen)?, VAR_EPS), cfg.c1)?;
            out.gbar_sum += dist.gbar;
            out.gate_open += usize::from(dist.gate_open);
            out.decisions += 1;
            probs.push(dist.probs[a]);
            actions.push(a);
        }
        let next = env.step(&actions)?;
        for (w, o) in windows.iter_mut().zip(&next.observations) {
            w.push(o)?;
        }
        out.transitions.push(Transition {
            state: obs.state.clone(),
            windows: current,
            actions,
            behavior_probs: probs,
            reward: next.reward,
            next_state: next.state.clone(),
            next_windows: windows.iter().map(ObsWindow::to_vec).collect(),
            terminated: next.terminated,
        });
        if next.terminated {
            return Ok(out);
        }
        obs = next;
    }
}

struct StepStats {
    critic_loss: f64,
    bhattacharyya: f64,
    critic_grad_norm: f64,
    actor_grad_norms: Vec<f64>,
}

fn target_params(cfg: &TrainConfig) -> TargetParams {
    TargetParams { lambda: cfg.lambda, gamma: cfg.gamma, c1: cfg.c1, weighting: cfg.weighting }
}

/// The most recent episodes holding at least `n` transitions (at least one
/// episode), oldest first.
fn recent_episodes(buffer: &EpisodeBuffer, n: usize) -> Result<Vec<&[Transition]>> {
    let all = buffer.sample_on(buffer.capacity())?;
    let mut count = 0;
    let mut start = all.len();
    while start > 0 && (count < n || start == all.len()) {
        start -= 1;
        count += all[start].len();
    }
    Ok(all[start..].to_vec())
}

fn train_step(model: &mut Model, cfg: &TrainConfig, on_buf: &EpisodeBuffer, off_buf: &EpisodeBuffer, rng: &mut ChaCha8Rng) -> Result<StepStats> {
    let tp = target_params(cfg);
    let k = model.spec.num_agents;

    let on_eps = recent_episodes(on_buf, cfg.n1)?;
    let on_targets: Vec<f64> = td_lambda_targets(&on_eps, &model.critic, &model.target, &tp)?.into_iter().flatten().collect();
    let on_steps: Vec<&Transition> = on_eps.iter().flat_map(|e| e.iter()).collect();
    let segments = off_buf.sample_off(cfg.n2, cfg.segment_len, rng)?;
    let seg_steps: Vec<&[Transition]> = segments.iter().map(|s| s.steps).collect();
    let off_targets = tree_backup_targets(&seg_steps, &model.critic, &model.target, &model.actors, &tp)?;
    let off_steps: Vec<&Transition> = seg_steps.iter().map(|s| &s[0]).collect();

    let on = LossBatch::from_steps(on_steps.iter().copied(), on_targets)?;
    let off = LossBatch::from_steps(off_steps.iter().copied(), off_targets)?;
    let (report, grads) = critic_loss(&model.critic, &model.live, &on, &off, cfg.c, cfg.c2)?;
    model.live.adam_step(&grads, &cfg.critic_adam)?;

    let nu = cfg.actor_loss.effective_nu(cfg.v);
    let on_eval = model.critic.evaluate(&model.live, &on.windows, &on.states)?;
    let off_eval = model.critic.evaluate(&model.live, &off.windows, &off.states)?;
    let mut actor_grad_norms = Vec::with_capacity(k);
    for i in 0..k {
        let on_batch = if nu < 1.0 { Some(on_policy_batch(model, &on, &on_eval, i)?) } else { None };
        let off_batch = if nu > 0.0 { Some(off_policy_batch(&off, &off_eval, i)?) } else { None };
        let net = model.actors.net(i).clone();
        let g = mixed_update(&net, model.actors.store_mut(i), on_batch.as_ref(), off_batch.as_ref(), nu, &cfg.actor_adam)?;
        actor_grad_norms.push(g.global_norm());
    }
    Ok(StepStats {
        critic_loss: report.loss,
        bhattacharyya: report.bhattacharyya,
        critic_grad_norm: grads.global_norm(),
        actor_grad_norms,
    })
}

fn on_policy_batch(model: &Model, on: &LossBatch, eval: &CriticBatch, i: usize) -> Result<OnPolicyBatch> {
    let probs = model.actors.probs(i, &on.windows[i])?;
    let advantages = (0..on.len())
        .map(|r| Ok(advantage(eval.mean_q[i].row(r), probs.row(r), eval.lambdas.get(r, i), on.actions[i][r])?.value))
        .collect::<Result<Vec<_>>>()?;
    Ok(OnPolicyBatch { windows: on.windows[i].clone(), actions: on.actions[i].clone(), advantages })
}

fn off_policy_batch(off: &LossBatch, eval: &CriticBatch, i: usize) -> Result<OffPolicyBatch> {
    let rows: Vec<Vec<f64>> = (0..off.len())
        .map(|r| {
            let joint: Vec<usize> = off.actions.iter().map(|a| a[r]).collect();
            eval.q_tot_over_agent_actions(r, i, &joint)
        })
        .collect();
    Ok(OffPolicyBatch { windows: off.windows[i].clone(), q_values: Tensor2::from_rows(&rows)? })
}

/// Mean over agents and steps of the mean pairwise Bhattacharyya distance
/// between the softmaxes of the ensemble members.
pub fn ensemble_diversity(model: &Model, steps: &[&Transition]) -> Result<f64> {
    if steps.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for i in 0..model.spec.num_agents {
        let x = Tensor2::from_rows(&steps.iter().map(|t| t.windows[i].as_slice()).collect::<Vec<_>>())?;
        let members = model.critic.critic(i).all_member_q(&model.live, &x)?;
        for r in 0..steps.len() {
            let rows: Vec<Vec<f64>> = members.iter().map(|m| m.row(r).to_vec()).collect();
            total += mean_pairwise_bhattacharyya(&rows)?;
        }
    }
    Ok(total / (steps.len() * model.spec.num_agents) as f64)
}

/// Everything a finished run produced.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub rows: Vec<MetricsRow>,
    pub final_eval: Option<EvalResult>,
    /// [`ensemble_diversity`] over the most recent stored transitions.
    pub diversity: f64,
    pub model: Model,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
}

/// Transitions inspected by the final diversity measurement.
const DIVERSITY_STEPS: usize = 256;

/// Runs the full training loop, writing `config.json`, `metrics.csv` and
/// `checkpoint.bin` (plus optional logs) into `out_dir`.
pub fn train(cfg: &TrainConfig, out_dir: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join(CONFIG_FILE), cfg.to_json()? + "\n")?;
    let metrics_path = out_dir.join(METRICS_FILE);
    let mut writer = MetricsWriter::new(BufWriter::new(File::create(&metrics_path)?))?;
    let mut episode_log = if cfg.log_episodes { Some(BufWriter::new(File::create(out_dir.join(EPISODE_LOG_FILE))?)) } else { None };
    let started = Instant::now();

    let mut env = cfg.env.build(cfg.gamma, cfg.episodes)?;
    let mut eval_env = cfg.env.build(cfg.gamma, cfg.episodes)?;
    let spec = env.spec().clone();
    let mut model = Model::new(cfg, &spec, &mut stream(cfg.seed, STREAM_INIT))?;
    let checkpoint = out_dir.join(CHECKPOINT_FILE);
    model.to_checkpoint()?.save(&checkpoint)?;

    let mut env_rng = stream(cfg.seed, STREAM_ENV);
    let mut replay_rng = stream(cfg.seed, STREAM_REPLAY);
    let mut eval_rng = stream(cfg.seed, STREAM_EVAL);
    let mut agent_rngs: Vec<ChaCha8Rng> = (0..spec.num_agents).map(|i| stream(cfg.seed, STREAM_AGENT + i as u64)).collect();
    let mut on_buf = EpisodeBuffer::new(cfg.on_buffer_episodes)?;
    let mut off_buf = EpisodeBuffer::new(cfg.off_buffer_episodes)?;
    let schedule = cfg.epsilon();
    let interval = cfg.effective_eval_interval();
    let mut next_eval = interval;
    let mut env_steps = 0;
    let mut rows = Vec::with_capacity(cfg.episodes);
    let mut final_eval = None;

    for ep in 0..cfg.episodes {
        env.set_episode_index(ep);
        let r = rollout(env.as_mut(), &model, cfg, schedule.value(ep), env_rng.random(), &mut agent_rngs)?;
        env_steps += r.transitions.len();
        if let Some(log) = episode_log.as_mut() {
            for (t, tr) in r.transitions.iter().enumerate() {
                let rec = StepRecord {
                    episode: ep,
                    t,
                    state: tr.state.clone(),
                    observations: tr.windows.clone(),
                    actions: tr.actions.clone(),
                    reward: tr.reward,
                    terminated: tr.terminated,
                    behavior_probs: Some(tr.behavior_probs.clone()),
                    next_state: None,
                    next_observations: None,
                };
                serde_json::to_writer(&mut *log, &rec)?;
                log.write_all(b"\n")?;
            }
        }
        on_buf.push_episode(r.transitions.clone())?;
        off_buf.push_episode(r.transitions)?;

        let stats = train_step(&mut model, cfg, &on_buf, &off_buf, &mut replay_rng)
            .map_err(|e| Error::Diverged { episode: ep, detail: e.to_string() })?;
        if !stats.critic_loss.is_finite() {
            return Err(Error::Diverged { episode: ep, detail: format!("critic loss {}", stats.critic_loss) });
        }
        let step = ep + 1;
        if step % cfg.target_sync == 0 {
            sync_targets(&model.live, &mut model.target)?;
        }

        let mut eval = None;
        if env_steps >= next_eval || step == cfg.episodes {
            while next_eval <= env_steps {
                next_eval += interval;
            }
            let res = evaluate_actors(&model.actors, eval_env.as_mut(), cfg.window, cfg.eval_episodes, eval_rng.random(), ep)?;
            final_eval = Some(res);
            eval = Some(res);
        }
        let decisions = r.decisions.max(1) as f64;
        let row = MetricsRow {
            step,
            episode: ep,
            eval_return: eval.map(|e| e.mean_return),
            eval_success: eval.map(|e| e.success_rate),
            critic_loss: stats.critic_loss,
            bhattacharyya: stats.bhattacharyya,
            mean_k: r.k_sum / decisions,
            mean_gbar: r.gbar_sum / decisions,
            gate_open_frac: r.gate_open as f64 / decisions,
            actor_grad_norms: stats.actor_grad_norms,
            critic_grad_norm: stats.critic_grad_norm,
            wall_clock: if cfg.log_wall_clock { started.elapsed().as_secs_f64() } else { 0.0 },
        };
        writer.write(&row)?;
        rows.push(row);
    }
    writer.finish()?;
    if let Some(mut log) = episode_log {
        log.flush()?;
    }
    model.to_checkpoint()?.save(&checkpoint)?;
    if cfg.dump_replay {
        off_buf.dump_jsonl(BufWriter::new(File::create(out_dir.join(REPLAY_FILE))?))?;
    }
    let recent: Vec<&Transition> = off_buf.episodes().rev().flat_map(|e| e.iter()).take(DIVERSITY_STEPS).collect();
    let diversity = ensemble_diversity(&model, &recent)?;
    Ok(TrainOutcome { rows, final_eval, diversity, model, checkpoint, metrics: metrics_path })
}
