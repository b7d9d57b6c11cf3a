use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_actions, one_hot, EnvSpec, Environment, StepResult};
use crate::error::{Error, Result};

const MOVES: [(i32, i32); 4] = [(0, -1), (0, 1), (-1, 0), (1, 0)];
const CAPTURE: usize = 4;
const NUM_ACTIONS: usize = 5;
const VIEW_RADIUS: i32 = 2;
const CAPTURE_REWARD: f64 = 10.0;
const STEP_PENALTY: f64 = -0.01;

/// Square grid where predators must jointly capture a randomly walking prey.
///
/// Actions are up, down, left, right and capture. A capture succeeds when at
/// least two predators orthogonally adjacent to the prey choose it in the
/// same step; the episode then ends with a shared reward of +10. Every other
/// step costs 0.01.
#[derive(Clone, Debug)]
pub struct PredatorPrey {
    spec: EnvSpec,
    size: i32,
    predators: Vec<(i32, i32)>,
    prey: (i32, i32),
    last_actions: Vec<Option<usize>>,
    rng: ChaCha8Rng,
    t: usize,
    done: bool,
    captured: bool,
}

impl PredatorPrey {
    pub fn default_size() -> usize {
        7
    }
    pub fn default_predators() -> usize {
        3
    }
    pub fn default_max_steps() -> usize {
        25
    }

    pub fn new(size: usize, predators: usize, max_steps: usize, gamma: f64) -> Result<Self> {
        if size < 3 || predators < 2 || predators + 1 > size * size || max_steps == 0 {
            return Err(Error::Env("predator-prey needs size >= 3, >= 2 predators and a positive horizon".into()));
        }
        // own position + (dx, dy, visible) per other entity + last action
        let obs_dim = 2 + 3 * predators + NUM_ACTIONS;
        Ok(Self {
            spec: EnvSpec {
                num_agents: predators,
                action_counts: vec![NUM_ACTIONS; predators],
                obs_dim,
                state_dim: 2 * (predators + 1),
                max_steps,
                gamma,
            },
            size: size as i32,
            predators: vec![(0, 0); predators],
            prey: (0, 0),
            last_actions: vec![None; predators],
            rng: ChaCha8Rng::seed_from_u64(0),
            t: 0,
            done: false,
            captured: false,
        })
    }

    pub fn positions(&self) -> (&[(i32, i32)], (i32, i32)) {
        (&self.predators, self.prey)
    }

    /// Places every entity explicitly (tests and replays).
    pub fn set_positions(&mut self, predators: &[(i32, i32)], prey: (i32, i32)) -> Result<()> {
        if predators.len() != self.predators.len() {
            return Err(Error::Env("wrong number of predator positions".into()));
        }
        self.predators = predators.to_vec();
        self.prey = prey;
        Ok(())
    }

    fn in_bounds(&self, p: (i32, i32)) -> bool {
        (0..self.size).contains(&p.0) && (0..self.size).contains(&p.1)
    }

    fn occupied(&self, p: (i32, i32)) -> bool {
        self.prey == p || self.predators.contains(&p)
    }

    fn norm(&self, v: i32) -> f64 {
        v as f64 / (self.size - 1) as f64
    }

    fn observe(&self) -> Vec<Vec<f64>> {
        let n = self.predators.len();
        (0..n)
            .map(|i| {
                let me = self.predators[i];
                let mut o = vec![self.norm(me.0), self.norm(me.1)];
                let others = (0..n).filter(|&j| j != i).map(|j| self.predators[j]).chain([self.prey]);
                for p in others {
                    let (dx, dy) = (p.0 - me.0, p.1 - me.1);
                    if dx.abs() <= VIEW_RADIUS && dy.abs() <= VIEW_RADIUS {
                        o.extend([dx as f64 / VIEW_RADIUS as f64, dy as f64 / VIEW_RADIUS as f64, 1.0]);
                    } else {
                        o.extend([0.0, 0.0, 0.0]);
                    }
                }
                o.extend(one_hot(NUM_ACTIONS, self.last_actions[i]));
                o
            })
            .collect()
    }

    fn state(&self) -> Vec<f64> {
        let mut s = Vec::with_capacity(self.spec.state_dim);
        for p in self.predators.iter().chain([&self.prey]) {
            s.push(self.norm(p.0));
            s.push(self.norm(p.1));
        }
        s
    }

    fn result(&self, reward: f64) -> StepResult {
        StepResult { observations: self.observe(), reward, terminated: self.done, state: self.state() }
    }
}

impl Environment for PredatorPrey {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> StepResult {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let cells = (self.size * self.size) as usize;
        let mut taken: Vec<usize> = Vec::new();
        while taken.len() < self.predators.len() + 1 {
            let c = self.rng.random_range(0..cells);
            if !taken.contains(&c) {
                taken.push(c);
            }
        }
        let to_xy = |c: usize| ((c % self.size as usize) as i32, (c / self.size as usize) as i32);
        for (i, &c) in taken[..self.predators.len()].iter().enumerate() {
            self.predators[i] = to_xy(c);
        }
        self.prey = to_xy(taken[self.predators.len()]);
        self.last_actions.iter_mut().for_each(|a| *a = None);
        self.t = 0;
        self.done = false;
        self.captured = false;
        self.result(0.0)
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult> {
        check_actions(&self.spec, joint_action, self.done)?;
        self.t += 1;
        let adjacent = |p: (i32, i32), q: (i32, i32)| (p.0 - q.0).abs() + (p.1 - q.1).abs() == 1;
        let capturers = joint_action
            .iter()
            .zip(&self.predators)
            .filter(|(&a, &p)| a == CAPTURE && adjacent(p, self.prey))
            .count();
        for (i, &a) in joint_action.iter().enumerate() {
            self.last_actions[i] = Some(a);
        }
        if capturers >= 2 {
            self.done = true;
            self.captured = true;
            return Ok(self.result(CAPTURE_REWARD));
        }
        for (i, &a) in joint_action.iter().enumerate() {
            if a == CAPTURE {
                continue;
            }
            let p = self.predators[i];
            let next = (p.0 + MOVES[a].0, p.1 + MOVES[a].1);
            if self.in_bounds(next) && !self.occupied(next) {
                self.predators[i] = next;
            }
        }
        // Prey: uniform over staying put and every free neighbouring cell.
        let mut options = vec![self.prey];
        for m in MOVES {
            let next = (self.prey.0 + m.0, self.prey.1 + m.1);
            if self.in_bounds(next) && !self.occupied(next) {
                options.push(next);
            }
        }
        self.prey = options[self.rng.random_range(0..options.len())];
        self.done = self.t >= self.spec.max_steps;
        Ok(self.result(STEP_PENALTY))
    }

    fn success(&self) -> bool {
        self.captured
    }
}
