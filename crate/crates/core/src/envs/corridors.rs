use super::{check_actions, one_hot, EnvSpec, Environment, StepResult};
use crate::error::{Error, Result};

// x: 0 1 2 3 4 5 6 7 8
// y0 . . . . . . . . .     long corridor
// y1 . # # # # # # # .
// y2 A . . s s s . . G     s: short corridor
// y3 B # # # # # # # #
// y4 # # # # # # # # #
const LAYOUT: [&str; 5] = [".........", ".#######.", "...sss..G", ".########", "#########"];
const WIDTH: i32 = 9;
const HEIGHT: i32 = 5;
const SPAWNS: [(i32, i32); 2] = [(0, 2), (0, 3)];
const GOAL: (i32, i32) = (8, 2);
// stay, up, down, left, right
const MOVES: [(i32, i32); 5] = [(0, 0), (0, -1), (0, 1), (-1, 0), (1, 0)];
const VIEW_RADIUS: i32 = 2;
const GOAL_REWARD: f64 = 10.0;
const STEP_PENALTY: f64 = -0.01;

/// Two agents must both reach a goal cell through either a 3-cell short
/// corridor or the 9-cell long corridor. The short corridor closes for good
/// from `closure_episode` onwards; moving into a closed cell leaves the agent
/// in place.
#[derive(Clone, Debug)]
pub struct TwoCorridors {
    spec: EnvSpec,
    closure_episode: usize,
    episode: usize,
    agents: [(i32, i32); 2],
    last_actions: [Option<usize>; 2],
    t: usize,
    done: bool,
    reached: bool,
}

impl TwoCorridors {
    pub fn default_max_steps() -> usize {
        30
    }

    pub fn new(closure_episode: usize, max_steps: usize, gamma: f64) -> Result<Self> {
        if max_steps == 0 {
            return Err(Error::Env("two-corridors needs a positive horizon".into()));
        }
        Ok(Self {
            spec: EnvSpec {
                num_agents: 2,
                action_counts: vec![MOVES.len(); 2],
                // own position + other agent + goal + last action
                obs_dim: 2 + 3 + 3 + MOVES.len(),
                state_dim: 5,
                max_steps,
                gamma,
            },
            closure_episode,
            episode: 0,
            agents: SPAWNS,
            last_actions: [None; 2],
            t: 0,
            done: false,
            reached: false,
        })
    }

    /// Whether the short corridor is open during `episode`.
    pub fn short_corridor_open(&self, episode: usize) -> bool {
        episode < self.closure_episode
    }

    pub fn closure_episode(&self) -> usize {
        self.closure_episode
    }

    pub fn agents(&self) -> [(i32, i32); 2] {
        self.agents
    }

    pub fn set_agents(&mut self, agents: [(i32, i32); 2]) {
        self.agents = agents;
    }

    fn cell(x: i32, y: i32) -> u8 {
        LAYOUT[y as usize].as_bytes()[x as usize]
    }

    fn passable(&self, p: (i32, i32)) -> bool {
        if !(0..WIDTH).contains(&p.0) || !(0..HEIGHT).contains(&p.1) {
            return false;
        }
        match Self::cell(p.0, p.1) {
            b'#' => false,
            b's' => self.short_corridor_open(self.episode),
            _ => true,
        }
    }

    fn rel(me: (i32, i32), p: (i32, i32)) -> [f64; 3] {
        let (dx, dy) = (p.0 - me.0, p.1 - me.1);
        if dx.abs() <= VIEW_RADIUS && dy.abs() <= VIEW_RADIUS {
            [dx as f64 / VIEW_RADIUS as f64, dy as f64 / VIEW_RADIUS as f64, 1.0]
        } else {
            [0.0; 3]
        }
    }

    fn result(&self, reward: f64) -> StepResult {
        let observations = (0..2)
            .map(|i| {
                let me = self.agents[i];
                let mut o = vec![me.0 as f64 / (WIDTH - 1) as f64, me.1 as f64 / (HEIGHT - 1) as f64];
                o.extend(Self::rel(me, self.agents[1 - i]));
                o.extend(Self::rel(me, GOAL));
                o.extend(one_hot(MOVES.len(), self.last_actions[i]));
                o
            })
            .collect();
        let state = vec![
            self.agents[0].0 as f64 / (WIDTH - 1) as f64,
            self.agents[0].1 as f64 / (HEIGHT - 1) as f64,
            self.agents[1].0 as f64 / (WIDTH - 1) as f64,
            self.agents[1].1 as f64 / (HEIGHT - 1) as f64,
            f64::from(self.short_corridor_open(self.episode)),
        ];
        StepResult { observations, reward, terminated: self.done, state }
    }
}

impl Environment for TwoCorridors {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: u64) -> StepResult {
        self.agents = SPAWNS;
        self.last_actions = [None; 2];
        self.t = 0;
        self.done = false;
        self.reached = false;
        self.result(0.0)
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult> {
        check_actions(&self.spec, joint_action, self.done)?;
        self.t += 1;
        for (i, &a) in joint_action.iter().enumerate() {
            self.last_actions[i] = Some(a);
            let p = self.agents[i];
            if p == GOAL {
                continue;
            }
            let next = (p.0 + MOVES[a].0, p.1 + MOVES[a].1);
            if self.passable(next) {
                self.agents[i] = next;
            }
        }
        if self.agents.iter().all(|&p| p == GOAL) {
            self.done = true;
            self.reached = true;
            return Ok(self.result(GOAL_REWARD));
        }
        self.done = self.t >= self.spec.max_steps;
        Ok(self.result(STEP_PENALTY))
    }

    fn success(&self) -> bool {
        self.reached
    }

    fn set_episode_index(&mut self, episode: usize) {
        self.episode = episode;
    }
}
