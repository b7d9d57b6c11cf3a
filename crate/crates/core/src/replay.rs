//! Episode-granular experience storage for the on-policy and off-policy
//! arms.

use std::collections::VecDeque;
use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{read_jsonl, write_jsonl, StepRecord};
use crate::error::{Error, Result};

/// One joint step. `windows[i]` is agent `i`'s flattened observation window
/// at decision time, `behavior_probs[i]` the probability with which agent
/// `i` picked `actions[i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub windows: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub behavior_probs: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub next_windows: Vec<Vec<f64>>,
    pub terminated: bool,
}

/// Checks that `episode` is non-empty, consistent, ends in a terminal step
/// and carries valid behavior probabilities.
pub fn validate_episode(episode: &[Transition]) -> Result<()> {
    let first = episode.first().ok_or_else(|| Error::Replay("empty episode".into()))?;
    let k = first.actions.len();
    for (t, tr) in episode.iter().enumerate() {
        if tr.actions.len() != k
            || tr.windows.len() != k
            || tr.next_windows.len() != k
            || tr.behavior_probs.len() != k
            || tr.windows.iter().zip(&first.windows).any(|(a, b)| a.len() != b.len())
            || tr.state.len() != first.state.len()
        {
            return Err(Error::Replay(format!("step {t} is inconsistent with the first step")));
        }
        if let Some(p) = tr.behavior_probs.iter().find(|&&p| !(p > 0.0 && p <= 1.0)) {
            return Err(Error::Replay(format!("step {t} has behavior probability {p} outside (0,1]")));
        }
        if tr.terminated && t + 1 != episode.len() {
            return Err(Error::Replay(format!("step {t} terminates before the end of the episode")));
        }
    }
    if !episode[episode.len() - 1].terminated {
        return Err(Error::Replay("episode does not end in a terminal step".into()));
    }
    Ok(())
}

/// A contiguous slice of one stored episode.
#[derive(Clone, Copy, Debug)]
pub struct Segment<'a> {
    /// Position of the episode in the buffer, oldest first.
    pub episode: usize,
    pub start: usize,
    pub steps: &'a [Transition],
}

/// FIFO ring of complete episodes.
#[derive(Clone, Debug)]
pub struct EpisodeBuffer {
    capacity: usize,
    episodes: VecDeque<Vec<Transition>>,
    inserted: u64,
    transitions: usize,
}

impl EpisodeBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Replay("buffer capacity must be positive".into()));
        }
        Ok(Self { capacity, episodes: VecDeque::new(), inserted: 0, transitions: 0 })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    /// Episodes pushed since creation, including evicted ones.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    /// Stored transitions across all episodes.
    pub fn num_transitions(&self) -> usize {
        self.transitions
    }

    pub fn episodes(&self) -> impl DoubleEndedIterator<Item = &[Transition]> + ExactSizeIterator {
        self.episodes.iter().map(Vec::as_slice)
    }

    pub fn push_episode(&mut self, episode: Vec<Transition>) -> Result<()> {
        validate_episode(&episode)?;
        if self.episodes.len() == self.capacity {
            if let Some(old) = self.episodes.pop_front() {
                self.transitions -= old.len();
            }
        }
        self.transitions += episode.len();
        self.episodes.push_back(episode);
        self.inserted += 1;
        Ok(())
    }

    /// The `n` most recent episodes, oldest first.
    pub fn sample_on(&self, n: usize) -> Result<Vec<&[Transition]>> {
        if self.episodes.is_empty() {
            return Err(Error::Replay("sampling from an empty buffer".into()));
        }
        let skip = self.episodes.len().saturating_sub(n);
        Ok(self.episodes.iter().skip(skip).map(Vec::as_slice).collect())
    }

    /// Segments of at most `m` steps starting at uniformly drawn stored
    /// transitions, truncated at the end of their episode. Draws continue
    /// until the segments hold at least `n_transitions` steps.
    pub fn sample_off(&self, n_transitions: usize, m: usize, rng: &mut impl Rng) -> Result<Vec<Segment<'_>>> {
        if self.episodes.is_empty() {
            return Err(Error::Replay("sampling from an empty buffer".into()));
        }
        if m == 0 {
            return Err(Error::Replay("segment length must be at least 1".into()));
        }
        let mut cumulative = Vec::with_capacity(self.episodes.len());
        let mut total = 0;
        for ep in &self.episodes {
            total += ep.len();
            cumulative.push(total);
        }
        let mut out = Vec::new();
        let mut drawn = 0;
        while drawn < n_transitions.max(1) {
            let flat = rng.random_range(0..total);
            let e = cumulative.partition_point(|&c| c <= flat);
            let start = flat - if e == 0 { 0 } else { cumulative[e - 1] };
            let ep = &self.episodes[e];
            let end = (start + m).min(ep.len());
            drawn += end - start;
            out.push(Segment { episode: e, start, steps: &ep[start..end] });
        }
        Ok(out)
    }

    /// Writes every stored step as one JSON line; `episode` numbers count
    /// from the oldest stored episode.
    pub fn dump_jsonl<W: Write>(&self, w: W) -> Result<()> {
        let records: Vec<StepRecord> = self
            .episodes
            .iter()
            .enumerate()
            .flat_map(|(e, ep)| {
                ep.iter().enumerate().map(move |(t, tr)| StepRecord {
                    episode: e,
                    t,
                    state: tr.state.clone(),
                    observations: tr.windows.clone(),
                    actions: tr.actions.clone(),
                    reward: tr.reward,
                    terminated: tr.terminated,
                    behavior_probs: Some(tr.behavior_probs.clone()),
                    next_state: Some(tr.next_state.clone()),
                    next_observations: Some(tr.next_windows.clone()),
                })
            })
            .collect();
        write_jsonl(w, &records)
    }

    /// Rebuilds a buffer from [`EpisodeBuffer::dump_jsonl`] output.
    pub fn restore_jsonl<R: BufRead>(r: R, capacity: usize) -> Result<Self> {
        let mut buffer = Self::new(capacity)?;
        let mut current: Vec<Transition> = Vec::new();
        let mut current_ep = None;
        for rec in read_jsonl(r)? {
            if current_ep.is_some_and(|e| e != rec.episode) {
                buffer.push_episode(std::mem::take(&mut current))?;
            }
            current_ep = Some(rec.episode);
            let missing = || Error::Replay(format!("episode {} step {} lacks replay fields", rec.episode, rec.t));
            current.push(Transition {
                behavior_probs: rec.behavior_probs.clone().ok_or_else(missing)?,
                next_state: rec.next_state.clone().ok_or_else(missing)?,
                next_windows: rec.next_observations.clone().ok_or_else(missing)?,
                state: rec.state,
                windows: rec.observations,
                actions: rec.actions,
                reward: rec.reward,
                terminated: rec.terminated,
            });
        }
        if !current.is_empty() {
            buffer.push_episode(current)?;
        }
        Ok(buffer)
    }
}
