use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One line of a JSON-lines episode log.
///
/// `observations` and `state` describe the situation the agents acted in;
/// the optional fields are filled when a replay buffer is dumped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub episode: usize,
    pub t: usize,
    pub state: Vec<f64>,
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub reward: f64,
    pub terminated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub behavior_probs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next_state: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next_observations: Option<Vec<Vec<f64>>>,
}

pub fn write_jsonl<W: Write>(mut w: W, records: &[StepRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<StepRecord>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Env(format!("log line {}: {e}", n + 1)))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_round_trip_exactly() {
        let rec = StepRecord {
            episode: 3,
            t: 1,
            state: vec![0.1, 1.0 / 3.0, -2.5e-300],
            observations: vec![vec![std::f64::consts::PI], vec![0.0]],
            actions: vec![2, 0],
            reward: -0.01,
            terminated: false,
            behavior_probs: Some(vec![0.7, 1.0 / 7.0]),
            next_state: None,
            next_observations: None,
        };
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &[rec.clone(), rec.clone()]).unwrap();
        assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 2);
        let back = read_jsonl(&buf[..]).unwrap();
        assert_eq!(back, vec![rec.clone(), rec]);
    }
}
