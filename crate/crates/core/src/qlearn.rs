//! Tabular Q-learning shared by the base-station allocator and the jammer.
//!
//! A [`QTable`] stores one row per state. Rows may have different lengths, so a
//! row holds exactly the actions that are legal in its state.

use std::io::{self, Write};

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    values: Vec<f64>,
    /// `offsets[s]..offsets[s + 1]` is the slice of row `s`.
    offsets: Vec<usize>,
}

impl QTable {
    /// Zero table with the given per-state action counts.
    pub fn zeros(row_lengths: impl IntoIterator<Item = usize>) -> Self {
        let mut offsets = vec![0];
        let mut total = 0;
        for len in row_lengths {
            total += len;
            offsets.push(total);
        }
        Self {
            values: vec![0.0; total],
            offsets,
        }
    }

    pub fn n_states(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_actions(&self, s: usize) -> usize {
        self.offsets[s + 1] - self.offsets[s]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, s: usize) -> Result<&[f64]> {
        self.check_state(s)?;
        Ok(&self.values[self.offsets[s]..self.offsets[s + 1]])
    }

    pub fn row_mut(&mut self, s: usize) -> Result<&mut [f64]> {
        self.check_state(s)?;
        let (a, b) = (self.offsets[s], self.offsets[s + 1]);
        Ok(&mut self.values[a..b])
    }

    pub fn get(&self, s: usize, a: usize) -> Result<f64> {
        let row = self.row(s)?;
        row.get(a)
            .copied()
            .ok_or_else(|| Error::Index(format!("action {a} in state {s} (row has {})", row.len())))
    }

    /// Largest entry of row `s`, or 0 for an empty row.
    pub fn max_value(&self, s: usize) -> Result<f64> {
        Ok(self
            .row(s)?
            .iter()
            .copied()
            .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
            .unwrap_or(0.0))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Writes `state,action,value` lines with a header.
    pub fn write_delimited<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "state,action,value")?;
        for s in 0..self.n_states() {
            for (a, v) in self.values[self.offsets[s]..self.offsets[s + 1]]
                .iter()
                .enumerate()
            {
                writeln!(out, "{s},{a},{v:e}")?;
            }
        }
        Ok(())
    }

    fn check_state(&self, s: usize) -> Result<()> {
        if s >= self.n_states() {
            return Err(Error::Index(format!("state {s} of {}", self.n_states())));
        }
        Ok(())
    }
}

/// How a table is filled before learning starts.
pub enum InitRule<'a> {
    /// Independent uniform draws from `[lo, hi]`.
    Uniform { lo: f64, hi: f64 },
    /// Action 0 (no jamming) gets 0; every other action gets the number of RBs it jams,
    /// as reported by the callback `(state, action) -> jammed RBs`.
    JamPrior(&'a dyn Fn(usize, usize) -> usize),
}

pub fn init_table<R: Rng + ?Sized>(
    row_lengths: &[usize],
    rule: &InitRule<'_>,
    rng: &mut R,
) -> Result<QTable> {
    if row_lengths.is_empty() {
        return Err(Error::config("table needs at least one state"));
    }
    let mut table = QTable::zeros(row_lengths.iter().copied());
    match *rule {
        InitRule::Uniform { lo, hi } => {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(Error::config(format!("invalid init range [{lo}, {hi}]")));
            }
            if lo < hi {
                for v in &mut table.values {
                    *v = rng.gen_range(lo..hi);
                }
            } else {
                table.values.fill(lo);
            }
        }
        InitRule::JamPrior(jammed) => {
            for s in 0..table.n_states() {
                let start = table.offsets[s];
                for a in 0..table.n_actions(s) {
                    table.values[start + a] = if a == 0 { 0.0 } else { jammed(s, a) as f64 };
                }
            }
        }
    }
    Ok(table)
}

/// Instantaneous exploration rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Explore {
    Greedy,
    EpsilonGreedy(f64),
}

/// Exploration policy with a per-slot multiplicative decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ExplorationSchedule {
    Greedy,
    EpsilonGreedy {
        epsilon: f64,
        decay: f64,
        floor: f64,
    },
}

impl Default for ExplorationSchedule {
    fn default() -> Self {
        ExplorationSchedule::EpsilonGreedy {
            epsilon: 0.1,
            decay: 0.999,
            floor: 0.01,
        }
    }
}

impl ExplorationSchedule {
    /// The rule in force after `slots` decay steps.
    pub fn at(&self, slots: u64) -> Explore {
        match *self {
            ExplorationSchedule::Greedy => Explore::Greedy,
            ExplorationSchedule::EpsilonGreedy {
                epsilon,
                decay,
                floor,
            } => {
                let e = epsilon * decay.powf(slots as f64);
                Explore::EpsilonGreedy(e.max(floor.min(epsilon)))
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if let ExplorationSchedule::EpsilonGreedy {
            epsilon,
            decay,
            floor,
        } = *self
        {
            for (name, v) in [
                ("epsilon", epsilon),
                ("epsilon decay", decay),
                ("epsilon floor", floor),
            ] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::config(format!("{name} {v} outside [0,1]")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnParams {
    pub alpha: f64,
    pub gamma: f64,
    pub explore: ExplorationSchedule,
}

impl Default for LearnParams {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            gamma: 0.95,
            explore: ExplorationSchedule::default(),
        }
    }
}

impl LearnParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::config(format!("alpha {} outside (0,1]", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config(format!("gamma {} outside [0,1]", self.gamma)));
        }
        self.explore.validate()
    }
}

/// One-step Q-learning update of entry `(s, a)`; returns the new value.
pub fn q_update(
    table: &mut QTable,
    s: usize,
    a: usize,
    r: f64,
    s_next: usize,
    params: &LearnParams,
) -> Result<f64> {
    if !r.is_finite() {
        return Err(Error::Domain(format!("non-finite reward {r}")));
    }
    let next_max = table.max_value(s_next)?;
    let old = table.get(s, a)?;
    let new = (1.0 - params.alpha) * old + params.alpha * (r + params.gamma * next_max);
    table.row_mut(s)?[a] = new;
    Ok(new)
}

/// Chooses among the actions of a row in place of the plain argmax.
pub trait ActionFilter: Send + Sync {
    /// `row` is non-empty.
    fn select(&self, row: &[f64], rng: &mut dyn RngCore) -> usize;
}

/// Index of the first maximal entry.
pub fn argmax(row: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in row.iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Picks an action for state `s`. With probability epsilon a uniformly random action;
/// otherwise the override's choice if one is installed, else the lowest-index argmax.
pub fn select_action<R: RngCore>(
    table: &QTable,
    s: usize,
    explore: Explore,
    rng: &mut R,
    filter: Option<&dyn ActionFilter>,
) -> Result<usize> {
    let row = table.row(s)?;
    if row.is_empty() {
        return Err(Error::config(format!("state {s} has no available actions")));
    }
    if let Explore::EpsilonGreedy(eps) = explore {
        if eps > 0.0 && rng.gen::<f64>() < eps {
            return Ok(rng.gen_range(0..row.len()));
        }
    }
    Ok(match filter {
        Some(f) => f.select(row, rng),
        None => argmax(row).expect("non-empty row"),
    })
}
