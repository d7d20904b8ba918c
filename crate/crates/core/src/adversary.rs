//! The jammer: passive spectrum sensing, jam-set selection under a budget, and
//! reward from NACKs detected on the RBs it jammed.
//!
//! The learned strategies keep a surrogate Q-table indexed by the sensed
//! availability mask. In a state with `k` free RBs the actions are "no jamming"
//! (index 0) followed by every `min(B, k)`-subset of the free RBs, so a row has
//! `C(k, B) + 1` entries when `k > B` and 2 entries otherwise.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qlearn::{
    init_table, q_update, select_action, ExplorationSchedule, Explore, InitRule, LearnParams,
    QTable,
};
use crate::slicing::RbSet;

/// Largest pool the learned jammer accepts; its table has `2^F` rows.
pub const MAX_TABULAR_RBS: usize = 16;

/// What the jammer perceives: the free RBs at the last slot boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdvState {
    pub availability: RbSet,
}

/// Error-free sensing: free RBs are the complement of the observed occupancy.
pub fn sense_spectrum(occupancy: RbSet, rbs: usize) -> AdvState {
    AdvState {
        availability: occupancy.complement(rbs),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct JamAction {
    pub rb_set: RbSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AttackKind {
    None,
    Random,
    Myopic,
    RlSurrogate,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::Random => "random",
            AttackKind::Myopic => "myopic",
            AttackKind::RlSurrogate => "rl",
        }
    }

    fn learns(self) -> bool {
        matches!(self, AttackKind::Myopic | AttackKind::RlSurrogate)
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(AttackKind::None),
            "random" => Ok(AttackKind::Random),
            "myopic" => Ok(AttackKind::Myopic),
            "rl" | "q-learning" | "qlearning" | "rl-surrogate" => Ok(AttackKind::RlSurrogate),
            other => Err(Error::config(format!("unknown attack kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackStrategy {
    pub kind: AttackKind,
    pub budget: usize,
}

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// All `k`-subsets of `0..n` as bitmasks, in increasing numeric order.
fn subsets(n: usize, k: usize) -> Vec<u64> {
    if k > n {
        return Vec::new();
    }
    if k == 0 {
        return vec![0];
    }
    let mut out = Vec::with_capacity(binomial(n, k));
    let mut v: u64 = (1u64 << k) - 1;
    let limit = 1u64 << n;
    while v < limit {
        out.push(v);
        // Gosper's hack: next larger integer with the same popcount.
        let c = v & v.wrapping_neg();
        let r = v + c;
        v = (((r ^ v) >> 2) / c) | r;
    }
    out
}

/// Enumerates jam actions for every availability state.
#[derive(Debug, Clone)]
pub struct JamActionSpace {
    rbs: usize,
    budget: usize,
    /// `by_free[k]`: position masks (over the `k` free RBs) of each jam action beyond no-jam.
    by_free: Vec<Vec<u64>>,
}

impl JamActionSpace {
    pub fn new(rbs: usize, budget: usize) -> Result<Self> {
        if rbs == 0 || rbs > MAX_TABULAR_RBS {
            return Err(Error::config(format!(
                "tabular jammer supports 1..={MAX_TABULAR_RBS} RBs, got {rbs}"
            )));
        }
        let budget = budget.min(rbs);
        let by_free = (0..=rbs)
            .map(|k| {
                if k > budget {
                    subsets(k, budget)
                } else {
                    vec![RbSet::full(k).0]
                }
            })
            .collect();
        Ok(Self {
            rbs,
            budget,
            by_free,
        })
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn n_states(&self) -> usize {
        1usize << self.rbs
    }

    /// Legal action count with `free_count` RBs available.
    pub fn n_actions(&self, free_count: usize) -> usize {
        self.by_free[free_count].len() + 1
    }

    pub fn row_lengths(&self) -> Vec<usize> {
        (0..self.n_states())
            .map(|mask| self.n_actions((mask as u64).count_ones() as usize))
            .collect()
    }

    /// RBs jammed by action `a` in a state with the given free RBs.
    pub fn jam_set(&self, availability: RbSet, a: usize) -> Result<RbSet> {
        let k = availability.len();
        if a == 0 {
            return Ok(RbSet::EMPTY);
        }
        let positions = *self.by_free[k]
            .get(a - 1)
            .ok_or_else(|| Error::Index(format!("jam action {a} with {k} free RBs")))?;
        Ok(availability
            .iter()
            .enumerate()
            .filter(|(pos, _)| positions & (1u64 << pos) != 0)
            .map(|(_, rb)| rb)
            .collect())
    }
}

#[derive(Debug, Clone, Copy)]
struct PendingJam {
    state: usize,
    action: usize,
    reward: f64,
}

pub struct Adversary {
    strategy: AttackStrategy,
    rbs: usize,
    space: Option<JamActionSpace>,
    table: Option<QTable>,
    learn: LearnParams,
    rng: ChaCha8Rng,
    slots: u64,
    pending: Option<PendingJam>,
}

impl Adversary {
    /// `learn` applies to the learned jammer; the myopic jammer always uses
    /// `gamma = 0` and greedy selection.
    pub fn new(
        strategy: AttackStrategy,
        rbs: usize,
        learn: LearnParams,
        mut rng: ChaCha8Rng,
    ) -> Result<Self> {
        let mut strategy = strategy;
        if strategy.kind != AttackKind::None && strategy.budget > rbs {
            log::warn!(
                "jamming budget {} exceeds {} RBs; clamping",
                strategy.budget,
                rbs
            );
            strategy.budget = rbs;
        }
        let learn = match strategy.kind {
            AttackKind::Myopic => LearnParams {
                gamma: 0.0,
                explore: ExplorationSchedule::Greedy,
                ..learn
            },
            _ => learn,
        };
        let (space, table) = if strategy.kind.learns() {
            learn.validate()?;
            let space = JamActionSpace::new(rbs, strategy.budget)?;
            let prior =
                |s: usize, a: usize| space.jam_set(RbSet(s as u64), a).map_or(0, RbSet::len);
            let table = init_table(&space.row_lengths(), &InitRule::JamPrior(&prior), &mut rng)?;
            (Some(space), Some(table))
        } else {
            (None, None)
        };
        Ok(Self {
            strategy,
            rbs,
            space,
            table,
            learn,
            rng,
            slots: 0,
            pending: None,
        })
    }

    pub fn strategy(&self) -> AttackStrategy {
        self.strategy
    }

    pub fn table(&self) -> Option<&QTable> {
        self.table.as_ref()
    }

    pub fn action_space(&self) -> Option<&JamActionSpace> {
        self.space.as_ref()
    }

    /// Senses the boundary occupancy, completes the previous slot's learning
    /// step with it, and commits this slot's jam set.
    pub fn act(&mut self, occupancy: RbSet) -> Result<JamAction> {
        let state = sense_spectrum(occupancy, self.rbs);
        self.complete_pending(state)?;
        self.choose_jam_set(state)
    }

    /// Completes the outstanding learning step without jamming (attack over).
    pub fn stand_down(&mut self, occupancy: RbSet) -> Result<()> {
        self.complete_pending(sense_spectrum(occupancy, self.rbs))
    }

    pub fn choose_jam_set(&mut self, state: AdvState) -> Result<JamAction> {
        let budget = self.strategy.budget;
        let rb_set = match self.strategy.kind {
            AttackKind::None => RbSet::EMPTY,
            AttackKind::Random => sample(&mut self.rng, self.rbs, budget)
                .into_iter()
                .collect(),
            AttackKind::Myopic | AttackKind::RlSurrogate => {
                let (Some(space), Some(table)) = (&self.space, &self.table) else {
                    return Err(Error::Contract("learned jammer without a table".into()));
                };
                let s = state.availability.0 as usize;
                let explore = match self.strategy.kind {
                    AttackKind::Myopic => Explore::Greedy,
                    _ => self.learn.explore.at(self.slots),
                };
                let a = select_action(table, s, explore, &mut self.rng, None)?;
                self.pending = Some(PendingJam {
                    state: s,
                    action: a,
                    reward: 0.0,
                });
                space.jam_set(state.availability, a)?
            }
        };
        self.slots += 1;
        Ok(JamAction { rb_set })
    }

    /// Reward from NACKs seen on the jammed RBs; only those channels are monitored.
    pub fn observe_nacks(&mut self, jam: &JamAction, nacks: &[(usize, u32)]) -> f64 {
        let reward = detected_nacks(jam.rb_set, nacks);
        if let Some(p) = self.pending.as_mut() {
            p.reward = reward;
        }
        reward
    }

    fn complete_pending(&mut self, next: AdvState) -> Result<()> {
        if let (Some(p), Some(table)) = (self.pending.take(), self.table.as_mut()) {
            q_update(
                table,
                p.state,
                p.action,
                p.reward,
                next.availability.0 as usize,
                &self.learn,
            )?;
        }
        Ok(())
    }
}

/// Total NACK count on RBs of `jam_set`.
pub fn detected_nacks(jam_set: RbSet, nacks: &[(usize, u32)]) -> f64 {
    nacks
        .iter()
        .filter(|(rb, _)| jam_set.contains(*rb))
        .map(|&(_, c)| f64::from(c))
        .sum()
}
