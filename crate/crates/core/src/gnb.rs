//! The base-station (gNodeB) allocator.
//!
//! Each waiting request is one decision step. The state is the RB availability
//! bitmask plus the request's RB demand and weight. Actions are `Defer` or
//! `Allocate { start }`, which takes the request's RBs from consecutive entries
//! of the ascending free list beginning at its `start`-th element. Only legal
//! actions get a table entry: row `s` holds `Defer` followed by every feasible
//! start.
//!
//! Steps within a slot are chained: the next state of a step is the state of the
//! next request processed, and the last step of a slot moves to an idle state
//! (same availability, no pending request) whose single entry stays at zero.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::qlearn::{
    init_table, q_update, select_action, ActionFilter, InitRule, LearnParams, QTable,
};
use crate::slicing::{RbPool, RbSet};

const WEIGHTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GnbState {
    pub availability: RbSet,
    pub req_rbs: usize,
    pub req_weight: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodedState {
    Request(GnbState),
    /// No request under consideration.
    Idle(RbSet),
}

/// Bijection between [`DecodedState`] and table row indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateCodec {
    rbs: usize,
    max_rbs: usize,
}

impl StateCodec {
    pub fn new(rbs: usize, max_rbs: usize) -> Result<Self> {
        if rbs == 0 || rbs > 20 {
            return Err(Error::config(format!(
                "tabular allocator supports 1..=20 RBs, got {rbs}"
            )));
        }
        if max_rbs == 0 || max_rbs > rbs {
            return Err(Error::config(format!(
                "requests may need up to {max_rbs} RBs but the pool has {rbs}"
            )));
        }
        Ok(Self { rbs, max_rbs })
    }

    pub fn rbs(&self) -> usize {
        self.rbs
    }

    pub fn max_rbs(&self) -> usize {
        self.max_rbs
    }

    /// Number of request states, `2^F * max_rbs * 5`.
    pub fn request_states(&self) -> usize {
        (1usize << self.rbs) * self.max_rbs * WEIGHTS
    }

    pub fn n_states(&self) -> usize {
        self.request_states() + (1usize << self.rbs)
    }

    pub fn encode(&self, state: &GnbState) -> Result<usize> {
        if !(1..=self.max_rbs).contains(&state.req_rbs) || !(1..=5).contains(&state.req_weight) {
            return Err(Error::Index(format!("unencodable state {state:?}")));
        }
        if !state.availability.is_subset(RbSet::full(self.rbs)) {
            return Err(Error::Index(format!(
                "availability {:?} exceeds pool",
                state.availability
            )));
        }
        Ok(state.availability.0 as usize * self.max_rbs * WEIGHTS
            + (state.req_rbs - 1) * WEIGHTS
            + usize::from(state.req_weight - 1))
    }

    pub fn idle(&self, availability: RbSet) -> usize {
        self.request_states() + availability.0 as usize
    }

    pub fn decode(&self, index: usize) -> Result<DecodedState> {
        if index >= self.n_states() {
            return Err(Error::Index(format!(
                "state {index} of {}",
                self.n_states()
            )));
        }
        if index >= self.request_states() {
            return Ok(DecodedState::Idle(RbSet(
                (index - self.request_states()) as u64,
            )));
        }
        let per_mask = self.max_rbs * WEIGHTS;
        let rem = index % per_mask;
        Ok(DecodedState::Request(GnbState {
            availability: RbSet((index / per_mask) as u64),
            req_rbs: rem / WEIGHTS + 1,
            req_weight: (rem % WEIGHTS + 1) as u8,
        }))
    }

    /// Actions available in row `index`.
    pub fn row_length(&self, index: usize) -> usize {
        match self.decode(index) {
            Ok(DecodedState::Request(s)) => legal_actions(s.availability.len(), s.req_rbs).len(),
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GnbAction {
    Defer,
    Allocate { start: usize },
}

impl GnbAction {
    pub fn index(self) -> usize {
        match self {
            GnbAction::Defer => 0,
            GnbAction::Allocate { start } => start + 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        match i {
            0 => GnbAction::Defer,
            k => GnbAction::Allocate { start: k - 1 },
        }
    }
}

/// `Defer` plus every start position that leaves room for `req_rbs` free RBs.
pub fn legal_actions(free_count: usize, req_rbs: usize) -> Vec<GnbAction> {
    let mut out = vec![GnbAction::Defer];
    if req_rbs >= 1 && free_count >= req_rbs {
        out.extend((0..=free_count - req_rbs).map(|start| GnbAction::Allocate { start }));
    }
    out
}

/// RBs taken by `Allocate { start }`, or `None` when the placement does not fit.
pub fn placement(available: RbSet, start: usize, req_rbs: usize) -> Option<RbSet> {
    let picked: RbSet = available.iter().skip(start).take(req_rbs).collect();
    (req_rbs > 0 && picked.len() == req_rbs).then_some(picked)
}

pub fn encode_state(pool: &RbPool, req_rbs: usize, req_weight: u8) -> GnbState {
    GnbState {
        availability: pool.available(),
        req_rbs,
        req_weight,
    }
}

/// Reward for a grant: its weight, or zero when any of its RBs was jammed.
pub fn grant_reward(weight: u8, jammed: bool) -> f64 {
    if jammed {
        0.0
    } else {
        f64::from(weight)
    }
}

/// Total reward booked in one slot.
pub fn slot_reward(outcomes: &[f64]) -> f64 {
    outcomes.iter().sum()
}

/// A completed learning step as fed to the update rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    pub applied: bool,
}

#[derive(Debug, Clone, Copy)]
struct PendingStep {
    state: usize,
    action: usize,
    reward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    pub step: usize,
    pub state: usize,
    pub action: GnbAction,
}

pub struct GnbAgent {
    codec: StateCodec,
    table: QTable,
    learn: LearnParams,
    rng: ChaCha8Rng,
    filter: Option<Box<dyn ActionFilter>>,
    slots: u64,
    steps: Vec<PendingStep>,
}

impl GnbAgent {
    /// Builds an agent with a table drawn uniformly from `init_range`.
    pub fn new(
        codec: StateCodec,
        learn: LearnParams,
        init_range: (f64, f64),
        mut rng: ChaCha8Rng,
    ) -> Result<Self> {
        learn.validate()?;
        let lengths: Vec<usize> = (0..codec.n_states()).map(|s| codec.row_length(s)).collect();
        let mut table = init_table(
            &lengths,
            &InitRule::Uniform {
                lo: init_range.0,
                hi: init_range.1,
            },
            &mut rng,
        )?;
        for mask in 0..(1u64 << codec.rbs()) {
            table.row_mut(codec.idle(RbSet(mask)))?.fill(0.0);
        }
        Ok(Self {
            codec,
            table,
            learn,
            rng,
            filter: None,
            slots: 0,
            steps: Vec::new(),
        })
    }

    pub fn with_seed(
        codec: StateCodec,
        learn: LearnParams,
        init_range: (f64, f64),
        seed: u64,
    ) -> Result<Self> {
        Self::new(codec, learn, init_range, ChaCha8Rng::seed_from_u64(seed))
    }

    /// Installs a replacement for the greedy choice.
    pub fn set_filter(&mut self, filter: Option<Box<dyn ActionFilter>>) {
        self.filter = filter;
    }

    pub fn codec(&self) -> &StateCodec {
        &self.codec
    }

    pub fn table(&self) -> &QTable {
        &self.table
    }

    pub fn learn(&self) -> &LearnParams {
        &self.learn
    }

    /// Chooses an action for one request and opens a pending step for it.
    pub fn decide(&mut self, pool: &RbPool, req_rbs: usize, req_weight: u8) -> Result<Decision> {
        let state = self
            .codec
            .encode(&encode_state(pool, req_rbs, req_weight))?;
        let explore = self.learn.explore.at(self.slots);
        let a = select_action(
            &self.table,
            state,
            explore,
            &mut self.rng,
            self.filter.as_deref(),
        )?;
        self.steps.push(PendingStep {
            state,
            action: a,
            reward: 0.0,
        });
        Ok(Decision {
            step: self.steps.len() - 1,
            state,
            action: GnbAction::from_index(a),
        })
    }

    /// Records the outcome of a grant made at `step`; returns the booked reward.
    pub fn book_outcome(&mut self, step: usize, weight: u8, jammed: bool) -> Result<f64> {
        let reward = grant_reward(weight, jammed);
        let pending = self
            .steps
            .get_mut(step)
            .ok_or_else(|| Error::Index(format!("no pending step {step}")))?;
        pending.reward = reward;
        Ok(reward)
    }

    /// Closes the slot: chains the pending steps, applies the updates unless
    /// `update` is false, and advances the exploration schedule.
    pub fn finish_slot(
        &mut self,
        final_availability: RbSet,
        update: bool,
    ) -> Result<Vec<Transition>> {
        let idle = self.codec.idle(final_availability);
        let steps = std::mem::take(&mut self.steps);
        let mut out = Vec::with_capacity(steps.len());
        for (i, step) in steps.iter().enumerate() {
            let next_state = steps.get(i + 1).map_or(idle, |n| n.state);
            if update {
                q_update(
                    &mut self.table,
                    step.state,
                    step.action,
                    step.reward,
                    next_state,
                    &self.learn,
                )?;
            }
            out.push(Transition {
                state: step.state,
                action: step.action,
                reward: step.reward,
                next_state,
                applied: update,
            });
        }
        self.slots += 1;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qlearn::{argmax, ExplorationSchedule};
    use crate::slicing::Request;
    use rand::Rng;

    fn greedy() -> LearnParams {
        LearnParams {
            explore: ExplorationSchedule::Greedy,
            ..LearnParams::default()
        }
    }

    fn request(lifetime: u32) -> Request {
        Request {
            ue_id: 1,
            req_id: 0,
            weight: 3,
            min_rate: 1.0,
            lifetime,
            deadline_slot: 10,
            arrival_slot: 0,
            snr: 2.0,
        }
    }

    #[test]
    fn encode_all_free_and_all_busy() {
        let codec = StateCodec::new(5, 2).unwrap();
        let pool = RbPool::new(5).unwrap();
        let s = encode_state(&pool, 1, 3);
        assert_eq!(s.availability, RbSet(0b11111));
        assert_eq!((s.req_rbs, s.req_weight), (1, 3));
        let mut busy = RbPool::new(5).unwrap();
        busy.allocate(request(3), RbSet::full(5), 0).unwrap();
        assert_eq!(encode_state(&busy, 2, 5).availability, RbSet::EMPTY);
        assert!(codec.encode(&s).unwrap() < codec.request_states());
    }

    #[test]
    fn codec_round_trip_random() {
        let codec = StateCodec::new(11, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let s = GnbState {
                availability: RbSet(rng.gen_range(0..2048)),
                req_rbs: rng.gen_range(1..=2),
                req_weight: rng.gen_range(1..=5),
            };
            let i = codec.encode(&s).unwrap();
            assert!(i < (1 << 11) * 2 * 5);
            assert_eq!(codec.decode(i).unwrap(), DecodedState::Request(s));
        }
        for mask in [0u64, 7, 2047] {
            let i = codec.idle(RbSet(mask));
            assert_eq!(codec.decode(i).unwrap(), DecodedState::Idle(RbSet(mask)));
        }
        // Bijective over the whole index range.
        let small = StateCodec::new(4, 2).unwrap();
        for i in 0..small.request_states() {
            let DecodedState::Request(s) = small.decode(i).unwrap() else {
                panic!()
            };
            assert_eq!(small.encode(&s).unwrap(), i);
        }
    }

    #[test]
    fn legality_matches_brute_force() {
        // Oracle: try every start position and keep those that fit.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..1000 {
            let avail = RbSet(rng.gen_range(0..2048));
            let n = rng.gen_range(1..=3);
            let free: Vec<usize> = avail.iter().collect();
            let mut oracle = vec![GnbAction::Defer];
            for start in 0..11 {
                if start + n <= free.len() {
                    let set: RbSet = free[start..start + n].iter().copied().collect();
                    assert_eq!(placement(avail, start, n), Some(set));
                    oracle.push(GnbAction::Allocate { start });
                } else {
                    assert_eq!(placement(avail, start, n), None);
                }
            }
            assert_eq!(legal_actions(avail.len(), n), oracle);
        }
    }

    #[test]
    fn no_free_rbs_forces_defer() {
        let codec = StateCodec::new(3, 1).unwrap();
        let mut agent = GnbAgent::with_seed(codec, LearnParams::default(), (0.0, 1.0), 1).unwrap();
        let mut pool = RbPool::new(3).unwrap();
        pool.allocate(request(2), RbSet::full(3), 0).unwrap();
        for _ in 0..50 {
            assert_eq!(agent.decide(&pool, 1, 4).unwrap().action, GnbAction::Defer);
        }
    }

    #[test]
    fn single_placement_is_taken_when_favoured() {
        let codec = StateCodec::new(3, 1).unwrap();
        let mut agent = GnbAgent::with_seed(codec, greedy(), (0.0, 0.0), 1).unwrap();
        let mut pool = RbPool::new(3).unwrap();
        pool.allocate(request(2), RbSet(0b011), 0).unwrap();
        let s = codec.encode(&encode_state(&pool, 1, 2)).unwrap();
        agent.table.row_mut(s).unwrap()[1] = 1.0;
        let d = agent.decide(&pool, 1, 2).unwrap();
        assert_eq!(d.action, GnbAction::Allocate { start: 0 });
        assert_eq!(placement(pool.available(), 0, 1), Some(RbSet::single(2)));
    }

    #[test]
    fn rewards_and_slot_total() {
        assert_eq!(grant_reward(5, false), 5.0);
        assert_eq!(grant_reward(5, true), 0.0);
        assert_eq!(slot_reward(&[]), 0.0);
        assert_eq!(slot_reward(&[2.0, 4.0]), 6.0);
    }

    #[test]
    fn finish_slot_chains_and_updates() {
        let codec = StateCodec::new(3, 1).unwrap();
        let mut agent = GnbAgent::with_seed(codec, greedy(), (0.0, 0.0), 1).unwrap();
        let pool = RbPool::new(3).unwrap();
        let d1 = agent.decide(&pool, 1, 5).unwrap();
        let d2 = agent.decide(&pool, 1, 2).unwrap();
        agent.book_outcome(d1.step, 5, false).unwrap();
        agent.book_outcome(d2.step, 2, true).unwrap();
        let tr = agent.finish_slot(RbSet(0b110), true).unwrap();
        assert_eq!(tr.len(), 2);
        assert_eq!(tr[0].next_state, d2.state);
        assert_eq!(tr[1].next_state, codec.idle(RbSet(0b110)));
        assert_eq!((tr[0].reward, tr[1].reward), (5.0, 0.0));
        // Table was zero: first update is alpha * 5 (second step's update ran after, on another state).
        assert!((agent.table().get(d1.state, d1.action.index()).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn suppressed_update_leaves_table() {
        let codec = StateCodec::new(3, 1).unwrap();
        let mut agent = GnbAgent::with_seed(codec, LearnParams::default(), (0.0, 1.0), 2).unwrap();
        let before = agent.table().clone();
        let pool = RbPool::new(3).unwrap();
        let d = agent.decide(&pool, 1, 5).unwrap();
        agent.book_outcome(d.step, 5, false).unwrap();
        let tr = agent.finish_slot(pool.available(), false).unwrap();
        assert!(!tr[0].applied);
        assert_eq!(agent.table(), &before);
    }

    #[test]
    fn idle_rows_start_at_zero() {
        let codec = StateCodec::new(4, 2).unwrap();
        let agent = GnbAgent::with_seed(codec, LearnParams::default(), (0.0, 1.0), 3).unwrap();
        for mask in 0..16 {
            assert_eq!(agent.table().row(codec.idle(RbSet(mask))).unwrap(), &[0.0]);
        }
        let s = codec
            .encode(&GnbState {
                availability: RbSet(0b1111),
                req_rbs: 2,
                req_weight: 1,
            })
            .unwrap();
        assert_eq!(agent.table().n_actions(s), 4);
        assert!(argmax(agent.table().row(s).unwrap()).is_some());
    }
}
