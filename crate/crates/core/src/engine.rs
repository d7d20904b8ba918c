//! Slot-by-slot simulation of the allocator, the jammer and the defenses.
//!
//! Order of events within slot `t`:
//! 1. services that ended before `t` release their RBs;
//! 2. arrivals join the waiting list;
//! 3. the jammer senses the boundary occupancy and commits its jam set;
//! 4. the allocator handles waiting requests one at a time (arrival order, then UE id);
//! 5. grants touching a jammed RB fail: zero reward, RBs held until slot end, request re-queued;
//! 6. UEs send NACKs (MisNACK-aware) and the jammer books what it detects;
//! 7. the allocator learns from the slot unless Q-Protect has suspended updates;
//! 8. requests whose deadline has passed are dropped.
//!
//! Arrivals, allocator and jammer draw from separate ChaCha streams of the run
//! seed, so runs that differ only in attack or defense see identical workloads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::{Adversary, AttackKind, AttackStrategy, MAX_TABULAR_RBS};
use crate::defense::{combined_apply, misnack_route, DefenseConfig, QProtect};
use crate::error::{Error, Result};
use crate::gnb::{placement, GnbAction, GnbAgent, StateCodec, Transition};
use crate::metrics::{running_average, MetricsReport};
use crate::qlearn::LearnParams;
use crate::slicing::{generate_arrivals, RbPool, RbSet, Request, ScenarioParams};

pub const ARRIVAL_STREAM: u64 = 0;
pub const GNB_STREAM: u64 = 1;
pub const ADVERSARY_STREAM: u64 = 2;

/// Everything needed to simulate one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub scenario: ScenarioParams,
    pub gnb_learn: LearnParams,
    /// Range of the allocator's initial table values.
    pub gnb_init: (f64, f64),
    pub adv_learn: LearnParams,
    pub attack: AttackStrategy,
    /// Attack-free warm-up; the attack starts at this slot.
    pub warmup: u64,
    /// Number of attacked slots.
    pub attack_slots: u64,
    pub horizon: u64,
    /// Running-average window for metrics.
    pub window: usize,
    pub defense: DefenseConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioParams::default(),
            gnb_learn: LearnParams::default(),
            gnb_init: (0.0, 1.0),
            adv_learn: LearnParams::default(),
            attack: AttackStrategy {
                kind: AttackKind::RlSurrogate,
                budget: 5,
            },
            warmup: 1000,
            attack_slots: 10_000,
            horizon: 16_000,
            window: 1000,
            defense: DefenseConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn attack_start(&self) -> u64 {
        self.warmup
    }

    /// First slot without jamming.
    pub fn attack_stop(&self) -> u64 {
        self.warmup + self.attack_slots
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.gnb_learn.validate()?;
        self.adv_learn.validate()?;
        self.defense.validate()?;
        if self.scenario.rbs > MAX_TABULAR_RBS {
            return Err(Error::config(format!(
                "{} RBs is too many for tabular learning (limit {MAX_TABULAR_RBS})",
                self.scenario.rbs
            )));
        }
        let max_rbs = self.scenario.max_rbs()?;
        if max_rbs > self.scenario.rbs {
            return Err(Error::config(format!(
                "demand range needs up to {max_rbs} RBs but only {} exist",
                self.scenario.rbs
            )));
        }
        let (lo, hi) = self.gnb_init;
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(Error::config(format!(
                "invalid allocator init range [{lo}, {hi}]"
            )));
        }
        if self.warmup == 0 {
            return Err(Error::config("warmup must be at least 1 slot"));
        }
        if self.window == 0 {
            return Err(Error::config("window must be at least 1 slot"));
        }
        if self.warmup + self.attack_slots > self.horizon {
            return Err(Error::config(format!(
                "warmup {} + attack {} exceeds horizon {}",
                self.warmup, self.attack_slots, self.horizon
            )));
        }
        Ok(())
    }

    /// Same run with the jammer switched off.
    pub fn without_attack(&self) -> Self {
        Self {
            attack: AttackStrategy {
                kind: AttackKind::None,
                budget: self.attack.budget,
            },
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrantRecord {
    pub ue_id: u32,
    pub req_id: u64,
    pub rb_set: RbSet,
    pub weight: u8,
    /// Last slot the RBs are held (the grant slot itself when jammed).
    pub end_slot: u64,
    pub jammed: bool,
}

/// Audit log of one slot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlotRecord {
    pub t: u64,
    pub arrivals: usize,
    /// Free RBs after releases, before any grant this slot.
    pub free_at_start: RbSet,
    /// Availability as sensed by the jammer, when the attack is active.
    pub sensed: Option<RbSet>,
    pub grants: Vec<GrantRecord>,
    pub jam_set: RbSet,
    pub nacks: Vec<(usize, u32)>,
    pub gnb_reward: f64,
    pub adv_reward: f64,
    pub defense_flags: u8,
    pub qprotect_suspended: bool,
    pub waiting: usize,
    pub dropped: usize,
    /// Allocator learning steps; populated only in audit mode.
    #[serde(skip)]
    pub transitions: Vec<Transition>,
}

impl SlotRecord {
    /// Reward equals the weight of grants that escaped jamming.
    pub fn reward_consistent(&self) -> bool {
        let expected: f64 = self
            .grants
            .iter()
            .filter(|g| g.rb_set.is_disjoint(self.jam_set))
            .map(|g| f64::from(g.weight))
            .sum();
        expected == self.gnb_reward
            && self
                .grants
                .iter()
                .all(|g| g.jammed == !g.rb_set.is_disjoint(self.jam_set))
    }
}

/// Independent ChaCha stream `stream` of a run seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mutable state of one run.
pub struct World {
    cfg: RunConfig,
    pool: RbPool,
    waiting: Vec<Request>,
    gnb: GnbAgent,
    adversary: Adversary,
    q_protect: Option<QProtect>,
    mis_nack: bool,
    defense_flags: u8,
    arrivals_rng: ChaCha8Rng,
    rewards: Vec<f64>,
    t: u64,
    audit: bool,
}

impl World {
    pub fn new(cfg: &RunConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let codec = StateCodec::new(cfg.scenario.rbs, cfg.scenario.max_rbs()?)?;
        let mut gnb = GnbAgent::new(
            codec,
            cfg.gnb_learn,
            cfg.gnb_init,
            stream_rng(seed, GNB_STREAM),
        )?;
        let hooks = combined_apply(&cfg.defense)?;
        gnb.set_filter(hooks.selector);
        let adversary = Adversary::new(
            cfg.attack,
            cfg.scenario.rbs,
            cfg.adv_learn,
            stream_rng(seed, ADVERSARY_STREAM),
        )?;
        Ok(Self {
            pool: RbPool::new(cfg.scenario.rbs)?,
            waiting: Vec::new(),
            gnb,
            adversary,
            q_protect: hooks.q_protect,
            mis_nack: hooks.mis_nack,
            defense_flags: cfg.defense.flags(),
            arrivals_rng: stream_rng(seed, ARRIVAL_STREAM),
            rewards: Vec::with_capacity(cfg.horizon as usize),
            t: 0,
            audit: false,
            cfg: cfg.clone(),
        })
    }

    /// Keeps every allocator learning step in the slot records.
    pub fn set_audit(&mut self, audit: bool) {
        self.audit = audit;
    }

    pub fn slot(&self) -> u64 {
        self.t
    }

    pub fn pool(&self) -> &RbPool {
        &self.pool
    }

    pub fn gnb(&self) -> &GnbAgent {
        &self.gnb
    }

    pub fn adversary(&self) -> &Adversary {
        &self.adversary
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    fn attack_active(&self, t: u64) -> bool {
        self.cfg.attack.kind != AttackKind::None
            && (self.cfg.attack_start()..self.cfg.attack_stop()).contains(&t)
    }

    pub fn run_slot(&mut self) -> Result<SlotRecord> {
        let t = self.t;

        // (1) releases
        self.pool.step(t)?;
        let free_at_start = self.pool.available();

        // (2) arrivals
        let arrivals = generate_arrivals(&mut self.arrivals_rng, t, &self.cfg.scenario)?;
        let n_arrivals = arrivals.len();
        self.waiting.extend(arrivals);

        // (3) jammer commits before seeing this slot's grants
        let (sensed, jam_set) = if self.attack_active(t) {
            let occupancy = self.pool.occupied();
            let jam = self.adversary.act(occupancy)?;
            (Some(occupancy.complement(self.cfg.scenario.rbs)), jam)
        } else {
            if self.cfg.attack.kind != AttackKind::None && t == self.cfg.attack_stop() {
                self.adversary.stand_down(self.pool.occupied())?;
            }
            (None, Default::default())
        };
        let jam_limit = self.adversary.strategy().budget.min(self.cfg.scenario.rbs);
        if jam_set.rb_set.len() > jam_limit {
            return Err(Error::internal(
                t,
                format!("jam set {:?} exceeds budget", jam_set.rb_set),
            ));
        }

        // (4) sequential allocation
        let mut grants = Vec::new();
        let mut kept = Vec::with_capacity(self.waiting.len());
        for request in std::mem::take(&mut self.waiting) {
            if !request.is_grantable_at(t) {
                return Err(Error::internal(
                    t,
                    format!(
                        "stale request {}/{} in queue",
                        request.ue_id, request.req_id
                    ),
                ));
            }
            let need = self.cfg.scenario.rbs_for(&request)?;
            let decision = self.gnb.decide(&self.pool, need, request.weight)?;
            match decision.action {
                GnbAction::Defer => kept.push(request),
                GnbAction::Allocate { start } => {
                    let rb_set =
                        placement(self.pool.available(), start, need).ok_or_else(|| {
                            Error::internal(t, format!("illegal placement {start} for {need} RBs"))
                        })?;
                    self.pool.allocate(request.clone(), rb_set, t)?;
                    grants.push((decision.step, request, rb_set));
                }
            }
        }

        // (5) outcomes
        let mut grant_records = Vec::with_capacity(grants.len());
        let mut gnb_reward = 0.0;
        let mut nacks: Vec<(usize, u32)> = Vec::new();
        for (step, request, rb_set) in grants {
            let jammed = !rb_set.is_disjoint(jam_set.rb_set);
            gnb_reward += self.gnb.book_outcome(step, request.weight, jammed)?;
            let mut end_slot = t + u64::from(request.lifetime) - 1;
            if jammed {
                self.pool.end_service_at(request.ue_id, request.req_id, t)?;
                end_slot = t;
                nacks.extend(misnack_route(rb_set, jam_set.rb_set, self.mis_nack)?);
            }
            grant_records.push(GrantRecord {
                ue_id: request.ue_id,
                req_id: request.req_id,
                rb_set,
                weight: request.weight,
                end_slot,
                jammed,
            });
            if jammed {
                kept.push(request);
            }
        }

        // (6) NACKs from ongoing services hit by jamming, then the jammer's reward
        for svc in self.pool.services() {
            if svc.grant_slot < t && !svc.rb_set.is_disjoint(jam_set.rb_set) {
                nacks.extend(misnack_route(svc.rb_set, jam_set.rb_set, self.mis_nack)?);
            }
        }
        let nacks = merge_nacks(nacks);
        let adv_reward = if self.attack_active(t) {
            self.adversary.observe_nacks(&jam_set, &nacks)
        } else {
            0.0
        };

        // (7) learning, possibly suspended
        self.rewards.push(gnb_reward);
        let mut suspended = false;
        if let Some(qp) = self.q_protect.as_mut() {
            let window = self.cfg.defense.detection_window;
            let avg = running_average(&self.rewards, window, t as usize);
            if t + 1 == self.cfg.warmup {
                qp.set_baseline(avg)?;
            } else if t >= self.cfg.warmup {
                suspended = qp.observe(avg)?;
            }
        }
        let transitions = self.gnb.finish_slot(self.pool.available(), !suspended)?;

        // (8) expiry
        let before = kept.len();
        kept.retain(|r| r.deadline_slot > t);
        let dropped = before - kept.len();
        kept.sort_by_key(|r| (r.arrival_slot, r.ue_id));
        self.waiting = kept;

        self.pool
            .check_invariants()
            .map_err(|m| Error::internal(t, m))?;
        let record = SlotRecord {
            t,
            arrivals: n_arrivals,
            free_at_start,
            sensed,
            grants: grant_records,
            jam_set: jam_set.rb_set,
            nacks,
            gnb_reward,
            adv_reward,
            defense_flags: self.defense_flags,
            qprotect_suspended: suspended,
            waiting: self.waiting.len(),
            dropped,
            transitions: if self.audit { transitions } else { Vec::new() },
        };
        if !record.reward_consistent() {
            return Err(Error::internal(
                t,
                "booked reward disagrees with unjammed grants",
            ));
        }
        self.t += 1;
        Ok(record)
    }
}

fn merge_nacks(mut nacks: Vec<(usize, u32)>) -> Vec<(usize, u32)> {
    nacks.sort_unstable();
    let mut out: Vec<(usize, u32)> = Vec::with_capacity(nacks.len());
    for (rb, c) in nacks {
        match out.last_mut() {
            Some(last) if last.0 == rb => last.1 += c,
            _ => out.push((rb, c)),
        }
    }
    out
}

/// Per-slot rewards of a run, plus the slot log when requested.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub rewards: Vec<f64>,
    pub records: Vec<SlotRecord>,
}

pub fn simulate(cfg: &RunConfig, seed: u64, keep_records: bool) -> Result<RunOutput> {
    let mut world = World::new(cfg, seed)?;
    let mut records = Vec::with_capacity(if keep_records {
        cfg.horizon as usize
    } else {
        0
    });
    for _ in 0..cfg.horizon {
        let rec = world.run_slot()?;
        if keep_records {
            records.push(rec);
        }
    }
    Ok(RunOutput {
        rewards: world.rewards,
        records,
    })
}

/// Benchmark level: the no-attack running average at the end of the warm-up.
pub fn benchmark_from(baseline_rewards: &[f64], cfg: &RunConfig) -> f64 {
    running_average(baseline_rewards, cfg.window, cfg.warmup as usize - 1)
}

/// Metrics of an attacked run against a benchmark taken from its paired baseline.
pub fn episode_report(cfg: &RunConfig, attacked_rewards: &[f64], benchmark: f64) -> MetricsReport {
    let mut report = MetricsReport::compute(
        attacked_rewards,
        cfg.window,
        cfg.attack_stop() as usize,
        benchmark,
    );
    if cfg.attack.kind == AttackKind::None || cfg.attack.budget == 0 {
        report.recovery_time = 0;
        report.censored = false;
        report.max_reduction = 0.0;
        report.total_reduction = 0.0;
    }
    report
}

/// Runs the paired no-attack baseline and the configured run with the same seed.
pub fn run_episode(cfg: &RunConfig, seed: u64) -> Result<(Vec<SlotRecord>, MetricsReport)> {
    cfg.validate()?;
    let baseline = simulate(&cfg.without_attack(), seed, false)?;
    let benchmark = benchmark_from(&baseline.rewards, cfg);
    let run = simulate(cfg, seed, true)?;
    let report = episode_report(cfg, &run.rewards, benchmark);
    Ok((run.records, report))
}
