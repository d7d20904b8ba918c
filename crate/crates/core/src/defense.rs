//! Defenses: reward-drop detection that freezes learning (Q-Protect), randomized
//! selection among best or near-best actions (RandomOpt / RandomTop), and NACK
//! rerouting on the UE side (MisNACK).

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qlearn::ActionFilter;
use crate::slicing::RbSet;

/// Relative tolerance under which two action values count as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefenseConfig {
    pub q_protect: bool,
    /// Fractional drop of the running average that signals an attack.
    pub drop_threshold: f64,
    /// Running-average window used by the detector, in slots.
    pub detection_window: usize,
    pub random_opt: bool,
    pub random_top: bool,
    /// Fraction of the best value an action needs to count as "top".
    pub r_top: f64,
    pub mis_nack: bool,
}

impl Default for DefenseConfig {
    fn default() -> Self {
        Self {
            q_protect: false,
            drop_threshold: 0.10,
            detection_window: 1000,
            random_opt: false,
            random_top: false,
            r_top: 0.50,
            mis_nack: false,
        }
    }
}

/// Named defense configurations used in experiment grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DefensePreset {
    None,
    QProtect,
    RandomOpt,
    RandomTop,
    MisNack,
    Combined,
}

impl DefensePreset {
    pub const ALL: [DefensePreset; 6] = [
        DefensePreset::None,
        DefensePreset::QProtect,
        DefensePreset::RandomOpt,
        DefensePreset::RandomTop,
        DefensePreset::MisNack,
        DefensePreset::Combined,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DefensePreset::None => "none",
            DefensePreset::QProtect => "qprotect",
            DefensePreset::RandomOpt => "randomopt",
            DefensePreset::RandomTop => "randomtop",
            DefensePreset::MisNack => "misnack",
            DefensePreset::Combined => "combined",
        }
    }

    /// Switches on this preset's hooks in `base`, keeping its tuning values.
    pub fn apply(self, base: DefenseConfig) -> DefenseConfig {
        let off = DefenseConfig {
            q_protect: false,
            random_opt: false,
            random_top: false,
            mis_nack: false,
            ..base
        };
        match self {
            DefensePreset::None => off,
            DefensePreset::QProtect => DefenseConfig {
                q_protect: true,
                ..off
            },
            DefensePreset::RandomOpt => DefenseConfig {
                random_opt: true,
                ..off
            },
            DefensePreset::RandomTop => DefenseConfig {
                random_top: true,
                ..off
            },
            DefensePreset::MisNack => DefenseConfig {
                mis_nack: true,
                ..off
            },
            DefensePreset::Combined => DefenseConfig {
                q_protect: true,
                random_top: true,
                mis_nack: true,
                ..off
            },
        }
    }
}

impl fmt::Display for DefensePreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DefensePreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace(['-', '_'], "");
        DefensePreset::ALL
            .into_iter()
            .find(|p| p.name() == key)
            .ok_or_else(|| Error::config(format!("unknown defense `{}`", s.trim())))
    }
}

impl DefenseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.random_opt && self.random_top {
            return Err(Error::config(
                "randomopt and randomtop are mutually exclusive",
            ));
        }
        if !(self.r_top > 0.0 && self.r_top <= 1.0) {
            return Err(Error::config(format!("r_top {} outside (0,1]", self.r_top)));
        }
        if !(self.drop_threshold > 0.0 && self.drop_threshold < 1.0) {
            return Err(Error::config(format!(
                "qprotect threshold {} outside (0,1)",
                self.drop_threshold
            )));
        }
        if self.detection_window == 0 {
            return Err(Error::config("qprotect window must be at least 1 slot"));
        }
        Ok(())
    }

    /// Bit flags of active hooks: 1 Q-Protect, 2 RandomOpt, 4 RandomTop, 8 MisNACK.
    pub fn flags(&self) -> u8 {
        u8::from(self.q_protect)
            | u8::from(self.random_opt) << 1
            | u8::from(self.random_top) << 2
            | u8::from(self.mis_nack) << 3
    }
}

/// Whether the running average has fallen to `(1 - threshold) * baseline` or below.
pub fn qprotect_check(running_avg: f64, baseline: f64, threshold: f64) -> Result<bool> {
    if baseline.is_nan() || baseline <= 0.0 {
        return Err(Error::config(format!(
            "qprotect baseline must be positive, got {baseline}"
        )));
    }
    // Small slack so that a value printed as the boundary counts as reaching it.
    Ok(running_avg <= (1.0 - threshold) * baseline + 1e-12 * baseline)
}

/// Reward-drop detector state for one run.
#[derive(Debug, Clone)]
pub struct QProtect {
    threshold: f64,
    baseline: Option<f64>,
    detected: bool,
}

impl QProtect {
    pub fn new(threshold: f64) -> Self {
        Self {
            threshold,
            baseline: None,
            detected: false,
        }
    }

    /// Fixes the reference level; until then the detector never fires.
    pub fn set_baseline(&mut self, baseline: f64) -> Result<()> {
        if baseline.is_nan() || baseline <= 0.0 {
            return Err(Error::config(format!(
                "qprotect baseline must be positive, got {baseline}"
            )));
        }
        self.baseline = Some(baseline);
        Ok(())
    }

    pub fn baseline(&self) -> Option<f64> {
        self.baseline
    }

    /// Feeds the current running average; returns whether updates are suspended.
    pub fn observe(&mut self, running_avg: f64) -> Result<bool> {
        self.detected = match self.baseline {
            Some(b) => qprotect_check(running_avg, b, self.threshold)?,
            None => false,
        };
        Ok(self.detected)
    }

    pub fn detected(&self) -> bool {
        self.detected
    }
}

fn max_value(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn tied(v: f64, max: f64) -> bool {
    (max - v).abs() <= TIE_TOLERANCE * max.abs().max(v.abs())
}

/// Uniform choice among the maximal entries of `values` (a row of legal actions).
pub fn randomopt_select<R: Rng + ?Sized>(values: &[f64], rng: &mut R) -> Result<usize> {
    if values.is_empty() {
        return Err(Error::config("no legal action to select"));
    }
    let max = max_value(values);
    let ties: Vec<usize> = (0..values.len())
        .filter(|&i| tied(values[i], max))
        .collect();
    Ok(ties[rng.gen_range(0..ties.len())])
}

/// Uniform choice among actions worth at least `r_top` of the best value; with a
/// non-positive best value, among the maximal entries only.
pub fn randomtop_select<R: Rng + ?Sized>(values: &[f64], r_top: f64, rng: &mut R) -> Result<usize> {
    if values.is_empty() {
        return Err(Error::config("no legal action to select"));
    }
    let max = max_value(values);
    if max <= 0.0 {
        return randomopt_select(values, rng);
    }
    let bar = r_top * max;
    let top: Vec<usize> = (0..values.len()).filter(|&i| values[i] >= bar).collect();
    Ok(top[rng.gen_range(0..top.len())])
}

#[derive(Debug, Clone, Copy)]
pub struct RandomOpt;

impl ActionFilter for RandomOpt {
    fn select(&self, row: &[f64], rng: &mut dyn RngCore) -> usize {
        randomopt_select(row, rng).expect("non-empty row")
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RandomTop {
    pub r_top: f64,
}

impl ActionFilter for RandomTop {
    fn select(&self, row: &[f64], rng: &mut dyn RngCore) -> usize {
        randomtop_select(row, self.r_top, rng).expect("non-empty row")
    }
}

/// NACKs a UE emits for a request that lost RBs to jamming.
///
/// Without MisNACK one NACK goes out on the lowest jammed RB of the request. With
/// MisNACK the NACK moves to the lowest unjammed RB of the request if there is
/// one; otherwise one NACK is sent on every jammed RB.
pub fn misnack_route(
    request_rbs: RbSet,
    jammed: RbSet,
    mis_nack: bool,
) -> Result<Vec<(usize, u32)>> {
    let hit = request_rbs.intersection(jammed);
    let Some(lowest_hit) = hit.first() else {
        return Err(Error::Contract(format!(
            "NACK routing for a request that was not jammed ({request_rbs:?} vs {jammed:?})"
        )));
    };
    if !mis_nack {
        return Ok(vec![(lowest_hit, 1)]);
    }
    match request_rbs.difference(jammed).first() {
        Some(clean) => Ok(vec![(clean, 1)]),
        None => Ok(hit.iter().map(|rb| (rb, 1)).collect()),
    }
}

/// Hooks installed for one run.
pub struct HookSet {
    pub q_protect: Option<QProtect>,
    pub selector: Option<Box<dyn ActionFilter>>,
    pub mis_nack: bool,
}

impl fmt::Debug for HookSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HookSet")
            .field("q_protect", &self.q_protect.is_some())
            .field("selector", &self.selector.is_some())
            .field("mis_nack", &self.mis_nack)
            .finish()
    }
}

/// Turns a configuration into independent hooks; every enabled scheme is active at once.
pub fn combined_apply(config: &DefenseConfig) -> Result<HookSet> {
    config.validate()?;
    let selector: Option<Box<dyn ActionFilter>> = if config.random_top {
        Some(Box::new(RandomTop {
            r_top: config.r_top,
        }))
    } else if config.random_opt {
        Some(Box::new(RandomOpt))
    } else {
        None
    };
    Ok(HookSet {
        q_protect: config
            .q_protect
            .then(|| QProtect::new(config.drop_threshold)),
        selector,
        mis_nack: config.mis_nack,
    })
}
