//! Flat `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored. Every key may appear at most once;
//! unknown keys are rejected with the offending line number. See the README for
//! the full schema.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::adversary::{AttackKind, AttackStrategy};
use crate::defense::DefensePreset;
use crate::engine::RunConfig;
use crate::qlearn::ExplorationSchedule;
use crate::slicing::{BerCurve, IntRange, RealRange};
use crate::{Error, Result};

pub const DEFAULT_SEEDS: u64 = 20;

/// Everything needed to run a grid of cells over a list of seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Template run; `attack` and the defense switches are replaced per cell.
    pub base: RunConfig,
    pub attacks: Vec<AttackKind>,
    pub budgets: Vec<usize>,
    pub defenses: Vec<DefensePreset>,
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
    /// Write the per-slot CSV of every run.
    pub slot_logs: bool,
    /// Write both Q-tables at the end of every run.
    pub dump_tables: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            base: RunConfig::default(),
            attacks: vec![AttackKind::RlSurrogate],
            budgets: vec![5],
            defenses: vec![DefensePreset::None],
            seeds: (0..DEFAULT_SEEDS).collect(),
            output_dir: None,
            slot_logs: true,
            dump_tables: false,
        }
    }
}

/// One (attack, budget, defense) combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub attack: AttackKind,
    pub budget: usize,
    pub defense: DefensePreset,
}

impl Cell {
    pub fn name(&self) -> String {
        format!(
            "{}_b{}_{}",
            self.attack.name(),
            self.budget,
            self.defense.name()
        )
    }
}

impl ExperimentConfig {
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &attack in &self.attacks {
            for &budget in &self.budgets {
                for &defense in &self.defenses {
                    out.push(Cell {
                        attack,
                        budget,
                        defense,
                    });
                }
            }
        }
        out
    }

    pub fn run_config(&self, cell: &Cell) -> RunConfig {
        RunConfig {
            attack: AttackStrategy {
                kind: cell.attack,
                budget: cell.budget,
            },
            defense: cell.defense.apply(self.base.defense),
            ..self.base.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("seed list is empty"));
        }
        for (name, empty) in [
            ("attack", self.attacks.is_empty()),
            ("budget", self.budgets.is_empty()),
            ("defense", self.defenses.is_empty()),
        ] {
            if empty {
                return Err(Error::config(format!("`{name}` list is empty")));
            }
        }
        for cell in self.cells() {
            self.run_config(&cell).validate()?;
        }
        Ok(())
    }

    /// Resolved configuration in a fixed key order; the basis of the config hash.
    pub fn canonical(&self) -> String {
        let b = &self.base;
        let s = &b.scenario;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("ue_count", s.ue_count.to_string());
        kv("arrival_prob", s.arrival_prob.to_string());
        kv("weight", int_range(s.weight));
        kv("lifetime", int_range(s.lifetime));
        kv("deadline", int_range(s.deadline_offset));
        kv("snr", real_range(s.snr));
        kv("min_rate", real_range(s.min_rate));
        kv("rbs", s.rbs.to_string());
        kv("rate_constant", s.rate.c.to_string());
        kv("carriers", s.rate.carriers.to_string());
        kv(
            "ber_table",
            match &s.rate.ber_curve {
                BerCurve::QpskGaussianTail => "qpsk".to_string(),
                BerCurve::Table(points) => points
                    .iter()
                    .map(|(x, y)| format!("{x}:{y}"))
                    .collect::<Vec<_>>()
                    .join(", "),
            },
        );
        for (prefix, learn) in [("gnb", &b.gnb_learn), ("adv", &b.adv_learn)] {
            kv(&format!("{prefix}_alpha"), learn.alpha.to_string());
            kv(&format!("{prefix}_gamma"), learn.gamma.to_string());
            let (e, d, f) = match learn.explore {
                ExplorationSchedule::Greedy => (0.0, 1.0, 0.0),
                ExplorationSchedule::EpsilonGreedy {
                    epsilon,
                    decay,
                    floor,
                } => (epsilon, decay, floor),
            };
            kv(&format!("{prefix}_epsilon"), e.to_string());
            kv(&format!("{prefix}_epsilon_decay"), d.to_string());
            kv(&format!("{prefix}_epsilon_floor"), f.to_string());
        }
        kv("gnb_init", format!("{}..{}", b.gnb_init.0, b.gnb_init.1));
        kv("attack", join(self.attacks.iter().map(|a| a.name())));
        kv("budget", join(self.budgets.iter()));
        kv("defense", join(self.defenses.iter().map(|d| d.name())));
        kv("warmup", b.warmup.to_string());
        kv("attack_slots", b.attack_slots.to_string());
        kv("horizon", b.horizon.to_string());
        kv("window", b.window.to_string());
        kv("qprotect_threshold", b.defense.drop_threshold.to_string());
        kv("qprotect_window", b.defense.detection_window.to_string());
        kv("r_top", b.defense.r_top.to_string());
        kv("seed_list", join(self.seeds.iter()));
        kv("slot_logs", self.slot_logs.to_string());
        kv("dump_tables", self.dump_tables.to_string());
        out
    }

    /// Hex SHA-256 of [`canonical`](Self::canonical).
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}

fn int_range(r: IntRange) -> String {
    format!("{}..{}", r.lo, r.hi)
}

fn real_range(r: RealRange) -> String {
    format!("{}..{}", r.lo, r.hi)
}

fn join<T: ToString>(items: impl Iterator<Item = T>) -> String {
    items.map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&text)
}

struct Entry<'a> {
    line: usize,
    value: &'a str,
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let mut entries: BTreeMap<&str, Entry> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(Error::config_at(
                line,
                format!("expected `key = value`, got `{content}`"),
            ));
        };
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(Error::config_at(line, format!("unknown key `{key}`")));
        }
        if let Some(prev) = entries.get(key) {
            return Err(Error::config_at(
                line,
                format!("duplicate key `{key}` (first set on line {})", prev.line),
            ));
        }
        entries.insert(
            key,
            Entry {
                line,
                value: value.trim(),
            },
        );
    }

    let mut cfg = ExperimentConfig::default();
    let get = |k: &str| entries.get(k);

    {
        let s = &mut cfg.base.scenario;
        if let Some(e) = get("ue_count") {
            s.ue_count = scalar(e)?;
        }
        if let Some(e) = get("arrival_prob") {
            s.arrival_prob = checked(
                e,
                scalar(e)?,
                |p| (0.0..=1.0).contains(&p),
                "must lie in [0,1]",
            )?;
        }
        if let Some(e) = get("weight") {
            s.weight = parse_int_range(e)?;
        }
        if let Some(e) = get("lifetime") {
            s.lifetime = parse_int_range(e)?;
        }
        if let Some(e) = get("deadline") {
            s.deadline_offset = parse_int_range(e)?;
        }
        if let Some(e) = get("snr") {
            s.snr = parse_real_range(e)?;
        }
        if let Some(e) = get("min_rate") {
            s.min_rate = parse_real_range(e)?;
        }
        if let Some(e) = get("rbs") {
            s.rbs = checked(e, scalar(e)?, |n| n >= 1, "must be at least 1")?;
        }
        if let Some(e) = get("rate_constant") {
            s.rate.c = checked(
                e,
                scalar(e)?,
                |c: f64| c > 0.0 && c.is_finite(),
                "must be positive",
            )?;
        }
        if let Some(e) = get("carriers") {
            s.rate.carriers = checked(e, scalar(e)?, |k| k >= 1, "must be at least 1")?;
        }
        if let Some(e) = get("ber_table") {
            s.rate.ber_curve = parse_ber(e)?;
        }
    }

    // Shared learning keys first, then per-agent overrides.
    for (prefix, learn) in [
        ("gnb", &mut cfg.base.gnb_learn),
        ("adv", &mut cfg.base.adv_learn),
    ] {
        if let Some(e) = get("alpha") {
            learn.alpha = parse_alpha(e)?;
        }
        if let Some(e) = get("gamma") {
            learn.gamma = parse_unit(e)?;
        }
        if let Some(e) = get(&format!("{prefix}_alpha")) {
            learn.alpha = parse_alpha(e)?;
        }
        if let Some(e) = get(&format!("{prefix}_gamma")) {
            learn.gamma = parse_unit(e)?;
        }
        let (mut eps, mut decay, mut floor) = match learn.explore {
            ExplorationSchedule::Greedy => (0.0, 1.0, 0.0),
            ExplorationSchedule::EpsilonGreedy {
                epsilon,
                decay,
                floor,
            } => (epsilon, decay, floor),
        };
        if let Some(e) = get(&format!("{prefix}_epsilon")) {
            eps = parse_unit(e)?;
        }
        if let Some(e) = get(&format!("{prefix}_epsilon_decay")) {
            decay = parse_unit(e)?;
        }
        if let Some(e) = get(&format!("{prefix}_epsilon_floor")) {
            floor = parse_unit(e)?;
        }
        learn.explore = if eps == 0.0 {
            ExplorationSchedule::Greedy
        } else {
            ExplorationSchedule::EpsilonGreedy {
                epsilon: eps,
                decay,
                floor,
            }
        };
        learn.validate()?;
    }
    if let Some(e) = get("gnb_init") {
        let r = parse_real_range(e)?;
        cfg.base.gnb_init = (r.lo, r.hi);
    }

    if let Some(e) = get("attack") {
        cfg.attacks = parse_list(e)?;
    }
    if let Some(e) = get("budget") {
        cfg.budgets = parse_budgets(e)?;
    }
    if let Some(e) = get("defense") {
        cfg.defenses = parse_list(e)?;
    }
    if let Some(e) = get("warmup") {
        cfg.base.warmup = checked(e, scalar(e)?, |w| w >= 1, "must be at least 1")?;
    }
    if let Some(e) = get("attack_slots") {
        cfg.base.attack_slots = scalar(e)?;
    }
    if let Some(e) = get("horizon") {
        cfg.base.horizon = scalar(e)?;
    }
    if let Some(e) = get("window") {
        cfg.base.window = checked(e, scalar(e)?, |w| w >= 1, "must be at least 1")?;
    }
    if let Some(e) = get("qprotect_threshold") {
        cfg.base.defense.drop_threshold = checked(
            e,
            scalar(e)?,
            |x: f64| x > 0.0 && x < 1.0,
            "must lie in (0,1)",
        )?;
    }
    if let Some(e) = get("qprotect_window") {
        cfg.base.defense.detection_window =
            checked(e, scalar(e)?, |w| w >= 1, "must be at least 1")?;
    }
    if let Some(e) = get("r_top") {
        cfg.base.defense.r_top = checked(
            e,
            scalar(e)?,
            |x: f64| x > 0.0 && x <= 1.0,
            "must lie in (0,1]",
        )?;
    }

    match (get("seeds"), get("seed_list"), get("seed_base")) {
        (Some(a), Some(_), _) => {
            return Err(Error::config_at(
                a.line,
                "`seeds` and `seed_list` are mutually exclusive",
            ));
        }
        (_, Some(l), Some(b)) => {
            return Err(Error::config_at(
                b.line,
                format!(
                    "`seed_base` has no effect with `seed_list` (line {})",
                    l.line
                ),
            ));
        }
        (count, None, base) => {
            let n: u64 = match count {
                Some(e) => checked(e, scalar(e)?, |n| n >= 1, "must be at least 1")?,
                None => DEFAULT_SEEDS,
            };
            let start: u64 = match base {
                Some(e) => scalar(e)?,
                None => 0,
            };
            let end = start.checked_add(n).ok_or_else(|| {
                Error::config_at(base.map_or(0, |e| e.line), "seed range overflows")
            })?;
            cfg.seeds = (start..end).collect();
        }
        (None, Some(l), None) => {
            cfg.seeds = parse_list(l)?;
            if cfg.seeds.is_empty() {
                return Err(Error::config_at(l.line, "seed list is empty"));
            }
        }
    }
    if let Some(e) = get("output_dir") {
        if e.value.is_empty() {
            return Err(Error::config_at(e.line, "output_dir is empty"));
        }
        cfg.output_dir = Some(PathBuf::from(e.value));
    }
    if let Some(e) = get("slot_logs") {
        cfg.slot_logs = parse_bool(e)?;
    }
    if let Some(e) = get("dump_tables") {
        cfg.dump_tables = parse_bool(e)?;
    }

    // Cross-field checks carry the line of the most relevant key when there is one.
    cfg.validate().map_err(|err| {
        let anchor = [
            "horizon",
            "rbs",
            "min_rate",
            "budget",
            "attack_slots",
            "warmup",
        ]
        .iter()
        .find_map(|k| get(k));
        relocate(err, anchor)
    })?;
    Ok(cfg)
}

fn relocate(err: Error, entry: Option<&Entry>) -> Error {
    match (err, entry) {
        (Error::Config { line: None, msg }, Some(e)) => Error::config_at(e.line, msg),
        (err, _) => err,
    }
}

const KEYS: &[&str] = &[
    "ue_count",
    "arrival_prob",
    "weight",
    "lifetime",
    "deadline",
    "snr",
    "min_rate",
    "rbs",
    "rate_constant",
    "carriers",
    "ber_table",
    "alpha",
    "gamma",
    "gnb_alpha",
    "gnb_gamma",
    "gnb_epsilon",
    "gnb_epsilon_decay",
    "gnb_epsilon_floor",
    "gnb_init",
    "adv_alpha",
    "adv_gamma",
    "adv_epsilon",
    "adv_epsilon_decay",
    "adv_epsilon_floor",
    "attack",
    "budget",
    "defense",
    "warmup",
    "attack_slots",
    "horizon",
    "window",
    "qprotect_threshold",
    "qprotect_window",
    "r_top",
    "seeds",
    "seed_list",
    "seed_base",
    "output_dir",
    "slot_logs",
    "dump_tables",
];

fn scalar<T: FromStr>(e: &Entry) -> Result<T> {
    e.value
        .parse()
        .map_err(|_| Error::config_at(e.line, format!("cannot parse `{}`", e.value)))
}

fn checked<T: Copy + std::fmt::Display>(
    e: &Entry,
    v: T,
    ok: impl Fn(T) -> bool,
    what: &str,
) -> Result<T> {
    if ok(v) {
        Ok(v)
    } else {
        Err(Error::config_at(e.line, format!("value {v} {what}")))
    }
}

fn parse_alpha(e: &Entry) -> Result<f64> {
    checked(
        e,
        scalar(e)?,
        |a: f64| a > 0.0 && a <= 1.0,
        "must lie in (0,1]",
    )
}

fn parse_unit(e: &Entry) -> Result<f64> {
    checked(
        e,
        scalar(e)?,
        |a: f64| (0.0..=1.0).contains(&a),
        "must lie in [0,1]",
    )
}

fn parse_bool(e: &Entry) -> Result<bool> {
    match e.value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        v => Err(Error::config_at(
            e.line,
            format!("expected a boolean, got `{v}`"),
        )),
    }
}

fn split_range<'a>(e: &Entry<'a>) -> Result<(&'a str, &'a str)> {
    e.value
        .split_once("..")
        .map(|(a, b)| (a.trim(), b.trim()))
        .ok_or_else(|| {
            Error::config_at(
                e.line,
                format!("expected a range `lo..hi`, got `{}`", e.value),
            )
        })
}

fn parse_int_range(e: &Entry) -> Result<IntRange> {
    let (a, b) = split_range(e)?;
    let bad = || Error::config_at(e.line, format!("bad integer range `{}`", e.value));
    let lo: u32 = a.parse().map_err(|_| bad())?;
    let hi: u32 = b.parse().map_err(|_| bad())?;
    if lo == 0 || lo > hi {
        return Err(Error::config_at(
            e.line,
            format!("range `{}` must satisfy 1 <= lo <= hi", e.value),
        ));
    }
    Ok(IntRange::new(lo, hi))
}

fn parse_real_range(e: &Entry) -> Result<RealRange> {
    let (a, b) = split_range(e)?;
    let bad = || Error::config_at(e.line, format!("bad real range `{}`", e.value));
    let lo: f64 = a.parse().map_err(|_| bad())?;
    let hi: f64 = b.parse().map_err(|_| bad())?;
    if !(lo.is_finite() && hi.is_finite()) || lo > hi {
        return Err(Error::config_at(
            e.line,
            format!("range `{}` must satisfy lo <= hi", e.value),
        ));
    }
    Ok(RealRange::new(lo, hi))
}

fn parse_list<T: FromStr>(e: &Entry) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for item in e.value.split(',').map(str::trim) {
        if item.is_empty() {
            return Err(Error::config_at(e.line, "empty list item"));
        }
        out.push(
            item.parse().map_err(|_| {
                Error::config_at(e.line, format!("cannot parse list item `{item}`"))
            })?,
        );
    }
    Ok(out)
}

fn parse_budgets(e: &Entry) -> Result<Vec<usize>> {
    if e.value.contains("..") {
        let (a, b) = split_range(e)?;
        let bad = || Error::config_at(e.line, format!("bad budget range `{}`", e.value));
        let lo: usize = a.parse().map_err(|_| bad())?;
        let hi: usize = b.parse().map_err(|_| bad())?;
        if lo > hi {
            return Err(bad());
        }
        return Ok((lo..=hi).collect());
    }
    parse_list(e)
}

fn parse_ber(e: &Entry) -> Result<BerCurve> {
    if e.value == "qpsk" {
        return Ok(BerCurve::QpskGaussianTail);
    }
    let mut points = Vec::new();
    for item in e.value.split(',').map(str::trim) {
        let bad = || {
            Error::config_at(
                e.line,
                format!("bad BER point `{item}`, expected `snr:ber`"),
            )
        };
        let (x, y) = item.split_once(':').ok_or_else(bad)?;
        points.push((
            x.trim().parse().map_err(|_| bad())?,
            y.trim().parse().map_err(|_| bad())?,
        ));
    }
    BerCurve::table(points).map_err(|err| relocate(err, Some(e)))
}
