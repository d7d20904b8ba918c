//! Acceptance criteria. Each test writes one `criterion N: PASS|FAIL ...` line
//! to stderr (uncaptured) before asserting.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use ranslice_core::adversary::{AttackKind, AttackStrategy, JamActionSpace};
use ranslice_core::defense::{
    misnack_route, randomopt_select, randomtop_select, DefenseConfig, DefensePreset,
};
use ranslice_core::engine::{benchmark_from, episode_report, simulate, RunConfig, World};
use ranslice_core::metrics::MetricsReport;
use ranslice_core::qlearn::{q_update, ExplorationSchedule, LearnParams, QTable};
use ranslice_core::slicing::RbSet;

const SEEDS: u64 = 20;
const BOOTSTRAP: usize = 1000;

fn report(n: u32, pass: bool, detail: impl AsRef<str>) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(
        std::io::stderr(),
        "criterion {n}: {verdict} {}",
        detail.as_ref()
    );
}

// ---------------------------------------------------------------- 1

#[test]
fn criterion_1_q_update_closed_form() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let n_actions = rng.gen_range(1..8);
        let mut table = QTable::zeros([n_actions, n_actions]);
        for s in 0..2 {
            for v in table.row_mut(s).unwrap().iter_mut() {
                *v = rng.gen_range(-50.0..50.0);
            }
        }
        let a = rng.gen_range(0..n_actions);
        let r: f64 = rng.gen_range(-10.0..10.0);
        let params = LearnParams {
            alpha: rng.gen_range(1e-6..=1.0),
            gamma: rng.gen_range(0.0..=1.0),
            explore: ExplorationSchedule::Greedy,
        };
        let q = table.get(0, a).unwrap();
        let next_max = table
            .row(1)
            .unwrap()
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let expected = (1.0 - params.alpha) * q + params.alpha * (r + params.gamma * next_max);
        let got = q_update(&mut table, 0, a, r, 1, &params).unwrap();
        assert_eq!(got, table.get(0, a).unwrap());
        worst = worst.max((got - expected).abs());
    }
    let mut exact = true;
    for _ in 0..1000 {
        let mut table = QTable::zeros([3, 3]);
        table
            .row_mut(0)
            .unwrap()
            .copy_from_slice(&[rng.gen(), rng.gen(), rng.gen()]);
        table
            .row_mut(1)
            .unwrap()
            .copy_from_slice(&[rng.gen(), 1e9, rng.gen()]);
        let r: f64 = rng.gen_range(-100.0..100.0);
        let p = LearnParams {
            alpha: 1.0,
            gamma: 0.0,
            explore: ExplorationSchedule::Greedy,
        };
        exact &= q_update(&mut table, 0, 1, r, 1, &p).unwrap() == r;
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-12 && exact && elapsed.as_secs_f64() < 1.0;
    report(
        1,
        pass,
        format!("max |error| {worst:.2e}, alpha=1/gamma=0 exact: {exact}, {elapsed:.2?}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 2

#[test]
fn criterion_2_conservation_over_long_run() {
    let start = Instant::now();
    let cfg = RunConfig {
        attack_slots: 98_000,
        horizon: 100_000,
        ..RunConfig::default()
    };
    let rbs = cfg.scenario.rbs;
    let limit = cfg.attack.budget.min(rbs);
    let mut world = World::new(&cfg, 42).unwrap();
    let mut held: Vec<(RbSet, u64)> = Vec::new();
    let (mut conservation, mut consistency, mut budget) = (true, true, true);
    for _ in 0..cfg.horizon {
        let rec = world.run_slot().unwrap();
        held.retain(|(_, end)| *end >= rec.t);
        let occupied = held.iter().fold(RbSet::EMPTY, |acc, (s, _)| acc.union(*s));
        let mut granted = RbSet::EMPTY;
        for g in &rec.grants {
            conservation &= g.rb_set.is_subset(rec.free_at_start) && g.rb_set.is_disjoint(granted);
            granted = granted.union(g.rb_set);
            held.push((g.rb_set, g.end_slot));
        }
        conservation &= rec.free_at_start == occupied.complement(rbs);
        let pool = world.pool();
        conservation &= pool.available().len() + pool.occupied().len() == rbs
            && pool.available().is_disjoint(pool.occupied());
        let expected: f64 = rec
            .grants
            .iter()
            .filter(|g| g.rb_set.is_disjoint(rec.jam_set))
            .map(|g| f64::from(g.weight))
            .sum();
        consistency &= expected == rec.gnb_reward;
        budget &= rec.jam_set.len() <= limit;
    }
    let elapsed = start.elapsed();
    let pass = conservation && consistency && budget && elapsed.as_secs_f64() < 30.0;
    report(
        2,
        pass,
        format!("100000 slots: conservation {conservation}, reward consistency {consistency}, jam budget {budget}, {elapsed:.2?}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 3

#[test]
fn criterion_3_jam_action_counts() {
    let space = JamActionSpace::new(11, 5).unwrap();
    let full = space.n_actions(11);
    let small: Vec<usize> = (0..=5).map(|k| space.n_actions(k)).collect();
    let row = space.row_lengths()[(1 << 11) - 1];
    let pass = full == 463 && row == 463 && small.iter().all(|&n| n == 2);
    report(
        3,
        pass,
        format!("F=11,B=5 -> {full} actions; F<=B -> {small:?}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- shared grid runner

fn grid(
    rbs: usize,
    budgets: &[usize],
    kinds: &[AttackKind],
    defenses: &[DefensePreset],
) -> BTreeMap<(AttackKind, usize, DefensePreset), Vec<MetricsReport>> {
    let base = RunConfig {
        scenario: ranslice_core::slicing::ScenarioParams {
            rbs,
            ..Default::default()
        },
        ..RunConfig::default()
    };
    let mut jobs = Vec::new();
    for &b in budgets {
        for &k in kinds {
            for &d in defenses {
                for s in 0..SEEDS {
                    jobs.push((k, b, d, s));
                }
            }
        }
    }
    let results: Vec<((AttackKind, usize, DefensePreset), u64, MetricsReport)> = jobs
        .par_iter()
        .map(|&(kind, budget, defense, seed)| {
            let cfg = RunConfig {
                attack: AttackStrategy { kind, budget },
                defense: defense.apply(DefenseConfig::default()),
                ..base.clone()
            };
            let baseline = simulate(&cfg.without_attack(), seed, false).unwrap();
            let bench = benchmark_from(&baseline.rewards, &cfg);
            let run = simulate(&cfg, seed, false).unwrap();
            (
                (kind, budget, defense),
                seed,
                episode_report(&cfg, &run.rewards, bench),
            )
        })
        .collect();
    let mut out: BTreeMap<_, Vec<MetricsReport>> = BTreeMap::new();
    for (key, _, rep) in results {
        out.entry(key).or_default().push(rep);
    }
    out
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Fraction of paired seed resamples in which `mean(a) > mean(b)`.
fn bootstrap_greater(a: &[f64], b: &[f64], rng: &mut ChaCha8Rng) -> f64 {
    let n = a.len();
    let mut wins = 0;
    for _ in 0..BOOTSTRAP {
        let (mut sa, mut sb) = (0.0, 0.0);
        for _ in 0..n {
            let i = rng.gen_range(0..n);
            sa += a[i];
            sb += b[i];
        }
        if sa > sb {
            wins += 1;
        }
    }
    wins as f64 / BOOTSTRAP as f64
}

// ---------------------------------------------------------------- 4

#[test]
fn criterion_4_attack_ordering() {
    let start = Instant::now();
    let kinds = [
        AttackKind::RlSurrogate,
        AttackKind::Myopic,
        AttackKind::Random,
    ];
    let results = grid(11, &[3, 4, 5], &kinds, &[DefensePreset::None]);
    let metric = |k: AttackKind, b: usize, f: fn(&MetricsReport) -> f64| -> Vec<f64> {
        results[&(k, b, DefensePreset::None)]
            .iter()
            .map(f)
            .collect()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut pass = true;
    let mut lines = Vec::new();
    type Check = (&'static str, fn(&MetricsReport) -> f64, &'static [usize]);
    let checks: [Check; 2] = [
        ("total_reduction", |r| r.total_reduction, &[3, 5]),
        ("recovery_time", |r| r.recovery_time as f64, &[3, 4, 5]),
    ];
    for (name, f, budgets) in checks {
        for &b in budgets {
            let rl = metric(AttackKind::RlSurrogate, b, f);
            for other in [AttackKind::Myopic, AttackKind::Random] {
                let o = metric(other, b, f);
                let frac = bootstrap_greater(&rl, &o, &mut rng);
                let ok = mean(&rl) > mean(&o) && frac >= 0.8;
                pass &= ok;
                lines.push(format!(
                    "B={b} {name}: rl {:.1} vs {} {:.1} (bootstrap {:.3}) {}",
                    mean(&rl),
                    other.name(),
                    mean(&o),
                    frac,
                    if ok { "ok" } else { "VIOLATED" }
                ));
            }
        }
    }
    report(
        4,
        pass,
        format!("({:.1?})\n  {}", start.elapsed(), lines.join("\n  ")),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 5

#[test]
fn criterion_5_myopic_mitigation_trend() {
    let cfg = RunConfig {
        attack: AttackStrategy {
            kind: AttackKind::Myopic,
            budget: 5,
        },
        ..RunConfig::default()
    };
    let start = cfg.attack_start() as usize;
    let quarter = cfg.attack_slots as usize / 4;
    let trends: Vec<(f64, f64)> = (0..SEEDS)
        .into_par_iter()
        .map(|seed| {
            let run = simulate(&cfg, seed, false).unwrap();
            let ra = ranslice_core::metrics::running_average_series(&run.rewards, cfg.window);
            let q2 = mean(&ra[start + quarter..start + 2 * quarter]);
            let q4 = mean(&ra[start + 3 * quarter..start + 4 * quarter]);
            (q2, q4)
        })
        .collect();
    let rising = trends.iter().filter(|(q2, q4)| q4 > q2).count();
    let pass = rising as f64 >= 0.8 * SEEDS as f64;
    let q2 = mean(&trends.iter().map(|t| t.0).collect::<Vec<_>>());
    let q4 = mean(&trends.iter().map(|t| t.1).collect::<Vec<_>>());
    report(
        5,
        pass,
        format!("final quartile above second quartile on {rising}/{SEEDS} seeds (mean RA q2 {q2:.3}, q4 {q4:.3}; need >= 16)"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 6

#[test]
fn criterion_6_combined_defense_helps() {
    let results = grid(
        5,
        &[2],
        &[AttackKind::RlSurrogate],
        &[DefensePreset::None, DefensePreset::Combined],
    );
    let get = |d: DefensePreset, f: fn(&MetricsReport) -> f64| -> f64 {
        mean(
            &results[&(AttackKind::RlSurrogate, 2, d)]
                .iter()
                .map(f)
                .collect::<Vec<_>>(),
        )
    };
    let (tn, tc) = (
        get(DefensePreset::None, |r| r.total_reduction),
        get(DefensePreset::Combined, |r| r.total_reduction),
    );
    let (rn, rc) = (
        get(DefensePreset::None, |r| r.recovery_time as f64),
        get(DefensePreset::Combined, |r| r.recovery_time as f64),
    );
    let pass = tc < tn && rc < rn;
    report(
        6,
        pass,
        format!("5 RBs, B=2: total reduction combined {tc:.1} vs none {tn:.1}; recovery combined {rc:.1} vs none {rn:.1}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 7

#[test]
fn criterion_7_defense_micro_properties() {
    // Q-Protect freeze
    let cfg = RunConfig {
        attack_slots: 4000,
        horizon: 6000,
        defense: DefensePreset::QProtect.apply(DefenseConfig::default()),
        ..RunConfig::default()
    };
    let mut world = World::new(&cfg, 9).unwrap();
    let mut frozen_ok = true;
    let mut detected = 0;
    for _ in 0..cfg.horizon {
        let before: Vec<u64> = world
            .gnb()
            .table()
            .values()
            .iter()
            .map(|v| v.to_bits())
            .collect();
        let rec = world.run_slot().unwrap();
        if rec.qprotect_suspended {
            detected += 1;
            frozen_ok &=
                before
                    .iter()
                    .copied()
                    .eq(world.gnb().table().values().iter().map(|v| v.to_bits()));
        }
    }
    frozen_ok &= detected > 0;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut opt_ok = true;
    let mut top_ok = true;
    for i in 0..20_000 {
        let n = rng.gen_range(1..12);
        let row: Vec<f64> = (0..n)
            .map(|_| match rng.gen_range(0..3) {
                0 => rng.gen_range(-5i32..5) as f64,
                _ => rng.gen_range(-10.0..10.0),
            })
            .collect();
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let a = randomopt_select(&row, &mut rng).unwrap();
        opt_ok &= row[a] == max;
        let r_top = if i % 2 == 0 {
            0.5
        } else {
            rng.gen_range(0.05..=1.0)
        };
        let b = randomtop_select(&row, r_top, &mut rng).unwrap();
        top_ok &= if max > 0.0 {
            row[b] >= r_top * max
        } else {
            row[b] == max
        };
    }
    // negative-max fallback, explicitly
    for _ in 0..100 {
        top_ok &= randomtop_select(&[-1.0, -2.0], 0.5, &mut rng).unwrap() == 0;
    }

    let set = |xs: &[usize]| xs.iter().copied().collect::<RbSet>();
    let nack_ok = misnack_route(set(&[2, 5]), set(&[2]), true).unwrap() == vec![(5, 1)]
        && misnack_route(set(&[2, 5]), set(&[2, 5]), true).unwrap() == vec![(2, 1), (5, 1)]
        && misnack_route(set(&[2, 5]), set(&[2]), false).unwrap() == vec![(2, 1)];

    let pass = frozen_ok && opt_ok && top_ok && nack_ok;
    report(
        7,
        pass,
        format!("Q-Protect freeze {frozen_ok} ({detected} detected slots), RandomOpt max {opt_ok}, RandomTop threshold {top_ok}, MisNACK cases {nack_ok}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 8

fn collect_files(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            collect_files(root, &path, out);
        } else {
            let rel = path
                .strip_prefix(root)
                .unwrap()
                .to_string_lossy()
                .into_owned();
            out.insert(rel, fs::read(&path).unwrap());
        }
    }
}

#[test]
fn criterion_8_byte_identical_reruns() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("exp.cfg");
    fs::write(
        &config,
        "attack = rl\nbudget = 3\nhorizon = 4000\nattack_slots = 2000\ndump_tables = true\n",
    )
    .unwrap();
    let mut trees = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_ranslice"))
            .args([
                "run",
                config.to_str().unwrap(),
                "--seed",
                "17",
                "--jobs",
                "2",
                "--out",
                out.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert!(
            status.status.success(),
            "{}",
            String::from_utf8_lossy(&status.stderr)
        );
        let mut files = BTreeMap::new();
        collect_files(&out, &out, &mut files);
        trees.push(files);
    }
    let csv = trees[0].keys().filter(|k| k.ends_with(".csv")).count();
    let json = trees[0].keys().filter(|k| k.ends_with(".json")).count();
    let pass = trees[0] == trees[1] && csv > 0 && json > 0;
    report(
        8,
        pass,
        format!(
            "{} files ({csv} CSV, {json} JSON) identical across two runs: {}",
            trees[0].len(),
            trees[0] == trees[1]
        ),
    );
    assert!(pass);
}
