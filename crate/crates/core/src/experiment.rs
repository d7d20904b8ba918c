//! Grid runner: every (attack, budget, defense) cell over every seed, with
//! per-run logs, per-cell reports, an aggregate table and plot-ready series.
//!
//! Output layout under the output directory:
//!
//! ```text
//! config.txt                 resolved configuration (hashed into the manifest)
//! manifest.json              config hash, seeds, per-cell completion counts
//! aggregate.csv              seed means per cell
//! cells/<cell>.json          per-seed metrics of one cell
//! runs/<cell>/seed_<s>.csv   slot log of one run
//! series/<cell>__under.csv   seed-mean running average from attack start
//! series/<cell>__after.csv   seed-mean running average from attack stop
//! tables/<cell>/seed_<s>_{gnb,adv}.csv   final Q-tables (optional)
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Cell, ExperimentConfig};
use crate::defense::DefensePreset;
use crate::engine::{benchmark_from, episode_report, simulate, RunConfig, SlotRecord, World};
use crate::metrics::MetricsReport;
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize)]
pub struct RunResult {
    pub seed: u64,
    #[serde(flatten)]
    pub report: MetricsReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub cell: Cell,
    pub config: RunConfig,
    pub runs: Vec<RunResult>,
    pub failures: Vec<RunFailure>,
}

/// Seed means of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellMeans {
    pub benchmark: f64,
    pub recovery_time: f64,
    pub max_reduction: f64,
    pub total_reduction: f64,
    pub censored: usize,
}

impl CellResult {
    pub fn means(&self) -> Option<CellMeans> {
        if self.runs.is_empty() {
            return None;
        }
        let n = self.runs.len() as f64;
        let mean =
            |f: fn(&MetricsReport) -> f64| self.runs.iter().map(|r| f(&r.report)).sum::<f64>() / n;
        Some(CellMeans {
            benchmark: mean(|r| r.baseline_reward),
            recovery_time: mean(|r| r.recovery_time as f64),
            max_reduction: mean(|r| r.max_reduction),
            total_reduction: mean(|r| r.total_reduction),
            censored: self.runs.iter().filter(|r| r.report.censored).count(),
        })
    }

    /// Seed-mean running average at every slot.
    pub fn mean_series(&self) -> Vec<f64> {
        let Some(first) = self.runs.first() else {
            return Vec::new();
        };
        let n = self.runs.len() as f64;
        (0..first.report.series.len())
            .map(|t| self.runs.iter().map(|r| r.report.series[t]).sum::<f64>() / n)
            .collect()
    }
}

#[derive(Debug)]
pub struct ExperimentSummary {
    pub cells: Vec<CellResult>,
    pub config_hash: String,
}

impl ExperimentSummary {
    pub fn failed_runs(&self) -> usize {
        self.cells.iter().map(|c| c.failures.len()).sum()
    }
}

/// Runs the whole grid on `jobs` worker threads and writes every report under `out`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out: &Path,
    jobs: usize,
) -> Result<ExperimentSummary> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::config(format!("cannot start {jobs} workers: {e}")))?;
    for sub in ["cells", "runs", "series"] {
        create_dir(&out.join(sub))?;
    }
    let cells = cfg.cells();
    for cell in &cells {
        if cfg.slot_logs {
            create_dir(&out.join("runs").join(cell.name()))?;
        }
        if cfg.dump_tables {
            create_dir(&out.join("tables").join(cell.name()))?;
        }
    }

    // Paired baselines depend only on the defense and the seed.
    let mut baseline_keys: Vec<(DefensePreset, u64)> = Vec::new();
    for d in &cfg.defenses {
        for &s in &cfg.seeds {
            if !baseline_keys.contains(&(*d, s)) {
                baseline_keys.push((*d, s));
            }
        }
    }
    let baselines: BTreeMap<(DefensePreset, u64), std::result::Result<f64, String>> =
        pool.install(|| {
            baseline_keys
                .par_iter()
                .map(|&(defense, seed)| {
                    let cell = Cell {
                        attack: cfg.attacks[0],
                        budget: cfg.budgets[0],
                        defense,
                    };
                    let run_cfg = cfg.run_config(&cell).without_attack();
                    let bench = simulate(&run_cfg, seed, false)
                        .map(|o| benchmark_from(&o.rewards, &run_cfg))
                        .map_err(|e| format!("baseline run failed: {e}"));
                    ((defense, seed), bench)
                })
                .collect()
        });

    let tasks: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| cfg.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let outcomes: Vec<std::result::Result<MetricsReport, String>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(c, seed)| {
                let cell = &cells[c];
                let benchmark = baselines[&(cell.defense, seed)].clone()?;
                execute_run(cfg, cell, seed, benchmark, out).map_err(|e| e.to_string())
            })
            .collect()
    });

    let mut results: Vec<CellResult> = cells
        .iter()
        .map(|cell| CellResult {
            cell: *cell,
            config: cfg.run_config(cell),
            runs: Vec::new(),
            failures: Vec::new(),
        })
        .collect();
    for (&(c, seed), outcome) in tasks.iter().zip(outcomes) {
        match outcome {
            Ok(report) => results[c].runs.push(RunResult { seed, report }),
            Err(error) => {
                log::error!("{} seed {seed}: {error}", cells[c].name());
                results[c].failures.push(RunFailure { seed, error });
            }
        }
    }

    for result in &results {
        write_cell_json(
            &out.join("cells")
                .join(format!("{}.json", result.cell.name())),
            result,
        )?;
        let series = result.mean_series();
        emit_plot_data(
            &out.join("series"),
            &result.cell.name(),
            &result.config,
            &series,
        )?;
    }
    write_aggregate(&out.join("aggregate.csv"), &results)?;
    let config_hash = cfg.hash();
    write_file(&out.join("config.txt"), cfg.canonical().as_bytes())?;
    write_manifest(&out.join("manifest.json"), cfg, &config_hash, &results)?;
    Ok(ExperimentSummary {
        cells: results,
        config_hash,
    })
}

fn execute_run(
    cfg: &ExperimentConfig,
    cell: &Cell,
    seed: u64,
    benchmark: f64,
    out: &Path,
) -> Result<MetricsReport> {
    let run_cfg = cfg.run_config(cell);
    let mut world = World::new(&run_cfg, seed)?;
    let mut records = Vec::new();
    for _ in 0..run_cfg.horizon {
        let record = world.run_slot()?;
        if cfg.slot_logs {
            records.push(record);
        }
    }
    let report = episode_report(&run_cfg, world.rewards(), benchmark);
    let name = cell.name();
    if cfg.slot_logs {
        let path = out
            .join("runs")
            .join(&name)
            .join(format!("seed_{seed}.csv"));
        write_slot_log(&path, &records, &report.series)?;
    }
    if cfg.dump_tables {
        let dir = out.join("tables").join(&name);
        let gnb_path = dir.join(format!("seed_{seed}_gnb.csv"));
        let mut w = BufWriter::new(File::create(&gnb_path).map_err(|e| Error::io(&gnb_path, e))?);
        world
            .gnb()
            .table()
            .write_delimited(&mut w)
            .map_err(|e| Error::io(&gnb_path, e))?;
        if let Some(table) = world.adversary().table() {
            let adv_path = dir.join(format!("seed_{seed}_adv.csv"));
            let mut w =
                BufWriter::new(File::create(&adv_path).map_err(|e| Error::io(&adv_path, e))?);
            table
                .write_delimited(&mut w)
                .map_err(|e| Error::io(&adv_path, e))?;
        }
    }
    Ok(report)
}

#[derive(Serialize)]
struct SlotRow {
    t: u64,
    arrivals: usize,
    free_at_start: String,
    sensed: String,
    grants: String,
    jam_set: String,
    nacks: String,
    gnb_reward: f64,
    adv_reward: f64,
    defense_flags: u8,
    qprotect_suspended: u8,
    waiting: usize,
    dropped: usize,
    running_average: f64,
}

/// Grants are `ue:req:rbs:weight:j` with `j` 1 when jammed, separated by `;`;
/// RB sets are `|`-separated indices; NACKs are `rb:count` pairs.
pub fn write_slot_log(path: &Path, records: &[SlotRecord], running_average: &[f64]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    for (i, r) in records.iter().enumerate() {
        let grants: Vec<String> = r
            .grants
            .iter()
            .map(|g| {
                format!(
                    "{}:{}:{}:{}:{}",
                    g.ue_id,
                    g.req_id,
                    g.rb_set,
                    g.weight,
                    u8::from(g.jammed)
                )
            })
            .collect();
        let nacks: Vec<String> = r.nacks.iter().map(|(rb, c)| format!("{rb}:{c}")).collect();
        w.serialize(SlotRow {
            t: r.t,
            arrivals: r.arrivals,
            free_at_start: r.free_at_start.to_string(),
            sensed: r.sensed.map(|s| s.to_string()).unwrap_or_default(),
            grants: grants.join(";"),
            jam_set: r.jam_set.to_string(),
            nacks: nacks.join(";"),
            gnb_reward: r.gnb_reward,
            adv_reward: r.adv_reward,
            defense_flags: r.defense_flags,
            qprotect_suspended: u8::from(r.qprotect_suspended),
            waiting: r.waiting,
            dropped: r.dropped,
            running_average: running_average.get(i).copied().unwrap_or(f64::NAN),
        })
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct SeriesRow {
    t: usize,
    running_average: f64,
}

/// Writes `<name>__under.csv` (from attack start, through the attack) and
/// `<name>__after.csv` (from attack stop to the horizon). An empty series
/// produces header-only files.
pub fn emit_plot_data(dir: &Path, name: &str, cfg: &RunConfig, series: &[f64]) -> Result<()> {
    let start = cfg.attack_start() as usize;
    let stop = cfg.attack_stop() as usize;
    let parts = [
        (
            "under",
            series.get(start..stop.min(series.len())).unwrap_or(&[]),
        ),
        ("after", series.get(stop..).unwrap_or(&[])),
    ];
    for (suffix, part) in parts {
        let path = dir.join(format!("{name}__{suffix}.csv"));
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(BufWriter::new(file));
        w.write_record(["t", "running_average"])
            .map_err(|e| csv_error(&path, e))?;
        for (t, &v) in part.iter().enumerate() {
            w.serialize(SeriesRow {
                t,
                running_average: v,
            })
            .map_err(|e| csv_error(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct CellJson<'a> {
    cell: String,
    attack: &'static str,
    budget: usize,
    defense: &'static str,
    rbs: usize,
    mean: Option<CellMeans>,
    runs: &'a [RunResult],
    failures: &'a [RunFailure],
}

fn write_cell_json(path: &Path, result: &CellResult) -> Result<()> {
    let doc = CellJson {
        cell: result.cell.name(),
        attack: result.cell.attack.name(),
        budget: result.cell.budget,
        defense: result.cell.defense.name(),
        rbs: result.config.scenario.rbs,
        mean: result.means(),
        runs: &result.runs,
        failures: &result.failures,
    };
    write_json(path, &doc)
}

#[derive(Serialize)]
struct AggregateRow {
    cell: String,
    attack: &'static str,
    budget: usize,
    defense: &'static str,
    rbs: usize,
    seeds: usize,
    benchmark: Option<f64>,
    recovery_time: Option<f64>,
    max_reduction: Option<f64>,
    total_reduction: Option<f64>,
    censored: usize,
}

fn write_aggregate(path: &Path, results: &[CellResult]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    for r in results {
        let m = r.means();
        w.serialize(AggregateRow {
            cell: r.cell.name(),
            attack: r.cell.attack.name(),
            budget: r.cell.budget,
            defense: r.cell.defense.name(),
            rbs: r.config.scenario.rbs,
            seeds: r.runs.len(),
            benchmark: m.map(|m| m.benchmark),
            recovery_time: m.map(|m| m.recovery_time),
            max_reduction: m.map(|m| m.max_reduction),
            total_reduction: m.map(|m| m.total_reduction),
            censored: m.map_or(0, |m| m.censored),
        })
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct ManifestCell {
    name: String,
    completed: usize,
    failed: usize,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config_hash: &'a str,
    seeds: &'a [u64],
    cells: Vec<ManifestCell>,
}

fn write_manifest(
    path: &Path,
    cfg: &ExperimentConfig,
    hash: &str,
    results: &[CellResult],
) -> Result<()> {
    let doc = Manifest {
        tool: "ranslice",
        version: env!("CARGO_PKG_VERSION"),
        config_hash: hash,
        seeds: &cfg.seeds,
        cells: results
            .iter()
            .map(|r| ManifestCell {
                name: r.cell.name(),
                completed: r.runs.len(),
                failed: r.failures.len(),
            })
            .collect(),
    };
    write_json(path, &doc)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::io(path, e.into()))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &PathBuf) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::io(path, e.into())
}
