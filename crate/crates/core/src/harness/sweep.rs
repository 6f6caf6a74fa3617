use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Deserialize;

use super::output::{write_metrics, write_summary, METRICS_HEADER, SUMMARY_HEADER};
use crate::error::Result;
use crate::model::{validate_config, Algorithm, ExperimentConfig};
use crate::par::{self, Execution};
use crate::sim::RunResult;

/// Axis values; an empty axis keeps the base config's value.
#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxes {
    #[serde(default)]
    pub algorithm: Vec<Algorithm>,
    #[serde(default, rename = "G")]
    pub groups: Vec<usize>,
    #[serde(default)]
    pub delta: Vec<f64>,
    #[serde(default)]
    pub kappa: Vec<u64>,
    #[serde(default, rename = "S")]
    pub slots: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub base: ExperimentConfig,
    pub axes: SweepAxes,
    /// Seeds per cell: `base.seed + r` for `r in 0..repeats`.
    pub repeats: u64,
    /// Run schedulers that ignore `G` once per remaining axis point instead
    /// of once per `G` value.
    pub collapse_ungrouped: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    #[serde(default = "one")]
    repeats: u64,
    #[serde(default = "yes")]
    collapse_ungrouped: bool,
    #[serde(default)]
    axes: SweepAxes,
}

fn one() -> u64 {
    1
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub repeat: u64,
    pub config: ExperimentConfig,
}

#[derive(Debug)]
pub enum CellOutcome {
    Done(Box<RunResult>),
    Skipped(String),
    Failed(String),
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub cells: Vec<(Cell, CellOutcome)>,
}

impl SweepOutcome {
    pub fn results(&self) -> impl Iterator<Item = &RunResult> {
        self.cells.iter().filter_map(|(_, o)| match o {
            CellOutcome::Done(r) => Some(r.as_ref()),
            _ => None,
        })
    }
}

fn axis<T: Clone>(values: &[T], base: T) -> Vec<T> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

impl SweepSpec {
    pub fn new(base: ExperimentConfig) -> Self {
        SweepSpec {
            base,
            axes: SweepAxes::default(),
            repeats: 1,
            collapse_ungrouped: true,
        }
    }

    /// Parses a grid file of the form
    ///
    /// ```toml
    /// repeats = 5
    /// [axes]
    /// algorithm = ["fedavg", "fedbacys"]
    /// G = [2, 5, 10]
    /// delta = [0.1, 1.0]
    /// ```
    pub fn from_grid_str(base: ExperimentConfig, text: &str) -> Result<Self> {
        let grid: GridFile = toml::from_str(text)?;
        Ok(SweepSpec {
            base,
            axes: grid.axes,
            repeats: grid.repeats,
            collapse_ungrouped: grid.collapse_ungrouped,
        })
    }

    /// Expands the grid. Order: algorithm, G, delta, kappa, S, repeat.
    pub fn cells(&self) -> Vec<Cell> {
        let b = &self.base;
        let algorithms = axis(&self.axes.algorithm, b.algorithm);
        let groups = axis(&self.axes.groups, b.num_groups);
        let deltas = axis(&self.axes.delta, b.delta);
        let kappas = axis(&self.axes.kappa, b.kappa);
        let slots = axis(&self.axes.slots, b.slots_per_epoch);
        let mut out = Vec::new();
        for &algorithm in &algorithms {
            let gs = if self.collapse_ungrouped && !algorithm.uses_groups() {
                &groups[..1]
            } else {
                &groups[..]
            };
            for &g in gs {
                for &delta in &deltas {
                    for &kappa in &kappas {
                        for &s in &slots {
                            for repeat in 0..self.repeats {
                                out.push(Cell {
                                    index: out.len(),
                                    repeat,
                                    config: ExperimentConfig {
                                        algorithm,
                                        num_groups: g,
                                        delta,
                                        kappa,
                                        slots_per_epoch: s,
                                        seed: b.seed + repeat,
                                        ..b.clone()
                                    },
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Runs every cell; failures are recorded and the sweep continues.
pub fn sweep(spec: &SweepSpec, exec: Execution) -> SweepOutcome {
    let cells = spec.cells();
    let outcomes = par::map(&cells, exec, |cell| {
        let report = validate_config(&cell.config);
        if !report.is_ok() {
            return CellOutcome::Skipped(report.errors.join("; "));
        }
        match super::run(&cell.config) {
            Ok(r) => CellOutcome::Done(Box::new(r)),
            Err(e) => CellOutcome::Failed(e.to_string()),
        }
    });
    SweepOutcome {
        cells: cells.into_iter().zip(outcomes).collect(),
    }
}

/// Writes `energy_summary.csv`, `metrics.csv` and `failures.csv` in cell order.
pub fn write_sweep(outcome: &SweepOutcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut summary = BufWriter::new(File::create(dir.join("energy_summary.csv"))?);
    let mut metrics = BufWriter::new(File::create(dir.join("metrics.csv"))?);
    let mut failures = BufWriter::new(File::create(dir.join("failures.csv"))?);
    writeln!(summary, "{SUMMARY_HEADER}")?;
    writeln!(metrics, "{METRICS_HEADER}")?;
    writeln!(failures, "cell,algorithm,G,delta,kappa,S,seed,status,reason")?;
    for (cell, outcome) in &outcome.cells {
        let c = &cell.config;
        let (status, reason) = match outcome {
            CellOutcome::Done(r) => {
                write_summary(&mut summary, r)?;
                write_metrics(&mut metrics, r)?;
                continue;
            }
            CellOutcome::Skipped(why) => ("skipped", why),
            CellOutcome::Failed(why) => ("failed", why),
        };
        writeln!(
            failures,
            "{},{},{},{},{},{},{},{status},\"{}\"",
            cell.index,
            c.algorithm,
            c.num_groups,
            super::fmt_sig9(c.delta),
            c.kappa,
            c.slots_per_epoch,
            c.seed,
            reason.replace('"', "'")
        )?;
    }
    summary.flush()?;
    metrics.flush()?;
    failures.flush()?;
    Ok(())
}
