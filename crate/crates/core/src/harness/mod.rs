//! Running configured experiments and writing their artifacts.

mod analyze;
mod output;
mod sweep;

use std::path::Path;

pub use analyze::{analyze, AnalysisReport, AnalyzeRequest};
pub use output::{
    fmt_sig9, run_id, write_metrics, write_run, write_summary, METRICS_HEADER, SUMMARY_HEADER,
};
pub use sweep::{sweep, write_sweep, Cell, CellOutcome, SweepAxes, SweepOutcome, SweepSpec};

use crate::baselines::protocol_for;
use crate::error::Result;
use crate::model::{validate_config, ExperimentConfig};
use crate::objectives::Objective;
use crate::sim::{simulate, NoopObserver, Observer, RunResult};

/// Environment variable that overrides every `--out` directory.
pub const OUT_DIR_ENV: &str = "EHFL_OUT_DIR";

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    ExperimentConfig::from_toml_str(&text)
}

/// Validates `cfg` and runs it to completion.
pub fn run(cfg: &ExperimentConfig) -> Result<RunResult> {
    run_with_observer(cfg, &mut NoopObserver)
}

pub fn run_with_observer(cfg: &ExperimentConfig, observer: &mut dyn Observer) -> Result<RunResult> {
    validate_config(cfg).into_result()?;
    let objective = Objective::build(&cfg.objective, cfg.num_clients, cfg.sigma, cfg.seed)?;
    run_objective(cfg, &objective, observer)
}

/// Runs against a caller-built objective.
pub fn run_objective(cfg: &ExperimentConfig, objective: &Objective, observer: &mut dyn Observer) -> Result<RunResult> {
    validate_config(cfg).into_result()?;
    let mut protocol = protocol_for(cfg, objective.dim());
    simulate(cfg, objective, protocol.as_mut(), observer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn zero_epochs_is_empty() {
        let cfg = ExperimentConfig {
            epochs: 0,
            ..ExperimentConfig::default()
        };
        let r = run(&cfg).unwrap();
        assert!(r.metrics.is_empty());
        assert_eq!(r.total_energy(), 0.0);
    }

    #[test]
    fn hard_errors_refuse_to_run() {
        let cfg = ExperimentConfig {
            kappa: 40,
            ..ExperimentConfig::default()
        };
        assert!(matches!(run(&cfg), Err(Error::ConfigRejected(_))));
    }

    #[test]
    fn last_record_matches_ledger() {
        let cfg = ExperimentConfig {
            epochs: 7,
            delta: 0.5,
            num_clients: 12,
            ..ExperimentConfig::default()
        };
        let r = run(&cfg).unwrap();
        assert_eq!(r.metrics.len(), 7);
        assert_eq!(r.metrics.last().unwrap().cum_energy, r.ledger.consumed_total.as_f64());
    }
}
