use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::Result;
use crate::model::ExperimentConfig;
use crate::sim::RunResult;

pub const METRICS_HEADER: &str = "run_id,algorithm,N,G,S,T,kappa,delta,seed,epoch,global_loss,dist_to_opt,cum_energy,participants,trainings_launched";

pub const SUMMARY_HEADER: &str = "algorithm,G,delta,kappa,S,seed,total_energy,final_loss,final_dist_to_opt";

/// `%.9g`: nine significant digits, trailing zeros trimmed.
pub fn fmt_sig9(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..9).contains(&exp) {
        return format!("{}e{}{:02}", trim_zeros(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs());
    }
    let decimals = (8 - exp).max(0) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_sig9).unwrap_or_default()
}

/// Stable identifier for one configured run.
pub fn run_id(cfg: &ExperimentConfig) -> String {
    format!(
        "{}-G{}-d{}-k{}-S{}-seed{}",
        cfg.algorithm,
        cfg.num_groups,
        fmt_sig9(cfg.delta),
        cfg.kappa,
        cfg.slots_per_epoch,
        cfg.seed
    )
}

/// Writes per-epoch rows without a header.
pub fn write_metrics<W: Write>(w: &mut W, result: &RunResult) -> Result<()> {
    let c = &result.config;
    let id = run_id(c);
    for m in &result.metrics {
        writeln!(
            w,
            "{id},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            c.algorithm,
            c.num_clients,
            c.num_groups,
            c.slots_per_epoch,
            c.epochs,
            c.kappa,
            fmt_sig9(c.delta),
            c.seed,
            m.epoch,
            fmt_sig9(m.global_loss),
            opt(m.dist_to_opt),
            fmt_sig9(m.cum_energy),
            m.participants,
            m.trainings_launched
        )?;
    }
    Ok(())
}

/// Writes one summary row without a header. Schedulers that ignore `G`
/// print `-` in that column.
pub fn write_summary<W: Write>(w: &mut W, result: &RunResult) -> Result<()> {
    let c = &result.config;
    let g = if c.algorithm.uses_groups() {
        c.num_groups.to_string()
    } else {
        "-".into()
    };
    writeln!(
        w,
        "{},{g},{},{},{},{},{},{},{}",
        c.algorithm,
        fmt_sig9(c.delta),
        c.kappa,
        c.slots_per_epoch,
        c.seed,
        fmt_sig9(result.total_energy()),
        opt(result.final_loss()),
        opt(result.final_dist_to_opt())
    )?;
    Ok(())
}

/// `metrics.csv` and `run.json` for a single run.
pub fn write_run(result: &RunResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = BufWriter::new(File::create(dir.join("metrics.csv"))?);
    writeln!(w, "{METRICS_HEADER}")?;
    write_metrics(&mut w, result)?;
    w.flush()?;
    let json = serde_json::to_string_pretty(result).map_err(|e| crate::error::Error::Parse(e.to_string()))?;
    fs::write(dir.join("run.json"), json + "\n")?;
    Ok(())
}
