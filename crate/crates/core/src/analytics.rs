//! Binomial participation analytics.
//!
//! A client that enters the pre-training window of an epoch with battery `m`
//! triggers training with probability
//! `p(m) = Pr(min(m + X, E_max) >= kappa)`, `X ~ Bin(S, delta)`.
//! Its infimum over `m` is the uniform lower bound `Pr(Bin(S, delta) >= kappa)`,
//! which the convergence guarantee requires to be at least `1 / (6 sqrt(N))`.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ExperimentConfig, MetricsRecord};
use crate::par::{self, Execution};
use crate::rng::{stream_rng, Stream};

/// `ln C(n, m)` as a sum of `min(m, n - m)` log-ratios.
fn ln_choose(n: u64, m: u64) -> f64 {
    let m = m.min(n - m);
    let base = (n - m) as f64;
    (1..=m).map(|i| ((base + i as f64) / i as f64).ln()).sum()
}

/// `Pr(Bin(n, p) >= k)` for `0 <= k <= n + 1`.
///
/// The pmf is evaluated once at the mode in log space and the remaining terms
/// by the multiplicative ratio recurrence, walking away from the mode so every
/// term is a decreasing sequence. Tails above the mode are summed directly,
/// tails at or below it through the complement.
pub fn binom_tail(k: u64, n: u64, p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!("probability {p} outside [0, 1]")));
    }
    if k > n + 1 {
        return Err(Error::InvalidParameter(format!("k = {k} exceeds n + 1 = {}", n + 1)));
    }
    if k == 0 {
        return Ok(1.0);
    }
    if k == n + 1 || p == 0.0 {
        return Ok(0.0);
    }
    if p == 1.0 {
        return Ok(1.0);
    }

    let q = 1.0 - p;
    let mode = (((n + 1) as f64 * p).floor() as u64).min(n);
    let ln_mode = ln_choose(n, mode) + mode as f64 * p.ln() + (n - mode) as f64 * (-p).ln_1p();
    let pmf_mode = ln_mode.exp();
    let odds = p / q;

    if k > mode {
        let mut term = pmf_mode;
        let mut sum = 0.0;
        for j in mode..n {
            term *= (n - j) as f64 / (j + 1) as f64 * odds;
            if j + 1 >= k {
                sum += term;
            }
            if term == 0.0 {
                break;
            }
        }
        Ok(sum.clamp(0.0, 1.0))
    } else {
        let mut term = pmf_mode;
        let mut lower = 0.0;
        let mut j = mode;
        while j > 0 {
            term *= j as f64 / (n - j + 1) as f64 / odds;
            j -= 1;
            if j < k {
                lower += term;
            }
            if term == 0.0 {
                break;
            }
        }
        Ok((1.0 - lower).clamp(0.0, 1.0))
    }
}

/// `p(m)` for a client entering the pre-training window with `m` units.
pub fn participation_prob(m: u64, cfg: &ExperimentConfig) -> Result<f64> {
    if m > cfg.battery_capacity {
        return Err(Error::InvalidParameter(format!(
            "start level {m} exceeds E_max = {}",
            cfg.battery_capacity
        )));
    }
    if cfg.battery_capacity < cfg.kappa {
        return Ok(0.0);
    }
    binom_tail(cfg.kappa.saturating_sub(m), cfg.slots_per_epoch, cfg.delta)
}

/// `1 / (6 sqrt(N))`.
pub fn participation_threshold(clients: usize) -> f64 {
    1.0 / (6.0 * (clients as f64).sqrt())
}

/// `Pr(Bin(S, delta) >= kappa) >= 1 / (6 sqrt(N))`.
pub fn participation_condition(cfg: &ExperimentConfig) -> Result<bool> {
    Ok(binom_tail(cfg.kappa, cfg.slots_per_epoch, cfg.delta)? >= participation_threshold(cfg.num_clients))
}

/// Smallest `S >= kappa` with `Pr(Bin(S, delta) >= kappa) >= epsilon`.
pub fn minimal_s(kappa: u64, delta: f64, epsilon: f64) -> Result<u64> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidParameter(format!("epsilon = {epsilon} outside (0, 1)")));
    }
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::InvalidParameter(format!("delta = {delta} outside [0, 1]")));
    }
    if delta == 0.0 {
        return Err(Error::NoSolution("delta = 0: the battery never charges".into()));
    }
    let meets = |s: u64| binom_tail(kappa, s, delta).map(|v| v >= epsilon);
    if meets(kappa)? {
        return Ok(kappa);
    }
    // the tail is strictly increasing in S with limit 1
    let mut lo = kappa;
    let mut hi = kappa.max(1) * 2;
    while !meets(hi)? {
        lo = hi;
        hi = hi.checked_mul(2).ok_or_else(|| Error::NoSolution("S overflow".into()))?;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if meets(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParticipationBound {
    /// `p(m)` for `m = 0..=E_max`.
    pub p_of_m: Vec<f64>,
    pub uniform_lower: f64,
    pub participation_threshold: f64,
}

impl ParticipationBound {
    pub fn compute(cfg: &ExperimentConfig) -> Result<Self> {
        let p_of_m = (0..=cfg.battery_capacity)
            .map(|m| participation_prob(m, cfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(ParticipationBound {
            uniform_lower: p_of_m[0],
            p_of_m,
            participation_threshold: participation_threshold(cfg.num_clients),
        })
    }

    /// The bound holds with equality at its trivial value 1 for any `m >= kappa`.
    pub fn upper(&self) -> f64 {
        1.0
    }
}

/// Monte-Carlo estimate of `p(m)` by drawing the `S` charge arrivals directly.
/// Trials are split into fixed chunks with their own streams, so the estimate
/// is identical under either execution mode.
pub fn estimate_participation_prob(
    m: u64,
    cfg: &ExperimentConfig,
    trials: usize,
    seed: u64,
    exec: Execution,
) -> f64 {
    const CHUNK: usize = 4096;
    let chunks = trials.div_ceil(CHUNK);
    let hits: usize = par::map_range(chunks, exec, |c| {
        let mut rng = stream_rng(seed, Stream::MonteCarlo, c as u64);
        let count = CHUNK.min(trials - c * CHUNK);
        (0..count)
            .filter(|_| {
                let x = (0..cfg.slots_per_epoch).filter(|_| rng.gen_bool(cfg.delta)).count() as u64;
                (m + x).min(cfg.battery_capacity) >= cfg.kappa
            })
            .count()
    })
    .into_iter()
    .sum();
    hits as f64 / trials.max(1) as f64
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParticipationSeries {
    /// Fraction of clients whose update entered aggregation, per epoch.
    pub per_epoch: Vec<f64>,
    /// Mean of `per_epoch` after skipping `warmup` epochs.
    pub long_run_average: f64,
}

pub fn empirical_participation(metrics: &[MetricsRecord], clients: usize, warmup: usize) -> ParticipationSeries {
    let n = clients.max(1) as f64;
    let per_epoch: Vec<f64> = metrics
        .iter()
        .map(|r| (r.participants as f64 / n).clamp(0.0, 1.0))
        .collect();
    let tail = per_epoch.get(warmup..).unwrap_or(&[]);
    let long_run_average = if tail.is_empty() {
        0.0
    } else {
        tail.iter().sum::<f64>() / tail.len() as f64
    };
    ParticipationSeries {
        per_epoch,
        long_run_average,
    }
}

/// Ratio of training launches after `warmup` epochs, `numerator / denominator`.
pub fn launch_ratio(numerator: &[MetricsRecord], denominator: &[MetricsRecord], warmup: usize) -> f64 {
    let count = |m: &[MetricsRecord]| -> u64 {
        m.iter().skip(warmup).map(|r| r.trainings_launched).sum()
    };
    count(numerator) as f64 / count(denominator).max(1) as f64
}
