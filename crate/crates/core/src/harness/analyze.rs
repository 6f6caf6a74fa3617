use std::fmt;

use serde::Serialize;

use super::output::fmt_sig9;
use crate::analytics::{binom_tail, minimal_s, participation_threshold, ParticipationBound};
use crate::error::Result;
use crate::model::ExperimentConfig;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnalyzeRequest {
    pub num_clients: usize,
    pub num_groups: usize,
    pub slots_per_epoch: u64,
    pub kappa: u64,
    pub delta: f64,
    pub epsilon: Option<f64>,
    pub battery_capacity: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub num_clients: usize,
    pub slots_per_epoch: u64,
    pub kappa: u64,
    pub delta: f64,
    pub group_round: u64,
    pub bound: ParticipationBound,
    pub condition_holds: bool,
    pub epsilon: Option<f64>,
    /// `None` when no `S` works (e.g. `delta = 0`).
    pub minimal_s: Option<u64>,
    /// Smallest `S` meeting the participation condition for this `N`.
    pub boundary_s: Option<u64>,
}

pub fn analyze(req: &AnalyzeRequest) -> Result<AnalysisReport> {
    let cfg = ExperimentConfig {
        num_clients: req.num_clients,
        num_groups: req.num_groups,
        slots_per_epoch: req.slots_per_epoch,
        kappa: req.kappa,
        delta: req.delta,
        battery_capacity: req.battery_capacity,
        ..ExperimentConfig::default()
    };
    let bound = ParticipationBound::compute(&cfg)?;
    let threshold = participation_threshold(req.num_clients.max(1));
    let tail = binom_tail(req.kappa, req.slots_per_epoch, req.delta)?;
    let minimal = match req.epsilon {
        Some(eps) => minimal_s(req.kappa, req.delta, eps).ok(),
        None => None,
    };
    Ok(AnalysisReport {
        num_clients: req.num_clients,
        slots_per_epoch: req.slots_per_epoch,
        kappa: req.kappa,
        delta: req.delta,
        group_round: cfg.group_round(),
        bound,
        condition_holds: tail >= threshold,
        epsilon: req.epsilon,
        minimal_s: minimal,
        boundary_s: minimal_s(req.kappa, req.delta, threshold).ok(),
    })
}

impl fmt::Display for AnalysisReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "N = {}  S = {}  kappa = {}  delta = {}  R = {}",
            self.num_clients,
            self.slots_per_epoch,
            self.kappa,
            fmt_sig9(self.delta),
            self.group_round
        )?;
        writeln!(f, "start level m  p(m)")?;
        for (m, p) in self.bound.p_of_m.iter().enumerate().take(self.kappa as usize + 1) {
            writeln!(f, "{m:>13}  {}", fmt_sig9(*p))?;
        }
        if self.bound.p_of_m.len() > self.kappa as usize + 1 {
            writeln!(f, "p(m) = 1 for every m >= kappa")?;
        }
        writeln!(f, "uniform lower bound Pr(Bin(S, delta) >= kappa) = {}", fmt_sig9(self.bound.uniform_lower))?;
        writeln!(f, "participation threshold 1/(6 sqrt N) = {}", fmt_sig9(self.bound.participation_threshold))?;
        writeln!(
            f,
            "convergence condition: {}",
            if self.condition_holds { "satisfied" } else { "violated" }
        )?;
        if let Some(eps) = self.epsilon {
            match self.minimal_s {
                Some(s) => writeln!(f, "minimal S for epsilon = {}: {s}", fmt_sig9(eps))?,
                None => writeln!(f, "minimal S for epsilon = {}: none", fmt_sig9(eps))?,
            }
        }
        match self.boundary_s {
            Some(s) => writeln!(f, "boundary S: {s}"),
            None => writeln!(f, "boundary S: none"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(kappa: u64, s: u64, delta: f64, epsilon: Option<f64>) -> AnalyzeRequest {
        AnalyzeRequest {
            num_clients: 100,
            num_groups: 5,
            slots_per_epoch: s,
            kappa,
            delta,
            epsilon,
            battery_capacity: 25,
        }
    }

    #[test]
    fn deterministic_charging() {
        let r = analyze(&req(20, 30, 1.0, Some(0.5))).unwrap();
        assert_eq!(r.minimal_s, Some(20));
        assert!(r.condition_holds);
        assert_eq!(r.boundary_s, Some(20));
        let text = r.to_string();
        assert!(text.contains("minimal S for epsilon = 0.5: 20"));
        assert!(text.contains("convergence condition: satisfied"));
    }

    #[test]
    fn never_charging() {
        let r = analyze(&req(20, 30, 0.0, Some(0.5))).unwrap();
        assert_eq!(r.minimal_s, None);
        assert!(!r.condition_holds);
        assert!(r.to_string().contains("boundary S: none"));
    }
}
