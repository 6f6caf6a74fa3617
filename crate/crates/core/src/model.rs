//! Shared domain types, slot clock arithmetic and configuration checks.

use std::fmt;
use std::ops::{Index, IndexMut};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analytics;
use crate::battery::Energy;
use crate::error::{Error, Result};
use crate::objectives::ObjectiveSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Fedbacys,
    FedbacysOdd,
    Fedavg,
    CycpSgd,
    Mifa,
    Fedseq,
    Flda,
}

impl Algorithm {
    /// Display order: FedAvg, CyCP-SGD, MIFA, FedSeq, FLDA, FedBacys, FedBacys-Odd.
    pub const ALL: [Algorithm; 7] = [
        Algorithm::Fedavg,
        Algorithm::CycpSgd,
        Algorithm::Mifa,
        Algorithm::Fedseq,
        Algorithm::Flda,
        Algorithm::Fedbacys,
        Algorithm::FedbacysOdd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Fedbacys => "fedbacys",
            Algorithm::FedbacysOdd => "fedbacys-odd",
            Algorithm::Fedavg => "fedavg",
            Algorithm::CycpSgd => "cycp-sgd",
            Algorithm::Mifa => "mifa",
            Algorithm::Fedseq => "fedseq",
            Algorithm::Flda => "flda",
        }
    }

    /// Whether the scheduler looks at `G` at all.
    pub fn uses_groups(self) -> bool {
        matches!(
            self,
            Algorithm::Fedbacys | Algorithm::FedbacysOdd | Algorithm::CycpSgd | Algorithm::Fedseq
        )
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown algorithm '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyCosts {
    /// Units a hub pays per multicast or server upload.
    #[serde(default)]
    pub hub_relay_cost: f64,
    /// Units per uplink during an FLDA distillation epoch (`d_FD / d_FL`).
    #[serde(default = "default_fd_tx_cost")]
    pub fd_tx_cost: f64,
    /// Battery level of every client at slot 0.
    #[serde(default)]
    pub initial_battery: u64,
}

fn default_fd_tx_cost() -> f64 {
    0.1
}

impl Default for EnergyCosts {
    fn default() -> Self {
        EnergyCosts {
            hub_relay_cost: 0.0,
            fd_tx_cost: default_fd_tx_cost(),
            initial_battery: 0,
        }
    }
}

fn default_true() -> bool {
    true
}

/// All protocol constants for one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    #[serde(rename = "N")]
    pub num_clients: usize,
    #[serde(rename = "G")]
    pub num_groups: usize,
    /// Slots per epoch.
    #[serde(rename = "S")]
    pub slots_per_epoch: u64,
    #[serde(rename = "T")]
    pub epochs: u64,
    /// Training cost in battery units, equal to the session length in slots.
    pub kappa: u64,
    pub delta: f64,
    #[serde(rename = "E_max")]
    pub battery_capacity: u64,
    pub gamma: f64,
    /// Local gradient steps per training session.
    #[serde(rename = "B")]
    pub local_steps: usize,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub seed: u64,
    /// FedBacys-Odd launches on odd-numbered opportunities when true, even otherwise.
    #[serde(default = "default_true")]
    pub odd_first: bool,
    pub objective: ObjectiveSpec,
    #[serde(default)]
    pub energy: EnergyCosts,
}

impl Default for ExperimentConfig {
    /// 100 clients, 500 epochs of 30 slots, `kappa = 20`, `G = 5`, `delta = 1.0`.
    fn default() -> Self {
        ExperimentConfig {
            algorithm: Algorithm::Fedbacys,
            num_clients: 100,
            num_groups: 5,
            slots_per_epoch: 30,
            epochs: 500,
            kappa: 20,
            delta: 1.0,
            battery_capacity: 25,
            gamma: 0.05,
            local_steps: 5,
            sigma: 0.1,
            seed: 1,
            odd_first: true,
            objective: ObjectiveSpec::default(),
            energy: EnergyCosts::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Group-round length `R = floor(S / G)`.
    pub fn group_round(&self) -> u64 {
        self.slots_per_epoch / self.num_groups.max(1) as u64
    }

    pub fn total_slots(&self) -> u64 {
        self.slots_per_epoch * self.epochs
    }

    pub fn clock(&self) -> SlotClock {
        SlotClock::new(self.slots_per_epoch, self.num_groups)
    }

    pub fn capacity(&self) -> Energy {
        Energy::units(self.battery_capacity)
    }

    pub fn kappa_energy(&self) -> Energy {
        Energy::units(self.kappa)
    }
}

/// Epoch/group arithmetic for a fixed `(S, G)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SlotClock {
    pub slots_per_epoch: u64,
    pub groups: usize,
    pub round: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClockPosition {
    pub slot: u64,
    pub epoch: u64,
    /// Offset within the epoch, `s mod S`.
    pub offset: u64,
    pub group: usize,
    /// Last slot of the group's upload window.
    pub is_group_final: bool,
    /// Trailing slot past `G * R` when `G` does not divide `S`.
    pub is_dead: bool,
}

impl SlotClock {
    pub fn new(slots_per_epoch: u64, groups: usize) -> Self {
        let groups = groups.max(1);
        SlotClock {
            slots_per_epoch,
            groups,
            round: slots_per_epoch / groups as u64,
        }
    }

    pub fn at(&self, slot: u64) -> ClockPosition {
        let s_len = self.slots_per_epoch.max(1);
        let r = self.round.max(1);
        let offset = slot % s_len;
        let raw_group = offset / r;
        let is_dead = raw_group >= self.groups as u64;
        let group = raw_group.min(self.groups as u64 - 1) as usize;
        ClockPosition {
            slot,
            epoch: slot / s_len,
            offset,
            group,
            is_group_final: !is_dead && offset % r == r - 1,
            is_dead,
        }
    }

    pub fn is_epoch_start(&self, slot: u64) -> bool {
        slot.is_multiple_of(self.slots_per_epoch)
    }

    pub fn is_epoch_end(&self, slot: u64) -> bool {
        slot % self.slots_per_epoch == self.slots_per_epoch - 1
    }
}

/// `(t, g, is_group_final)` for slot `s`.
pub fn clock_decompose(slot: u64, cfg: &ExperimentConfig) -> (u64, usize, bool) {
    let p = cfg.clock().at(slot);
    (p.epoch, p.group, p.is_group_final)
}

/// A d-dimensional parameter vector (model, update or gradient).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelVector(Vec<f64>);

impl ModelVector {
    pub fn zeros(dim: usize) -> Self {
        ModelVector(vec![0.0; dim])
    }

    pub fn from_vec(v: Vec<f64>) -> Self {
        ModelVector(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &ModelVector) {
        debug_assert_eq!(self.dim(), other.dim());
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += alpha * b;
        }
    }

    pub fn sub(&self, other: &ModelVector) -> ModelVector {
        ModelVector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn dot(&self, other: &ModelVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(&self, other: &ModelVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs_diff(&self, other: &ModelVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() == expected {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected,
                actual: self.dim(),
            })
        }
    }
}

impl Index<usize> for ModelVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for ModelVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl From<Vec<f64>> for ModelVector {
    fn from(v: Vec<f64>) -> Self {
        ModelVector(v)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClientState {
    pub id: usize,
    pub group: usize,
    pub battery: Energy,
    /// Slots left in the current training session; 0 means free.
    pub busy_remaining: u64,
    /// Completed, not yet uploaded local update.
    pub pending_update: Option<ModelVector>,
    /// Learning opportunities seen so far (odd-chance policy).
    pub chance_counter: u64,
    /// Set while the client sits inside a run of consecutive eligible slots.
    pub opportunity_open: bool,
    /// Latest model received from the server or a hub.
    pub reference_model: ModelVector,
    /// Copy of `reference_model` taken at session launch.
    pub training_snapshot: ModelVector,
    pub sessions_launched: u64,
}

impl ClientState {
    pub fn new(id: usize, group: usize, battery: Energy, model: ModelVector) -> Self {
        ClientState {
            id,
            group,
            battery,
            busy_remaining: 0,
            pending_update: None,
            chance_counter: 0,
            opportunity_open: false,
            training_snapshot: model.clone(),
            reference_model: model,
            sessions_launched: 0,
        }
    }

    pub fn is_busy(&self) -> bool {
        self.busy_remaining > 0
    }

    /// The model a session launching now trains against.
    pub fn reference_model_at_training_start(&self) -> ModelVector {
        self.reference_model.clone()
    }
}

/// Per-epoch observables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: u64,
    pub global_loss: f64,
    /// Distance to the analytic optimum, when the objective has one.
    pub dist_to_opt: Option<f64>,
    pub cum_energy: f64,
    pub trainings_launched: u64,
    pub updates_uploaded: u64,
    pub participants: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
    pub notes: Vec<String>,
    /// `Pr(Bin(S, delta) >= kappa)`.
    pub participation_lower_bound: f64,
    /// `1 / (6 sqrt(N))`.
    pub participation_threshold: f64,
    pub participation_condition_holds: bool,
    /// `1 / (12 B L N)` when `L` is known.
    pub gamma_bound: Option<f64>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn into_result(self) -> Result<Self> {
        if self.is_ok() {
            Ok(self)
        } else {
            Err(Error::ConfigRejected(self.errors))
        }
    }
}

/// Hard errors refuse the run; the convergence hypotheses only produce warnings.
pub fn validate_config(cfg: &ExperimentConfig) -> ValidationReport {
    let mut errors = Vec::new();
    let mut warnings = Vec::new();
    let mut notes = Vec::new();

    if cfg.num_clients == 0 {
        errors.push("N must be positive".to_string());
    }
    if cfg.num_groups == 0 {
        errors.push("G must be positive".to_string());
    } else if cfg.num_groups > cfg.num_clients {
        errors.push(format!("G = {} exceeds N = {}", cfg.num_groups, cfg.num_clients));
    }
    if cfg.slots_per_epoch == 0 {
        errors.push("S must be positive".to_string());
    }
    if cfg.kappa == 0 {
        errors.push("kappa must be positive".to_string());
    }
    if cfg.slots_per_epoch < cfg.kappa {
        errors.push(format!("S = {} is smaller than kappa = {}", cfg.slots_per_epoch, cfg.kappa));
    }
    if cfg.num_groups > 0 && cfg.group_round() == 0 {
        errors.push(format!(
            "group round R = floor(S/G) = floor({}/{}) is zero",
            cfg.slots_per_epoch, cfg.num_groups
        ));
    }
    if !(0.0..=1.0).contains(&cfg.delta) {
        errors.push(format!("delta = {} is outside [0, 1]", cfg.delta));
    }
    if cfg.battery_capacity == 0 {
        errors.push("E_max must be positive".to_string());
    }
    if !(cfg.gamma > 0.0 && cfg.gamma.is_finite()) {
        errors.push(format!("gamma = {} must be positive", cfg.gamma));
    }
    if cfg.local_steps == 0 {
        errors.push("B must be positive".to_string());
    }
    if !(cfg.sigma >= 0.0 && cfg.sigma.is_finite()) {
        errors.push(format!("sigma = {} must be nonnegative", cfg.sigma));
    }
    if !(cfg.energy.hub_relay_cost >= 0.0 && cfg.energy.hub_relay_cost.is_finite()) {
        errors.push("hub_relay_cost must be nonnegative".to_string());
    }
    if !(cfg.energy.fd_tx_cost > 0.0 && cfg.energy.fd_tx_cost <= 1.0) {
        errors.push(format!("fd_tx_cost = {} must lie in (0, 1]", cfg.energy.fd_tx_cost));
    }
    if cfg.energy.initial_battery > cfg.battery_capacity {
        errors.push("initial_battery exceeds E_max".to_string());
    }
    if let Err(e) = cfg.objective.check() {
        errors.push(e.to_string());
    }
    if cfg.battery_capacity < cfg.kappa {
        warnings.push(format!(
            "E_max = {} < kappa = {}: a full battery cannot pay for a session",
            cfg.battery_capacity, cfg.kappa
        ));
    }

    let threshold = analytics::participation_threshold(cfg.num_clients.max(1));
    let lower = if (0.0..=1.0).contains(&cfg.delta) {
        analytics::binom_tail(cfg.kappa, cfg.slots_per_epoch, cfg.delta).unwrap_or(0.0)
    } else {
        0.0
    };
    let holds = lower >= threshold;
    if !holds {
        warnings.push(format!(
            "participation condition violated: Pr(Bin(S, delta) >= kappa) = {lower:.6e} < 1/(6 sqrt N) = {threshold:.6e}"
        ));
    }

    let gamma_bound = cfg.objective.smoothness().map(|l| {
        1.0 / (12.0 * cfg.local_steps.max(1) as f64 * l * cfg.num_clients.max(1) as f64)
    });
    match gamma_bound {
        Some(bound) if cfg.gamma > bound => warnings.push(format!(
            "gamma = {} exceeds 1/(12 B L N) = {bound:.6e}",
            cfg.gamma
        )),
        Some(_) => {}
        None => notes.push("smoothness constant unknown for this objective; gamma check skipped".to_string()),
    }

    ValidationReport {
        errors,
        warnings,
        notes,
        participation_lower_bound: lower,
        participation_threshold: threshold,
        participation_condition_holds: holds,
        gamma_bound,
    }
}
