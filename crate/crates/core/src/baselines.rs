//! Reference schedulers.
//!
//! * FedAvg: greedy training, upload at the last slot of the epoch.
//! * FLDA: FedAvg's schedule with distillation epochs (odd `t`) whose uplink
//!   is cheaper and which leave the model untouched.
//! * MIFA: one session per epoch timed to finish just before the upload slot;
//!   the server keeps every client's latest update and reapplies the memory.
//! * CyCP: greedy training, capped random subset uploads at every group-final
//!   slot through a star relay that refreshes all clients.
//! * FedSeq: greedy training with FedBacys' group relay.

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::battery::Energy;
use crate::error::Result;
use crate::fedbacys::{CyclicRelay, LaunchPolicy};
use crate::model::{Algorithm, ClientState, ClockPosition, ExperimentConfig, ModelVector};
use crate::rng::{stream_rng, Stream};
use crate::sim::{accumulate, Action, AggregationEvent, Protocol, Upload, World};

/// Builds the protocol for `cfg.algorithm`.
pub fn protocol_for(cfg: &ExperimentConfig, dim: usize) -> Box<dyn Protocol> {
    match cfg.algorithm {
        Algorithm::Fedavg => Box::new(ServerAveraging::fedavg(dim)),
        Algorithm::Flda => Box::new(ServerAveraging::flda(cfg, dim)),
        Algorithm::Mifa => Box::new(Mifa::new(cfg.num_clients, dim)),
        Algorithm::CycpSgd => Box::new(Cycp::new(cfg, dim)),
        Algorithm::Fedseq => Box::new(CyclicRelay::new(cfg, dim, LaunchPolicy::Greedy)),
        Algorithm::Fedbacys => Box::new(CyclicRelay::fedbacys(cfg, dim)),
        Algorithm::FedbacysOdd => Box::new(CyclicRelay::fedbacys_odd(cfg, dim)),
    }
}

fn is_last_slot(pos: &ClockPosition, cfg: &ExperimentConfig) -> bool {
    pos.offset + 1 == cfg.slots_per_epoch
}

/// FedAvg decision: upload at the epoch's last slot, otherwise train
/// whenever a full session is affordable.
pub fn fedavg_step(client: &ClientState, available: Energy, uplink: Energy, pos: &ClockPosition, cfg: &ExperimentConfig)
    -> Action {
    if client.is_busy() {
        return Action::ContinueTraining;
    }
    if is_last_slot(pos, cfg) && client.pending_update.is_some() && available >= uplink {
        Action::Transmit
    } else if available >= cfg.kappa_energy() {
        Action::StartTraining
    } else {
        Action::Idle
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FldaPhase {
    Learning,
    Distillation,
}

impl FldaPhase {
    pub fn for_epoch(epoch: u64) -> Self {
        if epoch % 2 == 1 {
            FldaPhase::Distillation
        } else {
            FldaPhase::Learning
        }
    }
}

/// FedAvg and FLDA.
pub struct ServerAveraging {
    global: ModelVector,
    distill_cost: Option<Energy>,
}

impl ServerAveraging {
    pub fn fedavg(dim: usize) -> Self {
        ServerAveraging {
            global: ModelVector::zeros(dim),
            distill_cost: None,
        }
    }

    pub fn flda(cfg: &ExperimentConfig, dim: usize) -> Self {
        ServerAveraging {
            global: ModelVector::zeros(dim),
            distill_cost: Some(Energy::from_f64(cfg.energy.fd_tx_cost)),
        }
    }

    fn phase(&self, epoch: u64) -> FldaPhase {
        match self.distill_cost {
            Some(_) => FldaPhase::for_epoch(epoch),
            None => FldaPhase::Learning,
        }
    }
}

impl Protocol for ServerAveraging {
    fn begin_slot(&mut self, world: &mut World<'_>, pos: &ClockPosition) -> Result<()> {
        if pos.offset == 0 {
            world.broadcast_all(&self.global);
        }
        Ok(())
    }

    fn decide(&mut self, client: &mut ClientState, available: Energy, pos: &ClockPosition, cfg: &ExperimentConfig)
        -> Action {
        fedavg_step(client, available, self.uplink_cost(pos), pos, cfg)
    }

    fn uplink_cost(&self, pos: &ClockPosition) -> Energy {
        match (self.phase(pos.epoch), self.distill_cost) {
            (FldaPhase::Distillation, Some(c)) => c,
            _ => Energy::UNIT,
        }
    }

    fn end_slot(&mut self, world: &mut World<'_>, pos: &ClockPosition, uploads: Vec<Upload>)
        -> Result<Option<AggregationEvent>> {
        if uploads.is_empty() || self.phase(pos.epoch) == FldaPhase::Distillation {
            return Ok(None);
        }
        let w = 1.0 / world.cfg.num_clients as f64;
        let before = self.global.clone();
        accumulate(&mut self.global, &uploads, w);
        Ok(Some(AggregationEvent {
            slot: pos.slot,
            epoch: pos.epoch,
            group: None,
            before,
            after: self.global.clone(),
            weight: w,
            contributions: uploads,
        }))
    }

    fn global_model(&self) -> &ModelVector {
        &self.global
    }
}

/// Latest update received from each client.
#[derive(Clone, Debug, PartialEq)]
pub struct MifaMemory {
    latest: Vec<Option<ModelVector>>,
}

impl MifaMemory {
    pub fn new(clients: usize) -> Self {
        MifaMemory {
            latest: vec![None; clients],
        }
    }

    pub fn store(&mut self, client: usize, delta: ModelVector) {
        self.latest[client] = Some(delta);
    }

    pub fn get(&self, client: usize) -> Option<&ModelVector> {
        self.latest[client].as_ref()
    }

    pub fn len(&self) -> usize {
        self.latest.iter().flatten().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `x + weight * sum(memory)` in ascending client order.
    pub fn apply(&self, x: &ModelVector, weight: f64) -> ModelVector {
        let mut y = x.clone();
        for d in self.latest.iter().flatten() {
            y.axpy(weight, d);
        }
        y
    }
}

/// Launch offset that makes a session end right before the upload slot.
pub fn mifa_launch_offset(cfg: &ExperimentConfig) -> u64 {
    let s = cfg.slots_per_epoch;
    (2 * s - cfg.kappa - 1) % s
}

pub fn mifa_step(client: &ClientState, available: Energy, pos: &ClockPosition, cfg: &ExperimentConfig) -> Action {
    if client.is_busy() {
        return Action::ContinueTraining;
    }
    if is_last_slot(pos, cfg) && client.pending_update.is_some() && available >= Energy::UNIT {
        Action::Transmit
    } else if pos.offset == mifa_launch_offset(cfg) && client.pending_update.is_none() && available >= cfg.kappa_energy()
    {
        Action::StartTraining
    } else {
        Action::Idle
    }
}

pub struct Mifa {
    global: ModelVector,
    memory: MifaMemory,
}

impl Mifa {
    pub fn new(clients: usize, dim: usize) -> Self {
        Mifa {
            global: ModelVector::zeros(dim),
            memory: MifaMemory::new(clients),
        }
    }

    pub fn memory(&self) -> &MifaMemory {
        &self.memory
    }
}

impl Protocol for Mifa {
    fn begin_slot(&mut self, world: &mut World<'_>, pos: &ClockPosition) -> Result<()> {
        if pos.offset == 0 {
            world.broadcast_all(&self.global);
        }
        Ok(())
    }

    fn decide(&mut self, client: &mut ClientState, available: Energy, pos: &ClockPosition, cfg: &ExperimentConfig)
        -> Action {
        mifa_step(client, available, pos, cfg)
    }

    fn end_slot(&mut self, world: &mut World<'_>, pos: &ClockPosition, uploads: Vec<Upload>)
        -> Result<Option<AggregationEvent>> {
        if !is_last_slot(pos, world.cfg) {
            return Ok(None);
        }
        for u in &uploads {
            self.memory.store(u.client, u.delta.clone());
        }
        let w = 1.0 / world.cfg.num_clients as f64;
        let before = self.global.clone();
        self.global = self.memory.apply(&before, w);
        Ok(Some(AggregationEvent {
            slot: pos.slot,
            epoch: pos.epoch,
            group: None,
            before,
            after: self.global.clone(),
            weight: w,
            contributions: uploads,
        }))
    }

    fn global_model(&self) -> &ModelVector {
        &self.global
    }
}

/// Greedy training; uploads only when selected.
pub fn cycp_step(client: &ClientState, available: Energy, selected: bool, cfg: &ExperimentConfig) -> Action {
    if client.is_busy() {
        return Action::ContinueTraining;
    }
    if selected && client.pending_update.is_some() && available >= Energy::UNIT {
        Action::Transmit
    } else if client.pending_update.is_none() && available >= cfg.kappa_energy() {
        Action::StartTraining
    } else {
        Action::Idle
    }
}

/// Cyclic client participation with a capped random subset per round.
pub struct Cycp {
    global: ModelVector,
    cap: usize,
    selected: Vec<bool>,
    select_rng: ChaCha8Rng,
    hub_rng: ChaCha8Rng,
}

impl Cycp {
    pub fn new(cfg: &ExperimentConfig, dim: usize) -> Self {
        Cycp {
            global: ModelVector::zeros(dim),
            cap: (cfg.num_clients / cfg.num_groups).max(1),
            selected: vec![false; cfg.num_clients],
            select_rng: stream_rng(cfg.seed, Stream::Selection, 0),
            hub_rng: stream_rng(cfg.seed, Stream::Hubs, 0),
        }
    }

    pub fn cap(&self) -> usize {
        self.cap
    }
}

impl Protocol for Cycp {
    fn begin_slot(&mut self, world: &mut World<'_>, pos: &ClockPosition) -> Result<()> {
        self.selected.iter_mut().for_each(|s| *s = false);
        if !pos.is_group_final {
            return Ok(());
        }
        let ready: Vec<usize> = (0..world.clients.len())
            .filter(|&i| {
                let c = &world.clients[i];
                !c.is_busy() && c.pending_update.is_some() && world.available(i) >= Energy::UNIT
            })
            .collect();
        if ready.len() <= self.cap {
            for &i in &ready {
                self.selected[i] = true;
            }
        } else {
            for k in sample(&mut self.select_rng, ready.len(), self.cap) {
                self.selected[ready[k]] = true;
            }
        }
        Ok(())
    }

    fn decide(&mut self, client: &mut ClientState, available: Energy, _pos: &ClockPosition, cfg: &ExperimentConfig)
        -> Action {
        cycp_step(client, available, self.selected[client.id], cfg)
    }

    fn end_slot(&mut self, world: &mut World<'_>, pos: &ClockPosition, uploads: Vec<Upload>)
        -> Result<Option<AggregationEvent>> {
        if uploads.is_empty() {
            return Ok(None);
        }
        let w = 1.0 / world.cfg.num_clients as f64;
        let before = self.global.clone();
        accumulate(&mut self.global, &uploads, w);
        let hub = uploads.choose(&mut self.hub_rng).expect("non-empty").client;
        if world.pay_relay(hub) {
            world.broadcast_all(&self.global);
        }
        Ok(Some(AggregationEvent {
            slot: pos.slot,
            epoch: pos.epoch,
            group: Some(pos.group),
            before,
            after: self.global.clone(),
            weight: w,
            contributions: uploads,
        }))
    }

    fn global_model(&self) -> &ModelVector {
        &self.global
    }
}
