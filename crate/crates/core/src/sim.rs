//! Slot-synchronous simulation engine shared by every scheduler.
//!
//! Each slot runs in four phases:
//!
//! 1. every client draws its charge arrival from its own stream;
//! 2. the protocol's `begin_slot` hook applies server-side effects that must be
//!    visible to this slot's decisions (broadcasts, hub rotation, selections);
//! 3. clients act in ascending id order: busy clients continue training, free
//!    clients take the protocol's decision, and the battery ledger settles;
//! 4. the protocol's `end_slot` hook aggregates this slot's uploads.
//!
//! Cross-client effects therefore only appear at slot boundaries, and
//! aggregation always sums contributions in ascending client id.

use std::time::{Duration, Instant};

use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::battery::{charge_draw, ActionClass, Energy, EnergyLedger};
use crate::error::{Error, Result};
use crate::model::{ClientState, ClockPosition, ExperimentConfig, MetricsRecord, ModelVector};
use crate::objectives::Objective;
use crate::rng::{client_streams, Stream};

/// What one client did in one slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Action {
    Idle,
    StartTraining,
    ContinueTraining,
    Transmit,
}

impl Action {
    pub fn is_training(self) -> bool {
        matches!(self, Action::StartTraining | Action::ContinueTraining)
    }
}

/// A local update delivered to a hub or the server.
#[derive(Clone, Debug, PartialEq)]
pub struct Upload {
    pub client: usize,
    pub delta: ModelVector,
    /// Model the session trained against.
    pub base: ModelVector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregationEvent {
    pub slot: u64,
    pub epoch: u64,
    /// Group index for group-cyclic schedulers.
    pub group: Option<usize>,
    pub before: ModelVector,
    pub after: ModelVector,
    /// Weight applied to each contribution.
    pub weight: f64,
    pub contributions: Vec<Upload>,
}

/// Hooks for tests and tracing; all methods default to no-ops.
pub trait Observer {
    fn on_slot(&mut self, _pos: &ClockPosition, _clients: &[ClientState], _actions: &[Action], _ledger: &EnergyLedger) {}

    fn on_aggregation(&mut self, _event: &AggregationEvent) {}
}

pub struct NoopObserver;

impl Observer for NoopObserver {}

/// Mutable simulation state that protocols may touch.
pub struct World<'a> {
    pub cfg: &'a ExperimentConfig,
    pub objective: &'a Objective,
    pub clients: Vec<ClientState>,
    pub ledger: EnergyLedger,
    /// Charge arrivals of the current slot.
    pub charged: Vec<bool>,
}

impl World<'_> {
    /// Energy a client can spend in the current slot (charge-then-decide).
    pub fn available(&self, client: usize) -> Energy {
        self.clients[client].battery + if self.charged[client] { Energy::UNIT } else { Energy::ZERO }
    }

    /// Charges a hub for a relay. Declined when the hub could no longer
    /// finish an ongoing session afterwards.
    pub fn pay_relay(&mut self, hub: usize) -> bool {
        let cost = Energy::from_f64(self.cfg.energy.hub_relay_cost);
        if cost == Energy::ZERO {
            return true;
        }
        let client = &mut self.clients[hub];
        let reserve = Energy::units(client.busy_remaining);
        if client.battery - cost < reserve {
            return false;
        }
        self.ledger
            .spend(&mut client.battery, ActionClass::HubRelay, cost)
            .is_ok()
    }

    pub fn broadcast(&mut self, model: &ModelVector, members: impl IntoIterator<Item = usize>) {
        for j in members {
            self.clients[j].reference_model = model.clone();
        }
    }

    pub fn broadcast_all(&mut self, model: &ModelVector) {
        for c in &mut self.clients {
            c.reference_model = model.clone();
        }
    }
}

/// A scheduling policy driven by the engine.
pub trait Protocol {
    /// Called once before slot 0.
    fn init(&mut self, _world: &mut World<'_>) -> Result<()> {
        Ok(())
    }

    fn begin_slot(&mut self, _world: &mut World<'_>, _pos: &ClockPosition) -> Result<()> {
        Ok(())
    }

    /// Decision for a free client: `Idle`, `StartTraining` or `Transmit`.
    fn decide(&mut self, client: &mut ClientState, available: Energy, pos: &ClockPosition, cfg: &ExperimentConfig)
        -> Action;

    fn uplink_cost(&self, _pos: &ClockPosition) -> Energy {
        Energy::UNIT
    }

    fn end_slot(&mut self, world: &mut World<'_>, pos: &ClockPosition, uploads: Vec<Upload>)
        -> Result<Option<AggregationEvent>>;

    /// The server-side model reported in metrics.
    fn global_model(&self) -> &ModelVector;
}

#[derive(Clone, Debug, Serialize)]
pub struct RunResult {
    pub config: ExperimentConfig,
    pub metrics: Vec<MetricsRecord>,
    pub ledger: EnergyLedger,
    pub final_batteries: Vec<Energy>,
    pub final_model: ModelVector,
    #[serde(serialize_with = "as_secs")]
    pub wall_time: Duration,
}

fn as_secs<S: serde::Serializer>(d: &Duration, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64())
}

impl RunResult {
    pub fn total_energy(&self) -> f64 {
        self.ledger.consumed_total.as_f64()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.metrics.last().map(|m| m.global_loss)
    }

    pub fn final_dist_to_opt(&self) -> Option<f64> {
        self.metrics.last().and_then(|m| m.dist_to_opt)
    }
}

#[derive(Default)]
struct EpochCounters {
    launched: u64,
    uploaded: u64,
    participants: u64,
}

/// Runs `cfg.slots_per_epoch * cfg.epochs` slots of `protocol`.
pub fn simulate(
    cfg: &ExperimentConfig,
    objective: &Objective,
    protocol: &mut dyn Protocol,
    observer: &mut dyn Observer,
) -> Result<RunResult> {
    let started = Instant::now();
    let n = cfg.num_clients;
    let kappa = cfg.kappa_energy();
    let capacity = cfg.capacity();
    let initial = Energy::units(cfg.energy.initial_battery);
    let x0 = ModelVector::zeros(objective.dim());
    let optimum = objective.global_optimum();

    let mut world = World {
        cfg,
        objective,
        clients: (0..n).map(|i| ClientState::new(i, 0, initial, x0.clone())).collect(),
        ledger: EnergyLedger::default(),
        charged: vec![false; n],
    };
    let mut charging: Vec<ChaCha8Rng> = client_streams(cfg.seed, Stream::Charging, n);
    let mut noise: Vec<ChaCha8Rng> = client_streams(cfg.seed, Stream::Noise, n);
    protocol.init(&mut world)?;

    let clock = cfg.clock();
    let mut actions = vec![Action::Idle; n];
    let mut last_upload_epoch: Vec<Option<u64>> = vec![None; n];
    let mut counters = EpochCounters::default();
    let mut metrics = Vec::with_capacity(cfg.epochs as usize);

    for s in 0..cfg.total_slots() {
        let pos = clock.at(s);
        for (flag, rng) in world.charged.iter_mut().zip(charging.iter_mut()) {
            *flag = charge_draw(rng, cfg.delta);
        }
        protocol.begin_slot(&mut world, &pos)?;

        let mut uploads = Vec::new();
        for i in 0..n {
            let available = world.available(i);
            let charged = world.charged[i];
            let mut action = if world.clients[i].is_busy() {
                Action::ContinueTraining
            } else {
                protocol.decide(&mut world.clients[i], available, &pos, cfg)
            };
            let client = &mut world.clients[i];

            // declined actions degrade to idle
            if action == Action::StartTraining && available < kappa {
                action = Action::Idle;
            }
            let uplink = protocol.uplink_cost(&pos);
            if action == Action::Transmit && (client.pending_update.is_none() || available < uplink) {
                action = Action::Idle;
            }

            match action {
                Action::StartTraining | Action::ContinueTraining => {
                    if action == Action::StartTraining {
                        client.training_snapshot = client.reference_model_at_training_start();
                        client.pending_update = None;
                        client.opportunity_open = false;
                        client.busy_remaining = cfg.kappa;
                        client.sessions_launched += 1;
                        counters.launched += 1;
                    }
                    world
                        .ledger
                        .settle(&mut client.battery, charged, capacity, Some((ActionClass::Training, Energy::UNIT)))?;
                    client.busy_remaining -= 1;
                    if client.busy_remaining == 0 {
                        let delta = objective
                            .local_train(i, &client.training_snapshot, cfg.gamma, cfg.local_steps, &mut noise[i])
                            .map_err(|e| match e {
                                Error::Divergence { client, .. } => Error::RunDiverged { epoch: pos.epoch, client },
                                other => other,
                            })?;
                        client.pending_update = Some(delta);
                    }
                }
                Action::Transmit => {
                    world
                        .ledger
                        .settle(&mut client.battery, charged, capacity, Some((ActionClass::MemberUplink, uplink)))?;
                    client.opportunity_open = false;
                    uploads.push(Upload {
                        client: i,
                        delta: client.pending_update.take().expect("checked above"),
                        base: client.training_snapshot.clone(),
                    });
                    counters.uploaded += 1;
                    if last_upload_epoch[i] != Some(pos.epoch) {
                        last_upload_epoch[i] = Some(pos.epoch);
                        counters.participants += 1;
                    }
                }
                Action::Idle => {
                    world.ledger.settle(&mut client.battery, charged, capacity, None)?;
                }
            }
            actions[i] = action;
        }

        if let Some(event) = protocol.end_slot(&mut world, &pos, uploads)? {
            observer.on_aggregation(&event);
        }
        observer.on_slot(&pos, &world.clients, &actions, &world.ledger);

        if clock.is_epoch_end(s) {
            let x = protocol.global_model();
            if !x.is_finite() {
                return Err(Error::RunDiverged { epoch: pos.epoch, client: 0 });
            }
            metrics.push(MetricsRecord {
                epoch: pos.epoch,
                global_loss: objective.global_loss(x)?,
                dist_to_opt: optimum.as_ref().map(|o| x.distance(o)),
                cum_energy: world.ledger.consumed_total.as_f64(),
                trainings_launched: counters.launched,
                updates_uploaded: counters.uploaded,
                participants: counters.participants,
            });
            counters = EpochCounters::default();
        }
    }

    Ok(RunResult {
        config: cfg.clone(),
        metrics,
        final_batteries: world.clients.iter().map(|c| c.battery).collect(),
        ledger: world.ledger,
        final_model: protocol.global_model().clone(),
        wall_time: started.elapsed(),
    })
}

/// `model += weight * sum(deltas)` in ascending client order.
pub(crate) fn accumulate(model: &mut ModelVector, uploads: &[Upload], weight: f64) {
    for u in uploads {
        model.axpy(weight, &u.delta);
    }
}
