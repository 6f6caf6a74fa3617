//! Group-cyclic scheduling with battery-aware launch windows.
//!
//! Clients are split into `G` groups. Group `g` owns the slots
//! `[g*R, (g+1)*R)` of every epoch, and its last owned slot is the group-final
//! slot where members upload to the group hub. The hub adds the members'
//! updates to the running model and hands it to the next group's members;
//! after the last group the model goes back to the server.
//!
//! A client may launch a session only when it is affordable, it holds no
//! unsent update and the session would finish inside its own group's window
//! with at least one slot to spare for the upload.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::battery::Energy;
use crate::error::{Error, Result};
use crate::model::{ClientState, ClockPosition, ExperimentConfig, ModelVector};
use crate::rng::{stream_rng, Stream};
use crate::sim::{accumulate, Action, AggregationEvent, Protocol, Upload, World};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupAssignment {
    /// Members of each group in ascending id order.
    pub groups: Vec<Vec<usize>>,
    pub hubs: Vec<usize>,
}

impl GroupAssignment {
    pub fn group_of(&self, client: usize) -> Option<usize> {
        self.groups.iter().position(|g| g.contains(&client))
    }
}

/// Random partition into `g` groups whose sizes differ by at most one.
pub fn assign_groups<R: Rng + ?Sized>(ids: &[usize], g: usize, rng: &mut R) -> Result<GroupAssignment> {
    if g == 0 || g > ids.len() {
        return Err(Error::InvalidParameter(format!(
            "cannot split {} clients into {g} groups",
            ids.len()
        )));
    }
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(rng);
    let base = ids.len() / g;
    let extra = ids.len() % g;
    let mut groups = Vec::with_capacity(g);
    let mut start = 0;
    for k in 0..g {
        let len = base + usize::from(k < extra);
        let mut members = shuffled[start..start + len].to_vec();
        members.sort_unstable();
        groups.push(members);
        start += len;
    }
    let hubs = groups.iter().map(|m| m[0]).collect();
    Ok(GroupAssignment { groups, hubs })
}

/// Draws a fresh hub uniformly from each group.
pub fn pick_hubs<R: Rng + ?Sized>(assignment: &GroupAssignment, rng: &mut R) -> GroupAssignment {
    let hubs = assignment
        .groups
        .iter()
        .map(|m| *m.choose(rng).expect("groups are non-empty"))
        .collect();
    GroupAssignment {
        groups: assignment.groups.clone(),
        hubs,
    }
}

/// Whether a session launched at `offset` ends inside `group`'s window with
/// a slot left for the upload.
pub fn in_launch_window(offset: u64, group: usize, cfg: &ExperimentConfig) -> bool {
    let s = cfg.slots_per_epoch;
    let r = cfg.group_round();
    let finish = (offset + cfg.kappa) % s;
    let lo = group as u64 * r;
    let hi = (group as u64 + 1) * r;
    hi >= lo + 2 && finish >= lo && finish <= hi - 2
}

pub fn may_start_training(client: &ClientState, available: Energy, pos: &ClockPosition, cfg: &ExperimentConfig) -> bool {
    available >= cfg.kappa_energy()
        && client.pending_update.is_none()
        && in_launch_window(pos.offset, client.group, cfg)
}

/// Odd-chance filter. A chance is one maximal run of consecutive eligible
/// slots; chances are numbered from 1 and only odd (or only even) ones fire.
pub fn odd_chance(client: &mut ClientState, eligible: bool, odd_first: bool) -> bool {
    if !eligible {
        client.opportunity_open = false;
        return false;
    }
    if client.opportunity_open {
        return false;
    }
    client.opportunity_open = true;
    client.chance_counter += 1;
    (client.chance_counter % 2 == 1) == odd_first
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LaunchPolicy {
    /// Launch at every eligible slot.
    Cramming,
    /// Launch at every other chance.
    OddChance { odd_first: bool },
    /// Launch whenever affordable; a new session overwrites an unsent update.
    Greedy,
}

/// One client's action in one slot.
pub fn client_slot_step(
    client: &mut ClientState,
    available: Energy,
    pos: &ClockPosition,
    cfg: &ExperimentConfig,
    policy: LaunchPolicy,
) -> Action {
    if client.is_busy() {
        return Action::ContinueTraining;
    }
    if pos.is_group_final && pos.group == client.group && client.pending_update.is_some() && available >= Energy::UNIT {
        client.opportunity_open = false;
        return Action::Transmit;
    }
    let launch = match policy {
        LaunchPolicy::Cramming => may_start_training(client, available, pos, cfg),
        LaunchPolicy::OddChance { odd_first } => {
            let eligible = may_start_training(client, available, pos, cfg);
            odd_chance(client, eligible, odd_first)
        }
        LaunchPolicy::Greedy => available >= cfg.kappa_energy(),
    };
    if launch {
        Action::StartTraining
    } else {
        Action::Idle
    }
}

/// Running model held by the hub chain within one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct IntermediateGlobal {
    pub model: ModelVector,
    pub epoch: u64,
    /// Number of groups already folded in.
    pub groups_done: usize,
}

/// Folds one group's updates into the chain: `x + (1/N) * sum(deltas)`.
pub fn finalize_group(intermediate: &IntermediateGlobal, group: usize, uploads: &[ModelVector], num_clients: usize)
    -> IntermediateGlobal {
    let mut model = intermediate.model.clone();
    let w = 1.0 / num_clients as f64;
    for u in uploads {
        model.axpy(w, u);
    }
    IntermediateGlobal {
        model,
        epoch: intermediate.epoch,
        groups_done: group + 1,
    }
}

/// Group-cyclic relay shared by FedBacys, FedBacys-Odd and FedSeq.
pub struct CyclicRelay {
    policy: LaunchPolicy,
    assignment: GroupAssignment,
    chain: IntermediateGlobal,
    server: ModelVector,
    grouping_rng: ChaCha8Rng,
    hub_rng: ChaCha8Rng,
}

impl CyclicRelay {
    pub fn new(cfg: &ExperimentConfig, dim: usize, policy: LaunchPolicy) -> Self {
        let x0 = ModelVector::zeros(dim);
        CyclicRelay {
            policy,
            assignment: GroupAssignment {
                groups: Vec::new(),
                hubs: Vec::new(),
            },
            chain: IntermediateGlobal {
                model: x0.clone(),
                epoch: 0,
                groups_done: 0,
            },
            server: x0,
            grouping_rng: stream_rng(cfg.seed, Stream::Grouping, 0),
            hub_rng: stream_rng(cfg.seed, Stream::Hubs, 0),
        }
    }

    pub fn fedbacys(cfg: &ExperimentConfig, dim: usize) -> Self {
        Self::new(cfg, dim, LaunchPolicy::Cramming)
    }

    pub fn fedbacys_odd(cfg: &ExperimentConfig, dim: usize) -> Self {
        Self::new(cfg, dim, LaunchPolicy::OddChance { odd_first: cfg.odd_first })
    }

    pub fn assignment(&self) -> &GroupAssignment {
        &self.assignment
    }
}

impl Protocol for CyclicRelay {
    fn init(&mut self, world: &mut World<'_>) -> Result<()> {
        let ids: Vec<usize> = (0..world.clients.len()).collect();
        self.assignment = assign_groups(&ids, world.cfg.num_groups, &mut self.grouping_rng)?;
        for (g, members) in self.assignment.groups.iter().enumerate() {
            for &j in members {
                world.clients[j].group = g;
            }
        }
        Ok(())
    }

    fn begin_slot(&mut self, world: &mut World<'_>, pos: &ClockPosition) -> Result<()> {
        if pos.offset == 0 {
            self.assignment = pick_hubs(&self.assignment, &mut self.hub_rng);
            self.chain = IntermediateGlobal {
                model: self.server.clone(),
                epoch: pos.epoch,
                groups_done: 0,
            };
            if pos.epoch > 0 {
                world.broadcast(&self.server, self.assignment.groups[0].iter().copied());
            }
        }
        Ok(())
    }

    fn decide(&mut self, client: &mut ClientState, available: Energy, pos: &ClockPosition, cfg: &ExperimentConfig)
        -> Action {
        client_slot_step(client, available, pos, cfg, self.policy)
    }

    fn end_slot(&mut self, world: &mut World<'_>, pos: &ClockPosition, uploads: Vec<Upload>)
        -> Result<Option<AggregationEvent>> {
        if !pos.is_group_final {
            debug_assert!(uploads.is_empty());
            return Ok(None);
        }
        let g = pos.group;
        let n = world.cfg.num_clients;
        let before = self.chain.model.clone();
        let mut model = before.clone();
        accumulate(&mut model, &uploads, 1.0 / n as f64);
        self.chain = IntermediateGlobal {
            model,
            epoch: pos.epoch,
            groups_done: g + 1,
        };

        let hub = self.assignment.hubs[g];
        if world.pay_relay(hub) {
            if g + 1 < self.assignment.groups.len() {
                let next = self.assignment.groups[g + 1].clone();
                world.broadcast(&self.chain.model, next);
            } else {
                self.server = self.chain.model.clone();
            }
        }
        Ok(Some(AggregationEvent {
            slot: pos.slot,
            epoch: pos.epoch,
            group: Some(g),
            before,
            after: self.chain.model.clone(),
            weight: 1.0 / n as f64,
            contributions: uploads,
        }))
    }

    fn global_model(&self) -> &ModelVector {
        &self.server
    }
}
