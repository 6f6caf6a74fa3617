//! Energy-harvesting battery process.
//!
//! Within a slot the charge arrival is drawn first and the action is decided
//! against `E + 1{charged}`. The end-of-slot level is
//! `min(E - cost + 1{charged}, E_max)`; anything above `E_max` is wasted.
//! Energy is held in fixed-point micro-units so the ledger conservation
//! identity is exact even with fractional costs such as an FD uplink.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Sub, SubAssign};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Battery energy in fixed-point units of 10^-6 battery unit.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Energy(i64);

impl Energy {
    pub const SCALE: i64 = 1_000_000;
    pub const ZERO: Energy = Energy(0);
    pub const UNIT: Energy = Energy(Self::SCALE);

    pub const fn units(n: u64) -> Self {
        Energy(n as i64 * Self::SCALE)
    }

    /// Rounds to the nearest micro-unit.
    pub fn from_f64(units: f64) -> Self {
        Energy((units * Self::SCALE as f64).round() as i64)
    }

    pub const fn from_micro(micro: i64) -> Self {
        Energy(micro)
    }

    pub const fn micro(self) -> i64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / Self::SCALE as f64
    }

    fn charge(charged: bool) -> Self {
        if charged {
            Self::UNIT
        } else {
            Self::ZERO
        }
    }
}

impl fmt::Display for Energy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_f64())
    }
}

impl Add for Energy {
    type Output = Energy;
    fn add(self, rhs: Energy) -> Energy {
        Energy(self.0 + rhs.0)
    }
}

impl Sub for Energy {
    type Output = Energy;
    fn sub(self, rhs: Energy) -> Energy {
        Energy(self.0 - rhs.0)
    }
}

impl AddAssign for Energy {
    fn add_assign(&mut self, rhs: Energy) {
        self.0 += rhs.0;
    }
}

impl SubAssign for Energy {
    fn sub_assign(&mut self, rhs: Energy) {
        self.0 -= rhs.0;
    }
}

impl Sum for Energy {
    fn sum<I: Iterator<Item = Energy>>(iter: I) -> Energy {
        iter.fold(Energy::ZERO, Add::add)
    }
}

/// What an energy expenditure paid for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionClass {
    Training,
    MemberUplink,
    HubRelay,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub harvested_total: Energy,
    pub consumed_total: Energy,
    /// Charge arrivals that found the battery full.
    pub wasted_by_cap: Energy,
    pub training: Energy,
    pub member_uplink: Energy,
    pub hub_relay: Energy,
}

impl EnergyLedger {
    /// Advances one battery by one slot and books the flows.
    ///
    /// `spend` is `None` for an idle slot. Fails without touching either the
    /// battery or the ledger when the spend exceeds what is available.
    pub fn settle(
        &mut self,
        battery: &mut Energy,
        charged: bool,
        capacity: Energy,
        spend: Option<(ActionClass, Energy)>,
    ) -> Result<()> {
        let cost = spend.map_or(Energy::ZERO, |(_, c)| c);
        let step = step(*battery, charged, capacity, cost)?;
        *battery = step.next;
        self.harvested_total += Energy::charge(charged);
        self.wasted_by_cap += step.wasted;
        if let Some((class, cost)) = spend {
            self.consumed_total += cost;
            match class {
                ActionClass::Training => self.training += cost,
                ActionClass::MemberUplink => self.member_uplink += cost,
                ActionClass::HubRelay => self.hub_relay += cost,
            }
        }
        Ok(())
    }

    /// Books an out-of-band spend (no charge draw) such as a hub relay.
    pub fn spend(&mut self, battery: &mut Energy, class: ActionClass, cost: Energy) -> Result<()> {
        if *battery < cost {
            return Err(Error::InsufficientEnergy {
                need: cost,
                available: *battery,
            });
        }
        *battery -= cost;
        self.consumed_total += cost;
        match class {
            ActionClass::Training => self.training += cost,
            ActionClass::MemberUplink => self.member_uplink += cost,
            ActionClass::HubRelay => self.hub_relay += cost,
        }
        Ok(())
    }

    /// `consumed + stored + wasted == harvested + initial`.
    pub fn conserves<I: IntoIterator<Item = Energy>>(&self, batteries: I, initial: Energy) -> bool {
        let stored: Energy = batteries.into_iter().sum();
        self.consumed_total + stored + self.wasted_by_cap == self.harvested_total + initial
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct SlotStep {
    pub next: Energy,
    pub wasted: Energy,
}

pub(crate) fn step(battery: Energy, charged: bool, capacity: Energy, cost: Energy) -> Result<SlotStep> {
    let available = battery + Energy::charge(charged);
    if available < cost {
        return Err(Error::InsufficientEnergy {
            need: cost,
            available,
        });
    }
    let raw = available - cost;
    let next = raw.min(capacity);
    Ok(SlotStep {
        next,
        wasted: raw - next,
    })
}

/// One Bernoulli(`delta`) charge arrival.
pub fn charge_draw<R: Rng + ?Sized>(rng: &mut R, delta: f64) -> bool {
    rng.gen_bool(delta)
}

pub fn apply_idle(battery: Energy, charged: bool, capacity: Energy) -> Energy {
    (battery + Energy::charge(charged)).min(capacity)
}

/// Declined (`InsufficientEnergy`) when `E + 1{charged} < cost`.
pub fn apply_transmit(battery: Energy, charged: bool, capacity: Energy, cost: Energy) -> Result<Energy> {
    step(battery, charged, capacity, cost).map(|s| s.next)
}

/// One slot of an ongoing training session. Sessions are only launched with
/// at least `kappa` units available, so the saturating floor is never hit
/// during a well-formed session.
pub fn apply_training_slot(battery: Energy, charged: bool, capacity: Energy) -> Energy {
    let available = battery + Energy::charge(charged);
    (available - Energy::UNIT).max(Energy::ZERO).min(capacity)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    const CAP: Energy = Energy::units(25);

    fn u(n: u64) -> Energy {
        Energy::units(n)
    }

    #[test]
    fn charge_draw_degenerate_probabilities() {
        let mut rng = stream_rng(1, Stream::Charging, 0);
        assert!((0..1000).all(|_| charge_draw(&mut rng, 1.0)));
        assert!((0..1000).all(|_| !charge_draw(&mut rng, 0.0)));
    }

    #[test]
    fn charge_draw_mean_concentrates() {
        let mut rng = stream_rng(2, Stream::Charging, 0);
        let n = 1_000_000;
        let hits = (0..n).filter(|_| charge_draw(&mut rng, 0.5)).count();
        let mean = hits as f64 / n as f64;
        // 3 sigma = 3 * 0.5 / sqrt(1e6)
        assert!((mean - 0.5).abs() <= 0.002, "mean {mean}");
    }

    #[test]
    fn idle_examples() {
        assert_eq!(apply_idle(u(5), true, CAP), u(6));
        assert_eq!(apply_idle(u(25), true, CAP), u(25));
        assert_eq!(apply_idle(u(0), false, CAP), u(0));
    }

    #[test]
    fn transmit_examples() {
        assert_eq!(apply_transmit(u(1), false, CAP, u(1)).unwrap(), u(0));
        assert!(matches!(
            apply_transmit(u(0), false, CAP, u(1)),
            Err(Error::InsufficientEnergy { .. })
        ));
        assert_eq!(apply_transmit(u(20), true, CAP, u(1)).unwrap(), u(20));
    }

    #[test]
    fn training_slot_examples() {
        assert_eq!(apply_training_slot(u(25), true, CAP), u(25));

        let mut e = u(20);
        for _ in 0..20 {
            e = apply_training_slot(e, true, CAP);
        }
        assert_eq!(e, u(20));

        let mut e = u(20);
        for _ in 0..20 {
            e = apply_training_slot(e, false, CAP);
        }
        assert_eq!(e, u(0));
    }

    #[test]
    fn session_books_exactly_kappa() {
        let kappa = 20;
        for charged in [false, true] {
            let mut ledger = EnergyLedger::default();
            let mut e = u(20);
            for _ in 0..kappa {
                ledger
                    .settle(&mut e, charged, CAP, Some((ActionClass::Training, Energy::UNIT)))
                    .unwrap();
            }
            assert_eq!(ledger.training, u(kappa));
            assert!(ledger.conserves([e], u(20)));
        }
    }

    #[test]
    fn declined_settle_leaves_state_untouched() {
        let mut ledger = EnergyLedger::default();
        let mut e = Energy::ZERO;
        let r = ledger.settle(&mut e, false, CAP, Some((ActionClass::MemberUplink, Energy::UNIT)));
        assert!(r.is_err());
        assert_eq!(e, Energy::ZERO);
        assert_eq!(ledger, EnergyLedger::default());
    }

    #[test]
    fn cap_waste_is_booked() {
        let mut ledger = EnergyLedger::default();
        let mut e = CAP;
        ledger.settle(&mut e, true, CAP, None).unwrap();
        assert_eq!(ledger.wasted_by_cap, Energy::UNIT);
        assert!(ledger.conserves([e], CAP));
    }

    #[test]
    fn fractional_costs_stay_exact() {
        let mut ledger = EnergyLedger::default();
        let mut e = u(3);
        let fd = Energy::from_f64(0.1);
        for _ in 0..30 {
            ledger
                .settle(&mut e, false, CAP, Some((ActionClass::MemberUplink, fd)))
                .unwrap();
        }
        assert_eq!(ledger.member_uplink, u(3));
        assert_eq!(e, Energy::ZERO);
        assert!(ledger.conserves([e], u(3)));
    }

    proptest::proptest! {
        #[test]
        fn random_sequences_stay_bounded_and_conserve(
            cap in 1u64..40,
            start in 0u64..40,
            steps in proptest::collection::vec((proptest::bool::ANY, 0u8..4, 0i64..2_000_000), 0..200),
        ) {
            let cap = u(cap);
            let start = u(start).min(cap);
            let mut e = start;
            let mut ledger = EnergyLedger::default();
            for (charged, kind, micro) in steps {
                let spend = match kind {
                    0 => None,
                    1 => Some((ActionClass::Training, Energy::UNIT)),
                    2 => Some((ActionClass::MemberUplink, Energy::from_micro(micro))),
                    _ => Some((ActionClass::HubRelay, Energy::from_micro(micro))),
                };
                let before = e;
                if ledger.settle(&mut e, charged, cap, spend).is_err() {
                    proptest::prop_assert_eq!(e, before);
                }
                proptest::prop_assert!(e >= Energy::ZERO && e <= cap);
                proptest::prop_assert!(ledger.conserves([e], start));
            }
        }
    }
}
