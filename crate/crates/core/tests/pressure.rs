mod common;

use gplight::dqn::{classic_pressure_reward, pressure, reward_for, RewardKind};
use gplight::microsim::Observation;
use proptest::prelude::*;

#[test]
fn pressure_algebra() {
    common::pressure_algebra_check().unwrap();
}

proptest! {
    #[test]
    fn pressure_is_bounded_by_demand(n_in in 0.0..200.0f64, frac in 0.0..=1.0f64, n_max in 1.0..500.0f64) {
        let p = pressure(n_in, frac * n_max, n_max).unwrap();
        prop_assert!(p >= -1e-12 && p <= n_in + 1e-12);
    }

    #[test]
    fn capacity_aware_reward_never_exceeds_zero(
        incoming in prop::array::uniform12(0u8..40),
        outgoing in prop::array::uniform12(0u8..40),
    ) {
        let obs = Observation {
            phase: 0,
            incoming: incoming.map(f64::from),
            outgoing: outgoing.map(f64::from),
            outgoing_capacity: [40.0; 12],
        };
        let r = reward_for(RewardKind::CapacityAware, &obs).unwrap();
        let q = reward_for(RewardKind::QueueLength, &obs).unwrap();
        prop_assert!(r <= 0.0 && r >= q - 1e-9);
        prop_assert!(classic_pressure_reward(&obs).is_finite());
    }
}
