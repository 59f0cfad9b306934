//! Built-in benchmark automata and reference systems.

use nalgebra::{DMatrix, DVector};

use crate::automaton::{Adha, Location};
use crate::dynamics::AffineDynamics;
use crate::geometry::{LinearConstraint, Polytope};

/// Two-location heater: `on` drives the temperature toward 30 with
/// `x' = -0.1 (x - 30)`, `off` cools with `x' = -0.1 x`. Both dwell in
/// `[18, 22]`; switching is enabled on `[21, 22]` (on -> off) and `[18, 19]`
/// (off -> on).
pub fn heater() -> Adha {
    let mut h = Adha::new(1);
    let inv = Polytope::from_bounds(&[18.0], &[22.0]).unwrap();
    h.insert_location(
        "on".into(),
        Location { flow: AffineDynamics::scalar(-0.1, 3.0), invariant: inv.clone() },
    )
    .unwrap();
    h.insert_location(
        "off".into(),
        Location { flow: AffineDynamics::scalar(-0.1, 0.0), invariant: inv },
    )
    .unwrap();
    h.insert_transition(
        "on".into(),
        "off".into(),
        Polytope::from_bounds(&[21.0], &[22.0]).unwrap(),
    )
    .unwrap();
    h.insert_transition(
        "off".into(),
        "on".into(),
        Polytope::from_bounds(&[18.0], &[19.0]).unwrap(),
    )
    .unwrap();
    h
}

/// Four-gear transmission over `(v, w)`: speed `v` decays through the gears
/// while `w` builds up; downshifts fire in narrow bands around v = 20, 14, 5.
/// The chain structure (4 locations, 3 transitions) is what synthesis is
/// expected to recover.
pub fn gearbox() -> Adha {
    let mut h = Adha::new(2);
    let a1 = DMatrix::from_row_slice(2, 2, &[-0.08, 0.0, 0.08, -0.4]);
    let a2 = DMatrix::from_row_slice(2, 2, &[-0.09, 0.0, 0.12, -0.3]);
    let a3 = DMatrix::from_row_slice(2, 2, &[-0.16, 0.0, 0.1, -0.25]);
    let a4 = DMatrix::from_row_slice(2, 2, &[-0.3, -0.02, 0.1, -0.2]);
    let locs = [
        ("q1", a1, [20.0, -1.0], [30.0, 6.0]),
        ("q2", a2, [14.0, 1.0], [23.0, 9.0]),
        ("q3", a3, [5.0, 2.0], [19.0, 10.0]),
        ("q4", a4, [-3.0, 0.0], [6.0, 8.0]),
    ];
    for (id, a, lo, hi) in locs {
        h.insert_location(
            id.into(),
            Location {
                flow: AffineDynamics::linear(a).unwrap(),
                invariant: Polytope::from_bounds(&lo, &hi).unwrap(),
            },
        )
        .unwrap();
    }
    for (from, to, band) in [
        ("q1", "q2", (19.9, 20.6)),
        ("q2", "q3", (13.9, 14.6)),
        ("q3", "q4", (4.9, 5.6)),
    ] {
        let guard = Polytope::from_constraints(vec![
            LinearConstraint::le(&[1.0, 0.0], band.1).unwrap(),
            LinearConstraint::le(&[-1.0, 0.0], -band.0).unwrap(),
        ])
        .unwrap();
        h.insert_transition(from.into(), to.into(), guard).unwrap();
    }
    h
}

/// Initial condition used for the gearbox runs: start in `q1` with
/// `26 <= v <= 28` and `w = 0`.
pub fn gearbox_initial() -> (String, Polytope) {
    ("q1".into(), Polytope::from_bounds(&[26.0, 0.0], &[28.0, 0.0]).unwrap())
}

/// Pair of rotation-like linear systems: the reference rotates at unit speed,
/// the variant's frequency is detuned by `alpha`. With `alpha = 0.01` and a
/// horizon of `4 pi`, executions started together drift about 0.08 apart.
pub fn rotation_pair(alpha: f64) -> (AffineDynamics, AffineDynamics) {
    let reference =
        AffineDynamics::linear(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])).unwrap();
    let variant =
        AffineDynamics::linear(DMatrix::from_row_slice(2, 2, &[0.0, 1.0 - alpha, -1.0, 0.0]))
            .unwrap();
    (reference, variant)
}

/// Canonical initial state for [`rotation_pair`] experiments.
pub fn rotation_initial() -> DVector<f64> {
    DVector::from_row_slice(&[1.0, 1.0])
}
