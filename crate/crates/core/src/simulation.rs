//! Randomized execution sampling from an automaton.
//!
//! Executions are produced by discrete-time stepping with exact affine flow
//! maps: per location visit the flow is perturbed (non-zero entries only),
//! the state is advanced on a fixed grid while it stays in the invariant and
//! under the dwell cap, enabled (transition, time) pairs are collected along
//! the way, and one of them is drawn uniformly. Everything is deterministic
//! given the seed and stream.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::automaton::{Adha, Execution, LocationId};
use crate::dynamics::{affine_flow_map, AffineDynamics};
use crate::geometry::{Polytope, FEASIBILITY_TOL};
use crate::trajectory::PwaTrajectory;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimulationError {
    #[error("cannot sample an initial state from the invariant of {0}")]
    EmptyInvariant(LocationId),
    #[error("automaton has no locations")]
    NoLocations,
    #[error("unknown location {0}")]
    UnknownLocation(LocationId),
    #[error("sampled execution collapsed before its first piece")]
    DegenerateStart,
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error(transparent)]
    Trajectory(#[from] crate::trajectory::TrajectoryError),
}

/// Simulation protocol parameters.
#[derive(Debug, Clone)]
pub struct SimConfig {
    /// Target number of pieces per execution.
    pub path_length: usize,
    /// Dwell cap per location visit, in seconds.
    pub max_dwell: f64,
    /// Grid step for successor computation and guard detection.
    pub time_step: f64,
    /// Uniform perturbation bound applied to non-zero dynamics entries.
    pub max_perturbation: f64,
    /// Base RNG seed.
    pub seed: u64,
    /// RNG stream; corpus sampling assigns one stream per execution.
    pub stream: u64,
    /// Fixed initial location (sampled uniformly when absent).
    pub initial_location: Option<LocationId>,
    /// Initial states are drawn from this set instead of the invariant.
    pub initial_set: Option<Polytope>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            path_length: 6,
            max_dwell: 7.0,
            time_step: 0.05,
            max_perturbation: 0.001,
            seed: 0,
            stream: 0,
            initial_location: None,
            initial_set: None,
        }
    }
}

/// Draws one execution from the automaton under the given protocol.
pub fn sample_execution(h: &Adha, cfg: &SimConfig) -> Result<Execution, SimulationError> {
    if h.location_count() == 0 {
        return Err(SimulationError::NoLocations);
    }
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    rng.set_stream(cfg.stream);

    // A start at the invariant boundary can exit before completing a single
    // grid step; redraw a few times before giving up.
    for _ in 0..100 {
        match try_sample(h, cfg, &mut rng) {
            Err(SimulationError::DegenerateStart) => continue,
            other => return other,
        }
    }
    Err(SimulationError::DegenerateStart)
}

fn try_sample(
    h: &Adha,
    cfg: &SimConfig,
    rng: &mut ChaCha12Rng,
) -> Result<Execution, SimulationError> {
    let ids: Vec<&LocationId> = h.location_ids().collect();
    let q0 = match &cfg.initial_location {
        Some(q) => {
            if h.location(q).is_none() {
                return Err(SimulationError::UnknownLocation(q.clone()));
            }
            q.clone()
        }
        None => ids[rng.gen_range(0..ids.len())].clone(),
    };
    let region = match &cfg.initial_set {
        Some(set) => set.clone(),
        None => h.invariant(&q0).expect("checked above").clone(),
    };
    let x0 = sample_in(&region, rng).ok_or(SimulationError::EmptyInvariant(q0.clone()))?;

    let max_steps = (cfg.max_dwell / cfg.time_step).floor() as usize;
    let mut path: Vec<LocationId> = Vec::new();
    let mut pieces: Vec<AffineDynamics> = Vec::new();
    let mut durations: Vec<f64> = Vec::new();

    let mut current = q0;
    let mut entry = x0.clone();
    loop {
        let loc = h.location(&current).expect("path stays within the automaton");
        let dynamics = perturb(&loc.flow, cfg.max_perturbation, rng);
        let (step_m, step_g) = affine_flow_map(&dynamics, cfg.time_step);

        // March the grid, remembering every enabled (transition, step, state).
        let mut states: Vec<DVector<f64>> = Vec::with_capacity(max_steps);
        let mut enabled: Vec<(LocationId, usize)> = Vec::new();
        let mut x = entry.clone();
        for k in 1..=max_steps {
            x = &step_m * &x + &step_g;
            if !loc.invariant.contains(&x, FEASIBILITY_TOL) {
                break;
            }
            states.push(x.clone());
            for (to, guard) in h.outgoing(&current) {
                if guard.contains(&x, FEASIBILITY_TOL) {
                    enabled.push((to.clone(), k));
                }
            }
        }
        if states.is_empty() {
            if pieces.is_empty() {
                return Err(SimulationError::DegenerateStart);
            }
            break;
        }

        let is_last_piece = pieces.len() + 1 >= cfg.path_length;
        let choice = if is_last_piece || enabled.is_empty() {
            None
        } else {
            Some(enabled[rng.gen_range(0..enabled.len())].clone())
        };
        match choice {
            None => {
                path.push(current.clone());
                pieces.push(dynamics);
                durations.push(states.len() as f64 * cfg.time_step);
                break;
            }
            Some((to, k)) => {
                path.push(current.clone());
                pieces.push(dynamics);
                durations.push(k as f64 * cfg.time_step);
                entry = states[k - 1].clone();
                current = to;
            }
        }
    }

    let mut switch_times = Vec::with_capacity(durations.len() + 1);
    let mut t = 0.0;
    switch_times.push(0.0);
    for d in &durations {
        t += d;
        switch_times.push(t);
    }
    let trajectory = PwaTrajectory::new(switch_times, pieces, x0)?;
    Ok(Execution { trajectory, path })
}

/// Samples `count` executions with one RNG stream per index. The very first
/// execution is left unperturbed so the nominal dynamics appear verbatim in
/// the corpus.
pub fn sample_corpus(
    h: &Adha,
    count: usize,
    cfg: &SimConfig,
) -> Result<Vec<Execution>, SimulationError> {
    (0..count)
        .map(|i| {
            let mut c = cfg.clone();
            c.stream = i as u64;
            if i == 0 {
                c.max_perturbation = 0.0;
            }
            sample_execution(h, &c)
        })
        .collect()
}

/// The execution as a plain trajectory: with `record_perturbed` the pieces
/// carry the perturbed dynamics actually used (the default view); without it
/// they are replaced by the automaton's nominal flows, in which case derived
/// states drift from the sampled ones by the perturbation.
pub fn to_pwa(
    e: &Execution,
    h: &Adha,
    record_perturbed: bool,
) -> Result<PwaTrajectory, SimulationError> {
    if record_perturbed {
        return Ok(e.trajectory.clone());
    }
    let mut pieces = Vec::with_capacity(e.path.len());
    for q in &e.path {
        let flow = h
            .flow(q)
            .ok_or_else(|| SimulationError::UnknownLocation(q.clone()))?;
        pieces.push(flow.clone());
    }
    Ok(PwaTrajectory::new(
        e.trajectory.switch_times().to_vec(),
        pieces,
        e.trajectory.initial_state().clone(),
    )?)
}

fn sample_in(region: &Polytope, rng: &mut ChaCha12Rng) -> Option<DVector<f64>> {
    let (lo, hi) = region.bounding_box().ok()?;
    let dim = lo.len();
    for _ in 0..10_000 {
        let x = DVector::from_fn(dim, |i, _| {
            if hi[i] > lo[i] {
                rng.gen_range(lo[i]..hi[i])
            } else {
                lo[i]
            }
        });
        if region.contains(&x, FEASIBILITY_TOL) {
            return Some(x);
        }
    }
    None
}

fn perturb(d: &AffineDynamics, magnitude: f64, rng: &mut ChaCha12Rng) -> AffineDynamics {
    if magnitude == 0.0 {
        return d.clone();
    }
    let a = d
        .matrix()
        .map(|v| if v != 0.0 { v + rng.gen_range(-magnitude..magnitude) } else { v });
    let b = d
        .offset()
        .map(|v| if v != 0.0 { v + rng.gen_range(-magnitude..magnitude) } else { v });
    AffineDynamics::new(a, b).expect("perturbation preserves shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;

    #[test]
    fn unperturbed_heater_execution_alternates_and_stays_in_range() {
        let h = models::heater();
        let cfg = SimConfig { max_perturbation: 0.0, seed: 7, ..SimConfig::default() };
        let e = sample_execution(&h, &cfg).unwrap();
        assert!(!e.path.is_empty());
        for w in e.path.windows(2) {
            assert_ne!(w[0], w[1], "heater must alternate on/off");
        }
        // Samples stay within the invariant band.
        let f = &e.trajectory;
        let steps = (f.duration() / 0.01) as usize;
        for i in 0..=steps {
            let t = f.duration() * i as f64 / steps as f64;
            let x = f.evaluate(t).unwrap()[0];
            assert!((18.0 - 1e-6..=22.0 + 1e-6).contains(&x), "x={x} at t={t}");
        }
        assert!(h.check_execution(&e, 1e-9).unwrap());
    }

    #[test]
    fn determinism_and_piece_budget() {
        let h = models::heater();
        let cfg = SimConfig { seed: 42, stream: 5, ..SimConfig::default() };
        let a = sample_execution(&h, &cfg).unwrap();
        let b = sample_execution(&h, &cfg).unwrap();
        assert_eq!(a.path, b.path);
        assert_eq!(a.trajectory.switch_times(), b.trajectory.switch_times());
        assert_eq!(a.trajectory.initial_state(), b.trajectory.initial_state());
        for (x, y) in a.trajectory.pieces().iter().zip(b.trajectory.pieces()) {
            assert_eq!(x, y);
        }
        assert!(a.trajectory.piece_count() <= cfg.path_length);
        for w in a.trajectory.switch_times().windows(2) {
            assert!(w[1] - w[0] <= cfg.max_dwell + cfg.time_step + 1e-9);
        }
    }

    #[test]
    fn corpus_keeps_first_execution_nominal() {
        let h = models::heater();
        let cfg = SimConfig { seed: 9, ..SimConfig::default() };
        let corpus = sample_corpus(&h, 3, &cfg).unwrap();
        assert_eq!(corpus.len(), 3);
        // Execution 0 reuses the exact model flows.
        for (q, piece) in corpus[0].path.iter().zip(corpus[0].trajectory.pieces()) {
            assert_eq!(h.flow(q).unwrap(), piece);
        }
        // Later executions are perturbed but only in non-zero entries.
        let e1 = &corpus[1];
        for (q, piece) in e1.path.iter().zip(e1.trajectory.pieces()) {
            let nominal = h.flow(q).unwrap();
            let da = (piece.matrix() - nominal.matrix()).amax();
            assert!(da > 0.0 && da <= cfg.max_perturbation);
            for (p, n) in piece.offset().iter().zip(nominal.offset().iter()) {
                if *n == 0.0 {
                    assert_eq!(*p, 0.0);
                } else {
                    assert!((p - n).abs() <= cfg.max_perturbation);
                }
            }
        }
    }

    #[test]
    fn to_pwa_views() {
        let h = models::heater();
        let cfg = SimConfig { seed: 4, ..SimConfig::default() };
        let e = sample_execution(&h, &cfg).unwrap();
        let perturbed = to_pwa(&e, &h, true).unwrap();
        assert_eq!(perturbed.pieces(), e.trajectory.pieces());
        let nominal = to_pwa(&e, &h, false).unwrap();
        for (q, piece) in e.path.iter().zip(nominal.pieces()) {
            assert_eq!(h.flow(q).unwrap(), piece);
        }
        // Drift between the views stays within a loose perturbation bound:
        // |dA| * horizon * e^(L T) with L, T small here.
        let horizon = perturbed.duration();
        let mut worst = 0.0_f64;
        let steps = 100;
        for i in 0..=steps {
            let t = horizon * i as f64 / steps as f64;
            let d = (perturbed.evaluate(t).unwrap() - nominal.evaluate(t).unwrap()).amax();
            worst = worst.max(d);
        }
        assert!(worst <= 30.0 * cfg.max_perturbation * horizon.max(1.0));
    }

    #[test]
    fn gearbox_executions_traverse_the_chain() {
        let h = models::gearbox();
        assert!(h.validate().is_empty());
        let (q0, init) = models::gearbox_initial();
        let cfg = SimConfig {
            seed: 7,
            max_perturbation: 1e-4,
            initial_location: Some(q0),
            initial_set: Some(init),
            ..SimConfig::default()
        };
        for stream in 0..10 {
            let mut c = cfg.clone();
            c.stream = stream;
            let e = sample_execution(&h, &c).unwrap();
            assert_eq!(
                e.path,
                vec!["q1".to_string(), "q2".into(), "q3".into(), "q4".into()],
                "stream {stream} failed to traverse all four gears"
            );
        }
    }
}
