//! Interactive browser demo over the core library: three operations exposed
//! through wasm-bindgen, each taking plain parameters and returning a JSON
//! string the page renders onto canvases.
//!
//! The same functions compile and run natively, which is how they are tested.

use nalgebra::DVector;
use serde::Serialize;
use wasm_bindgen::prelude::*;

use adha_core::dynamics::AffineDynamics;
use adha_core::geometry::Polytope;
use adha_core::membership::{sreach_path, MembershipParams, Outcome};
use adha_core::models;
use adha_core::segmentation::{segment, FitBudget, SegmentationConfig};
use adha_core::simulation::{sample_corpus, SimConfig};
use adha_core::synthesis::synthesize;
use adha_core::trajectory::{PwaTrajectory, TimeSeries};

#[derive(Serialize)]
struct MembershipView {
    verdict: String,
    epsilon: f64,
    trajectory: Vec<[f64; 2]>,
    tube_sections: Vec<TubeSection>,
    pieces: Vec<PieceSets>,
}

#[derive(Serialize)]
struct TubeSection {
    center: [f64; 2],
    radius: f64,
}

#[derive(Serialize)]
struct PieceSets {
    over: Option<Vec<[f64; 2]>>,
    under: Option<Vec<[f64; 2]>>,
}

/// Vertices of a 2-d polytope as a counterclockwise loop for drawing.
fn polygon_loop(p: &Polytope) -> Option<Vec<[f64; 2]>> {
    let verts = p.vertices().ok()?;
    let n = verts.len() as f64;
    let cx = verts.iter().map(|v| v[0]).sum::<f64>() / n;
    let cy = verts.iter().map(|v| v[1]).sum::<f64>() / n;
    let mut points: Vec<[f64; 2]> = verts.iter().map(|v| [v[0], v[1]]).collect();
    points.sort_by(|a, b| {
        let ta = (a[1] - cy).atan2(a[0] - cx);
        let tb = (b[1] - cy).atan2(b[0] - cx);
        ta.partial_cmp(&tb).unwrap()
    });
    Some(points)
}

/// Membership of a rotating trajectory in a detuned-rotation location, split
/// into `pieces` equal pieces over a horizon of 4 pi. Returns the verdict,
/// the trajectory polyline, tube sections at the switch times, and the
/// over-/under-approximations after every piece.
#[wasm_bindgen]
pub fn explore_membership(alpha: f64, epsilon: f64, pieces: u32) -> String {
    let pieces = pieces.clamp(1, 40) as usize;
    let epsilon = epsilon.clamp(0.01, 0.5);
    let horizon = 4.0 * std::f64::consts::PI;
    let x0 = models::rotation_initial();
    let (piece_dyn, loc_dyn) = models::rotation_pair(alpha);

    let times: Vec<f64> = (0..=pieces)
        .map(|i| horizon * i as f64 / pieces as f64)
        .collect();
    let f = PwaTrajectory::new(times, vec![piece_dyn; pieces], x0).unwrap();
    let flows = vec![loc_dyn; pieces];
    let params = MembershipParams::default();
    let (chain, verdict) = match sreach_path(None, &flows, &f, epsilon, &params) {
        Ok(r) => r,
        Err(e) => return format!("{{\"error\":\"{e}\"}}"),
    };

    let mut trajectory = Vec::with_capacity(401);
    for k in 0..=400 {
        let t = horizon * k as f64 / 400.0;
        let x = f.evaluate(t).unwrap();
        trajectory.push([x[0], x[1]]);
    }
    let tube_sections = f
        .switch_times()
        .iter()
        .map(|t| {
            let c = f.evaluate(*t).unwrap();
            TubeSection { center: [c[0], c[1]], radius: epsilon }
        })
        .collect();
    let view = MembershipView {
        verdict: match verdict.outcome {
            Outcome::Captured => "captured".into(),
            Outcome::NotCaptured => "not captured".into(),
            Outcome::Unknown => "unknown".into(),
        },
        epsilon,
        trajectory,
        tube_sections,
        pieces: chain
            .iter()
            .map(|link| PieceSets {
                over: link.over.as_ref().and_then(polygon_loop),
                under: link.under.as_ref().and_then(polygon_loop),
            })
            .collect(),
    };
    serde_json::to_string(&view).unwrap()
}

#[derive(Serialize)]
struct SegmentationView {
    delta: f64,
    series: Vec<[f64; 2]>,
    fitted: Vec<[f64; 2]>,
    switch_times: Vec<f64>,
    piece_count: usize,
    max_deviation: f64,
    captured: bool,
}

/// Segments a built-in two-regime scalar series (decay, then growth) with
/// optional uniform noise. Returns the samples, the fitted trajectory as a
/// dense polyline, and the recovered switch times.
#[wasm_bindgen]
pub fn explore_segmentation(delta: f64, noise: f64, seed: u32) -> String {
    let delta = delta.clamp(1e-4, 0.5);
    let noise = noise.clamp(0.0, 0.2);
    // Deterministic synthetic series; a cheap hash spreads the seed.
    let truth = PwaTrajectory::new(
        vec![0.0, 0.6, 1.2],
        vec![AffineDynamics::scalar(-1.2, 0.0), AffineDynamics::scalar(1.6, 0.0)],
        DVector::from_row_slice(&[1.4]),
    )
    .unwrap();
    let count = 36;
    let mut state = seed as u64 ^ 0x9e37_79b9_7f4a_7c15;
    let mut times = Vec::with_capacity(count + 1);
    let mut states = Vec::with_capacity(count + 1);
    for i in 0..=count {
        let t = 1.2 * i as f64 / count as f64;
        let mut x = truth.evaluate(t).unwrap()[0];
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let u = ((state >> 11) as f64) / ((1_u64 << 53) as f64);
        x += noise * (2.0 * u - 1.0);
        times.push(t);
        states.push(DVector::from_row_slice(&[x]));
    }
    let series = TimeSeries::new(times, states).unwrap();
    let cfg = SegmentationConfig {
        budget: FitBudget { restarts: 30, max_iters: 250 },
        seed: seed as u64,
    };
    let f = match segment(&series, delta, &cfg) {
        Ok(f) => f,
        Err(e) => return format!("{{\"error\":\"{e}\"}}"),
    };
    let fitted: Vec<[f64; 2]> = (0..=240)
        .map(|k| {
            let t = f.duration() * k as f64 / 240.0;
            [t, f.evaluate(t).unwrap()[0]]
        })
        .collect();
    let view = SegmentationView {
        delta,
        series: series
            .times()
            .iter()
            .zip(series.states())
            .map(|(t, x)| [*t, x[0]])
            .collect(),
        fitted,
        switch_times: f.switch_times().to_vec(),
        piece_count: f.piece_count(),
        max_deviation: f.max_deviation(&series).unwrap(),
        captured: f.delta_captures(&series, delta).unwrap(),
    };
    serde_json::to_string(&view).unwrap()
}

#[derive(Serialize)]
struct SynthesisView {
    epsilon: f64,
    executions: Vec<Vec<[f64; 2]>>,
    locations: Vec<LocationView>,
    transitions: Vec<TransitionView>,
    explored_nodes: usize,
}

#[derive(Serialize)]
struct LocationView {
    id: String,
    rate: f64,
    drive: f64,
    invariant: [f64; 2],
}

#[derive(Serialize)]
struct TransitionView {
    from: String,
    to: String,
    guard: [f64; 2],
}

/// Simulates `count` heater executions and synthesizes an automaton from
/// them. Returns the sampled traces and the learned invariant/guard
/// intervals.
#[wasm_bindgen]
pub fn explore_synthesis(count: u32, epsilon: f64, seed: u32) -> String {
    let count = count.clamp(1, 25) as usize;
    let epsilon = epsilon.clamp(0.02, 0.5);
    let h = models::heater();
    let cfg = SimConfig { seed: seed as u64, ..Default::default() };
    let corpus = match sample_corpus(&h, count, &cfg) {
        Ok(c) => c,
        Err(e) => return format!("{{\"error\":\"{e}\"}}"),
    };
    let trajectories: Vec<PwaTrajectory> =
        corpus.iter().map(|e| e.trajectory.clone()).collect();
    let result = match synthesize(&trajectories, epsilon, &MembershipParams::default(), None) {
        Ok(r) => r,
        Err(e) => return format!("{{\"error\":\"{e}\"}}"),
    };

    let executions: Vec<Vec<[f64; 2]>> = trajectories
        .iter()
        .map(|f| {
            (0..=300)
                .map(|k| {
                    let t = f.duration() * k as f64 / 300.0;
                    [t, f.evaluate(t).unwrap()[0]]
                })
                .collect()
        })
        .collect();
    let interval = |p: &Polytope| -> [f64; 2] {
        let (lo, hi) = p.bounding_box().unwrap();
        [lo[0], hi[0]]
    };
    let locations = result
        .automaton
        .location_ids()
        .map(|id| {
            let loc = result.automaton.location(id).unwrap();
            LocationView {
                id: id.clone(),
                rate: loc.flow.matrix()[(0, 0)],
                drive: loc.flow.offset()[0],
                invariant: interval(&loc.invariant),
            }
        })
        .collect();
    let transitions = result
        .automaton
        .transitions()
        .map(|(from, to, guard)| TransitionView {
            from: from.clone(),
            to: to.clone(),
            guard: interval(guard),
        })
        .collect();
    let view = SynthesisView {
        epsilon,
        executions,
        locations,
        transitions,
        explored_nodes: result.stats.iter().map(|s| s.explored_nodes).sum(),
    };
    serde_json::to_string(&view).unwrap()
}
