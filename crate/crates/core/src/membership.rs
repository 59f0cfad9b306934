//! Membership of a piecewise-affine trajectory in an automaton path, decided
//! through synchronized reachability inside the epsilon-tube.
//!
//! Per piece, an over-approximation of the synchronized reachable set is
//! chained on a uniform time grid (reach step intersected with the tube
//! cross-section); emptiness anywhere refutes membership. A nonempty final
//! set is refined from the piece's end state backwards: every vertex gets an
//! exact synchronization check, failing vertices are peeled off by
//! contracting the polytope, and the hull of the passing vertices is a sound
//! under-approximation. Nonemptiness of the chained under-approximation
//! proves membership; anything in between stays undecided.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{affine_flow_map, invert, AffineDynamics};
use crate::geometry::{octagonal_directions, Ball, GeometryError, Polytope};
use crate::inf_norm;
use crate::trajectory::{PwaTrajectory, TrajectoryError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MembershipError {
    #[error("path length {0} does not match piece count {1}")]
    PathLengthMismatch(usize, usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

/// Time-grid resolution for the over-approximation chain.
#[derive(Debug, Clone, Copy)]
pub enum StepRule {
    /// `max(floor, ceil(per_unit * duration))` samples per piece.
    PerUnitTime { per_unit: f64, floor: usize },
    /// The same sample count for every piece.
    Fixed(usize),
}

impl StepRule {
    pub fn steps_for(&self, duration: f64) -> usize {
        match self {
            StepRule::PerUnitTime { per_unit, floor } => {
                ((per_unit * duration).ceil() as usize).max(*floor)
            }
            StepRule::Fixed(m) => (*m).max(1),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MembershipParams {
    pub steps: StepRule,
    /// Contraction step for refinement; defaults to `epsilon / 10`.
    pub contraction_delta: Option<f64>,
    /// Worker threads for per-vertex synchronization checks.
    pub threads: usize,
}

impl Default for MembershipParams {
    fn default() -> Self {
        Self {
            steps: StepRule::PerUnitTime { per_unit: 20.0, floor: 10 },
            contraction_delta: None,
            threads: 1,
        }
    }
}

/// Over- and under-approximation of a synchronized reachable set at the end
/// of a piece. `None` encodes the empty set.
#[derive(Debug, Clone)]
pub struct SReachApprox {
    pub under: Option<Polytope>,
    pub over: Option<Polytope>,
}

impl SReachApprox {
    pub fn over_is_empty(&self) -> bool {
        self.over.is_none()
    }

    pub fn under_is_empty(&self) -> bool {
        self.under.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Captured,
    NotCaptured,
    Unknown,
}

#[derive(Debug, Clone)]
pub struct MembershipVerdict {
    pub outcome: Outcome,
    pub witness_path: Option<Vec<String>>,
    pub final_sets: Option<SReachApprox>,
}

/// Everything the over-approximation chain produces for one piece: the
/// running sets and tube sections at each grid point, and the final set
/// (`None` when some grid intersection came up empty).
#[derive(Debug, Clone)]
pub struct PieceOverApprox {
    pub sample_sets: Vec<Polytope>,
    pub tube_boxes: Vec<Ball>,
    pub final_set: Option<Polytope>,
}

/// Over-approximation of the synchronized reachable set of one affine piece.
///
/// Starting from `p0` (contained in the tube section at time zero), the
/// location flow advances the set one grid step at a time and the result is
/// intersected with the tube section around the trajectory. Returns the final
/// set, or `None` as soon as an intersection is empty.
pub fn overapprox_piece(
    loc: &AffineDynamics,
    piece: &AffineDynamics,
    x0: &DVector<f64>,
    p0: &Polytope,
    epsilon: f64,
    horizon: f64,
    m: usize,
) -> Result<Option<Polytope>, MembershipError> {
    Ok(overapprox_piece_detailed(loc, piece, x0, p0, epsilon, horizon, m)?.final_set)
}

pub fn overapprox_piece_detailed(
    loc: &AffineDynamics,
    piece: &AffineDynamics,
    x0: &DVector<f64>,
    p0: &Polytope,
    epsilon: f64,
    horizon: f64,
    m: usize,
) -> Result<PieceOverApprox, MembershipError> {
    let m = m.max(1);
    let dt = horizon / m as f64;
    let (loc_m, loc_g) = affine_flow_map(loc, dt);
    let (piece_m, piece_g) = affine_flow_map(piece, dt);

    let mut result = PieceOverApprox {
        sample_sets: Vec::with_capacity(m),
        tube_boxes: Vec::with_capacity(m),
        final_set: None,
    };
    let mut current = p0.clone();
    let mut center = x0.clone();
    for _ in 1..=m {
        center = &piece_m * &center + &piece_g;
        let tube = Ball::new(center.clone(), epsilon).expect("epsilon validated upstream");
        let mapped = current.map_affine(&loc_m, &loc_g)?;
        let next = mapped.intersect(&tube.to_polytope())?;
        if next.is_empty() {
            return Ok(result);
        }
        result.sample_sets.push(next.clone());
        result.tube_boxes.push(tube);
        current = next;
    }
    result.final_set = Some(current);
    Ok(result)
}

/// Exact synchronization check for a fixed piece, with the trajectory and
/// location flow grids precomputed so many start states can be tested
/// cheaply.
pub struct SyncChecker {
    loc: AffineDynamics,
    piece: AffineDynamics,
    epsilon: f64,
    horizon: f64,
    /// Trajectory states at the scan grid.
    f_grid: Vec<DVector<f64>>,
    /// Single-step flow map of the location dynamics on the scan grid.
    /// Location states are advanced by the same recurrence as the trajectory
    /// grid, so identical dynamics and start states cancel exactly.
    loc_step: (DMatrix<f64>, DVector<f64>),
}

/// Scan resolution ahead of the bracketing refinement.
const SCAN_POINTS: usize = 512;
/// Absolute time tolerance of the scalar maximization.
const SCAN_REFINE_TOL: f64 = 1e-10;

impl SyncChecker {
    pub fn new(
        loc: &AffineDynamics,
        piece: &AffineDynamics,
        x0: &DVector<f64>,
        epsilon: f64,
        horizon: f64,
    ) -> Self {
        let dt = horizon / SCAN_POINTS as f64;
        let (fm, fg) = affine_flow_map(piece, dt);
        let mut f_grid = Vec::with_capacity(SCAN_POINTS + 1);
        f_grid.push(x0.clone());
        for j in 1..=SCAN_POINTS {
            let next = &fm * &f_grid[j - 1] + &fg;
            f_grid.push(next);
        }
        let loc_step = affine_flow_map(loc, dt);
        Self {
            loc: loc.clone(),
            piece: piece.clone(),
            epsilon,
            horizon,
            f_grid,
            loc_step,
        }
    }

    pub fn check(&self, y0: &DVector<f64>) -> bool {
        self.max_deviation_bounded(y0, Some(self.epsilon)) <= self.epsilon
    }

    /// Peak infinity-norm deviation `max_t |f(t) - sigma(t)|` over the piece.
    pub fn max_deviation(&self, y0: &DVector<f64>) -> f64 {
        self.max_deviation_bounded(y0, None)
    }

    /// As soon as the running maximum exceeds `early_exit`, the scan stops.
    fn max_deviation_bounded(&self, y0: &DVector<f64>, early_exit: Option<f64>) -> f64 {
        let n = y0.len();
        // Location states on the scan grid, by the same recurrence as f_grid.
        let (lm, lg) = &self.loc_step;
        let mut sigma_grid: Vec<DVector<f64>> = Vec::with_capacity(SCAN_POINTS + 1);
        sigma_grid.push(y0.clone());
        for j in 1..=SCAN_POINTS {
            let next = lm * &sigma_grid[j - 1] + lg;
            sigma_grid.push(next);
        }

        // Endpoint distances first, mirroring the cheap necessary checks.
        let mut max = inf_norm(&(&self.f_grid[0] - y0));
        max = max.max(inf_norm(&(&self.f_grid[SCAN_POINTS] - &sigma_grid[SCAN_POINTS])));
        if let Some(bound) = early_exit {
            if max > bound {
                return max;
            }
        }

        // Dense scan of h(t) = f(t) - sigma(t), one coordinate at a time.
        let dt = self.horizon / SCAN_POINTS as f64;
        let mut scan = vec![0.0_f64; SCAN_POINTS + 1];
        for i in 0..n {
            for (j, v) in scan.iter_mut().enumerate() {
                *v = (self.f_grid[j][i] - sigma_grid[j][i]).abs();
            }
            for value in &scan {
                max = max.max(*value);
            }
            if let Some(bound) = early_exit {
                if max > bound {
                    return max;
                }
            }
            // Bracketing refinement around every interior local maximum.
            for j in 1..SCAN_POINTS {
                if scan[j] >= scan[j - 1] && scan[j] >= scan[j + 1] {
                    let a = (j - 1) as f64 * dt;
                    let b = (j + 1) as f64 * dt;
                    let g = |t: f64| {
                        let f_i = self.piece_state(t)[i];
                        let s_i = self.loc_state(t, y0)[i];
                        (f_i - s_i).abs()
                    };
                    let (_, peak) = golden_max(g, a, b, SCAN_REFINE_TOL);
                    max = max.max(peak);
                    if let Some(bound) = early_exit {
                        if max > bound {
                            return max;
                        }
                    }
                }
            }
        }
        max
    }

    fn piece_state(&self, t: f64) -> DVector<f64> {
        let (m, g) = affine_flow_map(&self.piece, t);
        m * &self.f_grid[0] + g
    }

    fn loc_state(&self, t: f64, y0: &DVector<f64>) -> DVector<f64> {
        let (m, g) = affine_flow_map(&self.loc, t);
        m * y0 + g
    }
}

/// Golden-section maximization over a bracket.
fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    (mid, f(mid).max(fc).max(fd))
}

/// Decision for a single start state: does the execution of `loc` from `y0`
/// stay within `epsilon` of the trajectory of `piece` from `x0` over
/// `[0, horizon]`?
pub fn sync_check_point(
    loc: &AffineDynamics,
    piece: &AffineDynamics,
    x0: &DVector<f64>,
    y0: &DVector<f64>,
    epsilon: f64,
    horizon: f64,
) -> bool {
    SyncChecker::new(loc, piece, x0, epsilon, horizon).check(y0)
}

/// Cache key for vertex verdicts: coordinates rounded to 1e-12.
fn vertex_key(v: &DVector<f64>) -> Vec<i64> {
    v.iter()
        .map(|x| {
            let scaled = x / 1e-12;
            if scaled >= i64::MAX as f64 {
                i64::MAX
            } else if scaled <= i64::MIN as f64 {
                i64::MIN
            } else {
                scaled.round() as i64
            }
        })
        .collect()
}

fn classify_vertices(
    checker: &SyncChecker,
    verts: &[DVector<f64>],
    cache: &mut HashMap<Vec<i64>, bool>,
    threads: usize,
) -> Vec<bool> {
    let mut verdicts = vec![false; verts.len()];
    let mut jobs: Vec<usize> = Vec::new();
    for (i, v) in verts.iter().enumerate() {
        match cache.get(&vertex_key(v)) {
            Some(&known) => verdicts[i] = known,
            None => jobs.push(i),
        }
    }
    let fresh: Vec<(usize, bool)> = if threads <= 1 || jobs.len() < 2 {
        jobs.iter().map(|&i| (i, checker.check(&verts[i]))).collect()
    } else {
        let workers = threads.min(jobs.len());
        let chunk = jobs.len().div_ceil(workers);
        std::thread::scope(|scope| {
            let handles: Vec<_> = jobs
                .chunks(chunk)
                .map(|part| {
                    scope.spawn(move || {
                        part.iter()
                            .map(|&i| (i, checker.check(&verts[i])))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("sync check worker panicked"))
                .collect()
        })
    };
    for (i, verdict) in fresh {
        cache.insert(vertex_key(&verts[i]), verdict);
        verdicts[i] = verdict;
    }
    verdicts
}

/// Refinement of an over-approximation into an under-approximation.
///
/// All vertices of `p` are synchronization-checked (time-reversed dynamics,
/// starting from the piece's end state); the polytope is contracted by
/// `contraction_delta` whenever some vertex fails, and the hull of every
/// passing vertex seen along the way is returned. `None` means no vertex
/// passed before the polytope contracted away.
#[allow(clippy::too_many_arguments)]
pub fn refine_polytope(
    p: &Polytope,
    loc_rev: &AffineDynamics,
    piece_rev: &AffineDynamics,
    x_end: &DVector<f64>,
    epsilon: f64,
    horizon: f64,
    contraction_delta: f64,
    threads: usize,
) -> Result<Option<Polytope>, MembershipError> {
    let checker = SyncChecker::new(loc_rev, piece_rev, x_end, epsilon, horizon);
    let mut cache: HashMap<Vec<i64>, bool> = HashMap::new();
    let mut passing: Vec<DVector<f64>> = Vec::new();

    // The trajectory's own end state is the most central candidate; probing
    // it keeps the result anchored when every polytope vertex is borderline.
    // Any passing point lies in the true synchronized set, so including it
    // preserves soundness of the hull.
    if p.contains(x_end, crate::geometry::FEASIBILITY_TOL) && checker.check(x_end) {
        passing.push(x_end.clone());
    }

    // Contraction shaves delta of Euclidean width per round, so the
    // bounding-box diagonal bounds the round count.
    let max_rounds = match p.bounding_box() {
        Ok((lo, hi)) => ((hi - lo).norm() / contraction_delta).ceil() as usize + 2,
        Err(_) => return Ok(None),
    };

    let mut current = p.clone();
    for _ in 0..max_rounds {
        let verts = match current.vertices() {
            Ok(v) => v.to_vec(),
            Err(GeometryError::EmptyPolytope) => break,
            Err(e) => return Err(e.into()),
        };
        let verdicts = classify_vertices(&checker, &verts, &mut cache, threads);
        let mut any_failed = false;
        for (v, ok) in verts.iter().zip(&verdicts) {
            if *ok {
                passing.push(v.clone());
            } else {
                any_failed = true;
            }
        }
        if !any_failed {
            break;
        }
        current = current.contract(contraction_delta);
        if current.is_empty() {
            break;
        }
    }
    if passing.is_empty() {
        return Ok(None);
    }
    Ok(Some(Polytope::chull(&passing)?))
}

/// Both approximations for a single piece: the over-approximation chain,
/// then refinement backwards from the piece's end state with time-reversed
/// dynamics.
#[allow(clippy::too_many_arguments)]
pub fn sreach_piece(
    p0: &Polytope,
    dyn_loc: &AffineDynamics,
    dyn_piece: &AffineDynamics,
    x0: &DVector<f64>,
    epsilon: f64,
    horizon: f64,
    m: usize,
    contraction_delta: f64,
    threads: usize,
) -> Result<SReachApprox, MembershipError> {
    let over = overapprox_piece(dyn_loc, dyn_piece, x0, p0, epsilon, horizon, m)?;
    let Some(over) = over else {
        return Ok(SReachApprox { under: None, over: None });
    };
    let x_end = dyn_piece.flow(x0, horizon);
    let under = refine_polytope(
        &over,
        &invert(dyn_loc),
        &invert(dyn_piece),
        &x_end,
        epsilon,
        horizon,
        contraction_delta,
        threads,
    )?;
    Ok(SReachApprox { under, over: Some(over) })
}

/// Chained membership along a location path (given as per-piece flows).
///
/// Two chains run side by side: the over-approximations are fed forward
/// (template-simplified after every piece) and refute membership when any of
/// them is empty; the under-approximations are fed forward the same way and
/// prove membership when the final one is nonempty. Everything else is
/// `Unknown`.
pub fn sreach_path(
    p: Option<&Polytope>,
    path_flows: &[AffineDynamics],
    f: &PwaTrajectory,
    epsilon: f64,
    params: &MembershipParams,
) -> Result<(Vec<SReachApprox>, MembershipVerdict), MembershipError> {
    let tube0 = Ball::new(f.initial_state().clone(), epsilon)
        .expect("nonnegative epsilon")
        .to_polytope();
    let p0 = match p {
        Some(explicit) => explicit.intersect(&tube0)?,
        None => tube0,
    };

    if path_flows.is_empty() {
        // Zero-length prefix: the synchronized reachable set is p itself.
        let approx = SReachApprox { under: Some(p0.clone()), over: Some(p0) };
        return Ok((
            Vec::new(),
            MembershipVerdict {
                outcome: Outcome::Captured,
                witness_path: None,
                final_sets: Some(approx),
            },
        ));
    }
    if path_flows.len() != f.piece_count() {
        return Err(MembershipError::PathLengthMismatch(
            path_flows.len(),
            f.piece_count(),
        ));
    }

    let dirs = octagonal_directions(f.dim());
    let delta_c = params.contraction_delta.unwrap_or(epsilon / 10.0);
    let switch_states = f.switch_states().to_vec();

    let mut chain: Vec<SReachApprox> = Vec::with_capacity(path_flows.len());
    let mut over_cur: Option<Polytope> = Some(p0.clone());
    let mut under_cur: Option<Polytope> = Some(p0);
    for (i, loc_flow) in path_flows.iter().enumerate() {
        let horizon = f.switch_times()[i + 1] - f.switch_times()[i];
        let m = params.steps.steps_for(horizon);
        let piece_dyn = f.piece(i);
        let x0 = &switch_states[i];

        let over_next = match &over_cur {
            Some(set) => overapprox_piece(loc_flow, piece_dyn, x0, set, epsilon, horizon, m)?,
            None => None,
        };
        let under_next = match &under_cur {
            Some(set) => {
                sreach_piece(
                    set, loc_flow, piece_dyn, x0, epsilon, horizon, m, delta_c,
                    params.threads,
                )?
                .under
            }
            None => None,
        };

        // Octagonal simplification keeps the chained sets small; the over
        // side may only grow, the under side may only shrink.
        let over_fwd = match over_next {
            Some(set) => Some(set.template_overapprox(&dirs)?),
            None => None,
        };
        let under_fwd = match under_next {
            Some(set) => Some(set.template_underapprox(&dirs)?),
            None => None,
        };
        let empty_over = over_fwd.is_none();
        chain.push(SReachApprox { under: under_fwd.clone(), over: over_fwd.clone() });
        over_cur = over_fwd;
        under_cur = under_fwd;
        if empty_over {
            break;
        }
    }

    let outcome = if chain.iter().any(|s| s.over_is_empty()) {
        Outcome::NotCaptured
    } else if chain
        .last()
        .map(|s| s.under.as_ref().is_some_and(|u| !u.is_empty()))
        .unwrap_or(false)
    {
        Outcome::Captured
    } else {
        Outcome::Unknown
    };
    let verdict = MembershipVerdict {
        outcome,
        witness_path: None,
        final_sets: chain.last().cloned(),
    };
    Ok((chain, verdict))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;
    use nalgebra::DMatrix;
    use std::f64::consts::PI;

    fn point_poly(coords: &[f64]) -> Polytope {
        Polytope::chull(&[DVector::from_row_slice(coords)]).unwrap()
    }

    #[test]
    fn overapprox_identical_dynamics_point_survives() {
        let a = AffineDynamics::linear(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]))
            .unwrap();
        let x0 = DVector::from_row_slice(&[1.0, 1.0]);
        let p0 = point_poly(&[1.0, 1.0]);
        let result = overapprox_piece(&a, &a, &x0, &p0, 0.05, 2.0, 1).unwrap().unwrap();
        let expected = a.flow(&x0, 2.0);
        assert!(result.contains(&expected, 1e-7));
        let verts = result.vertices().unwrap();
        assert_eq!(verts.len(), 1);
    }

    #[test]
    fn overapprox_divergent_dynamics_empties() {
        // Expanding location flow versus contracting trajectory: every start
        // eventually exits the shrinking tube.
        let loc = AffineDynamics::linear(DMatrix::from_diagonal(
            &DVector::from_row_slice(&[1.0, 1.0]),
        ))
        .unwrap();
        let piece = AffineDynamics::linear(DMatrix::from_diagonal(
            &DVector::from_row_slice(&[-1.0, -1.0]),
        ))
        .unwrap();
        let x0 = DVector::from_row_slice(&[1.0, 1.0]);
        let p0 = Ball::new(x0.clone(), 0.1).unwrap().to_polytope();
        let result = overapprox_piece(&loc, &piece, &x0, &p0, 0.1, 4.0, 40).unwrap();
        assert!(result.is_none());

        // Independent oracle: dense simulation of the box corners confirms
        // that all of them exit the tube.
        for corner in [[0.9, 0.9], [0.9, 1.1], [1.1, 0.9], [1.1, 1.1]] {
            let y = DVector::from_row_slice(&corner);
            let mut stayed = true;
            for k in 0..=4000 {
                let t = 4.0 * k as f64 / 4000.0;
                let sigma = loc.flow(&y, t);
                let ftraj = piece.flow(&x0, t);
                if inf_norm(&(sigma - ftraj)) > 0.1 {
                    stayed = false;
                    break;
                }
            }
            assert!(!stayed, "corner {corner:?} stayed in the tube");
        }
    }

    #[test]
    fn overapprox_detuned_rotation_survives() {
        let (piece, loc) = models::rotation_pair(0.01);
        let x0 = models::rotation_initial();
        let p0 = Ball::new(x0.clone(), 0.1).unwrap().to_polytope();
        let result =
            overapprox_piece(&loc, &piece, &x0, &p0, 0.1, 4.0 * PI, 100).unwrap();
        assert!(result.is_some());
    }

    #[test]
    fn sync_check_identical_dynamics() {
        let (piece, _) = models::rotation_pair(0.0);
        let x0 = models::rotation_initial();
        assert!(sync_check_point(&piece, &piece, &x0, &x0, 0.0, 4.0 * PI));
        let shifted = DVector::from_row_slice(&[1.05, 1.0]);
        // Same dynamics, shifted start: the offset rotates with the flow and
        // its infinity-norm peak stays just above the initial 0.05.
        assert!(sync_check_point(&piece, &piece, &x0, &shifted, 0.08, 4.0 * PI));
    }

    #[test]
    fn sync_check_detuned_rotation_thresholds() {
        let (piece, loc) = models::rotation_pair(0.01);
        let x0 = models::rotation_initial();
        // Peak deviation over [0, 4 pi] sits near 0.08.
        assert!(sync_check_point(&loc, &piece, &x0, &x0, 0.1, 4.0 * PI));
        assert!(!sync_check_point(&loc, &piece, &x0, &x0, 0.05, 4.0 * PI));

        // Dense-grid oracle for the peak itself.
        let checker = SyncChecker::new(&loc, &piece, &x0, 0.1, 4.0 * PI);
        let peak = checker.max_deviation(&x0);
        let mut dense = 0.0_f64;
        for k in 0..=100_000 {
            let t = 4.0 * PI * k as f64 / 100_000.0;
            let d = inf_norm(&(piece.flow(&x0, t) - loc.flow(&x0, t)));
            dense = dense.max(d);
        }
        assert!((peak - dense).abs() <= 1e-6, "peak {peak} vs dense {dense}");
        assert!((peak - 0.08).abs() < 0.01, "peak should be near 0.08, got {peak}");
    }

    #[test]
    fn refine_returns_input_when_all_vertices_pass() {
        let (piece, _) = models::rotation_pair(0.0);
        let x0 = models::rotation_initial();
        // Tiny box around the trajectory start: well inside the passing
        // region for identical dynamics.
        let p = Ball::new(x0.clone(), 0.01).unwrap().to_polytope();
        let refined = refine_polytope(&p, &piece, &piece, &x0, 0.1, PI, 0.01, 1)
            .unwrap()
            .unwrap();
        assert!(refined.set_eq(&p, 1e-9));
    }

    #[test]
    fn refine_far_region_is_empty() {
        let (piece, loc) = models::rotation_pair(0.0);
        let x0 = models::rotation_initial();
        let far = DVector::from_row_slice(&[1.3, 1.3]);
        let p = Ball::new(far, 0.05).unwrap().to_polytope();
        // Every vertex is at least 0.25 away at t = 0, above epsilon.
        for v in p.vertices().unwrap() {
            assert!(!sync_check_point(&loc, &piece, &x0, v, 0.1, PI));
        }
        let refined = refine_polytope(&p, &loc, &piece, &x0, 0.1, PI, 0.01, 1).unwrap();
        assert!(refined.is_none());
    }

    #[test]
    fn refine_same_dynamics_approximates_euclidean_ball() {
        // With identical rotations the synchronized reachable set is the
        // Euclidean ball inscribed in the tube: starts offset by more than
        // the radius rotate out of the box eventually.
        let (piece, loc) = models::rotation_pair(0.0);
        let x0 = models::rotation_initial();
        let eps = 0.1;
        let p0 = Ball::new(x0.clone(), eps).unwrap().to_polytope();
        let approx = sreach_piece(&p0, &loc, &piece, &x0, eps, 4.0 * PI, 100, eps / 10.0, 1)
            .unwrap();
        let under = approx.under.expect("nonempty under");
        let over = approx.over.expect("nonempty over");
        assert!(under.subset_of(&over, 1e-9));
        let x_end = piece.flow(&x0, 4.0 * PI);
        // The under set contains most of the inscribed Euclidean ball and
        // stays within the tube section.
        for (dx, dy) in [(0.06, 0.0), (0.0, -0.06), (-0.05, 0.05)] {
            let probe = DVector::from_row_slice(&[x_end[0] + dx, x_end[1] + dy]);
            assert!(under.contains(&probe, 1e-6), "({dx},{dy}) missing from under");
        }
        let tube_end = Ball::new(x_end, eps).unwrap();
        for v in under.vertices().unwrap() {
            assert!(tube_end.contains(v, 1e-6));
        }
        // The gap between over and under stays narrow in octagonal dirs.
        for d in octagonal_directions(2) {
            let gap = over.support(&d).unwrap() - under.support(&d).unwrap();
            assert!(gap <= 0.05, "gap {gap} too wide along {d:?}");
        }
    }

    #[test]
    fn sreach_piece_point_identical_dynamics() {
        let (piece, _) = models::rotation_pair(0.0);
        let x0 = models::rotation_initial();
        let p0 = point_poly(&[1.0, 1.0]);
        let approx =
            sreach_piece(&p0, &piece, &piece, &x0, 0.1, PI, 20, 0.01, 1).unwrap();
        let end = piece.flow(&x0, PI);
        let under = approx.under.unwrap();
        let over = approx.over.unwrap();
        assert!(under.contains(&end, 1e-7));
        assert!(over.contains(&end, 1e-7));
        assert_eq!(over.vertices().unwrap().len(), 1);
        assert_eq!(under.vertices().unwrap().len(), 1);
    }

    #[test]
    fn sreach_path_23_pieces_same_dynamics_is_captured() {
        let (piece, loc) = models::rotation_pair(0.0);
        let x0 = models::rotation_initial();
        let total = 4.0 * PI;
        let k = 23;
        let times: Vec<f64> = (0..=k).map(|i| total * i as f64 / k as f64).collect();
        let f = PwaTrajectory::new(times, vec![piece; k], x0).unwrap();
        let flows = vec![loc; k];
        let (chain, verdict) =
            sreach_path(None, &flows, &f, 0.1, &MembershipParams::default()).unwrap();
        assert_eq!(chain.len(), k);
        assert_eq!(verdict.outcome, Outcome::Captured);
        for link in &chain {
            if let (Some(u), Some(o)) = (&link.under, &link.over) {
                assert!(u.subset_of(o, 1e-7));
            }
        }
    }

    #[test]
    fn sreach_path_wrong_location_refutes() {
        // The piece decays but the candidate location grows: refuted.
        let f = PwaTrajectory::single(
            AffineDynamics::scalar(-1.0, 0.0),
            DVector::from_row_slice(&[1.5]),
            0.5,
        )
        .unwrap();
        let flows = vec![AffineDynamics::scalar(2.0, 0.0)];
        let (chain, verdict) =
            sreach_path(None, &flows, &f, 0.1, &MembershipParams::default()).unwrap();
        assert_eq!(verdict.outcome, Outcome::NotCaptured);
        assert!(chain.last().unwrap().over_is_empty());
    }

    #[test]
    fn sreach_path_empty_path_returns_start_set() {
        let f = PwaTrajectory::single(
            AffineDynamics::scalar(-1.0, 0.0),
            DVector::from_row_slice(&[1.0]),
            1.0,
        )
        .unwrap();
        let p = Polytope::from_bounds(&[0.95], &[1.02]).unwrap();
        let (chain, verdict) =
            sreach_path(Some(&p), &[], &f, 0.1, &MembershipParams::default()).unwrap();
        assert!(chain.is_empty());
        assert_eq!(verdict.outcome, Outcome::Captured);
        let sets = verdict.final_sets.unwrap();
        assert!(sets.over.unwrap().set_eq(&p, 1e-9));
    }

    #[test]
    fn sreach_path_length_mismatch_errors() {
        let f = PwaTrajectory::single(
            AffineDynamics::scalar(-1.0, 0.0),
            DVector::from_row_slice(&[1.0]),
            1.0,
        )
        .unwrap();
        let flows = vec![AffineDynamics::scalar(-1.0, 0.0); 2];
        assert!(matches!(
            sreach_path(None, &flows, &f, 0.1, &MembershipParams::default()),
            Err(MembershipError::PathLengthMismatch(2, 1))
        ));
    }

    #[test]
    fn finer_sampling_never_flips_refutation() {
        let loc = AffineDynamics::scalar(2.0, 0.0);
        let piece = AffineDynamics::scalar(-1.0, 0.0);
        let x0 = DVector::from_row_slice(&[1.5]);
        let p0 = Ball::new(x0.clone(), 0.1).unwrap().to_polytope();
        let mut refuted_any = false;
        for m in [10, 40, 160] {
            let r = overapprox_piece(&loc, &piece, &x0, &p0, 0.1, 0.5, m).unwrap();
            if m == 10 && r.is_none() {
                refuted_any = true;
            }
            if refuted_any {
                assert!(r.is_none(), "m={m} flipped a refutation");
            }
        }
        assert!(refuted_any);
    }

    #[test]
    fn parallel_vertex_checks_match_serial() {
        let (piece, loc) = models::rotation_pair(0.01);
        let x0 = models::rotation_initial();
        let p0 = Ball::new(x0.clone(), 0.1).unwrap().to_polytope();
        let serial =
            sreach_piece(&p0, &loc, &piece, &x0, 0.1, 2.0 * PI, 50, 0.01, 1).unwrap();
        let parallel =
            sreach_piece(&p0, &loc, &piece, &x0, 0.1, 2.0 * PI, 50, 0.01, 4).unwrap();
        match (serial.under, parallel.under) {
            (Some(a), Some(b)) => assert!(a.set_eq(&b, 1e-12)),
            (None, None) => {}
            other => panic!("serial/parallel disagree: {other:?}"),
        }
    }
}
