//! Phase one: turning a time series into a piecewise-affine trajectory that
//! captures it pointwise within a chosen `delta`, with pieces as long as the
//! data allows.
//!
//! Fitting one window is a parameter identification problem over (A, b) and,
//! for the first piece, the initial state. The residual being minimized is
//! the exact capture criterion: the worst infinity-norm deviation at the
//! sample times, evaluated with exact affine flows. A least-squares fit of
//! finite-difference derivatives seeds a Nelder-Mead search; random restarts
//! widen the basin until the budget runs out.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::dynamics::{affine_flow_map, AffineDynamics};
use crate::trajectory::{PwaTrajectory, TimeSeries, TrajectoryError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SegmentationError {
    #[error("window has {0} samples; at least 2 required")]
    TooFewSamples(usize),
    #[error("no feasible piece from sample {0} at delta {1}")]
    NoFeasiblePiece(usize, f64),
    #[error("segmentation produced a trajectory that fails its own capture check")]
    CaptureCheckFailed,
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

/// One fitted affine piece and the exact residual of the reported solution.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub dynamics: AffineDynamics,
    pub initial_state: DVector<f64>,
    pub residual: f64,
}

/// Feasibility verdict of a window fit. `Infeasible` is budget-relative: the
/// optimizer could not reach the target, which is not a proof that no affine
/// system exists.
#[derive(Debug, Clone)]
pub enum FitOutcome {
    Fit(FitResult),
    Infeasible { best_residual: f64 },
}

impl FitOutcome {
    pub fn ok(self) -> Option<FitResult> {
        match self {
            FitOutcome::Fit(r) => Some(r),
            FitOutcome::Infeasible { .. } => None,
        }
    }
}

/// Optimizer budget: restarts stop early once the target residual is met.
#[derive(Debug, Clone, Copy)]
pub struct FitBudget {
    pub restarts: usize,
    pub max_iters: usize,
}

impl Default for FitBudget {
    fn default() -> Self {
        Self { restarts: 200, max_iters: 500 }
    }
}

#[derive(Debug, Clone)]
pub struct SegmentationConfig {
    pub budget: FitBudget,
    pub seed: u64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self { budget: FitBudget::default(), seed: 0 }
    }
}

/// Packs (A, b[, x0]) into a flat parameter vector for the optimizer.
struct ParamLayout {
    dim: usize,
    fit_x0: bool,
}

impl ParamLayout {
    fn len(&self) -> usize {
        self.dim * self.dim + self.dim + if self.fit_x0 { self.dim } else { 0 }
    }

    fn unpack(&self, theta: &[f64], fixed_x0: Option<&DVector<f64>>) -> (AffineDynamics, DVector<f64>) {
        let n = self.dim;
        let a = DMatrix::from_row_iterator(n, n, theta[..n * n].iter().copied());
        let b = DVector::from_iterator(n, theta[n * n..n * n + n].iter().copied());
        let x0 = if self.fit_x0 {
            DVector::from_iterator(n, theta[n * n + n..].iter().copied())
        } else {
            fixed_x0.expect("fixed initial state required").clone()
        };
        let dynamics = AffineDynamics::new(a, b).unwrap_or_else(|_| {
            // Non-finite parameters can appear transiently in a failed step;
            // map them to a harmless system with infinite residual downstream.
            AffineDynamics::new(DMatrix::zeros(n, n), DVector::zeros(n)).unwrap()
        });
        (dynamics, x0)
    }
}

/// Exact residual of a candidate: worst deviation at the window's samples.
fn window_residual(
    times: &[f64],
    states: &[DVector<f64>],
    dynamics: &AffineDynamics,
    x0: &DVector<f64>,
) -> f64 {
    if dynamics.matrix().iter().any(|v| !v.is_finite())
        || dynamics.offset().iter().any(|v| !v.is_finite())
        || x0.iter().any(|v| !v.is_finite())
    {
        return f64::INFINITY;
    }
    let mut residual = crate::inf_norm(&(&states[0] - x0));
    let mut current = x0.clone();
    let mut last_gap = f64::NAN;
    let mut step: Option<(DMatrix<f64>, DVector<f64>)> = None;
    for j in 1..times.len() {
        let gap = times[j] - times[j - 1];
        if step.is_none() || (gap - last_gap).abs() > 1e-12 {
            step = Some(affine_flow_map(dynamics, gap));
            last_gap = gap;
        }
        let (m, g) = step.as_ref().unwrap();
        current = m * &current + g;
        if current.iter().any(|v| !v.is_finite()) {
            return f64::INFINITY;
        }
        residual = residual.max(crate::inf_norm(&(&states[j] - &current)));
    }
    residual
}

/// Least-squares seed: forward-difference derivative estimates regressed on
/// the midpoint states and a constant column.
fn least_squares_seed(times: &[f64], states: &[DVector<f64>]) -> (DMatrix<f64>, DVector<f64>) {
    let n = states[0].len();
    let rows = times.len() - 1;
    let mut design = DMatrix::zeros(rows, n + 1);
    let mut targets = DMatrix::zeros(rows, n);
    for j in 0..rows {
        let dt = times[j + 1] - times[j];
        let mid = (&states[j + 1] + &states[j]) * 0.5;
        let vel = (&states[j + 1] - &states[j]) / dt;
        for c in 0..n {
            design[(j, c)] = mid[c];
            targets[(j, c)] = vel[c];
        }
        design[(j, n)] = 1.0;
    }
    let svd = design.svd(true, true);
    let mut a = DMatrix::zeros(n, n);
    let mut b = DVector::zeros(n);
    for c in 0..n {
        let rhs = targets.column(c).into_owned();
        match svd.solve(&rhs, 1e-12) {
            Ok(sol) => {
                for k in 0..n {
                    a[(c, k)] = sol[k];
                }
                b[c] = sol[n];
            }
            Err(_) => {}
        }
    }
    (a, b)
}

/// Nelder-Mead on the residual, stopping early at `target`.
fn nelder_mead(
    objective: &dyn Fn(&[f64]) -> f64,
    start: &[f64],
    scale: f64,
    max_iters: usize,
    target: f64,
) -> (Vec<f64>, f64) {
    let dim = start.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    simplex.push((start.to_vec(), objective(start)));
    for i in 0..dim {
        let mut p = start.to_vec();
        let step = scale * (1.0 + p[i].abs());
        p[i] += step;
        let value = objective(&p);
        simplex.push((p, value));
    }
    let order = |s: &mut Vec<(Vec<f64>, f64)>| {
        s.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal))
    };
    order(&mut simplex);

    for _ in 0..max_iters {
        if simplex[0].1 <= target {
            break;
        }
        let worst = simplex[dim].1;
        let best = simplex[0].1;
        if (worst - best).abs() <= 1e-14 * (1.0 + best.abs()) {
            break;
        }
        let mut centroid = vec![0.0; dim];
        for (p, _) in &simplex[..dim] {
            for (c, v) in centroid.iter_mut().zip(p) {
                *c += v / dim as f64;
            }
        }
        let blend = |alpha: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[dim].0)
                .map(|(c, w)| c + alpha * (c - w))
                .collect()
        };
        let reflected = blend(1.0);
        let fr = objective(&reflected);
        if fr < simplex[0].1 {
            let expanded = blend(2.0);
            let fe = objective(&expanded);
            simplex[dim] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[dim - 1].1 {
            simplex[dim] = (reflected, fr);
        } else {
            let contracted = blend(-0.5);
            let fc = objective(&contracted);
            if fc < simplex[dim].1 {
                simplex[dim] = (contracted, fc);
            } else {
                // Shrink toward the best point.
                let best_point = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    let shrunk: Vec<f64> = entry
                        .0
                        .iter()
                        .zip(&best_point)
                        .map(|(p, b)| b + 0.5 * (p - b))
                        .collect();
                    let fv = objective(&shrunk);
                    *entry = (shrunk, fv);
                }
            }
        }
        order(&mut simplex);
    }
    let (p, v) = simplex.swap_remove(0);
    (p, v)
}

/// Fits one affine system to the sample window. With `x0` given the initial
/// state is held fixed (all pieces after the first); otherwise it is part of
/// the parameter vector.
pub fn fit_affine(
    window: &TimeSeries,
    x0: Option<&DVector<f64>>,
    delta: f64,
    budget: &FitBudget,
    seed: u64,
) -> Result<FitOutcome, SegmentationError> {
    if window.len() < 2 {
        return Err(SegmentationError::TooFewSamples(window.len()));
    }
    let times = window.times();
    let states = window.states();
    let n = window.dim();
    let layout = ParamLayout { dim: n, fit_x0: x0.is_none() };

    let (a_seed, b_seed) = least_squares_seed(times, states);
    let mut theta0: Vec<f64> = Vec::with_capacity(layout.len());
    theta0.extend(a_seed.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()));
    theta0.extend(b_seed.iter().copied());
    if layout.fit_x0 {
        theta0.extend(states[0].iter().copied());
    }

    let objective = |theta: &[f64]| -> f64 {
        let (dynamics, start) = layout.unpack(theta, x0);
        window_residual(times, states, &dynamics, &start)
    };

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut best_theta = theta0.clone();
    let mut best_value = objective(&theta0);
    for restart in 0..budget.restarts {
        if best_value <= delta {
            break;
        }
        let start: Vec<f64> = if restart == 0 {
            theta0.clone()
        } else {
            // Perturb the seed more aggressively as restarts accumulate.
            let magnitude = 0.05 * (1.0 + restart as f64 / 20.0);
            theta0
                .iter()
                .map(|v| v + magnitude * (1.0 + v.abs()) * rng.gen_range(-1.0..1.0))
                .collect()
        };
        let scale = if restart == 0 { 0.02 } else { 0.05 };
        let (theta, value) = nelder_mead(&objective, &start, scale, budget.max_iters, delta);
        if value < best_value {
            best_value = value;
            best_theta = theta;
        }
    }

    let (dynamics, start) = layout.unpack(&best_theta, x0);
    let residual = window_residual(times, states, &dynamics, &start);
    if residual <= delta {
        Ok(FitOutcome::Fit(FitResult { dynamics, initial_state: start, residual }))
    } else {
        Ok(FitOutcome::Infeasible { best_residual: residual })
    }
}

/// Longest feasible prefix from `start_index`, located by binary search under
/// the assumption that feasibility is monotone in the window length. If it is
/// not, the largest feasible index seen during the search is returned.
pub fn max_prefix(
    s: &TimeSeries,
    start_index: usize,
    x0: Option<&DVector<f64>>,
    delta: f64,
    cfg: &SegmentationConfig,
) -> Result<(usize, FitResult), SegmentationError> {
    let last = s.len() - 1;
    if start_index + 1 > last {
        return Err(SegmentationError::TooFewSamples(s.len() - start_index));
    }
    let feasible = |end: usize| -> Result<Option<FitResult>, SegmentationError> {
        let window = s.slice(start_index, end);
        Ok(fit_affine(&window, x0, delta, &cfg.budget, cfg.seed)?.ok())
    };

    // The minimal window decides feasibility outright.
    let Some(mut best_fit) = feasible(start_index + 1)? else {
        return Err(SegmentationError::NoFeasiblePiece(start_index, delta));
    };
    let mut lo = start_index + 1;
    let mut hi = last;
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        match feasible(mid)? {
            Some(fit) => {
                best_fit = fit;
                lo = mid;
            }
            None => {
                if mid <= hi && hi == last && mid < hi {
                    // Nothing: plain bisection keeps hi as an exclusive bound.
                }
                hi = mid - 1;
            }
        }
    }
    if lo < last {
        // Feasibility is not guaranteed to be monotone; double-check the
        // boundary and fall back to the largest feasible index found.
        if let Some(fit) = feasible(last)? {
            warn!(
                "feasibility non-monotone at [{start_index}, {last}]; taking the full window"
            );
            return Ok((last, fit));
        }
    }
    Ok((lo, best_fit))
}

/// Splits the series into maximal affine pieces. Switch times come from the
/// sample times; each later piece starts from the previous piece's computed
/// end state. The returned trajectory provably captures the (time-shifted)
/// series within `delta`.
pub fn segment(
    s: &TimeSeries,
    delta: f64,
    cfg: &SegmentationConfig,
) -> Result<PwaTrajectory, SegmentationError> {
    if s.len() < 2 {
        return Err(SegmentationError::TooFewSamples(s.len()));
    }
    let s = s.shifted_to_zero();
    let last = s.len() - 1;
    let mut start = 0usize;
    let mut carried_x0: Option<DVector<f64>> = None;
    let mut switch_times = vec![0.0];
    let mut pieces: Vec<AffineDynamics> = Vec::new();
    let mut initial_state: Option<DVector<f64>> = None;

    while start < last {
        let (end, fit) = max_prefix(&s, start, carried_x0.as_ref(), delta, cfg)?;
        let piece_duration = s.times()[end] - s.times()[start];
        let end_state = fit.dynamics.flow(&fit.initial_state, piece_duration);
        if initial_state.is_none() {
            initial_state = Some(fit.initial_state.clone());
        }
        switch_times.push(s.times()[end]);
        pieces.push(fit.dynamics);
        carried_x0 = Some(end_state);
        start = end;
    }

    let trajectory = PwaTrajectory::new(
        switch_times,
        pieces,
        initial_state.expect("loop ran at least once"),
    )?;
    // Hard postcondition, re-verified independently of the optimizer.
    if !trajectory.delta_captures(&s, delta)? {
        return Err(SegmentationError::CaptureCheckFailed);
    }
    Ok(trajectory)
}
