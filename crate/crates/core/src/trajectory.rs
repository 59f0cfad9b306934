//! Time series, piecewise-affine trajectories, and the epsilon-tube.
//!
//! A trajectory stores only its defining tuple (switch times, per-piece
//! dynamics, initial state); every intermediate state is derived through the
//! matrix exponential, so continuity across switches holds by construction.

use std::io::{Read, Write};
use std::sync::OnceLock;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dynamics::AffineDynamics;
use crate::geometry::Ball;
use crate::inf_norm;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrajectoryError {
    #[error("time {0} outside domain [0, {1}]")]
    OutOfDomain(f64, f64),
    #[error("invalid trajectory: {0}")]
    Invalid(String),
    #[error("invalid time series: {0}")]
    InvalidSeries(String),
    #[error("csv: {0}")]
    Csv(String),
}

/// A sampling `s : D -> R^n` over finitely many strictly increasing times.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    times: Vec<f64>,
    states: Vec<DVector<f64>>,
}

impl TimeSeries {
    pub fn new(times: Vec<f64>, states: Vec<DVector<f64>>) -> Result<Self, TrajectoryError> {
        if times.is_empty() || times.len() != states.len() {
            return Err(TrajectoryError::InvalidSeries(
                "times and states must be nonempty and of equal length".into(),
            ));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(TrajectoryError::InvalidSeries(
                "times must be strictly increasing".into(),
            ));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(TrajectoryError::InvalidSeries("non-finite time".into()));
        }
        let dim = states[0].len();
        if dim == 0 || states.iter().any(|s| s.len() != dim) {
            return Err(TrajectoryError::InvalidSeries(
                "states must share a positive dimension".into(),
            ));
        }
        Ok(Self { times, states })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    /// Sub-series over the inclusive index range.
    pub fn slice(&self, start: usize, end: usize) -> TimeSeries {
        TimeSeries {
            times: self.times[start..=end].to_vec(),
            states: self.states[start..=end].to_vec(),
        }
    }

    /// Same series with times shifted so the first sample is at zero.
    pub fn shifted_to_zero(&self) -> TimeSeries {
        let t0 = self.times[0];
        TimeSeries {
            times: self.times.iter().map(|t| t - t0).collect(),
            states: self.states.clone(),
        }
    }

    /// Reads `t,x1,...,xn` rows.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, TrajectoryError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let mut times = Vec::new();
        let mut states = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(|e| TrajectoryError::Csv(e.to_string()))?;
            let mut fields = record.iter();
            let t: f64 = fields
                .next()
                .ok_or_else(|| TrajectoryError::Csv("empty row".into()))?
                .trim()
                .parse()
                .map_err(|e| TrajectoryError::Csv(format!("bad time: {e}")))?;
            let state: Vec<f64> = fields
                .map(|f| f.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| TrajectoryError::Csv(format!("bad state: {e}")))?;
            times.push(t);
            states.push(DVector::from_vec(state));
        }
        Self::new(times, states)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), TrajectoryError> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim()).map(|i| format!("x{i}")));
        wtr.write_record(&header)
            .map_err(|e| TrajectoryError::Csv(e.to_string()))?;
        for (t, s) in self.times.iter().zip(self.states.iter()) {
            let mut row = vec![format!("{t}")];
            row.extend(s.iter().map(|x| format!("{x}")));
            wtr.write_record(&row)
                .map_err(|e| TrajectoryError::Csv(e.to_string()))?;
        }
        wtr.flush().map_err(|e| TrajectoryError::Csv(e.to_string()))
    }
}

/// Piecewise-affine trajectory: consecutive solutions of `x' = A_i x + b_i`
/// over `[t_{i-1}, t_i]`, continuous at the switch times.
#[derive(Debug, Serialize, Deserialize)]
#[serde(try_from = "RawTrajectory", into = "RawTrajectory")]
pub struct PwaTrajectory {
    switch_times: Vec<f64>,
    pieces: Vec<AffineDynamics>,
    initial_state: DVector<f64>,
    #[serde(skip)]
    switch_states: OnceLock<Vec<DVector<f64>>>,
}

#[derive(Serialize, Deserialize)]
struct RawTrajectory {
    switch_times: Vec<f64>,
    pieces: Vec<AffineDynamics>,
    x0: Vec<f64>,
}

impl TryFrom<RawTrajectory> for PwaTrajectory {
    type Error = TrajectoryError;
    fn try_from(raw: RawTrajectory) -> Result<Self, Self::Error> {
        PwaTrajectory::new(raw.switch_times, raw.pieces, DVector::from_vec(raw.x0))
    }
}

impl From<PwaTrajectory> for RawTrajectory {
    fn from(f: PwaTrajectory) -> Self {
        RawTrajectory {
            switch_times: f.switch_times,
            pieces: f.pieces,
            x0: f.initial_state.iter().copied().collect(),
        }
    }
}

impl Clone for PwaTrajectory {
    fn clone(&self) -> Self {
        let switch_states = OnceLock::new();
        if let Some(v) = self.switch_states.get() {
            let _ = switch_states.set(v.clone());
        }
        Self {
            switch_times: self.switch_times.clone(),
            pieces: self.pieces.clone(),
            initial_state: self.initial_state.clone(),
            switch_states,
        }
    }
}

impl PwaTrajectory {
    /// `switch_times` must be `0 = t_0 < t_1 < ... < t_k` with one dynamics
    /// entry per interval.
    pub fn new(
        switch_times: Vec<f64>,
        pieces: Vec<AffineDynamics>,
        initial_state: DVector<f64>,
    ) -> Result<Self, TrajectoryError> {
        if pieces.is_empty() || switch_times.len() != pieces.len() + 1 {
            return Err(TrajectoryError::Invalid(format!(
                "{} switch times for {} pieces",
                switch_times.len(),
                pieces.len()
            )));
        }
        if switch_times[0] != 0.0 {
            return Err(TrajectoryError::Invalid("first switch time must be 0".into()));
        }
        if switch_times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(TrajectoryError::Invalid(
                "switch times must be strictly increasing".into(),
            ));
        }
        let dim = initial_state.len();
        if pieces.iter().any(|p| p.dim() != dim) {
            return Err(TrajectoryError::Invalid(
                "piece dimension does not match initial state".into(),
            ));
        }
        Ok(Self {
            switch_times,
            pieces,
            initial_state,
            switch_states: OnceLock::new(),
        })
    }

    /// Single piece over `[0, duration]`.
    pub fn single(
        dynamics: AffineDynamics,
        initial_state: DVector<f64>,
        duration: f64,
    ) -> Result<Self, TrajectoryError> {
        Self::new(vec![0.0, duration], vec![dynamics], initial_state)
    }

    pub fn dim(&self) -> usize {
        self.initial_state.len()
    }

    pub fn piece_count(&self) -> usize {
        self.pieces.len()
    }

    pub fn switch_times(&self) -> &[f64] {
        &self.switch_times
    }

    pub fn pieces(&self) -> &[AffineDynamics] {
        &self.pieces
    }

    pub fn piece(&self, i: usize) -> &AffineDynamics {
        &self.pieces[i]
    }

    pub fn initial_state(&self) -> &DVector<f64> {
        &self.initial_state
    }

    pub fn duration(&self) -> f64 {
        *self.switch_times.last().unwrap()
    }

    /// States at `t_0, ..., t_k` (derived once, then cached).
    pub fn switch_states(&self) -> &[DVector<f64>] {
        self.switch_states.get_or_init(|| {
            let mut states = Vec::with_capacity(self.pieces.len() + 1);
            states.push(self.initial_state.clone());
            for (i, piece) in self.pieces.iter().enumerate() {
                let dt = self.switch_times[i + 1] - self.switch_times[i];
                let next = piece.flow(&states[i], dt);
                states.push(next);
            }
            states
        })
    }

    /// Clamps accumulated floating-point noise at the domain boundary.
    fn clamp_to_domain(&self, t: f64) -> Result<f64, TrajectoryError> {
        let end = self.duration();
        let slack = 1e-9 * end.max(1.0);
        if t < -slack || t > end + slack {
            return Err(TrajectoryError::OutOfDomain(t, end));
        }
        Ok(t.clamp(0.0, end))
    }

    /// Piece index whose closed interval contains `t` (ties resolve to the
    /// earlier piece, consistent with continuity).
    fn piece_index(&self, t: f64) -> Result<usize, TrajectoryError> {
        let t = self.clamp_to_domain(t)?;
        let idx = match self
            .switch_times
            .binary_search_by(|probe| probe.partial_cmp(&t).unwrap())
        {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        };
        Ok(idx.min(self.pieces.len() - 1))
    }

    /// Value at `t` by piecewise flow composition.
    pub fn evaluate(&self, t: f64) -> Result<DVector<f64>, TrajectoryError> {
        let t = self.clamp_to_domain(t)?;
        let i = self.piece_index(t)?;
        let start = &self.switch_states()[i];
        Ok(self.pieces[i].flow(start, t - self.switch_times[i]))
    }

    /// Restriction to `[a, b]`, reparametrized to start at time zero.
    /// The endpoints need not be switch times.
    pub fn restrict(&self, a: f64, b: f64) -> Result<PwaTrajectory, TrajectoryError> {
        if !(0.0 <= a && a < b && b <= self.duration()) {
            return Err(TrajectoryError::OutOfDomain(a, self.duration()));
        }
        let x0 = self.evaluate(a)?;
        let mut times = vec![0.0];
        let mut pieces = Vec::new();
        let first = self.piece_index(a)?;
        for i in first..self.pieces.len() {
            let end = self.switch_times[i + 1].min(b);
            if end <= a + 1e-15 {
                continue;
            }
            pieces.push(self.pieces[i].clone());
            times.push(end - a);
            if end >= b {
                break;
            }
        }
        PwaTrajectory::new(times, pieces, x0)
    }

    /// Pointwise capture check: the infinity-norm deviation at every sample
    /// time is at most `delta` (boundary inclusive).
    pub fn delta_captures(&self, s: &TimeSeries, delta: f64) -> Result<bool, TrajectoryError> {
        Ok(self.max_deviation(s)? <= delta)
    }

    /// Largest infinity-norm deviation from the series over its sample times.
    pub fn max_deviation(&self, s: &TimeSeries) -> Result<f64, TrajectoryError> {
        let mut max = 0.0_f64;
        for (t, x) in s.times().iter().zip(s.states().iter()) {
            let y = self.evaluate(*t)?;
            max = max.max(inf_norm(&(x - y)));
        }
        Ok(max)
    }
}

/// The epsilon-tube of a trajectory: an infinity-norm ball of fixed radius
/// whose center follows the trajectory.
#[derive(Debug, Clone)]
pub struct Tube {
    trajectory: PwaTrajectory,
    epsilon: f64,
}

impl Tube {
    pub fn new(trajectory: PwaTrajectory, epsilon: f64) -> Result<Self, TrajectoryError> {
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(TrajectoryError::Invalid(format!(
                "epsilon must be finite and nonnegative, got {epsilon}"
            )));
        }
        Ok(Self { trajectory, epsilon })
    }

    pub fn trajectory(&self) -> &PwaTrajectory {
        &self.trajectory
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Tube cross-section at time `t`.
    pub fn at(&self, t: f64) -> Result<Ball, TrajectoryError> {
        let center = self.trajectory.evaluate(t)?;
        Ok(Ball::new(center, self.epsilon).expect("validated radius"))
    }
}
