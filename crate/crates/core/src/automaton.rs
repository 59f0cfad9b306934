//! Hybrid automata with affine dynamics: locations with affine flows and
//! polytopic invariants, guarded transitions, executions, and the single
//! permitted model edit (widening constraints, adding a transition or a
//! location).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dynamics::AffineDynamics;
use crate::geometry::Polytope;
use crate::trajectory::{PwaTrajectory, TrajectoryError};

pub type LocationId = String;

/// Tolerance under which two flows count as identical (flow injectivity).
pub const FLOW_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutomatonError {
    #[error("unknown location {0}")]
    UnknownLocation(LocationId),
    #[error("location {0} already exists")]
    DuplicateLocation(LocationId),
    #[error("fresh location {fresh} would duplicate the flow of {existing}")]
    InjectivityViolation { fresh: LocationId, existing: LocationId },
    #[error("path length {0} does not match piece count {1}")]
    PathLengthMismatch(usize, usize),
    #[error("path step ({0}, {1}) is not a transition")]
    InvalidPath(LocationId, LocationId),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Location {
    #[serde(flatten)]
    pub flow: AffineDynamics,
    pub invariant: Polytope,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawTransition {
    from: LocationId,
    to: LocationId,
    guard: Polytope,
}

/// Hybrid automaton with affine dynamics. Values are immutable; edits go
/// through [`Adha::q_update`], which returns a new automaton.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawAdha", into = "RawAdha")]
pub struct Adha {
    dimension: usize,
    locations: BTreeMap<LocationId, Location>,
    transitions: BTreeMap<(LocationId, LocationId), Polytope>,
}

#[derive(Serialize, Deserialize)]
struct RawAdha {
    dimension: usize,
    locations: BTreeMap<LocationId, Location>,
    transitions: Vec<RawTransition>,
}

impl TryFrom<RawAdha> for Adha {
    type Error = AutomatonError;
    fn try_from(raw: RawAdha) -> Result<Self, Self::Error> {
        let mut adha = Adha::new(raw.dimension);
        for (id, loc) in raw.locations {
            adha.insert_location(id, loc)?;
        }
        for t in raw.transitions {
            adha.insert_transition(t.from, t.to, t.guard)?;
        }
        Ok(adha)
    }
}

impl From<Adha> for RawAdha {
    fn from(a: Adha) -> Self {
        RawAdha {
            dimension: a.dimension,
            locations: a.locations,
            transitions: a
                .transitions
                .into_iter()
                .map(|((from, to), guard)| RawTransition { from, to, guard })
                .collect(),
        }
    }
}

/// A structural defect reported by [`Adha::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DuplicateFlow(LocationId, LocationId),
    DanglingTransition(LocationId, LocationId),
    UnboundedInvariant(LocationId),
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::DuplicateFlow(a, b) => write!(f, "locations {a} and {b} share a flow"),
            Violation::DanglingTransition(a, b) => {
                write!(f, "transition ({a}, {b}) references an unknown location")
            }
            Violation::UnboundedInvariant(q) => write!(f, "invariant of {q} is unbounded"),
        }
    }
}

impl Adha {
    /// The empty automaton: no locations, no transitions.
    pub fn new(dimension: usize) -> Self {
        Self {
            dimension,
            locations: BTreeMap::new(),
            transitions: BTreeMap::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn location_ids(&self) -> impl Iterator<Item = &LocationId> {
        self.locations.keys()
    }

    pub fn location_count(&self) -> usize {
        self.locations.len()
    }

    pub fn transition_count(&self) -> usize {
        self.transitions.len()
    }

    pub fn location(&self, id: &str) -> Option<&Location> {
        self.locations.get(id)
    }

    pub fn flow(&self, id: &str) -> Option<&AffineDynamics> {
        self.locations.get(id).map(|l| &l.flow)
    }

    pub fn invariant(&self, id: &str) -> Option<&Polytope> {
        self.locations.get(id).map(|l| &l.invariant)
    }

    pub fn guard(&self, from: &str, to: &str) -> Option<&Polytope> {
        self.transitions.get(&(from.to_string(), to.to_string()))
    }

    pub fn transitions(&self) -> impl Iterator<Item = (&LocationId, &LocationId, &Polytope)> {
        self.transitions.iter().map(|((a, b), g)| (a, b, g))
    }

    pub fn has_transition(&self, from: &str, to: &str) -> bool {
        self.transitions.contains_key(&(from.to_string(), to.to_string()))
    }

    pub fn outgoing(&self, from: &str) -> Vec<(&LocationId, &Polytope)> {
        self.transitions
            .iter()
            .filter(|((a, _), _)| a == from)
            .map(|((_, b), g)| (b, g))
            .collect()
    }

    pub fn insert_location(&mut self, id: LocationId, loc: Location) -> Result<(), AutomatonError> {
        if loc.flow.dim() != self.dimension {
            return Err(AutomatonError::DimensionMismatch(self.dimension, loc.flow.dim()));
        }
        if loc.invariant.dim() != self.dimension {
            return Err(AutomatonError::DimensionMismatch(
                self.dimension,
                loc.invariant.dim(),
            ));
        }
        if self.locations.contains_key(&id) {
            return Err(AutomatonError::DuplicateLocation(id));
        }
        self.locations.insert(id, loc);
        Ok(())
    }

    pub fn insert_transition(
        &mut self,
        from: LocationId,
        to: LocationId,
        guard: Polytope,
    ) -> Result<(), AutomatonError> {
        if !self.locations.contains_key(&from) {
            return Err(AutomatonError::UnknownLocation(from));
        }
        if !self.locations.contains_key(&to) {
            return Err(AutomatonError::UnknownLocation(to));
        }
        if guard.dim() != self.dimension {
            return Err(AutomatonError::DimensionMismatch(self.dimension, guard.dim()));
        }
        self.transitions.insert((from, to), guard);
        Ok(())
    }

    /// Well-formedness report: flow injectivity, dangling transitions,
    /// bounded invariants. Empty means well-formed.
    pub fn validate(&self) -> Vec<Violation> {
        let mut violations = Vec::new();
        let ids: Vec<&LocationId> = self.locations.keys().collect();
        for (i, a) in ids.iter().enumerate() {
            for b in &ids[i + 1..] {
                let fa = &self.locations[*a].flow;
                let fb = &self.locations[*b].flow;
                if fa.close_to(fb, FLOW_TOL) {
                    violations.push(Violation::DuplicateFlow((*a).clone(), (*b).clone()));
                }
            }
        }
        for (from, to) in self.transitions.keys() {
            if !self.locations.contains_key(from) || !self.locations.contains_key(to) {
                violations.push(Violation::DanglingTransition(from.clone(), to.clone()));
            }
        }
        for (id, loc) in &self.locations {
            if loc.invariant.bounding_box().is_err() {
                violations.push(Violation::UnboundedInvariant(id.clone()));
            }
        }
        violations
    }

    /// The location (if any) whose flow coincides with `dynamics` within
    /// [`FLOW_TOL`].
    pub fn location_with_flow(&self, dynamics: &AffineDynamics) -> Option<&LocationId> {
        self.locations
            .iter()
            .find(|(_, loc)| loc.flow.close_to(dynamics, FLOW_TOL))
            .map(|(id, _)| id)
    }

    /// Checks that consecutive path entries are transitions.
    pub fn path_is_valid(&self, path: &[LocationId]) -> bool {
        path.iter().all(|q| self.locations.contains_key(q))
            && path.windows(2).all(|w| self.has_transition(&w[0], &w[1]))
    }

    /// Execution check against the model: piece dynamics must equal the path
    /// flows, sampled states must stay in the invariants, and switch states
    /// must hit the guards (all within `tol`).
    pub fn check_execution(&self, e: &Execution, tol: f64) -> Result<bool, AutomatonError> {
        if e.path.len() != e.trajectory.piece_count() {
            return Err(AutomatonError::PathLengthMismatch(
                e.path.len(),
                e.trajectory.piece_count(),
            ));
        }
        for q in &e.path {
            if !self.locations.contains_key(q) {
                return Err(AutomatonError::UnknownLocation(q.clone()));
            }
        }
        let times = e.trajectory.switch_times();
        for (i, q) in e.path.iter().enumerate() {
            let loc = &self.locations[q];
            if !loc.flow.close_to(e.trajectory.piece(i), FLOW_TOL) {
                return Ok(false);
            }
            // Invariant containment on a sampling grid of the piece.
            let (t0, t1) = (times[i], times[i + 1]);
            let steps = 200;
            for j in 0..=steps {
                let t = t0 + (t1 - t0) * j as f64 / steps as f64;
                let x = e.trajectory.evaluate(t)?;
                if !loc.invariant.contains(&x, tol) {
                    return Ok(false);
                }
            }
            // Guard containment at the switch into the next piece.
            if i + 1 < e.path.len() {
                let next = &e.path[i + 1];
                let Some(guard) = self.guard(q, next) else {
                    return Ok(false);
                };
                let x = e.trajectory.evaluate(t1)?;
                if !guard.contains(&x, tol) {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }

    /// The single permitted edit. Reusing an existing location widens its
    /// invariant (and the guard from `last(path)`) by convex hull; a fresh
    /// location is inserted with the given flow, invariant `chull(r_i)`, and
    /// guard `r_g`. Either way the edit only adds behavior.
    ///
    /// `path_last` is the predecessor location; `None` for the first piece,
    /// in which case no transition is touched.
    pub fn q_update(
        &self,
        path_last: Option<&LocationId>,
        target: QUpdateTarget,
        r_i: &Polytope,
        r_g: &Polytope,
    ) -> Result<Adha, AutomatonError> {
        let mut updated = self.clone();
        let q = match target {
            QUpdateTarget::Existing(q) => {
                let Some(loc) = self.locations.get(&q) else {
                    return Err(AutomatonError::UnknownLocation(q));
                };
                // Widen the invariant only when it actually grows; a no-op
                // update keeps the automaton structurally identical.
                if !r_i.subset_of(&loc.invariant, crate::geometry::FEASIBILITY_TOL) {
                    let widened = hull_union(&loc.invariant, r_i)?;
                    updated.locations.get_mut(&q).unwrap().invariant = widened;
                }
                q
            }
            QUpdateTarget::Fresh { id, dynamics } => {
                if self.locations.contains_key(&id) {
                    return Err(AutomatonError::DuplicateLocation(id));
                }
                if let Some(existing) = self.location_with_flow(&dynamics) {
                    return Err(AutomatonError::InjectivityViolation {
                        fresh: id,
                        existing: existing.clone(),
                    });
                }
                if dynamics.dim() != self.dimension {
                    return Err(AutomatonError::DimensionMismatch(
                        self.dimension,
                        dynamics.dim(),
                    ));
                }
                let invariant = hull_of(r_i)?;
                updated.locations.insert(
                    id.clone(),
                    Location { flow: dynamics, invariant },
                );
                id
            }
        };
        if let Some(last) = path_last {
            if !updated.locations.contains_key(last) {
                return Err(AutomatonError::UnknownLocation(last.clone()));
            }
            let key = (last.clone(), q.clone());
            let guard = match updated.transitions.get(&key) {
                // Absent guard on a new transition acts as the empty set.
                None => hull_of(r_g)?,
                Some(existing) => {
                    if r_g.subset_of(existing, crate::geometry::FEASIBILITY_TOL) {
                        existing.clone()
                    } else {
                        hull_union(existing, r_g)?
                    }
                }
            };
            updated.transitions.insert(key, guard);
        }
        Ok(updated)
    }
}

/// Target of a q-update: an existing location or a fresh one with its flow.
#[derive(Debug, Clone)]
pub enum QUpdateTarget {
    Existing(LocationId),
    Fresh { id: LocationId, dynamics: AffineDynamics },
}

/// Convex hull of the union of two polytopes (hull of joint vertex sets).
fn hull_union(a: &Polytope, b: &Polytope) -> Result<Polytope, AutomatonError> {
    let mut points = a.vertices()?.to_vec();
    points.extend(b.vertices()?.iter().cloned());
    Ok(Polytope::chull(&points)?)
}

/// Canonical bounded hull of a polytope (its own vertex hull).
fn hull_of(p: &Polytope) -> Result<Polytope, AutomatonError> {
    Ok(Polytope::chull(p.vertices()?)?)
}

/// A trajectory paired with the location path it follows.
#[derive(Debug, Clone)]
pub struct Execution {
    pub trajectory: PwaTrajectory,
    pub path: Vec<LocationId>,
}

impl Execution {
    /// The trajectory with its (possibly perturbed) piece dynamics, dropping
    /// the path annotation.
    pub fn to_pwa(&self) -> PwaTrajectory {
        self.trajectory.clone()
    }
}
