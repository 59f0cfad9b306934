//! Convex polytope arithmetic in halfspace representation.
//!
//! Polytopes are stored canonically as lists of linear constraints with unit
//! Euclidean normals; vertices are computed on demand and cached. Emptiness,
//! support functions, and redundancy tests go through a small LP. Flat
//! (lower-dimensional) polytopes are first-class: equality constraints carry
//! the affine hull, and every operation tolerates them.

mod hull;
mod lp;

use std::sync::OnceLock;

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use lp::LpOutcome;

/// Feasibility tolerance: constraints violated by no more than this count as
/// satisfied. The value absorbs floating-point LP noise; no principled choice
/// is available, see the crate docs.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Tolerance for accepting candidate vertices and deduplicating them.
const VERTEX_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GeometryError {
    #[error("polytope is unbounded")]
    UnboundedPolytope,
    #[error("polytope is empty")]
    EmptyPolytope,
    #[error("empty input")]
    EmptyInput,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("invalid constraint: {0}")]
    InvalidConstraint(String),
}

/// Relation of a linear constraint `a.x ~ b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "le")]
    Le,
    #[serde(rename = "eq")]
    Eq,
}

/// A linear constraint `normal . x <= offset` or `normal . x = offset`,
/// stored with the normal scaled to unit Euclidean length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawConstraint", into = "RawConstraint")]
pub struct LinearConstraint {
    normal: DVector<f64>,
    offset: f64,
    relation: Relation,
}

#[derive(Serialize, Deserialize)]
struct RawConstraint {
    normal: Vec<f64>,
    offset: f64,
    relation: Relation,
}

impl TryFrom<RawConstraint> for LinearConstraint {
    type Error = GeometryError;
    fn try_from(raw: RawConstraint) -> Result<Self, Self::Error> {
        LinearConstraint::new(DVector::from_vec(raw.normal), raw.offset, raw.relation)
    }
}

impl From<LinearConstraint> for RawConstraint {
    fn from(c: LinearConstraint) -> Self {
        RawConstraint {
            normal: c.normal.iter().copied().collect(),
            offset: c.offset,
            relation: c.relation,
        }
    }
}

impl LinearConstraint {
    /// Canonicalizing constructor. Rejects zero or non-finite normals.
    /// Normals already within 1e-12 of unit length are left untouched so that
    /// construction is idempotent bit-for-bit (serialization round-trips).
    pub fn new(
        normal: DVector<f64>,
        offset: f64,
        relation: Relation,
    ) -> Result<Self, GeometryError> {
        if normal.is_empty() {
            return Err(GeometryError::InvalidConstraint("empty normal".into()));
        }
        if normal.iter().any(|x| !x.is_finite()) || !offset.is_finite() {
            return Err(GeometryError::InvalidConstraint("non-finite entry".into()));
        }
        let norm = normal.norm();
        if norm <= 1e-300 {
            return Err(GeometryError::InvalidConstraint("zero normal".into()));
        }
        if (norm - 1.0).abs() <= 1e-12 {
            return Ok(Self { normal, offset, relation });
        }
        Ok(Self {
            normal: normal / norm,
            offset: offset / norm,
            relation,
        })
    }

    pub fn le(normal: &[f64], offset: f64) -> Result<Self, GeometryError> {
        Self::new(DVector::from_row_slice(normal), offset, Relation::Le)
    }

    pub fn eq(normal: &[f64], offset: f64) -> Result<Self, GeometryError> {
        Self::new(DVector::from_row_slice(normal), offset, Relation::Eq)
    }

    pub fn normal(&self) -> &DVector<f64> {
        &self.normal
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn relation(&self) -> Relation {
        self.relation
    }

    pub fn dim(&self) -> usize {
        self.normal.len()
    }

    /// Signed violation `normal . x - offset`; nonpositive satisfies a `Le`.
    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        self.normal.dot(x) - self.offset
    }

    pub fn satisfied(&self, x: &DVector<f64>, tol: f64) -> bool {
        match self.relation {
            Relation::Le => self.eval(x) <= tol,
            Relation::Eq => self.eval(x).abs() <= tol,
        }
    }
}

/// Infinity-norm ball: the box `{y : |center - y|_inf <= radius}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ball {
    center: DVector<f64>,
    radius: f64,
}

impl Ball {
    pub fn new(center: DVector<f64>, radius: f64) -> Result<Self, GeometryError> {
        if !(radius >= 0.0) || !radius.is_finite() {
            return Err(GeometryError::InvalidConstraint(format!(
                "ball radius must be finite and nonnegative, got {radius}"
            )));
        }
        if center.iter().any(|x| !x.is_finite()) {
            return Err(GeometryError::InvalidConstraint("non-finite center".into()));
        }
        Ok(Self { center, radius })
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        crate::inf_norm(&(x - &self.center)) <= self.radius + tol
    }

    /// The same set as a polytope with 2n axis-aligned constraints.
    pub fn to_polytope(&self) -> Polytope {
        let lo = self.center.map(|c| c - self.radius);
        let hi = self.center.map(|c| c + self.radius);
        Polytope::from_bounds(lo.as_slice(), hi.as_slice()).expect("ball bounds are valid")
    }
}

/// Convex polytope as an intersection of linear constraints.
#[derive(Debug, Serialize, Deserialize)]
#[serde(try_from = "RawPolytope", into = "RawPolytope")]
pub struct Polytope {
    constraints: Vec<LinearConstraint>,
    #[serde(skip)]
    vertex_cache: OnceLock<Vec<DVector<f64>>>,
}

#[derive(Serialize, Deserialize)]
struct RawPolytope {
    constraints: Vec<LinearConstraint>,
}

impl TryFrom<RawPolytope> for Polytope {
    type Error = GeometryError;
    fn try_from(raw: RawPolytope) -> Result<Self, Self::Error> {
        Polytope::from_constraints(raw.constraints)
    }
}

impl From<Polytope> for RawPolytope {
    fn from(p: Polytope) -> Self {
        RawPolytope { constraints: p.constraints }
    }
}

/// Structural equality on constraint lists; use [`Polytope::set_eq`] for
/// equality as sets.
impl PartialEq for Polytope {
    fn eq(&self, other: &Self) -> bool {
        self.constraints == other.constraints
    }
}

impl Clone for Polytope {
    fn clone(&self) -> Self {
        let vertex_cache = OnceLock::new();
        if let Some(v) = self.vertex_cache.get() {
            let _ = vertex_cache.set(v.clone());
        }
        Self { constraints: self.constraints.clone(), vertex_cache }
    }
}

impl Polytope {
    pub fn from_constraints(constraints: Vec<LinearConstraint>) -> Result<Self, GeometryError> {
        if constraints.is_empty() {
            return Err(GeometryError::EmptyInput);
        }
        let dim = constraints[0].dim();
        for c in &constraints {
            if c.dim() != dim {
                return Err(GeometryError::DimensionMismatch(dim, c.dim()));
            }
        }
        Ok(Self { constraints, vertex_cache: OnceLock::new() })
    }

    /// Canonical representation of the empty set in `dim` dimensions.
    pub fn empty(dim: usize) -> Self {
        let mut e1 = vec![0.0; dim];
        e1[0] = 1.0;
        let a = LinearConstraint::le(&e1, -1.0).expect("valid");
        e1[0] = -1.0;
        let b = LinearConstraint::le(&e1, -1.0).expect("valid");
        Self::from_constraints(vec![a, b]).expect("valid")
    }

    /// Axis-aligned box `lo <= x <= hi` (flat where `lo == hi`).
    pub fn from_bounds(lo: &[f64], hi: &[f64]) -> Result<Self, GeometryError> {
        if lo.is_empty() {
            return Err(GeometryError::EmptyInput);
        }
        if lo.len() != hi.len() {
            return Err(GeometryError::DimensionMismatch(lo.len(), hi.len()));
        }
        let dim = lo.len();
        let mut constraints = Vec::with_capacity(2 * dim);
        for i in 0..dim {
            if lo[i] > hi[i] {
                return Err(GeometryError::InvalidConstraint(format!(
                    "bounds crossed in dimension {i}: {} > {}",
                    lo[i], hi[i]
                )));
            }
            let mut n = vec![0.0; dim];
            n[i] = 1.0;
            constraints.push(LinearConstraint::le(&n, hi[i])?);
            n[i] = -1.0;
            constraints.push(LinearConstraint::le(&n, -lo[i])?);
        }
        Self::from_constraints(constraints)
    }

    /// Smallest convex polytope containing all the points. Degenerate inputs
    /// produce equality constraints for the affine hull.
    pub fn chull(points: &[DVector<f64>]) -> Result<Self, GeometryError> {
        if points.is_empty() {
            return Err(GeometryError::EmptyInput);
        }
        let dim = points[0].len();
        for p in points {
            if p.len() != dim {
                return Err(GeometryError::DimensionMismatch(dim, p.len()));
            }
        }
        let scale = points
            .iter()
            .flat_map(|p| p.iter())
            .fold(1.0_f64, |m, x| m.max(x.abs()));
        let mut deduped: Vec<DVector<f64>> = Vec::with_capacity(points.len());
        for p in points {
            if !deduped.iter().any(|q| (p - q).amax() <= 1e-9 * scale) {
                deduped.push(p.clone());
            }
        }
        let constraints = hull::convex_hull(&deduped)?;
        Self::from_constraints(constraints)
    }

    pub fn dim(&self) -> usize {
        self.constraints[0].dim()
    }

    pub fn constraints(&self) -> &[LinearConstraint] {
        &self.constraints
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        self.constraints.iter().all(|c| c.satisfied(x, tol))
    }

    /// Emptiness by linear feasibility at tolerance [`FEASIBILITY_TOL`].
    pub fn is_empty(&self) -> bool {
        match lp::max_slack(&self.constraints, self.dim()) {
            LpOutcome::Optimal { value, .. } => value < -FEASIBILITY_TOL,
            LpOutcome::Infeasible => true,
            LpOutcome::Unbounded => false,
        }
    }

    /// A feasible point with maximal margin to the inequality constraints,
    /// if one exists.
    pub fn inner_point(&self) -> Option<DVector<f64>> {
        match lp::max_slack(&self.constraints, self.dim()) {
            LpOutcome::Optimal { value, point } if value >= -FEASIBILITY_TOL => Some(point),
            _ => None,
        }
    }

    /// Support function `max {d . x : x in P}`.
    pub fn support(&self, dir: &DVector<f64>) -> Result<f64, GeometryError> {
        match lp::maximize(dir, &self.constraints) {
            LpOutcome::Optimal { value, .. } => Ok(value),
            LpOutcome::Infeasible => Err(GeometryError::EmptyPolytope),
            LpOutcome::Unbounded => Err(GeometryError::UnboundedPolytope),
        }
    }

    /// Componentwise bounds `(lo, hi)` of the polytope.
    pub fn bounding_box(&self) -> Result<(DVector<f64>, DVector<f64>), GeometryError> {
        let dim = self.dim();
        let mut lo = DVector::zeros(dim);
        let mut hi = DVector::zeros(dim);
        let mut dir = DVector::zeros(dim);
        for i in 0..dim {
            dir[i] = 1.0;
            hi[i] = self.support(&dir)?;
            dir[i] = -1.0;
            lo[i] = -self.support(&dir)?;
            dir[i] = 0.0;
        }
        Ok((lo, hi))
    }

    /// Minimal vertex set, in lexicographic coordinate order.
    ///
    /// Every subset of `dim` constraints is intersected and the solution kept
    /// when it is feasible; for a bounded polytope these basic solutions are
    /// exactly the vertices.
    pub fn vertices(&self) -> Result<&[DVector<f64>], GeometryError> {
        if let Some(v) = self.vertex_cache.get() {
            return Ok(v);
        }
        let computed = self.compute_vertices()?;
        Ok(self.vertex_cache.get_or_init(|| computed))
    }

    fn compute_vertices(&self) -> Result<Vec<DVector<f64>>, GeometryError> {
        let dim = self.dim();
        // Boundedness first: support must be finite along every axis. This
        // also detects emptiness before the combinatorial sweep.
        let (lo, hi) = self.bounding_box()?;
        let scale = lo.amax().max(hi.amax()).max(1.0);

        let mut vertices: Vec<DVector<f64>> = Vec::new();
        let m = self.constraints.len();
        for combo in (0..m).combinations(dim) {
            let mut a = DMatrix::zeros(dim, dim);
            let mut b = DVector::zeros(dim);
            for (row, &ci) in combo.iter().enumerate() {
                let c = &self.constraints[ci];
                for col in 0..dim {
                    a[(row, col)] = c.normal()[col];
                }
                b[row] = c.offset();
            }
            let lu = a.full_piv_lu();
            let Some(x) = lu.solve(&b) else { continue };
            if x.iter().any(|v| !v.is_finite()) {
                continue;
            }
            // Reject ill-conditioned intersections; genuine vertices reappear
            // through a better-conditioned active subset.
            let residual = {
                let mut r: f64 = 0.0;
                for (row, &ci) in combo.iter().enumerate() {
                    r = r.max((self.constraints[ci].normal().dot(&x) - b[row]).abs());
                }
                r
            };
            if residual > 1e-7 * scale {
                continue;
            }
            if !self.contains(&x, VERTEX_TOL * scale) {
                continue;
            }
            if !vertices.iter().any(|v| (v - &x).amax() <= VERTEX_TOL * scale) {
                vertices.push(x);
            }
        }
        if vertices.is_empty() {
            return Err(GeometryError::EmptyPolytope);
        }
        vertices.sort_by(|a, b| a.iter().partial_cmp(b.iter()).unwrap());
        Ok(vertices)
    }

    /// Constraint union of two polytopes over the same space.
    pub fn intersect(&self, other: &Polytope) -> Result<Polytope, GeometryError> {
        if self.dim() != other.dim() {
            return Err(GeometryError::DimensionMismatch(self.dim(), other.dim()));
        }
        let mut constraints = self.constraints.clone();
        constraints.extend(other.constraints.iter().cloned());
        Polytope::from_constraints(constraints)
    }

    /// Uniform inward shift: every inequality offset moves by
    /// `delta / |normal|_2`; equalities are unchanged. The result may be empty.
    pub fn contract(&self, delta: f64) -> Polytope {
        let constraints = self
            .constraints
            .iter()
            .map(|c| match c.relation() {
                Relation::Eq => c.clone(),
                Relation::Le => LinearConstraint::new(
                    c.normal().clone(),
                    c.offset() - delta / c.normal().norm(),
                    Relation::Le,
                )
                .expect("canonical constraint stays valid"),
            })
            .collect();
        Polytope::from_constraints(constraints).expect("nonempty constraint list")
    }

    /// Outer template approximation `{x : d.x <= h_P(d) for d in dirs}`.
    pub fn template_overapprox(
        &self,
        dirs: &[DVector<f64>],
    ) -> Result<Polytope, GeometryError> {
        let mut constraints = Vec::with_capacity(dirs.len());
        for d in dirs {
            let h = self.support(d)?;
            constraints.push(LinearConstraint::new(d.clone(), h, Relation::Le)?);
        }
        Polytope::from_constraints(constraints)
    }

    /// Inner template approximation: the hull of the support vectors (argmax
    /// vertices) in each direction. Ties resolve to the lexicographically
    /// smallest vertex so the result is deterministic.
    pub fn template_underapprox(
        &self,
        dirs: &[DVector<f64>],
    ) -> Result<Polytope, GeometryError> {
        let verts = self.vertices()?;
        let scale = verts
            .iter()
            .flat_map(|v| v.iter())
            .fold(1.0_f64, |m, x| m.max(x.abs()));
        let mut points: Vec<DVector<f64>> = Vec::with_capacity(dirs.len());
        for d in dirs {
            let best = verts
                .iter()
                .map(|v| d.dot(v))
                .fold(f64::NEG_INFINITY, f64::max);
            let argmax = verts
                .iter()
                .filter(|v| d.dot(v) >= best - 1e-9 * scale)
                .min_by(|a, b| a.iter().partial_cmp(b.iter()).unwrap())
                .expect("nonempty vertex set");
            points.push(argmax.clone());
        }
        Polytope::chull(&points)
    }

    /// Image `{m x + offset : x in P}` of a bounded polytope.
    pub fn map_affine(
        &self,
        m: &DMatrix<f64>,
        offset: &DVector<f64>,
    ) -> Result<Polytope, GeometryError> {
        let verts = self.vertices()?;
        let mapped: Vec<DVector<f64>> = verts.iter().map(|v| m * v + offset).collect();
        Polytope::chull(&mapped)
    }

    /// Inclusion test by support-function dominance. Empty sets are subsets
    /// of everything.
    pub fn subset_of(&self, other: &Polytope, tol: f64) -> bool {
        if self.dim() != other.dim() {
            return false;
        }
        for c in &other.constraints {
            let checks: &[(DVector<f64>, f64)] = &match c.relation() {
                Relation::Le => vec![(c.normal().clone(), c.offset())],
                Relation::Eq => vec![
                    (c.normal().clone(), c.offset()),
                    (-c.normal().clone(), -c.offset()),
                ],
            };
            for (dir, bound) in checks {
                match self.support(dir) {
                    Ok(h) => {
                        if h > bound + tol {
                            return false;
                        }
                    }
                    Err(GeometryError::EmptyPolytope) => return true,
                    Err(_) => return false,
                }
            }
        }
        true
    }

    /// Set equality at tolerance.
    pub fn set_eq(&self, other: &Polytope, tol: f64) -> bool {
        self.subset_of(other, tol) && other.subset_of(self, tol)
    }

    /// Drops constraints that do not change the set. Equalities are kept.
    pub fn remove_redundant(&self) -> Polytope {
        let mut active: Vec<LinearConstraint> = Vec::with_capacity(self.constraints.len());
        // Exact duplicates first.
        for c in &self.constraints {
            let dup = active.iter().any(|d| {
                d.relation() == c.relation()
                    && (d.normal() - c.normal()).amax() <= 1e-12
                    && (d.offset() - c.offset()).abs() <= 1e-12
            });
            if !dup {
                active.push(c.clone());
            }
        }
        let mut i = 0;
        while i < active.len() {
            if active[i].relation() == Relation::Eq || active.len() == 1 {
                i += 1;
                continue;
            }
            let mut rest = active.clone();
            let candidate = rest.remove(i);
            let redundant = match lp::maximize(candidate.normal(), &rest) {
                LpOutcome::Optimal { value, .. } => value <= candidate.offset() + 1e-12,
                LpOutcome::Infeasible => true,
                LpOutcome::Unbounded => false,
            };
            if redundant {
                active.remove(i);
            } else {
                i += 1;
            }
        }
        Polytope::from_constraints(active).expect("nonempty constraint list")
    }
}

/// Octagonal template directions: `+-e_i` and `(+-e_i +- e_j)/sqrt(2)`.
pub fn octagonal_directions(dim: usize) -> Vec<DVector<f64>> {
    let mut dirs = Vec::new();
    for i in 0..dim {
        for sign in [1.0, -1.0] {
            let mut d = DVector::zeros(dim);
            d[i] = sign;
            dirs.push(d);
        }
    }
    let inv_sqrt2 = 1.0 / 2.0_f64.sqrt();
    for i in 0..dim {
        for j in (i + 1)..dim {
            for si in [1.0, -1.0] {
                for sj in [1.0, -1.0] {
                    let mut d = DVector::zeros(dim);
                    d[i] = si * inv_sqrt2;
                    d[j] = sj * inv_sqrt2;
                    dirs.push(d);
                }
            }
        }
    }
    dirs
}
