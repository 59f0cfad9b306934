//! Convex hull construction with first-class support for flat inputs.
//!
//! Degenerate point sets (points, segments, lower-dimensional patches) come up
//! routinely here: flat guard boxes, homogenized states, contraction leftovers.
//! The hull therefore first detects the affine hull of the input, emits one
//! equality constraint per missing dimension, and only then computes facets
//! inside the affine subspace.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};

use super::{GeometryError, LinearConstraint, Relation};

/// Halfspace representation of the convex hull of `points` (nonempty, deduped).
pub(crate) fn convex_hull(points: &[DVector<f64>]) -> Result<Vec<LinearConstraint>, GeometryError> {
    let dim = points[0].len();
    let scale = points
        .iter()
        .flat_map(|p| p.iter())
        .fold(1.0_f64, |m, x| m.max(x.abs()));
    let (basis, complement) = affine_basis(points, scale);
    let origin = &points[0];

    let mut constraints = Vec::new();
    for w in &complement {
        constraints.push(LinearConstraint::new(w.clone(), w.dot(origin), Relation::Eq)?);
    }

    let rank = basis.len();
    if rank == 0 {
        return Ok(constraints);
    }

    // Coordinates within the affine subspace.
    let projected: Vec<DVector<f64>> = points
        .iter()
        .map(|p| DVector::from_iterator(rank, basis.iter().map(|u| u.dot(&(p - origin)))))
        .collect();

    let facets = match rank {
        1 => interval_facets(&projected),
        2 => polygon_facets(&projected, scale),
        _ => brute_force_facets(&projected, rank, scale),
    };

    for (normal_sub, offset_sub) in facets {
        // Lift `n.y <= b` with `y = U^T (x - origin)` back to the full space.
        let mut normal = DVector::zeros(dim);
        for (coeff, u) in normal_sub.iter().zip(basis.iter()) {
            normal += u * *coeff;
        }
        let offset = offset_sub + normal.dot(origin);
        constraints.push(LinearConstraint::new(normal, offset, Relation::Le)?);
    }
    Ok(constraints)
}

/// Orthonormal basis of the affine hull direction space, plus its complement.
fn affine_basis(points: &[DVector<f64>], scale: f64) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let dim = points[0].len();
    let tol = 1e-9 * scale;
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for p in &points[1..] {
        if basis.len() == dim {
            break;
        }
        let mut v = p - &points[0];
        for u in &basis {
            let proj = u.dot(&v);
            v -= u * proj;
        }
        let norm = v.norm();
        if norm > tol {
            basis.push(v / norm);
        }
    }
    let mut complement: Vec<DVector<f64>> = Vec::new();
    for i in 0..dim {
        let mut v = DVector::zeros(dim);
        v[i] = 1.0;
        for u in basis.iter().chain(complement.iter()) {
            let proj = u.dot(&v);
            v -= u * proj;
        }
        let norm = v.norm();
        if norm > 1e-7 {
            complement.push(v / norm);
        }
    }
    (basis, complement)
}

fn interval_facets(projected: &[DVector<f64>]) -> Vec<(DVector<f64>, f64)> {
    let lo = projected.iter().map(|y| y[0]).fold(f64::INFINITY, f64::min);
    let hi = projected.iter().map(|y| y[0]).fold(f64::NEG_INFINITY, f64::max);
    vec![
        (DVector::from_vec(vec![1.0]), hi),
        (DVector::from_vec(vec![-1.0]), -lo),
    ]
}

/// Andrew's monotone chain; collinear points are dropped from the chain.
fn polygon_facets(projected: &[DVector<f64>], scale: f64) -> Vec<(DVector<f64>, f64)> {
    let mut pts: Vec<(f64, f64)> = projected.iter().map(|y| (y[0], y[1])).collect();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup_by(|a, b| (a.0 - b.0).abs() <= 1e-12 * scale && (a.1 - b.1).abs() <= 1e-12 * scale);
    let cross_tol = 1e-12 * scale * scale;
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };

    let mut lower: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for &p in &pts {
        while lower.len() >= 2
            && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= cross_tol
        {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for &p in pts.iter().rev() {
        while upper.len() >= 2
            && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= cross_tol
        {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    let mut hull = lower;
    hull.extend(upper);

    if hull.len() < 3 {
        // Numerically collinear leftovers; fall back to the bounding segment.
        // The caller's rank detection makes this rare.
        return brute_force_facets(projected, 2, scale);
    }

    let mut facets = Vec::with_capacity(hull.len());
    for i in 0..hull.len() {
        let a = hull[i];
        let b = hull[(i + 1) % hull.len()];
        // Outward normal of a counterclockwise edge.
        let normal = DVector::from_vec(vec![b.1 - a.1, -(b.0 - a.0)]);
        let offset = normal[0] * a.0 + normal[1] * a.1;
        facets.push((normal, offset));
    }
    facets
}

/// Facet enumeration by testing every `rank`-subset of points for a supporting
/// hyperplane. Exponential, but only exercised for rank >= 3 with small sets.
fn brute_force_facets(
    projected: &[DVector<f64>],
    rank: usize,
    scale: f64,
) -> Vec<(DVector<f64>, f64)> {
    let side_tol = 1e-9 * scale;
    let mut facets: Vec<(DVector<f64>, f64)> = Vec::new();
    let mut seen: Vec<(DVector<f64>, f64)> = Vec::new();
    for combo in (0..projected.len()).combinations(rank) {
        let Some(normal) = hyperplane_normal(projected, &combo, scale) else {
            continue;
        };
        let offset = normal.dot(&projected[combo[0]]);
        let mut hi = f64::NEG_INFINITY;
        let mut lo = f64::INFINITY;
        for y in projected {
            let v = normal.dot(y) - offset;
            hi = hi.max(v);
            lo = lo.min(v);
        }
        let oriented = if hi <= side_tol {
            Some((normal, offset))
        } else if lo >= -side_tol {
            Some((-normal, -offset))
        } else {
            None
        };
        if let Some((n, b)) = oriented {
            let duplicate = seen
                .iter()
                .any(|(n0, b0)| (n0 - &n).norm() <= 1e-7 && (b0 - b).abs() <= 1e-7 * scale);
            if !duplicate {
                seen.push((n.clone(), b));
                facets.push((n, b));
            }
        }
    }
    facets
}

/// Unit normal of the hyperplane through the chosen points, via cofactor
/// expansion of the difference matrix; `None` when the points are degenerate.
fn hyperplane_normal(
    projected: &[DVector<f64>],
    combo: &[usize],
    scale: f64,
) -> Option<DVector<f64>> {
    let rank = combo.len();
    let mut diffs = DMatrix::zeros(rank - 1, rank);
    for (row, &idx) in combo[1..].iter().enumerate() {
        let d = &projected[idx] - &projected[combo[0]];
        for col in 0..rank {
            diffs[(row, col)] = d[col];
        }
    }
    let mut normal = DVector::zeros(rank);
    for col in 0..rank {
        let minor = diffs.clone().remove_column(col);
        let sign = if col % 2 == 0 { 1.0 } else { -1.0 };
        normal[col] = sign * minor.determinant();
    }
    let norm = normal.norm();
    if norm <= 1e-10 * scale.powi((rank - 1) as i32) {
        return None;
    }
    Some(normal / norm)
}
