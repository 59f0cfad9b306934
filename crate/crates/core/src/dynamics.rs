//! Linear and affine continuous dynamics: matrix exponentials, reachable-set
//! images, homogenization, and time reversal.
//!
//! All flows are exact up to matrix-exponential error; no general-purpose ODE
//! integrator is involved anywhere.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::geometry::{GeometryError, Polytope};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DynamicsError {
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
}

/// Linear dynamics `x' = A x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDynamics {
    matrix: DMatrix<f64>,
}

impl LinearDynamics {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self, DynamicsError> {
        check_square(&matrix)?;
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Affine dynamics `x' = A x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawAffine", into = "RawAffine")]
pub struct AffineDynamics {
    matrix: DMatrix<f64>,
    offset: DVector<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawAffine {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl TryFrom<RawAffine> for AffineDynamics {
    type Error = DynamicsError;
    fn try_from(raw: RawAffine) -> Result<Self, Self::Error> {
        let n = raw.a.len();
        if raw.a.iter().any(|row| row.len() != n) || raw.b.len() != n {
            return Err(DynamicsError::DimensionMismatch(n, raw.b.len()));
        }
        let matrix = DMatrix::from_row_iterator(n, n, raw.a.into_iter().flatten());
        AffineDynamics::new(matrix, DVector::from_vec(raw.b))
    }
}

impl From<AffineDynamics> for RawAffine {
    fn from(d: AffineDynamics) -> Self {
        let n = d.dim();
        RawAffine {
            a: (0..n)
                .map(|i| (0..n).map(|j| d.matrix[(i, j)]).collect())
                .collect(),
            b: d.offset.iter().copied().collect(),
        }
    }
}

impl AffineDynamics {
    pub fn new(matrix: DMatrix<f64>, offset: DVector<f64>) -> Result<Self, DynamicsError> {
        check_square(&matrix)?;
        if matrix.nrows() != offset.len() {
            return Err(DynamicsError::DimensionMismatch(matrix.nrows(), offset.len()));
        }
        if offset.iter().any(|x| !x.is_finite()) {
            return Err(DynamicsError::NonFiniteInput);
        }
        Ok(Self { matrix, offset })
    }

    pub fn linear(matrix: DMatrix<f64>) -> Result<Self, DynamicsError> {
        let n = matrix.nrows();
        Self::new(matrix, DVector::zeros(n))
    }

    /// 1-dimensional system `x' = a x + b`.
    pub fn scalar(a: f64, b: f64) -> Self {
        Self::new(DMatrix::from_element(1, 1, a), DVector::from_element(1, b))
            .expect("scalar dynamics are valid")
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.offset
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_linear(&self) -> bool {
        self.offset.iter().all(|x| *x == 0.0)
    }

    /// Entrywise closeness, used for flow-injectivity checks.
    pub fn close_to(&self, other: &AffineDynamics, tol: f64) -> bool {
        self.dim() == other.dim()
            && (&self.matrix - &other.matrix).amax() <= tol
            && (&self.offset - &other.offset).amax() <= tol
    }

    /// State after flowing for time `t` from `x0`.
    pub fn flow(&self, x0: &DVector<f64>, t: f64) -> DVector<f64> {
        let (m, g) = affine_flow_map(self, t);
        m * x0 + g
    }
}

fn check_square(matrix: &DMatrix<f64>) -> Result<(), DynamicsError> {
    if matrix.nrows() != matrix.ncols() {
        return Err(DynamicsError::DimensionMismatch(matrix.nrows(), matrix.ncols()));
    }
    if matrix.iter().any(|x| !x.is_finite()) {
        return Err(DynamicsError::NonFiniteInput);
    }
    Ok(())
}

/// Matrix exponential `e^(A t)` by scaling-and-squaring with Pade
/// approximation (as implemented by nalgebra).
pub fn exp_matrix(a: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>, DynamicsError> {
    if !t.is_finite() {
        return Err(DynamicsError::NonFiniteInput);
    }
    check_square(a)?;
    Ok((a * t).exp())
}

/// Image `{e^(A t) x : x in P}` of a bounded polytope under linear flow.
///
/// Vertices are mapped and the hull is taken; linear maps preserve polytopes,
/// and mapping constraint normals through an ill-conditioned `e^(A t)` is
/// avoided altogether.
pub fn reach(p: &Polytope, a: &DMatrix<f64>, t: f64) -> Result<Polytope, GeometryError> {
    let e = exp_matrix(a, t).map_err(|_| GeometryError::InvalidConstraint("bad matrix".into()))?;
    p.map_affine(&e, &DVector::zeros(p.dim()))
}

/// Embeds `x' = A x + b` into the linear system `z' = M z` with
/// `z = (x, y)`, `y` constant 1; returns the lifted dynamics and initial state.
pub fn homogenize(d: &AffineDynamics, x0: &DVector<f64>) -> (LinearDynamics, DVector<f64>) {
    let n = d.dim();
    let mut m = DMatrix::zeros(n + 1, n + 1);
    m.view_mut((0, 0), (n, n)).copy_from(d.matrix());
    m.view_mut((0, n), (n, 1)).copy_from(d.offset());
    let mut z0 = DVector::zeros(n + 1);
    z0.rows_mut(0, x0.len().min(n)).copy_from(x0);
    z0[n] = 1.0;
    (LinearDynamics::new(m).expect("block matrix is square"), z0)
}

/// Time-`t` flow of an affine system as an affine map `x -> M x + g`,
/// extracted from the homogenized matrix exponential.
pub fn affine_flow_map(d: &AffineDynamics, t: f64) -> (DMatrix<f64>, DVector<f64>) {
    let n = d.dim();
    if d.is_linear() {
        let e = (d.matrix() * t).exp();
        return (e, DVector::zeros(n));
    }
    let (lifted, _) = homogenize(d, &DVector::zeros(n));
    let e = (lifted.matrix() * t).exp();
    let m = e.view((0, 0), (n, n)).into_owned();
    let g = e.view((0, n), (n, 1)).column(0).into_owned();
    (m, g)
}

/// Joint system tracking two linear executions and their difference: for
/// `x' = A x`, `y' = B y` the combined state is `z = (x, y, w)` with
/// `w(t) = x(t) - y(t)` throughout.
pub fn joint_difference_system(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    x0: &DVector<f64>,
    y0: &DVector<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>), DynamicsError> {
    check_square(a)?;
    check_square(b)?;
    let n = a.nrows();
    if b.nrows() != n || x0.len() != n || y0.len() != n {
        return Err(DynamicsError::DimensionMismatch(n, b.nrows()));
    }
    let mut c = DMatrix::zeros(3 * n, 3 * n);
    c.view_mut((0, 0), (n, n)).copy_from(a);
    c.view_mut((n, n), (n, n)).copy_from(b);
    c.view_mut((2 * n, 0), (n, n)).copy_from(a);
    c.view_mut((2 * n, n), (n, n)).copy_from(&(-b));
    let mut z0 = DVector::zeros(3 * n);
    z0.rows_mut(0, n).copy_from(x0);
    z0.rows_mut(n, n).copy_from(y0);
    z0.rows_mut(2 * n, n).copy_from(&(x0 - y0));
    Ok((c, z0))
}

/// Time reversal: flowing forward under the result for time `t` undoes
/// flowing forward under `d` for time `t`.
pub fn invert(d: &AffineDynamics) -> AffineDynamics {
    AffineDynamics::new(-d.matrix().clone(), -d.offset().clone())
        .expect("negation preserves validity")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn rotation() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let z = DMatrix::zeros(3, 3);
        let e = exp_matrix(&z, 2.5).unwrap();
        assert_relative_eq!(e, DMatrix::identity(3, 3), epsilon = 1e-15);
    }

    #[test]
    fn exp_of_rotation_quarter_turn() {
        let e = exp_matrix(&rotation(), std::f64::consts::FRAC_PI_2).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!((e - expected).amax() < 1e-12);
    }

    #[test]
    fn exp_of_diagonal_contraction() {
        let a = DMatrix::from_diagonal(&DVector::from_row_slice(&[-1.0, -1.0]));
        let e = exp_matrix(&a, 2.0_f64.ln()).unwrap();
        let expected = DMatrix::from_diagonal(&DVector::from_row_slice(&[0.5, 0.5]));
        assert!((e - expected).amax() < 1e-12);
    }

    #[test]
    fn exp_closed_form_accuracy() {
        // Rotation compared against cos/sin at many angles.
        for k in 0..32 {
            let t = 0.25 * k as f64;
            let e = exp_matrix(&rotation(), t).unwrap();
            let expected =
                DMatrix::from_row_slice(2, 2, &[t.cos(), t.sin(), -t.sin(), t.cos()]);
            assert!(
                (e - expected).amax() <= 1e-9,
                "relative error above 1e-9 at t={t}"
            );
        }
    }

    #[test]
    fn exp_rejects_non_finite() {
        let a = DMatrix::from_element(2, 2, f64::NAN);
        assert!(matches!(
            exp_matrix(&a, 1.0),
            Err(DynamicsError::NonFiniteInput)
        ));
        assert!(matches!(
            exp_matrix(&rotation(), f64::INFINITY),
            Err(DynamicsError::NonFiniteInput)
        ));
    }

    #[test]
    fn exp_semigroup_property() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        for _ in 0..20 {
            let a = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-0.6..0.6));
            let s = rng.gen_range(0.0..2.0);
            let t = rng.gen_range(0.0..2.0);
            let left = exp_matrix(&a, s).unwrap() * exp_matrix(&a, t).unwrap();
            let right = exp_matrix(&a, s + t).unwrap();
            assert!((left - right).amax() <= 1e-8);
        }
    }

    #[test]
    fn reach_of_singleton_under_zero_dynamics() {
        let x0 = DVector::from_row_slice(&[0.3, -0.7]);
        let p = Polytope::chull(&[x0.clone()]).unwrap();
        let out = reach(&p, &DMatrix::zeros(2, 2), 5.0).unwrap();
        assert!(out.contains(&x0, 1e-12));
        let v = out.vertices().unwrap();
        assert_eq!(v.len(), 1);
    }

    #[test]
    fn reach_scales_box_under_contraction() {
        let p = Polytope::from_bounds(&[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        let a = DMatrix::from_diagonal(&DVector::from_row_slice(&[-1.0, -1.0]));
        let out = reach(&p, &a, 2.0_f64.ln()).unwrap();
        let expected = Polytope::from_bounds(&[-0.5, -0.5], &[0.5, 0.5]).unwrap();
        assert!(out.set_eq(&expected, 1e-9));
    }

    #[test]
    fn reach_rotates_box_corners() {
        let p = Polytope::from_bounds(&[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        let t = std::f64::consts::FRAC_PI_4;
        let out = reach(&p, &rotation(), t).unwrap();
        let e = exp_matrix(&rotation(), t).unwrap();
        let corners: Vec<DVector<f64>> = [[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [1.0, 1.0]]
            .iter()
            .map(|c| &e * DVector::from_row_slice(c))
            .collect();
        let expected = Polytope::chull(&corners).unwrap();
        assert!(out.set_eq(&expected, 1e-9));
    }

    #[test]
    fn reach_semigroup_as_sets() {
        let p = Polytope::chull(&[
            DVector::from_row_slice(&[0.2, 0.1]),
            DVector::from_row_slice(&[0.9, -0.4]),
            DVector::from_row_slice(&[-0.3, 0.6]),
        ])
        .unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[0.1, 0.8, -0.9, -0.2]);
        let two_step = reach(&reach(&p, &a, 0.7).unwrap(), &a, 0.5).unwrap();
        let one_step = reach(&p, &a, 1.2).unwrap();
        assert!(two_step.set_eq(&one_step, 1e-7));
    }

    #[test]
    fn homogenize_heater_on_dynamics() {
        // x' = -0.1 (x - 30) = -0.1 x + 3 from x0 = 20.
        let d = AffineDynamics::scalar(-0.1, 3.0);
        let (lifted, z0) = homogenize(&d, &DVector::from_row_slice(&[20.0]));
        let expected = DMatrix::from_row_slice(2, 2, &[-0.1, 3.0, 0.0, 0.0]);
        assert_eq!(lifted.matrix(), &expected);
        assert_eq!(z0, DVector::from_row_slice(&[20.0, 1.0]));
        // Projected solution agrees with the closed form 30 - 10 e^{-0.1 t}.
        for t in [0.0, 0.5, 2.0, 7.0] {
            let x = d.flow(&DVector::from_row_slice(&[20.0]), t);
            assert_relative_eq!(x[0], 30.0 - 10.0 * (-0.1 * t).exp(), epsilon = 1e-10);
        }
    }

    #[test]
    fn homogenize_with_zero_offset_matches_linear() {
        let a = rotation();
        let d = AffineDynamics::linear(a.clone()).unwrap();
        let x0 = DVector::from_row_slice(&[1.0, 1.0]);
        for t in [0.3, 1.1] {
            let via_affine = d.flow(&x0, t);
            let via_linear = exp_matrix(&a, t).unwrap() * &x0;
            assert!((via_affine - via_linear).amax() < 1e-12);
        }
    }

    #[test]
    fn constant_derivative_integrates_linearly() {
        let d = AffineDynamics::new(
            DMatrix::zeros(2, 2),
            DVector::from_row_slice(&[1.0, 0.0]),
        )
        .unwrap();
        let x = d.flow(&DVector::zeros(2), 1.0);
        assert!((x - DVector::from_row_slice(&[1.0, 0.0])).amax() < 1e-12);
    }

    #[test]
    fn joint_system_tracks_difference() {
        let a = rotation();
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 0.99, -1.0, 0.0]);
        let x0 = DVector::from_row_slice(&[1.0, 1.0]);
        let (c, z0) = joint_difference_system(&a, &b, &x0, &x0).unwrap();
        for t in [0.5, 2.0, 6.0] {
            let z = exp_matrix(&c, t).unwrap() * &z0;
            let x = exp_matrix(&a, t).unwrap() * &x0;
            let y = exp_matrix(&b, t).unwrap() * &x0;
            assert!((z.rows(0, 2) - &x).amax() <= 1e-8);
            assert!((z.rows(2, 2) - &y).amax() <= 1e-8);
            let w = z.rows(4, 2) - (&x - &y);
            assert!(w.amax() <= 1e-8);
        }
    }

    #[test]
    fn joint_system_degenerate_cases() {
        let a = rotation();
        let x0 = DVector::from_row_slice(&[1.0, 1.0]);
        // Identical systems and initial states: w stays zero.
        let (c, z0) = joint_difference_system(&a, &a, &x0, &x0).unwrap();
        for t in [1.0, 3.0] {
            let z = exp_matrix(&c, t).unwrap() * &z0;
            assert!(z.rows(4, 2).amax() <= 1e-12);
        }
        // Zero dynamics: w stays at the initial difference.
        let y0 = DVector::from_row_slice(&[0.25, 0.5]);
        let z = DMatrix::zeros(2, 2);
        let (c, z0) = joint_difference_system(&z, &z, &x0, &y0).unwrap();
        let zt = exp_matrix(&c, 4.0).unwrap() * &z0;
        assert!((zt.rows(4, 2) - (&x0 - &y0)).amax() <= 1e-12);
    }

    #[test]
    fn joint_system_peak_deviation_of_detuned_rotation() {
        // Reference rotation against its 0.01-detuned variant, started
        // together at (1, 1): the difference block peaks near 0.08 in the
        // infinity norm over [0, 4 pi].
        let a = rotation();
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 0.99, -1.0, 0.0]);
        let x0 = DVector::from_row_slice(&[1.0, 1.0]);
        let (c, z0) = joint_difference_system(&a, &b, &x0, &x0).unwrap();
        let horizon = 4.0 * std::f64::consts::PI;
        let steps = 20_000;
        let step = exp_matrix(&c, horizon / steps as f64).unwrap();
        let mut z = z0;
        let mut peak = 0.0_f64;
        for _ in 0..steps {
            z = &step * z;
            peak = peak.max(z[4].abs()).max(z[5].abs());
        }
        assert!((peak - 0.08).abs() < 0.01, "peak {peak} should be near 0.08");
    }

    #[test]
    fn invert_round_trip() {
        let d = AffineDynamics::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.2, -0.1, 0.8]),
            DVector::from_row_slice(&[0.3, -0.4]),
        )
        .unwrap();
        let x0 = DVector::from_row_slice(&[0.6, -1.1]);
        let forward = d.flow(&x0, 1.0);
        let back = invert(&d).flow(&forward, 1.0);
        assert!((back - &x0).amax() <= 1e-8);
        // Sign flip on the heater dynamics.
        let heater = AffineDynamics::scalar(-0.1, 3.0);
        let inv = invert(&heater);
        assert_eq!(inv.matrix()[(0, 0)], 0.1);
        assert_eq!(inv.offset()[0], -3.0);
        assert_eq!(invert(&AffineDynamics::scalar(0.0, 0.0)), AffineDynamics::scalar(0.0, 0.0));
    }
}
