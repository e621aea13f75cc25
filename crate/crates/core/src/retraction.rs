//! Retractions on the Stiefel and Grassmann manifolds.
//!
//! Free retractions take a tangent direction `E` and a step `t ≥ 0` and
//! satisfy `R(0) = X`, `R'(0) = E`. The gradient projection (`Gp`) and
//! gradient reflection (`Gr`) maps are tied to a Euclidean gradient instead
//! and have their own entry points.

use crate::linalg::{self, expm, orthonormality_error, pinv_gram, DenseMatrix, LinalgError};
use crate::manifold::{d_rho_matrix, random_tangent, StiefelPoint, TangentSpace, TangentVector, FEAS_TOL};
use crate::rng::{self, tag};
use rand::Rng;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetractionError {
    #[error("singular inner solve in {0} retraction")]
    SingularStep(&'static str),
    #[error("negative step {0}; encode descent in the direction instead")]
    NegativeStep(f64),
    #[error("{0} takes a Euclidean gradient; use retract_gp/retract_gr")]
    GradientCoupled(RetractionKind),
    #[error("exp2 needs a horizontal direction (‖XᵀE‖_F = {0:.3e})")]
    NotHorizontal(f64),
    #[error("phi fails phi(0)=0, phi'(0)=1/2 (phi(h)/h = {0})")]
    BadPhi(f64),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, RetractionError>;

/// The scalar function in the `jd` retraction. Must satisfy `φ(0) = 0`,
/// `φ'(0) = 1/2`.
#[derive(Debug, Clone, Copy)]
pub enum JdPhi {
    /// `φ(t) = t/2`; makes `jd` coincide with `wy`.
    Linear,
    /// `t/2` below `1e-10`, then the constant `1/2`.
    Piecewise,
    Custom(fn(f64) -> f64),
}

impl JdPhi {
    pub const KNEE: f64 = 1e-10;

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            JdPhi::Linear => 0.5 * t,
            JdPhi::Piecewise => {
                if t < Self::KNEE {
                    0.5 * t
                } else {
                    0.5
                }
            }
            JdPhi::Custom(f) => f(t),
        }
    }

    /// Numerical check of `φ(0) = 0`, `φ'(0) = 1/2`. The piecewise choice is
    /// probed below its knee, where it is linear.
    pub fn check(&self) -> Result<()> {
        let h = match self {
            JdPhi::Piecewise => 1e-12,
            _ => 1e-8,
        };
        let ratio = self.eval(h) / h;
        if self.eval(0.0) != 0.0 || !((ratio - 0.5).abs() <= 1e-4) {
            return Err(RetractionError::BadPhi(ratio));
        }
        Ok(())
    }
}

impl PartialEq for JdPhi {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (JdPhi::Linear, JdPhi::Linear) | (JdPhi::Piecewise, JdPhi::Piecewise) => true,
            (JdPhi::Custom(a), JdPhi::Custom(b)) => *a as usize == *b as usize,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RetractionKind {
    Exp1,
    Qr,
    Pd,
    Wy,
    Jd(JdPhi),
    Gp,
    Gr,
    Exp2,
}

impl RetractionKind {
    pub const ALL: [RetractionKind; 8] = [
        RetractionKind::Exp1,
        RetractionKind::Qr,
        RetractionKind::Pd,
        RetractionKind::Wy,
        RetractionKind::Jd(JdPhi::Linear),
        RetractionKind::Gp,
        RetractionKind::Gr,
        RetractionKind::Exp2,
    ];

    /// True for the maps driven by a Euclidean gradient rather than a tangent.
    pub fn is_gradient_coupled(&self) -> bool {
        matches!(self, RetractionKind::Gp | RetractionKind::Gr)
    }

    pub fn name(&self) -> &'static str {
        match self {
            RetractionKind::Exp1 => "exp",
            RetractionKind::Qr => "qr",
            RetractionKind::Pd => "pd",
            RetractionKind::Wy => "wy",
            RetractionKind::Jd(_) => "jd",
            RetractionKind::Gp => "gp",
            RetractionKind::Gr => "gr",
            RetractionKind::Exp2 => "exp2",
        }
    }
}

impl fmt::Display for RetractionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RetractionKind::Jd(JdPhi::Piecewise) => f.write_str("jd-piecewise"),
            RetractionKind::Jd(JdPhi::Custom(_)) => f.write_str("jd-custom"),
            _ => f.write_str(self.name()),
        }
    }
}

impl FromStr for RetractionKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "exp" | "exp1" => RetractionKind::Exp1,
            "qr" => RetractionKind::Qr,
            "pd" => RetractionKind::Pd,
            "wy" => RetractionKind::Wy,
            "jd" => RetractionKind::Jd(JdPhi::Linear),
            "jd-piecewise" => RetractionKind::Jd(JdPhi::Piecewise),
            "gp" => RetractionKind::Gp,
            "gr" => RetractionKind::Gr,
            "exp2" => RetractionKind::Exp2,
            other => return Err(format!("unknown retraction '{other}'")),
        })
    }
}

fn check_step(t: f64) -> Result<()> {
    if !(t >= 0.0) {
        return Err(RetractionError::NegativeStep(t));
    }
    Ok(())
}

/// Accept a raw retraction output, re-orthonormalizing if roundoff pushed it
/// off the manifold.
fn finish(y: DenseMatrix) -> Result<StiefelPoint> {
    linalg::ensure_finite(&y, "retraction output")?;
    let err = orthonormality_error(&y);
    if err > FEAS_TOL {
        log::debug!("retraction drifted off the manifold by {err:.3e}; re-orthonormalizing");
        let (q, _) = linalg::qr_positive(&y)?;
        return Ok(StiefelPoint::from_trusted(q));
    }
    Ok(StiefelPoint::from_trusted(y))
}

/// `R(X, tE)` for a free retraction kind.
pub fn retract(kind: RetractionKind, x: &StiefelPoint, e: &TangentVector, t: f64) -> Result<StiefelPoint> {
    retract_dir(kind, x, e.matrix(), t)
}

/// As [`retract`], taking the direction as a raw matrix.
pub fn retract_dir(kind: RetractionKind, x: &StiefelPoint, e: &DenseMatrix, t: f64) -> Result<StiefelPoint> {
    check_step(t)?;
    assert_eq!(x.matrix().shape(), e.shape(), "retraction shape mismatch");
    if t == 0.0 {
        return Ok(x.clone());
    }
    finish(retract_raw(kind, x.matrix(), e, t)?)
}

/// The retraction formula itself, without the feasibility repair.
pub fn retract_raw(kind: RetractionKind, x: &DenseMatrix, e: &DenseMatrix, t: f64) -> Result<DenseMatrix> {
    match kind {
        RetractionKind::Exp1 => exp1(x, e, t),
        RetractionKind::Qr => Ok(linalg::qr_positive(&(x + e * t))?.0),
        RetractionKind::Pd => Ok(linalg::polar_project(&(x + e * t))?),
        RetractionKind::Wy => wy(x, e, t),
        RetractionKind::Jd(phi) => jd(x, e, t, phi),
        RetractionKind::Exp2 => exp2(x, e, t),
        RetractionKind::Gp | RetractionKind::Gr => Err(RetractionError::GradientCoupled(kind)),
    }
}

fn exp1(x: &DenseMatrix, e: &DenseMatrix, t: f64) -> Result<DenseMatrix> {
    let r = x.ncols();
    let xte = x.tr_mul(e);
    let mut dmat = e.clone();
    dmat.gemm(-1.0, x, &xte, 1.0);
    // Householder QR stays orthonormal even when D is rank deficient; columns
    // belonging to zero rows of R never reach the output.
    let qr = dmat.qr();
    let mut q = qr.q();
    let mut up = qr.r();
    let k = q.ncols();
    for j in 0..k {
        if up[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
            up.row_mut(j).neg_mut();
        }
    }
    let m = r + k;
    let mut a = DenseMatrix::zeros(m, m);
    a.view_mut((0, 0), (r, r)).copy_from(&xte);
    a.view_mut((r, 0), (k, r)).copy_from(&up);
    a.view_mut((0, r), (r, k)).copy_from(&(-up.transpose()));
    let ex = expm(&(a * t))?;
    let top = ex.view((0, 0), (r, r));
    let bottom = ex.view((r, 0), (k, r));
    Ok(x * top + q * bottom)
}

fn wy(x: &DenseMatrix, e: &DenseMatrix, t: f64) -> Result<DenseMatrix> {
    let (d, r) = x.shape();
    let xte = x.tr_mul(e);
    // P_X E with P_X = I − XXᵀ/2
    let mut pe = e.clone();
    pe.gemm(-0.5, x, &xte, 1.0);
    let mut u = DenseMatrix::zeros(d, 2 * r);
    u.view_mut((0, 0), (d, r)).copy_from(&(-&pe));
    u.view_mut((0, r), (d, r)).copy_from(x);
    let mut v = DenseMatrix::zeros(d, 2 * r);
    v.view_mut((0, 0), (d, r)).copy_from(x);
    v.view_mut((0, r), (d, r)).copy_from(&pe);
    let mut m = v.tr_mul(&u) * (0.5 * t);
    for i in 0..2 * r {
        m[(i, i)] += 1.0;
    }
    let vtx = v.tr_mul(x);
    let sol = linalg::solve(&m, &vtx).map_err(|_| RetractionError::SingularStep("wy"))?;
    let mut y = x.clone();
    y.gemm(-t, &u, &sol, 1.0);
    Ok(y)
}

fn jd(x: &DenseMatrix, e: &DenseMatrix, t: f64, phi: JdPhi) -> Result<DenseMatrix> {
    let r = x.ncols();
    let xte = x.tr_mul(e);
    let mut dmat = e.clone();
    dmat.gemm(-1.0, x, &xte, 1.0);
    let mut j = dmat.tr_mul(&dmat) * (0.25 * t * t) - xte * phi.eval(t);
    for i in 0..r {
        j[(i, i)] += 1.0;
    }
    let lhs = x * 2.0 + dmat * t;
    // (2X + tD) J⁻¹ = (J⁻ᵀ (2X + tD)ᵀ)ᵀ
    let sol = linalg::solve(&j.transpose(), &lhs.transpose()).map_err(|_| RetractionError::SingularStep("jd"))?;
    Ok(sol.transpose() - x)
}

fn exp2(x: &DenseMatrix, e: &DenseMatrix, t: f64) -> Result<DenseMatrix> {
    let en = e.norm();
    if en == 0.0 {
        return Ok(x.clone());
    }
    let h = x.tr_mul(e).norm();
    if h > 1e-8 * en.max(1.0) {
        return Err(RetractionError::NotHorizontal(h));
    }
    linalg::ensure_finite(e, "exp2 direction")?;
    let svd = linalg::jacobi_svd(e)?;
    let vt = svd.v.transpose();
    let mut xv = x * &svd.v;
    let mut us = svd.u;
    for (j, s) in svd.sigma.iter().enumerate() {
        let (sn, cs) = (s * t).sin_cos();
        xv.column_mut(j).scale_mut(cs);
        us.column_mut(j).scale_mut(sn);
    }
    Ok((xv + us) * vt)
}

/// Gradient projection `P_St(X − tG)`.
pub fn retract_gp(x: &StiefelPoint, eucl_dir: &DenseMatrix, t: f64) -> Result<StiefelPoint> {
    check_step(t)?;
    if t == 0.0 {
        return Ok(x.clone());
    }
    finish(gp_raw(x.matrix(), eucl_dir, t)?)
}

/// Gradient reflection `(−I + 2X̄(X̄ᵀX̄)†X̄ᵀ)X` with `X̄ = X − tG`.
pub fn retract_gr(x: &StiefelPoint, eucl_dir: &DenseMatrix, t: f64) -> Result<StiefelPoint> {
    check_step(t)?;
    if t == 0.0 {
        return Ok(x.clone());
    }
    finish(gr_raw(x.matrix(), eucl_dir, t)?)
}

pub fn gp_raw(x: &DenseMatrix, g: &DenseMatrix, t: f64) -> Result<DenseMatrix> {
    Ok(linalg::polar_project(&(x - g * t))?)
}

pub fn gr_raw(x: &DenseMatrix, g: &DenseMatrix, t: f64) -> Result<DenseMatrix> {
    linalg::ensure_finite(g, "gr direction")?;
    let xb = x - g * t;
    let w = pinv_gram(&xb.tr_mul(&xb)) * xb.tr_mul(x);
    let mut y = -x;
    y.gemm(2.0, &xb, &w, 1.0);
    Ok(y)
}

/// Declared derivative at `t = 0`: `E` for free kinds, `−D_{1/4}(X,G)` for
/// gp and `−2 D_0(X,G)` for gr.
pub fn declared_derivative(kind: RetractionKind, x: &DenseMatrix, dir: &DenseMatrix) -> DenseMatrix {
    match kind {
        RetractionKind::Gp => -d_rho_matrix(x, dir, 0.25),
        RetractionKind::Gr => d_rho_matrix(x, dir, 0.0) * -2.0,
        _ => dir.clone(),
    }
}

/// Evaluate any kind uniformly: `dir` is the tangent for free kinds and the
/// Euclidean gradient for gp/gr.
pub fn apply(kind: RetractionKind, x: &StiefelPoint, dir: &DenseMatrix, t: f64) -> Result<StiefelPoint> {
    match kind {
        RetractionKind::Gp => retract_gp(x, dir, t),
        RetractionKind::Gr => retract_gr(x, dir, t),
        _ => retract_dir(kind, x, dir, t),
    }
}

/// Provable `(L1, L2)` where known.
pub fn certified_constants(kind: RetractionKind) -> Option<(f64, f64)> {
    match kind {
        RetractionKind::Pd => Some((1.0, 0.5)),
        RetractionKind::Qr => Some((1.0 + std::f64::consts::SQRT_2 / 2.0, 10f64.sqrt() / 2.0)),
        _ => None,
    }
}

/// Empirical suprema of `‖R(t) − X‖/(t‖R'(0)‖)` and
/// `‖R(t) − X − tR'(0)‖/(t²‖R'(0)‖²)` over random `(X, E, t ∈ (0, 10])`.
pub fn estimate_l1_l2(kind: RetractionKind, trials: usize, d: usize, r: usize, seed: u64) -> Result<(f64, f64)> {
    estimate_l1_l2_map(trials, d, r, seed, kind == RetractionKind::Exp2, |x, e, t| {
        let xm = x.matrix();
        let y = match kind {
            RetractionKind::Gp | RetractionKind::Gr => {
                // recover a Euclidean gradient whose declared derivative is E
                let g = if kind == RetractionKind::Gp { -e } else { e * -0.5 };
                apply(kind, x, &g, t)?
            }
            _ => retract_dir(kind, x, e, t)?,
        };
        debug_assert_eq!(y.matrix().shape(), xm.shape());
        Ok(y.into_matrix())
    })
}

/// Same estimate for an arbitrary map `(X, E, t) ↦ R(t)` with `R'(0) = E`.
pub fn estimate_l1_l2_map<F>(trials: usize, d: usize, r: usize, seed: u64, horizontal: bool, map: F) -> Result<(f64, f64)>
where
    F: Fn(&StiefelPoint, &DenseMatrix, f64) -> Result<DenseMatrix>,
{
    assert!(trials >= 1);
    let mut rng = rng::stream(seed, 0, tag::PROBE);
    let space = if horizontal { TangentSpace::GrassmannHorizontal } else { TangentSpace::StiefelTangent };
    let (mut l1, mut l2) = (0.0_f64, 0.0_f64);
    for _ in 0..trials {
        let x = StiefelPoint::random(&mut rng, d, r);
        let scale = rng.random_range(0.1..2.0);
        let e = random_tangent(&mut rng, &x, space).into_matrix() * scale;
        let t = 10.0 * (1.0 - rng.random::<f64>());
        let y = map(&x, &e, t)?;
        let en = e.norm();
        let step = &y - x.matrix();
        l1 = l1.max(step.norm() / (t * en));
        l2 = l2.max((step - &e * t).norm() / (t * t * en * en));
    }
    Ok((l1, l2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sym;
    use crate::manifold::tangent_project;
    use crate::rng::gaussian_matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    const FREE: [RetractionKind; 6] = [
        RetractionKind::Exp1,
        RetractionKind::Qr,
        RetractionKind::Pd,
        RetractionKind::Wy,
        RetractionKind::Jd(JdPhi::Linear),
        RetractionKind::Jd(JdPhi::Piecewise),
    ];

    #[test]
    fn zero_step_is_identity() {
        let mut g = rng(1);
        let x = StiefelPoint::random(&mut g, 8, 3);
        let e = random_tangent(&mut g, &x, TangentSpace::GrassmannHorizontal);
        for kind in RetractionKind::ALL {
            let y = apply(kind, &x, e.matrix(), 0.0).unwrap();
            assert_eq!(y.matrix(), x.matrix(), "{kind}");
        }
    }

    #[test]
    fn pd_two_vector_normalization() {
        let x = StiefelPoint::new(DenseMatrix::from_column_slice(2, 1, &[1.0, 0.0])).unwrap();
        let e = DenseMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let y = retract_dir(RetractionKind::Pd, &x, &e, 1.0).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((y.matrix() - DenseMatrix::from_column_slice(2, 1, &[s, s])).norm() < 1e-15);
    }

    #[test]
    fn free_kinds_feasible() {
        let mut g = rng(2);
        for kind in FREE {
            for t in [0.01, 0.1, 1.0, 10.0] {
                let x = StiefelPoint::random(&mut g, 20, 4);
                let e = random_tangent(&mut g, &x, TangentSpace::StiefelTangent).into_matrix() * 3.0;
                let raw = retract_raw(kind, x.matrix(), &e, t).unwrap();
                assert!(orthonormality_error(&raw) < 1e-10, "{kind} t={t}: {}", orthonormality_error(&raw));
            }
        }
    }

    #[test]
    fn exp1_matches_exp2_on_horizontal_directions() {
        let mut g = rng(3);
        for t in [0.1, 1.0, 3.0] {
            let x = StiefelPoint::random(&mut g, 12, 3);
            let e = random_tangent(&mut g, &x, TangentSpace::GrassmannHorizontal).into_matrix() * 2.0;
            let a = retract_raw(RetractionKind::Exp1, x.matrix(), &e, t).unwrap();
            let b = retract_raw(RetractionKind::Exp2, x.matrix(), &e, t).unwrap();
            assert!((&a - &b).norm() < 1e-10);
        }
    }

    #[test]
    fn exp1_handles_vertical_direction() {
        // E = XΩ with Ω skew: D = 0, geodesic is X expm(tΩ)
        let mut g = rng(4);
        let x = StiefelPoint::random(&mut g, 6, 3);
        let om = linalg::skew(&gaussian_matrix(&mut g, 3, 3));
        let e = x.matrix() * &om;
        let y = retract_raw(RetractionKind::Exp1, x.matrix(), &e, 0.7).unwrap();
        let expect = x.matrix() * expm(&(om * 0.7)).unwrap();
        assert!((y - expect).norm() < 1e-12);
    }

    #[test]
    fn wy_equals_jd_linear() {
        let mut g = rng(5);
        for t in [0.1, 1.0, 5.0] {
            let x = StiefelPoint::random(&mut g, 15, 4);
            let e = random_tangent(&mut g, &x, TangentSpace::StiefelTangent).into_matrix() * 2.0;
            let a = retract_raw(RetractionKind::Wy, x.matrix(), &e, t).unwrap();
            let b = retract_raw(RetractionKind::Jd(JdPhi::Linear), x.matrix(), &e, t).unwrap();
            assert!((&a - &b).norm() < 1e-10);
        }
    }

    #[test]
    fn phi_checks() {
        assert!(JdPhi::Linear.check().is_ok());
        assert!(JdPhi::Piecewise.check().is_ok());
        assert!(JdPhi::Custom(|t| t.sin() / 2.0).check().is_ok());
        assert!(JdPhi::Custom(|t| t).check().is_err());
        assert_eq!(JdPhi::Piecewise.eval(1.0), 0.5);
    }

    #[test]
    fn gp_scaling_invariance() {
        let mut g = rng(6);
        let x = StiefelPoint::random(&mut g, 7, 2);
        let y = retract_gp(&x, &x.matrix().clone(), 0.5).unwrap();
        assert!((y.matrix() - x.matrix()).norm() < 1e-14);
    }

    #[test]
    fn gr_zero_step_reflection_is_x() {
        let mut g = rng(7);
        let x = StiefelPoint::random(&mut g, 7, 2);
        let raw = gr_raw(x.matrix(), &gaussian_matrix(&mut g, 7, 2), 0.0).unwrap();
        assert!((raw - x.matrix()).norm() < 1e-14);
    }

    #[test]
    fn gr_feasible_for_large_steps() {
        let mut g = rng(8);
        let x = StiefelPoint::random(&mut g, 10, 3);
        let grad = gaussian_matrix(&mut g, 10, 3);
        for t in [0.01, 1.0, 100.0] {
            let y = retract_gr(&x, &grad, t).unwrap();
            assert!(y.feasibility_error() < 1e-10);
        }
    }

    #[test]
    fn gp_with_symmetric_xtg_is_grassmann_direction() {
        let mut g = rng(9);
        let x = StiefelPoint::random(&mut g, 9, 3);
        let s = sym(&gaussian_matrix(&mut g, 3, 3));
        let w = tangent_project(&x, &gaussian_matrix(&mut g, 9, 3), TangentSpace::GrassmannHorizontal);
        let grad = x.matrix() * s + w.matrix();
        let dd = declared_derivative(RetractionKind::Gp, x.matrix(), &grad);
        assert!((dd + w.matrix()).norm() < 1e-12);
    }

    #[test]
    fn exp2_zero_direction_returns_x() {
        let mut g = rng(10);
        let x = StiefelPoint::random(&mut g, 5, 2);
        let y = retract_dir(RetractionKind::Exp2, &x, &DenseMatrix::zeros(5, 2), 1.0).unwrap();
        assert_eq!(y.matrix(), x.matrix());
    }

    #[test]
    fn exp2_rejects_vertical_direction() {
        let mut g = rng(11);
        let x = StiefelPoint::random(&mut g, 5, 2);
        let om = linalg::skew(&gaussian_matrix(&mut g, 2, 2));
        let e = x.matrix() * om;
        assert!(matches!(
            retract_dir(RetractionKind::Exp2, &x, &e, 1.0),
            Err(RetractionError::NotHorizontal(_))
        ));
    }

    #[test]
    fn negative_step_rejected() {
        let x = StiefelPoint::new(DenseMatrix::identity(3, 1)).unwrap();
        let e = DenseMatrix::zeros(3, 1);
        assert!(matches!(retract_dir(RetractionKind::Qr, &x, &e, -1.0), Err(RetractionError::NegativeStep(_))));
    }

    #[test]
    fn gp_and_gr_refused_by_free_entry_point() {
        let x = StiefelPoint::new(DenseMatrix::identity(3, 1)).unwrap();
        let e = DenseMatrix::zeros(3, 1);
        assert!(retract_dir(RetractionKind::Gp, &x, &e, 1.0).is_err());
    }

    #[test]
    fn kind_parsing_round_trip() {
        for kind in RetractionKind::ALL {
            assert_eq!(kind.name().parse::<RetractionKind>().unwrap(), kind);
        }
        assert!("householder".parse::<RetractionKind>().is_err());
    }

    #[test]
    fn grassmann_step_leaves_the_subspace() {
        let mut g = rng(12);
        for kind in [RetractionKind::Qr, RetractionKind::Pd, RetractionKind::Wy, RetractionKind::Jd(JdPhi::Linear), RetractionKind::Exp2] {
            let x = StiefelPoint::random(&mut g, 10, 3);
            let e = random_tangent(&mut g, &x, TangentSpace::GrassmannHorizontal);
            let y = retract(kind, &x, &e, 0.3).unwrap();
            // cosines of principal angles are the singular values of XᵀY
            let sv = x.matrix().tr_mul(y.matrix()).singular_values();
            assert!(sv.min() < 1.0 - 1e-6, "{kind}");
        }
    }
}
