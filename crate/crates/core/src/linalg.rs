//! Dense small-matrix kernels used by the retractions and problem instances.
//!
//! Everything here is a pure function of its inputs. Matrices are
//! `nalgebra::DMatrix<f64>`, which is column-major; that layout is relied on
//! by the problem kernels that walk columns as contiguous slices.

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

/// Dense real matrix, column-major.
pub type DenseMatrix = DMatrix<f64>;

/// Relative threshold below which a QR pivot or singular value counts as zero.
pub const RANK_TOL: f64 = 1e-12;

/// Relative eigenvalue cutoff for [`pinv_gram`].
pub const PINV_CUTOFF: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is rank deficient (pivot {pivot:.3e} vs scale {scale:.3e})")]
    RankDeficient { pivot: f64, scale: f64 },
    #[error("matrix is not symmetric positive definite (smallest eigenvalue {min_eig:.3e})")]
    NotSpd { min_eig: f64 },
    #[error("linear system is singular")]
    Singular,
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

pub type Result<T> = std::result::Result<T, LinalgError>;

pub fn ensure_finite(a: &DenseMatrix, what: &'static str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(LinalgError::NonFinite(what))
    }
}

/// Frobenius inner product `tr(AᵀB)`.
pub fn frob_inner(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// `‖XᵀX − I‖_F`.
pub fn orthonormality_error(x: &DenseMatrix) -> f64 {
    let mut g = x.tr_mul(x);
    for i in 0..g.nrows() {
        g[(i, i)] -= 1.0;
    }
    g.norm()
}

/// `(A − Aᵀ)/2`.
pub fn skew(a: &DenseMatrix) -> DenseMatrix {
    assert!(a.is_square(), "skew requires a square matrix");
    (a - a.transpose()) * 0.5
}

/// `(A + Aᵀ)/2`.
pub fn sym(a: &DenseMatrix) -> DenseMatrix {
    assert!(a.is_square(), "sym requires a square matrix");
    (a + a.transpose()) * 0.5
}

/// Thin QR factorization with the positive-diagonal convention.
///
/// Returns `(Q, R)` with `Q` of shape d×r having orthonormal columns and `R`
/// r×r upper triangular with strictly positive diagonal. With this
/// convention the factorization is unique for full-column-rank input.
pub fn qr_positive(a: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix)> {
    let (d, r) = a.shape();
    if d < r {
        return Err(LinalgError::Shape(format!("qr_positive needs d >= r, got {d}x{r}")));
    }
    ensure_finite(a, "qr_positive input")?;
    let scale = a.norm();
    let qr = a.clone().qr();
    let mut q = qr.q();
    let mut rr = qr.r();
    for j in 0..r {
        let pivot = rr[(j, j)];
        if pivot.abs() <= RANK_TOL * scale || scale == 0.0 {
            return Err(LinalgError::RankDeficient { pivot: pivot.abs(), scale });
        }
        if pivot < 0.0 {
            q.column_mut(j).neg_mut();
            rr.row_mut(j).neg_mut();
        }
    }
    Ok((q, rr))
}

/// Thin SVD `A = U diag(σ) Vᵀ` of a tall matrix. `U` columns for zero
/// singular values are zero.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: DenseMatrix,
    pub sigma: Vec<f64>,
    pub v: DenseMatrix,
}

/// One-sided Jacobi SVD for `d ≥ r`.
pub fn jacobi_svd(a: &DenseMatrix) -> Result<ThinSvd> {
    ensure_finite(a, "jacobi_svd input")?;
    let (d, r) = a.shape();
    if d < r {
        return Err(LinalgError::Shape(format!("jacobi_svd needs d >= r, got {d}x{r}")));
    }
    let mut w = a.clone();
    let mut v = DenseMatrix::identity(r, r);
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..r {
            for q in p + 1..r {
                let (alpha, beta, gamma) = {
                    let (cp, cq) = (w.column(p), w.column(q));
                    (cp.norm_squared(), cq.norm_squared(), cp.dot(&cq))
                };
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = c * t;
                rotate_columns(w.as_mut_slice(), d, p, q, c, sn);
                rotate_columns(v.as_mut_slice(), r, p, q, c, sn);
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sigma = Vec::with_capacity(r);
    for j in 0..r {
        let nrm = w.column(j).norm();
        sigma.push(nrm);
        if nrm > 0.0 {
            w.column_mut(j).scale_mut(1.0 / nrm);
        }
    }
    Ok(ThinSvd { u: w, sigma, v })
}

fn rotate_columns(m: &mut [f64], rows: usize, p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = m.split_at_mut(q * rows);
    let cp = &mut lo[p * rows..(p + 1) * rows];
    let cq = &mut hi[..rows];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Nearest matrix with orthonormal columns, `U Vᵀ` from the compact SVD.
pub fn polar_project(a: &DenseMatrix) -> Result<DenseMatrix> {
    let svd = jacobi_svd(a)?;
    let smax = svd.sigma.iter().cloned().fold(0.0, f64::max);
    let smin = svd.sigma.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(smin > RANK_TOL * smax) {
        return Err(LinalgError::RankDeficient { pivot: smin, scale: smax });
    }
    Ok(svd.u * svd.v.transpose())
}

/// Polar factor through the Gram matrix, `A (AᵀA)^{-1/2}`.
///
/// Agrees with [`polar_project`] for full-rank input; cheaper, but squares the
/// condition number, so only used where `AᵀA` is known to be well conditioned.
pub fn polar_project_gram(a: &DenseMatrix) -> Result<DenseMatrix> {
    let g = a.tr_mul(a);
    let scale = g.norm();
    let w = inv_sqrt_spd(&g).map_err(|e| match e {
        LinalgError::NotSpd { min_eig } => LinalgError::RankDeficient { pivot: min_eig.max(0.0).sqrt(), scale },
        other => other,
    })?;
    Ok(a * w)
}

/// `S^{-1/2}` for symmetric positive definite `S`, via symmetric eigendecomposition.
pub fn inv_sqrt_spd(s: &DenseMatrix) -> Result<DenseMatrix> {
    if !s.is_square() {
        return Err(LinalgError::Shape("inv_sqrt_spd needs a square matrix".into()));
    }
    ensure_finite(s, "inv_sqrt_spd input")?;
    let eig = SymmetricEigen::new(sym(s));
    let min_eig = eig.eigenvalues.min();
    if !(min_eig > 0.0) {
        return Err(LinalgError::NotSpd { min_eig });
    }
    let v = &eig.eigenvectors;
    let mut scaled = v.clone();
    for (j, lam) in eig.eigenvalues.iter().enumerate() {
        scaled.column_mut(j).scale_mut(lam.sqrt().recip());
    }
    Ok(sym(&(scaled * v.transpose())))
}

/// `S^{1/2}` for symmetric positive semidefinite `S`.
pub fn sqrt_psd(s: &DenseMatrix) -> DenseMatrix {
    let eig = SymmetricEigen::new(sym(s));
    let v = &eig.eigenvectors;
    let mut scaled = v.clone();
    for (j, lam) in eig.eigenvalues.iter().enumerate() {
        scaled.column_mut(j).scale_mut(lam.max(0.0).sqrt());
    }
    sym(&(scaled * v.transpose()))
}

/// Moore–Penrose pseudo-inverse of a symmetric positive semidefinite matrix.
///
/// Eigenvalues at or below `1e-12 · λ_max` are treated as zero.
pub fn pinv_gram(g: &DenseMatrix) -> DenseMatrix {
    assert!(g.is_square(), "pinv_gram requires a square matrix");
    let n = g.nrows();
    let eig = SymmetricEigen::new(sym(g));
    let lam_max = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if lam_max == 0.0 {
        return DenseMatrix::zeros(n, n);
    }
    let cut = PINV_CUTOFF * lam_max;
    let v = &eig.eigenvectors;
    let mut scaled = DenseMatrix::zeros(n, n);
    for (j, lam) in eig.eigenvalues.iter().enumerate() {
        if *lam > cut {
            scaled.set_column(j, &(v.column(j) / *lam));
        }
    }
    sym(&(scaled * v.transpose()))
}

/// Solve `A X = B` by LU with partial pivoting.
pub fn solve(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    let lu = a.clone().lu();
    // reject near-singular pivots instead of returning garbage
    let u = lu.u();
    let scale = a.amax();
    if (0..u.nrows()).any(|i| u[(i, i)].abs() <= 1e-14 * scale) {
        return Err(LinalgError::Singular);
    }
    lu.solve(b).ok_or(LinalgError::Singular)
}

/// Maximum absolute column sum.
pub fn norm_one(a: &DenseMatrix) -> f64 {
    a.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

const THETA13: f64 = 5.371920351148152;

/// Matrix exponential by scaling and squaring with the diagonal [13/13] Padé
/// approximant. Intended for the small (≤ 2r) blocks that arise in the
/// geodesic retraction.
pub fn expm(a: &DenseMatrix) -> Result<DenseMatrix> {
    if !a.is_square() {
        return Err(LinalgError::Shape("expm needs a square matrix".into()));
    }
    ensure_finite(a, "expm input")?;
    let m = a.nrows();
    if m == 0 {
        return Ok(DenseMatrix::zeros(0, 0));
    }
    let norm = norm_one(a);
    let squarings = if norm > THETA13 { (norm / THETA13).log2().ceil() as i32 } else { 0 };
    let a = a * 2f64.powi(-squarings);
    let b = &PADE13;
    let ident = DenseMatrix::identity(m, m);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]);
    let u = &a * (inner_u + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &ident * b[1]);
    let inner_v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]);
    let v = inner_v + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &ident * b[0];
    let mut r = solve(&(&v - &u), &(&v + &u))?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    ensure_finite(&r, "expm output")?;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::{gram_schmidt_qr, taylor_expm};
    use crate::rng::gaussian_matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn qr_identity() {
        let i3 = DenseMatrix::identity(3, 3);
        let (q, r) = qr_positive(&i3).unwrap();
        assert!((q - &i3).norm() < 1e-15);
        assert!((r - &i3).norm() < 1e-15);
    }

    #[test]
    fn qr_sign_convention_flips_negated_column() {
        let mut a = DenseMatrix::identity(3, 3);
        a[(0, 0)] = -1.0;
        let (q, r) = qr_positive(&a).unwrap();
        assert!(r[(0, 0)] > 0.0);
        assert!((q[(0, 0)] + 1.0).abs() < 1e-15);
        assert!((&q * &r - &a).norm() < 1e-15);
    }

    #[test]
    fn qr_matches_gram_schmidt() {
        let a = gaussian_matrix(&mut rng(1), 6, 3);
        let (q, r) = qr_positive(&a).unwrap();
        assert!((&q * &r - &a).norm() <= 1e-12 * a.norm());
        assert!(orthonormality_error(&q) <= 1e-12);
        let (q_gs, r_gs) = gram_schmidt_qr(&a);
        assert!((&q - q_gs).norm() < 1e-12);
        assert!((&r - r_gs).norm() < 1e-12);
        for j in 0..3 {
            assert!(r[(j, j)] > 0.0);
            for i in j + 1..3 {
                assert_eq!(r[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn qr_rejects_rank_deficiency() {
        let mut a = gaussian_matrix(&mut rng(2), 5, 3);
        let c0 = a.column(0).clone_owned();
        a.set_column(2, &(c0 * 2.0));
        assert!(matches!(qr_positive(&a), Err(LinalgError::RankDeficient { .. })));
    }

    #[test]
    fn polar_fixed_points_and_axis_case() {
        let (x, _) = qr_positive(&gaussian_matrix(&mut rng(3), 7, 3)).unwrap();
        assert!((polar_project(&x).unwrap() - &x).norm() < 1e-13);

        let a = DenseMatrix::from_row_slice(3, 2, &[2.0, 0.0, 0.0, 3.0, 0.0, 0.0]);
        let p = polar_project(&a).unwrap();
        let expect = DenseMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert!((p - expect).norm() < 1e-14);
    }

    #[test]
    fn polar_matches_gram_inverse_sqrt() {
        let mut g = rng(4);
        for _ in 0..20 {
            let a = gaussian_matrix(&mut g, 8, 3);
            let p = polar_project(&a).unwrap();
            let p2 = polar_project_gram(&a).unwrap();
            assert!((&p - &p2).norm() < 1e-10);
            assert!(orthonormality_error(&p) < 1e-13);
        }
    }

    #[test]
    fn polar_is_nearest_orthonormal_factor() {
        // A = polar(A) · (AᵀA)^{1/2}
        let mut g = rng(5);
        for _ in 0..100 {
            let a = gaussian_matrix(&mut g, 9, 4);
            let p = polar_project(&a).unwrap();
            let h = sqrt_psd(&a.tr_mul(&a));
            assert!((&a - p * h).norm() <= 1e-10 * a.norm());
        }
    }

    #[test]
    fn polar_rejects_rank_deficient() {
        let a = DenseMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        assert!(polar_project(&a).is_err());
    }

    #[test]
    fn inv_sqrt_cases() {
        let i4 = DenseMatrix::identity(4, 4);
        assert!((inv_sqrt_spd(&i4).unwrap() - &i4).norm() < 1e-15);

        let s = DenseMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 9.0]));
        let w = inv_sqrt_spd(&s).unwrap();
        assert!((w[(0, 0)] - 0.5).abs() < 1e-15 && (w[(1, 1)] - 1.0 / 3.0).abs() < 1e-15);

        let b = gaussian_matrix(&mut rng(6), 6, 6);
        let s = b.tr_mul(&b) + DenseMatrix::identity(6, 6) * 0.5;
        let w = inv_sqrt_spd(&s).unwrap();
        assert!((&w - w.transpose()).norm() < 1e-14);
        assert!((&w * &s * &w - DenseMatrix::identity(6, 6)).norm() < 1e-10);
        let inv = s.clone().try_inverse().unwrap();
        assert!((&w * &w - inv).norm() < 1e-10);
    }

    #[test]
    fn inv_sqrt_rejects_indefinite() {
        let s = DenseMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(inv_sqrt_spd(&s), Err(LinalgError::NotSpd { .. })));
    }

    #[test]
    fn expm_basic_cases() {
        let z = DenseMatrix::zeros(4, 4);
        assert!((expm(&z).unwrap() - DenseMatrix::identity(4, 4)).norm() == 0.0);

        let th = std::f64::consts::FRAC_PI_2;
        let a = DenseMatrix::from_row_slice(2, 2, &[0.0, -th, th, 0.0]);
        let e = expm(&a).unwrap();
        let expect = DenseMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert!((e - expect).norm() < 1e-14);
    }

    #[test]
    fn expm_matches_taylor_oracle() {
        let mut g = rng(7);
        for _ in 0..10 {
            let a = gaussian_matrix(&mut g, 6, 6);
            let e = expm(&a).unwrap();
            let t = taylor_expm(&a, 60);
            assert!((&e - &t).norm() <= 1e-10 * t.norm().max(1.0), "{}", (&e - &t).norm());
        }
    }

    #[test]
    fn expm_of_skew_is_orthogonal_and_inverse_pairs() {
        let mut g = rng(8);
        for _ in 0..20 {
            let a = gaussian_matrix(&mut g, 8, 8);
            let a = &a * (5.0 / a.norm());
            let prod = expm(&a).unwrap() * expm(&(-&a)).unwrap();
            assert!((prod - DenseMatrix::identity(8, 8)).norm() < 1e-10);
            let e = expm(&skew(&a)).unwrap();
            assert!(orthonormality_error(&e) < 1e-12);
        }
    }

    #[test]
    fn pinv_cases() {
        let mut g = rng(9);
        let b = gaussian_matrix(&mut g, 4, 4);
        let s = b.tr_mul(&b) + DenseMatrix::identity(4, 4);
        let inv = s.clone().try_inverse().unwrap();
        assert!((pinv_gram(&s) - inv).norm() < 1e-10);

        let d = DenseMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!((pinv_gram(&d) - &d).norm() < 1e-15);

        // rank-2 PSD 3x3, Penrose identities
        let f = gaussian_matrix(&mut g, 3, 2);
        let a = &f * f.transpose();
        let p = pinv_gram(&a);
        assert!((&a * &p * &a - &a).norm() < 1e-10);
        assert!((&p * &a * &p - &p).norm() < 1e-10);
        assert!((&a * &p - (&a * &p).transpose()).norm() < 1e-10);
        assert!((&p * &a - (&p * &a).transpose()).norm() < 1e-10);
    }

    #[test]
    fn skew_cases() {
        let a = DenseMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let s = skew(&a);
        assert_eq!(s, DenseMatrix::from_row_slice(2, 2, &[0.0, -0.5, 0.5, 0.0]));
        let sy = sym(&a);
        assert_eq!(skew(&sy), DenseMatrix::zeros(2, 2));
        let r = gaussian_matrix(&mut rng(10), 5, 5);
        let k = skew(&r);
        assert_eq!(&k + k.transpose(), DenseMatrix::zeros(5, 5));
    }
}
