//! Reference computations used to validate the fast paths.
//!
//! These are deliberately naive: explicit projectors instead of factored
//! forms, enumeration instead of sampling, Taylor series instead of Padé.
//! They share nothing with the code they check beyond matrix arithmetic.

use crate::linalg::DenseMatrix;
use crate::problems::{FiniteSum, PcaInstance};
use crate::retraction::{self, RetractionKind};
use crate::StiefelPoint;
use nalgebra::SymmetricEigen;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("enumeration of {0} batches exceeds the 1e6 guard")]
    TooLarge(f64),
    #[error("map failed at the probe step: {0}")]
    Map(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdScheme {
    Central,
    Forward,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiniteDiffSpec {
    pub h: f64,
    pub scheme: FdScheme,
    pub rel_tol: f64,
}

impl Default for FiniteDiffSpec {
    fn default() -> Self {
        Self { h: 1e-6, scheme: FdScheme::Central, rel_tol: 1e-5 }
    }
}

impl FiniteDiffSpec {
    pub fn relative_error(&self, fd: &DenseMatrix, declared: &DenseMatrix) -> f64 {
        (fd - declared).norm() / declared.norm().max(f64::MIN_POSITIVE)
    }

    pub fn accepts(&self, fd: &DenseMatrix, declared: &DenseMatrix) -> bool {
        self.relative_error(fd, declared) <= self.rel_tol
    }
}

/// Richardson-extrapolated difference quotient of a matrix curve `t ↦ c(t)`
/// at `t = 0`, using steps `h` and `h/2`.
pub fn fd_curve<F, E>(curve: F, spec: &FiniteDiffSpec) -> Result<DenseMatrix, E>
where
    F: Fn(f64) -> Result<DenseMatrix, E>,
{
    assert!(spec.h > 0.0, "finite-difference step must be positive");
    let quotient = |h: f64| -> Result<DenseMatrix, E> {
        match spec.scheme {
            FdScheme::Central => Ok((curve(h)? - curve(-h)?) / (2.0 * h)),
            FdScheme::Forward => Ok((curve(h)? - curve(0.0)?) / h),
        }
    };
    let d1 = quotient(spec.h)?;
    let d2 = quotient(spec.h / 2.0)?;
    Ok(match spec.scheme {
        FdScheme::Central => (d2 * 4.0 - d1) / 3.0,
        FdScheme::Forward => d2 * 2.0 - d1,
    })
}

/// Finite-difference `R'(0)` of a retraction. Negative steps are taken as a
/// positive step along the negated direction.
pub fn fd_retraction_derivative(
    kind: RetractionKind,
    x: &StiefelPoint,
    dir: &DenseMatrix,
    spec: &FiniteDiffSpec,
) -> Result<DenseMatrix, OracleError> {
    let neg = -dir;
    fd_curve(
        |t| {
            let y = if t >= 0.0 { retraction::apply(kind, x, dir, t) } else { retraction::apply(kind, x, &neg, -t) };
            y.map(StiefelPoint::into_matrix).map_err(|e| OracleError::Map(e.to_string()))
        },
        spec,
    )
}

/// `D_ρ(X, Y)` written out with an explicit projector.
fn d_rho_explicit(x: &DenseMatrix, y: &DenseMatrix, rho: f64) -> DenseMatrix {
    let d = x.nrows();
    let proj = DenseMatrix::identity(d, d) - x * x.transpose();
    let xty = x.transpose() * y;
    let sk = (&xty - xty.transpose()) * 0.5;
    proj * y + x * sk * (4.0 * rho)
}

/// Exact mean and second central moment of the variance-reduced Riemannian
/// gradient over every ordered batch of size `batch_size` drawn with
/// replacement.
pub fn brute_force_expectation(
    problem: &dyn FiniteSum,
    x_k: &DenseMatrix,
    x_anchor: &DenseMatrix,
    batch_size: usize,
    rho: f64,
) -> Result<(DenseMatrix, f64), OracleError> {
    let n = problem.n_components();
    let count = (n as f64).powi(batch_size as i32);
    if count > 1e6 {
        return Err(OracleError::TooLarge(count));
    }
    let gk: Vec<DenseMatrix> = (0..n).map(|i| problem.component_grad(x_k, i)).collect();
    let g0: Vec<DenseMatrix> = (0..n).map(|i| problem.component_grad(x_anchor, i)).collect();
    let mut full0 = DenseMatrix::zeros(x_k.nrows(), x_k.ncols());
    for g in &g0 {
        full0 += g;
    }
    full0 /= n as f64;

    let total = count as usize;
    let mut samples = Vec::with_capacity(total);
    let mut idx = vec![0usize; batch_size];
    for _ in 0..total {
        let mut g = full0.clone();
        for &i in &idx {
            g += (&gk[i] - &g0[i]) / batch_size as f64;
        }
        samples.push(d_rho_explicit(x_k, &g, rho));
        // odometer increment over {0..n}^B
        for slot in idx.iter_mut() {
            *slot += 1;
            if *slot < n {
                break;
            }
            *slot = 0;
        }
    }
    let mut mean = DenseMatrix::zeros(x_k.nrows(), x_k.ncols());
    for s in &samples {
        mean += s;
    }
    mean /= total as f64;
    let second = samples.iter().map(|s| (s - &mean).norm_squared()).sum::<f64>() / total as f64;
    Ok((mean, second))
}

/// Centered covariance `(1/n) B Bᵀ` of a PCA instance, eigen-decomposed with
/// eigenvalues in descending order.
pub fn dense_pca_eig(inst: &PcaInstance) -> (Vec<f64>, DenseMatrix) {
    let b = inst.centered();
    let n = inst.n_components() as f64;
    let cov = (b * b.transpose()) / n;
    descending_eig(&cov)
}

pub fn descending_eig(sym: &DenseMatrix) -> (Vec<f64>, DenseMatrix) {
    let eig = SymmetricEigen::new(sym.clone());
    let mut order: Vec<usize> = (0..sym.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = DenseMatrix::zeros(sym.nrows(), sym.ncols());
    for (j, &i) in order.iter().enumerate() {
        vecs.set_column(j, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Truncated Taylor series of `exp(A)`, applied to `A/2^s` with `‖A/2^s‖ ≤ 1/2`
/// and squared back.
pub fn taylor_expm(a: &DenseMatrix, terms: usize) -> DenseMatrix {
    let m = a.nrows();
    let norm = a.norm();
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let scaled = a / 2f64.powi(s);
    let mut sum = DenseMatrix::identity(m, m);
    let mut term = DenseMatrix::identity(m, m);
    for k in 1..=terms {
        term = &term * &scaled / k as f64;
        sum += &term;
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

/// Modified Gram–Schmidt thin QR; the diagonal of `R` comes out positive.
pub fn gram_schmidt_qr(a: &DenseMatrix) -> (DenseMatrix, DenseMatrix) {
    let (d, r) = a.shape();
    let mut q = a.clone();
    let mut rr = DenseMatrix::zeros(r, r);
    for j in 0..r {
        for i in 0..j {
            let proj = q.column(i).dot(&q.column(j));
            rr[(i, j)] += proj;
            let qi = q.column(i).clone_owned();
            q.column_mut(j).axpy(-proj, &qi, 1.0);
        }
        // one reorthogonalization pass
        for i in 0..j {
            let proj = q.column(i).dot(&q.column(j));
            rr[(i, j)] += proj;
            let qi = q.column(i).clone_owned();
            q.column_mut(j).axpy(-proj, &qi, 1.0);
        }
        let nrm = q.column(j).norm();
        rr[(j, j)] = nrm;
        q.column_mut(j).scale_mut(1.0 / nrm);
    }
    debug_assert_eq!(q.nrows(), d);
    (q, rr)
}
