//! Stiefel and Grassmann points, tangent vectors, the `P_{ρ,X}` metric family
//! and the `D_ρ` operator that turns Euclidean gradients into Riemannian ones.

use crate::linalg::{self, frob_inner, orthonormality_error, skew, sym, DenseMatrix, LinalgError};
use crate::rng::gaussian_matrix;
use rand::Rng;
use thiserror::Error;

/// Feasibility tolerance for `‖XᵀX − I‖_F` and the tangent invariants.
pub const FEAS_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ManifoldError {
    #[error("columns are not orthonormal: ‖XᵀX − I‖_F = {0:.3e}")]
    NotOrthonormal(f64),
    #[error("direction violates the {space:?} invariant by {violation:.3e}")]
    NotTangent { space: TangentSpace, violation: f64 },
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape { expected: (usize, usize), got: (usize, usize) },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, ManifoldError>;

/// A d×r matrix with orthonormal columns. Also used as the representative of
/// a Grassmann point.
#[derive(Debug, Clone, PartialEq)]
pub struct StiefelPoint {
    x: DenseMatrix,
}

impl StiefelPoint {
    pub fn new(x: DenseMatrix) -> Result<Self> {
        linalg::ensure_finite(&x, "Stiefel point")?;
        if x.nrows() < x.ncols() {
            return Err(ManifoldError::NotOrthonormal(f64::INFINITY));
        }
        let err = orthonormality_error(&x);
        if err > FEAS_TOL {
            return Err(ManifoldError::NotOrthonormal(err));
        }
        Ok(Self { x })
    }

    /// Q factor of `a` (positive-diagonal convention).
    pub fn orthonormalize(a: &DenseMatrix) -> Result<Self> {
        let (q, _) = linalg::qr_positive(a)?;
        Ok(Self { x: q })
    }

    /// Random point: Q factor of a Gaussian d×r matrix.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, d: usize, r: usize) -> Self {
        loop {
            let g = gaussian_matrix(rng, d, r);
            if let Ok(p) = Self::orthonormalize(&g) {
                return p;
            }
        }
    }

    pub(crate) fn from_trusted(x: DenseMatrix) -> Self {
        Self { x }
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.x
    }

    pub fn into_matrix(self) -> DenseMatrix {
        self.x
    }

    pub fn d(&self) -> usize {
        self.x.nrows()
    }

    pub fn r(&self) -> usize {
        self.x.ncols()
    }

    pub fn feasibility_error(&self) -> f64 {
        orthonormality_error(&self.x)
    }

    fn check_shape(&self, z: &DenseMatrix) -> Result<()> {
        if z.shape() != self.x.shape() {
            return Err(ManifoldError::Shape { expected: self.x.shape(), got: z.shape() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TangentSpace {
    /// `XᵀZ + ZᵀX = 0`
    StiefelTangent,
    /// `XᵀZ = 0`
    GrassmannHorizontal,
}

impl TangentSpace {
    /// Size of the invariant violation of `z` at `x`.
    pub fn violation(self, x: &DenseMatrix, z: &DenseMatrix) -> f64 {
        let xtz = x.tr_mul(z);
        match self {
            TangentSpace::StiefelTangent => (&xtz + xtz.transpose()).norm(),
            TangentSpace::GrassmannHorizontal => xtz.norm(),
        }
    }
}

/// A direction at some point. The base point is not stored; callers pass it
/// alongside, which keeps the type a plain value.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    e: DenseMatrix,
    space: TangentSpace,
}

impl TangentVector {
    /// Checked constructor: `e` must satisfy the invariant of `space` at `x`.
    pub fn new(x: &StiefelPoint, e: DenseMatrix, space: TangentSpace) -> Result<Self> {
        x.check_shape(&e)?;
        let v = space.violation(x.matrix(), &e);
        if !(v <= FEAS_TOL * e.norm().max(1.0)) {
            return Err(ManifoldError::NotTangent { space, violation: v });
        }
        Ok(Self { e, space })
    }

    /// Wrap without checking. For directions produced by this module's
    /// projections or by `d_rho`.
    pub fn from_raw(e: DenseMatrix, space: TangentSpace) -> Self {
        Self { e, space }
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.e
    }

    pub fn into_matrix(self) -> DenseMatrix {
        self.e
    }

    pub fn space(&self) -> TangentSpace {
        self.space
    }

    pub fn norm(&self) -> f64 {
        self.e.norm()
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self { e: &self.e * a, space: self.space }
    }
}

/// Metric parameter ρ with the derived norm-equivalence constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricParams {
    pub rho: f64,
    pub nu: f64,
    pub gamma: f64,
}

impl MetricParams {
    pub fn new(rho: f64) -> Self {
        assert!(rho >= 0.0 && rho.is_finite(), "rho must be a finite nonnegative number");
        let (nu, gamma) = if rho == 0.0 {
            (1.0, 1.0)
        } else {
            let q = 1.0 / (4.0 * rho);
            (q.min(1.0), q.max(1.0))
        };
        Self { rho, nu, gamma }
    }

    /// Space that `D_ρ` maps into.
    pub fn space(&self) -> TangentSpace {
        if self.rho == 0.0 {
            TangentSpace::GrassmannHorizontal
        } else {
            TangentSpace::StiefelTangent
        }
    }
}

/// `(I − XXᵀ)Y + 4ρ X skew(XᵀY)` on raw matrices.
pub fn d_rho_matrix(x: &DenseMatrix, y: &DenseMatrix, rho: f64) -> DenseMatrix {
    let xty = x.tr_mul(y);
    let coef = if rho == 0.0 { xty } else { &xty - skew(&xty) * (4.0 * rho) };
    let mut out = y.clone();
    out.gemm(-1.0, x, &coef, 1.0);
    out
}

/// The `D_ρ` operator.
pub fn d_rho(x: &StiefelPoint, y: &DenseMatrix, rho: f64) -> TangentVector {
    assert_eq!(x.matrix().shape(), y.shape(), "d_rho shape mismatch");
    TangentVector::from_raw(d_rho_matrix(x.matrix(), y, rho), MetricParams::new(rho).space())
}

/// Riemannian gradient of a function with Euclidean gradient `egrad` at `x`.
pub fn riemannian_grad(x: &StiefelPoint, egrad: &DenseMatrix, rho: f64) -> TangentVector {
    d_rho(x, egrad, rho)
}

/// `⟨E1, P_{ρ,X} E2⟩`; plain Euclidean for ρ = 0.
pub fn inner_x(x: &StiefelPoint, e1: &TangentVector, e2: &TangentVector, rho: f64) -> f64 {
    let base = frob_inner(e1.matrix(), e2.matrix());
    if rho == 0.0 {
        return base;
    }
    let w = 1.0 - 1.0 / (4.0 * rho);
    if w == 0.0 {
        return base;
    }
    let a = x.matrix().tr_mul(e1.matrix());
    let b = x.matrix().tr_mul(e2.matrix());
    base - w * frob_inner(&a, &b)
}

/// Orthogonal projection onto the tangent or horizontal space at `x`.
pub fn tangent_project(x: &StiefelPoint, z: &DenseMatrix, space: TangentSpace) -> TangentVector {
    assert_eq!(x.matrix().shape(), z.shape(), "tangent_project shape mismatch");
    let xm = x.matrix();
    let xtz = xm.tr_mul(z);
    let coef = match space {
        TangentSpace::StiefelTangent => sym(&xtz),
        TangentSpace::GrassmannHorizontal => xtz,
    };
    let mut out = z.clone();
    out.gemm(-1.0, xm, &coef, 1.0);
    TangentVector::from_raw(out, space)
}

/// Random unit-norm tangent direction.
pub fn random_tangent<R: Rng + ?Sized>(rng: &mut R, x: &StiefelPoint, space: TangentSpace) -> TangentVector {
    let z = gaussian_matrix(rng, x.d(), x.r());
    let t = tangent_project(x, &z, space);
    let n = t.norm();
    t.scaled(1.0 / n)
}
