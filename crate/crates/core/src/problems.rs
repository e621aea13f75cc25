//! Finite-sum objectives `f(X) = (1/n) Σ f_i(X)` on the Stiefel/Grassmann
//! manifold: PCA and low-rank matrix completion.

use crate::linalg::{self, pinv_gram, qr_positive, DenseMatrix};
use crate::oracles;
use crate::rng::{self, gaussian_matrix, tag};
use crate::StiefelPoint;
use nalgebra::{Cholesky, DVector};
use rand::Rng;
use std::fmt;
use std::io::{self, BufRead, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("|Ω| = {requested} exceeds d·n = {available}")]
    TooManySamples { requested: usize, available: usize },
    #[error("invalid dimensions: {0}")]
    Dims(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Linalg(#[from] linalg::LinalgError),
}

pub type Result<T> = std::result::Result<T, ProblemError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstantsSource {
    Analytic,
    PowerIteration,
    UserSupplied,
    /// Empirical supremum over sampled points; an estimate, not a bound.
    Sampled,
}

impl fmt::Display for ConstantsSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ConstantsSource::Analytic => "analytic",
            ConstantsSource::PowerIteration => "power-iteration",
            ConstantsSource::UserSupplied => "user",
            ConstantsSource::Sampled => "sampled",
        };
        f.write_str(s)
    }
}

/// Lipschitz constant `L` of the component gradients and a bound `C` on
/// their norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemConstants {
    pub l: f64,
    pub c: f64,
    pub source: ConstantsSource,
}

/// A finite-sum objective. Component indices are 0-based.
pub trait FiniteSum: Sync {
    /// `(d, r)`: shape of the variable.
    fn dims(&self) -> (usize, usize);
    fn n_components(&self) -> usize;
    fn component_value(&self, x: &DenseMatrix, i: usize) -> f64;
    fn component_grad(&self, x: &DenseMatrix, i: usize) -> DenseMatrix;
    fn constants(&self) -> ProblemConstants;

    /// Whether the objective is invariant under `X ↦ XQ` (a Grassmann problem).
    fn is_grassmann(&self) -> bool {
        false
    }

    fn value(&self, x: &DenseMatrix) -> f64 {
        let n = self.n_components();
        (0..n).map(|i| self.component_value(x, i)).sum::<f64>() / n as f64
    }

    fn full_grad(&self, x: &DenseMatrix) -> DenseMatrix {
        let n = self.n_components();
        let (d, r) = self.dims();
        let mut g = DenseMatrix::zeros(d, r);
        for i in 0..n {
            g += self.component_grad(x, i);
        }
        g / n as f64
    }

    fn value_and_grad(&self, x: &DenseMatrix) -> (f64, DenseMatrix) {
        (self.value(x), self.full_grad(x))
    }

    /// `Σ_{i ∈ batch} (∇f_i(x) − ∇f_i(y))`.
    fn batch_grad_difference(&self, x: &DenseMatrix, y: &DenseMatrix, batch: &[usize]) -> DenseMatrix {
        let (d, r) = self.dims();
        let mut out = DenseMatrix::zeros(d, r);
        for &i in batch {
            out += self.component_grad(x, i) - self.component_grad(y, i);
        }
        out
    }
}

impl<T: FiniteSum + ?Sized> FiniteSum for &T {
    fn dims(&self) -> (usize, usize) {
        (**self).dims()
    }
    fn n_components(&self) -> usize {
        (**self).n_components()
    }
    fn component_value(&self, x: &DenseMatrix, i: usize) -> f64 {
        (**self).component_value(x, i)
    }
    fn component_grad(&self, x: &DenseMatrix, i: usize) -> DenseMatrix {
        (**self).component_grad(x, i)
    }
    fn constants(&self) -> ProblemConstants {
        (**self).constants()
    }
    fn is_grassmann(&self) -> bool {
        (**self).is_grassmann()
    }
    fn value(&self, x: &DenseMatrix) -> f64 {
        (**self).value(x)
    }
    fn full_grad(&self, x: &DenseMatrix) -> DenseMatrix {
        (**self).full_grad(x)
    }
    fn value_and_grad(&self, x: &DenseMatrix) -> (f64, DenseMatrix) {
        (**self).value_and_grad(x)
    }
    fn batch_grad_difference(&self, x: &DenseMatrix, y: &DenseMatrix, batch: &[usize]) -> DenseMatrix {
        (**self).batch_grad_difference(x, y, batch)
    }
}

// ---------------------------------------------------------------- PCA

/// `min −(1/n) Σ ‖b_iᵀX‖²` with `b_i = a_i − ā` the centered data columns.
///
/// Only the centered matrix and the column mean are stored; the raw data is
/// `B + ā𝟏ᵀ`.
#[derive(Debug, Clone)]
pub struct PcaInstance {
    b: DenseMatrix,
    mean: DVector<f64>,
    r: usize,
    col_sq_norms: Vec<f64>,
}

impl PcaInstance {
    /// Build from raw data `A` (d×n, columns are samples).
    pub fn from_data(a: &DenseMatrix, r: usize) -> Result<Self> {
        let (d, n) = a.shape();
        if d == 0 || n == 0 || r == 0 || r > d {
            return Err(ProblemError::Dims(format!("PCA needs 1 <= r <= d and n >= 1, got d={d} n={n} r={r}")));
        }
        linalg::ensure_finite(a, "PCA data")?;
        let mean = a.column_mean();
        let mut b = a.clone();
        for mut col in b.column_iter_mut() {
            col -= &mean;
        }
        let col_sq_norms = b.column_iter().map(|c| c.norm_squared()).collect();
        Ok(Self { b, mean, r, col_sq_norms })
    }

    /// Synthetic data: row `i` of a Gaussian d×n matrix scaled by `i^0.618`
    /// (1-based), then everything divided by the largest absolute entry.
    pub fn generate(d: usize, n: usize, r: usize, seed: u64) -> Result<Self> {
        Self::from_data(&pca_raw_data(d, n, seed), r)
    }

    pub fn centered(&self) -> &DenseMatrix {
        &self.b
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn raw_data(&self) -> DenseMatrix {
        let mut a = self.b.clone();
        for mut col in a.column_iter_mut() {
            col += &self.mean;
        }
        a
    }

    pub fn r(&self) -> usize {
        self.r
    }

    /// `(f*, X*)` from the dense eigendecomposition of the covariance.
    pub fn optimum(&self) -> (f64, StiefelPoint) {
        let (vals, vecs) = oracles::dense_pca_eig(self);
        let f_star = -vals.iter().take(self.r).sum::<f64>();
        let x = vecs.columns(0, self.r).clone_owned();
        (f_star, StiefelPoint::orthonormalize(&x).expect("eigenvectors are orthonormal"))
    }

    fn col(&self, i: usize) -> &[f64] {
        let d = self.b.nrows();
        &self.b.as_slice()[i * d..(i + 1) * d]
    }
}

/// Raw (uncentered) synthetic PCA data.
pub fn pca_raw_data(d: usize, n: usize, seed: u64) -> DenseMatrix {
    let mut rng = rng::stream(seed, 0, tag::DATA);
    let mut a = gaussian_matrix(&mut rng, d, n);
    for i in 0..d {
        let s = ((i + 1) as f64).powf(0.618);
        a.row_mut(i).scale_mut(s);
    }
    let m = a.amax();
    if m > 0.0 {
        a /= m;
    }
    a
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl FiniteSum for PcaInstance {
    fn dims(&self) -> (usize, usize) {
        (self.b.nrows(), self.r)
    }

    fn n_components(&self) -> usize {
        self.b.ncols()
    }

    fn component_value(&self, x: &DenseMatrix, i: usize) -> f64 {
        let b = self.col(i);
        let d = b.len();
        let xs = x.as_slice();
        -(0..x.ncols()).map(|k| dot(b, &xs[k * d..(k + 1) * d]).powi(2)).sum::<f64>()
    }

    fn component_grad(&self, x: &DenseMatrix, i: usize) -> DenseMatrix {
        let b = self.col(i);
        let d = b.len();
        let r = x.ncols();
        let xs = x.as_slice();
        let mut out = DenseMatrix::zeros(d, r);
        let os = out.as_mut_slice();
        for k in 0..r {
            let w = -2.0 * dot(b, &xs[k * d..(k + 1) * d]);
            for (o, bv) in os[k * d..(k + 1) * d].iter_mut().zip(b) {
                *o = w * bv;
            }
        }
        out
    }

    fn value(&self, x: &DenseMatrix) -> f64 {
        -(self.b.tr_mul(x)).norm_squared() / self.n_components() as f64
    }

    fn full_grad(&self, x: &DenseMatrix) -> DenseMatrix {
        let btx = self.b.tr_mul(x);
        &self.b * btx * (-2.0 / self.n_components() as f64)
    }

    fn value_and_grad(&self, x: &DenseMatrix) -> (f64, DenseMatrix) {
        let n = self.n_components() as f64;
        let btx = self.b.tr_mul(x);
        let f = -btx.norm_squared() / n;
        (f, &self.b * btx * (-2.0 / n))
    }

    fn batch_grad_difference(&self, x: &DenseMatrix, y: &DenseMatrix, batch: &[usize]) -> DenseMatrix {
        let (d, r) = x.shape();
        let delta = x - y;
        let ds = delta.as_slice();
        let mut out = DenseMatrix::zeros(d, r);
        let os = out.as_mut_slice();
        for &i in batch {
            let b = self.col(i);
            for k in 0..r {
                let w = -2.0 * dot(b, &ds[k * d..(k + 1) * d]);
                for (o, bv) in os[k * d..(k + 1) * d].iter_mut().zip(b) {
                    *o += w * bv;
                }
            }
        }
        out
    }

    /// `L = 2 max‖b_i‖²`, `C = 2 max‖b_i‖² √r`.
    fn constants(&self) -> ProblemConstants {
        let m = self.col_sq_norms.iter().cloned().fold(0.0, f64::max);
        ProblemConstants { l: 2.0 * m, c: 2.0 * m * (self.r as f64).sqrt(), source: ConstantsSource::Analytic }
    }

    fn is_grassmann(&self) -> bool {
        true
    }
}

/// Write PCA data as CSV, one matrix row per line.
pub fn write_pca_csv(path: &Path, a: &DenseMatrix) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for i in 0..a.nrows() {
        let line: Vec<String> = a.row(i).iter().map(|v| format!("{v:e}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pca_csv(path: &Path) -> Result<DenseMatrix> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ln, line) in f.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let row = t
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| ProblemError::Parse { line: ln + 1, msg: e.to_string() })?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(ProblemError::Parse { line: ln + 1, msg: "ragged row".into() });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(ProblemError::Parse { line: 0, msg: "empty matrix".into() });
    }
    let (d, n) = (rows.len(), rows[0].len());
    Ok(DenseMatrix::from_fn(d, n, |i, j| rows[i][j]))
}

/// Binary layout: `d` and `n` as little-endian u64, then `d·n` little-endian
/// f64 in column-major order.
pub fn write_pca_binary(path: &Path, a: &DenseMatrix) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(&(a.nrows() as u64).to_le_bytes())?;
    w.write_all(&(a.ncols() as u64).to_le_bytes())?;
    for v in a.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pca_binary(path: &Path) -> Result<DenseMatrix> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() < 16 {
        return Err(ProblemError::Parse { line: 0, msg: "truncated header".into() });
    }
    let d = u64::from_le_bytes(buf[0..8].try_into().unwrap()) as usize;
    let n = u64::from_le_bytes(buf[8..16].try_into().unwrap()) as usize;
    if buf.len() != 16 + 8 * d * n {
        return Err(ProblemError::Parse { line: 0, msg: format!("expected {} values", d * n) });
    }
    let vals = buf[16..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    Ok(DenseMatrix::from_iterator(d, n, vals))
}

// ---------------------------------------------------------------- matrix completion

/// `min (1/n) Σ_i min_a ‖P_{Ω_i}(X a − M_i)‖²` over the Grassmannian.
#[derive(Debug, Clone)]
pub struct McInstance {
    d: usize,
    n: usize,
    r: usize,
    /// Observed row indices per column, ascending.
    omega_rows: Vec<Vec<usize>>,
    /// Observed values aligned with `omega_rows`.
    omega_vals: Vec<Vec<f64>>,
    pub m_true: Option<DenseMatrix>,
    pub mu0: f64,
    pub varrho: f64,
    constants: Option<ProblemConstants>,
}

/// Least-squares fit of one column.
#[derive(Debug, Clone)]
pub struct ColumnFit {
    pub coef: DVector<f64>,
    pub value: f64,
    pub residual: Vec<f64>,
}

impl McInstance {
    /// Build from 0-based `(row, col, value)` triples.
    pub fn from_entries(d: usize, n: usize, r: usize, entries: &[(usize, usize, f64)]) -> Result<Self> {
        if r == 0 || r > d || n == 0 {
            return Err(ProblemError::Dims(format!("MC needs 1 <= r <= d and n >= 1, got d={d} n={n} r={r}")));
        }
        if entries.is_empty() {
            return Err(ProblemError::Dims("no observed entries".into()));
        }
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(i, j, v) in entries {
            if i >= d || j >= n {
                return Err(ProblemError::Dims(format!("entry ({i},{j}) outside {d}x{n}")));
            }
            if !v.is_finite() {
                return Err(ProblemError::Dims(format!("non-finite value at ({i},{j})")));
            }
            cols[j].push((i, v));
        }
        let mut omega_rows = Vec::with_capacity(n);
        let mut omega_vals = Vec::with_capacity(n);
        for mut c in cols {
            c.sort_by_key(|e| e.0);
            if c.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(ProblemError::Dims("duplicate observed entry".into()));
            }
            omega_rows.push(c.iter().map(|e| e.0).collect());
            omega_vals.push(c.iter().map(|e| e.1).collect());
        }
        Ok(Self { d, n, r, omega_rows, omega_vals, m_true: None, mu0: 1.0, varrho: 1.0, constants: None })
    }

    /// Synthetic rank-r instance `M = UΣVᵀ` with geometrically spaced
    /// singular values from `√(dn)` down to `√(dn)/cond`, observed on
    /// `(n + d − r) r²` entries sampled uniformly without replacement.
    pub fn generate(d: usize, n: usize, r: usize, cond: f64, seed: u64) -> Result<Self> {
        if r == 0 || r > d.min(n) {
            return Err(ProblemError::Dims(format!("MC needs 1 <= r <= min(d, n), got d={d} n={n} r={r}")));
        }
        if !(cond >= 1.0) {
            return Err(ProblemError::Dims(format!("condition number must be >= 1, got {cond}")));
        }
        let m = (n + d - r) * r * r;
        if m > d * n {
            return Err(ProblemError::TooManySamples { requested: m, available: d * n });
        }
        let mut rng = rng::stream(seed, 0, tag::DATA);
        let (u, _) = qr_positive(&gaussian_matrix(&mut rng, d, r))?;
        let (v, _) = qr_positive(&gaussian_matrix(&mut rng, n, r))?;
        let smax = ((d * n) as f64).sqrt();
        let sig: Vec<f64> = (0..r)
            .map(|k| if r == 1 { smax } else { smax * cond.powf(-(k as f64) / (r - 1) as f64) })
            .collect();
        let mut us = u;
        for (k, s) in sig.iter().enumerate() {
            us.column_mut(k).scale_mut(*s);
        }
        let m_true = us * v.transpose();
        let mut orng = rng::stream(seed, 0, tag::OMEGA);
        let idx = rand::seq::index::sample(&mut orng, d * n, m);
        let entries: Vec<(usize, usize, f64)> = idx
            .iter()
            .map(|k| {
                let (i, j) = (k % d, k / d);
                (i, j, m_true[(i, j)])
            })
            .collect();
        let mut inst = Self::from_entries(d, n, r, &entries)?;
        inst.mu0 = incoherence(&m_true, r);
        inst.m_true = Some(m_true);
        Ok(inst)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn n_observed(&self) -> usize {
        self.omega_rows.iter().map(Vec::len).sum()
    }

    pub fn column_rows(&self, j: usize) -> &[usize] {
        &self.omega_rows[j]
    }

    /// 0-based `(row, col, value)` triples, column by column.
    pub fn entries(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.n_observed());
        for j in 0..self.n {
            for (&i, &v) in self.omega_rows[j].iter().zip(&self.omega_vals[j]) {
                out.push((i, j, v));
            }
        }
        out
    }

    /// Fit column `j` of the observations with `X a`. Uses the normal
    /// equations, falling back to the minimum-norm solution when they are
    /// singular.
    pub fn fit_column(&self, x: &DenseMatrix, j: usize) -> ColumnFit {
        let rows = &self.omega_rows[j];
        let vals = &self.omega_vals[j];
        let r = x.ncols();
        if rows.is_empty() {
            return ColumnFit { coef: DVector::zeros(r), value: 0.0, residual: Vec::new() };
        }
        let d = x.nrows();
        let xs = x.as_slice();
        let mut gram = DenseMatrix::zeros(r, r);
        let mut rhs = DVector::zeros(r);
        for (&i, &v) in rows.iter().zip(vals) {
            for a in 0..r {
                let xa = xs[a * d + i];
                rhs[a] += xa * v;
                for b in 0..=a {
                    gram[(a, b)] += xa * xs[b * d + i];
                }
            }
        }
        for a in 0..r {
            for b in 0..a {
                gram[(b, a)] = gram[(a, b)];
            }
        }
        let scale = gram.trace().max(f64::MIN_POSITIVE);
        let coef = match Cholesky::new(gram.clone()) {
            Some(ch) if ch.l_dirty().diagonal().min().powi(2) > 1e-12 * scale => ch.solve(&rhs),
            _ => pinv_gram(&gram) * &rhs,
        };
        let mut residual = Vec::with_capacity(rows.len());
        let mut value = 0.0;
        for (&i, &v) in rows.iter().zip(vals) {
            let mut p = 0.0;
            for a in 0..r {
                p += xs[a * d + i] * coef[a];
            }
            let res = p - v;
            value += res * res;
            residual.push(res);
        }
        ColumnFit { coef, value, residual }
    }

    /// `X A` where column `j` of `A` is the fitted coefficient vector.
    pub fn reconstruct(&self, x: &DenseMatrix) -> DenseMatrix {
        let mut a = DenseMatrix::zeros(self.r, self.n);
        for j in 0..self.n {
            a.set_column(j, &self.fit_column(x, j).coef);
        }
        x * a
    }

    /// `‖XA − M_true‖_F / ‖M_true‖_F`, when the ground truth is known.
    pub fn recovery_error(&self, x: &DenseMatrix) -> Option<f64> {
        let m = self.m_true.as_ref()?;
        Some((self.reconstruct(x) - m).norm() / m.norm())
    }

    /// Empirical `(L, C)`: largest observed gradient-difference ratio over
    /// nearby point pairs and largest component gradient norm.
    pub fn estimate_constants(&self, samples: usize, seed: u64) -> ProblemConstants {
        let mut rng = rng::stream(seed, 0, tag::PROBE);
        let (mut l, mut c) = (0.0_f64, 0.0_f64);
        for _ in 0..samples {
            let x = StiefelPoint::random(&mut rng, self.d, self.r);
            let step = rng.random_range(1e-3..1e-1);
            let y = StiefelPoint::orthonormalize(&(x.matrix() + gaussian_matrix(&mut rng, self.d, self.r) * step))
                .expect("small perturbation keeps full rank");
            let i = rng.random_range(0..self.n);
            let gx = self.component_grad(x.matrix(), i);
            let gy = self.component_grad(y.matrix(), i);
            let dist = (x.matrix() - y.matrix()).norm();
            if dist > 0.0 {
                l = l.max((&gx - &gy).norm() / dist);
            }
            c = c.max(gx.norm()).max(gy.norm());
        }
        ProblemConstants { l: l.max(f64::MIN_POSITIVE), c: c.max(f64::MIN_POSITIVE), source: ConstantsSource::Sampled }
    }

    /// Cache constants so [`FiniteSum::constants`] does not resample.
    pub fn with_constants(mut self, k: ProblemConstants) -> Self {
        self.constants = Some(k);
        self
    }
}

impl FiniteSum for McInstance {
    fn dims(&self) -> (usize, usize) {
        (self.d, self.r)
    }

    fn n_components(&self) -> usize {
        self.n
    }

    fn component_value(&self, x: &DenseMatrix, i: usize) -> f64 {
        self.fit_column(x, i).value
    }

    /// `2 · scatter(residual) · a*ᵀ`, by the envelope theorem.
    fn component_grad(&self, x: &DenseMatrix, i: usize) -> DenseMatrix {
        let (d, r) = x.shape();
        let mut out = DenseMatrix::zeros(d, r);
        let fit = self.fit_column(x, i);
        let os = out.as_mut_slice();
        for (&row, res) in self.omega_rows[i].iter().zip(&fit.residual) {
            for a in 0..r {
                os[a * d + row] += 2.0 * res * fit.coef[a];
            }
        }
        out
    }

    fn value_and_grad(&self, x: &DenseMatrix) -> (f64, DenseMatrix) {
        let (d, r) = x.shape();
        let mut g = DenseMatrix::zeros(d, r);
        let mut f = 0.0;
        {
            let gs = g.as_mut_slice();
            for i in 0..self.n {
                let fit = self.fit_column(x, i);
                f += fit.value;
                for (&row, res) in self.omega_rows[i].iter().zip(&fit.residual) {
                    for a in 0..r {
                        gs[a * d + row] += 2.0 * res * fit.coef[a];
                    }
                }
            }
        }
        let n = self.n as f64;
        (f / n, g / n)
    }

    fn full_grad(&self, x: &DenseMatrix) -> DenseMatrix {
        self.value_and_grad(x).1
    }

    fn constants(&self) -> ProblemConstants {
        self.constants.unwrap_or_else(|| self.estimate_constants(200, 0))
    }

    fn is_grassmann(&self) -> bool {
        true
    }
}

/// `μ₀` such that the scaled singular vectors have squared row norms at most
/// `μ₀ r`.
fn incoherence(m: &DenseMatrix, r: usize) -> f64 {
    let svd = m.clone().svd(true, true);
    let (d, n) = m.shape();
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let mut mu: f64 = 0.0;
    for i in 0..d {
        let s: f64 = order[..r].iter().map(|&k| u[(i, k)].powi(2)).sum();
        mu = mu.max(s * d as f64 / r as f64);
    }
    for j in 0..n {
        let s: f64 = order[..r].iter().map(|&k| vt[(k, j)].powi(2)).sum();
        mu = mu.max(s * n as f64 / r as f64);
    }
    mu
}

/// Write observations as `i j value` lines with 1-based indices.
pub fn write_mc_triples(path: &Path, inst: &McInstance) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for (i, j, v) in inst.entries() {
        writeln!(w, "{} {} {:e}", i + 1, j + 1, v)?;
    }
    w.flush()?;
    Ok(())
}

/// Read `i j value` triples (1-based). Dimensions are the given ones.
pub fn read_mc_triples(path: &Path, d: usize, n: usize, r: usize) -> Result<McInstance> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut entries = Vec::new();
    for (ln, line) in f.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = t.split_whitespace().collect();
        let bad = |msg: &str| ProblemError::Parse { line: ln + 1, msg: msg.to_string() };
        if parts.len() != 3 {
            return Err(bad("expected 'i j value'"));
        }
        let i: usize = parts[0].parse().map_err(|_| bad("bad row index"))?;
        let j: usize = parts[1].parse().map_err(|_| bad("bad column index"))?;
        let v: f64 = parts[2].parse().map_err(|_| bad("bad value"))?;
        if i == 0 || j == 0 {
            return Err(bad("indices are 1-based"));
        }
        entries.push((i - 1, j - 1, v));
    }
    McInstance::from_entries(d, n, r, &entries)
}

/// `G₁(z) = 0` for `z ≤ 1`, `e^{(z−1)²} − 1` otherwise.
pub fn g1_regularizer(z: f64) -> f64 {
    if z <= 1.0 {
        0.0
    } else {
        ((z - 1.0) * (z - 1.0)).exp() - 1.0
    }
}

/// `F(W, Z) = min_S ½‖P_Ω(M − W S Zᵀ)‖²`, solved as a least-squares problem
/// in the r² entries of `S`.
pub fn factor_objective(inst: &McInstance, w: &DenseMatrix, z: &DenseMatrix) -> f64 {
    let r = w.ncols();
    let p = r * r;
    let mut gram = DenseMatrix::zeros(p, p);
    let mut rhs = DVector::zeros(p);
    let entries = inst.entries();
    let mut feat = vec![0.0; p];
    for &(i, j, v) in &entries {
        // vec(S) index a + r·b multiplies W_ia Z_jb
        for b in 0..r {
            for a in 0..r {
                feat[a + r * b] = w[(i, a)] * z[(j, b)];
            }
        }
        for q in 0..p {
            rhs[q] += feat[q] * v;
            for s in 0..p {
                gram[(q, s)] += feat[q] * feat[s];
            }
        }
    }
    let s = pinv_gram(&gram) * rhs;
    let mut val = 0.0;
    for &(i, j, v) in &entries {
        let mut pred = 0.0;
        for b in 0..r {
            for a in 0..r {
                pred += w[(i, a)] * s[a + r * b] * z[(j, b)];
            }
        }
        val += (v - pred).powi(2);
    }
    0.5 * val
}

/// Regularized factor objective `F(W,Z) + ϱ Σ G₁(‖W⁽ⁱ⁾‖²/(3μ₀r)) + ϱ Σ G₁(‖Z⁽ʲ⁾‖²/(3μ₀r))`
/// with `W⁽ⁱ⁾`, `Z⁽ʲ⁾` the rows of `W`, `Z`.
pub fn tilde_f(inst: &McInstance, w: &DenseMatrix, z: &DenseMatrix, varrho: f64, mu0: f64) -> f64 {
    let r = w.ncols() as f64;
    let denom = 3.0 * mu0 * r;
    let reg_w: f64 = w.row_iter().map(|row| g1_regularizer(row.norm_squared() / denom)).sum();
    let reg_z: f64 = z.row_iter().map(|row| g1_regularizer(row.norm_squared() / denom)).sum();
    factor_objective(inst, w, z) + varrho * (reg_w + reg_z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pca_generator_normalization_and_determinism() {
        let a = pca_raw_data(1, 50, 3);
        assert!(a.iter().all(|v| v.abs() <= 1.0));
        assert!(a.iter().any(|v| v.abs() == 1.0));
        assert_eq!(pca_raw_data(5, 20, 9), pca_raw_data(5, 20, 9));
        assert_ne!(pca_raw_data(5, 20, 9), pca_raw_data(5, 20, 10));
    }

    #[test]
    fn pca_component_grad_hand_case() {
        // centered columns ±e₁: component 0 has b = e₁
        let a = DenseMatrix::from_column_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]);
        let p = PcaInstance::from_data(&a, 1).unwrap();
        let x = DenseMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        assert_eq!(p.component_grad(&x, 0), DenseMatrix::from_column_slice(2, 1, &[-2.0, 0.0]));
    }

    #[test]
    fn pca_column_at_the_mean_has_zero_grad() {
        // third column equals the mean (2, 3), so it centers to zero
        let a = DenseMatrix::from_column_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 2.0, 3.0]);
        let p = PcaInstance::from_data(&a, 1).unwrap();
        let x = DenseMatrix::from_column_slice(2, 1, &[0.6, 0.8]);
        assert_eq!(p.component_grad(&x, 2).norm(), 0.0);
        assert!(p.component_grad(&x, 0).norm() > 0.0);
    }

    #[test]
    fn pca_single_unit_column_constant() {
        // centered columns are ±e₁, both of norm 1
        let a = DenseMatrix::from_column_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]);
        let p = PcaInstance::from_data(&a, 1).unwrap();
        assert_eq!(p.constants().l, 2.0);
    }

    #[test]
    fn pca_finite_sum_consistency() {
        let p = PcaInstance::generate(12, 40, 3, 1).unwrap();
        let mut g = ChaCha8Rng::seed_from_u64(2);
        let x = StiefelPoint::random(&mut g, 12, 3);
        let xm = x.matrix();
        let mean_val = (0..40).map(|i| p.component_value(xm, i)).sum::<f64>() / 40.0;
        assert!((mean_val - p.value(xm)).abs() < 1e-12);
        let mut mean_grad = DenseMatrix::zeros(12, 3);
        for i in 0..40 {
            mean_grad += p.component_grad(xm, i);
        }
        mean_grad /= 40.0;
        // dense covariance oracle
        let cov = p.centered() * p.centered().transpose() / 40.0;
        let dense = -(&cov * xm) * 2.0;
        assert!((&mean_grad - &dense).norm() < 1e-12);
        assert!((p.full_grad(xm) - &dense).norm() < 1e-12);
        let f_dense = -(xm.transpose() * &cov * xm).trace();
        assert!((p.value(xm) - f_dense).abs() < 1e-12);
    }

    #[test]
    fn pca_batch_difference_matches_loop() {
        let p = PcaInstance::generate(9, 30, 2, 4).unwrap();
        let mut g = ChaCha8Rng::seed_from_u64(5);
        let x = StiefelPoint::random(&mut g, 9, 2);
        let y = StiefelPoint::random(&mut g, 9, 2);
        let batch = [3, 7, 7, 29];
        let mut expect = DenseMatrix::zeros(9, 2);
        for &i in &batch {
            expect += p.component_grad(x.matrix(), i) - p.component_grad(y.matrix(), i);
        }
        assert!((p.batch_grad_difference(x.matrix(), y.matrix(), &batch) - expect).norm() < 1e-13);
    }

    #[test]
    fn pca_symmetry_of_xt_grad() {
        let p = PcaInstance::generate(10, 25, 3, 6).unwrap();
        let mut g = ChaCha8Rng::seed_from_u64(7);
        let x = StiefelPoint::random(&mut g, 10, 3);
        let s = x.matrix().tr_mul(&p.full_grad(x.matrix()));
        assert!((&s - s.transpose()).norm() < 1e-14);
    }

    #[test]
    fn pca_optimum_cases() {
        // rank-2 data in R^5
        let mut g = ChaCha8Rng::seed_from_u64(8);
        let f = gaussian_matrix(&mut g, 5, 2);
        let c = gaussian_matrix(&mut g, 2, 30);
        let p = PcaInstance::from_data(&(f * c), 2).unwrap();
        let (f_star, x_star) = p.optimum();
        assert!((p.value(x_star.matrix()) - f_star).abs() < 1e-12);
        let rg = crate::manifold::riemannian_grad(&x_star, &p.full_grad(x_star.matrix()), 0.0);
        assert!(rg.norm() < 1e-8);

        // r = d: optimum is minus the covariance trace
        let q = PcaInstance::generate(4, 20, 4, 3).unwrap();
        let cov = q.centered() * q.centered().transpose() / 20.0;
        assert!((q.optimum().0 + cov.trace()).abs() < 1e-12);
    }

    #[test]
    fn pca_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let a = pca_raw_data(4, 6, 1);
        let csv = dir.path().join("a.csv");
        write_pca_csv(&csv, &a).unwrap();
        assert_eq!(read_pca_csv(&csv).unwrap(), a);
        let bin = dir.path().join("a.bin");
        write_pca_binary(&bin, &a).unwrap();
        assert_eq!(read_pca_binary(&bin).unwrap(), a);
    }

    #[test]
    fn mc_generate_counts_and_determinism() {
        let m = McInstance::generate(30, 40, 2, 10.0, 1).unwrap();
        assert_eq!(m.n_observed(), (40 + 30 - 2) * 4);
        let m2 = McInstance::generate(30, 40, 2, 10.0, 1).unwrap();
        assert_eq!(m.entries(), m2.entries());
        assert_eq!(m.m_true, m2.m_true);
        assert!(matches!(McInstance::generate(5, 5, 3, 10.0, 1), Err(ProblemError::TooManySamples { .. })));
    }

    #[test]
    fn mc_condition_number() {
        let m = McInstance::generate(30, 40, 3, 10.0, 2).unwrap();
        let sv = m.m_true.clone().unwrap().singular_values();
        let mut s: Vec<f64> = sv.iter().cloned().filter(|v| *v > 1e-8).collect();
        s.sort_by(|a, b| b.total_cmp(a));
        assert_eq!(s.len(), 3);
        assert!((s[0] / s[2] - 10.0).abs() < 1e-9);
        let one = McInstance::generate(20, 20, 1, 1.0, 2).unwrap();
        let sv = one.m_true.unwrap().singular_values();
        assert!((sv.max() - (400f64).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn mc_full_column_fit() {
        let mut g = ChaCha8Rng::seed_from_u64(3);
        let x = StiefelPoint::random(&mut g, 6, 2);
        let m = gaussian_matrix(&mut g, 6, 1);
        let entries: Vec<_> = (0..6).map(|i| (i, 0, m[(i, 0)])).collect();
        let inst = McInstance::from_entries(6, 1, 2, &entries).unwrap();
        let fit = inst.fit_column(x.matrix(), 0);
        let a = x.matrix().tr_mul(&m);
        assert!((DenseMatrix::from_column_slice(2, 1, fit.coef.as_slice()) - &a).norm() < 1e-12);
        let resid = &m - x.matrix() * &a;
        assert!((fit.value - resid.norm_squared()).abs() < 1e-12);

        // M in span(X): exact fit
        let m_in = x.matrix() * DenseMatrix::from_column_slice(2, 1, &[0.3, -1.2]);
        let entries: Vec<_> = (0..6).map(|i| (i, 0, m_in[(i, 0)])).collect();
        let inst = McInstance::from_entries(6, 1, 2, &entries).unwrap();
        assert!(inst.component_value(x.matrix(), 0) < 1e-24);
        assert!(inst.component_grad(x.matrix(), 0).norm() < 1e-12);
    }

    #[test]
    fn mc_empty_column_is_zero() {
        let inst = McInstance::from_entries(4, 2, 1, &[(0, 0, 1.0)]).unwrap();
        let x = DenseMatrix::from_column_slice(4, 1, &[0.5, 0.5, 0.5, 0.5]);
        assert_eq!(inst.component_value(&x, 1), 0.0);
        assert_eq!(inst.component_grad(&x, 1).norm(), 0.0);
    }

    #[test]
    fn mc_underdetermined_column_uses_min_norm() {
        // one observed row, r = 2: infinitely many exact fits
        let inst = McInstance::from_entries(3, 1, 2, &[(1, 0, 2.0)]).unwrap();
        let x = DenseMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 0.6, 0.8]);
        let fit = inst.fit_column(&x, 0);
        // row 1 of X is (0, 0.6): min-norm a = (0, 2/0.6)
        assert!(fit.coef[0].abs() < 1e-12);
        assert!((fit.coef[1] - 2.0 / 0.6).abs() < 1e-9);
        assert!(fit.value < 1e-20);
    }

    #[test]
    fn mc_file_round_trip() {
        let m = McInstance::generate(10, 12, 1, 10.0, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("omega.txt");
        write_mc_triples(&path, &m).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(!text.lines().any(|l| l.starts_with("0 ")));
        let back = read_mc_triples(&path, 10, 12, 1).unwrap();
        let a = m.entries();
        let b = back.entries();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!((x.0, x.1), (y.0, y.1));
            assert_eq!(x.2, y.2);
        }
    }

    #[test]
    fn mc_constants_dominate_samples() {
        let m = McInstance::generate(15, 20, 2, 10.0, 5).unwrap();
        let k = m.estimate_constants(50, 1);
        assert_eq!(k.source, ConstantsSource::Sampled);
        assert!(k.l > 0.0 && k.c > 0.0);
        // re-running with the same seed sees exactly the same ratios
        let k2 = m.estimate_constants(50, 1);
        assert_eq!(k, k2);
    }

    #[test]
    fn g1_cases() {
        assert_eq!(g1_regularizer(0.3), 0.0);
        assert_eq!(g1_regularizer(1.0), 0.0);
        assert!((g1_regularizer(2.0) - (std::f64::consts::E - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn tilde_f_equals_f_on_incoherent_factors() {
        let m = McInstance::generate(12, 15, 2, 3.0, 6).unwrap();
        let mut g = ChaCha8Rng::seed_from_u64(9);
        let w = StiefelPoint::random(&mut g, 12, 2).into_matrix() * 12f64.sqrt();
        let z = StiefelPoint::random(&mut g, 15, 2).into_matrix() * 15f64.sqrt();
        let max_row = w.row_iter().chain(z.row_iter()).map(|r| r.norm_squared()).fold(0.0, f64::max);
        let mu0 = max_row / (3.0 * 2.0);
        let f = factor_objective(&m, &w, &z);
        assert_eq!(tilde_f(&m, &w, &z, 5.0, mu0), f);
        assert!(tilde_f(&m, &w, &z, 5.0, mu0 / 10.0) > f);
    }

    #[test]
    fn factor_objective_zero_at_truth() {
        let m = McInstance::generate(12, 15, 2, 3.0, 7).unwrap();
        let mt = m.m_true.clone().unwrap();
        let svd = mt.clone().svd(true, true);
        let mut order: Vec<usize> = (0..12).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let u = svd.u.unwrap().select_columns(&order[..2]);
        let v = svd.v_t.unwrap().transpose().select_columns(&order[..2]);
        assert!(factor_objective(&m, &(u * 12f64.sqrt()), &(v * 15f64.sqrt())) < 1e-18 * mt.norm_squared());
    }
}
