//! S-SVRG (fixed, Barzilai–Borwein or theory-driven step sizes), S-SGD and a
//! full-gradient Riemannian descent baseline.

use crate::linalg::{frob_inner, DenseMatrix};
use crate::manifold::{d_rho_matrix, MetricParams, StiefelPoint};
use crate::problems::FiniteSum;
use crate::retraction::{self, RetractionError, RetractionKind};
use crate::rng::{self, gaussian_matrix, tag, StreamRng};
use rand::Rng;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("non-finite objective or gradient at epoch {epoch}")]
    NonFiniteValue { epoch: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no c in (0,1) satisfies the step-size condition (ratio {ratio:.3e})")]
    NoFeasibleC { ratio: f64 },
    #[error("schedule has non-positive Delta_{k} = {value:.3e}")]
    NonPositiveDelta { k: usize, value: f64 },
    #[error(transparent)]
    Retraction(#[from] RetractionError),
}

pub type Result<T> = std::result::Result<T, OptimError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepMode {
    Fixed(f64),
    /// Barzilai–Borwein with safeguards; `initial` is the step-size numerator
    /// used in the first epoch, before any `(S, Y)` pair exists.
    Bb { tau_min: f64, tau_max: f64, initial: f64 },
    /// Parameters from the complexity theorem; overrides `inner_k` and `batch`.
    Theorem1 { mu: f64, kappa: f64 },
}

impl StepMode {
    pub fn bb_default() -> Self {
        StepMode::Bb { tau_min: 1e-8, tau_max: 1e8, initial: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OutputMode {
    /// `X^{s+1,0} = X^{s,K}`; return the last anchor.
    LastIterate,
    /// Chain on the last inner iterate, record `X_r^s` drawn with
    /// `p_{s,k} ∝ Δ_{s,k}` and return one of them uniformly.
    SampledPsk,
    /// Chain on `X_r^s` drawn with the α-weighted probabilities that put
    /// mass on `k = K`; return the last one.
    SampledLinear { alpha: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvrgConfig {
    pub retraction: RetractionKind,
    pub rho: f64,
    pub step_mode: StepMode,
    /// Inner iterations per epoch.
    pub inner_k: usize,
    /// Mini-batch size `|B|`.
    pub batch: usize,
    pub max_epochs: usize,
    pub grad_tol: f64,
    pub output_mode: OutputMode,
    pub seed: u64,
    /// Number of S-SGD steps used to improve the random start; `None` means `inner_k`.
    pub warm_steps: Option<usize>,
    /// Step for the warm start; `None` means `1/L`.
    pub warm_step: Option<f64>,
    /// `(L1, L2)` of the retraction for theory-driven steps; certified values
    /// or a sampled estimate are used when absent.
    pub retraction_constants: Option<(f64, f64)>,
}

impl SvrgConfig {
    pub fn new(retraction: RetractionKind, step_mode: StepMode, inner_k: usize, batch: usize, seed: u64) -> Self {
        Self {
            retraction,
            rho: 0.0,
            step_mode,
            inner_k,
            batch,
            max_epochs: 200,
            grad_tol: 1e-6,
            output_mode: OutputMode::LastIterate,
            seed,
            warm_steps: None,
            warm_step: None,
            retraction_constants: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(OptimError::InvalidConfig(m.to_string()));
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return bad("rho must be finite and nonnegative");
        }
        if self.inner_k == 0 {
            return bad("inner_k must be at least 1");
        }
        if self.batch == 0 {
            return bad("batch must be at least 1");
        }
        if !(self.grad_tol >= 0.0) {
            return bad("grad_tol must be nonnegative");
        }
        match self.step_mode {
            StepMode::Fixed(t) if !(t >= 0.0 && t.is_finite()) => return bad("fixed step must be finite and nonnegative"),
            StepMode::Bb { tau_min, tau_max, initial } => {
                if !(tau_min > 0.0 && tau_min < tau_max) {
                    return bad("BB safeguards need 0 < tau_min < tau_max");
                }
                if !(initial > 0.0 && initial.is_finite()) {
                    return bad("BB initial step must be positive");
                }
            }
            StepMode::Theorem1 { mu, kappa } => {
                if !(0.0..=2.0 / 3.0).contains(&mu) {
                    return bad("mu must lie in [0, 2/3]");
                }
                if !(kappa > 0.0 && kappa.is_finite()) {
                    return bad("kappa must be positive");
                }
            }
            _ => {}
        }
        if !matches!(self.output_mode, OutputMode::LastIterate) && !matches!(self.step_mode, StepMode::Theorem1 { .. }) {
            return bad("sampled output modes need the theorem-1 step mode");
        }
        if let OutputMode::SampledLinear { alpha } = self.output_mode {
            if !(alpha > 0.0) {
                return bad("alpha must be positive");
            }
        }
        if self.retraction == RetractionKind::Exp2 && self.rho != 0.0 {
            return bad("exp2 is a Grassmann retraction and needs rho = 0");
        }
        if let RetractionKind::Jd(phi) = self.retraction {
            phi.check()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminalStatus {
    GradTol,
    MaxEpochs,
}

/// State at the start of epoch `s`, i.e. at the anchor `X^{s,0}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub f: f64,
    pub grad_norm: f64,
    pub step_size: f64,
    pub ifo_calls: u64,
    pub ro_calls: u64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub records: Vec<EpochRecord>,
    pub status: TerminalStatus,
}

impl RunTrace {
    /// Completed epochs.
    pub fn epochs(&self) -> usize {
        self.records.last().map_or(0, |r| r.epoch)
    }

    pub fn last(&self) -> &EpochRecord {
        self.records.last().expect("trace has at least one record")
    }

    /// True when every field except wall-clock time matches bit for bit.
    pub fn same_numerics(&self, other: &RunTrace) -> bool {
        self.status == other.status
            && self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| {
                a.epoch == b.epoch
                    && a.f.to_bits() == b.f.to_bits()
                    && a.grad_norm.to_bits() == b.grad_norm.to_bits()
                    && a.step_size.to_bits() == b.step_size.to_bits()
                    && a.ifo_calls == b.ifo_calls
                    && a.ro_calls == b.ro_calls
            })
    }
}

/// `Γ(z, i) = ((1+z)^{i−1} − 1)/z`.
pub fn gamma(z: f64, i: usize) -> f64 {
    assert!(i >= 1, "gamma is defined for i >= 1");
    assert!(z > 0.0, "gamma needs z > 0");
    ((i - 1) as f64 * z.ln_1p()).exp_m1() / z
}

/// Parameters and per-iteration weights from the complexity theorem.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub k: usize,
    pub batch: usize,
    pub beta: f64,
    pub tau: f64,
    pub c: f64,
    pub nu: f64,
    pub l_tilde: f64,
    pub l_hat: f64,
    /// `Δ_k`, `k = 0..K−1`; identical in every epoch since τ is constant.
    pub delta: Vec<f64>,
    /// `p_k`, `k = 0..=K`, with `p_K = 0`.
    pub p: Vec<f64>,
}

impl Schedule {
    /// Probabilities with weight `α²` on `k = K`.
    pub fn probabilities_linear(&self, alpha: f64) -> Vec<f64> {
        let a2 = alpha * alpha;
        let total = a2 + self.delta.iter().sum::<f64>();
        let mut p: Vec<f64> = self.delta.iter().map(|d| d / total).collect();
        p.push(a2 / total);
        p
    }

    /// Left side of the condition defining `c`.
    pub fn c_condition(&self, l: f64) -> f64 {
        c_condition(self.l_hat / (self.l_tilde.sqrt() * l), self.c)
    }
}

fn c_condition(ratio: f64, c: f64) -> f64 {
    ratio * (c * c + 2.0 * c).exp() * c
}

/// `⌈x⌉`, treating values within relative 1e-9 of an integer as that integer.
fn robust_ceil(x: f64) -> usize {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// The complexity theorem's `K`, `|B|`, `β`, `τ`, `c` and `Δ_k`, `p_k`.
#[allow(clippy::too_many_arguments)]
pub fn theorem1_schedule(
    n: usize,
    mu: f64,
    kappa: f64,
    l: f64,
    c_bound: f64,
    l1: f64,
    l2: f64,
    r: usize,
    nu: f64,
) -> Result<Schedule> {
    if !(0.0..=2.0 / 3.0).contains(&mu) || !(kappa > 0.0) {
        return Err(OptimError::InvalidConfig("theorem-1 schedule needs 0 <= mu <= 2/3 and kappa > 0".into()));
    }
    if !(l > 0.0 && c_bound > 0.0 && l1 > 0.0 && l2 >= 0.0 && nu > 0.0) {
        return Err(OptimError::InvalidConfig("theorem-1 schedule needs positive constants".into()));
    }
    let k = robust_ceil((kappa * n as f64).powf(1.0 / (3.0 * (1.0 - mu)))).max(1);
    let kf = k as f64;
    let batch = robust_ceil(kf.powf(2.0 - 3.0 * mu)).max(1);
    let l_tilde = l1 * l1 + 4.0 * l2 * (r as f64).sqrt();
    let l_hat = 2.0 * l2 * c_bound + l1 * l1 * l;
    let ratio = l_hat / (l_tilde.sqrt() * l);

    // largest c in (0,1) with ratio·exp(c²+2c)·c ≤ 1; the left side increases in c
    let lo_c = 1e-8;
    if c_condition(ratio, lo_c) > 1.0 {
        return Err(OptimError::NoFeasibleC { ratio });
    }
    let c = if c_condition(ratio, 1.0) <= 1.0 {
        1.0 - 1e-12
    } else {
        let (mut lo, mut hi) = (lo_c, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if c_condition(ratio, mid) <= 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };

    let beta = (l_tilde.sqrt() * l / nu) * kf.powf(mu - 1.0);
    let tau = (c * nu / (l_tilde.sqrt() * l)) * kf.powf(-mu);
    let v = l_tilde * l * l * tau * tau / (nu * nu * batch as f64);
    let z = 2.0 * beta * tau + v;
    let mut delta = Vec::with_capacity(k);
    for kk in 0..k {
        let g = gamma(z, k - kk);
        let d = tau * (nu - 0.5 * l_hat * tau * (1.0 + (1.0 + 2.0 / (l_tilde * beta * tau)) * v * g));
        if !(d > 0.0) {
            return Err(OptimError::NonPositiveDelta { k: kk, value: d });
        }
        delta.push(d);
    }
    let total: f64 = delta.iter().sum();
    let mut p: Vec<f64> = delta.iter().map(|d| d / total).collect();
    p.push(0.0);
    Ok(Schedule { k, batch, beta, tau, c, nu, l_tilde, l_hat, delta, p })
}

/// Categorical draw from `p`.
pub fn sample_index<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let total: f64 = p.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in p.iter().enumerate() {
        if w > 0.0 {
            last_positive = i;
        }
        acc += w;
        if u < acc {
            return i;
        }
    }
    last_positive
}

/// Output selection over the iterates `X^{s,0..=K}` of one epoch.
pub fn select_output<R: Rng + ?Sized>(iterates: &[StiefelPoint], p: &[f64], mode: OutputMode, rng: &mut R) -> StiefelPoint {
    assert!(!iterates.is_empty());
    match mode {
        OutputMode::LastIterate => iterates.last().unwrap().clone(),
        _ => {
            assert_eq!(iterates.len(), p.len(), "one probability per iterate");
            iterates[sample_index(p, rng)].clone()
        }
    }
}

/// Safeguarded Barzilai–Borwein step divided by `K`; doubled for `gr`.
#[allow(clippy::too_many_arguments)]
pub fn bb_step(
    x_s: &DenseMatrix,
    x_prev: &DenseMatrix,
    grad_s: &DenseMatrix,
    grad_prev: &DenseMatrix,
    k: usize,
    tau_min: f64,
    tau_max: f64,
    kind: RetractionKind,
) -> f64 {
    let s = x_s - x_prev;
    let y = grad_s - grad_prev;
    let ss = frob_inner(&s, &s);
    let sy = frob_inner(&s, &y).abs();
    let mut lbb = if sy <= 1e-300 || !(ss / sy).is_finite() { tau_max } else { ss / sy };
    if kind == RetractionKind::Gr {
        lbb *= 2.0;
    }
    lbb.clamp(tau_min, tau_max) / k as f64
}

/// Variance-reduced Euclidean gradient
/// `∇f(X0) + (1/|B|) Σ_{i∈B} (∇f_i(Xk) − ∇f_i(X0))`.
pub fn svrg_euclidean(
    problem: &dyn FiniteSum,
    x_k: &DenseMatrix,
    x_anchor: &DenseMatrix,
    full_grad_anchor: &DenseMatrix,
    batch: &[usize],
) -> DenseMatrix {
    let diff = problem.batch_grad_difference(x_k, x_anchor, batch);
    full_grad_anchor + diff / batch.len() as f64
}

/// `D_ρ(Xk, G)` of the variance-reduced gradient.
pub fn svrg_gradient(
    problem: &dyn FiniteSum,
    x_k: &DenseMatrix,
    x_anchor: &DenseMatrix,
    full_grad_anchor: &DenseMatrix,
    batch: &[usize],
    rho: f64,
) -> DenseMatrix {
    d_rho_matrix(x_k, &svrg_euclidean(problem, x_k, x_anchor, full_grad_anchor, batch), rho)
}

/// One descent step `R(X, −τ G^R)` from a Euclidean gradient estimate; gp and
/// gr consume the Euclidean estimate directly.
pub fn descent_step(kind: RetractionKind, x: &StiefelPoint, egrad: &DenseMatrix, rho: f64, tau: f64) -> Result<StiefelPoint> {
    Ok(match kind {
        RetractionKind::Gp => retraction::retract_gp(x, egrad, tau)?,
        RetractionKind::Gr => retraction::retract_gr(x, egrad, tau)?,
        _ => {
            let e = -d_rho_matrix(x.matrix(), egrad, rho);
            retraction::retract_dir(kind, x, &e, tau)?
        }
    })
}

/// `(L1, L2)` for a retraction: configured, certified, or sampled.
pub fn retraction_constants(cfg: &SvrgConfig, d: usize, r: usize) -> Result<(f64, f64)> {
    if let Some(k) = cfg.retraction_constants {
        return Ok(k);
    }
    if let Some(k) = retraction::certified_constants(cfg.retraction) {
        return Ok(k);
    }
    let (l1, l2) = retraction::estimate_l1_l2(cfg.retraction, 1000, d, r, cfg.seed)?;
    log::info!("using sampled retraction constants L1={l1:.4}, L2={l2:.4} for {}", cfg.retraction);
    Ok((l1, l2))
}

/// Schedule for a problem/config pair in theorem-1 mode.
pub fn schedule_for(problem: &dyn FiniteSum, cfg: &SvrgConfig) -> Result<Option<Schedule>> {
    let StepMode::Theorem1 { mu, kappa } = cfg.step_mode else {
        return Ok(None);
    };
    let (d, r) = problem.dims();
    let (l1, l2) = retraction_constants(cfg, d, r)?;
    let k = problem.constants();
    let nu = MetricParams::new(cfg.rho).nu;
    theorem1_schedule(problem.n_components(), mu, kappa, k.l, k.c, l1, l2, r, nu).map(Some)
}

fn check_finite(f: f64, g: &DenseMatrix, epoch: usize) -> Result<()> {
    if !f.is_finite() || !g.iter().all(|v| v.is_finite()) {
        return Err(OptimError::NonFiniteValue { epoch });
    }
    Ok(())
}

fn draw_batch(rng: &mut StreamRng, n: usize, size: usize, out: &mut Vec<usize>) {
    out.clear();
    out.extend((0..size).map(|_| rng.random_range(0..n)));
}

/// Single-sample stochastic Riemannian steps with a constant step size.
/// Returns the final point and `(step, f, ‖grad f‖)` every `record_every`
/// steps (including step 0) when requested.
#[allow(clippy::too_many_arguments)]
pub fn sgd_steps(
    problem: &dyn FiniteSum,
    x0: &StiefelPoint,
    steps: usize,
    tau: f64,
    kind: RetractionKind,
    rho: f64,
    rng: &mut StreamRng,
    record_every: Option<usize>,
) -> Result<(StiefelPoint, Vec<(usize, f64, f64)>)> {
    let n = problem.n_components();
    let mut x = x0.clone();
    let mut log = Vec::new();
    let record = |x: &StiefelPoint, j: usize, log: &mut Vec<(usize, f64, f64)>| -> Result<()> {
        let (f, g) = problem.value_and_grad(x.matrix());
        check_finite(f, &g, j)?;
        log.push((j, f, d_rho_matrix(x.matrix(), &g, rho).norm()));
        Ok(())
    };
    for j in 0..steps {
        if let Some(every) = record_every {
            if j % every.max(1) == 0 {
                record(&x, j, &mut log)?;
            }
        }
        let i = rng.random_range(0..n);
        let g = problem.component_grad(x.matrix(), i);
        x = descent_step(kind, &x, &g, rho, tau)?;
    }
    if record_every.is_some() {
        record(&x, steps, &mut log)?;
    }
    Ok((x, log))
}

/// Random Gaussian start, orthonormalized, then improved by a few S-SGD steps.
pub fn warm_start(problem: &dyn FiniteSum, cfg: &SvrgConfig) -> Result<StiefelPoint> {
    let (d, r) = problem.dims();
    let mut rng = rng::stream(cfg.seed, 0, tag::INIT);
    let x0 = loop {
        if let Ok(p) = StiefelPoint::orthonormalize(&gaussian_matrix(&mut rng, d, r)) {
            break p;
        }
    };
    let steps = cfg.warm_steps.unwrap_or(cfg.inner_k);
    if steps == 0 {
        return Ok(x0);
    }
    let tau = cfg.warm_step.unwrap_or_else(|| 1.0 / problem.constants().l);
    let mut wrng = rng::stream(cfg.seed, 0, tag::WARM);
    Ok(sgd_steps(problem, &x0, steps, tau, cfg.retraction, cfg.rho, &mut wrng, None)?.0)
}

/// S-SVRG from the warm start.
pub fn run_s_svrg(problem: &dyn FiniteSum, cfg: &SvrgConfig) -> Result<(StiefelPoint, RunTrace)> {
    cfg.validate()?;
    let x0 = warm_start(problem, cfg)?;
    run_s_svrg_from(problem, cfg, x0)
}

/// S-SVRG from a given starting point.
pub fn run_s_svrg_from(problem: &dyn FiniteSum, cfg: &SvrgConfig, x_start: StiefelPoint) -> Result<(StiefelPoint, RunTrace)> {
    cfg.validate()?;
    let start = Instant::now();
    let n = problem.n_components();
    let schedule = schedule_for(problem, cfg)?;
    let (inner_k, batch_size) = match &schedule {
        Some(s) => (s.k, s.batch),
        None => (cfg.inner_k, cfg.batch),
    };
    let out_probs = match (&schedule, cfg.output_mode) {
        (Some(s), OutputMode::SampledPsk) => Some(s.p.clone()),
        (Some(s), OutputMode::SampledLinear { alpha }) => Some(s.probabilities_linear(alpha)),
        _ => None,
    };

    let mut records = Vec::new();
    let mut x = x_start;
    let mut prev: Option<(DenseMatrix, DenseMatrix)> = None;
    let mut chosen: Option<StiefelPoint> = None;
    let (mut ifo, mut ro) = (0u64, 0u64);
    let mut batch = Vec::with_capacity(batch_size);

    let mut s = 0usize;
    let status = loop {
        let (f, egrad) = problem.value_and_grad(x.matrix());
        check_finite(f, &egrad, s)?;
        let rgrad = d_rho_matrix(x.matrix(), &egrad, cfg.rho);
        let grad_norm = rgrad.norm();
        let tau = match (cfg.step_mode, &schedule) {
            (StepMode::Fixed(t), _) => t,
            (StepMode::Theorem1 { .. }, Some(sch)) => sch.tau,
            (StepMode::Bb { tau_min, tau_max, initial }, _) => match &prev {
                None => initial / inner_k as f64,
                Some((xp, gp)) => bb_step(x.matrix(), xp, &rgrad, gp, inner_k, tau_min, tau_max, cfg.retraction),
            },
            (StepMode::Theorem1 { .. }, None) => unreachable!("schedule built for theorem-1 mode"),
        };
        records.push(EpochRecord {
            epoch: s,
            f,
            grad_norm,
            step_size: tau,
            ifo_calls: ifo,
            ro_calls: ro,
            seconds: start.elapsed().as_secs_f64(),
        });
        if grad_norm <= cfg.grad_tol {
            break TerminalStatus::GradTol;
        }
        if s >= cfg.max_epochs {
            break TerminalStatus::MaxEpochs;
        }
        ifo += n as u64;

        let mut brng = rng::stream(cfg.seed, s as u64, tag::BATCH);
        let mut orng = rng::stream(cfg.seed, s as u64, tag::OUTPUT);
        let target = out_probs.as_ref().map(|p| sample_index(p, &mut orng));
        let mut picked: Option<StiefelPoint> = None;
        let anchor = x.clone();
        let mut xk = x.clone();
        for k in 0..inner_k {
            if target == Some(k) {
                picked = Some(xk.clone());
            }
            draw_batch(&mut brng, n, batch_size, &mut batch);
            let g = svrg_euclidean(problem, xk.matrix(), anchor.matrix(), &egrad, &batch);
            xk = descent_step(cfg.retraction, &xk, &g, cfg.rho, tau)?;
            ifo += 2 * batch_size as u64;
            ro += 1;
        }
        let x_r = match target {
            Some(t) if t >= inner_k => Some(xk.clone()),
            Some(_) => picked,
            None => None,
        };
        match cfg.output_mode {
            OutputMode::LastIterate => x = xk,
            OutputMode::SampledPsk => {
                // uniform choice among the X_r^s seen so far, one at a time
                if orng.random_range(0..=s) == 0 {
                    chosen = x_r;
                }
                x = xk;
            }
            OutputMode::SampledLinear { .. } => x = x_r.expect("theorem-1 mode draws an index each epoch"),
        }
        prev = Some((anchor.into_matrix(), rgrad));
        s += 1;
    };
    let out = match cfg.output_mode {
        OutputMode::SampledPsk => chosen.unwrap_or(x),
        _ => x,
    };
    Ok((out, RunTrace { records, status }))
}

/// Deterministic Riemannian gradient descent `X ← R(X, −τ grad f(X))`, one
/// record per iteration. BB steps use `K = 1`.
pub fn run_rgd(problem: &dyn FiniteSum, cfg: &SvrgConfig) -> Result<(StiefelPoint, RunTrace)> {
    cfg.validate()?;
    let x0 = warm_start(problem, cfg)?;
    run_rgd_from(problem, cfg, x0)
}

pub fn run_rgd_from(problem: &dyn FiniteSum, cfg: &SvrgConfig, x_start: StiefelPoint) -> Result<(StiefelPoint, RunTrace)> {
    cfg.validate()?;
    if matches!(cfg.step_mode, StepMode::Theorem1 { .. }) {
        return Err(OptimError::InvalidConfig("theorem-1 steps apply to S-SVRG only".into()));
    }
    let start = Instant::now();
    let n = problem.n_components() as u64;
    let mut records = Vec::new();
    let mut x = x_start;
    let mut prev: Option<(DenseMatrix, DenseMatrix)> = None;
    let (mut ifo, mut ro) = (0u64, 0u64);
    let mut s = 0usize;
    let status = loop {
        let (f, egrad) = problem.value_and_grad(x.matrix());
        check_finite(f, &egrad, s)?;
        let rgrad = d_rho_matrix(x.matrix(), &egrad, cfg.rho);
        let grad_norm = rgrad.norm();
        let tau = match (cfg.step_mode, &prev) {
            (StepMode::Fixed(t), _) => t,
            (StepMode::Bb { initial, .. }, None) => initial,
            (StepMode::Bb { tau_min, tau_max, .. }, Some((xp, gp))) => {
                bb_step(x.matrix(), xp, &rgrad, gp, 1, tau_min, tau_max, cfg.retraction)
            }
            (StepMode::Theorem1 { .. }, _) => unreachable!(),
        };
        records.push(EpochRecord {
            epoch: s,
            f,
            grad_norm,
            step_size: tau,
            ifo_calls: ifo,
            ro_calls: ro,
            seconds: start.elapsed().as_secs_f64(),
        });
        if grad_norm <= cfg.grad_tol {
            break TerminalStatus::GradTol;
        }
        if s >= cfg.max_epochs {
            break TerminalStatus::MaxEpochs;
        }
        let next = descent_step(cfg.retraction, &x, &egrad, cfg.rho, tau)?;
        ifo += n;
        ro += 1;
        prev = Some((x.into_matrix(), rgrad));
        x = next;
        s += 1;
    };
    Ok((x, RunTrace { records, status }))
}

/// Step size of the S-SGD theorem, `min{ν/L̂, D̃/(σ√N)}`.
pub fn sgd_step_size(nu: f64, l_hat: f64, tilde_d: f64, sigma: f64, n_steps: usize) -> f64 {
    let a = nu / l_hat;
    if sigma <= 0.0 {
        return a;
    }
    a.min(tilde_d / (sigma * (n_steps as f64).sqrt()))
}

/// Largest `‖D_ρ(X, ∇f_i(X)) − grad f(X)‖` over `probes` random components.
pub fn estimate_sigma(problem: &dyn FiniteSum, x: &StiefelPoint, rho: f64, probes: usize, rng: &mut StreamRng) -> f64 {
    let n = problem.n_components();
    let full = d_rho_matrix(x.matrix(), &problem.full_grad(x.matrix()), rho);
    (0..probes)
        .map(|_| {
            let i = rng.random_range(0..n);
            (d_rho_matrix(x.matrix(), &problem.component_grad(x.matrix(), i), rho) - &full).norm()
        })
        .fold(0.0, f64::max)
}

/// Result of an S-SGD run.
#[derive(Debug, Clone)]
pub struct SgdOutcome {
    pub x: StiefelPoint,
    /// The randomly drawn output index `j̄`.
    pub j_bar: usize,
    pub tau: f64,
    pub sigma: f64,
    pub trace: RunTrace,
}

/// S-SGD: draw `j̄` uniformly from `{0, …, N−1}`, take `j̄` single-sample
/// steps and return `X^{j̄}`. The trace has one record per `n` steps.
pub fn run_s_sgd(
    problem: &dyn FiniteSum,
    cfg: &SvrgConfig,
    n_steps: usize,
    tilde_d: f64,
    sigma: Option<f64>,
) -> Result<SgdOutcome> {
    cfg.validate()?;
    if n_steps == 0 {
        return Err(OptimError::InvalidConfig("S-SGD needs N >= 1".into()));
    }
    let start = Instant::now();
    let (d, r) = problem.dims();
    let n = problem.n_components();
    let x0 = warm_start(problem, cfg)?;
    let mut rng = rng::stream(cfg.seed, 0, tag::SGD);
    let j_bar = rng.random_range(0..n_steps);
    let sigma = match sigma {
        Some(s) => s,
        None => estimate_sigma(problem, &x0, cfg.rho, 100, &mut rng::stream(cfg.seed, 0, tag::PROBE)),
    };
    let tau = match cfg.step_mode {
        StepMode::Fixed(t) => t,
        _ => {
            let (l1, l2) = retraction_constants(cfg, d, r)?;
            let k = problem.constants();
            let l_hat = 2.0 * l2 * k.c + l1 * l1 * k.l;
            sgd_step_size(MetricParams::new(cfg.rho).nu, l_hat, tilde_d, sigma, n_steps)
        }
    };
    let (x, log) = sgd_steps(problem, &x0, j_bar, tau, cfg.retraction, cfg.rho, &mut rng, Some(n.max(1)))?;
    let records = log
        .iter()
        .enumerate()
        .map(|(e, &(j, f, g))| EpochRecord {
            epoch: e,
            f,
            grad_norm: g,
            step_size: tau,
            ifo_calls: j as u64,
            ro_calls: j as u64,
            seconds: start.elapsed().as_secs_f64(),
        })
        .collect::<Vec<_>>();
    let status = if records.last().is_some_and(|r| r.grad_norm <= cfg.grad_tol) {
        TerminalStatus::GradTol
    } else {
        TerminalStatus::MaxEpochs
    };
    Ok(SgdOutcome { x, j_bar, tau, sigma, trace: RunTrace { records, status } })
}

/// Outcome of the recursion-lemma check.
#[derive(Debug, Clone, PartialEq)]
pub struct RecursionCheck {
    pub f_k: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Build `f_{k+1} = f_k − c a_k + d b_k`, `b_{k+1} = b b_k + a a_k` with
/// `b_0 = 0` (the recursion met with equality), and compare `f_K` with
/// `f_0 − Σ Δ_k a_k`, `Δ_k = c − a d Γ(b, K−k)`.
pub fn recursion_lemma_check(a_seq: &[f64], f0: f64, a: f64, b: f64, c: f64, d: f64) -> RecursionCheck {
    let k = a_seq.len();
    let (mut f, mut bk) = (f0, 0.0);
    for &ak in a_seq {
        let f_next = f - c * ak + d * bk;
        bk = b * bk + a * ak;
        f = f_next;
    }
    let bound = f0 - (0..k).map(|j| (c - a * d * gamma(b, k - j)) * a_seq[j]).sum::<f64>();
    let scale = f0.abs() + a_seq.iter().sum::<f64>() * (c + a * d * gamma(b, k.max(1)));
    let holds = f <= bound + 1e-12 * scale.max(1.0);
    RecursionCheck { f_k: f, bound, holds }
}

/// `|f(X) − f_limit|^{1/2} / ‖grad f(X)‖` at each point; `None` where the
/// gradient norm is below `1e-12`.
pub fn loj_ratio_probe(problem: &dyn FiniteSum, points: &[StiefelPoint], rho: f64, f_limit: f64) -> Vec<Option<f64>> {
    points
        .iter()
        .map(|x| {
            let (f, g) = problem.value_and_grad(x.matrix());
            loj_ratio(f, d_rho_matrix(x.matrix(), &g, rho).norm(), f_limit)
        })
        .collect()
}

/// The same ratio from recorded `(f, ‖grad‖)` pairs.
pub fn loj_ratio_from_trace(trace: &RunTrace, f_limit: f64) -> Vec<Option<f64>> {
    trace.records.iter().map(|r| loj_ratio(r.f, r.grad_norm, f_limit)).collect()
}

fn loj_ratio(f: f64, grad_norm: f64, f_limit: f64) -> Option<f64> {
    let num = (f - f_limit).abs().sqrt();
    if num == 0.0 {
        return Some(0.0);
    }
    if grad_norm < 1e-12 {
        return None;
    }
    Some(num / grad_norm)
}

/// Least-squares slope and R² of `log(y)` against `x`.
pub fn log_linear_fit(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    let pts: Vec<(f64, f64)> = points.iter().filter(|p| p.1 > 0.0).map(|&(x, y)| (x, y.ln())).collect();
    if pts.len() < 3 {
        return None;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, sxy * sxy / (sxx * syy)))
}
