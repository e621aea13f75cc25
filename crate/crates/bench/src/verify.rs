//! The acceptance checks, shared by `bench verify` and the `acceptance` test
//! target. Each returns one pass/fail report.

use crate::config::{ExperimentSpec, InnerK, Method, ProblemKind, StepSpec};
use crate::experiment::{run_experiment, ExperimentResult};
use crate::output;
use rand::Rng;
use std::fmt;
use std::time::Instant;
use stiefel_svrg::manifold::{random_tangent, riemannian_grad};
use stiefel_svrg::optimizers::{
    self, loj_ratio_from_trace, log_linear_fit, recursion_lemma_check, sgd_steps, sgd_step_size, theorem1_schedule,
};
use stiefel_svrg::oracles::{brute_force_expectation, fd_retraction_derivative, FiniteDiffSpec};
use stiefel_svrg::retraction::{self, apply, declared_derivative, estimate_l1_l2, RetractionKind};
use stiefel_svrg::rng::{self, gaussian_matrix};
use stiefel_svrg::{
    FiniteSum, JdPhi, McInstance, MetricParams, PcaInstance, StepMode, StiefelPoint, SvrgConfig, TangentSpace,
};

const VERIFY_TAG: u64 = 0x7665_7269;

#[derive(Debug, Clone)]
pub struct CriterionReport {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for CriterionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "criterion {:>2} [{}] {}: {} ({:.1} s)",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail,
            self.seconds
        )
    }
}

fn timed(id: u32, name: &'static str, limit: Option<f64>, body: impl FnOnce() -> (bool, String)) -> CriterionReport {
    let start = Instant::now();
    let (mut passed, mut detail) = body();
    let seconds = start.elapsed().as_secs_f64();
    if let Some(l) = limit {
        if seconds >= l {
            passed = false;
            detail.push_str(&format!("; runtime {seconds:.1} s exceeds {l} s"));
        }
    }
    CriterionReport { id, name, passed, detail, seconds }
}

/// Direction fed to `apply`: a tangent (horizontal for exp2) scaled into
/// `[0.5, 2)`, or a Euclidean gradient for gp/gr.
fn probe_direction(rng: &mut impl Rng, kind: RetractionKind, x: &StiefelPoint) -> stiefel_svrg::DenseMatrix {
    let scale = rng.random_range(0.5..2.0);
    if kind.is_gradient_coupled() {
        let g = gaussian_matrix(rng, x.d(), x.r());
        let n = g.norm();
        return g * (scale / n);
    }
    let space = if kind == RetractionKind::Exp2 { TangentSpace::GrassmannHorizontal } else { TangentSpace::StiefelTangent };
    random_tangent(rng, x, space).into_matrix() * scale
}

pub fn criterion1(cases: usize) -> CriterionReport {
    timed(1, "retraction axioms", Some(30.0), || {
        let ts = [0.01, 0.1, 1.0, 10.0];
        let spec = FiniteDiffSpec::default();
        let mut ok = true;
        let mut worst = (0.0_f64, 0.0_f64, 0.0_f64);
        let mut notes = Vec::new();
        for (ki, kind) in RetractionKind::ALL.into_iter().enumerate() {
            let mut g = rng::stream(1, ki as u64, VERIFY_TAG);
            for case in 0..cases {
                let x = StiefelPoint::random(&mut g, 50, 5);
                let dir = probe_direction(&mut g, kind, &x);
                let t = ts[case % ts.len()];
                let run = || -> Result<(f64, f64, f64), String> {
                    let y0 = apply(kind, &x, &dir, 0.0).map_err(|e| e.to_string())?;
                    let yt = apply(kind, &x, &dir, t).map_err(|e| e.to_string())?;
                    let fd = fd_retraction_derivative(kind, &x, &dir, &spec).map_err(|e| e.to_string())?;
                    let declared = declared_derivative(kind, x.matrix(), &dir);
                    Ok(((y0.matrix() - x.matrix()).norm(), yt.feasibility_error(), spec.relative_error(&fd, &declared)))
                };
                match run() {
                    Ok((e0, feas, rel)) => {
                        worst = (worst.0.max(e0), worst.1.max(feas), worst.2.max(rel));
                        if e0 > 1e-12 || feas > 1e-10 || rel > spec.rel_tol {
                            ok = false;
                            notes.push(format!("{kind} case {case}: R(0) {e0:.1e}, feas {feas:.1e}, fd {rel:.1e}"));
                        }
                    }
                    Err(e) => {
                        ok = false;
                        notes.push(format!("{kind} case {case}: {e}"));
                    }
                }
            }
        }
        let mut detail = format!(
            "8 kinds x {cases} cases; max |R(0)-X| {:.1e}, max feasibility {:.1e}, max fd rel {:.1e}",
            worst.0, worst.1, worst.2
        );
        if let Some(n) = notes.first() {
            detail.push_str(&format!("; first failure {n} ({} total)", notes.len()));
        }
        (ok, detail)
    })
}

pub fn criterion2(trials: usize) -> CriterionReport {
    timed(2, "pd/qr bound constants", Some(60.0), || {
        let mut ok = true;
        let mut parts = Vec::new();
        for (kind, seed) in [(RetractionKind::Pd, 21), (RetractionKind::Qr, 22)] {
            let (c1, c2) = retraction::certified_constants(kind).unwrap();
            match estimate_l1_l2(kind, trials, 50, 5, seed) {
                Ok((l1, l2)) => {
                    ok &= l1 <= c1 + 1e-8 && l2 <= c2 + 1e-8;
                    parts.push(format!("{kind}: L1 {l1:.6} <= {c1:.6}, L2 {l2:.6} <= {c2:.6}"));
                }
                Err(e) => {
                    ok = false;
                    parts.push(format!("{kind}: {e}"));
                }
            }
        }
        (ok, format!("{trials} trials; {}", parts.join("; ")))
    })
}

pub fn criterion3(cases: usize) -> CriterionReport {
    timed(3, "wy = jd with linear phi", None, || {
        let mut g = rng::stream(3, 0, VERIFY_TAG);
        let mut worst = 0.0_f64;
        for _ in 0..cases {
            let x = StiefelPoint::random(&mut g, 50, 5);
            let e = probe_direction(&mut g, RetractionKind::Wy, &x);
            let t = 5.0 * (1.0 - g.random::<f64>());
            let a = apply(RetractionKind::Wy, &x, &e, t);
            let b = apply(RetractionKind::Jd(JdPhi::Linear), &x, &e, t);
            match (a, b) {
                (Ok(a), Ok(b)) => worst = worst.max((a.matrix() - b.matrix()).norm()),
                _ => worst = f64::INFINITY,
            }
        }
        (worst <= 1e-10, format!("{cases} cases, max deviation {worst:.2e}"))
    })
}

pub fn criterion4(pairs: usize) -> CriterionReport {
    timed(4, "unbiasedness and variance by enumeration", None, || {
        let p = PcaInstance::generate(10, 6, 2, 4).expect("small PCA instance");
        let l = p.constants().l;
        let mut g = rng::stream(4, 0, VERIFY_TAG);
        let (mut worst_mean, mut worst_ratio) = (0.0_f64, 0.0_f64);
        for rho in [0.0, 0.25, 1.0] {
            let nu = MetricParams::new(rho).nu;
            for bs in [1usize, 2] {
                for _ in 0..pairs {
                    let xk = StiefelPoint::random(&mut g, 10, 2);
                    let x0 = StiefelPoint::random(&mut g, 10, 2);
                    let (mean, second) = match brute_force_expectation(&p, xk.matrix(), x0.matrix(), bs, rho) {
                        Ok(v) => v,
                        Err(e) => return (false, e.to_string()),
                    };
                    let grad = riemannian_grad(&xk, &p.full_grad(xk.matrix()), rho).into_matrix();
                    worst_mean = worst_mean.max((mean - grad).norm());
                    let bound = l * l / (nu * nu * bs as f64) * (xk.matrix() - x0.matrix()).norm_squared();
                    worst_ratio = worst_ratio.max(second / bound);
                }
            }
        }
        (
            worst_mean <= 1e-12 && worst_ratio <= 1.0,
            format!("max |E G - grad| {worst_mean:.1e}, max variance/bound {worst_ratio:.3}"),
        )
    })
}

pub fn criterion5(instances: usize) -> CriterionReport {
    timed(5, "recursion lemma", None, || {
        let mut g = rng::stream(5, 0, VERIFY_TAG);
        let mut violations = 0;
        for _ in 0..instances {
            let k = g.random_range(1..=50);
            let a_seq: Vec<f64> = (0..k).map(|_| g.random_range(0.0..3.0)).collect();
            let (a, b, c, d) = (g.random_range(0.0..2.0), g.random_range(1e-3..2.0), g.random_range(0.0..2.0), g.random_range(0.0..2.0));
            if !recursion_lemma_check(&a_seq, g.random_range(-10.0..10.0), a, b, c, d).holds {
                violations += 1;
            }
        }
        // K = 2 by hand: f_2 = f_0 − c a_0 − c a_1 + d (a a_0)
        let mut exact = true;
        for _ in 0..100 {
            let (a, b, c, d) = (g.random::<f64>(), g.random_range(1e-3..1.0), g.random::<f64>(), g.random::<f64>());
            let (a0, a1, f0) = (g.random::<f64>(), g.random::<f64>(), g.random::<f64>());
            let chk = recursion_lemma_check(&[a0, a1], f0, a, b, c, d);
            let closed = f0 - c * a0 - c * a1 + d * (a * a0);
            exact &= chk.f_k == closed && chk.holds && (chk.bound - closed).abs() <= 1e-15 * (1.0 + closed.abs());
        }
        (
            violations == 0 && exact,
            format!("{violations} violations in {instances} instances; K = 2 closed form exact: {exact}"),
        )
    })
}

pub fn criterion6(sets: usize) -> CriterionReport {
    timed(6, "theorem-1 schedule", None, || {
        let mut notes = Vec::new();
        let mut ok = true;
        match theorem1_schedule(1000, 0.0, 1.0, 2.0, 2.0 * 5f64.sqrt(), 1.0, 0.5, 5, 1.0) {
            Ok(s) => {
                let slack = (s.c_condition(2.0) - 1.0).abs();
                ok &= s.k == 10 && s.batch == 100 && slack <= 1e-6;
                notes.push(format!("(1000,0,1): K {} |B| {} c {:.6} slack {slack:.1e}", s.k, s.batch, s.c));
            }
            Err(e) => {
                ok = false;
                notes.push(e.to_string());
            }
        }
        let mut g = rng::stream(6, 0, VERIFY_TAG);
        let (mut done, mut worst, mut worst_slack) = (0, f64::INFINITY, 0.0_f64);
        while done < sets {
            let l1 = g.random_range(1.0..2.0);
            let l2 = g.random_range(0.0..2.0);
            let r = g.random_range(1..=10usize);
            let l = g.random_range(0.1..100.0);
            let c_bound = g.random_range(0.0..2.0) * l;
            let l_tilde = l1 * l1 + 4.0 * l2 * (r as f64).sqrt();
            let ratio = (2.0 * l2 * c_bound + l1 * l1 * l) / (l_tilde.sqrt() * l);
            if ratio > 1.0 {
                continue;
            }
            done += 1;
            let n = g.random_range(10..100_000usize);
            let mu = g.random_range(0.0..=2.0 / 3.0);
            let kappa = g.random_range(0.1..10.0);
            let nu = MetricParams::new(g.random_range(0.0..2.0)).nu;
            match theorem1_schedule(n, mu, kappa, l, c_bound, l1, l2, r, nu) {
                Ok(s) => {
                    let min = s.delta.iter().cloned().fold(f64::INFINITY, f64::min);
                    worst = worst.min(min / (0.5 * nu * s.tau));
                    if s.c < 1.0 - 1e-9 {
                        worst_slack = worst_slack.max((s.c_condition(l) - 1.0).abs());
                    }
                }
                Err(e) => {
                    ok = false;
                    notes.push(format!("set {done}: {e}"));
                }
            }
        }
        ok &= worst >= 1.0 && worst_slack <= 1e-6;
        notes.push(format!("{sets} sets: min Delta/(nu tau/2) {worst:.4}, max c slack {worst_slack:.1e}"));
        (ok, notes.join("; "))
    })
}

/// The seven retractions of the PCA experiments.
pub const PCA_KINDS: [RetractionKind; 7] = [
    RetractionKind::Qr,
    RetractionKind::Pd,
    RetractionKind::Wy,
    RetractionKind::Jd(JdPhi::Linear),
    RetractionKind::Gp,
    RetractionKind::Exp1,
    RetractionKind::Gr,
];

pub fn desk_pca_spec(kind: RetractionKind, runs: usize) -> ExperimentSpec {
    ExperimentSpec {
        problem: ProblemKind::Pca,
        method: Method::SSvrgBb,
        retraction: kind,
        d: 200,
        n: 2000,
        r: 5,
        rho: 0.0,
        step: StepSpec::Bb,
        runs,
        seed: 0,
        ..ExperimentSpec::default()
    }
}

/// Relative errors `(f − f*)/|f*|` at or below `1e-3`, against epoch.
pub fn tail_points(res: &ExperimentResult, run: usize) -> Vec<(f64, f64)> {
    let tr = &res.runs[run].result.as_ref().unwrap().trace;
    tr.records
        .iter()
        .map(|r| (r.epoch as f64, (r.f - res.f_star) / res.f_star.abs()))
        .filter(|&(_, e)| e <= 1e-3)
        .collect()
}

pub type PcaResults = Vec<(RetractionKind, ExperimentResult)>;

pub fn criterion7(runs: usize) -> (CriterionReport, PcaResults) {
    let mut results = Vec::new();
    let report = timed(7, "desk-scale PCA with S-SVRG-BB", Some(300.0), || {
        let mut ok = true;
        let mut parts = Vec::new();
        for kind in PCA_KINDS {
            let res = match run_experiment(&desk_pca_spec(kind, runs)) {
                Ok(r) => r,
                Err(e) => return (false, e.to_string()),
            };
            let s = &res.summary;
            let all_conv = s.converged == runs && res.runs.iter().all(|r| r.result.as_ref().is_ok_and(|x| x.trace.last().epoch <= 200));
            let mut fits_ok = true;
            let mut min_r2 = f64::INFINITY;
            for i in 0..runs {
                match log_linear_fit(&tail_points(&res, i)) {
                    Some((slope, r2)) => {
                        fits_ok &= slope < 0.0 && r2 >= 0.9;
                        min_r2 = min_r2.min(r2);
                    }
                    None => fits_ok = false,
                }
            }
            let kind_ok = all_conv && s.err_bar <= 1e-8 && fits_ok;
            ok &= kind_ok;
            parts.push(format!(
                "{kind}: {}/{runs} conv, epochs {}/{:.1}/{}, err {}, min R2 {min_r2:.3}",
                s.converged,
                s.epoch_min,
                s.epoch_avg,
                s.epoch_max,
                output::fmt_sci1(s.err_bar)
            ));
            results.push((kind, res));
        }
        let (sgd_ok, sgd_note) = sgd_trend();
        ok &= sgd_ok;
        parts.push(sgd_note);
        (ok, parts.join("; "))
    });
    (report, results)
}

/// S-SGD on the desk-scale PCA instance with the theorem's step size:
/// the mean objective over the last quarter of data passes is below the
/// mean over the first quarter.
pub fn sgd_trend() -> (bool, String) {
    let p = PcaInstance::generate(200, 2000, 5, 0).expect("PCA instance");
    let (f_star, _) = p.optimum();
    let kind = RetractionKind::Pd;
    let cfg = SvrgConfig::new(kind, StepMode::Fixed(0.0), 500, 1, 0);
    let x0 = match optimizers::warm_start(&p, &cfg) {
        Ok(x) => x,
        Err(e) => return (false, e.to_string()),
    };
    let passes = 20;
    let n_steps = passes * p.n_components();
    let sigma = optimizers::estimate_sigma(&p, &x0, 0.0, 100, &mut rng::stream(0, 0, rng::tag::PROBE));
    let (l1, l2) = retraction::certified_constants(kind).unwrap();
    let k = p.constants();
    let tau = sgd_step_size(1.0, 2.0 * l2 * k.c + l1 * l1 * k.l, p.value(x0.matrix()) - f_star, sigma, n_steps);
    let mut g = rng::stream(0, 0, rng::tag::SGD);
    match sgd_steps(&p, &x0, n_steps, tau, kind, 0.0, &mut g, Some(p.n_components())) {
        Ok((_, log)) => {
            let q = (log.len() / 4).max(1);
            let mean = |s: &[(usize, f64, f64)]| s.iter().map(|e| e.1 - f_star).sum::<f64>() / s.len() as f64;
            let (first, last) = (mean(&log[..q]), mean(&log[log.len() - q..]));
            (last < first, format!("S-SGD f-f* first quarter {first:.2e} -> last quarter {last:.2e}"))
        }
        Err(e) => (false, e.to_string()),
    }
}

/// Spot check at the larger scale; `runs` seeds.
pub fn criterion8(runs: usize) -> CriterionReport {
    timed(8, "large-scale PCA spot check", None, || {
        let spec = ExperimentSpec {
            problem: ProblemKind::Pca,
            method: Method::SSvrg,
            retraction: RetractionKind::Pd,
            d: 1000,
            n: 10000,
            r: 10,
            rho: 0.0,
            step: StepSpec::Fixed(1.2),
            batch_frac: 0.01,
            inner_k: InnerK::Auto,
            runs,
            ..ExperimentSpec::default()
        };
        match run_experiment(&spec) {
            Ok(res) => {
                let s = res.summary;
                let ok = s.converged == runs && (30.0..=90.0).contains(&s.epoch_avg);
                (ok, format!("{runs} runs, {} converged, epochs {}/{:.1}/{}", s.converged, s.epoch_min, s.epoch_avg, s.epoch_max))
            }
            Err(e) => (false, e.to_string()),
        }
    })
}

pub fn criterion9(seeds: usize) -> CriterionReport {
    timed(9, "desk-scale matrix completion recovery", Some(300.0), || {
        let kind = RetractionKind::Jd(JdPhi::Linear);
        let mut good = 0;
        let mut notes = Vec::new();
        let (mut worst_f, mut worst_rec) = (0.0_f64, 0.0_f64);
        for seed in 0..seeds as u64 {
            let inst = match McInstance::generate(200, 400, 5, 10.0, seed) {
                Ok(m) => m,
                Err(e) => return (false, e.to_string()),
            };
            if inst.n_observed() != 14_875 {
                return (false, format!("|Omega| = {}", inst.n_observed()));
            }
            let k = inst.estimate_constants(200, seed);
            let inst = inst.with_constants(k);
            let mut cfg = SvrgConfig::new(kind, StepMode::bb_default(), 500, 4, seed);
            cfg.rho = 0.0;
            match optimizers::run_s_svrg(&inst, &cfg) {
                Ok((x, tr)) => {
                    let f = tr.last().f;
                    let rec = inst.recovery_error(x.matrix()).unwrap_or(f64::INFINITY);
                    worst_f = worst_f.max(f);
                    worst_rec = worst_rec.max(rec);
                    if f <= 1e-10 && rec <= 1e-4 {
                        good += 1;
                    } else {
                        notes.push(format!("seed {seed}: f {f:.1e}, rec {rec:.1e}, {:?}", tr.status));
                    }
                }
                Err(e) => notes.push(format!("seed {seed}: {e}")),
            }
        }
        let mut detail = format!("{good}/{seeds} recovered; worst f {worst_f:.1e}, worst recovery {worst_rec:.1e}");
        if !notes.is_empty() {
            detail.push_str(&format!("; {}", notes.join(", ")));
        }
        (good * 10 >= seeds * 9, detail)
    })
}

fn numeric_columns(rows: &[output::TraceRow]) -> Vec<[u64; 7]> {
    rows.iter()
        .map(|r| {
            [r.run_id as u64, r.epoch as u64, r.f.to_bits(), r.grad_norm.to_bits(), r.step_size.to_bits(), r.ifo_calls, r.ro_calls]
        })
        .collect()
}

pub fn criterion10() -> CriterionReport {
    timed(10, "determinism", None, || {
        let dir = std::env::temp_dir().join(format!("stiefel-verify-{}", std::process::id()));
        let specs = [
            ExperimentSpec { d: 50, n: 500, r: 3, runs: 3, max_epochs: 30, ..ExperimentSpec::default() },
            ExperimentSpec {
                problem: ProblemKind::Mc,
                retraction: RetractionKind::Qr,
                d: 40,
                n: 60,
                r: 2,
                runs: 2,
                max_epochs: 10,
                ..ExperimentSpec::default()
            },
            ExperimentSpec {
                method: Method::SSvrg,
                step: StepSpec::Thm1 { mu: 0.0, kappa: 1.0 },
                retraction: RetractionKind::Gr,
                d: 30,
                n: 300,
                r: 2,
                runs: 2,
                max_epochs: 10,
                ..ExperimentSpec::default()
            },
        ];
        let mut ok = true;
        let mut checked = 0;
        for (i, base) in specs.iter().enumerate() {
            let sub = dir.join(format!("spec{i}"));
            let spec = ExperimentSpec { out: Some(sub.clone()), ..base.clone() };
            let (a, b) = match (run_experiment(&spec), run_experiment(base)) {
                (Ok(a), Ok(b)) => (a, b),
                (Err(e), _) | (_, Err(e)) => return (false, e.to_string()),
            };
            for (ra, rb) in a.runs.iter().zip(&b.runs) {
                match (&ra.result, &rb.result) {
                    (Ok(x), Ok(y)) => ok &= x.trace.same_numerics(&y.trace) && x.x == y.x,
                    _ => ok = false,
                }
            }
            // rebuild the experiment from a trace header and compare the CSV columns
            let (header, rows) = match output::read_trace(&sub.join("trace_run000.csv")) {
                Ok(v) => v,
                Err(e) => return (false, e.to_string()),
            };
            let replay = header.spec().map_err(|e| e.to_string()).and_then(|s| {
                let s = ExperimentSpec { runs: 1, ..s };
                run_experiment(&s).map_err(|e| e.to_string())
            });
            match replay {
                Ok(r) => {
                    let trace = &r.runs[0].result.as_ref().unwrap().trace;
                    ok &= numeric_columns(&output::trace_rows(0, trace)) == numeric_columns(&rows);
                    ok &= header.get("config_hash") == Some(base.config_hash().as_str());
                }
                Err(e) => return (false, e),
            }
            checked += a.runs.len();
        }
        let _ = std::fs::remove_dir_all(&dir);
        (ok, format!("{checked} runs over {} configurations re-run bit-identically, CSV header replay identical", specs.len()))
    })
}

/// Over the last 20 records of every criterion-7 run the ratio
/// `|f − f*|^{1/2}/‖grad f‖` must be finite and at most `LOJ_CAP`.
pub const LOJ_CAP: f64 = 1e3;

pub fn criterion11(results: &PcaResults) -> CriterionReport {
    timed(11, "Lojasiewicz ratio probe", None, || {
        if results.is_empty() {
            return (false, "no criterion-7 runs available".into());
        }
        let mut ok = true;
        let mut worst = 0.0_f64;
        let mut count = 0;
        for (_, res) in results {
            for run in &res.runs {
                let Ok(r) = &run.result else {
                    ok = false;
                    continue;
                };
                let ratios = loj_ratio_from_trace(&r.trace, res.f_star);
                let tail = &ratios[ratios.len().saturating_sub(20)..];
                for v in tail {
                    match v {
                        Some(x) if x.is_finite() => worst = worst.max(*x),
                        _ => ok = false,
                    }
                }
                count += 1;
            }
        }
        ok &= worst <= LOJ_CAP;
        (ok, format!("{count} runs, max ratio over last 20 epochs {worst:.3} (cap {LOJ_CAP})"))
    })
}

/// Fast criteria: 1–6 and 10.
pub fn quick_suite() -> Vec<CriterionReport> {
    vec![
        criterion1(500),
        criterion2(10_000),
        criterion3(200),
        criterion4(20),
        criterion5(1000),
        criterion6(50),
        criterion10(),
    ]
}

/// Criteria 7, 9 and 11.
pub fn experiment_suite(runs: usize) -> Vec<CriterionReport> {
    let (c7, results) = criterion7(runs);
    let c11 = criterion11(&results);
    vec![c7, criterion9(runs), c11]
}
