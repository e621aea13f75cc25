//! Multi-seed experiment runner and step-size grid search.

use crate::config::{ConfigError, ExperimentSpec, Method, ProblemKind, StepSpec};
use crate::output::{self, SummaryRow};
use rayon::prelude::*;
use std::path::Path;
use stiefel_svrg::optimizers::{self, OptimError};
use stiefel_svrg::problems::{self, ProblemError};
use stiefel_svrg::{FiniteSum, McInstance, PcaInstance, RunTrace, StiefelPoint, SvrgConfig, TerminalStatus};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("output: {0}")]
    Output(String),
    #[error("no step size in the grid converged on every run")]
    NoConvergentTau,
    #[error("grid search needs a fixed-step method and a nonempty grid")]
    BadGrid,
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

pub enum Instance {
    Pca(PcaInstance),
    Mc(McInstance),
}

impl Instance {
    pub fn as_dyn(&self) -> &dyn FiniteSum {
        match self {
            Instance::Pca(p) => p,
            Instance::Mc(m) => m,
        }
    }

    /// Optimal value used for the relative error: the eigen oracle for PCA,
    /// zero for matrix completion.
    pub fn f_star(&self) -> f64 {
        match self {
            Instance::Pca(p) => p.optimum().0,
            Instance::Mc(_) => 0.0,
        }
    }

    /// `(f − f*)/|f*|` for PCA; the objective itself for MC, whose optimum is zero.
    pub fn error(&self, f: f64, f_star: f64) -> f64 {
        match self {
            Instance::Pca(_) => (f - f_star) / f_star.abs(),
            Instance::Mc(_) => f,
        }
    }
}

/// Data comes from the base seed; run `i` uses seed `base + i`.
pub fn build_instance(spec: &ExperimentSpec) -> Result<Instance> {
    Ok(match (spec.problem, &spec.data) {
        (ProblemKind::Pca, None) => Instance::Pca(PcaInstance::generate(spec.d, spec.n, spec.r, spec.seed)?),
        (ProblemKind::Pca, Some(path)) => {
            let a = if path.extension().is_some_and(|e| e == "csv") {
                problems::read_pca_csv(path)?
            } else {
                problems::read_pca_binary(path)?
            };
            Instance::Pca(PcaInstance::from_data(&a, spec.r)?)
        }
        (ProblemKind::Mc, None) => {
            let m = McInstance::generate(spec.d, spec.n, spec.r, spec.cond, spec.seed)?;
            let k = m.estimate_constants(200, spec.seed);
            Instance::Mc(m.with_constants(k))
        }
        (ProblemKind::Mc, Some(path)) => {
            let m = problems::read_mc_triples(path, spec.d, spec.n, spec.r)?;
            let k = m.estimate_constants(200, spec.seed);
            Instance::Mc(m.with_constants(k))
        }
    })
}

pub fn svrg_config(spec: &ExperimentSpec, run: usize) -> SvrgConfig {
    let mut cfg = SvrgConfig::new(
        spec.retraction,
        spec.step.to_mode(),
        spec.inner_iterations(),
        spec.batch(),
        spec.seed.wrapping_add(run as u64),
    );
    cfg.rho = spec.rho;
    cfg.max_epochs = spec.max_epochs;
    cfg.grad_tol = spec.grad_tol;
    cfg
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub trace: RunTrace,
    pub x: StiefelPoint,
    pub error: f64,
    /// MC only: `‖XA − M_true‖_F/‖M_true‖_F`.
    pub recovery: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run_id: usize,
    pub seed: u64,
    pub result: std::result::Result<RunResult, OptimError>,
}

impl RunOutcome {
    pub fn converged(&self) -> bool {
        self.result.as_ref().is_ok_and(|r| r.trace.status == TerminalStatus::GradTol)
    }
}

pub struct ExperimentResult {
    pub summary: SummaryRow,
    pub runs: Vec<RunOutcome>,
    pub f_star: f64,
}

fn run_one(spec: &ExperimentSpec, inst: &Instance, f_star: f64, run: usize) -> RunOutcome {
    let cfg = svrg_config(spec, run);
    let problem = inst.as_dyn();
    let result = match spec.method {
        Method::SSvrg | Method::SSvrgBb => optimizers::run_s_svrg(problem, &cfg),
        Method::Rgd => optimizers::run_rgd(problem, &cfg),
        Method::SSgd => {
            let budget = spec.max_epochs.max(1) * problem.n_components();
            optimizers::run_s_sgd(problem, &cfg, budget, 1.0, None).map(|o| (o.x, o.trace))
        }
    }
    .map(|(x, trace)| {
        let error = inst.error(trace.last().f, f_star);
        let recovery = match inst {
            Instance::Mc(m) => m.recovery_error(x.matrix()),
            Instance::Pca(_) => None,
        };
        RunResult { trace, x, error, recovery }
    });
    RunOutcome { run_id: run, seed: cfg.seed, result }
}

/// Run every seed, aggregate, and write traces when `spec.out` is set.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    let inst = build_instance(spec)?;
    let f_star = inst.f_star();
    let runs: Vec<RunOutcome> = (0..spec.runs).into_par_iter().map(|i| run_one(spec, &inst, f_star, i)).collect();
    for r in &runs {
        if let Err(e) = &r.result {
            log::warn!("run {} (seed {}) failed: {e}", r.run_id, r.seed);
        }
    }
    let summary = SummaryRow::from_runs(spec.method.name(), &spec.retraction.to_string(), None, spec.runs, &runs);
    if let Some(dir) = &spec.out {
        write_outputs(dir, spec, f_star, &runs, &summary)?;
    }
    Ok(ExperimentResult { summary, runs, f_star })
}

fn write_outputs(dir: &Path, spec: &ExperimentSpec, f_star: f64, runs: &[RunOutcome], summary: &SummaryRow) -> Result<()> {
    let err = |e: std::io::Error| ExperimentError::Output(e.to_string());
    std::fs::create_dir_all(dir).map_err(err)?;
    let header = output::Header::new(spec, f_star);
    for r in runs {
        if let Ok(res) = &r.result {
            output::write_trace(&dir.join(format!("trace_run{:03}.csv", r.run_id)), &header, r.run_id, &res.trace)
                .map_err(err)?;
        }
    }
    output::write_runs(&dir.join("runs.csv"), &header, runs).map_err(err)?;
    output::write_summary(&dir.join("summary.csv"), &header, std::slice::from_ref(summary)).map_err(err)?;
    Ok(())
}

/// Best fixed step from `grid`: fewest average epochs among step sizes for
/// which every run converged, ties toward the smaller step.
pub fn grid_tune(spec: &ExperimentSpec, grid: &[f64]) -> Result<(f64, SummaryRow)> {
    if grid.is_empty() || spec.method == Method::SSvrgBb {
        return Err(ExperimentError::BadGrid);
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut best: Option<(f64, SummaryRow)> = None;
    for tau in sorted {
        let mut s = spec.clone();
        s.step = StepSpec::Fixed(tau);
        s.out = spec.out.as_ref().map(|o| o.join(format!("tau_{tau}")));
        let res = run_experiment(&s)?;
        if res.summary.converged != res.summary.runs {
            continue;
        }
        let better = match &best {
            None => true,
            Some((_, row)) => res.summary.epoch_avg < row.epoch_avg,
        };
        if better {
            best = Some((tau, res.summary));
        }
    }
    let (tau, mut row) = best.ok_or(ExperimentError::NoConvergentTau)?;
    row.tau_star = Some(tau);
    if let Some(dir) = &spec.out {
        let mut s = spec.clone();
        s.step = StepSpec::Fixed(tau);
        let header = output::Header::new(&s, f64::NAN);
        output::write_summary(&dir.join("tuned.csv"), &header, std::slice::from_ref(&row))
            .map_err(|e| ExperimentError::Output(e.to_string()))?;
    }
    Ok((tau, row))
}
