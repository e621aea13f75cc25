use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use stiefel_svrg_bench::config::ExperimentSpec;
use stiefel_svrg_bench::experiment::{grid_tune, run_experiment};
use stiefel_svrg_bench::output::{emit_table, Header};
use stiefel_svrg_bench::verify;

#[derive(Parser)]
#[command(name = "bench", version, about = "Multi-seed S-SVRG experiments on PCA and matrix completion")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment and print its summary row.
    Run(ExpArgs),
    /// Pick the fixed step size with the fewest average epochs.
    Tune {
        #[command(flatten)]
        exp: ExpArgs,
        /// Comma-separated step sizes.
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<f64>,
    },
    /// Run the oracle and property checks.
    Verify {
        /// Also run the desk-scale PCA and matrix-completion experiments.
        #[arg(long)]
        full: bool,
        /// Also run the large PCA spot check with this many seeds.
        #[arg(long)]
        large_scale: Option<usize>,
    },
}

#[derive(Args)]
struct ExpArgs {
    /// key=value file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    retraction: Option<String>,
    #[arg(long)]
    d: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    r: Option<String>,
    #[arg(long)]
    rho: Option<String>,
    /// fixed:<tau> | bb | thm1:<mu>,<kappa>
    #[arg(long)]
    step: Option<String>,
    #[arg(long)]
    batch_frac: Option<String>,
    /// <count> | auto
    #[arg(long)]
    inner_k: Option<String>,
    #[arg(long)]
    max_epochs: Option<String>,
    #[arg(long)]
    grad_tol: Option<String>,
    #[arg(long)]
    runs: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    cond: Option<String>,
    /// PCA data (.csv or binary) or MC triples.
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    out: Option<String>,
}

impl ExpArgs {
    fn spec(&self) -> Result<ExperimentSpec, String> {
        let mut spec = ExperimentSpec::default();
        if let Some(path) = &self.config {
            spec.apply_file(path).map_err(|e| e.to_string())?;
        }
        let flags = [
            ("problem", &self.problem),
            ("method", &self.method),
            ("retraction", &self.retraction),
            ("d", &self.d),
            ("n", &self.n),
            ("r", &self.r),
            ("rho", &self.rho),
            ("step", &self.step),
            ("batch-frac", &self.batch_frac),
            ("inner-k", &self.inner_k),
            ("max-epochs", &self.max_epochs),
            ("grad-tol", &self.grad_tol),
            ("runs", &self.runs),
            ("seed", &self.seed),
            ("cond", &self.cond),
            ("data", &self.data),
            ("out", &self.out),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                spec.set(k, v).map_err(|e| e.to_string())?;
            }
        }
        Ok(spec)
    }
}

fn print_table(spec: &ExperimentSpec, row: stiefel_svrg_bench::output::SummaryRow, f_star: f64) {
    let (text, _) = emit_table(std::slice::from_ref(&row), &Header::new(spec, f_star));
    print!("{text}");
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run(args) => args.spec().and_then(|spec| {
            let res = run_experiment(&spec).map_err(|e| e.to_string())?;
            print_table(&spec, res.summary, res.f_star);
            Ok(true)
        }),
        Cmd::Tune { exp, grid } => exp.spec().and_then(|spec| {
            let (tau, row) = grid_tune(&spec, &grid).map_err(|e| e.to_string())?;
            println!("tau* = {tau}");
            print_table(&spec, row, f64::NAN);
            Ok(true)
        }),
        Cmd::Verify { full, large_scale } => {
            let mut reports = verify::quick_suite();
            if full {
                reports.extend(verify::experiment_suite(20));
            }
            if let Some(runs) = large_scale {
                reports.push(verify::criterion8(runs));
            }
            for r in &reports {
                println!("{r}");
            }
            Ok(reports.iter().all(|r| r.passed))
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
