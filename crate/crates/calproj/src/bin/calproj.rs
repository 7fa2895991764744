//! Command-line front door: simulation, critical levels, confidence
//! intervals, the rho heuristic, and Monte Carlo experiments.

use calproj::critical::{critical_level, rho_from_eta, CriticalParams, Projection};
use calproj::eam::{confidence_interval, CiMode, CiOptions, EamOptions};
use calproj::entry::EntryDgp;
use calproj::gms::{GmsConfig, GmsKind};
use calproj::harness::{run_monte_carlo, write_results_csv, ExperimentConfig, ModelConfig};
use calproj::moment::{Evaluator, MomentModel};
use calproj::Dataset;
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "calproj",
    about = "Calibrated-projection confidence intervals for moment (in)equality models",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GmsArg {
    Phi1,
    Phi2,
    Phi3,
    Phi4,
}

impl GmsArg {
    fn kind(self) -> GmsKind {
        match self {
            GmsArg::Phi1 => GmsKind::Phi1Hard,
            GmsArg::Phi2 => GmsKind::Phi2,
            GmsArg::Phi3 => GmsKind::Phi3,
            GmsArg::Phi4 => GmsKind::Phi4,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Calibrated,
    Onesided,
    AsProj,
}

impl ModeArg {
    fn mode(self) -> CiMode {
        match self {
            ModeArg::Calibrated => CiMode::Calibrated,
            ModeArg::Onesided => CiMode::OneSided,
            ModeArg::AsProj => CiMode::AsProj,
        }
    }
}

/// Flags shared by `ci` and `chat`.
#[derive(Args)]
struct ProblemArgs {
    /// Built-in model name (set1, set2-dgp1, set2-dgp2, set2-dgp3,
    /// scalar-mean) or a model TOML file.
    #[arg(long)]
    model: String,
    /// Observation CSV (header row, then numeric columns).
    #[arg(long)]
    data: PathBuf,
    /// Coverage shortfall.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Localization box size (omit and give --eta to derive it; omitting
    /// both drops the box).
    #[arg(long)]
    rho: Option<f64>,
    /// Target conservative bias for deriving rho.
    #[arg(long)]
    eta: Option<f64>,
    /// GMS thresholding value kappa_n (default sqrt(ln n)).
    #[arg(long)]
    kappa: Option<f64>,
    /// GMS selection function.
    #[arg(long, value_enum, default_value_t = GmsArg::Phi1)]
    gms: GmsArg,
    /// Bootstrap replicates.
    #[arg(long = "B", default_value_t = 1001)]
    b_reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ProblemArgs {
    fn load(&self) -> Result<(MomentModel, Dataset), calproj::Error> {
        if self.model == "scalar-mean" {
            // box derived from the data
            let data = Dataset::from_csv(&self.data)?;
            let xs: Vec<f64> = data.rows().map(|r| r[0]).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64)
                .sqrt()
                .max(1e-12);
            let model = MomentModel::scalar_mean(mean - 10.0 * sd, mean + 10.0 * sd);
            return Ok((model, data));
        }
        let model = if self.model.ends_with(".toml") {
            ModelConfig::from_toml_file(&self.model)?.build()?
        } else if let Some(dgp) = EntryDgp::from_name(&self.model) {
            dgp.spec().model()
        } else {
            return Err(calproj::Error::Invalid(format!(
                "model: unknown built-in {:?} (or pass a .toml file)",
                self.model
            )));
        };
        let data = Dataset::from_csv(&self.data)?;
        Ok((model, data))
    }

    fn gms_config(&self, n: usize) -> GmsConfig {
        let kappa = self.kappa.unwrap_or_else(|| (n as f64).ln().sqrt());
        GmsConfig::new(self.gms.kind(), kappa)
    }

    fn rho_value(&self, model: &MomentModel) -> f64 {
        match (self.rho, self.eta) {
            (Some(r), _) => r,
            (None, Some(eta)) => rho_from_eta(eta, model.j1 + model.j2, model.dim),
            (None, None) => f64::INFINITY,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a built-in entry-game design to CSV (columns y1, y2, z).
    Simulate {
        /// Design id: set1, set2-dgp1, set2-dgp2, set2-dgp3.
        #[arg(long)]
        dgp: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve the box-size heuristic for a target conservative bias.
    Rho {
        #[arg(long)]
        eta: f64,
        /// Moment count J1 + J2.
        #[arg(long = "J")]
        j: usize,
        #[arg(long)]
        d: usize,
    },
    /// Calibrated critical level at one parameter value.
    Chat {
        #[command(flatten)]
        problem: ProblemArgs,
        /// Parameter value, comma-separated.
        #[arg(long, value_delimiter = ',', required = true)]
        theta: Vec<f64>,
        /// Projection direction (defaults to the first coordinate).
        #[arg(long, value_delimiter = ',')]
        p: Option<Vec<f64>>,
    },
    /// Confidence interval for a projection of the parameter.
    Ci {
        #[command(flatten)]
        problem: ProblemArgs,
        /// Direction vector, comma-separated.
        #[arg(long, value_delimiter = ',', required = true)]
        p: Vec<f64>,
        #[arg(long, value_enum, default_value_t = ModeArg::Calibrated)]
        mode: ModeArg,
        #[arg(long, default_value_t = 0.005)]
        conv_tol: f64,
        /// Write the full result record as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo experiment from a TOML config.
    Mc {
        #[arg(long)]
        config: PathBuf,
        /// Results CSV path.
        #[arg(long, default_value = "results.csv")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(AppError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

enum AppError {
    Usage(String),
    Runtime(String),
}

impl From<calproj::Error> for AppError {
    fn from(e: calproj::Error) -> Self {
        match e {
            calproj::Error::Invalid(_) | calproj::Error::Io(_) | calproj::Error::Csv(_) => {
                AppError::Usage(e.to_string())
            }
            other => AppError::Runtime(other.to_string()),
        }
    }
}

fn run(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::Simulate { dgp, n, seed, out } => {
            let spec = EntryDgp::from_name(&dgp)
                .ok_or_else(|| AppError::Usage(format!("dgp: unknown design {dgp:?}")))?
                .spec();
            let data = spec.simulate(n, seed);
            data.to_csv(&out, &["y1", "y2", "z"])?;
            println!("wrote {} observations to {}", n, out.display());
            Ok(())
        }
        Command::Rho { eta, j, d } => {
            if !(eta > 0.0 && eta < 1.0) {
                return Err(AppError::Usage("eta: must lie in (0,1)".into()));
            }
            if d == 0 || j < d {
                return Err(AppError::Usage("d: need J >= d >= 1".into()));
            }
            println!("{:.4}", rho_from_eta(eta, j, d));
            Ok(())
        }
        Command::Chat { problem, theta, p } => {
            let (model, data) = problem.load()?;
            if theta.len() != model.dim {
                return Err(AppError::Usage(format!(
                    "theta: expected {} components, got {}",
                    model.dim,
                    theta.len()
                )));
            }
            let ev = Evaluator::new(&model, &data)?;
            let gms = problem.gms_config(data.nrows());
            let params = CriticalParams {
                alpha: problem.alpha,
                rho: problem.rho_value(&model),
                b: problem.b_reps,
                seed: problem.seed,
                ..Default::default()
            };
            let mut dir = p.unwrap_or_else(|| {
                let mut v = vec![0.0; model.dim];
                v[0] = 1.0;
                v
            });
            if dir.len() != model.dim {
                return Err(AppError::Usage(format!(
                    "p: expected {} components, got {}",
                    model.dim,
                    dir.len()
                )));
            }
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(AppError::Usage("p: direction must be nonzero".into()));
            }
            dir.iter_mut().for_each(|v| *v /= norm);
            let cal = critical_level(&ev, &theta, &Projection::Hyperplane(dir), &gms, &params)?;
            println!(
                "value {:.6}\nbracket [{:.6}, {:.6}]\niterations {}\ncoverage {:.4}{}",
                cal.value,
                cal.bracket.0,
                cal.bracket.1,
                cal.iterations,
                cal.h_at_value,
                if cal.capped {
                    "\nwarning: capped at the Bonferroni bound"
                } else {
                    ""
                }
            );
            Ok(())
        }
        Command::Ci {
            problem,
            p,
            mode,
            conv_tol,
            out,
        } => {
            let (model, data) = problem.load()?;
            if p.len() != model.dim {
                return Err(AppError::Usage(format!(
                    "p: expected {} components, got {}",
                    model.dim,
                    p.len()
                )));
            }
            let ev = Evaluator::new(&model, &data)?;
            let gms = problem.gms_config(data.nrows());
            let mut opts = CiOptions::new(problem.alpha, problem.rho_value(&model), gms);
            opts.b = problem.b_reps;
            opts.mode = mode.mode();
            opts.seed = problem.seed;
            opts.eam = EamOptions {
                seed: problem.seed,
                conv_tol,
                ..EamOptions::default()
            };
            let ci = confidence_interval(&ev, &p, &opts)?;
            if ci.empty {
                println!("confidence interval: EMPTY (sample moment conditions jointly rejected)");
            } else {
                println!("confidence interval: [{:.6}, {:.6}]", ci.lower, ci.upper);
            }
            for (label, d) in [("lower", &ci.lower_diag), ("upper", &ci.upper_diag)] {
                println!(
                    "{label}: endpoint {} evaluations {} iterations {} converged {}{}",
                    d.endpoint.map_or("none".into(), |v| format!("{v:.6}")),
                    d.evaluations,
                    d.iterations,
                    d.converged,
                    if d.empty { " (empty feasible set)" } else { "" }
                );
            }
            if let Some(path) = out {
                let json = serde_json::to_string_pretty(&ci)
                    .map_err(|e| AppError::Runtime(e.to_string()))?;
                std::fs::write(&path, json).map_err(|e| AppError::Runtime(e.to_string()))?;
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::Mc { config, out } => {
            let cfg = ExperimentConfig::from_toml_file(&config)?;
            let rows = run_monte_carlo(&cfg)?;
            write_results_csv(&rows, &out)?;
            println!(
                "{:>9} {:>6} {:>11} {:>21} {:>9} {:>9} {:>7} {:>9}",
                "component", "alpha", "method", "median CI", "cov(lo)", "cov(up)", "empty",
                "time(s)"
            );
            for r in &rows {
                println!(
                    "{:>9} {:>6} {:>11} [{:>8.4}, {:>8.4}] {:>9.3} {:>9.3} {:>7.3} {:>9.2}",
                    r.component,
                    r.alpha,
                    r.method,
                    r.median_lower,
                    r.median_upper,
                    r.coverage_lower,
                    r.coverage_upper,
                    r.empty_frac,
                    r.avg_time_s
                );
            }
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}
