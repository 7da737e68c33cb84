//! `potts-lab`: command-line front end for the block Potts experiments.
//!
//! Every experiment subcommand runs as a one-cell sweep, so its output directory holds the
//! CSVs plus a `manifest.json` that `potts-lab sweep --config <manifest>` replays.
//! Exit codes: 0 on success, 2 when the parameters are out of regime, 1 otherwise.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use potts_core::couplings::OverallBudgets;
use potts_core::dynamics::Mode;
use potts_core::experiments::sweep::SCHEMA_VERSION;
use potts_core::experiments::{
    load_sweep_config, sweep_run, BottleneckConfig, CltConfig, ContractionConfig, CoupleConfig, CutoffConfig,
    ExactConfig, ExitConfig, ExperimentConfig, SimulateConfig, StartSpec, SweepConfig, TheoryCheckConfig,
};
use potts_core::model::effective_coupling;
use potts_core::theory::{critical_temperatures, equilibrium_macrostates, xi_and_cutoff_time};
use potts_core::{ModelParams, PottsError, Result};

#[derive(Parser, Debug)]
#[command(name = "potts-lab", version, about = "Glauber dynamics of the block mean-field Potts model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    #[arg(long, default_value_t = 3)]
    q: usize,
    #[arg(long, default_value_t = 2)]
    m: usize,
    /// Inter-block coupling.
    #[arg(long, default_value_t = 1.0)]
    a: f64,
    /// Intra-block coupling.
    #[arg(long, default_value_t = 2.0)]
    b: f64,
    /// Inverse temperature.
    #[arg(long, conflicts_with = "beta_ratio")]
    beta: Option<f64>,
    /// Inverse temperature as a multiple of beta_s / J.
    #[arg(long)]
    beta_ratio: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    n: usize,
}

impl ModelArgs {
    fn params(&self) -> Result<ModelParams> {
        let beta = match (self.beta, self.beta_ratio) {
            (Some(b), _) => b,
            (None, Some(r)) => r * critical_temperatures(self.q)?.beta_s / effective_coupling(self.a, self.b, self.m)?,
            (None, None) => return Err(PottsError::InvalidParameter("one of --beta or --beta-ratio is required".into())),
        };
        ModelParams::new(self.q, self.m, self.a, self.b, beta, self.n)
    }
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct BudgetArgs {
    #[arg(long, default_value_t = OverallBudgets::default().gamma1)]
    gamma1: f64,
    #[arg(long, default_value_t = OverallBudgets::default().gamma2)]
    gamma2: f64,
    #[arg(long, default_value_t = OverallBudgets::default().gamma4)]
    gamma4: f64,
    #[arg(long, default_value_t = OverallBudgets::default().gamma5)]
    gamma5: f64,
    #[arg(long, default_value_t = OverallBudgets::default().gamma6)]
    gamma6: f64,
    /// Coordinatewise thresholds `y_1..y_{q-1}` (comma separated).
    #[arg(long, value_delimiter = ',')]
    y: Option<Vec<f64>>,
}

impl BudgetArgs {
    fn budgets(&self) -> OverallBudgets {
        OverallBudgets {
            gamma1: self.gamma1,
            gamma2: self.gamma2,
            gamma4: self.gamma4,
            gamma5: self.gamma5,
            gamma6: self.gamma6,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum StartArg {
    Uniform,
    Monochromatic,
    Delta,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum ModeArg {
    Full,
    Lumped,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print beta_c, beta_s, xi, t_xi and the equilibrium macrostates as JSON.
    Critical {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Run one chain and record its trajectory.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 100_000)]
        steps: u64,
        #[arg(long, default_value_t = 1000)]
        sample_every: u64,
        #[arg(long, value_enum, default_value_t = StartArg::Uniform)]
        start: StartArg,
        #[arg(long, value_enum, default_value_t = ModeArg::Lumped)]
        mode: ModeArg,
    },
    /// Enumerate the lumped state space and write the exact kernel and mixing curve.
    Exact {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 0.25)]
        epsilon: f64,
        #[arg(long, default_value_t = 1_000_000)]
        max_t: u64,
    },
    /// Overall-coupling runs from a monochromatic start against stationary draws.
    Couple {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        budgets: BudgetArgs,
        #[arg(long, default_value_t = 100)]
        replicas: usize,
    },
    /// TV upper and lower estimates at t_xi + gamma n.
    CutoffProfile {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        budgets: BudgetArgs,
        #[arg(long, default_value_t = 300)]
        replicas: usize,
        #[arg(long, default_value_t = 200)]
        calibration_replicas: usize,
        /// Sizes to profile (comma separated); defaults to `--n`.
        #[arg(long, value_delimiter = ',')]
        n_list: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-6,-4,-2,0,2,4,6")]
        gamma_list: Vec<f64>,
    },
    /// Basin exit times from the nu^1-nearest state, and optionally bottleneck ratios.
    Metastability {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 200)]
        replicas: usize,
        #[arg(long, value_delimiter = ',')]
        n_list: Option<Vec<usize>>,
        #[arg(long, default_value_t = 0.1)]
        basin_radius: f64,
        #[arg(long, default_value_t = 1_000_000_000)]
        cap: u64,
        /// Also compute the bottleneck ratio at every size with this margin below s*.
        #[arg(long)]
        delta1: Option<f64>,
    },
    /// Check the g bound, path functional, local Lipschitz ratio and CLT covariance.
    TheoryCheck {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        /// Samples for the covariance check; 0 skips it.
        #[arg(long, default_value_t = 0)]
        clt_samples: usize,
    },
    /// Synchronized contraction and Frobenius decay fits.
    Contraction {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 500)]
        replicas: usize,
    },
    /// Run a sweep config (or replay a manifest).
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
}

fn with_n(params: &ModelParams, n: usize) -> Result<ModelParams> {
    ModelParams::new(params.q, params.m, params.a, params.b, params.beta, n)
}

fn run_cell(cfg: ExperimentConfig, run: &RunArgs) -> Result<()> {
    let sweep = SweepConfig::single(cfg, run.seed);
    finish(sweep, &run.out)
}

fn finish(sweep: SweepConfig, out: &Path) -> Result<()> {
    let manifest = sweep_run(&sweep, out)?;
    for cell in &manifest.cells {
        for f in &cell.files {
            println!("{}  {}", f.sha256, out.join(&f.name).display());
        }
    }
    println!("manifest: {}", out.join("manifest.json").display());
    Ok(())
}

fn critical(model: &ModelArgs) -> Result<()> {
    let ct = critical_temperatures(model.q)?;
    let j = effective_coupling(model.a, model.b, model.m)?;
    let mut out = serde_json::json!({
        "q": model.q,
        "m": model.m,
        "a": model.a,
        "b": model.b,
        "J": j,
        "beta_c": ct.beta_c,
        "beta_s": ct.beta_s,
        "beta_c_over_J": ct.beta_c / j,
        "beta_s_over_J": ct.beta_s / j,
    });
    if model.beta.is_some() || model.beta_ratio.is_some() {
        let p = model.params()?;
        out["beta"] = p.beta.into();
        out["beta_J"] = p.beta_j().into();
        out["n"] = p.n.into();
        match xi_and_cutoff_time(&p) {
            Ok((xi, t)) => {
                out["xi"] = xi.into();
                out["t_xi"] = t.into();
            }
            Err(_) => {
                out["xi"] = serde_json::Value::Null;
                out["t_xi"] = serde_json::Value::Null;
            }
        }
        let ms = equilibrium_macrostates(p.beta_j(), p.q, p.m);
        out["macrostate_u"] = ms.u.into();
        out["macrostate_psi"] = serde_json::to_value(&ms.psi)?;
    }
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Critical { model } => critical(&model),
        Command::Simulate {
            model,
            run,
            steps,
            sample_every,
            start,
            mode,
        } => {
            let start = match start {
                StartArg::Uniform => StartSpec::UniformRandom,
                StartArg::Monochromatic => StartSpec::Monochromatic { color: 0 },
                StartArg::Delta => StartSpec::DeltaNearest,
            };
            let mode = match mode {
                ModeArg::Full => Mode::Full,
                ModeArg::Lumped => Mode::Lumped,
            };
            let cfg = SimulateConfig {
                params: model.params()?,
                start,
                mode,
                steps,
                sample_every,
            };
            run_cell(ExperimentConfig::Simulate(cfg), &run)
        }
        Command::Exact {
            model,
            run,
            epsilon,
            max_t,
        } => {
            let cfg = ExactConfig {
                params: model.params()?,
                epsilon,
                max_t,
            };
            run_cell(ExperimentConfig::Exact(cfg), &run)
        }
        Command::Couple {
            model,
            run,
            budgets,
            replicas,
        } => {
            let cfg = CoupleConfig {
                params: model.params()?,
                replicas,
                budgets: budgets.budgets(),
                y: budgets.y.clone(),
                burn_in: 20.0,
            };
            run_cell(ExperimentConfig::Couple(cfg), &run)
        }
        Command::CutoffProfile {
            model,
            run,
            budgets,
            replicas,
            calibration_replicas,
            n_list,
            gamma_list,
        } => {
            let params = model.params()?;
            let cfg = CutoffConfig {
                n_list: n_list.unwrap_or_else(|| vec![params.n]),
                params,
                gamma_list,
                replicas,
                calibration_replicas,
                burn_in: 20.0,
                budgets: budgets.budgets(),
                y: budgets.y.clone(),
            };
            run_cell(ExperimentConfig::Cutoff(cfg), &run)
        }
        Command::Metastability {
            model,
            run,
            replicas,
            n_list,
            basin_radius,
            cap,
            delta1,
        } => {
            let params = model.params()?;
            let n_list = n_list.unwrap_or_else(|| vec![params.n]);
            let mut cells = vec![ExperimentConfig::Metastability(ExitConfig {
                params: params.clone(),
                n_list: n_list.clone(),
                replicas,
                basin_radius,
                cap,
            })];
            if let Some(delta1) = delta1 {
                for &n in &n_list {
                    cells.push(ExperimentConfig::Bottleneck(BottleneckConfig {
                        params: with_n(&params, n)?,
                        delta1,
                        estimate_steps: 10_000_000,
                    }));
                }
            }
            let sweep = SweepConfig {
                schema_version: SCHEMA_VERSION,
                master_seed: run.seed,
                cells,
                grid: None,
            };
            finish(sweep, &run.out)
        }
        Command::TheoryCheck {
            model,
            run,
            samples,
            clt_samples,
        } => {
            let cfg = TheoryCheckConfig {
                params: model.params()?,
                samples,
                path_steps: 32,
                lipschitz_radius: 1e-3,
                lipschitz_samples: samples,
                clt: (clt_samples > 0).then_some(CltConfig {
                    samples: clt_samples,
                    thin: 2.0,
                    burn_in: 10.0,
                    tolerance: 0.05,
                }),
            };
            run_cell(ExperimentConfig::TheoryCheck(cfg), &run)
        }
        Command::Contraction { model, run, replicas } => {
            let cfg = ContractionConfig {
                params: model.params()?,
                replicas,
                offset: 0.1,
                horizon: 5.0,
                points: 50,
                rho: None,
                fit_floor: 0.05,
            };
            run_cell(ExperimentConfig::Contraction(cfg), &run)
        }
        Command::Sweep { config, out } => finish(load_sweep_config(&config)?, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
