mod config;
mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use smc_core::experiments::{run_monte_carlo, run_placebo};
use smc_core::panel::{apply_diag_weights, load_covariates_csv, load_panel_csv, load_v_weights_csv, parse_methods};
use smc_core::{fit_method, Method, PanelData, Result, SmcError, SmcOptions};

use crate::report::{FitConfig, FitReport};

#[derive(Parser)]
#[command(name = "smc", version, about = "Synthetic matching control for single-treated-unit panels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one estimator and write its weights and counterfactual path.
    Fit(FitArgs),
    /// Run a Monte Carlo experiment from a key = value config file.
    Simulate(SimulateArgs),
    /// Refit with every control as a pseudo-treated unit.
    Placebo(PlaceboArgs),
}

#[derive(Args)]
struct PanelArgs {
    /// Wide CSV: first column time labels, one column per unit.
    #[arg(long)]
    data: PathBuf,
    /// Column label of the treated unit.
    #[arg(long)]
    treated: String,
    /// Number of pre-treatment periods.
    #[arg(long)]
    t0: usize,
}

#[derive(Args)]
struct OptionArgs {
    /// appendix (residual_dof) or maintext (diagonal_residual).
    #[arg(long, default_value = "appendix")]
    variance_variant: String,
    /// auto, off, or a number of controls to keep.
    #[arg(long, default_value = "auto")]
    screen: String,
    /// rank_count or standard_sirs.
    #[arg(long, default_value = "rank_count")]
    sirs_variant: String,
}

impl OptionArgs {
    fn resolve(&self) -> Result<SmcOptions> {
        let opts = SmcOptions {
            variance_variant: self.variance_variant.parse()?,
            screen: self.screen.parse()?,
            sirs_variant: self.sirs_variant.parse()?,
            ..SmcOptions::default()
        };
        opts.validate()?;
        Ok(opts)
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    panel: PanelArgs,
    #[arg(long, default_value = "smc")]
    method: String,
    /// CSV with a `covariate` label column and one column per unit.
    #[arg(long)]
    covariates: Option<PathBuf>,
    /// Single-column CSV headed `v`, one weight per pre-period.
    #[arg(long)]
    v_weights: Option<PathBuf>,
    #[command(flatten)]
    options: OptionArgs,
    /// Output directory for fit.json and path.csv; JSON goes to stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `reps` in the config.
    #[arg(long)]
    reps: Option<usize>,
    /// Overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV; stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlaceboArgs {
    #[command(flatten)]
    panel: PanelArgs,
    /// Comma-separated list of smc, sc, dsc, ols.
    #[arg(long, default_value = "smc,sc,dsc,ols")]
    methods: String,
    #[command(flatten)]
    options: OptionArgs,
    /// Output CSV; stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| SmcError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn emit(out: Option<&Path>, contents: &str) -> Result<()> {
    match out {
        Some(p) => write_file(p, contents),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn load(args: &PanelArgs) -> Result<PanelData> {
    load_panel_csv(&args.data, &args.treated, args.t0)
}

fn cmd_fit(args: &FitArgs) -> Result<()> {
    let method: Method = args.method.parse()?;
    let options = args.options.resolve()?;
    let mut panel = load(&args.panel)?;
    if let Some(path) = &args.covariates {
        panel = load_covariates_csv(path, panel)?;
    }
    if let Some(path) = &args.v_weights {
        panel = apply_diag_weights(&panel, &load_v_weights_csv(path)?)?;
    }
    let output = fit_method(&panel, method, &options)?;
    let config = FitConfig {
        data: args.panel.data.display().to_string(),
        covariates: args.covariates.as_ref().map(|p| p.display().to_string()),
        v_weights: args.v_weights.as_ref().map(|p| p.display().to_string()),
        method,
        treated: args.panel.treated.clone(),
        t0: args.panel.t0,
        options,
    };
    let report = FitReport::new(&panel, &output, config);
    let json = serde_json::to_string_pretty(&report).map_err(|e| SmcError::Parse(e.to_string()))? + "\n";
    match &args.out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|source| SmcError::Io {
                path: dir.display().to_string(),
                source,
            })?;
            write_file(&dir.join("fit.json"), &json)?;
            write_file(&dir.join("path.csv"), &output.path_csv(&panel))
        }
        None => emit(None, &json),
    }
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let text = fs::read_to_string(&args.config).map_err(|source| SmcError::Io {
        path: args.config.display().to_string(),
        source,
    })?;
    let mut cfg = config::parse_sim_config(&text)?;
    if let Some(r) = args.reps {
        cfg.reps = r;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let table = run_monte_carlo(&cfg)?;
    emit(args.out.as_deref(), &table.to_csv())
}

fn cmd_placebo(args: &PlaceboArgs) -> Result<()> {
    let methods = parse_methods(&args.methods)?;
    let options = args.options.resolve()?;
    let panel = load(&args.panel)?;
    if panel.n_units() < 3 {
        return Err(SmcError::InvalidConfig("placebo needs at least 3 units".into()));
    }
    let table = run_placebo(&panel, &methods, &options)?;
    emit(args.out.as_deref(), &table.to_csv())
}

fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var("SMC_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| SmcError::InvalidConfig(format!("SMC_THREADS must be a positive integer (got `{raw}`)")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| SmcError::InvalidConfig(e.to_string()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = init_threads().and_then(|_| match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Placebo(a) => cmd_placebo(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("{msg}");
            log::debug!("{e:?}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
