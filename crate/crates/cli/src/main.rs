//! `superrad`: steady-state superradiance sweeps, subspace tables and
//! coherence curves from the command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use superrad::analysis::{emission_report, subspace_populations, transition_diagram, StateSource};
use superrad::cumulant::{coherence_time, Closure};
use superrad::hilbert::jm_decomposition;
use superrad::mcwf::{ensemble_steady_state, ObservableSet, TrajectoryOptions};
use superrad::oracle::{build_liouvillian, fitted_decay_rate, regression_correlation, steady_state_dm};
use superrad::output::{fmt_f64, Header, Table};
use superrad::params::Config;
use superrad::sweep::{run_sweep, EnsembleSettings, Grid, Method, Spacing, SweepSpec};
use superrad::{Error, ModelParams, Result, StateVector};

#[derive(Parser)]
#[command(name = "superrad", version, about = "Steady-state superradiance with incoherent repumping")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep the repump rate and compare steady-state methods.
    Sweep(SweepArgs),
    /// Write (J, M) population tables and transition diagrams.
    Subspaces(SubspaceArgs),
    /// Write the two-atom dipole correlation and the analytic coherence time.
    Coherence(CoherenceArgs),
    /// Parse and validate a configuration and print the resolved values.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct EnsembleArgs {
    /// Master seed for the trajectory ensembles.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    n_traj: usize,
    /// Burn-in time; defaults to ten times the slowest relaxation time.
    #[arg(long)]
    t1: Option<f64>,
    /// Averaging window; defaults to 10 t1.
    #[arg(long)]
    window: Option<f64>,
}

impl EnsembleArgs {
    fn settings(&self) -> EnsembleSettings {
        EnsembleSettings { n_traj: self.n_traj, master_seed: self.seed, t1: self.t1, window: self.window }
    }
}

#[derive(Args)]
struct SweepArgs {
    /// JSON model configuration.
    #[arg(long)]
    config: PathBuf,
    /// Explicit repump rates, comma separated. Overrides the range options.
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
    #[arg(long)]
    min: Option<f64>,
    #[arg(long)]
    max: Option<f64>,
    #[arg(long, default_value_t = 20)]
    count: usize,
    #[arg(long, value_enum, default_value_t = SpacingArg::Log)]
    spacing: SpacingArg,
    /// mcwf, cumulant, closed_form or oracle; repeatable.
    #[arg(long = "method", required = true)]
    methods: Vec<String>,
    #[arg(long, default_value = "rate-balanced")]
    closure: String,
    #[command(flatten)]
    ensemble: EnsembleArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SpacingArg {
    Linear,
    Log,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StateMethod {
    Oracle,
    Mcwf,
}

#[derive(Args)]
struct SubspaceArgs {
    #[arg(long, required_unless_present = "fig3", conflicts_with = "fig3")]
    config: Option<PathBuf>,
    /// N = 4, gamma_c = 1 and w in {0.1, 2, 10}.
    #[arg(long)]
    fig3: bool,
    #[arg(long, value_enum, default_value_t = StateMethod::Oracle)]
    method: StateMethod,
    #[command(flatten)]
    ensemble: EnsembleArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
enum CoherenceMethod {
    Analytic,
    Oracle,
}

#[derive(Args)]
struct CoherenceArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    tau_max: f64,
    #[arg(long, default_value_t = 201)]
    points: usize,
    /// analytic or oracle; repeatable, analytic when omitted.
    #[arg(long = "method", value_enum)]
    methods: Vec<CoherenceMethod>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Also write the resolved configuration as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_params(path: &Path) -> Result<(Config, ModelParams)> {
    let config = Config::load(path)?;
    let resolved = config.resolve()?;
    for w in &resolved.warnings {
        eprintln!("warning: {w}");
    }
    Ok((config, resolved.params))
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let (_, base) = load_params(&args.config)?;
    let grid = if !args.values.is_empty() {
        Grid::Values(args.values.clone())
    } else {
        match (args.min, args.max) {
            (Some(min), Some(max)) => {
                let spacing = match args.spacing {
                    SpacingArg::Linear => Spacing::Linear,
                    SpacingArg::Log => Spacing::Log,
                };
                Grid::Range { min, max, count: args.count, spacing }
            }
            (None, None) => Grid::Values(vec![base.w()]),
            _ => return Err(Error::Argument("--min and --max go together".into())),
        }
    };
    let methods = args.methods.iter().map(|m| m.parse()).collect::<Result<Vec<Method>>>()?;
    let mut spec = SweepSpec::new(base, grid, &methods);
    spec.ensemble = args.ensemble.settings();
    spec.closure = args.closure.parse::<Closure>()?;
    let result = run_sweep(spec)?;
    result.to_table().persist(&args.out)?;
    for r in &result.rows {
        for e in r.errors() {
            eprintln!("w = {}: {} failed: {}", r.w(), e.method.as_str(), e.message);
        }
    }
    match result.first_error() {
        Some((w, e)) => Err(Error::Solver(format!(
            "{} row(s) had failures, first at w = {w} ({}); see {}",
            result.rows.iter().filter(|r| !r.errors().is_empty()).count(),
            e.method.as_str(),
            args.out.display()
        ))),
        None => Ok(()),
    }
}

fn cmd_subspaces(args: &SubspaceArgs) -> Result<()> {
    let points: Vec<ModelParams> = match &args.config {
        Some(path) => vec![load_params(path)?.1],
        None => [0.1, 2.0, 10.0].iter().map(|&w| ModelParams::new(4, 1.0, w)).collect::<Result<_>>()?,
    };
    let decomp = Arc::new(jm_decomposition(points[0].n())?);
    std::fs::create_dir_all(&args.out)?;
    for params in &points {
        let config = serde_json::to_value(Config::from_params(params))?;
        let header = |artifact: &str| {
            Header::new(artifact, config.clone()).with("method", if args.method == StateMethod::Oracle { "oracle" } else { "mcwf" })
        };
        let (table, emission, extra) = match args.method {
            StateMethod::Oracle => {
                let rho = steady_state_dm(&build_liouvillian(params)?)?;
                let source = StateSource::Density(&rho);
                (subspace_populations(&decomp, source)?, emission_report(params, source)?, json!(null))
            }
            StateMethod::Mcwf => {
                let settings = args.ensemble.settings();
                let window = settings.window_for(params)?;
                let opts = TrajectoryOptions { sample_dt: None, observables: ObservableSet::with_subspaces(decomp.clone()) };
                let est = ensemble_steady_state(params, &StateVector::ground(params.n()), settings.n_traj, settings.master_seed, window, &opts)?;
                let source = StateSource::Estimate(&est);
                (subspace_populations(&decomp, source)?, emission_report(params, source)?, json!({"ensemble": settings, "window": window}))
            }
        };
        let diagram = transition_diagram(params, &decomp, Some(&table))?;
        let tag = format!("w{}", fmt_f64(params.w()));
        table.to_table(header("subspace_populations").with("emission", emission).with("mcwf", &extra)).persist(&args.out.join(format!("populations_{tag}.csv")))?;
        diagram.to_table(header("transition_diagram")).persist(&args.out.join(format!("transitions_{tag}.csv")))?;
        diagram.net_table(header("net_transitions")).persist(&args.out.join(format!("net_{tag}.csv")))?;
        println!("w = {}: {} subspaces, I = {}, N_e = {}, {}", params.w(), table.entries.len(), emission.i, emission.n_e, emission.flag.as_str());
    }
    Ok(())
}

fn cmd_coherence(args: &CoherenceArgs) -> Result<()> {
    let (_, params) = load_params(&args.config)?;
    if !(args.tau_max.is_finite() && args.tau_max > 0.0) {
        return Err(Error::Argument(format!("--tau-max must be > 0, got {}", args.tau_max)));
    }
    if args.points < 2 {
        return Err(Error::Argument("--points must be at least 2".into()));
    }
    let mut methods = args.methods.clone();
    if methods.is_empty() {
        methods.push(CoherenceMethod::Analytic);
    }
    methods.sort();
    methods.dedup();
    let tau: Vec<f64> = (0..args.points).map(|k| args.tau_max * k as f64 / (args.points - 1) as f64).collect();
    let coh = coherence_time(&params);
    let mut header = Header::new("coherence", serde_json::to_value(Config::from_params(&params))?)
        .with("t_coh", coh.t_coh)
        .with("inverse_rate", coh.inverse_rate)
        .with("regression_rate", coh.regression_rate);
    let mut columns = vec!["tau"];
    let analytic = methods.contains(&CoherenceMethod::Analytic);
    if analytic {
        columns.push("analytic");
    }
    let oracle = if methods.contains(&CoherenceMethod::Oracle) {
        let l = build_liouvillian(&params)?;
        let rho = steady_state_dm(&l)?;
        let c = regression_correlation(&l, &rho, &tau)?;
        header = header.with("oracle_fitted_rate", fitted_decay_rate(&tau, &c, 1e-6));
        columns.extend(["re_C", "im_C"]);
        Some(c)
    } else {
        None
    };
    let mut table = Table::new(header, &columns);
    for (k, t) in tau.iter().enumerate() {
        let mut row = vec![fmt_f64(*t)];
        if analytic {
            row.push(fmt_f64((-coh.regression_rate * t).exp()));
        }
        if let Some(c) = &oracle {
            row.extend([fmt_f64(c[k].re), fmt_f64(c[k].im)]);
        }
        table.push(row);
    }
    table.persist(&args.out)?;
    println!("t_coh = {}, inverse_rate = {}", coh.t_coh, coh.inverse_rate);
    Ok(())
}

fn cmd_validate(args: &ValidateArgs) -> Result<()> {
    let resolved = Config::load(&args.config)?.resolve()?;
    let text = serde_json::to_string_pretty(&resolved)?;
    println!("{text}");
    if let Some(out) = &args.out {
        std::fs::write(out, text + "\n")?;
    }
    Ok(())
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
    let result = match &cli.command {
        Command::Sweep(a) => cmd_sweep(a),
        Command::Subspaces(a) => cmd_subspaces(a),
        Command::Coherence(a) => cmd_coherence(a),
        Command::Validate(a) => cmd_validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
