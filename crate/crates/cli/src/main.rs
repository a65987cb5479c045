//! `corl`: learning runs, planning baselines and bound calculators.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use corl::bounds::{bounds_report, validate_bound, PacConfig, SigmaDenominator};
use corl::estimation::ExperienceStore;
use corl::experiment::{plan_baseline, run_experiment, seed_dir, ExperimentConfig, PlanModel};
use corl::types::DynamicsParams;
use corl::CorlError;

#[derive(Parser)]
#[command(name = "corl", version, about = "Continuous-state offset-dynamics learning toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn from scratch in a simulated world and write traces and curves.
    Run(RunArgs),
    /// Solve the planning problem for a fixed model and roll out its policy.
    Plan(PlanArgs),
    /// Print sample-complexity bounds for a PAC configuration.
    Bounds(BoundsArgs),
    /// Check the variational-distance bound against numeric integration.
    ValidateBound(ValidateArgs),
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML). Defaults to the bundled desk world.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "CORL_OUT_DIR", default_value = "corl-out")]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Run this single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    episodes: Option<usize>,
    /// Run seeds concurrently.
    #[arg(long)]
    parallel: bool,
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Rollout episodes; defaults to the configured baseline count.
    #[arg(long)]
    episodes: Option<usize>,
    /// Plan with the world's ground-truth dynamics.
    #[arg(long, conflicts_with = "snapshot")]
    true_model: bool,
    /// Plan with a saved experience store (store.json from a run).
    #[arg(long)]
    snapshot: Option<PathBuf>,
}

#[derive(Args)]
struct BoundsArgs {
    /// PAC config (TOML); individual flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    dims: Option<usize>,
    #[arg(long)]
    b_beta: Option<f64>,
    #[arg(long)]
    b_sigma: Option<f64>,
    #[arg(long)]
    sigma_min: Option<f64>,
    /// Good-sample radius.
    #[arg(long)]
    b: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Use `eps^2` in the variance-sample denominator.
    #[arg(long)]
    squared: bool,
}

#[derive(Args)]
struct ValidateArgs {
    /// Dimension to test (1-3); all three when omitted.
    #[arg(long)]
    dims: Option<usize>,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2e-3)]
    tol: f64,
    /// Add a pair of identical distributions to the sweep.
    #[arg(long)]
    inject_degenerate: bool,
}

enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
    Validation(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Runtime(_) => 2,
            Failure::Validation(_) => 3,
        }
    }
}

/// Configuration problems exit 1, everything else 2.
fn classify(e: CorlError) -> Failure {
    match e {
        CorlError::Config(_)
        | CorlError::InvalidEpsilon(_)
        | CorlError::RadiusTooSmall { .. }
        | CorlError::UnsupportedDimension(_)
        | CorlError::UnsupportedCovariance(_)
        | CorlError::InvalidCovariance(_)
        | CorlError::DimensionMismatch { .. }
        | CorlError::GridTooLarge { .. }
        | CorlError::TomlDe(_) => Failure::Usage(e.into()),
        other => Failure::Runtime(other.into()),
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, Failure> {
    match path {
        None => Ok(ExperimentConfig::desk()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("cannot read config {}", p.display()))
                .map_err(Failure::Usage)?;
            ExperimentConfig::from_toml(&text).map_err(|e| match classify(e) {
                Failure::Usage(e) | Failure::Runtime(e) => {
                    Failure::Usage(e.context(format!("invalid config {}", p.display())))
                }
                f => f,
            })
        }
    }
}

fn io<T>(r: std::io::Result<T>, what: &str) -> Result<T, Failure> {
    r.with_context(|| what.to_string()).map_err(Failure::Runtime)
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let mut cfg = load_config(args.common.config.as_deref())?;
    if let Some(s) = args.seed {
        cfg.experiment.seeds = vec![s];
    }
    if let Some(n) = args.episodes {
        cfg.experiment.episodes = n;
    }
    let out = &args.common.out;
    let summary = run_experiment(&cfg, out, args.parallel).map_err(classify)?;
    for s in &summary.seeds {
        let trailing = s
            .trailing_mean
            .map(|m| format!("{m:.4}"))
            .unwrap_or_else(|| "n/a".into());
        println!(
            "seed {}: {} episodes, trailing-{} mean {}, known tuples {}, unknown visits {}, curve {}",
            s.seed,
            s.curve.len(),
            summary.trailing,
            trailing,
            s.known_tuples,
            s.unknown_visits,
            seed_dir(out, s.seed).join("curve.csv").display()
        );
    }
    if let (Some(m), Some(sd)) = (summary.trailing_mean, summary.trailing_std) {
        println!("over seeds: trailing mean {m:.4} (std {sd:.4})");
    }
    println!("summary written to {}", out.join("summary.json").display());
    Ok(())
}

fn cmd_plan(args: PlanArgs) -> Result<(), Failure> {
    let cfg = load_config(args.common.config.as_deref())?;
    let model = if args.true_model {
        PlanModel::TrueDynamics
    } else if let Some(p) = &args.snapshot {
        let text = fs::read_to_string(p)
            .with_context(|| format!("cannot read snapshot {}", p.display()))
            .map_err(Failure::Usage)?;
        PlanModel::Snapshot(ExperienceStore::from_json(&text).map_err(|e| Failure::Usage(e.into()))?)
    } else {
        PlanModel::AllUnknown
    };
    let episodes = args.episodes.unwrap_or(cfg.experiment.baseline_episodes);
    let report = plan_baseline(&cfg, model, args.seed, episodes).map_err(classify)?;
    let out = &args.common.out;
    io(fs::create_dir_all(out), "cannot create output directory")?;
    io(fs::write(out.join("values.csv"), &report.values_csv), "cannot write values.csv")?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| Failure::Runtime(e.into()))?;
    io(fs::write(out.join("plan.json"), json), "cannot write plan.json")?;
    println!(
        "solved {} grid points in {} sweeps (residual {:.3e})",
        report.grid_points, report.iterations, report.residual
    );
    println!(
        "rollouts: {} episodes, mean reward {:.4} (std {:.4}), goal rate {:.2}, out-of-bounds rate {:.2}",
        report.episodes, report.mean_reward, report.std_reward, report.goal_rate, report.out_of_bounds_rate
    );
    println!("values written to {}", out.join("values.csv").display());
    Ok(())
}

fn pac_config(args: &BoundsArgs) -> Result<PacConfig, Failure> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("cannot read config {}", p.display()))
                .map_err(Failure::Usage)?;
            toml::from_str(&text)
                .with_context(|| format!("invalid PAC config {}", p.display()))
                .map_err(Failure::Usage)?
        }
        None => PacConfig::default(),
    };
    let set = |dst: &mut f64, v: Option<f64>| {
        if let Some(v) = v {
            *dst = v;
        }
    };
    set(&mut cfg.epsilon, args.epsilon);
    set(&mut cfg.delta, args.delta);
    set(&mut cfg.b_beta, args.b_beta);
    set(&mut cfg.b_sigma, args.b_sigma);
    set(&mut cfg.sigma_min, args.sigma_min);
    set(&mut cfg.b_good, args.b);
    set(&mut cfg.gamma, args.gamma);
    if let Some(n) = args.dims {
        cfg.n_dim = n;
    }
    if args.squared {
        cfg.sigma_denominator = SigmaDenominator::Squared;
    }
    Ok(cfg)
}

fn cmd_bounds(args: BoundsArgs) -> Result<(), Failure> {
    let cfg = pac_config(&args)?;
    let r = bounds_report(&cfg).map_err(classify)?;
    let denom = match cfg.sigma_denominator {
        SigmaDenominator::AsPrinted => "(eps - eps^2)",
        SigmaDenominator::Squared => "eps^2",
    };
    println!(
        "inputs: eps = {}, delta = {}, n = {}, B_beta = {}, B_sigma = {}, sigma_min = {}, B = {}, gamma = {}",
        cfg.epsilon, cfg.delta, cfg.n_dim, cfg.b_beta, cfg.b_sigma, cfg.sigma_min, cfg.b_good, cfg.gamma
    );
    println!("T_beta        = ceil(2 n B^2 / eps^2 * ln(6n/delta))           = {}", r.t_beta);
    println!("T_sigma       = ceil(8 B^4 / {denom} * ln(6n/delta))     = {}", r.t_sigma);
    println!("p0            = sqrt(8/pi) B_sigma^3 / (B - B_beta)^3          = {:.6e}", r.p0);
    println!("total samples = ceil(delta T0 / (delta - 3 n p0)), T0 = max    = {}", r.total_samples);
    println!("min B         = B_beta + (72 n^2 / (pi delta^2))^(1/6) B_sigma = {:.6}", r.min_good_radius);
    println!("N_at          = ceil(n^3 B^4 gamma^2 / (sigma_min^4 (1-gamma)^4 eps^2)) = {}", r.n_at);
    println!("F1            = (1-gamma)^2 eps / gamma                      = {:.6e}", r.constants.f1);
    println!("F2            = eps (1-gamma)^2 / gamma                      = {:.6e}", r.constants.f2);
    println!("F3            = eps (1-gamma) / gamma                        = {:.6e}", r.constants.f3);
    Ok(())
}

fn cmd_validate(args: ValidateArgs) -> Result<(), Failure> {
    let dims: Vec<usize> = match args.dims {
        Some(n) => vec![n],
        None => vec![1, 2, 3],
    };
    let mut extra = Vec::new();
    if args.inject_degenerate {
        let n = dims[0];
        let p = DynamicsParams::diagonal(vec![0.0; n], &vec![1.0; n])
            .map_err(|e| Failure::Runtime(e.into()))?;
        extra.push((p.clone(), p));
    }
    let v = validate_bound(&dims, args.trials, args.seed, args.tol, &extra).map_err(classify)?;
    if v.checked == 0 {
        eprintln!("warning: no pairs were checked; the pass is vacuous");
    }
    if v.skipped_degenerate > 0 {
        println!(
            "skipped {} degenerate pair(s) with bound 0 (ratio 0/0 undefined)",
            v.skipped_degenerate
        );
    }
    println!(
        "checked {} pairs over dims {:?}: max ratio numeric/bound {:.6}, max excess {:.3e}",
        v.checked, dims, v.max_ratio, v.max_excess
    );
    if v.passed() {
        println!("PASS: distance bound holds within {:e}", args.tol);
        return Ok(());
    }
    for c in &v.violations {
        eprintln!(
            "violation: dims {} beta1 {:?} var1 {:?} beta2 {:?} var2 {:?} numeric {:.6} bound {:.6}",
            c.dims, c.beta1, c.var1, c.beta2, c.var2, c.numeric, c.bound
        );
    }
    Err(Failure::Validation(format!(
        "{} pair(s) exceed the bound by more than {:e}",
        v.violations.len(),
        args.tol
    )))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Plan(a) => cmd_plan(a),
        Command::Bounds(a) => cmd_bounds(a),
        Command::ValidateBound(a) => cmd_validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Usage(e) | Failure::Runtime(e) => eprintln!("error: {e:#}"),
                Failure::Validation(m) => eprintln!("FAIL: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}

