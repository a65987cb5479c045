//! Seeded experiment runs, planning baselines and their file output.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{AgentConfig, CorlAgent, ThresholdOverride};
use crate::error::{CorlError, Result};
use crate::estimation::ExperienceStore;
use crate::planner::{
    build_grid, default_tolerance, AngleEncoding, GridOptions, KnownMdpModel, Planner,
    TransitionKernel, ValueSolution,
};
use crate::sim::{run_episode, Controller, EpisodeRecord, Terminal, TypedWorld, WorldConfig};
use crate::types::{ActionId, MdpSpec, State};

/// The bundled desk-scale world.
pub const DESK_CONFIG: &str = include_str!("../../../configs/desk.toml");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentSettings {
    pub gamma: f64,
    pub n_at: usize,
    #[serde(default)]
    pub overrides: Vec<ThresholdOverride>,
    pub spacing: Vec<f64>,
    pub kernel_sigma: Vec<f64>,
    /// Grid extends this far beyond the world bounds on non-angular axes.
    #[serde(default)]
    pub grid_margin: f64,
    #[serde(default)]
    pub angle_encoding: AngleEncoding,
    /// Planning accuracy; the solver tolerance defaults to `F3 / 2`.
    pub epsilon: f64,
    #[serde(default)]
    pub tol: Option<f64>,
    pub sigma_min: f64,
    pub b_beta: f64,
    pub b_sigma: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_true")]
    pub warm_start: bool,
    #[serde(default = "default_max_points")]
    pub max_points: usize,
}

fn default_max_iters() -> usize {
    100_000
}

fn default_true() -> bool {
    true
}

fn default_max_points() -> usize {
    GridOptions::default().max_points
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub episodes: usize,
    pub seeds: Vec<u64>,
    #[serde(default = "default_trailing")]
    pub trailing: usize,
    #[serde(default = "default_baseline_episodes")]
    pub baseline_episodes: usize,
}

fn default_trailing() -> usize {
    10
}

fn default_baseline_episodes() -> usize {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub world: WorldConfig,
    pub agent: AgentSettings,
    pub experiment: RunSettings,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn desk() -> Self {
        Self::from_toml(DESK_CONFIG).expect("bundled config is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.agent.n_at < 2 || self.agent.overrides.iter().any(|o| o.n_at < 2) {
            return Err(CorlError::Config(
                "n_at must be at least 2 so covariances can be estimated".into(),
            ));
        }
        if self.experiment.trailing == 0 {
            return Err(CorlError::Config("trailing window must be positive".into()));
        }
        self.world()?;
        self.tolerance()?;
        Ok(())
    }

    pub fn world(&self) -> Result<TypedWorld> {
        TypedWorld::from_config(&self.world)
    }

    pub fn tolerance(&self) -> Result<f64> {
        match self.agent.tol {
            Some(t) if t > 0.0 => Ok(t),
            Some(t) => Err(CorlError::Config(format!("tolerance must be positive, got {t}"))),
            None => default_tolerance(self.agent.epsilon, self.agent.gamma),
        }
    }

    pub fn spec(&self, world: &TypedWorld) -> Result<Arc<MdpSpec>> {
        let a = &self.agent;
        Ok(Arc::new(world.mdp_spec(a.gamma, a.sigma_min, a.b_beta, a.b_sigma)?))
    }

    pub fn planner(&self, world: &TypedWorld) -> Result<Planner> {
        let spec = self.spec(world)?;
        let region = world
            .bounds
            .expanded(self.agent.grid_margin, &world.angular_dims);
        let opts = GridOptions {
            angular_dims: world.angular_dims.clone(),
            angle_encoding: self.agent.angle_encoding,
            max_points: self.agent.max_points,
            ..GridOptions::default()
        };
        let grid = build_grid(&region, &self.agent.spacing, &self.agent.kernel_sigma, &opts)?;
        Planner::new(spec, grid)
    }

    pub fn agent_config(&self) -> Result<AgentConfig> {
        Ok(AgentConfig {
            n_at: self.agent.n_at,
            overrides: self.agent.overrides.clone(),
            tol: self.tolerance()?,
            max_iters: self.agent.max_iters,
            warm_start: self.agent.warm_start,
        })
    }

    pub fn agent(&self, world: &TypedWorld) -> Result<CorlAgent> {
        CorlAgent::new(self.planner(world)?, self.agent_config()?)
    }
}

/// One row of the learning curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub episode: usize,
    pub total_reward: f64,
    pub steps: usize,
    pub terminal: Terminal,
    pub known_tuples: usize,
    /// Seconds since the run started; kept out of the curve file.
    #[serde(skip)]
    pub wall_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub curve: Vec<CurveRow>,
    pub unknown_visits: usize,
    pub known_tuples: usize,
    pub replans: usize,
    pub trailing_mean: Option<f64>,
    #[serde(skip)]
    pub episodes: Vec<EpisodeRecord>,
    #[serde(skip)]
    pub store: Option<ExperienceStore>,
}

/// Mean of the last `window` values, if there are that many.
pub fn trailing_mean(values: &[f64], window: usize) -> Option<f64> {
    if window == 0 || values.len() < window {
        return None;
    }
    Some(values[values.len() - window..].iter().sum::<f64>() / window as f64)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

/// Learns from scratch for `episodes` episodes under one seed.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedResult> {
    let world = cfg.world()?;
    let mut agent = cfg.agent(&world)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clock = Instant::now();
    let mut curve = Vec::with_capacity(cfg.experiment.episodes);
    let mut episodes = Vec::with_capacity(cfg.experiment.episodes);
    for e in 0..cfg.experiment.episodes {
        let ep = run_episode(&world, &mut agent, &mut rng, e)?;
        curve.push(CurveRow {
            episode: e,
            total_reward: ep.total_reward,
            steps: ep.steps,
            terminal: ep.terminal,
            known_tuples: agent.known_tuples(),
            wall_time: clock.elapsed().as_secs_f64(),
        });
        episodes.push(ep);
    }
    let rewards: Vec<f64> = curve.iter().map(|r| r.total_reward).collect();
    Ok(SeedResult {
        seed,
        trailing_mean: trailing_mean(&rewards, cfg.experiment.trailing),
        curve,
        unknown_visits: agent.unknown_visits(),
        known_tuples: agent.known_tuples(),
        replans: agent.replans(),
        episodes,
        store: Some(agent.store().clone()),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub episodes: usize,
    pub trailing: usize,
    pub seeds: Vec<SeedResult>,
    /// Mean and standard deviation of the per-seed trailing means.
    pub trailing_mean: Option<f64>,
    pub trailing_std: Option<f64>,
    /// Mean and standard deviation of all episode rewards over all seeds.
    pub reward_mean: f64,
    pub reward_std: f64,
}

pub fn curve_csv(curve: &[CurveRow]) -> String {
    let mut out = String::from("episode,total_reward,steps,terminal,known_tuples\n");
    for r in curve {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.episode,
            r.total_reward,
            r.steps,
            r.terminal.as_str(),
            r.known_tuples
        ));
    }
    out
}

fn write_seed(dir: &Path, res: &SeedResult) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut trace = BufWriter::new(fs::File::create(dir.join("trace.jsonl"))?);
    for ep in &res.episodes {
        for step in &ep.trace {
            serde_json::to_writer(&mut trace, step)?;
            trace.write_all(b"\n")?;
        }
    }
    trace.flush()?;
    fs::write(dir.join("curve.csv"), curve_csv(&res.curve))?;
    let mut timing = String::from("episode,wall_time_s\n");
    for r in &res.curve {
        timing.push_str(&format!("{},{:.6}\n", r.episode, r.wall_time));
    }
    fs::write(dir.join("timing.csv"), timing)?;
    if let Some(store) = &res.store {
        fs::write(dir.join("store.json"), store.to_json()?)?;
    }
    Ok(())
}

/// Runs every configured seed and writes traces, curves and a summary
/// under `out`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path, parallel: bool) -> Result<RunSummary> {
    let seeds = &cfg.experiment.seeds;
    let results: Vec<SeedResult> = if parallel {
        seeds
            .par_iter()
            .map(|&s| run_seed(cfg, s))
            .collect::<Result<_>>()?
    } else {
        seeds.iter().map(|&s| run_seed(cfg, s)).collect::<Result<_>>()?
    };
    fs::create_dir_all(out)?;
    for r in &results {
        write_seed(&seed_dir(out, r.seed), r)?;
    }
    let trailing: Vec<f64> = results.iter().filter_map(|r| r.trailing_mean).collect();
    let (tm, ts) = mean_std(&trailing);
    let all: Vec<f64> = results
        .iter()
        .flat_map(|r| r.curve.iter().map(|c| c.total_reward))
        .collect();
    let (rm, rs) = mean_std(&all);
    let has_trailing = !trailing.is_empty() && trailing.len() == results.len();
    let summary = RunSummary {
        episodes: cfg.experiment.episodes,
        trailing: cfg.experiment.trailing,
        seeds: results,
        trailing_mean: has_trailing.then_some(tm),
        trailing_std: has_trailing.then_some(ts),
        reward_mean: rm,
        reward_std: rs,
    };
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

/// Which model a planning baseline uses.
#[derive(Clone, Debug)]
pub enum PlanModel {
    TrueDynamics,
    Snapshot(ExperienceStore),
    AllUnknown,
}

/// Greedy controller over a fixed plan.
pub struct FixedPlan<'a> {
    pub planner: &'a Planner,
    pub kernel: &'a TransitionKernel,
    pub solution: &'a ValueSolution,
    pub known: usize,
}

impl Controller for FixedPlan<'_> {
    fn act(&mut self, s: &State) -> Result<ActionId> {
        self.planner.greedy_action(s.as_slice(), self.solution, self.kernel)
    }

    fn observe(&mut self, _s: &State, _a: ActionId, _n: &State) -> Result<()> {
        Ok(())
    }

    fn known_tuples(&self) -> usize {
        self.known
    }

    fn plan_residual(&self) -> f64 {
        self.solution.residual
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlanReport {
    pub episodes: usize,
    pub seed: u64,
    pub mean_reward: f64,
    pub std_reward: f64,
    pub goal_rate: f64,
    pub out_of_bounds_rate: f64,
    pub iterations: usize,
    pub residual: f64,
    pub grid_points: usize,
    #[serde(skip)]
    pub solution: Option<ValueSolution>,
    #[serde(skip)]
    pub values_csv: String,
}

/// Solves the planning problem once for `model` and rolls out the greedy
/// policy for `episodes` episodes from one seeded stream.
pub fn plan_baseline(cfg: &ExperimentConfig, model: PlanModel, seed: u64, episodes: usize) -> Result<PlanReport> {
    let world = cfg.world()?;
    let planner = cfg.planner(&world)?;
    let spec = planner.spec().clone();
    let m = match model {
        PlanModel::TrueDynamics => KnownMdpModel::from_dynamics(spec, &world.true_dynamics)?,
        PlanModel::Snapshot(store) => KnownMdpModel::from_store(spec, &store)?,
        PlanModel::AllUnknown => KnownMdpModel::all_unknown(spec),
    };
    let kernel = planner.precompute_kernel(&m)?;
    let solution = planner.solve(&kernel, cfg.tolerance()?, cfg.agent.max_iters, None)?;
    let mut ctrl = FixedPlan {
        planner: &planner,
        kernel: &kernel,
        solution: &solution,
        known: m.known_count(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rewards = Vec::with_capacity(episodes);
    let (mut goals, mut oob) = (0usize, 0usize);
    for e in 0..episodes {
        let ep = run_episode(&world, &mut ctrl, &mut rng, e)?;
        match ep.terminal {
            Terminal::Goal => goals += 1,
            Terminal::OutOfBounds => oob += 1,
            _ => {}
        }
        rewards.push(ep.total_reward);
    }
    let (mean, std) = mean_std(&rewards);
    let n = episodes.max(1) as f64;
    Ok(PlanReport {
        episodes,
        seed,
        mean_reward: mean,
        std_reward: std,
        goal_rate: goals as f64 / n,
        out_of_bounds_rate: oob as f64 / n,
        iterations: solution.iterations,
        residual: solution.residual,
        grid_points: planner.grid().len(),
        values_csv: solution.to_csv(planner.grid()),
        solution: Some(solution),
    })
}
