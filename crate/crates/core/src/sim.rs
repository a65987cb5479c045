//! Typed-terrain world with Gaussian offset dynamics.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CorlError, Result};
use crate::types::{
    wrap_angle, wrapped_diff, ActionId, BoxRegion, DynamicsParams, MdpSpec, RewardModel, State,
    TypeGrid, TypeId,
};

/// Why a step ended the episode, if it did.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    None,
    Goal,
    OutOfBounds,
    StepCap,
}

impl Terminal {
    pub fn as_str(self) -> &'static str {
        match self {
            Terminal::None => "none",
            Terminal::Goal => "goal",
            Terminal::OutOfBounds => "out_of_bounds",
            Terminal::StepCap => "step_cap",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub s_next: State,
    pub reward: f64,
    pub terminal: Terminal,
}

/// Ball around `center` over the listed dimensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalRegion {
    pub center: Vec<f64>,
    pub radius: f64,
    /// Dimensions the ball is measured in; defaults to every non-angular one.
    #[serde(default)]
    pub dims: Option<Vec<usize>>,
}

/// Rewards of the navigation task. Terminal rewards add to the step cost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub goal: GoalRegion,
    #[serde(default = "default_goal_reward")]
    pub goal_reward: f64,
    #[serde(default = "default_oob_penalty")]
    pub out_of_bounds: f64,
    #[serde(default = "default_step_cost")]
    pub step_cost: f64,
}

fn default_goal_reward() -> f64 {
    1.0
}

fn default_oob_penalty() -> f64 {
    -1.0
}

fn default_step_cost() -> f64 {
    -0.01
}

/// Type map as text rows over dimensions 0 (columns) and 1 (rows, top row
/// highest), or explicit labels with per-dimension cell counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeMapConfig {
    #[serde(default)]
    pub rows: Option<Vec<String>>,
    #[serde(default)]
    pub cells: Option<Vec<usize>>,
    #[serde(default)]
    pub labels: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsConfig {
    #[serde(rename = "type")]
    pub type_id: usize,
    pub action: usize,
    pub beta: Vec<f64>,
    /// Full covariance rows; mutually exclusive with `variances`.
    #[serde(default)]
    pub sigma: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub variances: Option<Vec<f64>>,
}

/// Serialised world description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    #[serde(default)]
    pub angular_dims: Vec<usize>,
    pub n_actions: usize,
    pub types: TypeMapConfig,
    pub dynamics: Vec<DynamicsConfig>,
    pub reward: RewardSpec,
    pub start: Vec<f64>,
    pub max_steps: usize,
}

#[derive(Clone, Debug)]
struct NoiseSampler {
    beta: Vec<f64>,
    factor: DMatrix<f64>,
}

impl NoiseSampler {
    fn new(p: &DynamicsParams) -> Self {
        let factor = match p.sigma.clone().cholesky() {
            Some(c) => c.l(),
            None => {
                // positive semi-definite with zero directions
                let eig = p.sigma.clone().symmetric_eigen();
                let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
                &eig.eigenvectors * DMatrix::from_diagonal(&roots)
            }
        };
        Self {
            beta: p.beta.iter().copied().collect(),
            factor,
        }
    }

    fn offset<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z = DVector::from_iterator(self.beta.len(), (0..self.beta.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let e = &self.factor * z;
        self.beta.iter().zip(e.iter()).map(|(b, x)| b + x).collect()
    }
}

/// Reward model shared by the world and the planner.
#[derive(Clone, Debug)]
pub struct WorldReward {
    bounds: BoxRegion,
    angular_dims: Vec<usize>,
    goal_dims: Vec<usize>,
    spec: RewardSpec,
}

impl WorldReward {
    pub fn in_goal(&self, s: &[f64]) -> bool {
        let c = &self.spec.goal.center;
        let d2: f64 = self
            .goal_dims
            .iter()
            .zip(c)
            .map(|(&i, &ci)| {
                let d = if self.angular_dims.contains(&i) {
                    wrap_angle(s[i] - ci)
                } else {
                    s[i] - ci
                };
                d * d
            })
            .sum();
        d2 <= self.spec.goal.radius * self.spec.goal.radius
    }

    pub fn in_bounds(&self, s: &[f64]) -> bool {
        s.iter().enumerate().all(|(i, &x)| {
            self.angular_dims.contains(&i) || (self.bounds.lo[i] <= x && x <= self.bounds.hi[i])
        })
    }

    /// Terminal cause of landing in `s`.
    pub fn classify(&self, s: &[f64]) -> Terminal {
        if !self.in_bounds(s) {
            Terminal::OutOfBounds
        } else if self.in_goal(s) {
            Terminal::Goal
        } else {
            Terminal::None
        }
    }
}

impl RewardModel for WorldReward {
    fn reward(&self, _s: &[f64], _a: ActionId) -> f64 {
        self.spec.step_cost
    }

    fn terminal_value(&self, s: &[f64]) -> Option<f64> {
        match self.classify(s) {
            Terminal::OutOfBounds => Some(self.spec.out_of_bounds),
            Terminal::Goal => Some(self.spec.goal_reward),
            _ => None,
        }
    }

    fn range(&self) -> (f64, f64) {
        let c = self.spec.step_cost;
        let lo = c + self.spec.out_of_bounds.min(self.spec.goal_reward).min(0.0);
        let hi = c + self.spec.out_of_bounds.max(self.spec.goal_reward).max(0.0);
        (lo, hi)
    }
}

/// Ground-truth world: type map, per-tuple dynamics, rewards and start.
#[derive(Clone, Debug)]
pub struct TypedWorld {
    pub bounds: BoxRegion,
    pub type_map: TypeGrid,
    pub n_actions: usize,
    /// Indexed `type * n_actions + action`.
    pub true_dynamics: Vec<DynamicsParams>,
    pub reward: Arc<WorldReward>,
    pub start: State,
    pub max_steps: usize,
    pub angular_dims: Vec<usize>,
    samplers: Vec<NoiseSampler>,
}

fn build_type_map(bounds: &BoxRegion, cfg: &TypeMapConfig) -> Result<TypeGrid> {
    let n = bounds.dim();
    let (cells, labels) = match (&cfg.rows, &cfg.cells, &cfg.labels) {
        (Some(rows), None, None) => {
            if n < 2 && rows.len() > 1 {
                return Err(CorlError::Config("multi-row type map needs two dimensions".into()));
            }
            let width = rows.first().map(|r| r.chars().count()).unwrap_or(0);
            if width == 0 || rows.iter().any(|r| r.chars().count() != width) {
                return Err(CorlError::Config("type map rows must be non-empty and equal length".into()));
            }
            let height = rows.len();
            let mut cells = vec![1; n];
            cells[0] = width;
            if n > 1 {
                cells[1] = height;
            }
            let mut labels = vec![TypeId(0); width * height];
            for (r, row) in rows.iter().enumerate() {
                let j = height - 1 - r;
                for (i, ch) in row.chars().enumerate() {
                    let t = ch
                        .to_digit(36)
                        .ok_or_else(|| CorlError::Config(format!("bad type label {ch:?}")))?;
                    // row-major with the last dimension fastest; dims beyond 1 have one cell
                    labels[i * height + j] = TypeId(t as usize);
                }
            }
            (cells, labels)
        }
        (None, Some(cells), Some(labels)) => (
            cells.clone(),
            labels.iter().map(|&t| TypeId(t)).collect(),
        ),
        _ => {
            return Err(CorlError::Config(
                "type map needs either rows or cells with labels".into(),
            ))
        }
    };
    TypeGrid::new(bounds.clone(), cells, labels)
}

impl TypedWorld {
    pub fn from_config(cfg: &WorldConfig) -> Result<Self> {
        let bounds = BoxRegion::new(cfg.lo.clone(), cfg.hi.clone())?;
        let n = bounds.dim();
        if cfg.angular_dims.iter().any(|&i| i >= n) {
            return Err(CorlError::Config("angular dimension out of range".into()));
        }
        if cfg.n_actions == 0 {
            return Err(CorlError::Config("world needs at least one action".into()));
        }
        let type_map = build_type_map(&bounds, &cfg.types)?;
        let n_types = type_map.n_types();
        let mut slots: Vec<Option<DynamicsParams>> = vec![None; n_types * cfg.n_actions];
        for d in &cfg.dynamics {
            if d.type_id >= n_types || d.action >= cfg.n_actions {
                return Err(CorlError::Config(format!(
                    "dynamics entry for type {} action {} is out of range",
                    d.type_id, d.action
                )));
            }
            if d.beta.len() != n {
                return Err(CorlError::DimensionMismatch {
                    expected: n,
                    got: d.beta.len(),
                });
            }
            let p = match (&d.sigma, &d.variances) {
                (Some(rows), None) => {
                    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                        return Err(CorlError::DimensionMismatch {
                            expected: n,
                            got: rows.len(),
                        });
                    }
                    let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
                    DynamicsParams::new(d.beta.clone(), m)?
                }
                (None, Some(v)) => DynamicsParams::diagonal(d.beta.clone(), v)?,
                _ => {
                    return Err(CorlError::Config(
                        "dynamics entry needs exactly one of sigma or variances".into(),
                    ))
                }
            };
            let slot = &mut slots[d.type_id * cfg.n_actions + d.action];
            if slot.is_some() {
                return Err(CorlError::Config(format!(
                    "duplicate dynamics for type {} action {}",
                    d.type_id, d.action
                )));
            }
            *slot = Some(p);
        }
        let true_dynamics = slots
            .into_iter()
            .enumerate()
            .map(|(k, p)| {
                p.ok_or_else(|| {
                    CorlError::Config(format!(
                        "missing dynamics for type {} action {}",
                        k / cfg.n_actions,
                        k % cfg.n_actions
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let goal_dims = match &cfg.reward.goal.dims {
            Some(d) => d.clone(),
            None => (0..n).filter(|i| !cfg.angular_dims.contains(i)).collect(),
        };
        if goal_dims.len() != cfg.reward.goal.center.len() || goal_dims.iter().any(|&i| i >= n) {
            return Err(CorlError::Config("goal center does not match its dimensions".into()));
        }
        if !(cfg.reward.goal.radius > 0.0) {
            return Err(CorlError::Config("goal radius must be positive".into()));
        }
        let reward = Arc::new(WorldReward {
            bounds: bounds.clone(),
            angular_dims: cfg.angular_dims.clone(),
            goal_dims,
            spec: cfg.reward.clone(),
        });
        let start = State::from_slice(&cfg.start)?;
        if start.dim() != n || !reward.in_bounds(start.as_slice()) {
            return Err(CorlError::Config("start must lie within the bounds".into()));
        }
        let mut goal_probe = start.clone().into_vec();
        for (&i, &c) in reward.goal_dims.iter().zip(&cfg.reward.goal.center) {
            goal_probe[i] = c;
        }
        if !reward.in_bounds(&goal_probe) {
            return Err(CorlError::Config("goal center must lie within the bounds".into()));
        }
        let samplers = true_dynamics.iter().map(NoiseSampler::new).collect();
        Ok(Self {
            bounds,
            type_map,
            n_actions: cfg.n_actions,
            true_dynamics,
            reward,
            start,
            max_steps: cfg.max_steps,
            angular_dims: cfg.angular_dims.clone(),
            samplers,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: WorldConfig = toml::from_str(text)?;
        Self::from_config(&cfg)
    }

    pub fn n_dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn n_types(&self) -> usize {
        self.type_map.n_types()
    }

    pub fn dynamics(&self, t: TypeId, a: ActionId) -> &DynamicsParams {
        &self.true_dynamics[t.0 * self.n_actions + a.0]
    }

    /// Planning description of this world.
    pub fn mdp_spec(&self, gamma: f64, sigma_min: f64, b_beta: f64, b_sigma: f64) -> Result<MdpSpec> {
        let spec = MdpSpec {
            n_dim: self.n_dim(),
            n_actions: self.n_actions,
            n_types: self.n_types(),
            gamma,
            reward: self.reward.clone(),
            type_map: self.type_map.clone(),
            sigma_min,
            b_beta,
            b_sigma,
            bounds: self.bounds.clone(),
            angular_dims: self.angular_dims.clone(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `s' = s + beta + eps` for the type of `s`, angular dims wrapped.
    pub fn sample_transition<R: Rng + ?Sized>(&self, s: &State, a: ActionId, rng: &mut R) -> Result<State> {
        if a.0 >= self.n_actions {
            return Err(CorlError::Config(format!("unknown action {a}")));
        }
        let t = self.type_map.type_of(s.as_slice())?;
        let off = self.samplers[t.0 * self.n_actions + a.0].offset(rng);
        let mut next: Vec<f64> = s.as_slice().iter().zip(&off).map(|(x, d)| x + d).collect();
        for &i in &self.angular_dims {
            next[i] = wrap_angle(next[i]);
        }
        State::new(next)
    }

    pub fn step<R: Rng + ?Sized>(&self, s: &State, a: ActionId, rng: &mut R) -> Result<StepOutcome> {
        let s_next = self.sample_transition(s, a, rng)?;
        let terminal = self.reward.classify(s_next.as_slice());
        let reward = self.reward.spec.step_cost
            + match terminal {
                Terminal::Goal => self.reward.spec.goal_reward,
                Terminal::OutOfBounds => self.reward.spec.out_of_bounds,
                _ => 0.0,
            };
        Ok(StepOutcome {
            s_next,
            reward,
            terminal,
        })
    }

    /// Offset between two states with angular dims wrapped.
    pub fn offset(&self, s: &State, s_next: &State) -> Vec<f64> {
        wrapped_diff(s_next.as_slice(), s.as_slice(), &self.angular_dims)
    }
}

/// Anything that picks actions and learns from transitions.
pub trait Controller {
    fn act(&mut self, s: &State) -> Result<ActionId>;

    fn observe(&mut self, s: &State, a: ActionId, s_next: &State) -> Result<()>;

    fn known_tuples(&self) -> usize {
        0
    }

    /// Residual of the plan currently in use.
    fn plan_residual(&self) -> f64 {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub episode: usize,
    pub step: usize,
    pub state: Vec<f64>,
    #[serde(rename = "type")]
    pub type_id: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: Terminal,
    pub known: usize,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub trace: Vec<StepRecord>,
    pub total_reward: f64,
    pub steps: usize,
    pub terminal: Terminal,
}

/// Runs one episode from the world's start state.
pub fn run_episode<C, R>(
    world: &TypedWorld,
    controller: &mut C,
    rng: &mut R,
    episode: usize,
) -> Result<EpisodeRecord>
where
    C: Controller + ?Sized,
    R: Rng + ?Sized,
{
    let mut s = world.start.clone();
    let mut trace = Vec::new();
    let mut total = 0.0;
    let mut terminal = Terminal::StepCap;
    for step in 0..world.max_steps {
        let t = world.type_map.type_of(s.as_slice())?;
        let a = controller.act(&s)?;
        let out = world.step(&s, a, rng)?;
        controller.observe(&s, a, &out.s_next)?;
        total += out.reward;
        trace.push(StepRecord {
            episode,
            step,
            state: s.as_slice().to_vec(),
            type_id: t.0,
            action: a.0,
            reward: out.reward,
            next_state: out.s_next.as_slice().to_vec(),
            terminal: out.terminal,
            known: controller.known_tuples(),
            residual: controller.plan_residual(),
        });
        s = out.s_next;
        if out.terminal != Terminal::None {
            terminal = out.terminal;
            break;
        }
    }
    if terminal == Terminal::StepCap {
        if let Some(last) = trace.last_mut() {
            last.terminal = Terminal::StepCap;
        }
    }
    Ok(EpisodeRecord {
        episode,
        steps: trace.len(),
        trace,
        total_reward: total,
        terminal,
    })
}
