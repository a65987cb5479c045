//! Optimistic learner: plan against the known-tuple model, act greedily,
//! re-plan when the model changes.

use serde::{Deserialize, Serialize};

use crate::error::{CorlError, Result};
use crate::estimation::{ExperienceStore, RecordOutcome, TransitionSample, TupleModel};
use crate::planner::{KnownMdpModel, Planner, TransitionKernel, ValueSolution};
use crate::sim::Controller;
use crate::types::{ActionId, DynamicsParams, State, TypeId};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThresholdOverride {
    #[serde(rename = "type")]
    pub type_id: usize,
    pub action: usize,
    pub n_at: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    /// Samples needed before a (type, action) tuple counts as known.
    pub n_at: usize,
    #[serde(default)]
    pub overrides: Vec<ThresholdOverride>,
    pub tol: f64,
    pub max_iters: usize,
    /// Start each re-plan from the previous values instead of zero.
    #[serde(default = "yes")]
    pub warm_start: bool,
}

fn yes() -> bool {
    true
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            n_at: 4,
            overrides: Vec::new(),
            tol: 1e-3,
            max_iters: 100_000,
            warm_start: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CorlAgent {
    cfg: AgentConfig,
    planner: Planner,
    store: ExperienceStore,
    model: KnownMdpModel,
    kernel: TransitionKernel,
    solution: ValueSolution,
    plan_dirty: bool,
    changed: Vec<(TypeId, ActionId)>,
    unknown_visits: usize,
    steps: usize,
    replans: usize,
}

impl CorlAgent {
    /// All tuples unknown, initial optimistic plan solved.
    pub fn new(planner: Planner, cfg: AgentConfig) -> Result<Self> {
        let spec = planner.spec().clone();
        let mut store = ExperienceStore::new(&spec, cfg.n_at)?;
        for o in &cfg.overrides {
            store.set_threshold(TypeId(o.type_id), ActionId(o.action), o.n_at)?;
        }
        let model = KnownMdpModel::all_unknown(spec);
        let kernel = planner.precompute_kernel(&model)?;
        let solution = planner.solve(&kernel, cfg.tol, cfg.max_iters, None)?;
        Ok(Self {
            cfg,
            planner,
            store,
            model,
            kernel,
            solution,
            plan_dirty: false,
            changed: Vec::new(),
            unknown_visits: 0,
            steps: 0,
            replans: 0,
        })
    }

    pub fn planner(&self) -> &Planner {
        &self.planner
    }

    pub fn store(&self) -> &ExperienceStore {
        &self.store
    }

    pub fn model(&self) -> &KnownMdpModel {
        &self.model
    }

    pub fn kernel(&self) -> &TransitionKernel {
        &self.kernel
    }

    pub fn solution(&self) -> &ValueSolution {
        &self.solution
    }

    pub fn plan_dirty(&self) -> bool {
        self.plan_dirty
    }

    /// Samples recorded while their tuple was still unknown.
    pub fn unknown_visits(&self) -> usize {
        self.unknown_visits
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn replans(&self) -> usize {
        self.replans
    }

    /// Re-solves if the model changed since the last plan.
    pub fn replan(&mut self) -> Result<()> {
        if !self.plan_dirty {
            return Ok(());
        }
        self.changed.sort_by_key(|&(t, a)| (t.0, a.0));
        self.changed.dedup();
        self.planner
            .refresh_kernel(&mut self.kernel, &self.model, &self.changed)?;
        let warm = self.cfg.warm_start.then_some(&self.solution);
        self.solution = self
            .planner
            .solve(&self.kernel, self.cfg.tol, self.cfg.max_iters, warm)?;
        self.changed.clear();
        self.plan_dirty = false;
        self.replans += 1;
        Ok(())
    }

    pub fn act(&mut self, s: &State) -> Result<ActionId> {
        self.replan()?;
        self.planner.greedy_action(s.as_slice(), &self.solution, &self.kernel)
    }

    pub fn observe(&mut self, s: &State, a: ActionId, s_next: &State) -> Result<RecordOutcome> {
        if a.0 >= self.planner.spec().n_actions {
            return Err(CorlError::Config(format!("unknown action {a}")));
        }
        let sample = TransitionSample::new(self.planner.spec(), s.clone(), a, s_next.clone())?;
        let out = self.store.record(&sample)?;
        self.steps += 1;
        if out.was_unknown {
            self.unknown_visits += 1;
        }
        if self.store.is_known(out.type_id, out.action) {
            let m = self.store.model_for(out.type_id, out.action)?;
            self.model.set(out.type_id, out.action, m);
            self.changed.push((out.type_id, out.action));
            self.plan_dirty = true;
        }
        Ok(out)
    }

    /// Replaces the model by `dynamics` (indexed `type * n_actions + action`)
    /// and re-plans from scratch.
    pub fn install_true_model(&mut self, dynamics: &[DynamicsParams]) -> Result<()> {
        self.model = KnownMdpModel::from_dynamics(self.planner.spec().clone(), dynamics)?;
        self.kernel = self.planner.precompute_kernel(&self.model)?;
        self.solution = self
            .planner
            .solve(&self.kernel, self.cfg.tol, self.cfg.max_iters, None)?;
        self.changed.clear();
        self.plan_dirty = false;
        Ok(())
    }

    pub fn value_at(&mut self, s: &State) -> Result<f64> {
        self.replan()?;
        self.planner.value_at(s.as_slice(), &self.solution)
    }

    pub fn tuple_known(&self, t: TypeId, a: ActionId) -> bool {
        matches!(self.model.tuple(t, a), TupleModel::Known(_))
    }
}

impl Controller for CorlAgent {
    fn act(&mut self, s: &State) -> Result<ActionId> {
        CorlAgent::act(self, s)
    }

    fn observe(&mut self, s: &State, a: ActionId, s_next: &State) -> Result<()> {
        CorlAgent::observe(self, s, a, s_next).map(|_| ())
    }

    fn known_tuples(&self) -> usize {
        self.model.known_count()
    }

    fn plan_residual(&self) -> f64 {
        self.solution.residual
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    use crate::bounds::{n_at_schedule, PacConfig};
    use crate::planner::{build_grid, GridOptions};
    use crate::types::{BoxRegion, FnReward, MdpSpec, TypeGrid};
    use approx::assert_relative_eq;

    fn spec(gamma: f64) -> Arc<MdpSpec> {
        let region = BoxRegion::new(vec![0.0], vec![4.0]).unwrap();
        Arc::new(MdpSpec {
            n_dim: 1,
            n_actions: 2,
            n_types: 2,
            gamma,
            reward: Arc::new(FnReward::new(|s: &[f64], _| s[0] / 4.0, (0.0, 1.0))),
            type_map: TypeGrid::new(region.clone(), vec![2], vec![TypeId(0), TypeId(1)]).unwrap(),
            sigma_min: 0.01,
            b_beta: 2.0,
            b_sigma: 1.0,
            bounds: region,
            angular_dims: vec![],
        })
    }

    fn agent(n_at: usize) -> Result<CorlAgent> {
        let spec = spec(0.9);
        let grid = build_grid(&spec.bounds, &[0.25], &[0.2], &GridOptions::default())?;
        let planner = Planner::new(spec, grid)?;
        CorlAgent::new(
            planner,
            AgentConfig {
                n_at,
                tol: 1e-8,
                ..AgentConfig::default()
            },
        )
    }

    fn st(x: f64) -> State {
        State::from_slice(&[x]).unwrap()
    }

    fn dyns() -> Vec<DynamicsParams> {
        [(-0.5, 0.01), (0.5, 0.01), (-0.5, 0.02), (0.5, 0.02)]
            .iter()
            .map(|&(b, v)| DynamicsParams::diagonal(vec![b], &[v]).unwrap())
            .collect()
    }

    #[test]
    fn fresh_agent_is_fully_optimistic() {
        let mut a = agent(4).unwrap();
        let sol = a.solution().clone();
        for &q in &sol.q {
            assert_relative_eq!(q, 10.0, max_relative = 1e-12);
        }
        for x in [0.0, 1.3, 2.0, 4.0] {
            assert_eq!(a.act(&st(x)).unwrap(), ActionId(0));
        }
        // interior points carry the full calibrated kernel sum
        assert!((a.value_at(&st(2.0)).unwrap() - 10.0).abs() < 0.05);
    }

    #[test]
    fn threshold_of_one_is_rejected() {
        assert!(agent(1).is_err());
    }

    #[test]
    fn scheduled_threshold_is_accepted() {
        let cfg = PacConfig {
            n_dim: 1,
            epsilon: 0.5,
            gamma: 0.5,
            sigma_min: 0.5,
            ..PacConfig::default()
        };
        let n = n_at_schedule(&cfg).unwrap();
        assert!(n >= 2);
        agent(n as usize).unwrap();
    }

    #[test]
    fn fourth_observation_makes_tuple_known() {
        let mut a = agent(4).unwrap();
        for k in 0..3 {
            let out = a.observe(&st(1.0), ActionId(1), &st(1.5 + 0.01 * k as f64)).unwrap();
            assert!(!out.became_known);
            assert!(!a.plan_dirty());
        }
        let out = a.observe(&st(1.0), ActionId(1), &st(1.52)).unwrap();
        assert!(out.became_known);
        assert!(a.plan_dirty());
        a.act(&st(1.0)).unwrap();
        assert!(!a.plan_dirty());
        a.observe(&st(1.0), ActionId(1), &st(1.49)).unwrap();
        assert!(a.plan_dirty(), "known tuple estimates refresh");
        assert_eq!(a.unknown_visits(), 4);
    }

    #[test]
    fn dominant_action_wins_and_queries_repeat() {
        let mut a = agent(4).unwrap();
        a.install_true_model(&dyns()).unwrap();
        let x = st(1.0);
        assert_eq!(a.act(&x).unwrap(), ActionId(1));
        assert_eq!(a.act(&x).unwrap(), ActionId(1));
    }

    #[test]
    fn installed_model_matches_plan_only_policy() {
        let mut a = agent(4).unwrap();
        a.install_true_model(&dyns()).unwrap();
        let spec = spec(0.9);
        let grid = build_grid(&spec.bounds, &[0.25], &[0.2], &GridOptions::default()).unwrap();
        let p = Planner::new(spec.clone(), grid).unwrap();
        let model = KnownMdpModel::from_dynamics(spec, &dyns()).unwrap();
        let k = p.precompute_kernel(&model).unwrap();
        let sol = p.solve(&k, 1e-8, 100_000, None).unwrap();
        for i in 0..=40 {
            let x = st(i as f64 * 0.1);
            assert_eq!(a.act(&x).unwrap(), p.greedy_action(x.as_slice(), &sol, &k).unwrap());
        }
    }

    #[test]
    fn warm_and_cold_replans_agree() {
        let run = |warm: bool| {
            let spec = spec(0.9);
            let grid = build_grid(&spec.bounds, &[0.25], &[0.2], &GridOptions::default()).unwrap();
            let mut a = CorlAgent::new(
                Planner::new(spec, grid).unwrap(),
                AgentConfig {
                    n_at: 2,
                    tol: 1e-9,
                    warm_start: warm,
                    ..AgentConfig::default()
                },
            )
            .unwrap();
            for (x, u, y) in [(1.0, 1, 1.5), (1.2, 1, 1.68), (3.0, 0, 2.4), (2.5, 0, 2.05)] {
                a.observe(&st(x), ActionId(u), &st(y)).unwrap();
            }
            a.replan().unwrap();
            a.solution().v.clone()
        };
        for (w, c) in run(true).iter().zip(run(false)) {
            assert!((w - c).abs() < 1e-7);
        }
    }
}
