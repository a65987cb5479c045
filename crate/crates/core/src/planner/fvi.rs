use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::simulation_lemma_constants;
use crate::error::{CorlError, Result};
use crate::planner::grid::KernelGrid;
use crate::planner::kernel::{KernelRow, TransitionKernel};
use crate::types::{ActionId, MdpSpec, TypeId};

/// Solver tolerance `F3 / 2` for accuracy `epsilon`.
pub fn default_tolerance(epsilon: f64, gamma: f64) -> Result<f64> {
    Ok(simulation_lemma_constants(epsilon, gamma)?.f3 / 2.0)
}

/// Q values at every grid point, stored `q[f * n_actions + a]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueSolution {
    pub n_actions: usize,
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    /// Sup-norm change of `v` after every sweep.
    pub residuals: Vec<f64>,
}

impl ValueSolution {
    pub fn q_at(&self, f: usize, a: ActionId) -> f64 {
        self.q[f * self.n_actions + a.0]
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    /// Grid coordinates, per-action q and v, one row per point.
    pub fn to_csv(&self, grid: &KernelGrid) -> String {
        let mut out = String::new();
        let coords: Vec<String> = (0..grid.dim()).map(|i| format!("x{i}")).collect();
        let qs: Vec<String> = (0..self.n_actions).map(|a| format!("q{a}")).collect();
        let _ = writeln!(out, "{},{},v", coords.join(","), qs.join(","));
        for f in 0..self.len() {
            let mut fields: Vec<String> = grid.point(f).iter().map(|x| format!("{x}")).collect();
            fields.extend((0..self.n_actions).map(|a| format!("{}", self.q_at(f, ActionId(a)))));
            fields.push(format!("{}", self.v[f]));
            let _ = writeln!(out, "{}", fields.join(","));
        }
        out
    }
}

/// Planner bound to one MDP description and one basis grid.
#[derive(Clone, Debug)]
pub struct Planner {
    pub(crate) spec: Arc<MdpSpec>,
    pub(crate) grid: KernelGrid,
    /// Terminal value of every grid point that ends an episode.
    pub(crate) terminal: Vec<Option<f64>>,
    pub(crate) point_type: Vec<Option<TypeId>>,
    sources: Vec<Vec<usize>>,
    rewards: Vec<f64>,
}

impl Planner {
    /// Tabulates types, terminal flags and rewards at every grid point.
    ///
    /// Every non-terminal point must lie inside the type map.
    pub fn new(spec: Arc<MdpSpec>, grid: KernelGrid) -> Result<Self> {
        spec.validate()?;
        if grid.dim() != spec.n_dim {
            return Err(CorlError::DimensionMismatch {
                expected: spec.n_dim,
                got: grid.dim(),
            });
        }
        let n_actions = spec.n_actions;
        let mut terminal = Vec::with_capacity(grid.len());
        let mut point_type = Vec::with_capacity(grid.len());
        let mut sources = vec![Vec::new(); spec.n_types];
        let mut rewards = vec![0.0; grid.len() * n_actions];
        for (f, p) in grid.points().enumerate() {
            let tv = spec.reward.terminal_value(&p);
            terminal.push(tv);
            if tv.is_some() {
                point_type.push(None);
                continue;
            }
            let t = spec.type_of(&p)?;
            sources[t.0].push(f);
            point_type.push(Some(t));
            for a in 0..n_actions {
                rewards[f * n_actions + a] = spec.reward.reward(&p, ActionId(a));
            }
        }
        Ok(Self {
            spec,
            grid,
            terminal,
            point_type,
            sources,
            rewards,
        })
    }

    pub fn spec(&self) -> &Arc<MdpSpec> {
        &self.spec
    }

    pub fn grid(&self) -> &KernelGrid {
        &self.grid
    }

    pub fn is_terminal_point(&self, f: usize) -> bool {
        self.terminal[f].is_some()
    }

    pub(crate) fn sources_of_type(&self, t: TypeId) -> &[usize] {
        &self.sources[t.0]
    }

    /// Solution with every non-terminal q at `V_max`, the fixed point of
    /// the all-unknown model.
    pub fn optimistic_solution(&self) -> ValueSolution {
        let n_actions = self.spec.n_actions;
        let v_max = self.spec.v_max();
        let v: Vec<f64> = self
            .terminal
            .iter()
            .map(|t| if t.is_some() { 0.0 } else { v_max })
            .collect();
        let q = v.iter().flat_map(|&x| std::iter::repeat_n(x, n_actions)).collect();
        ValueSolution {
            n_actions,
            q,
            v,
            iterations: 0,
            residual: 0.0,
            residuals: Vec::new(),
        }
    }

    /// One synchronous Bellman backup of `v`. Returns `(q, v')`.
    pub fn sweep(&self, kernel: &TransitionKernel, v: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n_actions = self.spec.n_actions;
        let gamma = self.spec.gamma;
        let v_max = self.spec.v_max();
        let per_point: Vec<(Vec<f64>, f64)> = (0..self.grid.len())
            .into_par_iter()
            .map(|f| {
                let mut q = vec![0.0; n_actions];
                if self.terminal[f].is_some() {
                    return (q, 0.0);
                }
                for (a, qa) in q.iter_mut().enumerate() {
                    *qa = match kernel.row(ActionId(a), f) {
                        KernelRow::Terminal => 0.0,
                        KernelRow::Optimistic => v_max,
                        KernelRow::Known {
                            terminal_reward,
                            entries,
                        } => {
                            let ev: f64 = entries.iter().map(|&(d, e)| e * v[d as usize]).sum();
                            self.rewards[f * n_actions + a] + terminal_reward + gamma * ev
                        }
                    };
                }
                let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (q, best)
            })
            .collect();
        let mut q = Vec::with_capacity(self.grid.len() * n_actions);
        let mut v_new = Vec::with_capacity(self.grid.len());
        for (row, best) in per_point {
            q.extend(row);
            v_new.push(best);
        }
        (q, v_new)
    }

    /// Iterates sweeps from `v = 0` (or `warm`) until the sup-norm change
    /// drops to `tol`.
    pub fn solve(
        &self,
        kernel: &TransitionKernel,
        tol: f64,
        max_iters: usize,
        warm: Option<&ValueSolution>,
    ) -> Result<ValueSolution> {
        if !(tol > 0.0) {
            return Err(CorlError::Config(format!("tolerance must be positive, got {tol}")));
        }
        let mut v = match warm {
            Some(w) if w.v.len() == self.grid.len() => w.v.clone(),
            _ => vec![0.0; self.grid.len()],
        };
        let mut residuals = Vec::new();
        for it in 1..=max_iters {
            let (q, v_new) = self.sweep(kernel, &v);
            let r = v
                .iter()
                .zip(&v_new)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            residuals.push(r);
            v = v_new;
            if r <= tol {
                return Ok(ValueSolution {
                    n_actions: self.spec.n_actions,
                    q,
                    v,
                    iterations: it,
                    residual: r,
                    residuals,
                });
            }
        }
        Err(CorlError::NonConvergence {
            iterations: max_iters,
            residual: residuals.last().copied().unwrap_or(f64::INFINITY),
        })
    }

    /// `max_a sum_f w_f N(s; mu_f, Sigma_f) q(mu_f, a)`.
    pub fn value_at(&self, s: &[f64], sol: &ValueSolution) -> Result<f64> {
        self.check_in_grid(s)?;
        let n_actions = self.spec.n_actions;
        let mut acc = vec![0.0; n_actions];
        self.grid.for_each_kernel(s, |f, k| {
            for (a, x) in acc.iter_mut().enumerate() {
                *x += k * sol.q[f * n_actions + a];
            }
        });
        Ok(acc.into_iter().fold(f64::NEG_INFINITY, f64::max))
    }

    /// One-step lookahead q values at the actual state `s`.
    pub fn q_at(&self, s: &[f64], sol: &ValueSolution, kernel: &TransitionKernel) -> Result<Vec<f64>> {
        self.check_in_grid(s)?;
        let t = self.spec.type_of(s)?;
        let n_actions = self.spec.n_actions;
        let gamma = self.spec.gamma;
        let mut q = Vec::with_capacity(n_actions);
        for a in 0..n_actions {
            let idx = self.spec.tuple_index(t, ActionId(a));
            match kernel.tuple(idx) {
                None => q.push(self.spec.v_max()),
                Some(tk) => {
                    let row = self.row_from(s, tk);
                    let ev: f64 = row.entries.iter().map(|&(d, e)| e * sol.v[d as usize]).sum();
                    q.push(self.spec.reward.reward(s, ActionId(a)) + row.terminal_reward + gamma * ev);
                }
            }
        }
        Ok(q)
    }

    /// Argmax of [`Planner::q_at`], ties going to the lowest action index.
    pub fn greedy_action(&self, s: &[f64], sol: &ValueSolution, kernel: &TransitionKernel) -> Result<ActionId> {
        let q = self.q_at(s, sol, kernel)?;
        let mut best = 0;
        for a in 1..q.len() {
            if q[a] > q[best] {
                best = a;
            }
        }
        Ok(ActionId(best))
    }

    fn check_in_grid(&self, s: &[f64]) -> Result<()> {
        if s.len() != self.grid.dim() {
            return Err(CorlError::DimensionMismatch {
                expected: self.grid.dim(),
                got: s.len(),
            });
        }
        if !self.grid.contains(s) {
            return Err(CorlError::OutOfRegion { state: s.to_vec() });
        }
        Ok(())
    }
}
