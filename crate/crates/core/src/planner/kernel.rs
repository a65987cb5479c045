use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::Result;
use crate::estimation::TupleModel;
use crate::planner::grid::for_each_product;
use crate::planner::{KnownMdpModel, Planner};
use crate::types::{wrap_angle, ActionId, Gaussian, TypeId};

/// Closed-form transition weights out of one source point for one action.
#[derive(Clone, Debug, PartialEq)]
pub enum KernelRow {
    /// The source is a terminal point and is never backed up.
    Terminal,
    /// The source's (type, action) tuple is unknown.
    Optimistic,
    Known {
        /// Mass landing on terminal points times their terminal values.
        terminal_reward: f64,
        /// `(destination, w_f N(mu_f; mu + beta, Sigma + Sigma_f))` for
        /// non-terminal destinations.
        entries: Vec<(u32, f64)>,
    },
}

impl KernelRow {
    /// Total transition mass including terminal destinations.
    pub fn mass(&self, terminal_mass: f64) -> f64 {
        match self {
            KernelRow::Known { entries, .. } => entries.iter().map(|e| e.1).sum::<f64>() + terminal_mass,
            _ => 0.0,
        }
    }
}

/// Gaussian `N(beta, Sigma_at + Sigma_f)` of one known tuple.
#[derive(Clone, Debug)]
pub(crate) struct TupleKernel {
    beta: Vec<f64>,
    gauss: Gaussian,
    radius: Vec<f64>,
}

/// Transition rows for every (action, grid point), plus the per-tuple
/// Gaussians used for one-step lookahead at arbitrary states.
#[derive(Clone, Debug)]
pub struct TransitionKernel {
    n_points: usize,
    rows: Vec<KernelRow>,
    terminal_mass: Vec<f64>,
    tuples: Vec<Option<TupleKernel>>,
    /// Rows whose mass exceeded 1 and were scaled back.
    pub rescaled_rows: usize,
}

pub(crate) struct RowOutput {
    pub terminal_reward: f64,
    pub terminal_mass: f64,
    pub entries: Vec<(u32, f64)>,
    pub rescaled: bool,
}

impl TransitionKernel {
    pub fn row(&self, a: ActionId, f: usize) -> &KernelRow {
        &self.rows[a.0 * self.n_points + f]
    }

    /// Mass of the row that lands on terminal points.
    pub fn terminal_mass(&self, a: ActionId, f: usize) -> f64 {
        self.terminal_mass[a.0 * self.n_points + f]
    }

    pub fn row_mass(&self, a: ActionId, f: usize) -> f64 {
        self.row(a, f).mass(self.terminal_mass(a, f))
    }

    pub(crate) fn tuple(&self, idx: usize) -> Option<&TupleKernel> {
        self.tuples[idx].as_ref()
    }

    pub fn is_known(&self, idx: usize) -> bool {
        self.tuples[idx].is_some()
    }
}

impl Planner {
    fn tuple_kernel(&self, m: &TupleModel) -> Result<Option<TupleKernel>> {
        let TupleModel::Known(p) = m else {
            return Ok(None);
        };
        let grid = &self.grid;
        let n = grid.dim();
        let mut cov: DMatrix<f64> = p.sigma.clone();
        for i in 0..n {
            let s = grid.kernel_sigma()[i];
            cov[(i, i)] += s * s;
        }
        let gauss = Gaussian::new(&cov)?;
        let radius = (0..n).map(|i| grid.cutoff() * cov[(i, i)].sqrt()).collect();
        Ok(Some(TupleKernel {
            beta: p.beta.iter().copied().collect(),
            gauss,
            radius,
        }))
    }

    /// Row of transition weights from state `x` under tuple kernel `tk`.
    pub(crate) fn row_from(&self, x: &[f64], tk: &TupleKernel) -> RowOutput {
        let grid = &self.grid;
        let n = grid.dim();
        let mut lists = Vec::with_capacity(n);
        let mut buf = Vec::new();
        for (i, &xi) in x.iter().enumerate().take(n) {
            let mut m = xi + tk.beta[i];
            if grid.axes()[i].periodic {
                m = wrap_angle(m);
            }
            grid.axes()[i].neighbours(m, tk.radius[i], &mut buf);
            // neighbours reports x - mu; the density is symmetric in the sign
            lists.push(buf.clone());
        }
        let mut out = RowOutput {
            terminal_reward: 0.0,
            terminal_mass: 0.0,
            entries: Vec::new(),
            rescaled: false,
        };
        let weights = grid.weights();
        for_each_product(&lists, |idx, diffs| {
            let f = grid.flat_index(idx);
            let e = weights[f] * tk.gauss.density_of_diff(diffs);
            match self.terminal[f] {
                Some(tv) => {
                    out.terminal_reward += e * tv;
                    out.terminal_mass += e;
                }
                None => out.entries.push((f as u32, e)),
            }
        });
        let total: f64 = out.terminal_mass + out.entries.iter().map(|e| e.1).sum::<f64>();
        if total > 1.0 {
            let scale = 1.0 / total;
            out.terminal_reward *= scale;
            out.terminal_mass *= scale;
            for e in &mut out.entries {
                e.1 *= scale;
            }
            out.rescaled = true;
        }
        out
    }

    fn build_row(&self, tuples: &[Option<TupleKernel>], a: usize, f: usize) -> (KernelRow, f64, bool) {
        if self.terminal[f].is_some() {
            return (KernelRow::Terminal, 0.0, false);
        }
        let t = self.point_type[f].expect("non-terminal points carry a type");
        let idx = t.0 * self.spec.n_actions + a;
        match &tuples[idx] {
            None => (KernelRow::Optimistic, 0.0, false),
            Some(tk) => {
                let r = self.row_from(&self.grid.point(f), tk);
                (
                    KernelRow::Known {
                        terminal_reward: r.terminal_reward,
                        entries: r.entries,
                    },
                    r.terminal_mass,
                    r.rescaled,
                )
            }
        }
    }

    /// Precomputes every transition row for `model`.
    pub fn precompute_kernel(&self, model: &KnownMdpModel) -> Result<TransitionKernel> {
        let tuples = model
            .tuples()
            .iter()
            .map(|m| self.tuple_kernel(m))
            .collect::<Result<Vec<_>>>()?;
        let n_points = self.grid.len();
        let n_actions = self.spec.n_actions;
        let built: Vec<(KernelRow, f64, bool)> = (0..n_actions * n_points)
            .into_par_iter()
            .map(|k| self.build_row(&tuples, k / n_points, k % n_points))
            .collect();
        let rescaled_rows = built.iter().filter(|b| b.2).count();
        let (rows, terminal_mass) = built.into_iter().map(|(r, m, _)| (r, m)).unzip();
        Ok(TransitionKernel {
            n_points,
            rows,
            terminal_mass,
            tuples,
            rescaled_rows,
        })
    }

    /// Recomputes only the rows belonging to `changed` tuples.
    pub fn refresh_kernel(
        &self,
        kernel: &mut TransitionKernel,
        model: &KnownMdpModel,
        changed: &[(TypeId, ActionId)],
    ) -> Result<()> {
        for &(t, a) in changed {
            let idx = self.spec.tuple_index(t, a);
            kernel.tuples[idx] = self.tuple_kernel(model.tuple(t, a))?;
        }
        let n_points = self.grid.len();
        let targets: Vec<usize> = changed
            .iter()
            .flat_map(|&(t, a)| {
                self.sources_of_type(t)
                    .iter()
                    .map(move |&f| a.0 * n_points + f)
                    .collect::<Vec<_>>()
            })
            .collect();
        let built: Vec<(usize, (KernelRow, f64, bool))> = targets
            .par_iter()
            .map(|&k| (k, self.build_row(&kernel.tuples, k / n_points, k % n_points)))
            .collect();
        for (k, (row, mass, rescaled)) in built {
            kernel.rows[k] = row;
            kernel.terminal_mass[k] = mass;
            if rescaled {
                kernel.rescaled_rows += 1;
            }
        }
        Ok(())
    }
}
