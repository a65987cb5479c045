//! Per (type, action) experience and maximum-likelihood offset dynamics.

use std::cmp::Ordering;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CorlError, Result};
use crate::types::{wrapped_diff, ActionId, DynamicsParams, MdpSpec, State, TypeId};

/// One observed transition `<s, a, s'>` together with the type of `s`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionSample {
    pub s: State,
    pub a: ActionId,
    pub s_next: State,
    pub t: TypeId,
}

impl TransitionSample {
    /// Builds a sample, looking up the type of `s` in the spec's type map.
    pub fn new(spec: &MdpSpec, s: State, a: ActionId, s_next: State) -> Result<Self> {
        let t = spec.type_of(s.as_slice())?;
        Ok(Self { s, a, s_next, t })
    }
}

/// What the planner should use for a tuple.
#[derive(Clone, Debug, PartialEq)]
pub enum TupleModel {
    Known(DynamicsParams),
    /// Not enough experience yet; plan optimistically.
    Unknown,
}

impl TupleModel {
    pub fn is_known(&self) -> bool {
        matches!(self, TupleModel::Known(_))
    }
}

/// Result of recording one sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RecordOutcome {
    pub type_id: TypeId,
    pub action: ActionId,
    pub count: usize,
    pub became_known: bool,
    /// The tuple was unknown when the sample arrived.
    pub was_unknown: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TupleRecord {
    pub type_id: TypeId,
    pub action: ActionId,
    pub threshold: usize,
    pub known: bool,
    pub offsets: Vec<Vec<f64>>,
}

impl TupleRecord {
    pub fn count(&self) -> usize {
        self.offsets.len()
    }
}

/// Transition offsets `s' - s` grouped by (type, action).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperienceStore {
    n_dim: usize,
    n_types: usize,
    n_actions: usize,
    angular_dims: Vec<usize>,
    sigma_floor_sq: f64,
    tuples: Vec<TupleRecord>,
}

impl ExperienceStore {
    /// Empty store for `spec` with a single threshold `n_at` for every tuple.
    pub fn new(spec: &MdpSpec, n_at: usize) -> Result<Self> {
        Self::with_dims(
            spec.n_dim,
            spec.n_types,
            spec.n_actions,
            n_at,
            spec.sigma_floor_sq(),
            spec.angular_dims.clone(),
        )
    }

    pub fn with_dims(
        n_dim: usize,
        n_types: usize,
        n_actions: usize,
        n_at: usize,
        sigma_floor_sq: f64,
        angular_dims: Vec<usize>,
    ) -> Result<Self> {
        if n_at < 2 {
            return Err(CorlError::Config(format!(
                "known-tuple threshold must be at least 2, got {n_at}"
            )));
        }
        if !(sigma_floor_sq > 0.0) {
            return Err(CorlError::Config("variance floor must be positive".into()));
        }
        let tuples = (0..n_types)
            .flat_map(|t| {
                (0..n_actions).map(move |a| TupleRecord {
                    type_id: TypeId(t),
                    action: ActionId(a),
                    threshold: n_at,
                    known: false,
                    offsets: Vec::new(),
                })
            })
            .collect();
        Ok(Self {
            n_dim,
            n_types,
            n_actions,
            angular_dims,
            sigma_floor_sq,
            tuples,
        })
    }

    /// Overrides the threshold of one tuple. Only allowed before the tuple is known.
    pub fn set_threshold(&mut self, t: TypeId, a: ActionId, n_at: usize) -> Result<()> {
        if n_at < 2 {
            return Err(CorlError::Config(format!(
                "known-tuple threshold must be at least 2, got {n_at}"
            )));
        }
        let idx = self.index(t, a)?;
        let rec = &mut self.tuples[idx];
        if rec.known {
            return Err(CorlError::Config(format!(
                "tuple ({t}, {a}) is already known"
            )));
        }
        rec.threshold = n_at;
        rec.known = rec.count() >= n_at;
        Ok(())
    }

    fn index(&self, t: TypeId, a: ActionId) -> Result<usize> {
        if t.0 >= self.n_types || a.0 >= self.n_actions {
            return Err(CorlError::Config(format!(
                "tuple ({t}, {a}) outside {} types x {} actions",
                self.n_types, self.n_actions
            )));
        }
        Ok(t.0 * self.n_actions + a.0)
    }

    pub fn n_dim(&self) -> usize {
        self.n_dim
    }

    pub fn n_types(&self) -> usize {
        self.n_types
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn tuple(&self, t: TypeId, a: ActionId) -> Result<&TupleRecord> {
        Ok(&self.tuples[self.index(t, a)?])
    }

    pub fn tuples(&self) -> &[TupleRecord] {
        &self.tuples
    }

    pub fn count(&self, t: TypeId, a: ActionId) -> usize {
        self.tuple(t, a).map(|r| r.count()).unwrap_or(0)
    }

    pub fn is_known(&self, t: TypeId, a: ActionId) -> bool {
        self.tuple(t, a).map(|r| r.known).unwrap_or(false)
    }

    pub fn known_count(&self) -> usize {
        self.tuples.iter().filter(|r| r.known).count()
    }

    /// Stores the offset of `sample` under its (type, action) tuple.
    pub fn record(&mut self, sample: &TransitionSample) -> Result<RecordOutcome> {
        for s in [&sample.s, &sample.s_next] {
            if s.dim() != self.n_dim {
                return Err(CorlError::DimensionMismatch {
                    expected: self.n_dim,
                    got: s.dim(),
                });
            }
        }
        let idx = self.index(sample.t, sample.a)?;
        let offset = wrapped_diff(
            sample.s_next.as_slice(),
            sample.s.as_slice(),
            &self.angular_dims,
        );
        let rec = &mut self.tuples[idx];
        let was_unknown = !rec.known;
        rec.offsets.push(offset);
        let became_known = was_unknown && rec.count() >= rec.threshold;
        if became_known {
            rec.known = true;
        }
        Ok(RecordOutcome {
            type_id: sample.t,
            action: sample.a,
            count: rec.count(),
            became_known,
            was_unknown,
        })
    }

    fn sorted_offsets(&self, t: TypeId, a: ActionId, need: usize) -> Result<Vec<&[f64]>> {
        let rec = self.tuple(t, a)?;
        if rec.count() < need {
            return Err(CorlError::NoData {
                type_id: t.0,
                action: a.0,
                have: rec.count(),
                need,
            });
        }
        let mut offs: Vec<&[f64]> = rec.offsets.iter().map(Vec::as_slice).collect();
        // fixed summation order makes the estimates independent of arrival order
        offs.sort_by(|x, y| {
            x.iter()
                .zip(y.iter())
                .map(|(p, q)| p.total_cmp(q))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
        });
        Ok(offs)
    }

    /// Mean offset over all samples of the tuple.
    pub fn estimate_beta(&self, t: TypeId, a: ActionId) -> Result<Vec<f64>> {
        let offs = self.sorted_offsets(t, a, 1)?;
        Ok(mean(&offs, self.n_dim))
    }

    /// Biased (divide-by-n) covariance of the offsets, with the diagonal
    /// clamped from below at the variance floor.
    pub fn estimate_sigma(&self, t: TypeId, a: ActionId) -> Result<DMatrix<f64>> {
        let offs = self.sorted_offsets(t, a, 2)?;
        let n = self.n_dim;
        let beta = mean(&offs, n);
        let mut sigma = DMatrix::zeros(n, n);
        for d in &offs {
            for i in 0..n {
                let di = d[i] - beta[i];
                for j in 0..=i {
                    sigma[(i, j)] += di * (d[j] - beta[j]);
                }
            }
        }
        let count = offs.len() as f64;
        for i in 0..n {
            for j in 0..=i {
                let v = sigma[(i, j)] / count;
                sigma[(i, j)] = v;
                sigma[(j, i)] = v;
            }
        }
        for i in 0..n {
            if sigma[(i, i)] < self.sigma_floor_sq {
                sigma[(i, i)] = self.sigma_floor_sq;
            }
        }
        let scale = sigma.amax().max(1.0);
        let psd = sigma
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .all(|&l| l >= -1e-12 * scale);
        if !psd {
            return Err(CorlError::Internal(format!(
                "estimated covariance for ({t}, {a}) is not positive semi-definite"
            )));
        }
        Ok(sigma)
    }

    /// Estimated dynamics when the tuple is known, otherwise [`TupleModel::Unknown`].
    pub fn model_for(&self, t: TypeId, a: ActionId) -> Result<TupleModel> {
        if !self.tuple(t, a)?.known {
            return Ok(TupleModel::Unknown);
        }
        let beta = self.estimate_beta(t, a)?;
        let sigma = self.estimate_sigma(t, a)?;
        Ok(TupleModel::Known(DynamicsParams::new(beta, sigma)?))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let store: Self = serde_json::from_str(text)?;
        store.check()?;
        Ok(store)
    }

    fn check(&self) -> Result<()> {
        if self.tuples.len() != self.n_types * self.n_actions {
            return Err(CorlError::Config("snapshot has the wrong tuple count".into()));
        }
        for (i, rec) in self.tuples.iter().enumerate() {
            if rec.type_id.0 * self.n_actions + rec.action.0 != i {
                return Err(CorlError::Config("snapshot tuples out of order".into()));
            }
            if rec.threshold < 2 {
                return Err(CorlError::Config("snapshot threshold below 2".into()));
            }
            if rec.known != (rec.count() >= rec.threshold) {
                return Err(CorlError::Config(format!(
                    "snapshot known flag inconsistent for ({}, {})",
                    rec.type_id, rec.action
                )));
            }
            if rec.offsets.iter().any(|o| o.len() != self.n_dim) {
                return Err(CorlError::Config("snapshot offset of wrong length".into()));
            }
        }
        Ok(())
    }
}

fn mean(offs: &[&[f64]], n: usize) -> Vec<f64> {
    let mut acc = vec![0.0; n];
    for d in offs {
        for (a, x) in acc.iter_mut().zip(d.iter()) {
            *a += x;
        }
    }
    let count = offs.len() as f64;
    acc.iter().map(|a| a / count).collect()
}
