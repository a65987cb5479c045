use std::sync::Arc;

use crate::error::{CorlError, Result};
use crate::estimation::{ExperienceStore, TupleModel};
use crate::types::{ActionId, DynamicsParams, MdpSpec, TypeId};

/// Planning MDP: estimated dynamics for known tuples, optimism for the rest.
#[derive(Clone, Debug)]
pub struct KnownMdpModel {
    spec: Arc<MdpSpec>,
    tuples: Vec<TupleModel>,
}

impl KnownMdpModel {
    pub fn all_unknown(spec: Arc<MdpSpec>) -> Self {
        let tuples = vec![TupleModel::Unknown; spec.n_tuples()];
        Self { spec, tuples }
    }

    /// Model with the given dynamics for every tuple, indexed `t * n_actions + a`.
    pub fn from_dynamics(spec: Arc<MdpSpec>, dynamics: &[DynamicsParams]) -> Result<Self> {
        if dynamics.len() != spec.n_tuples() {
            return Err(CorlError::Config(format!(
                "expected {} dynamics entries, got {}",
                spec.n_tuples(),
                dynamics.len()
            )));
        }
        if let Some(p) = dynamics.iter().find(|p| p.dim() != spec.n_dim) {
            return Err(CorlError::DimensionMismatch {
                expected: spec.n_dim,
                got: p.dim(),
            });
        }
        let tuples = dynamics.iter().cloned().map(TupleModel::Known).collect();
        Ok(Self { spec, tuples })
    }

    pub fn from_store(spec: Arc<MdpSpec>, store: &ExperienceStore) -> Result<Self> {
        if store.n_types() != spec.n_types
            || store.n_actions() != spec.n_actions
            || store.n_dim() != spec.n_dim
        {
            return Err(CorlError::Config(
                "experience store does not match the MDP shape".into(),
            ));
        }
        let mut tuples = Vec::with_capacity(spec.n_tuples());
        for t in 0..spec.n_types {
            for a in 0..spec.n_actions {
                tuples.push(store.model_for(TypeId(t), ActionId(a))?);
            }
        }
        Ok(Self { spec, tuples })
    }

    pub fn spec(&self) -> &Arc<MdpSpec> {
        &self.spec
    }

    pub fn gamma(&self) -> f64 {
        self.spec.gamma
    }

    pub fn v_max(&self) -> f64 {
        self.spec.v_max()
    }

    pub fn tuple(&self, t: TypeId, a: ActionId) -> &TupleModel {
        &self.tuples[self.spec.tuple_index(t, a)]
    }

    pub fn tuples(&self) -> &[TupleModel] {
        &self.tuples
    }

    pub fn set(&mut self, t: TypeId, a: ActionId, m: TupleModel) {
        let i = self.spec.tuple_index(t, a);
        self.tuples[i] = m;
    }

    pub fn known_count(&self) -> usize {
        self.tuples.iter().filter(|m| m.is_known()).count()
    }
}
