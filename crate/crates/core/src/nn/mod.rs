//! Parameter storage and the encoder building blocks.
//!
//! Modules only hold [`ParamId`]s into a [`ParamStore`]. A forward pass runs
//! through a [`Forward`] context, which binds parameters to graph leaves on
//! first use, carries the train/eval mode and the dropout RNG, and collects
//! running-statistics updates so they can be applied once the pass is over.

mod attention;
mod conv_module;
mod ffn;
mod layers;
mod resample;
mod residual;
mod subsampling;

pub use attention::{relative_position_table, sinusoid_table, MhaModule, PositionalEncoding};
pub use conv_module::{ConvActivation, ConvModule};
pub use ffn::FeedForwardModule;
pub use layers::{merge_scaling, LayerNorm, Linear, ScalingLayer, LN_EPS};
pub use resample::TemporalResampler;
pub use residual::{NormScheme, Residual};
pub use subsampling::{SubsamplingBlock, SubsamplingKind};

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{BatchStats, Graph, Tensor, Var};

/// Momentum of the running statistics kept by batch-stat normalization.
pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named learnable tensors plus non-learnable buffers, in creation order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, ParamId>,
    buffers: BTreeMap<String, Vec<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter name {name}");
        let id = ParamId(self.tensors.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(t);
        id
    }

    /// Truncated-normal weight with std `1/sqrt(fan_in)`.
    pub fn add_weight<R: Rng + ?Sized>(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize, rng: &mut R) -> ParamId {
        let std = (1.0 / fan_in as f64).sqrt();
        self.add(name, Tensor::truncated_normal(shape, std, rng))
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, v: Vec<f64>) {
        self.buffers.insert(name.into(), v);
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of learnable scalars.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn buffer(&self, name: &str) -> Option<&[f64]> {
        self.buffers.get(name).map(Vec::as_slice)
    }

    pub fn buffers(&self) -> &BTreeMap<String, Vec<f64>> {
        &self.buffers
    }

    /// Overwrite a buffer that already exists.
    pub fn set_buffer(&mut self, name: &str, v: Vec<f64>) -> Result<()> {
        match self.buffers.get_mut(name) {
            Some(b) if b.len() == v.len() => {
                *b = v;
                Ok(())
            }
            Some(b) => Err(Error::mismatch("set_buffer", &[b.len()], &[v.len()])),
            None => Err(Error::invalid("set_buffer", format!("unknown buffer {name}"))),
        }
    }

    /// Fold batch statistics into the running buffers.
    pub fn apply_updates(&mut self, updates: &[StatsUpdate]) -> Result<()> {
        for u in updates {
            for (key, fresh) in [(&u.mean_key, &u.stats.mean), (&u.var_key, &u.stats.var)] {
                let run = self
                    .buffers
                    .get_mut(key)
                    .ok_or_else(|| Error::invalid("apply_updates", format!("unknown buffer {key}")))?;
                run.iter_mut()
                    .zip(fresh)
                    .for_each(|(r, f)| *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * f);
            }
        }
        Ok(())
    }
}

/// Batch statistics observed during a training pass, keyed by buffer name.
#[derive(Clone, Debug)]
pub struct StatsUpdate {
    pub mean_key: String,
    pub var_key: String,
    pub stats: BatchStats,
}

/// One forward pass over a [`ParamStore`].
pub struct Forward<'s> {
    pub graph: Graph,
    store: &'s ParamStore,
    bound: Vec<Option<Var>>,
    training: bool,
    track_grads: bool,
    rng: ChaCha8Rng,
    updates: Vec<StatsUpdate>,
    capture_attention: bool,
    attention: Vec<Var>,
}

impl<'s> Forward<'s> {
    pub fn new(store: &'s ParamStore, training: bool, seed: u64) -> Self {
        Self {
            graph: Graph::new(),
            store,
            bound: vec![None; store.len()],
            training,
            track_grads: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
            updates: Vec::new(),
            capture_attention: false,
            attention: Vec::new(),
        }
    }

    /// Eval-mode pass whose parameters are constants, so nothing is kept for backward.
    pub fn inference(store: &'s ParamStore) -> Self {
        Self {
            track_grads: false,
            ..Self::new(store, false, 0)
        }
    }

    /// Continue on an existing graph with parameters already bound to
    /// `vars` (one per parameter, in store order).
    pub fn with_bindings(graph: Graph, store: &'s ParamStore, vars: &[Var], training: bool) -> Result<Self> {
        if vars.len() != store.len() {
            return Err(Error::mismatch("with_bindings", &[store.len()], &[vars.len()]));
        }
        let mut f = Self::new(store, training, 0);
        f.graph = graph;
        f.bound = vars.iter().copied().map(Some).collect();
        Ok(f)
    }

    pub fn capture_attention(mut self) -> Self {
        self.capture_attention = true;
        self
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let t = self.store.get(id).clone();
        let v = if self.track_grads {
            self.graph.leaf(t.with_requires_grad())
        } else {
            self.graph.constant(t)
        };
        self.bound[id.0] = Some(v);
        v
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.graph.constant(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.graph.value(v)
    }

    /// Inverted dropout in training mode, identity in eval mode.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        if !self.training || rate == 0.0 {
            return Ok(x);
        }
        self.graph.dropout(x, rate, &mut self.rng)
    }

    pub(crate) fn push_stats(&mut self, u: StatsUpdate) {
        self.updates.push(u);
    }

    pub fn stats_updates(&self) -> &[StatsUpdate] {
        &self.updates
    }

    pub fn take_stats_updates(&mut self) -> Vec<StatsUpdate> {
        std::mem::take(&mut self.updates)
    }

    pub(crate) fn push_attention(&mut self, w: Var) {
        if self.capture_attention {
            self.attention.push(w);
        }
    }

    /// Per-head attention weights captured so far, in execution order.
    pub fn attention_weights(&self) -> &[Var] {
        &self.attention
    }

    /// Gradient of `loss` for every parameter in store order; zero for
    /// parameters the loss does not touch.
    pub fn param_grads(&self, loss: Var) -> Result<Vec<Vec<f64>>> {
        let grads = self.graph.backward(loss)?;
        Ok(self
            .store
            .ids()
            .map(|id| match self.bound[id.0] {
                Some(v) => grads.wrt(v),
                None => vec![0.0; self.store.get(id).numel()],
            })
            .collect())
    }

    pub fn into_graph(self) -> Graph {
        self.graph
    }
}
