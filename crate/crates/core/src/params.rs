//! Flat parameter storage and the per-forward binding context.
//!
//! Layers own [`ParamId`]s into a [`ParamStore`]; a [`Ctx`] binds every
//! stored tensor to a tape leaf for one forward pass and collects batch-norm
//! running-statistic updates produced in training mode.

use crate::autodiff::{grad_check_many, GradCheckReport, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Rng, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Learnable, updated by the optimizer.
    Weight,
    /// Running statistics; saved with the model but never differentiated.
    Buffer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: Tensor,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, kind: ParamKind, tensor: Tensor) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.into(),
            kind,
            tensor,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn weight(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.add(name, ParamKind::Weight, tensor)
    }

    pub fn buffer(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.add(name, ParamKind::Buffer, tensor)
    }

    /// Fan-in scaled uniform init: `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn fan_in_uniform(&mut self, name: impl Into<String>, shape: Shape, rng: &mut Rng) -> ParamId {
        let fan_in = (shape[1] * shape[2] * shape[3]).max(1) as f64;
        let bound = 1.0 / fan_in.sqrt();
        self.weight(name, Tensor::rand_uniform(shape, -bound, bound, rng))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Number of learnable scalars.
    pub fn num_weights(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Weight)
            .map(|e| e.tensor.numel())
            .sum()
    }

    pub fn num_buffers(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Buffer)
            .map(|e| e.tensor.numel())
            .sum()
    }

    /// Replace one tensor, keeping its shape.
    pub fn set(&mut self, id: ParamId, tensor: Tensor) -> Result<()> {
        let slot = &mut self.entries[id.0];
        if slot.tensor.shape() != tensor.shape() {
            return Err(Error::ShapeMismatch {
                op: "ParamStore::set",
                left: slot.tensor.shape(),
                right: tensor.shape(),
            });
        }
        slot.tensor = tensor;
        Ok(())
    }

    /// Tensors in declaration order, e.g. to feed a gradient check.
    pub fn tensors(&self) -> Vec<Tensor> {
        self.entries.iter().map(|e| e.tensor.clone()).collect()
    }
}

/// A pending running-statistic update for one buffer.
#[derive(Clone, Debug)]
pub struct BufferUpdate {
    pub id: ParamId,
    pub value: Tensor,
}

/// Everything a layer needs during one forward pass.
pub struct Ctx<'a> {
    pub tape: &'a mut Tape,
    params: Vec<Var>,
    store: Option<&'a ParamStore>,
    pub training: bool,
    updates: Vec<BufferUpdate>,
}

impl<'a> Ctx<'a> {
    /// Bind every stored tensor as a tape leaf; weights are differentiable.
    pub fn bind(tape: &'a mut Tape, store: &'a ParamStore, training: bool) -> Self {
        let params = store
            .entries
            .iter()
            .map(|e| tape.leaf(e.tensor.clone(), e.kind == ParamKind::Weight))
            .collect();
        Self {
            tape,
            params,
            store: Some(store),
            training,
            updates: Vec::new(),
        }
    }

    /// Use caller-created leaves, one per store entry in declaration order.
    pub fn with_vars(tape: &'a mut Tape, params: Vec<Var>, training: bool) -> Self {
        Self {
            tape,
            params,
            store: None,
            training,
            updates: Vec::new(),
        }
    }

    pub fn param(&self, id: ParamId) -> Var {
        self.params[id.0]
    }

    pub fn params(&self) -> &[Var] {
        &self.params
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        match self.store {
            Some(s) => s.get(id),
            None => self.tape.value(self.params[id.0]),
        }
    }

    pub(crate) fn push_update(&mut self, id: ParamId, value: Tensor) {
        self.updates.push(BufferUpdate { id, value });
    }

    pub fn take_updates(&mut self) -> Vec<BufferUpdate> {
        std::mem::take(&mut self.updates)
    }
}

pub fn apply_updates(store: &mut ParamStore, updates: Vec<BufferUpdate>) -> Result<()> {
    for u in updates {
        store.set(u.id, u.value)?;
    }
    Ok(())
}

/// Evaluate `f` once on a fresh tape and return the value of its output.
/// Buffer updates are discarded.
pub fn evaluate<F>(store: &ParamStore, training: bool, f: F) -> Result<Tensor>
where
    F: FnOnce(&mut Ctx) -> Result<Var>,
{
    let mut tape = Tape::new();
    let mut ctx = Ctx::bind(&mut tape, store, training);
    let out = f(&mut ctx)?;
    Ok(ctx.tape.value(out).clone())
}

/// Gradient check of `f` with respect to every learnable tensor in `store`
/// and every tensor in `inputs`.
///
/// The output of `f` is contracted against a fixed pseudo-random tensor so
/// that non-scalar outputs are covered. `max_coords` caps how many
/// coordinates are checked; they are drawn evenly from all candidates.
pub fn grad_check_module<F>(
    store: &ParamStore,
    inputs: &[Tensor],
    training: bool,
    max_coords: Option<usize>,
    seed: u64,
    tol: f64,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Ctx, &[Var]) -> Result<Var>,
{
    let np = store.len();
    let mut all = store.tensors();
    all.extend(inputs.iter().cloned());

    let mut coords: Vec<(usize, usize)> = Vec::new();
    for (i, t) in all.iter().enumerate() {
        if i < np && store.entries[i].kind == ParamKind::Buffer {
            continue;
        }
        coords.extend((0..t.numel()).map(|j| (i, j)));
    }
    let mut rng = Rng::new(seed);
    if let Some(cap) = max_coords {
        if coords.len() > cap {
            rng.shuffle(&mut coords);
            coords.truncate(cap);
            coords.sort_unstable();
        }
    }

    let projection = std::cell::RefCell::new(None::<Tensor>);
    grad_check_many(
        |tape, vars| {
            let out = {
                let mut ctx = Ctx::with_vars(tape, vars[..np].to_vec(), training);
                f(&mut ctx, &vars[np..])?
            };
            let shape = tape.shape(out);
            let proj = projection
                .borrow_mut()
                .get_or_insert_with(|| Tensor::rand_uniform(shape, -1.0, 1.0, &mut Rng::new(seed ^ 0x5eed)))
                .clone();
            let p = tape.constant(proj);
            let weighted = tape.mul(out, p)?;
            Ok(tape.sum(weighted))
        },
        &all,
        Some(&coords),
        1e-6,
        tol,
    )
}
