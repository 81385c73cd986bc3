use std::collections::HashMap;

use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    /// Buffers (running statistics, power-iteration vectors) are stored and
    /// checkpointed but never receive gradients.
    pub trainable: bool,
}

/// Ordered, named collection of a network's parameters and buffers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.push(name.into(), value, true)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.push(name.into(), value, false)
    }

    fn push(&mut self, name: String, value: Tensor, trainable: bool) -> ParamId {
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.entries.push(ParamEntry {
            name,
            value,
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(|id| self.entries[id.0].trainable)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.len())
            .sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics for normalization, power iteration advances.
    Train,
    /// Running statistics, frozen power-iteration vectors.
    Eval,
}

/// A forward pass of one network onto a tape.
///
/// Parameters are recorded on the tape lazily, the first time a layer asks
/// for them, so several networks can share one tape (generator output fed
/// into the discriminator) while each keeps its own [`Bindings`].
pub struct Forward<'a> {
    pub tape: &'a mut Tape,
    store: &'a mut ParamStore,
    bound: HashMap<ParamId, Var>,
    mode: Mode,
    frozen: bool,
}

impl<'a> Forward<'a> {
    pub fn new(tape: &'a mut Tape, store: &'a mut ParamStore, mode: Mode) -> Self {
        Forward {
            tape,
            store,
            bound: HashMap::new(),
            mode,
            frozen: false,
        }
    }

    /// Parameters are recorded as constants: no gradient flows to them.
    pub fn frozen(mut self) -> Self {
        self.frozen = true;
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_train(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        self.store
    }

    /// The tape variable holding parameter `id`.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let entry = &self.store.entries[id.0];
        let value = entry.value.clone();
        let v = if entry.trainable && !self.frozen {
            self.tape.leaf(value)
        } else {
            self.tape.constant(value)
        };
        self.bound.insert(id, v);
        v
    }

    /// Uses an existing tape variable for parameter `id` instead of
    /// recording the stored value.
    pub fn bind(&mut self, id: ParamId, v: Var) {
        self.bound.insert(id, v);
    }

    pub fn finish(self) -> Bindings {
        let mut pairs: Vec<(ParamId, Var)> = self.bound.into_iter().collect();
        pairs.sort();
        Bindings { pairs }
    }
}

/// Which tape variable each parameter was recorded as.
#[derive(Clone, Debug, Default)]
pub struct Bindings {
    pairs: Vec<(ParamId, Var)>,
}

impl Bindings {
    pub fn var(&self, id: ParamId) -> Option<Var> {
        self.pairs.iter().find(|(p, _)| *p == id).map(|&(_, v)| v)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.pairs.iter().copied()
    }
}
