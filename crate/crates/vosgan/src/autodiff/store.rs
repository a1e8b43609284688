use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::tensor::{Scalar, Tensor};

/// Handle to a tensor owned by a [`VarStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VarId(pub(crate) usize);

impl VarId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// What a store slot holds: an optimizable parameter or bookkeeping state
/// such as batch-norm running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    Param,
    Stat,
}

struct Slot<T: Scalar> {
    name: String,
    value: Tensor<T>,
    kind: VarKind,
    trainable: bool,
}

/// Flat named registry of parameters and running statistics.
///
/// Networks allocate their tensors here once; graphs copy values out per
/// forward pass, optimizers write updates back, and checkpoints serialize the
/// whole store by name.
pub struct VarStore<T: Scalar> {
    slots: Vec<Slot<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Scalar> Default for VarStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> VarStore<T> {
    pub fn new() -> Self {
        VarStore { slots: Vec::new(), by_name: HashMap::new() }
    }

    fn add(&mut self, name: &str, value: Tensor<T>, kind: VarKind) -> VarId {
        assert!(!self.by_name.contains_key(name), "duplicate variable name {name:?}");
        let id = self.slots.len();
        self.by_name.insert(name.to_string(), id);
        self.slots.push(Slot {
            name: name.to_string(),
            value,
            kind,
            trainable: matches!(kind, VarKind::Param),
        });
        VarId(id)
    }

    pub fn add_param(&mut self, name: &str, value: Tensor<T>) -> VarId {
        self.add(name, value, VarKind::Param)
    }

    /// Stats are never trainable; the training loop mutates them directly.
    pub fn add_stat(&mut self, name: &str, value: Tensor<T>) -> VarId {
        self.add(name, value, VarKind::Stat)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn value(&self, id: VarId) -> &Tensor<T> {
        &self.slots[id.0].value
    }

    pub fn value_mut(&mut self, id: VarId) -> &mut Tensor<T> {
        &mut self.slots[id.0].value
    }

    pub fn name(&self, id: VarId) -> &str {
        &self.slots[id.0].name
    }

    pub fn kind(&self, id: VarId) -> VarKind {
        self.slots[id.0].kind
    }

    pub fn trainable(&self, id: VarId) -> bool {
        self.slots[id.0].trainable
    }

    pub fn set_trainable(&mut self, id: VarId, trainable: bool) {
        assert!(
            matches!(self.slots[id.0].kind, VarKind::Param) || !trainable,
            "stats cannot be made trainable"
        );
        self.slots[id.0].trainable = trainable;
    }

    /// Flips trainability for every parameter whose name starts with `prefix`.
    pub fn set_trainable_prefix(&mut self, prefix: &str, trainable: bool) {
        for slot in &mut self.slots {
            if matches!(slot.kind, VarKind::Param) && slot.name.starts_with(prefix) {
                slot.trainable = trainable;
            }
        }
    }

    pub fn id_by_name(&self, name: &str) -> Option<VarId> {
        self.by_name.get(name).copied().map(VarId)
    }

    pub fn ids(&self) -> impl Iterator<Item = VarId> + '_ {
        (0..self.slots.len()).map(VarId)
    }

    pub fn trainable_param_ids(&self) -> Vec<VarId> {
        self.ids()
            .filter(|&id| matches!(self.kind(id), VarKind::Param) && self.trainable(id))
            .collect()
    }

    pub fn param_ids(&self) -> Vec<VarId> {
        self.ids().filter(|&id| matches!(self.kind(id), VarKind::Param)).collect()
    }

    /// Total scalar count across parameters (stats excluded).
    pub fn param_count(&self) -> usize {
        self.param_ids().iter().map(|&id| self.value(id).numel()).sum()
    }

    /// Copies every slot into a store of another precision (used to replay
    /// an f32 network in f64 for gradient verification).
    pub fn cast<U: Scalar>(&self) -> VarStore<U> {
        let mut out = VarStore::new();
        for slot in &self.slots {
            let id = out.add(&slot.name, slot.value.cast::<U>(), slot.kind);
            out.set_trainable_or_stat(id, slot.trainable);
        }
        out
    }

    fn set_trainable_or_stat(&mut self, id: VarId, trainable: bool) {
        self.slots[id.0].trainable = trainable && matches!(self.slots[id.0].kind, VarKind::Param);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefix_freeze_only_touches_matching_params() {
        let mut vs: VarStore<f32> = VarStore::new();
        let a = vs.add_param("enc/0/w", Tensor::zeros(&[2]));
        let b = vs.add_param("enc/1/w", Tensor::zeros(&[2]));
        let c = vs.add_param("head/w", Tensor::zeros(&[2]));
        let s = vs.add_stat("enc/0/running_mean", Tensor::zeros(&[2]));
        vs.set_trainable_prefix("enc/", false);
        assert!(!vs.trainable(a) && !vs.trainable(b));
        assert!(vs.trainable(c));
        assert!(!vs.trainable(s), "stats start non-trainable and stay that way");
        assert_eq!(vs.trainable_param_ids(), vec![c]);
    }
}
