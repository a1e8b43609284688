//! First-order optimizers over [`VarStore`] parameters.
//!
//! Each optimizer owns the id list it manages and keeps per-parameter state
//! aligned with that list, so state survives freeze/unfreeze toggles and can
//! be checkpointed by name for bit-exact resume.

use crate::autodiff::{Grads, VarId, VarStore};
use crate::data::Checkpoint;
use crate::tensor::{s, Scalar};

/// Adam with bias correction; the update at step t is
/// p -= lr * m_hat / (sqrt(v_hat) + eps).
pub struct Adam<T: Scalar> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    ids: Vec<VarId>,
    /// (first moment, second moment) per id, allocated on first use.
    state: Vec<Option<(Vec<T>, Vec<T>)>>,
    step_count: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64, beta1: f64, beta2: f64, ids: Vec<VarId>) -> Self {
        assert!(lr > 0.0 && (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2));
        let state = ids.iter().map(|_| None).collect();
        Adam { lr, beta1, beta2, eps: 1e-8, ids, state, step_count: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update over all managed ids that are trainable and have a grad.
    pub fn step(&mut self, store: &mut VarStore<T>, grads: &Grads<T>) {
        self.step_count += 1;
        let c1 = 1.0 - self.beta1.powi(self.step_count as i32);
        let c2 = 1.0 - self.beta2.powi(self.step_count as i32);
        let (b1, b2) = (s::<T>(self.beta1), s::<T>(self.beta2));
        let (ob1, ob2) = (s::<T>(1.0 - self.beta1), s::<T>(1.0 - self.beta2));
        for (slot, &id) in self.ids.iter().enumerate() {
            if !store.trainable(id) {
                continue;
            }
            let g = match grads.get(id) {
                Some(g) => g,
                None => continue,
            };
            let n = g.numel();
            let (m, v) = self.state[slot].get_or_insert_with(|| (vec![T::ZERO; n], vec![T::ZERO; n]));
            let p = store.value_mut(id);
            assert_eq!(p.numel(), n, "grad shape drifted");
            let pd = p.data_mut();
            let gd = g.data();
            for i in 0..n {
                m[i] = b1 * m[i] + ob1 * gd[i];
                v[i] = b2 * v[i] + ob2 * gd[i] * gd[i];
                let m_hat = m[i].to_f64() / c1;
                let v_hat = v[i].to_f64() / c2;
                pd[i] = pd[i] - s::<T>(self.lr * m_hat / (v_hat.sqrt() + self.eps));
            }
        }
    }

    /// Serializes moments under `{prefix}/m/{name}` and `{prefix}/v/{name}`.
    pub fn state_into(&self, ckpt: &mut Checkpoint, prefix: &str, store: &VarStore<T>) {
        for (slot, &id) in self.ids.iter().enumerate() {
            if let Some((m, v)) = &self.state[slot] {
                let name = store.name(id);
                let shape = vec![m.len()];
                ckpt.insert(&format!("{prefix}/m/{name}"), shape.clone(), m.iter().map(|&x| x.to_f64() as f32).collect());
                ckpt.insert(&format!("{prefix}/v/{name}"), shape, v.iter().map(|&x| x.to_f64() as f32).collect());
            }
        }
    }

    /// Restores moments saved by [`Adam::state_into`]; absent blobs leave the
    /// slot unallocated (a fresh parameter).
    pub fn state_from(&mut self, ckpt: &Checkpoint, prefix: &str, store: &VarStore<T>, step_count: u64) {
        self.step_count = step_count;
        for (slot, &id) in self.ids.iter().enumerate() {
            let name = store.name(id);
            let m = ckpt.get(&format!("{prefix}/m/{name}"));
            let v = ckpt.get(&format!("{prefix}/v/{name}"));
            if let (Some((_, m)), Some((_, v))) = (m, v) {
                self.state[slot] = Some((
                    m.iter().map(|&x| T::from_f64(x as f64)).collect(),
                    v.iter().map(|&x| T::from_f64(x as f64)).collect(),
                ));
            }
        }
    }
}

/// SGD with momentum, dampening, and L2 weight decay. First momentum step
/// seeds the buffer with the raw gradient; later steps use
/// buf = mu * buf + (1 - dampening) * g.
pub struct Sgd<T: Scalar> {
    pub lr: f64,
    pub momentum: f64,
    pub dampening: f64,
    pub weight_decay: f64,
    ids: Vec<VarId>,
    buffers: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(lr: f64, momentum: f64, dampening: f64, weight_decay: f64, ids: Vec<VarId>) -> Self {
        assert!(lr > 0.0 && momentum >= 0.0 && weight_decay >= 0.0);
        let buffers = ids.iter().map(|_| None).collect();
        Sgd { lr, momentum, dampening, weight_decay, ids, buffers }
    }

    pub fn step(&mut self, store: &mut VarStore<T>, grads: &Grads<T>) {
        let mu = s::<T>(self.momentum);
        let damp = s::<T>(1.0 - self.dampening);
        let wd = s::<T>(self.weight_decay);
        let lr = s::<T>(self.lr);
        for (slot, &id) in self.ids.iter().enumerate() {
            if !store.trainable(id) {
                continue;
            }
            let g = match grads.get(id) {
                Some(g) => g,
                None => continue,
            };
            let n = g.numel();
            let p = store.value_mut(id);
            assert_eq!(p.numel(), n, "grad shape drifted");
            let pd = p.data_mut();
            let gd = g.data();
            match (&mut self.buffers[slot], self.momentum > 0.0) {
                (buf @ None, true) => {
                    let seeded: Vec<T> = (0..n).map(|i| gd[i] + wd * pd[i]).collect();
                    for i in 0..n {
                        pd[i] = pd[i] - lr * seeded[i];
                    }
                    *buf = Some(seeded);
                }
                (Some(buf), true) => {
                    for i in 0..n {
                        let g_eff = gd[i] + wd * pd[i];
                        buf[i] = mu * buf[i] + damp * g_eff;
                        pd[i] = pd[i] - lr * buf[i];
                    }
                }
                (_, false) => {
                    for i in 0..n {
                        pd[i] = pd[i] - lr * (gd[i] + wd * pd[i]);
                    }
                }
            }
        }
    }
}

/// Cuts the learning rate by `factor` once a monitored metric has gone
/// `patience` consecutive epochs without improving.
pub struct Plateau {
    pub factor: f64,
    pub patience: usize,
    /// Larger metric values count as improvement when set.
    pub higher_is_better: bool,
    best: Option<f64>,
    stale: usize,
}

impl Plateau {
    pub fn new(factor: f64, patience: usize, higher_is_better: bool) -> Self {
        assert!(factor > 0.0 && factor < 1.0 && patience > 0);
        Plateau { factor, patience, higher_is_better, best: None, stale: 0 }
    }

    /// Records one epoch's metric; returns the lr multiplier to apply now
    /// (1.0 or `factor`).
    pub fn observe(&mut self, metric: f64) -> f64 {
        let improved = match self.best {
            None => true,
            Some(b) => {
                if self.higher_is_better {
                    metric > b
                } else {
                    metric < b
                }
            }
        };
        if improved {
            self.best = Some(metric);
            self.stale = 0;
            return 1.0;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            self.stale = 0;
            return self.factor;
        }
        1.0
    }
}
