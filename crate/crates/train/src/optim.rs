//! Adam over a parameter store.

use std::collections::HashMap;

use wingan_core::checkpoint::{CheckpointError, Group};
use wingan_tensor::{ParamId, ParamStore, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// Moments live in stores mirroring the trainable parameters, so they
/// checkpoint like any other group.
///
/// The update applies to stored values. A parameter read as `c·w` therefore
/// moves by `c·lr·step` in its forward-pass value.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub cfg: AdamConfig,
    pub t: u64,
    pub m: ParamStore<T>,
    pub v: ParamStore<T>,
    slots: Vec<(ParamId, ParamId)>,
}

impl<T: Real> Adam<T> {
    pub fn new(store: &ParamStore<T>, cfg: AdamConfig) -> Self {
        let mut m = ParamStore::new();
        let mut v = ParamStore::new();
        let mut slots = Vec::new();
        for (id, p) in store.trainable() {
            let z = Tensor::zeros(p.value.shape());
            let sid = m.add(p.name.clone(), z.clone(), 1.0).expect("unique names");
            v.add(p.name.clone(), z, 1.0).expect("unique names");
            slots.push((id, sid));
        }
        Self { cfg, t: 0, m, v, slots }
    }

    /// One update; parameters without a gradient see a zero gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &HashMap<ParamId, Tensor<T>>) {
        self.t += 1;
        let c = self.cfg;
        let bc1 = T::of(1.0 - c.beta1.powi(self.t as i32));
        let bc2 = T::of(1.0 - c.beta2.powi(self.t as i32));
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (one, lr, eps) = (T::one(), T::of(c.lr), T::of(c.eps));
        let k = [b1, b2, one, lr, eps, bc1, bc2];
        for i in 0..self.slots.len() {
            let (id, sid) = self.slots[i];
            match grads.get(&id) {
                Some(g) => self.apply(store, id, sid, g, k),
                None => self.apply(store, id, sid, &Tensor::zeros(store.value(id).shape()), k),
            }
        }
    }

    fn apply(&mut self, store: &mut ParamStore<T>, id: ParamId, sid: ParamId, g: &Tensor<T>, k: [T; 7]) {
        let [b1, b2, one, lr, eps, bc1, bc2] = k;
        let m = self.m.get_mut(sid).value.data_mut();
        let v = self.v.get_mut(sid).value.data_mut();
        let w = store.get_mut(id).value.data_mut();
        for i in 0..w.len() {
            let gi = g.data()[i];
            m[i] = b1 * m[i] + (one - b1) * gi;
            v[i] = b2 * v[i] + (one - b2) * gi * gi;
            let mh = m[i] / bc1;
            let vh = v[i] / bc2;
            w[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }

    pub fn groups(&self, prefix: &str) -> [Group<T>; 2] {
        [Group::from_store(&format!("{prefix}.m"), &self.m), Group::from_store(&format!("{prefix}.v"), &self.v)]
    }

    pub fn restore(&mut self, m: &Group<T>, v: &Group<T>, t: u64) -> Result<(), CheckpointError> {
        m.load_into(&mut self.m)?;
        v.load_into(&mut self.v)?;
        self.t = t;
        Ok(())
    }
}
