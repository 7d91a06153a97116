use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::{Mutex, RwLock};

use super::{A3cError, Hyperparams};
use crate::nn::{Architecture, CheckpointSet, FactoredGrads, Gradients, NetworkParams, Tensor};

struct Slot {
    params: Tensor<f32>,
    sq_avg: Vec<f32>,
}

struct Entry {
    arch: Architecture,
    /// Updates hold it shared; quiesced snapshots hold it exclusively.
    gate: RwLock<()>,
    slots: Vec<Mutex<Slot>>,
    updates: AtomicU64,
}

/// Parameters and RMSProp state for every network, shared by all workers.
///
/// Each tensor is updated under its own lock, so a reader never sees half of
/// one tensor updated, but may see different tensors from different updates.
pub struct SharedParamStore {
    entries: BTreeMap<String, Entry>,
    steps: AtomicU64,
    budget: u64,
}

impl SharedParamStore {
    pub fn new(networks: &BTreeMap<String, NetworkParams<f32>>, budget: u64) -> Self {
        let entries = networks
            .iter()
            .map(|(id, p)| {
                let slots = p
                    .tensors()
                    .iter()
                    .map(|t| {
                        Mutex::new(Slot {
                            sq_avg: vec![0.0; t.len()],
                            params: t.clone(),
                        })
                    })
                    .collect();
                let entry = Entry {
                    arch: *p.arch(),
                    gate: RwLock::new(()),
                    slots,
                    updates: AtomicU64::new(0),
                };
                (id.clone(), entry)
            })
            .collect();
        SharedParamStore {
            entries,
            steps: AtomicU64::new(0),
            budget,
        }
    }

    pub fn network_ids(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    /// Global decision steps claimed so far (never above the budget).
    pub fn steps(&self) -> u64 {
        self.steps.load(Ordering::SeqCst).min(self.budget)
    }

    /// Reserves one decision step; `None` once the budget is spent. Returns
    /// the new step count.
    pub fn claim_step(&self) -> Option<u64> {
        let prev = self.steps.fetch_add(1, Ordering::SeqCst);
        (prev < self.budget).then_some(prev + 1)
    }

    pub fn updates(&self, id: &str) -> Option<u64> {
        self.entries.get(id).map(|e| e.updates.load(Ordering::SeqCst))
    }

    fn entry(&self, id: &str) -> Result<&Entry, A3cError> {
        self.entries.get(id).ok_or_else(|| A3cError::UnknownNetwork(id.to_string()))
    }

    /// Current parameters, tensor by tensor without global locking.
    pub fn snapshot(&self, id: &str) -> Result<NetworkParams<f32>, A3cError> {
        let e = self.entry(id)?;
        let tensors = e.slots.iter().map(|s| s.lock().params.clone()).collect();
        Ok(NetworkParams::from_tensors(e.arch, tensors)?)
    }

    /// As [`snapshot`](Self::snapshot), copying into `dst` without allocating.
    pub fn snapshot_into(&self, id: &str, dst: &mut NetworkParams<f32>) -> Result<(), A3cError> {
        let e = self.entry(id)?;
        if *dst.arch() != e.arch {
            return Err(crate::nn::NnError::ArchitectureMismatch(format!("snapshot target for {id} has the wrong architecture")).into());
        }
        for (slot, t) in e.slots.iter().zip(dst.tensors_mut()) {
            t.data_mut().copy_from_slice(slot.lock().params.data());
        }
        Ok(())
    }

    /// Copy of every network taken while no update is in progress.
    pub fn quiesced_snapshot(&self, step: u64) -> CheckpointSet {
        let guards: Vec<_> = self.entries.values().map(|e| e.gate.write()).collect();
        let mut set = CheckpointSet::new(step);
        for (id, e) in &self.entries {
            let tensors = e.slots.iter().map(|s| s.lock().params.clone()).collect();
            let params = NetworkParams::from_tensors(e.arch, tensors).expect("store tensors match their architecture");
            set.networks.insert(id.clone(), params);
        }
        drop(guards);
        set
    }

    /// One RMSProp step:
    /// `g² ← ρ g² + (1 − ρ) g·g`, `θ ← θ − lr · g / sqrt(g² + ε)`.
    /// With a zero learning rate the parameters are left untouched.
    pub fn apply(&self, id: &str, grads: &Gradients<f32>, hp: &Hyperparams) -> Result<(), A3cError> {
        let e = self.entry(id)?;
        if *grads.arch() != e.arch {
            return Err(crate::nn::NnError::ArchitectureMismatch(format!("gradient for {id} has the wrong architecture")).into());
        }
        let rule = Rmsprop::new(hp);
        let _gate = e.gate.read();
        for (slot, g) in e.slots.iter().zip(grads.tensors()) {
            let mut slot = slot.lock();
            let Slot { params, sq_avg } = &mut *slot;
            rule.step(params.data_mut(), sq_avg, g.data());
        }
        e.updates.fetch_add(1, Ordering::SeqCst);
        Ok(())
    }

    /// As [`apply`](Self::apply), expanding the factored block one row at a
    /// time.
    pub fn apply_factored(&self, id: &str, grads: &FactoredGrads<f32>, hp: &Hyperparams) -> Result<(), A3cError> {
        let e = self.entry(id)?;
        if *grads.arch() != e.arch {
            return Err(crate::nn::NnError::ArchitectureMismatch(format!("gradient for {id} has the wrong architecture")).into());
        }
        let rule = Rmsprop::new(hp);
        let fc = grads.fc_weight_index();
        let _gate = e.gate.read();
        for (i, (slot, g)) in e.slots.iter().zip(grads.dense()).enumerate() {
            let mut slot = slot.lock();
            let Slot { params, sq_avg } = &mut *slot;
            if i != fc {
                rule.step(params.data_mut(), sq_avg, g.data());
                continue;
            }
            let cols = params.shape()[1];
            let mut row = vec![0.0; cols];
            for (r, (p, s)) in params.data_mut().chunks_exact_mut(cols).zip(sq_avg.chunks_exact_mut(cols)).enumerate() {
                if grads.fc_row_is_zero(r) {
                    rule.decay(s);
                } else {
                    grads.fc_weight_row(r, &mut row);
                    rule.step(p, s, &row);
                }
            }
        }
        e.updates.fetch_add(1, Ordering::SeqCst);
        Ok(())
    }
}

struct Rmsprop {
    rho: f32,
    eps: f32,
    lr: f32,
}

impl Rmsprop {
    fn new(hp: &Hyperparams) -> Self {
        Rmsprop {
            rho: hp.rmsprop_decay as f32,
            eps: hp.rmsprop_epsilon as f32,
            lr: hp.learning_rate as f32,
        }
    }

    fn step(&self, params: &mut [f32], sq_avg: &mut [f32], g: &[f32]) {
        let Rmsprop { rho, eps, lr } = *self;
        if lr != 0.0 {
            for ((p, s), &gi) in params.iter_mut().zip(sq_avg.iter_mut()).zip(g) {
                *s = rho * *s + (1.0 - rho) * gi * gi;
                *p -= lr * gi / (*s + eps).sqrt();
            }
        } else {
            for (s, &gi) in sq_avg.iter_mut().zip(g) {
                *s = rho * *s + (1.0 - rho) * gi * gi;
            }
        }
    }

    /// `step` with an all-zero gradient; the parameters cannot move.
    fn decay(&self, sq_avg: &mut [f32]) {
        for s in sq_avg {
            *s = self.rho * *s + (1.0 - self.rho) * 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::StreamLayout;

    fn store() -> (SharedParamStore, NetworkParams<f32>) {
        let arch = Architecture::new(StreamLayout::SingleStream, 1).unwrap();
        let p = NetworkParams::init(arch, 3);
        let mut nets = BTreeMap::new();
        nets.insert("a".to_string(), p.clone());
        (SharedParamStore::new(&nets, 3), p)
    }

    #[test]
    fn budget_is_enforced() {
        let (s, _) = store();
        assert_eq!(s.claim_step(), Some(1));
        assert_eq!(s.claim_step(), Some(2));
        assert_eq!(s.claim_step(), Some(3));
        assert_eq!(s.claim_step(), None);
        assert_eq!(s.steps(), 3);
    }

    #[test]
    fn rmsprop_first_step_matches_formula() {
        let (s, p) = store();
        let mut g = p.zeros_like();
        g.tensors_mut()[0].data_mut()[0] = 2.0;
        let hp = Hyperparams::default();
        s.apply("a", &g, &hp).unwrap();
        let after = s.snapshot("a").unwrap();
        let sq = (1.0 - 0.99f32) * 4.0;
        let expect = p.tensors()[0].data()[0] - 0.004 * 2.0 / (sq + 0.1f32).sqrt();
        assert_eq!(after.tensors()[0].data()[0], expect);
        assert_eq!(after.tensors()[0].data()[1], p.tensors()[0].data()[1]);
        assert_eq!(s.updates("a"), Some(1));
    }

    #[test]
    fn factored_update_matches_dense_update() {
        use crate::nn::{backward_batch_factored, forward, NetInput};
        let (dense_store, p) = store();
        let (factored_store, _) = store();
        let caches: Vec<_> = (0..3)
            .map(|i| {
                let state: Vec<f32> = (0..84 * 84).map(|j| ((j * 3 + i * 7) % 11) as f32 / 11.0).collect();
                forward(&p, NetInput { state: &state, mask: None }).unwrap().1
            })
            .collect();
        let upstream: Vec<Vec<f32>> = (0..3).map(|i| (0..6).map(|a| (a as f32 - i as f32) * 0.3).collect()).collect();
        let batch: Vec<_> = caches.iter().zip(&upstream).map(|(c, gl)| (c, gl.as_slice(), 0.7)).collect();
        let mut g = FactoredGrads::zeros(*p.arch());
        backward_batch_factored(&p, &batch, &mut g).unwrap();
        let hp = Hyperparams::default();
        for _ in 0..3 {
            dense_store.apply("a", &g.to_dense(), &hp).unwrap();
            factored_store.apply_factored("a", &g, &hp).unwrap();
        }
        let bytes = |x: NetworkParams<f32>| CheckpointSet::single("a", x, 0).to_bytes();
        assert!(bytes(dense_store.snapshot("a").unwrap()) == bytes(factored_store.snapshot("a").unwrap()));
        assert!(bytes(factored_store.snapshot("a").unwrap()) != bytes(p));
    }

    #[test]
    fn zero_learning_rate_is_bit_identical() {
        let (s, p) = store();
        let mut g = p.zeros_like();
        for t in g.tensors_mut() {
            t.fill(-0.0);
        }
        let hp = Hyperparams {
            learning_rate: 0.0,
            ..Hyperparams::default()
        };
        s.apply("a", &g, &hp).unwrap();
        let bytes = |x: NetworkParams<f32>| CheckpointSet::single("a", x, 0).to_bytes();
        assert_eq!(bytes(s.snapshot("a").unwrap()), bytes(p));
    }
}
