//! Named parameter tensors with matching gradient slots.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor2;

const CHECKPOINT_VERSION: u32 = 1;

/// Store of model parameters; every entry carries a same-shape gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor2>,
    grads: BTreeMap<String, Tensor2>,
    pub rng_seed: u64,
}

impl ParamStore {
    pub fn new(rng_seed: u64) -> Self {
        ParamStore {
            params: BTreeMap::new(),
            grads: BTreeMap::new(),
            rng_seed,
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor2) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::config(format!("duplicate parameter name {name}")));
        }
        if !value.is_finite() {
            return Err(Error::numeric(format!("parameter {name} has non-finite values")));
        }
        self.grads
            .insert(name.to_string(), Tensor2::zeros(value.rows, value.cols));
        self.params.insert(name.to_string(), value);
        Ok(())
    }

    /// Inserts a tensor with entries drawn from U[-scale, scale].
    pub fn insert_uniform(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        scale: f64,
        rng: &mut impl Rng,
    ) -> Result<()> {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-scale..=scale))
            .collect();
        self.insert(name, Tensor2::from_vec(rows, cols, data)?)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor2> {
        self.params
            .get(name)
            .ok_or_else(|| Error::config(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor2> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::config(format!("unknown parameter {name}")))
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor2> {
        self.grads
            .get(name)
            .ok_or_else(|| Error::config(format!("unknown parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.values().map(|t| t.data.len()).sum()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn zero_grads(&mut self) {
        for g in self.grads.values_mut() {
            g.data.fill(0.0);
        }
    }

    /// Adds `delta` into the gradient slot of `name`.
    pub fn accumulate_grad(&mut self, name: &str, delta: &Tensor2) -> Result<()> {
        let g = self
            .grads
            .get_mut(name)
            .ok_or_else(|| Error::config(format!("unknown parameter {name}")))?;
        if g.shape() != delta.shape() {
            return Err(Error::shape(format!(
                "gradient shape {:?} does not match parameter {name} {:?}",
                delta.shape(),
                g.shape()
            )));
        }
        g.add_assign(delta);
        Ok(())
    }

    /// Iterates `(name, parameter, gradient)` in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor2, &Tensor2)> {
        self.params
            .iter()
            .map(|(k, v)| (k.as_str(), v, &self.grads[k]))
    }

    /// Applies an in-place update to every parameter given its gradient.
    pub fn update(&mut self, mut f: impl FnMut(&str, &mut Tensor2, &Tensor2)) {
        for (name, value) in self.params.iter_mut() {
            f(name, value, &self.grads[name]);
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = Checkpoint {
            version: CHECKPOINT_VERSION,
            rng_seed: self.rng_seed,
            params: self
                .params
                .iter()
                .map(|(name, t)| CheckpointEntry {
                    name: name.clone(),
                    shape: [t.rows, t.cols],
                    values: t.data.clone(),
                })
                .collect(),
        };
        let text = serde_json::to_string(&file)
            .map_err(|e| Error::config(format!("serialize checkpoint: {e}")))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::data(path, 1, format!("bad checkpoint: {e}")))?;
        if file.version != CHECKPOINT_VERSION {
            return Err(Error::config(format!(
                "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
                file.version
            )));
        }
        let mut store = ParamStore::new(file.rng_seed);
        for entry in file.params {
            let tensor = Tensor2::from_vec(entry.shape[0], entry.shape[1], entry.values)?;
            store.insert(&entry.name, tensor)?;
        }
        Ok(store)
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    rng_seed: u64,
    params: Vec<CheckpointEntry>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointEntry {
    name: String,
    shape: [usize; 2],
    values: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn duplicate_name_rejected() {
        let mut store = ParamStore::new(0);
        store.insert("w", Tensor2::zeros(2, 2)).unwrap();
        assert!(store.insert("w", Tensor2::zeros(2, 2)).is_err());
    }

    #[test]
    fn grad_slot_matches_shape() {
        let mut store = ParamStore::new(0);
        store.insert("w", Tensor2::zeros(3, 4)).unwrap();
        assert_eq!(store.grad("w").unwrap().shape(), (3, 4));
        let bad = Tensor2::zeros(4, 3);
        assert!(store.accumulate_grad("w", &bad).is_err());
    }

    #[test]
    fn accumulate_and_zero() {
        let mut store = ParamStore::new(0);
        store.insert("w", Tensor2::zeros(1, 2)).unwrap();
        let delta = Tensor2::row(&[1.5, -0.5]);
        store.accumulate_grad("w", &delta).unwrap();
        store.accumulate_grad("w", &delta).unwrap();
        assert_eq!(store.grad("w").unwrap().data, vec![3.0, -1.0]);
        store.zero_grads();
        assert_eq!(store.grad("w").unwrap().data, vec![0.0, 0.0]);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let mut store = ParamStore::new(42);
        store.insert_uniform("enc.w", 3, 5, 0.1, &mut rng).unwrap();
        store.insert_uniform("head.b", 1, 1, 0.1, &mut rng).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        store.save(f.path()).unwrap();
        let loaded = ParamStore::load(f.path()).unwrap();
        assert_eq!(store, loaded);
    }

    #[test]
    fn checkpoint_version_enforced() {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), r#"{"version":99,"rng_seed":0,"params":[]}"#).unwrap();
        assert!(ParamStore::load(f.path()).is_err());
    }

    #[test]
    fn uniform_init_within_bounds_and_seeded() {
        let mut a = ParamStore::new(0);
        let mut b = ParamStore::new(0);
        let mut rng_a = ChaCha12Rng::seed_from_u64(5);
        let mut rng_b = ChaCha12Rng::seed_from_u64(5);
        a.insert_uniform("w", 4, 4, 0.1, &mut rng_a).unwrap();
        b.insert_uniform("w", 4, 4, 0.1, &mut rng_b).unwrap();
        assert_eq!(a, b);
        assert!(a.get("w").unwrap().data.iter().all(|v| v.abs() <= 0.1));
        // Not all identical: the draw actually varies.
        let w = a.get("w").unwrap();
        assert!(w.data.iter().any(|&v| v != w.data[0]));
    }
}
