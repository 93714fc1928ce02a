//! Named parameter storage with seeded initialization.
//!
//! Every trainable tensor lives under a dotted name whose first segment is
//! its owner (`rgb_stem`, `ir_stem`, `trunk`, `neck`, `classifier`,
//! `fusion`). Running statistics of batch-norm layers are kept apart as
//! buffers: they are saved in checkpoints but never handed to the optimizer.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Mutex;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamInit {
    Const(f64),
    /// He normal initialization, `std = sqrt(2 / fan_in)`.
    KaimingNormal { fan_in: usize },
    Normal { std: f64 },
    /// Ones on the leading diagonal of the `(shape[0], prod(shape[1..]))` view.
    Eye,
}

pub struct ParamStore {
    params: Mutex<BTreeMap<String, Var>>,
    buffers: Mutex<BTreeMap<String, Var>>,
    rng: Mutex<ChaCha8Rng>,
    dtype: DType,
    device: Device,
}

impl std::fmt::Debug for ParamStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamStore")
            .field("params", &self.params.lock().unwrap().len())
            .field("buffers", &self.buffers.lock().unwrap().len())
            .field("dtype", &self.dtype)
            .finish()
    }
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType, device: Device) -> Self {
        Self {
            params: Mutex::new(BTreeMap::new()),
            buffers: Mutex::new(BTreeMap::new()),
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
            dtype,
            device,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn init_values(&self, shape: &[usize], init: ParamInit) -> Vec<f64> {
        let n: usize = shape.iter().product();
        match init {
            ParamInit::Const(v) => vec![v; n],
            ParamInit::KaimingNormal { fan_in } => {
                let std = (2.0 / fan_in.max(1) as f64).sqrt();
                let mut rng = self.rng.lock().unwrap();
                (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect::<Vec<f64>>()
            }
            ParamInit::Normal { std } => {
                let mut rng = self.rng.lock().unwrap();
                (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect::<Vec<f64>>()
            }
            ParamInit::Eye => {
                let rows = shape.first().copied().unwrap_or(1);
                let cols = if rows == 0 { 0 } else { n / rows };
                let mut v = vec![0.0; n];
                for i in 0..rows.min(cols) {
                    v[i * cols + i] = 1.0;
                }
                v
            }
        }
    }

    fn make_var(&self, shape: &[usize], init: ParamInit) -> Result<Var> {
        let values = self.init_values(shape, init);
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        Ok(Var::from_tensor(&t)?)
    }

    /// Registers a trainable parameter and returns a tensor sharing its storage.
    pub fn param(&self, name: &str, shape: &[usize], init: ParamInit) -> Result<Tensor> {
        let var = self.make_var(shape, init)?;
        let t = var.as_tensor().clone();
        let mut map = self.params.lock().unwrap();
        if map.insert(name.to_string(), var).is_some() {
            return Err(Error::Config(format!("parameter `{name}` registered twice")));
        }
        Ok(t)
    }

    /// Registers a non-trainable buffer.
    pub fn buffer(&self, name: &str, shape: &[usize], init: ParamInit) -> Result<Var> {
        let var = self.make_var(shape, init)?;
        let mut map = self.buffers.lock().unwrap();
        if map.insert(name.to_string(), var.clone()).is_some() {
            return Err(Error::Config(format!("buffer `{name}` registered twice")));
        }
        Ok(var)
    }

    /// Trainable variables in name order.
    pub fn trainable_vars(&self) -> Vec<Var> {
        self.params.lock().unwrap().values().cloned().collect()
    }

    pub fn named_params(&self) -> Vec<(String, Var)> {
        self.params
            .lock()
            .unwrap()
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    pub fn get_param(&self, name: &str) -> Option<Var> {
        self.params.lock().unwrap().get(name).cloned()
    }

    /// Parameter names grouped by owner (first dotted segment).
    pub fn partition(&self) -> BTreeMap<String, Vec<String>> {
        let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for name in self.params.lock().unwrap().keys() {
            let owner = name.split('.').next().unwrap_or(name).to_string();
            out.entry(owner).or_default().push(name.clone());
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.params.lock().unwrap().values().map(|v| v.elem_count()).sum()
    }

    fn all_tensors(&self) -> HashMap<String, Tensor> {
        let mut out = HashMap::new();
        for (k, v) in self.params.lock().unwrap().iter() {
            out.insert(format!("params.{k}"), v.as_tensor().clone());
        }
        for (k, v) in self.buffers.lock().unwrap().iter() {
            out.insert(format!("buffers.{k}"), v.as_tensor().clone());
        }
        out
    }

    /// Bitwise snapshot of every parameter and buffer, keyed like a checkpoint.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Vec<f64>>> {
        let mut out = BTreeMap::new();
        for (k, t) in self.all_tensors() {
            out.insert(k, t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?);
        }
        Ok(out)
    }

    /// Writes parameters and buffers to a safetensors file.
    pub fn save(&self, path: &Path) -> Result<()> {
        candle_core::safetensors::save(&self.all_tensors(), path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }

    /// Loads a file written by [`ParamStore::save`]. Every stored tensor must
    /// exist with the same shape, and every registered tensor must be present.
    pub fn load(&self, path: &Path) -> Result<()> {
        let tensors = candle_core::safetensors::load(path, &self.device)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        let params = self.params.lock().unwrap();
        let buffers = self.buffers.lock().unwrap();
        let expected = params.len() + buffers.len();
        if tensors.len() != expected {
            return Err(Error::Checkpoint(format!(
                "{} holds {} tensors, model has {expected}",
                path.display(),
                tensors.len()
            )));
        }
        for (key, value) in tensors {
            let var = if let Some(name) = key.strip_prefix("params.") {
                params.get(name)
            } else if let Some(name) = key.strip_prefix("buffers.") {
                buffers.get(name)
            } else {
                None
            }
            .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor `{key}`")))?;
            if var.shape() != value.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{key}` has shape {:?}, model expects {:?}",
                    value.dims(),
                    var.dims()
                )));
            }
            var.set(&value.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_init_is_reproducible() {
        let a = ParamStore::new(9, DType::F64, Device::Cpu);
        let b = ParamStore::new(9, DType::F64, Device::Cpu);
        let ta = a.param("x.w", &[4, 3], ParamInit::KaimingNormal { fan_in: 3 }).unwrap();
        let tb = b.param("x.w", &[4, 3], ParamInit::KaimingNormal { fan_in: 3 }).unwrap();
        assert_eq!(ta.to_vec2::<f64>().unwrap(), tb.to_vec2::<f64>().unwrap());
    }

    #[test]
    fn eye_init_and_duplicates() {
        let s = ParamStore::new(0, DType::F64, Device::Cpu);
        let t = s.param("f.p", &[2, 3, 1, 1], ParamInit::Eye).unwrap();
        let v = t.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert_eq!(v, vec![1., 0., 0., 0., 1., 0.]);
        assert!(s.param("f.p", &[1], ParamInit::Const(0.0)).is_err());
    }

    #[test]
    fn returned_tensor_tracks_variable() {
        let s = ParamStore::new(0, DType::F64, Device::Cpu);
        let t = s.param("a.b", &[2], ParamInit::Const(0.0)).unwrap();
        let var = s.get_param("a.b").unwrap();
        var.set(&Tensor::new(&[3.0f64, 4.0], &Device::Cpu).unwrap()).unwrap();
        assert_eq!(t.to_vec1::<f64>().unwrap(), vec![3.0, 4.0]);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.safetensors");
        let a = ParamStore::new(1, DType::F32, Device::Cpu);
        a.param("trunk.w", &[3, 2], ParamInit::Normal { std: 1.0 }).unwrap();
        a.buffer("trunk.bn.mean", &[2], ParamInit::Const(0.5)).unwrap();
        a.save(&path).unwrap();
        let b = ParamStore::new(2, DType::F32, Device::Cpu);
        b.param("trunk.w", &[3, 2], ParamInit::Normal { std: 1.0 }).unwrap();
        b.buffer("trunk.bn.mean", &[2], ParamInit::Const(0.0)).unwrap();
        assert_ne!(a.snapshot().unwrap(), b.snapshot().unwrap());
        b.load(&path).unwrap();
        assert_eq!(a.snapshot().unwrap(), b.snapshot().unwrap());

        let c = ParamStore::new(2, DType::F32, Device::Cpu);
        c.param("trunk.w", &[2, 3], ParamInit::Const(0.0)).unwrap();
        c.buffer("trunk.bn.mean", &[2], ParamInit::Const(0.0)).unwrap();
        assert!(c.load(&path).is_err());
    }
}
