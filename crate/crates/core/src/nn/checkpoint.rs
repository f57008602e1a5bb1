//! `model.json` manifest plus `model.bin` holding every parameter and then
//! every buffer, little-endian, in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "model.json";
pub const DATA_FILE: &str = "model.bin";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub dtype: String,
    pub params: Vec<Entry>,
    pub buffers: Vec<Entry>,
    /// Model configuration the parameters belong to.
    pub config: serde_json::Value,
}

impl Manifest {
    pub fn describe<T: Scalar>(store: &ParamStore<T>, config: serde_json::Value) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            dtype: T::DTYPE.to_string(),
            params: store.params().iter().map(|p| Entry { name: p.name.clone(), shape: p.value.shape() }).collect(),
            buffers: store.buffers().iter().map(|b| Entry { name: b.name.clone(), shape: b.value.shape() }).collect(),
            config,
        }
    }

    pub fn element_count(&self) -> usize {
        self.params.iter().chain(&self.buffers).map(|e| e.shape[0] * e.shape[1]).sum()
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|e| e.shape[0] * e.shape[1]).sum()
    }
}

pub fn encode<T: Scalar>(store: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(T::BYTES * store.num_elements());
    let tensors = store.params().iter().map(|p| &p.value).chain(store.buffers().iter().map(|b| &b.value));
    for t in tensors {
        for v in t.data() {
            v.write_le(&mut out);
        }
    }
    out
}

pub fn save<T: Scalar>(store: &ParamStore<T>, config: serde_json::Value, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let manifest = Manifest::describe(store, config);
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    fs::write(dir.join(DATA_FILE), encode(store))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::MalformedInput(format!("checkpoint format {}", manifest.format_version)));
    }
    Ok(manifest)
}

fn decode_values<T: Scalar>(bytes: &[u8], dtype: &str) -> Result<Vec<T>> {
    match dtype {
        "f32" => Ok(bytes.chunks_exact(4).map(|c| T::of(f32::read_le(c) as f64)).collect()),
        "f64" => Ok(bytes.chunks_exact(8).map(|c| T::of(f64::read_le(c))).collect()),
        other => Err(Error::MalformedInput(format!("unknown dtype {other}"))),
    }
}

/// Copies checkpoint data into a store with the same layout, converting the
/// stored dtype when needed.
pub fn load_into<T: Scalar>(dir: &Path, store: &mut ParamStore<T>) -> Result<Manifest> {
    let manifest = read_manifest(dir)?;
    let bytes = fs::read(dir.join(DATA_FILE))?;
    let width = match manifest.dtype.as_str() {
        "f32" => 4,
        "f64" => 8,
        other => return Err(Error::MalformedInput(format!("unknown dtype {other}"))),
    };
    let expect = manifest.element_count() * width;
    if bytes.len() != expect {
        return Err(Error::MalformedInput(format!("checkpoint holds {} bytes, manifest needs {expect}", bytes.len())));
    }
    let layout = Manifest::describe(store, serde_json::Value::Null);
    if layout.params != manifest.params || layout.buffers != manifest.buffers {
        return Err(Error::ShapeMismatch("checkpoint layout differs from the model".into()));
    }
    let values: Vec<T> = decode_values(&bytes, &manifest.dtype)?;
    let mut offset = 0;
    let mut take = |shape: [usize; 2]| {
        let n = shape[0] * shape[1];
        let t = Tensor::from_vec(shape[0], shape[1], values[offset..offset + n].to_vec());
        offset += n;
        t
    };
    for p in store.params_mut() {
        p.value = take(p.value.shape())?;
    }
    for b in store.buffers_mut() {
        b.value = take(b.value.shape())?;
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.add("a", Tensor::from_f64(2, 2, &[1.0, 2.5, -3.0, 4.0]).unwrap()).unwrap();
        s.add("b", Tensor::from_f64(1, 3, &[0.1, 0.2, 0.3]).unwrap()).unwrap();
        s.add_buffer("rm", Tensor::from_f64(1, 3, &[9.0, 8.0, 7.0]).unwrap()).unwrap();
        s
    }

    #[test]
    fn round_trip_and_length_check() {
        let dir = std::env::temp_dir().join(format!("trajkit-ckpt-{}", std::process::id()));
        let src = store();
        let manifest = save(&src, serde_json::json!({"k": 1}), &dir).unwrap();
        assert_eq!(manifest.param_count(), src.num_elements());
        let mut dst = store();
        dst.zero_values();
        load_into(&dir, &mut dst).unwrap();
        assert_eq!(dst, src);

        let mut wide = src.cast::<f64>();
        wide.zero_values();
        load_into(&dir, &mut wide).unwrap();
        assert_eq!(wide.params()[1].value.data()[1], 0.2f32 as f64);

        let bin = dir.join(DATA_FILE);
        let mut bytes = fs::read(&bin).unwrap();
        bytes.pop();
        fs::write(&bin, bytes).unwrap();
        assert!(matches!(load_into(&dir, &mut dst), Err(Error::MalformedInput(_))));
        fs::remove_dir_all(dir).unwrap();
    }
}
