use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const PARAMS_FILE: &str = "params.bin";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into `params.bin`, in f64 elements.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub schema_hash: Option<String>,
    pub param_hash: String,
    pub tensors: Vec<TensorEntry>,
}

/// Writes all tensors as one flat little-endian f64 buffer plus a JSON
/// manifest.
pub fn save_params(store: &ParamStore, dir: &Path, schema_hash: Option<&str>) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut bytes = Vec::with_capacity(store.scalar_count() * 8);
    let mut tensors = Vec::with_capacity(store.len());
    let mut offset = 0;
    for (_, name, t) in store.iter() {
        tensors.push(TensorEntry { name: name.to_string(), shape: t.shape().to_vec(), offset });
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        offset += t.len();
    }
    let manifest = Manifest {
        format: 1,
        schema_hash: schema_hash.map(str::to_string),
        param_hash: store.hash(None),
        tensors,
    };
    fs::write(dir.join(PARAMS_FILE), bytes)?;
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn load_params(dir: &Path) -> Result<(ParamStore, Manifest)> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    let bytes = fs::read(dir.join(PARAMS_FILE))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::invalid("parameter file length is not a multiple of 8"));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let mut store = ParamStore::new();
    for e in &manifest.tensors {
        let n: usize = e.shape.iter().product();
        let slice = values
            .get(e.offset..e.offset + n)
            .ok_or_else(|| Error::invalid(format!("tensor `{}` runs past the end of the parameter file", e.name)))?;
        store.add(e.name.clone(), Tensor::new(e.shape.clone(), slice.to_vec())?)?;
    }
    if store.hash(None) != manifest.param_hash {
        return Err(Error::invalid("parameter file does not match its manifest hash"));
    }
    Ok((store, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_preserves_every_bit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        store.add("a", Tensor::glorot_uniform(&[3, 4], 3, 4, &mut rng)).unwrap();
        store.add("b", Tensor::new(vec![2], vec![f64::MIN_POSITIVE, -0.0]).unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let m = save_params(&store, dir.path(), Some("abc")).unwrap();
        let (back, m2) = load_params(dir.path()).unwrap();
        assert_eq!(m, m2);
        assert_eq!(back.hash(None), store.hash(None));
        assert_eq!(m2.tensors[1].offset, 12);
        assert_eq!(m2.schema_hash.as_deref(), Some("abc"));
    }

    #[test]
    fn corrupted_file_is_detected() {
        let mut store = ParamStore::new();
        store.add("a", Tensor::filled(&[4], 1.0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_params(&store, dir.path(), None).unwrap();
        let mut bytes = fs::read(dir.path().join(PARAMS_FILE)).unwrap();
        bytes[3] ^= 1;
        fs::write(dir.path().join(PARAMS_FILE), bytes).unwrap();
        assert!(load_params(dir.path()).is_err());
    }
}
