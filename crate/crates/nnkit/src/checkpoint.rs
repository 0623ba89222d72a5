//! Versioned parameter checkpoints.
//!
//! A checkpoint is one JSON document:
//!
//! ```text
//! {"format": "fss-checkpoint/1",
//!  "meta": { ... free-form ... },
//!  "params": [{"name": "trunk.l0.fwd.w", "shape": [64, 96], "data": "<base64>"}, ...]}
//! ```
//!
//! `data` is the row-major little-endian `f64` byte image, so a round trip is
//! bit-exact.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::graph::{Mat, ParamStore};

pub const FORMAT: &str = "fss-checkpoint/1";

#[derive(Serialize, Deserialize)]
struct ParamRecord {
    name: String,
    shape: [usize; 2],
    data: String,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    meta: serde_json::Value,
    params: Vec<ParamRecord>,
}

pub fn encode_f64s<'a>(values: impl IntoIterator<Item = &'a f64>) -> String {
    let bytes: Vec<u8> = values.into_iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

pub fn decode_f64s(data: &str) -> std::result::Result<Vec<f64>, String> {
    let bytes = STANDARD.decode(data).map_err(|e| e.to_string())?;
    if bytes.len() % 8 != 0 {
        return Err(format!("{} bytes is not a whole number of f64", bytes.len()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn to_string(store: &ParamStore, meta: &serde_json::Value) -> String {
    let params = store
        .iter()
        .map(|(_, name, m)| ParamRecord {
            name: name.to_string(),
            shape: [m.nrows(), m.ncols()],
            data: encode_f64s(m.iter()),
        })
        .collect();
    let file = CheckpointFile {
        format: FORMAT.to_string(),
        meta: meta.clone(),
        params,
    };
    serde_json::to_string(&file).expect("checkpoint serializes")
}

pub fn from_str(text: &str) -> Result<(ParamStore, serde_json::Value)> {
    let file: CheckpointFile =
        serde_json::from_str(text).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    if file.format != FORMAT {
        return Err(NnError::Checkpoint(format!(
            "unsupported format {:?}, expected {FORMAT:?}",
            file.format
        )));
    }
    let mut store = ParamStore::new();
    for rec in file.params {
        let values = decode_f64s(&rec.data)
            .map_err(|e| NnError::Checkpoint(format!("{}: {e}", rec.name)))?;
        let m: Mat = Array2::from_shape_vec((rec.shape[0], rec.shape[1]), values)
            .map_err(|e| NnError::Checkpoint(format!("{}: {e}", rec.name)))?;
        store.add(rec.name, m);
    }
    Ok((store, file.meta))
}

pub fn save(path: &Path, store: &ParamStore, meta: &serde_json::Value) -> Result<()> {
    std::fs::write(path, to_string(store, meta))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ParamStore, serde_json::Value)> {
    from_str(&std::fs::read_to_string(path)?)
}

/// Copies every parameter of `src` into `dst`, requiring identical names and shapes.
pub fn assign(dst: &mut ParamStore, src: &ParamStore) -> Result<()> {
    if dst.len() != src.len() {
        return Err(NnError::Checkpoint(format!(
            "checkpoint has {} parameters, model expects {}",
            src.len(),
            dst.len()
        )));
    }
    for id in src.ids() {
        if src.name(id) != dst.name(id) {
            return Err(NnError::Checkpoint(format!(
                "parameter {} is {:?} in the checkpoint but {:?} in the model",
                id.0,
                src.name(id),
                dst.name(id)
            )));
        }
        if src.get(id).dim() != dst.get(id).dim() {
            return Err(NnError::Checkpoint(format!(
                "dimension mismatch for {}: checkpoint {:?}, model {:?}",
                src.name(id),
                src.get(id).dim(),
                dst.get(id).dim()
            )));
        }
        dst.get_mut(id).assign(src.get(id));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(values in proptest::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..40)) {
            let mut store = ParamStore::new();
            let n = values.len();
            store.add("a", Array2::from_shape_vec((1, n), values.clone()).unwrap());
            store.add("b.c", Array2::from_shape_vec((n, 1), values).unwrap());
            let text = to_string(&store, &serde_json::json!({"system": "x"}));
            let (back, meta) = from_str(&text).unwrap();
            prop_assert_eq!(meta["system"].as_str(), Some("x"));
            for (id, name, m) in store.iter() {
                prop_assert_eq!(back.name(id), name);
                let a: Vec<u64> = m.iter().map(|v| v.to_bits()).collect();
                let b: Vec<u64> = back.get(id).iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn assign_reports_dimension_mismatch() {
        let mut a = ParamStore::new();
        a.add("w", Array2::zeros((2, 2)));
        let mut b = ParamStore::new();
        b.add("w", Array2::zeros((3, 2)));
        let err = assign(&mut a, &b).unwrap_err().to_string();
        assert!(err.contains("dimension mismatch"), "{err}");
    }

    #[test]
    fn wrong_format_tag() {
        let text = r#"{"format":"other/9","meta":null,"params":[]}"#;
        assert!(from_str(text).is_err());
    }
}
