//! Binary checkpoint files.
//!
//! Layout: the magic bytes `HGRC`, one version byte, a little-endian `u64`
//! manifest length, the JSON manifest, then every parameter tensor as raw
//! little-endian `f64` values in manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::model::ModelParameters;
use crate::numeric::{Parameters, Rng};
use crate::train::{Checkpoint, TrainConfig, TrainingLog};

pub const MAGIC: &[u8; 4] = b"HGRC";
pub const FORMAT_VERSION: u8 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
    /// Offset into the array section, in values.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    config: TrainConfig,
    schema: Vec<String>,
    code_vocab: Vec<String>,
    norm_stats: NormStats,
    zeta: f64,
    log: TrainingLog,
    tensors: Vec<TensorEntry>,
}

pub fn to_bytes(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut offset = 0;
    let tensors: Vec<TensorEntry> = ckpt
        .params
        .tensors()
        .into_iter()
        .map(|(name, m)| {
            let e = TensorEntry {
                name,
                rows: m.rows(),
                cols: m.cols(),
                offset,
            };
            offset += m.len();
            e
        })
        .collect();
    let manifest = Manifest {
        config: ckpt.config.clone(),
        schema: ckpt.schema.clone(),
        code_vocab: ckpt.code_vocab.clone(),
        norm_stats: ckpt.norm_stats.clone(),
        zeta: ckpt.params.zeta(),
        log: ckpt.log.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(13 + json.len() + offset * 8);
    out.extend_from_slice(MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, m) in ckpt.params.tensors() {
        for v in m.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 5 || &bytes[..4] != MAGIC {
        return Err(Error::Corrupt("missing HGRC magic bytes".into()));
    }
    if bytes[4] != FORMAT_VERSION {
        return Err(Error::Version {
            found: bytes[4],
            expected: FORMAT_VERSION,
        });
    }
    let len_bytes: [u8; 8] = bytes
        .get(5..13)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| Error::Corrupt("truncated manifest length".into()))?;
    let len = usize::try_from(u64::from_le_bytes(len_bytes))
        .map_err(|_| Error::Corrupt("manifest length overflows".into()))?;
    let body = &bytes[13..];
    if body.len() < len {
        return Err(Error::Corrupt(format!(
            "truncated manifest: expected {len} bytes, found {}",
            body.len()
        )));
    }
    let manifest: Manifest = serde_json::from_slice(&body[..len])
        .map_err(|e| Error::Corrupt(format!("unreadable manifest: {e}")))?;
    let arrays = &body[len..];

    // A template fixes the expected tensor names and shapes.
    let mut params = ModelParameters::init(
        &manifest.config.model,
        manifest.schema.len(),
        manifest.code_vocab.len(),
        &mut Rng::new(0),
    )?;
    let expected_values = params.scalar_count();
    if arrays.len() != expected_values * 8 {
        return Err(Error::Corrupt(format!(
            "array section holds {} bytes, expected {}",
            arrays.len(),
            expected_values * 8
        )));
    }
    let mut slots = params.tensors_mut();
    if slots.len() != manifest.tensors.len() {
        return Err(Error::Corrupt(format!(
            "manifest lists {} tensors, model has {}",
            manifest.tensors.len(),
            slots.len()
        )));
    }
    for ((name, slot), entry) in slots.iter_mut().zip(&manifest.tensors) {
        if *name != entry.name || slot.shape() != (entry.rows, entry.cols) {
            return Err(Error::Corrupt(format!(
                "tensor {} ({}x{}) does not match expected {} {:?}",
                entry.name,
                entry.rows,
                entry.cols,
                name,
                slot.shape()
            )));
        }
        let start = entry.offset * 8;
        let end = start + slot.len() * 8;
        let raw = arrays
            .get(start..end)
            .ok_or_else(|| Error::Corrupt(format!("tensor {} lies outside the file", entry.name)))?;
        for (v, chunk) in slot.data_mut().iter_mut().zip(raw.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        }
    }
    drop(slots);
    if params.zeta().to_bits() != manifest.zeta.to_bits() {
        return Err(Error::Corrupt("threshold in manifest disagrees with tensor data".into()));
    }
    Ok(Checkpoint {
        config: manifest.config,
        schema: manifest.schema,
        code_vocab: manifest.code_vocab,
        norm_stats: manifest.norm_stats,
        params,
        log: manifest.log,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(ckpt)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn sample() -> Checkpoint {
        let config = TrainConfig {
            model: ModelConfig {
                hidden_size: 3,
                aggregate_width: 2,
                ffn_hidden: vec![3],
                ensemble_size: 2,
                zero_init_output: false,
                learn_edge_weights: true,
                ..ModelConfig::default()
            },
            ..TrainConfig::default()
        };
        let mut rng = Rng::new(9);
        let mut params = ModelParameters::init(&config.model, 2, 3, &mut rng).unwrap();
        params.zeta.set(0, 0, 0.1 + 0.2);
        Checkpoint {
            config,
            schema: vec!["a".into(), "b".into()],
            code_vocab: vec!["1".into(), "2".into(), "3".into()],
            norm_stats: NormStats {
                mean: vec![1.0 / 3.0, 2.5],
                std: vec![0.1, 7.0 / 9.0],
            },
            params,
            log: TrainingLog::default(),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let back = from_bytes(&to_bytes(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        for ((_, a), (_, b)) in back.params.tensors().iter().zip(c.params.tensors()) {
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn truncation_is_reported() {
        let bytes = to_bytes(&sample()).unwrap();
        for cut in [3, 10, 40, bytes.len() - 1] {
            let err = from_bytes(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::Corrupt(_)), "{cut}: {err}");
        }
    }

    #[test]
    fn version_and_magic_are_checked() {
        let mut bytes = to_bytes(&sample()).unwrap();
        bytes[4] = 2;
        assert!(matches!(from_bytes(&bytes), Err(Error::Version { found: 2, expected: 1 })));
        bytes[4] = FORMAT_VERSION;
        bytes[0] = b'X';
        assert!(matches!(from_bytes(&bytes), Err(Error::Corrupt(_))));
    }
}
