//! Binary checkpoint format for the two-tower model.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic   b"TTCG"
//! version u32 (currently 1)
//! config  query tower:   input_dim u32, n_hidden u32, hidden[n] u32, embedding_dim u32
//!         candidate tower: same shape
//!         calibration_scale_init f64, calibration_bias_init f64
//! params  every tensor in canonical order (query layer weights row-major
//!         then bias, layer by layer; candidate layers; s0; b0) as raw f64
//! crc32   u32 over everything above
//! ```
//!
//! Optimizer state is deliberately not stored: resuming training starts from
//! fresh moments, and the trajectory-reproducibility guarantee is defined in
//! those terms.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::tower::{ModelConfig, TowerConfig, TowerNet, TowerParams};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"TTCG";
pub const CHECKPOINT_VERSION: u32 = 1;

// Guard rails against allocating absurd buffers from corrupt headers.
const MAX_HIDDEN_LAYERS: u32 = 64;
const MAX_DIM: u32 = 1 << 24;

pub fn checkpoint_bytes(params: &TowerParams) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    write_tower_config(&mut buf, &params.config.query);
    write_tower_config(&mut buf, &params.config.candidate);
    buf.extend_from_slice(&params.config.calibration_scale_init.to_le_bytes());
    buf.extend_from_slice(&params.config.calibration_bias_init.to_le_bytes());
    for tensor in params.tensors() {
        for v in tensor {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

fn write_tower_config(buf: &mut Vec<u8>, cfg: &TowerConfig) {
    buf.extend_from_slice(&(cfg.input_dim as u32).to_le_bytes());
    buf.extend_from_slice(&(cfg.hidden.len() as u32).to_le_bytes());
    for &h in &cfg.hidden {
        buf.extend_from_slice(&(h as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(cfg.embedding_dim as u32).to_le_bytes());
}

pub fn save_checkpoint(params: &TowerParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint_bytes(params)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, context: &'static str) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Truncated { context });
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, context: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, context)?.try_into().unwrap(),
        ))
    }

    fn f64(&mut self, context: &'static str) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8, context)?.try_into().unwrap(),
        ))
    }
}

fn read_dim(r: &mut Reader<'_>, context: &'static str) -> Result<usize> {
    let v = r.u32(context)?;
    if v > MAX_DIM {
        return Err(Error::Truncated { context });
    }
    Ok(v as usize)
}

fn read_tower_config(r: &mut Reader<'_>) -> Result<TowerConfig> {
    let input_dim = read_dim(r, "tower input_dim")?;
    let n_hidden = r.u32("tower hidden count")?;
    if n_hidden > MAX_HIDDEN_LAYERS {
        return Err(Error::Truncated {
            context: "tower hidden count",
        });
    }
    let mut hidden = Vec::with_capacity(n_hidden as usize);
    for _ in 0..n_hidden {
        hidden.push(read_dim(r, "tower hidden size")?);
    }
    let embedding_dim = read_dim(r, "tower embedding_dim")?;
    Ok(TowerConfig {
        input_dim,
        hidden,
        embedding_dim,
    })
}

pub fn checkpoint_from_bytes(data: &[u8]) -> Result<TowerParams> {
    let mut r = Reader { data, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            expected: CHECKPOINT_MAGIC,
        });
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let query_cfg = read_tower_config(&mut r)?;
    let candidate_cfg = read_tower_config(&mut r)?;
    let scale_init = r.f64("calibration init")?;
    let bias_init = r.f64("calibration init")?;
    let config = ModelConfig {
        query: query_cfg,
        candidate: candidate_cfg,
        calibration_scale_init: scale_init,
        calibration_bias_init: bias_init,
    };
    config.validate()?;

    let mut params = TowerParams {
        query: TowerNet::zeros(&config.query),
        candidate: TowerNet::zeros(&config.candidate),
        s0: 0.0,
        b0: 0.0,
        config,
    };
    // The payload length is now known exactly; verify the checksum before
    // trusting any of it.
    let payload_end = r.pos + 8 * params.n_params();
    if payload_end + 4 > data.len() {
        return Err(Error::Truncated {
            context: "parameter payload",
        });
    }
    if payload_end + 4 < data.len() {
        return Err(Error::Parse {
            path: "<checkpoint>".into(),
            line: 0,
            msg: format!("{} trailing bytes", data.len() - payload_end - 4),
        });
    }
    let stored = u32::from_le_bytes(data[payload_end..payload_end + 4].try_into().unwrap());
    let computed = crc32fast::hash(&data[..payload_end]);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    for tensor in params.tensors_mut() {
        for v in tensor.iter_mut() {
            *v = r.f64("parameter payload")?;
        }
    }
    Ok(params)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TowerParams> {
    let path = path.as_ref();
    let data = std::fs::read(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_path_buf())
        } else {
            Error::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })?;
    checkpoint_from_bytes(&data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::adam::{AdamConfig, AdamState};
    use crate::model::loss::{pointwise_loss_grad, PairBatch, PairExample};
    use crate::model::tower::ModelConfig;

    fn trained_params() -> TowerParams {
        let cfg = ModelConfig::symmetric(5, 5, &[4], 3);
        let mut params = TowerParams::init(&cfg, 21).unwrap();
        let feats: Vec<Vec<f64>> = (0..4)
            .map(|i| (0..5).map(|j| ((i * 5 + j) as f64).sin()).collect())
            .collect();
        let refs: Vec<&[f64]> = feats.iter().map(|f| f.as_slice()).collect();
        let batch = PairBatch {
            query_features: refs.clone(),
            candidate_features: refs,
            pairs: vec![
                PairExample {
                    query: 0,
                    candidate: 1,
                    target: 1.0,
                    weight: 1.0,
                },
                PairExample {
                    query: 2,
                    candidate: 3,
                    target: 0.0,
                    weight: 1.0,
                },
            ],
        };
        let mut opt = AdamState::for_model(AdamConfig::default(), &params).unwrap();
        for _ in 0..3 {
            let (_, grads) = pointwise_loss_grad(&params, &batch).unwrap();
            opt.step_model(&mut params, &grads, 0.01).unwrap();
        }
        params
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let params = trained_params();
        let bytes = checkpoint_bytes(&params);
        let loaded = checkpoint_from_bytes(&bytes).unwrap();
        assert_eq!(params, loaded);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ttcg");
        let params = trained_params();
        save_checkpoint(&params, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), params);
    }

    #[test]
    fn resumed_training_matches_uninterrupted_training() {
        // Checkpoints store no optimizer state, so the contract is: resuming
        // from a checkpoint with a fresh optimizer reproduces the trajectory
        // of the in-memory params with an equally fresh optimizer.
        let params = trained_params();
        let bytes = checkpoint_bytes(&params);
        let mut resumed = checkpoint_from_bytes(&bytes).unwrap();
        let mut in_memory = params;

        let feats: Vec<Vec<f64>> = (0..6)
            .map(|i| (0..5).map(|j| ((i * 7 + j) as f64).cos()).collect())
            .collect();
        let refs: Vec<&[f64]> = feats.iter().map(|f| f.as_slice()).collect();
        let batch = PairBatch {
            query_features: refs.clone(),
            candidate_features: refs,
            pairs: (0..5)
                .map(|i| PairExample {
                    query: i,
                    candidate: i + 1,
                    target: (i % 2) as f64,
                    weight: 1.0,
                })
                .collect(),
        };

        let mut opt_a = AdamState::for_model(AdamConfig::default(), &in_memory).unwrap();
        let mut opt_b = AdamState::for_model(AdamConfig::default(), &resumed).unwrap();
        for _ in 0..4 {
            let (_, ga) = pointwise_loss_grad(&in_memory, &batch).unwrap();
            opt_a.step_model(&mut in_memory, &ga, 0.02).unwrap();
            let (_, gb) = pointwise_loss_grad(&resumed, &batch).unwrap();
            opt_b.step_model(&mut resumed, &gb, 0.02).unwrap();
        }
        assert_eq!(in_memory, resumed);
    }

    #[test]
    fn corruption_is_detected() {
        let params = trained_params();
        let good = checkpoint_bytes(&params);

        let mut flipped = good.clone();
        let mid = good.len() / 2;
        flipped[mid] ^= 0x40;
        assert!(matches!(
            checkpoint_from_bytes(&flipped),
            Err(Error::ChecksumMismatch { .. })
        ));

        let truncated = &good[..good.len() - 9];
        assert!(matches!(
            checkpoint_from_bytes(truncated),
            Err(Error::Truncated { .. })
        ));

        let mut wrong_magic = good.clone();
        wrong_magic[0] = b'X';
        assert!(matches!(
            checkpoint_from_bytes(&wrong_magic),
            Err(Error::BadMagic { .. })
        ));

        let mut wrong_version = good.clone();
        wrong_version[4] = 99;
        assert!(matches!(
            checkpoint_from_bytes(&wrong_version),
            Err(Error::VersionMismatch {
                found: 99,
                expected: 1
            })
        ));

        let mut trailing = good.clone();
        trailing.push(0);
        assert!(matches!(
            checkpoint_from_bytes(&trailing),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn missing_file_is_distinct() {
        assert!(matches!(
            load_checkpoint("/nonexistent/model.ttcg"),
            Err(Error::MissingFile(_))
        ));
    }

    #[test]
    fn header_semantics_are_validated() {
        // A structurally valid file with embedding_dim 1 must be rejected by
        // config validation, not crash downstream.
        let params = trained_params();
        let mut bytes = checkpoint_bytes(&params);
        // query config starts at offset 8: input_dim(4) n_hidden(4) hidden(4)
        // embedding_dim(4) -> embedding_dim at offset 8 + 12 = 20.
        bytes[20] = 1;
        let tail = bytes.len() - 4;
        let crc = crc32fast::hash(&bytes[..tail]);
        bytes[tail..].copy_from_slice(&crc.to_le_bytes());
        // Payload size no longer matches the header; either error is fine as
        // long as it is not a successful load.
        assert!(checkpoint_from_bytes(&bytes).is_err());
    }
}
