//! Versioned, checksummed checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "CHARTCAE"
//! version    u32
//! header_len u32
//! header     header_len bytes of JSON {arch, train_config, seed, param_count, provenance?}
//! params     param_count x f64
//! checksum   32 bytes, SHA-256 of everything above
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AutoencoderError, Cae, CaeArchitecture, TrainConfig};
use crate::chart_render::ChartImage;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"CHARTCAE";
const MAX_HEADER: usize = 1 << 20;

#[derive(Serialize, Deserialize)]
struct Header {
    arch: CaeArchitecture,
    train_config: TrainConfig,
    seed: u64,
    param_count: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    provenance: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    model: Cae,
    train_config: TrainConfig,
    provenance: BTreeMap<String, String>,
    model_id: String,
}

impl Checkpoint {
    pub fn new(model: Cae, train_config: TrainConfig) -> Self {
        Self::with_provenance(model, train_config, BTreeMap::new())
    }

    /// Free-form key/value metadata stored in the header and covered by the checksum.
    pub fn with_provenance(
        model: Cae,
        train_config: TrainConfig,
        provenance: BTreeMap<String, String>,
    ) -> Self {
        let mut ckpt = Self {
            model,
            train_config,
            provenance,
            model_id: String::new(),
        };
        let bytes = ckpt.to_bytes();
        ckpt.model_id = model_id_of(&bytes[bytes.len() - 32..]);
        ckpt
    }

    pub fn provenance(&self) -> &BTreeMap<String, String> {
        &self.provenance
    }

    pub fn model(&self) -> &Cae {
        &self.model
    }

    pub fn train_config(&self) -> &TrainConfig {
        &self.train_config
    }

    /// First 16 hex digits of the content checksum.
    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            arch: self.model.arch().clone(),
            train_config: self.train_config.clone(),
            seed: self.train_config.seed,
            param_count: self.model.param_count(),
            provenance: self.provenance.clone(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let params = self.model.params();
        let mut out = Vec::with_capacity(16 + header.len() + params.len() * 8 + 32);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for p in params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AutoencoderError> {
        let corrupt = |m: &str| AutoencoderError::Checkpoint(m.to_string());
        if bytes.len() < 16 + 32 {
            return Err(corrupt("file too short"));
        }
        if &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(AutoencoderError::ChecksumMismatch);
        }
        let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(AutoencoderError::Checkpoint(format!(
                "unsupported version {version}"
            )));
        }
        let header_len = u32::from_le_bytes(body[12..16].try_into().expect("4 bytes")) as usize;
        if header_len > MAX_HEADER || 16 + header_len > body.len() {
            return Err(corrupt("header length out of range"));
        }
        let header: Header = serde_json::from_slice(&body[16..16 + header_len])
            .map_err(|e| AutoencoderError::Checkpoint(format!("header: {e}")))?;
        let expected = header.arch.check_shapes()?;
        let raw = &body[16 + header_len..];
        if header.param_count != expected || raw.len() != expected * 8 {
            return Err(corrupt("parameter count does not match architecture"));
        }
        if header.seed != header.train_config.seed {
            return Err(corrupt("seed disagrees with train config"));
        }
        let params: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if !params.iter().all(|p| p.is_finite()) {
            return Err(corrupt("non-finite parameter"));
        }
        let model = Cae::from_params(header.arch, params)?;
        Ok(Self {
            model,
            train_config: header.train_config,
            provenance: header.provenance,
            model_id: model_id_of(digest),
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), AutoencoderError> {
        std::fs::write(path, self.to_bytes()).map_err(|source| AutoencoderError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, AutoencoderError> {
        let bytes = std::fs::read(path).map_err(|source| AutoencoderError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }

    pub fn check_image(&self, img: &ChartImage) -> Result<(), AutoencoderError> {
        let size = self.model.arch().input_size;
        if img.width as usize != size || img.height as usize != size {
            return Err(AutoencoderError::SizeMismatch {
                expected: size,
                got: img.width.max(img.height) as usize,
            });
        }
        Ok(())
    }

    pub fn encode_image(&self, img: &ChartImage) -> Result<Vec<f64>, AutoencoderError> {
        self.check_image(img)?;
        self.model.encode(&img.to_tensor())
    }
}

fn model_id_of(digest: &[u8]) -> String {
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ckpt() -> Checkpoint {
        Checkpoint::new(
            Cae::new(CaeArchitecture::tiny(), 4).unwrap(),
            TrainConfig {
                seed: 4,
                ..TrainConfig::default()
            },
        )
    }

    #[test]
    fn round_trip() {
        let c = ckpt();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back.model().params(), c.model().params());
        assert_eq!(back.model().arch(), c.model().arch());
        assert_eq!(back.train_config(), c.train_config());
        assert_eq!(back.model_id(), c.model_id());
        assert_eq!(c.model_id().len(), 16);
        assert!(back.provenance().is_empty());
    }

    #[test]
    fn provenance_round_trips_and_changes_the_id() {
        let c = ckpt();
        let meta = BTreeMap::from([("config_hash".to_string(), "abc".to_string())]);
        let p = Checkpoint::with_provenance(c.model().clone(), c.train_config().clone(), meta.clone());
        let back = Checkpoint::from_bytes(&p.to_bytes()).unwrap();
        assert_eq!(back.provenance(), &meta);
        assert_ne!(p.model_id(), c.model_id());
    }

    #[test]
    fn flipped_byte_fails_checksum() {
        let mut bytes = ckpt().to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(AutoencoderError::ChecksumMismatch)
        ));
    }

    #[test]
    fn truncated_and_garbage_inputs() {
        let bytes = ckpt().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..40]).is_err());
        assert!(Checkpoint::from_bytes(b"CHARTCAE").is_err());
        assert!(Checkpoint::from_bytes(&[0u8; 100]).is_err());
    }
}
