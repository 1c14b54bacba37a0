//! Checkpoint file format.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic          4 bytes  "GRFT"
//! header_len     u32
//! header         JSON: {"version": 1, "config": NetConfig, "param_count": N}
//! weights        N x f32, in parameter order
//! ```
//!
//! Parameter order is the order of [`Network::param_slices`]: for each
//! GRU layer `w_z u_z b_zx b_zh w_r u_r b_rx b_rh w_c u_c b_cx b_ch`
//! (matrices row-major), then `fc_hidden.w fc_hidden.b`, then
//! `classifier.w classifier.b`.
//!
//! Weights are stored as f32; loading promotes them back to f64, so
//! save -> load -> save reproduces the file byte for byte.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::network::{param_count, NetConfig, Network};

pub const MAGIC: &[u8; 4] = b"GRFT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: not a checkpoint file")]
    BadMagic,
    #[error("unsupported format version {0} (expected {FORMAT_VERSION})")]
    VersionMismatch(u32),
    #[error("truncated checkpoint file")]
    Truncated,
    #[error("malformed header: {0}")]
    BadHeader(#[from] serde_json::Error),
    #[error("parameter count mismatch: header says {header}, config implies {config}, payload holds {payload}")]
    CountMismatch {
        header: usize,
        config: usize,
        payload: usize,
    },
    #[error("invalid network config: {0}")]
    BadConfig(#[from] super::network::NetError),
    #[error("non-finite weight in checkpoint")]
    NonFiniteWeight,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    config: NetConfig,
    param_count: usize,
}

pub fn to_bytes(network: &Network) -> Result<Vec<u8>, CheckpointError> {
    let n = network.param_count();
    let header = Header {
        version: FORMAT_VERSION,
        config: network.config.clone(),
        param_count: n,
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(4 + 4 + header_json.len() + n * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    for slice in network.param_slices() {
        for &v in slice {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Network, CheckpointError> {
    if bytes.len() < 8 {
        return Err(CheckpointError::Truncated);
    }
    if &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let payload_start = 8 + header_len;
    if bytes.len() < payload_start {
        return Err(CheckpointError::Truncated);
    }
    let header: Header = serde_json::from_slice(&bytes[8..payload_start])?;
    if header.version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch(header.version));
    }
    header.config.validate()?;
    let expected = param_count(&header.config);
    let payload = &bytes[payload_start..];
    let available = payload.len() / 4;
    if header.param_count != expected || available != expected {
        return Err(CheckpointError::CountMismatch {
            header: header.param_count,
            config: expected,
            payload: available,
        });
    }

    let mut network = Network::init(header.config, 0)?;
    let mut offset = 0;
    for slice in network.param_slices_mut() {
        for v in slice.iter_mut() {
            let raw: [u8; 4] = payload[offset..offset + 4].try_into().unwrap();
            let w = f32::from_le_bytes(raw) as f64;
            if !w.is_finite() {
                return Err(CheckpointError::NonFiniteWeight);
            }
            *v = w;
            offset += 4;
        }
    }
    Ok(network)
}

pub fn save_checkpoint(network: &Network, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, to_bytes(network)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Network, CheckpointError> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autonet::tensor::Tensor2;

    fn small_net() -> Network {
        Network::init(NetConfig::new(3, vec![4], 5, 3), 17).unwrap()
    }

    #[test]
    fn save_load_save_is_stable() {
        let net = small_net();
        let bytes = to_bytes(&net).unwrap();
        let loaded = from_bytes(&bytes).unwrap();
        let bytes2 = to_bytes(&loaded).unwrap();
        assert_eq!(bytes, bytes2);

        // After one quantization pass, forward outputs are identical.
        let again = from_bytes(&bytes2).unwrap();
        let frames = Tensor2::from_fn(4, 3, |r, c| (r as f64 * 0.3 - c as f64 * 0.2).sin());
        let a = loaded.forward(&frames).unwrap();
        let b = again.forward(&frames).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn corrupted_magic_rejected() {
        let mut bytes = to_bytes(&small_net()).unwrap();
        bytes[0] = b'X';
        assert!(matches!(
            from_bytes(&bytes),
            Err(CheckpointError::BadMagic)
        ));
    }

    #[test]
    fn short_payload_is_count_mismatch() {
        let bytes = to_bytes(&small_net()).unwrap();
        let cut = bytes.len() - 8;
        assert!(matches!(
            from_bytes(&bytes[..cut]),
            Err(CheckpointError::CountMismatch { .. })
        ));
    }

    #[test]
    fn version_bump_rejected() {
        let net = small_net();
        let header_json = serde_json::to_vec(&Header {
            version: 99,
            config: net.config.clone(),
            param_count: net.param_count(),
        })
        .unwrap();
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
        bytes.extend_from_slice(&header_json);
        for s in net.param_slices() {
            for &v in s {
                bytes.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        assert!(matches!(
            from_bytes(&bytes),
            Err(CheckpointError::VersionMismatch(99))
        ));
    }
}
