//! "TSNN" network files.
//!
//! ```text
//! magic "TSNN" | version u32 | layer count u32 |
//! per layer: in_dim u32 | out_dim u32 | activation u8 |
//!            weights (in_dim x out_dim, row-major f32) | bias (out_dim f32)
//! ```
//!
//! Activation codes: 0 relu, 1 tanh, 2 linear. All integers little-endian.

use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Activation, Dense, Network};
use crate::error::{Error, FormatErrorKind, Result};
use crate::fsutil::{self, Reader};

pub const NETWORK_MAGIC: &[u8; 4] = b"TSNN";
pub const NETWORK_VERSION: u32 = 1;

impl Network {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(12 + self.param_count() * 4 + self.layers.len() * 9);
        buf.extend_from_slice(NETWORK_MAGIC);
        buf.extend_from_slice(&NETWORK_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for layer in &self.layers {
            buf.extend_from_slice(&(layer.in_dim() as u32).to_le_bytes());
            buf.extend_from_slice(&(layer.out_dim() as u32).to_le_bytes());
            buf.push(layer.activation.code());
            for &w in layer.weights.iter() {
                buf.extend_from_slice(&(w as f32).to_le_bytes());
            }
            for &b in layer.bias.iter() {
                buf.extend_from_slice(&(b as f32).to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(NETWORK_MAGIC)?;
        let at = r.offset();
        let version = r.u32()?;
        if version != NETWORK_VERSION {
            return Err(Error::format(
                at,
                FormatErrorKind::BadVersion {
                    expected: NETWORK_VERSION,
                    found: version,
                },
            ));
        }
        let n_layers = r.u32()? as usize;
        if n_layers == 0 {
            return Err(Error::format(8, FormatErrorKind::Malformed("zero layers".into())));
        }
        let mut layers = Vec::with_capacity(n_layers.min(64));
        for _ in 0..n_layers {
            let in_dim = r.u32()? as usize;
            let out_dim = r.u32()? as usize;
            let at = r.offset();
            let code = r.u8()?;
            let activation = Activation::from_code(code).ok_or_else(|| {
                Error::format(at, FormatErrorKind::Malformed(format!("unknown activation code {code}")))
            })?;
            let weights = r.f32s(in_dim * out_dim)?;
            let bias = r.f32s(out_dim)?;
            layers.push(Dense {
                weights: Array2::from_shape_vec(
                    (in_dim, out_dim),
                    weights.into_iter().map(f64::from).collect(),
                )
                .expect("shape matches"),
                bias: Array1::from(bias.into_iter().map(f64::from).collect::<Vec<_>>()),
                activation,
            });
        }
        r.finish()?;
        Network::new(layers)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::atomic_write(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fsutil::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    fn sample() -> Network {
        Network::mlp(
            &[6, 5, 3],
            &[Activation::Relu, Activation::Tanh],
            &mut rng_from(9),
        )
        .unwrap()
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let net = sample();
        let bytes = net.to_bytes();
        let back = Network::from_bytes(&bytes).unwrap();
        assert_eq!(back, net);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(&bytes[..4], b"TSNN");
    }

    #[test]
    fn corrupt_files_rejected() {
        let bytes = sample().to_bytes();
        assert!(matches!(
            Network::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Format { kind: FormatErrorKind::Truncated { .. }, .. })
        ));
        let mut bad = bytes.clone();
        bad[4] = 7;
        assert!(matches!(
            Network::from_bytes(&bad),
            Err(Error::Format { offset: 4, kind: FormatErrorKind::BadVersion { .. } })
        ));
        let mut bad = bytes.clone();
        bad[20] = 9; // activation code of layer 0
        assert!(matches!(Network::from_bytes(&bad), Err(Error::Format { offset: 20, .. })));
        let mut long = bytes;
        long.push(0);
        assert!(matches!(
            Network::from_bytes(&long),
            Err(Error::Format { kind: FormatErrorKind::TrailingBytes(1), .. })
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.tsnn");
        let net = sample();
        net.save(&path).unwrap();
        assert_eq!(Network::load(&path).unwrap(), net);
    }
}
