//! Binary checkpoints.
//!
//! Layout, all integers and reals little-endian:
//!
//! ```text
//! "czsl-ckpt v1"                       12 bytes
//! u64 field count (6)
//! u64 d_x, d, d_v, d_c, hidden, has_scorer_c
//! per network, per block (w1, b1, w2, b2):
//!     u64 length, then length × f64
//! ```
//!
//! Networks appear in [`NETWORK_NAMES`](super::NETWORK_NAMES) order,
//! `scorer_c` only when flagged. The total file length is checked before
//! any parameter is read.

use std::fs;
use std::path::Path;

use super::{CscNet, Dims, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::{lit, Parameterized, Real};

pub const CHECKPOINT_MAGIC: &[u8; 12] = b"czsl-ckpt v1";
const DIM_FIELDS: u64 = 6;

pub fn encode<T: Real>(model: &CscNet<T>) -> Vec<u8> {
    let d = model.config.dims;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    for v in [
        DIM_FIELDS,
        d.feature as u64,
        d.semantic as u64,
        d.visual as u64,
        d.composition as u64,
        d.hidden as u64,
        model.scorer_c.is_some() as u64,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for p in model.params() {
        out.extend_from_slice(&(p.len() as u64).to_le_bytes());
        for v in &p.value {
            out.extend_from_slice(&v.to_f64().unwrap_or(f64::NAN).to_le_bytes());
        }
    }
    out
}

/// Dims and the `scorer_c` flag stored in a checkpoint header.
pub fn read_header(bytes: &[u8]) -> Result<(Dims, bool)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(12)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("missing `czsl-ckpt v1` header".into()));
    }
    let n = r.u64()?;
    if n != DIM_FIELDS {
        return Err(Error::Checkpoint(format!("expected {DIM_FIELDS} dim fields, found {n}")));
    }
    let mut f = [0usize; 6];
    for v in &mut f {
        *v = r.u64()? as usize;
    }
    if f[5] > 1 {
        return Err(Error::Checkpoint(format!("bad scorer_c flag {}", f[5])));
    }
    Ok((
        Dims {
            feature: f[0],
            semantic: f[1],
            visual: f[2],
            composition: f[3],
            hidden: f[4],
        },
        f[5] == 1,
    ))
}

/// Rebuilds a model for `config` from checkpoint bytes.
///
/// Dims must match `config` exactly, as must the presence of a parametric
/// composition head.
pub fn decode<T: Real>(bytes: &[u8], config: ModelConfig) -> Result<CscNet<T>> {
    let (dims, has_scorer_c) = read_header(bytes)?;
    let want = config.dims;
    let mut mismatched = Vec::new();
    for (name, a, b) in [
        ("d_x", dims.feature, want.feature),
        ("d", dims.semantic, want.semantic),
        ("d_v", dims.visual, want.visual),
        ("d_c", dims.composition, want.composition),
        ("hidden", dims.hidden, want.hidden),
    ] {
        if a != b {
            mismatched.push(format!("{name} (checkpoint {a}, config {b})"));
        }
    }
    if !mismatched.is_empty() {
        return Err(Error::Checkpoint(format!("dims mismatch: {}", mismatched.join(", "))));
    }
    let want_scorer_c = config.composition_classifier == super::ClassifierKind::Parametric;
    if has_scorer_c != want_scorer_c {
        return Err(Error::Checkpoint(format!(
            "composition classifier mismatch: checkpoint has scorer_c={has_scorer_c}, config wants {want_scorer_c}"
        )));
    }

    let mut model = CscNet::<T>::new(config, 0)?;
    let header_len = 12 + 8 * (1 + DIM_FIELDS as usize);
    let expected: usize = header_len + model.params().iter().map(|p| 8 + 8 * p.len()).sum::<usize>();
    if bytes.len() != expected {
        return Err(Error::Checkpoint(format!(
            "length {} does not match {expected} implied by dims",
            bytes.len()
        )));
    }
    let mut r = Reader {
        bytes,
        pos: header_len,
    };
    for p in model.params_mut() {
        let n = r.u64()? as usize;
        if n != p.len() {
            return Err(Error::Checkpoint(format!("block `{}` has length {n}, expected {}", p.name(), p.len())));
        }
        for v in p.value.iter_mut() {
            let x = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
            if !x.is_finite() {
                return Err(Error::Checkpoint(format!("block `{}` holds a non-finite value", p.name())));
            }
            *v = lit(x);
        }
        p.zero_grad();
    }
    Ok(model)
}

pub fn save<T: Real>(model: &CscNet<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

pub fn load<T: Real>(path: impl AsRef<Path>, config: ModelConfig) -> Result<CscNet<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, config)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ClassifierKind;

    fn config() -> ModelConfig {
        ModelConfig::new(Dims {
            feature: 4,
            semantic: 3,
            visual: 3,
            composition: 3,
            hidden: 5,
        })
    }

    #[test]
    fn round_trip_is_exact() {
        let m = CscNet::<f64>::new(config(), 9).unwrap();
        let bytes = encode(&m);
        let back: CscNet<f64> = decode(&bytes, config()).unwrap();
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn parametric_composition_round_trip() {
        let mut cfg = config();
        cfg.composition_classifier = ClassifierKind::Parametric;
        let m = CscNet::<f64>::new(cfg, 2).unwrap();
        let bytes = encode(&m);
        assert!(read_header(&bytes).unwrap().1);
        assert!(decode::<f64>(&bytes, cfg).unwrap().scorer_c.is_some());
        assert!(decode::<f64>(&bytes, config()).is_err());
    }

    #[test]
    fn dims_mismatch_names_fields() {
        let m = CscNet::<f64>::new(config(), 1).unwrap();
        let mut other = config();
        other.dims.hidden = 6;
        other.dims.feature = 7;
        let err = decode::<f64>(&encode(&m), other).unwrap_err().to_string();
        assert!(err.contains("hidden") && err.contains("d_x"), "{err}");
    }

    #[test]
    fn truncated_or_padded_is_rejected() {
        let m = CscNet::<f64>::new(config(), 1).unwrap();
        let bytes = encode(&m);
        assert!(decode::<f64>(&bytes[..bytes.len() - 1], config()).is_err());
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(decode::<f64>(&longer, config()).is_err());
        assert!(decode::<f64>(b"not a checkpoint", config()).is_err());
    }
}
