//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! "EEGT" | u16 version
//! u32 d_model, num_heads, d_ff, num_encoders, num_classes, window_samples, num_channels
//! f64 dropout_p | u64 seed | u8 positional_encoding | u8 precision (0 = f64, 1 = f32)
//! u32 parameter count
//! per parameter: u32 name length | name (UTF-8) | u8 rank | u32 dims[rank] | values
//! ```

use std::fs;
use std::path::Path;

use super::{ModelConfig, TransformerClassifier};
use crate::error::CheckpointError;
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u16 = 1;
const MAGIC: &[u8; 4] = b"EEGT";
const MAX_CONFIG_VALUE: u32 = 1 << 20;
const MAX_NAME_LEN: usize = 1024;
const MAX_RANK: usize = 8;

/// Storage width of parameter values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F64,
    F32,
}

impl Precision {
    fn tag(self) -> u8 {
        match self {
            Precision::F64 => 0,
            Precision::F32 => 1,
        }
    }

    fn width(self) -> usize {
        match self {
            Precision::F64 => 8,
            Precision::F32 => 4,
        }
    }
}

/// Serializes a model. `F64` round-trips bit-exactly.
pub fn encode_checkpoint(model: &TransformerClassifier, precision: Precision) -> Vec<u8> {
    let c = model.config();
    let mut out = Vec::with_capacity(64 + model.parameter_count() * precision.width());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [
        c.d_model,
        c.num_heads,
        c.d_ff,
        c.num_encoders,
        c.num_classes,
        c.window_samples,
        c.num_channels,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&c.dropout_p.to_le_bytes());
    out.extend_from_slice(&c.seed.to_le_bytes());
    out.push(c.positional_encoding as u8);
    out.push(precision.tag());
    out.extend_from_slice(&(model.params().len() as u32).to_le_bytes());
    for (name, t) in model.param_names().iter().zip(model.params()) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            match precision {
                Precision::F64 => out.extend_from_slice(&v.to_le_bytes()),
                Precision::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        if self.remaining() < n {
            return Err(CheckpointError::Truncated { what: what.to_string() });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn u8(&mut self, what: &str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

fn read_config(r: &mut Reader<'_>) -> Result<(ModelConfig, Precision), CheckpointError> {
    const FIELDS: [&str; 7] =
        ["d_model", "num_heads", "d_ff", "num_encoders", "num_classes", "window_samples", "num_channels"];
    let mut v = [0usize; 7];
    for (slot, name) in v.iter_mut().zip(FIELDS) {
        let x = r.u32(name)?;
        if x > MAX_CONFIG_VALUE {
            return Err(CheckpointError::InvalidConfig(format!("{name} = {x} exceeds {MAX_CONFIG_VALUE}")));
        }
        *slot = x as usize;
    }
    let dropout_p = r.f64("dropout_p")?;
    let seed = r.u64("seed")?;
    let positional_encoding = match r.u8("positional encoding flag")? {
        0 => false,
        1 => true,
        x => return Err(CheckpointError::InvalidConfig(format!("positional encoding flag {x}"))),
    };
    let precision = match r.u8("precision")? {
        0 => Precision::F64,
        1 => Precision::F32,
        x => return Err(CheckpointError::InvalidConfig(format!("precision tag {x}"))),
    };
    let config = ModelConfig {
        d_model: v[0],
        num_heads: v[1],
        d_ff: v[2],
        num_encoders: v[3],
        num_classes: v[4],
        window_samples: v[5],
        num_channels: v[6],
        dropout_p,
        seed,
        positional_encoding,
    };
    config.validate().map_err(|e| CheckpointError::InvalidConfig(e.to_string()))?;
    Ok((config, precision))
}

/// Parses a checkpoint held in memory.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<TransformerClassifier, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic { found: magic.to_vec() });
    }
    let version = r.u16("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion { found: version, expected: CHECKPOINT_VERSION });
    }
    let (config, precision) = read_config(&mut r)?;
    let count = r.u32("parameter count")? as usize;
    let expected_values = config.parameter_count();
    if expected_values.saturating_mul(precision.width()) > r.remaining() {
        return Err(CheckpointError::Truncated {
            what: format!("{expected_values} parameter values implied by the config"),
        });
    }
    // each record needs at least name length, rank and one value
    if count.saturating_mul(5 + precision.width()) > r.remaining() {
        return Err(CheckpointError::Truncated { what: format!("{count} parameter records") });
    }
    let mut named = Vec::with_capacity(count);
    for i in 0..count {
        let len = r.u32("parameter name length")? as usize;
        if len > MAX_NAME_LEN {
            return Err(CheckpointError::ShapeMismatch(format!("parameter {i} name length {len}")));
        }
        let name = std::str::from_utf8(r.take(len, "parameter name")?)
            .map_err(|_| CheckpointError::ShapeMismatch(format!("parameter {i} name is not UTF-8")))?
            .to_string();
        let rank = r.u8("parameter rank")? as usize;
        if rank > MAX_RANK {
            return Err(CheckpointError::ShapeMismatch(format!("{name} has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("parameter dims")? as usize);
        }
        let numel = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).unwrap_or(usize::MAX);
        let raw = r.take(numel.saturating_mul(precision.width()), &format!("values of {name}"))?;
        let data: Vec<f64> = match precision {
            Precision::F64 => raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect(),
            Precision::F32 => raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64).collect(),
        };
        let t = Tensor::new(shape, data).map_err(|e| CheckpointError::ShapeMismatch(format!("{name}: {e}")))?;
        named.push((name, t));
    }
    if r.remaining() > 0 {
        return Err(CheckpointError::TrailingBytes(r.remaining()));
    }
    TransformerClassifier::from_params(config, named).map_err(|e| CheckpointError::ShapeMismatch(e.to_string()))
}

pub fn save_checkpoint(path: &Path, model: &TransformerClassifier, precision: Precision) -> Result<()> {
    fs::write(path, encode_checkpoint(model, precision)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<TransformerClassifier> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|source| Error::Checkpoint { path: path.to_path_buf(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> TransformerClassifier {
        let cfg = ModelConfig {
            d_model: 8,
            num_heads: 2,
            d_ff: 16,
            num_encoders: 2,
            num_classes: 3,
            window_samples: 10,
            num_channels: 4,
            dropout_p: 0.25,
            seed: 99,
            positional_encoding: true,
        };
        TransformerClassifier::new(cfg).unwrap()
    }

    #[test]
    fn f64_round_trip_is_bit_exact() {
        let m = model();
        let bytes = encode_checkpoint(&m, Precision::F64);
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back.config(), m.config());
        for (a, b) in m.params().iter().zip(back.params()) {
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        assert_eq!(encode_checkpoint(&back, Precision::F64), bytes);
    }

    #[test]
    fn f32_round_trip_is_close() {
        let m = model();
        let back = decode_checkpoint(&encode_checkpoint(&m, Precision::F32)).unwrap();
        for (a, b) in m.params().iter().zip(back.params()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() <= 1e-7 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.eegt");
        let m = model();
        save_checkpoint(&path, &m, Precision::F64).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), m);
        assert!(matches!(load_checkpoint(&dir.path().join("missing")), Err(Error::Io { .. })));
    }

    #[test]
    fn header_corruption_is_reported() {
        let bytes = encode_checkpoint(&model(), Precision::F64);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(CheckpointError::BadMagic { .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(
            decode_checkpoint(&bad),
            Err(CheckpointError::UnsupportedVersion { found: 9, expected: 1 })
        ));
        let mut bad = bytes.clone();
        bad.push(0);
        assert_eq!(decode_checkpoint(&bad).unwrap_err(), CheckpointError::TrailingBytes(1));
        // num_heads = 3 does not divide d_model = 8
        let mut bad = bytes.clone();
        bad[10] = 3;
        assert!(matches!(decode_checkpoint(&bad), Err(CheckpointError::InvalidConfig(_))));
        // huge window
        let mut bad = bytes;
        bad[26..30].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(decode_checkpoint(&bad), Err(CheckpointError::InvalidConfig(_))));
    }

    #[test]
    fn every_truncation_errors_cleanly() {
        let bytes = encode_checkpoint(&model(), Precision::F32);
        for cut in 0..bytes.len() {
            assert!(decode_checkpoint(&bytes[..cut]).is_err(), "cut at {cut}");
        }
    }

    #[test]
    fn mismatched_record_is_shape_error() {
        let m = model();
        let mut bytes = encode_checkpoint(&m, Precision::F64);
        // first record name starts after the 4-byte count; rename "embed.weight" -> "embed.wXight"
        let first_name = 4 + 2 + 28 + 8 + 8 + 2 + 4 + 4;
        assert_eq!(&bytes[first_name..first_name + 5], b"embed");
        bytes[first_name + 7] = b'X';
        assert!(matches!(decode_checkpoint(&bytes), Err(CheckpointError::ShapeMismatch(_))));
    }
}
