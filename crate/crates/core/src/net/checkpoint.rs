//! Binary network checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! b"PDMD"              magic
//! u32                  format version (1)
//! u32                  prediction kind (0 = velocity, 1 = sample)
//! u32                  number of layer widths W
//! u32 * W              widths [d + F, H, ..., H, d]
//! f64 * ...            per layer: weight (in x out, row-major), then bias
//! ```
//!
//! Parameters are always stored as `f64`, whatever the in-memory scalar.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::mlp::{Layer, NetConfig, PredictionKind, TimeConditionedNet};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"PDMD";
pub const VERSION: u32 = 1;

pub fn to_bytes<T: Scalar>(net: &TimeConditionedNet<T>) -> Vec<u8> {
    let widths = net.config().widths();
    let mut out = Vec::with_capacity(16 + 4 * widths.len() + 8 * net.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&net.prediction().code().to_le_bytes());
    out.extend_from_slice(&(widths.len() as u32).to_le_bytes());
    for w in &widths {
        out.extend_from_slice(&(*w as u32).to_le_bytes());
    }
    for l in net.layers() {
        for v in l.weight.iter().chain(l.bias.iter()) {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.buf.len() {
            return Err(Error::Checkpoint(format!(
                "truncated at byte {} (need {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<TimeConditionedNet<T>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let prediction = PredictionKind::from_code(r.u32()?)?;
    let count = r.u32()? as usize;
    if !(3..=64).contains(&count) {
        return Err(Error::Checkpoint(format!("implausible layer count {count}")));
    }
    let widths = (0..count)
        .map(|_| r.u32().map(|w| w as usize))
        .collect::<Result<Vec<_>>>()?;
    let data_dim = widths[count - 1];
    let hidden_width = widths[1];
    if widths[0] < data_dim || widths[1..count - 1].iter().any(|&w| w != hidden_width) {
        return Err(Error::Checkpoint(format!("unsupported widths {widths:?}")));
    }
    let config = NetConfig {
        data_dim,
        hidden_width,
        hidden_layers: count - 2,
        time_features: widths[0] - data_dim,
        prediction,
    };
    let mut layers = Vec::with_capacity(count - 1);
    for w in widths.windows(2) {
        let mut weight = Array2::zeros((w[0], w[1]));
        for v in weight.iter_mut() {
            *v = T::of(r.f64()?);
        }
        let mut bias = Array1::zeros(w[1]);
        for v in bias.iter_mut() {
            *v = T::of(r.f64()?);
        }
        layers.push(Layer { weight, bias });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    TimeConditionedNet::from_parts(config, layers)
}

/// Writes to a sibling temp file and renames it into place.
pub fn save<T: Scalar>(net: &TimeConditionedNet<T>, path: &Path) -> Result<()> {
    write_atomic(path, &to_bytes(net))
}

pub fn load<T: Scalar>(path: &Path) -> Result<TimeConditionedNet<T>> {
    from_bytes(&fs::read(path)?)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let cfg = NetConfig::default().with_width(3).with_layers(2);
        let net = TimeConditionedNet::<f64>::new(cfg, 1).unwrap();
        let bytes = to_bytes(&net);
        assert_eq!(&bytes[..4], b"PDMD");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 0);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 4);
        let widths: Vec<u32> = (0..4)
            .map(|i| u32::from_le_bytes(bytes[16 + 4 * i..20 + 4 * i].try_into().unwrap()))
            .collect();
        assert_eq!(widths, vec![17, 3, 3, 1]);
        assert_eq!(bytes.len(), 32 + 8 * net.param_count());
        let first = f64::from_le_bytes(bytes[32..40].try_into().unwrap());
        assert_eq!(first, net.layers()[0].weight[[0, 0]]);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let net = TimeConditionedNet::<f64>::new(NetConfig::default().with_width(2), 1).unwrap();
        let bytes = to_bytes(&net);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(from_bytes::<f64>(&bad).is_err());
        assert!(from_bytes::<f64>(&bytes[..bytes.len() - 1]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(from_bytes::<f64>(&long).is_err());
        let mut version = bytes;
        version[4] = 9;
        assert!(from_bytes::<f64>(&version).is_err());
    }

    #[test]
    fn atomic_save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/teacher.ckpt");
        let cfg = NetConfig::default()
            .with_width(5)
            .with_prediction(PredictionKind::Sample);
        let net = TimeConditionedNet::<f64>::new(cfg, 4).unwrap();
        save(&net, &path).unwrap();
        let back: TimeConditionedNet<f64> = load(&path).unwrap();
        assert_eq!(back, net);
        assert!(!path.with_extension("ckpt.tmp").exists());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn round_trip_is_exact(seed in any::<u64>(), width in 1usize..12, layers in 1usize..4, dim in 1usize..3) {
            let cfg = NetConfig { data_dim: dim, ..NetConfig::default() }
                .with_width(width)
                .with_layers(layers);
            let net = TimeConditionedNet::<f64>::new(cfg, seed).unwrap();
            let back: TimeConditionedNet<f64> = from_bytes(&to_bytes(&net)).unwrap();
            prop_assert_eq!(back, net);
        }
    }
}
