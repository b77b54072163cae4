//! Binary parameter checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! offset  size        field
//! 0       8           magic b"GARNET1\0"
//! 8       8           u64 layer count L
//! then L times:
//!         8           u64 fan_in   (rows of W)
//!         8           u64 units    (cols of W, length of b)
//!         8           u64 activation code (0 = relu, 1 = linear)
//!         8           f64 dropout rate
//!         8·fan_in·units  f64 W, row-major
//!         8·units     f64 b
//! ```
//!
//! Floats are stored as raw IEEE-754 bits, so a save/load cycle is bit-exact.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::network::{Activation, Layer, LayerSpec, Network};

pub const MAGIC: &[u8; 8] = b"GARNET1\0";

pub fn to_bytes(net: &Network) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + net.num_params() * 8 + net.layers().len() * 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(net.layers().len() as u64).to_le_bytes());
    for layer in net.layers() {
        let (fan_in, units) = layer.weights.shape();
        out.extend_from_slice(&(fan_in as u64).to_le_bytes());
        out.extend_from_slice(&(units as u64).to_le_bytes());
        let code: u64 = match layer.spec.activation {
            Activation::Relu => 0,
            Activation::Linear => 1,
        };
        out.extend_from_slice(&code.to_le_bytes());
        out.extend_from_slice(&layer.spec.dropout.to_le_bytes());
        for x in layer.weights.as_slice().iter().chain(layer.bias.as_slice()) {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(Error::format(
                self.path,
                format!(
                    "truncated reading {what}: need {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.buf.len()
                ),
            ));
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(n.saturating_mul(8), what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn from_bytes(buf: &[u8], path: &Path) -> Result<Network> {
    let mut r = Reader { buf, pos: 0, path };
    let magic = r.take(8, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(path, format!("bad magic {magic:?}")));
    }
    let count = r.u64("layer count")? as usize;
    if count == 0 {
        return Err(Error::format(path, "checkpoint has no layers"));
    }
    let mut layers = Vec::with_capacity(count.min(1024));
    for l in 0..count {
        let fan_in = r.u64("fan_in")? as usize;
        let units = r.u64("units")? as usize;
        let activation = match r.u64("activation")? {
            0 => Activation::Relu,
            1 => Activation::Linear,
            other => {
                return Err(Error::format(
                    path,
                    format!("layer {l}: unknown activation code {other}"),
                ))
            }
        };
        let dropout = f64::from_bits(r.u64("dropout")?);
        let n_weights = fan_in
            .checked_mul(units)
            .ok_or_else(|| Error::format(path, format!("layer {l}: dimensions overflow")))?;
        let weights = Matrix::new(fan_in, units, r.f64s(n_weights, "weights")?)?;
        let bias = Matrix::new(1, units, r.f64s(units, "bias")?)?;
        layers.push(Layer {
            weights,
            bias,
            spec: LayerSpec {
                units,
                activation,
                dropout,
            },
        });
    }
    if r.pos != buf.len() {
        return Err(Error::format(
            path,
            format!("{} trailing bytes after last layer", buf.len() - r.pos),
        ));
    }
    Network::from_layers(layers).map_err(|e| Error::format(path, e.to_string()))
}

pub fn save(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(net)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&buf, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn net(seed: u64) -> Network {
        let mut rng = Rng::new(seed, 0);
        let mut n = Network::new(
            6,
            &[LayerSpec::relu(5, 0.5), LayerSpec::relu(4, 0.0), LayerSpec::linear(3)],
            &mut rng,
        )
        .unwrap();
        for l in n.layers_mut() {
            l.bias = l.bias.map(|_| rng.normal());
        }
        n
    }

    #[test]
    fn header_layout() {
        let bytes = to_bytes(&net(1));
        assert_eq!(&bytes[..8], b"GARNET1\0");
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 6);
        assert_eq!(u64::from_le_bytes(bytes[24..32].try_into().unwrap()), 5);
        assert_eq!(u64::from_le_bytes(bytes[32..40].try_into().unwrap()), 0);
        assert_eq!(f64::from_le_bytes(bytes[40..48].try_into().unwrap()), 0.5);
        let params = 6 * 5 + 5 + 5 * 4 + 4 + 4 * 3 + 3;
        assert_eq!(bytes.len(), 16 + 3 * 32 + params * 8);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let n = net(2);
        save(&n, &path).unwrap();
        assert_eq!(load(&path).unwrap(), n);
    }

    #[test]
    fn rejects_corruption() {
        let p = Path::new("mem");
        let mut bytes = to_bytes(&net(3));
        assert!(from_bytes(&bytes[..bytes.len() - 1], p).is_err());
        bytes.push(0);
        assert!(from_bytes(&bytes, p).is_err());
        bytes.pop();
        bytes[0] = b'X';
        assert!(matches!(from_bytes(&bytes, p), Err(Error::Format { .. })));
        assert!(matches!(load("/nonexistent/net.ckpt"), Err(Error::Io { .. })));
    }

    proptest! {
        #[test]
        fn bytes_round_trip_bit_exactly(seed in any::<u64>()) {
            let n = net(seed);
            let bytes = to_bytes(&n);
            let back = from_bytes(&bytes, Path::new("mem")).unwrap();
            prop_assert_eq!(to_bytes(&back), bytes);
        }
    }
}
