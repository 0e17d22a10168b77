//! Flat binary model files.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic       8 bytes  "GLLMODEL"
//! version     u32      1
//! input_mean  f64
//! input_std   f64
//! networks    u32      2 (encoder, classifier)
//! per network:
//!   layers    u32
//!   sizes     (layers + 1) x u64
//!   acts      layers x u8   (0 identity, 1 relu)
//!   per layer: weight (out x in, row-major) f64, then bias f64
//! ```

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::head::Model;
use super::mlp::{Activation, Layer, Mlp};
use crate::error::{GllError, Result};

const MAGIC: &[u8; 8] = b"GLLMODEL";
const VERSION: u32 = 1;

fn put_mlp(out: &mut Vec<u8>, m: &Mlp) {
    out.extend_from_slice(&(m.layers().len() as u32).to_le_bytes());
    for s in m.sizes() {
        out.extend_from_slice(&(s as u64).to_le_bytes());
    }
    out.extend(m.layers().iter().map(|l| l.activation.tag()));
    for l in m.layers() {
        for v in l.weight.iter().chain(&l.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn encode_model(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&model.input_mean.to_le_bytes());
    out.extend_from_slice(&model.input_std.to_le_bytes());
    out.extend_from_slice(&2u32.to_le_bytes());
    put_mlp(&mut out, &model.encoder);
    put_mlp(&mut out, &model.classifier);
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, len: usize) -> Result<&[u8]> {
        let chunk = self.bytes.get(self.pos..self.pos + len).ok_or_else(|| GllError::Parse {
            offset: self.pos,
            message: format!("checkpoint truncated: needed {len} more bytes"),
        })?;
        self.pos += len;
        Ok(chunk)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn mlp(&mut self) -> Result<Mlp> {
        let at = self.pos;
        let layers = self.u32()? as usize;
        if layers == 0 || layers > 1024 {
            return Err(GllError::Parse {
                offset: at,
                message: format!("implausible layer count {layers}"),
            });
        }
        let sizes = (0..=layers).map(|_| self.u64().map(|s| s as usize)).collect::<Result<Vec<_>>>()?;
        let tags = self.take(layers)?.to_vec();
        let mut out = Vec::with_capacity(layers);
        for l in 0..layers {
            let activation = Activation::from_tag(tags[l]).ok_or_else(|| GllError::Parse {
                offset: self.pos - layers + l,
                message: format!("unknown activation tag {}", tags[l]),
            })?;
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let need = fan_in.checked_mul(fan_out).and_then(|w| w.checked_add(fan_out)).ok_or_else(|| {
                GllError::Parse {
                    offset: at,
                    message: "layer sizes overflow".into(),
                }
            })?;
            if need.saturating_mul(8) > self.bytes.len() - self.pos {
                return Err(GllError::Parse {
                    offset: self.pos,
                    message: format!("checkpoint truncated in layer {l}"),
                });
            }
            let w = (0..fan_in * fan_out).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
            let b = (0..fan_out).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
            out.push(Layer {
                weight: Array2::from_shape_vec((fan_out, fan_in), w).expect("sized above"),
                bias: Array1::from(b),
                activation,
            });
        }
        Mlp::from_layers(out)
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<Model> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(8)? != MAGIC {
        return Err(GllError::Parse {
            offset: 0,
            message: "not a model checkpoint".into(),
        });
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(GllError::Parse {
            offset: 8,
            message: format!("unsupported checkpoint version {version}"),
        });
    }
    let input_mean = cur.f64()?;
    let input_std = cur.f64()?;
    let nets = cur.u32()?;
    if nets != 2 {
        return Err(GllError::Parse {
            offset: 28,
            message: format!("expected 2 networks, found {nets}"),
        });
    }
    let encoder = cur.mlp()?;
    let classifier = cur.mlp()?;
    if cur.pos != bytes.len() {
        return Err(GllError::Parse {
            offset: cur.pos,
            message: "trailing bytes after checkpoint".into(),
        });
    }
    if encoder.output_dim() != classifier.input_dim() {
        return Err(GllError::InvalidData(
            "classifier input does not match encoder output".into(),
        ));
    }
    Ok(Model {
        encoder,
        classifier,
        input_mean,
        input_std,
    })
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model> {
    decode_model(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_and_corruption() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut model = Model::new(&[3, 5, 2], 3, &mut rng).unwrap();
        model.input_mean = 0.25;
        let bytes = encode_model(&model);
        assert_eq!(decode_model(&bytes).unwrap(), model);
        assert!(matches!(
            decode_model(&bytes[..bytes.len() - 3]),
            Err(GllError::Parse { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_model(&bad), Err(GllError::Parse { offset: 0, .. })));
    }
}
