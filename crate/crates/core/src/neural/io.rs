//! Versioned binary weight files plus a lossless JSON export.
//!
//! Layout: magic, format version, class count, model kind, layer dims, then
//! row-major little-endian f64 tensors in declared order. Loading reproduces
//! every value bitwise. The JSON export uses shortest round-trip float
//! formatting, so it is lossless as well.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::lstm::{LstmLayerParams, LstmParams};
use super::matrix::Matrix;
use super::mlp::{Activation, DenseLayer, MlpParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"ROMAPWTS";
const VERSION: u32 = 1;

const KIND_FUSION: u8 = 0;
const KIND_PERCEPTION: u8 = 1;

/// A persistable set of trained weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelWeights {
    /// The shared recurrent fusion cell and its decoder.
    Fusion(LstmParams),
    /// Point-level and object-level perception networks.
    Perception {
        point_mlp: MlpParams,
        object_mlp: MlpParams,
    },
}

impl ModelWeights {
    pub fn class_count(&self) -> usize {
        match self {
            ModelWeights::Fusion(p) => p.n_classes,
            ModelWeights::Perception { object_mlp, .. } => object_mlp.output_dim(),
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format(field, "file truncated"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, field: &str) -> Result<u8> {
        Ok(self.take(1, field)?[0])
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        let b = self.take(4, field)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize, field: &str) -> Result<Vec<f64>> {
        let b = self.take(8 * n, field)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn write_mlp(out: &mut Vec<u8>, mlp: &MlpParams) {
    put_u32(out, mlp.layers.len() as u32);
    for l in &mlp.layers {
        put_u32(out, l.out_dim() as u32);
        put_u32(out, l.in_dim() as u32);
        out.push(match l.activation {
            Activation::Relu => 0,
            Activation::Identity => 1,
        });
    }
    for l in &mlp.layers {
        put_f64s(out, l.weight.data());
        put_f64s(out, &l.bias);
    }
}

fn read_mlp(r: &mut Reader, which: &str) -> Result<MlpParams> {
    let n = r.u32(&format!("{which}.num_layers"))? as usize;
    let mut shapes = Vec::with_capacity(n);
    for k in 0..n {
        let out_dim = r.u32(&format!("{which}.layer{k}.out_dim"))? as usize;
        let in_dim = r.u32(&format!("{which}.layer{k}.in_dim"))? as usize;
        let act = match r.u8(&format!("{which}.layer{k}.activation"))? {
            0 => Activation::Relu,
            1 => Activation::Identity,
            v => {
                return Err(Error::format(
                    format!("{which}.layer{k}.activation"),
                    format!("unknown activation tag {v}"),
                ))
            }
        };
        shapes.push((out_dim, in_dim, act));
    }
    let mut layers = Vec::with_capacity(n);
    for (k, (out_dim, in_dim, act)) in shapes.into_iter().enumerate() {
        let weight = Matrix::from_vec(
            out_dim,
            in_dim,
            r.f64s(out_dim * in_dim, &format!("{which}.layer{k}.weight"))?,
        )
        .map_err(|e| Error::format(format!("{which}.layer{k}.weight"), e.to_string()))?;
        let bias = r.f64s(out_dim, &format!("{which}.layer{k}.bias"))?;
        layers.push(DenseLayer {
            weight,
            bias,
            activation: act,
        });
    }
    Ok(MlpParams { layers })
}

/// Serialize to the versioned binary layout.
pub fn encode_model(model: &ModelWeights) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, model.class_count() as u32);
    match model {
        ModelWeights::Fusion(p) => {
            out.push(KIND_FUSION);
            put_u32(&mut out, p.input_dim as u32);
            put_u32(&mut out, p.hidden_dim as u32);
            put_u32(&mut out, p.layers.len() as u32);
            for l in &p.layers {
                put_f64s(&mut out, l.w_input.data());
                put_f64s(&mut out, l.w_hidden.data());
                put_f64s(&mut out, &l.bias);
            }
            put_f64s(&mut out, p.decoder_weight.data());
            put_f64s(&mut out, &p.decoder_bias);
        }
        ModelWeights::Perception {
            point_mlp,
            object_mlp,
        } => {
            out.push(KIND_PERCEPTION);
            write_mlp(&mut out, point_mlp);
            write_mlp(&mut out, object_mlp);
        }
    }
    out
}

/// Parse the versioned binary layout.
pub fn decode_model(buf: &[u8]) -> Result<ModelWeights> {
    let mut r = Reader { buf, pos: 0 };
    let magic = r.take(8, "magic")?;
    if magic != MAGIC {
        return Err(Error::format("magic", "not a weight file"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(
            "version",
            format!("unsupported version {version}, expected {VERSION}"),
        ));
    }
    let n_classes = r.u32("class_count")? as usize;
    match r.u8("kind")? {
        KIND_FUSION => {
            let input_dim = r.u32("input_dim")? as usize;
            let hidden_dim = r.u32("hidden_dim")? as usize;
            let num_layers = r.u32("num_layers")? as usize;
            let mut layers = Vec::with_capacity(num_layers);
            for l in 0..num_layers {
                let in_dim = if l == 0 { input_dim } else { hidden_dim };
                let w_input = Matrix::from_vec(
                    4 * hidden_dim,
                    in_dim,
                    r.f64s(4 * hidden_dim * in_dim, &format!("layer{l}.w_input"))?,
                )
                .map_err(|e| Error::format(format!("layer{l}.w_input"), e.to_string()))?;
                let w_hidden = Matrix::from_vec(
                    4 * hidden_dim,
                    hidden_dim,
                    r.f64s(4 * hidden_dim * hidden_dim, &format!("layer{l}.w_hidden"))?,
                )
                .map_err(|e| Error::format(format!("layer{l}.w_hidden"), e.to_string()))?;
                let bias = r.f64s(4 * hidden_dim, &format!("layer{l}.bias"))?;
                layers.push(LstmLayerParams {
                    w_input,
                    w_hidden,
                    bias,
                });
            }
            let decoder_weight = Matrix::from_vec(
                n_classes,
                hidden_dim,
                r.f64s(n_classes * hidden_dim, "decoder_weight")?,
            )
            .map_err(|e| Error::format("decoder_weight", e.to_string()))?;
            let decoder_bias = r.f64s(n_classes, "decoder_bias")?;
            let params = LstmParams {
                layers,
                decoder_weight,
                decoder_bias,
                input_dim,
                hidden_dim,
                n_classes,
            };
            params.validate()?;
            Ok(ModelWeights::Fusion(params))
        }
        KIND_PERCEPTION => {
            let point_mlp = read_mlp(&mut r, "point_mlp")?;
            let object_mlp = read_mlp(&mut r, "object_mlp")?;
            point_mlp.validate()?;
            object_mlp.validate()?;
            Ok(ModelWeights::Perception {
                point_mlp,
                object_mlp,
            })
        }
        v => Err(Error::format("kind", format!("unknown model kind {v}"))),
    }
}

pub fn save_model(path: &Path, model: &ModelWeights) -> Result<()> {
    let bytes = encode_model(model);
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(&bytes)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_model(path: &Path) -> Result<ModelWeights> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    decode_model(&buf)
}

/// Lossless structured-text form of the same content.
pub fn export_json(model: &ModelWeights) -> String {
    serde_json::to_string_pretty(model).expect("weights serialize cleanly")
}

pub fn import_json(text: &str) -> Result<ModelWeights> {
    serde_json::from_str(text).map_err(|e| Error::format("json", e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn sample_fusion() -> ModelWeights {
        let mut rng = stream_rng(17, &[0]);
        ModelWeights::Fusion(LstmParams::init(6, 5, 2, 4, &mut rng).unwrap())
    }

    fn sample_perception() -> ModelWeights {
        let mut rng = stream_rng(18, &[0]);
        ModelWeights::Perception {
            point_mlp: MlpParams::init(
                &[3, 8, 16],
                &[Activation::Relu, Activation::Identity],
                &mut rng,
            )
            .unwrap(),
            object_mlp: MlpParams::init(
                &[16, 8, 4],
                &[Activation::Relu, Activation::Identity],
                &mut rng,
            )
            .unwrap(),
        }
    }

    #[test]
    fn binary_roundtrip_is_bitwise() {
        for model in [sample_fusion(), sample_perception()] {
            let bytes = encode_model(&model);
            let back = decode_model(&bytes).unwrap();
            assert_eq!(model, back);
        }
    }

    #[test]
    fn json_roundtrip_is_lossless() {
        for model in [sample_fusion(), sample_perception()] {
            let text = export_json(&model);
            let back = import_json(&text).unwrap();
            assert_eq!(model, back);
        }
    }

    #[test]
    fn bad_magic_names_the_field() {
        let mut bytes = encode_model(&sample_fusion());
        bytes[0] = b'X';
        let err = decode_model(&bytes).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }

    #[test]
    fn truncated_file_names_the_missing_field() {
        let bytes = encode_model(&sample_fusion());
        let err = decode_model(&bytes[..bytes.len() - 4]).unwrap_err();
        assert!(err.to_string().contains("decoder_bias"), "{err}");
    }

    #[test]
    fn wrong_version_is_rejected() {
        let mut bytes = encode_model(&sample_fusion());
        bytes[8] = 99;
        let err = decode_model(&bytes).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }
}
