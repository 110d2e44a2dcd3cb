//! `DLCM` model files.
//!
//! Layout: the 4 ASCII bytes `DLCM`, a little-endian `u32` byte length, a
//! JSON block of that length holding the network configuration and the
//! difficulty-feature normalization, then one `DLC1` tensor record per
//! weight tensor: for each convolution window its weight and bias, then
//! for each fusion layer its weight and bias. Biases are stored as `1 x n`.
//! Weights are stored as `f32`.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{ConvFilter, Dense, DfNormalization, NetConfig, NetWeights, PredictorModel};
use crate::dataset::manifest::atomic_write;
use crate::dataset::tensor::{append_tensor_record, read_tensor_prefix};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"DLCM";

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    config: NetConfig,
    df_norm: DfNormalization,
}

fn push_matrix(out: &mut Vec<u8>, m: &Array2<f64>) {
    append_tensor_record(out, &m.mapv(|v| v as f32));
}

fn push_vector(out: &mut Vec<u8>, v: &Array1<f64>) {
    let m = Array2::from_shape_fn((1, v.len()), |(_, j)| v[j] as f32);
    append_tensor_record(out, &m);
}

pub fn write_model(model: &PredictorModel) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&ModelHeader {
        config: model.config.clone(),
        df_norm: model.df_norm,
    })?;
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for f in &model.weights.conv {
        push_matrix(&mut out, &f.weight);
        push_vector(&mut out, &f.bias);
    }
    for l in &model.weights.fusion {
        push_matrix(&mut out, &l.weight);
        push_vector(&mut out, &l.bias);
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn tensor(&mut self, name: &str, shape: (usize, usize)) -> Result<Array2<f64>> {
        let (m, used) = read_tensor_prefix(&self.bytes[self.pos..], name)?;
        if m.dim() != shape {
            return Err(Error::header(
                name,
                format!("shape {:?}, expected {:?}", m.dim(), shape),
            ));
        }
        self.pos += used;
        Ok(m.mapv(f64::from))
    }
}

pub fn read_model(bytes: &[u8]) -> Result<PredictorModel> {
    if bytes.len() < 8 || &bytes[..4] != MODEL_MAGIC {
        return Err(Error::header("model", "bad magic, expected DLCM"));
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let json = bytes
        .get(8..8 + len)
        .ok_or_else(|| Error::header("model", "truncated config block"))?;
    let header: ModelHeader = serde_json::from_slice(json).map_err(|e| Error::header("model", e.to_string()))?;
    let cfg = header.config;
    cfg.check()?;
    let mut cur = Cursor { bytes, pos: 8 + len };
    let d = cfg.encoder_dim;
    let ch = cfg.channels_per_window;
    let mut conv = Vec::with_capacity(cfg.window_sizes.len());
    for &w in &cfg.window_sizes {
        let weight = cur.tensor(&format!("conv{w}.weight"), (ch, w * d))?;
        let bias = cur.tensor(&format!("conv{w}.bias"), (1, ch))?.row(0).to_owned();
        conv.push(ConvFilter {
            window: w,
            weight,
            bias,
        });
    }
    let mut fusion = Vec::with_capacity(cfg.fusion_layers + 1);
    let mut fan_in = cfg.fusion_input_dim();
    for layer in 0..=cfg.fusion_layers {
        let out = if layer == cfg.fusion_layers {
            1
        } else {
            cfg.fusion_hidden
        };
        let weight = cur.tensor(&format!("fusion{layer}.weight"), (out, fan_in))?;
        let bias = cur.tensor(&format!("fusion{layer}.bias"), (1, out))?.row(0).to_owned();
        fusion.push(Dense { weight, bias });
        fan_in = out;
    }
    if cur.pos != bytes.len() {
        return Err(Error::header(
            "model",
            format!("{} trailing bytes", bytes.len() - cur.pos),
        ));
    }
    Ok(PredictorModel {
        config: cfg,
        weights: NetWeights { conv, fusion },
        df_norm: header.df_norm,
    })
}

pub fn save_model(model: &PredictorModel, path: impl AsRef<Path>) -> Result<()> {
    atomic_write(path, &write_model(model)?)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<PredictorModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|_| Error::MissingFile {
        record: "model".into(),
        path: path.to_path_buf(),
    })?;
    read_model(&bytes)
}
