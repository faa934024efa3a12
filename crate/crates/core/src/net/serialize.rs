//! Versioned JSON model files.
//!
//! ```json
//! {
//!   "version": 1,
//!   "normalization_mode": "bjorck",
//!   "input_shape": {"h": 1, "w": 1, "c": 2},
//!   "normalization": {"power": {"max_iters": 100, "tol": 1e-6},
//!                     "bjorck": {"order": 1, "iters": 15}},
//!   "layers": [
//!     {"kind": "dense", "params": {"inputs": 2, "units": 64},
//!      "weights": [...], "bias": [...]},
//!     {"kind": "groupsort", "params": {"group": 2}}
//!   ]
//! }
//! ```
//!
//! Weights are row-major. Numbers are written in shortest round-trip form
//! and parsed exactly, so a save/load cycle reproduces every weight bit.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::layer::{Layer, Shape};
use super::model::{Model, NormalizationMode, NormalizationSettings};
use crate::constraints::ConvGeometry;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

pub const MODEL_SCHEMA_VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u64,
    normalization_mode: NormalizationMode,
    input_shape: Shape,
    normalization: NormalizationSettings,
    layers: Vec<LayerRecord>,
}

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    kind: String,
    #[serde(default)]
    params: BTreeMap<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bias: Option<Vec<f64>>,
}

fn to_f64<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

fn from_f64<T: Scalar>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::of(x)).collect()
}

fn record<T: Scalar>(layer: &Layer<T>) -> LayerRecord {
    let mut params = BTreeMap::new();
    let mut put = |k: &str, v: Value| {
        params.insert(k.to_string(), v);
    };
    let (mut weights, mut bias) = (None, None);
    match layer {
        Layer::Dense { weight, bias: b } => {
            put("inputs", weight.cols().into());
            put("units", weight.rows().into());
            weights = Some(to_f64(weight.as_slice()));
            bias = Some(to_f64(b));
        }
        Layer::Conv2d { geometry: g, kernel, bias: b } => {
            put("kernel", g.kernel.into());
            put("stride", g.stride.into());
            put("in_h", g.in_h.into());
            put("in_w", g.in_w.into());
            put("out_h", g.out_h.into());
            put("out_w", g.out_w.into());
            put("in_channels", g.in_channels.into());
            put("out_channels", g.out_channels.into());
            weights = Some(to_f64(kernel.as_slice()));
            bias = Some(to_f64(b));
        }
        Layer::GroupSort { group } => put("group", (*group).into()),
        Layer::FullSort => {}
        Layer::ConstPrelu { alpha } => put("alpha", alpha.as_f64().into()),
        Layer::PnormPool {
            pool,
            stride,
            p,
            mean_factor,
        } => {
            put("pool", (*pool).into());
            put("stride", (*stride).into());
            put("p", p.as_f64().into());
            put("mean_factor", (*mean_factor).into());
        }
        Layer::MaxPool { pool, stride } | Layer::AvgPool { pool, stride } => {
            put("pool", (*pool).into());
            put("stride", (*stride).into());
        }
    }
    LayerRecord {
        kind: layer.kind().to_string(),
        params,
        weights,
        bias,
    }
}

struct Params<'a> {
    kind: &'a str,
    map: &'a BTreeMap<String, Value>,
}

impl Params<'_> {
    fn get(&self, key: &str) -> Result<&Value> {
        self.map
            .get(key)
            .ok_or_else(|| Error::Schema(format!("{} layer lacks param `{key}`", self.kind)))
    }

    fn usize(&self, key: &str) -> Result<usize> {
        self.get(key)?
            .as_u64()
            .map(|v| v as usize)
            .ok_or_else(|| Error::Schema(format!("{}.{key} must be a nonnegative integer", self.kind)))
    }

    fn f64(&self, key: &str) -> Result<f64> {
        self.get(key)?
            .as_f64()
            .ok_or_else(|| Error::Schema(format!("{}.{key} must be a number", self.kind)))
    }

    fn bool(&self, key: &str) -> Result<bool> {
        self.get(key)?
            .as_bool()
            .ok_or_else(|| Error::Schema(format!("{}.{key} must be a boolean", self.kind)))
    }
}

fn take<'a>(rec: &'a LayerRecord, field: &str, data: &'a Option<Vec<f64>>) -> Result<&'a [f64]> {
    data.as_deref()
        .ok_or_else(|| Error::Schema(format!("{} layer lacks `{field}`", rec.kind)))
}

fn layer<T: Scalar>(rec: &LayerRecord) -> Result<Layer<T>> {
    let p = Params {
        kind: &rec.kind,
        map: &rec.params,
    };
    Ok(match rec.kind.as_str() {
        "dense" => {
            let (inputs, units) = (p.usize("inputs")?, p.usize("units")?);
            Layer::Dense {
                weight: Matrix::new(units, inputs, from_f64(take(rec, "weights", &rec.weights)?))?,
                bias: from_f64(take(rec, "bias", &rec.bias)?),
            }
        }
        "conv2d" => {
            let geometry = ConvGeometry {
                kernel: p.usize("kernel")?,
                stride: p.usize("stride")?,
                in_w: p.usize("in_w")?,
                in_h: p.usize("in_h")?,
                out_w: p.usize("out_w")?,
                out_h: p.usize("out_h")?,
                in_channels: p.usize("in_channels")?,
                out_channels: p.usize("out_channels")?,
            };
            geometry.validate()?;
            let cols = geometry.kernel * geometry.kernel * geometry.in_channels;
            Layer::Conv2d {
                geometry,
                kernel: Matrix::new(geometry.out_channels, cols, from_f64(take(rec, "weights", &rec.weights)?))?,
                bias: from_f64(take(rec, "bias", &rec.bias)?),
            }
        }
        "groupsort" => Layer::GroupSort {
            group: p.usize("group")?,
        },
        "fullsort" => Layer::FullSort,
        "const_prelu" => Layer::ConstPrelu {
            alpha: T::of(p.f64("alpha")?),
        },
        "pnorm_pool" => Layer::PnormPool {
            pool: p.usize("pool")?,
            stride: p.usize("stride")?,
            p: T::of(p.f64("p")?),
            mean_factor: p.bool("mean_factor")?,
        },
        "maxpool" => Layer::MaxPool {
            pool: p.usize("pool")?,
            stride: p.usize("stride")?,
        },
        "avgpool" => Layer::AvgPool {
            pool: p.usize("pool")?,
            stride: p.usize("stride")?,
        },
        other => return Err(Error::Schema(format!("unknown layer kind `{other}`"))),
    })
}

pub fn model_to_json<T: Scalar>(model: &Model<T>) -> Result<String> {
    let file = ModelFile {
        version: MODEL_SCHEMA_VERSION,
        normalization_mode: model.mode(),
        input_shape: model.input_shape(),
        normalization: model.settings(),
        layers: model.layers().iter().map(record).collect(),
    };
    let mut s = serde_json::to_string_pretty(&file)?;
    s.push('\n');
    Ok(s)
}

pub fn model_from_json<T: Scalar>(text: &str) -> Result<Model<T>> {
    let value: Value = serde_json::from_str(text)?;
    match value.get("version") {
        None => return Err(Error::Schema("model file has no `version`".into())),
        Some(v) if v.as_u64() != Some(MODEL_SCHEMA_VERSION) => {
            return Err(Error::Schema(format!(
                "unsupported model version {v}, expected {MODEL_SCHEMA_VERSION}"
            )))
        }
        _ => {}
    }
    let file: ModelFile = serde_json::from_value(value)?;
    let layers = file.layers.iter().map(layer).collect::<Result<Vec<_>>>()?;
    Model::new(file.input_shape, layers, file.normalization_mode, file.normalization)
}

pub fn save_model<T: Scalar>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, model_to_json(model)?)?;
    Ok(())
}

pub fn load_model<T: Scalar>(path: impl AsRef<Path>) -> Result<Model<T>> {
    model_from_json(&std::fs::read_to_string(path)?)
}
