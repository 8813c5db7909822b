//! Analytical FLOPs of convolutional and dense layers, counted as two per
//! multiply-add; biases, normalisation and activations are not counted.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Two ET blocks of 2048 units, the default coder.
pub const INVKA_SPEC: &str = include_str!("../specs/invka.json");
/// Ten 2D convolutions of an illustrative set-based gait network; an estimate, not a measurement.
pub const GAITSET_LIKE_SPEC: &str = include_str!("../specs/gaitset_like.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv2d,
    Conv3d,
    Dense,
}

fn one() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    #[serde(default)]
    pub name: String,
    pub kind: LayerKind,
    #[serde(default)]
    pub c_in: u64,
    #[serde(default)]
    pub c_out: u64,
    #[serde(default)]
    pub n: u64,
    #[serde(default)]
    pub width: u64,
    #[serde(default)]
    pub height: u64,
    #[serde(default)]
    pub time: u64,
    #[serde(default)]
    pub i: u64,
    #[serde(default)]
    pub o: u64,
    #[serde(default = "one")]
    pub uses: u64,
}

impl LayerSpec {
    pub fn dense(i: u64, o: u64, uses: u64) -> Self {
        Self {
            name: String::new(),
            kind: LayerKind::Dense,
            c_in: 0,
            c_out: 0,
            n: 0,
            width: 0,
            height: 0,
            time: 0,
            i,
            o,
            uses,
        }
    }

    pub fn conv2d(c_in: u64, c_out: u64, n: u64, width: u64, height: u64) -> Self {
        Self {
            kind: LayerKind::Conv2d,
            c_in,
            c_out,
            n,
            width,
            height,
            i: 0,
            o: 0,
            ..Self::dense(0, 0, 1)
        }
    }
}

fn product(name: &str, factors: &[(&str, u64)]) -> Result<u64> {
    let mut acc: u64 = 2;
    for (field, v) in factors {
        if *v == 0 {
            return Err(Error::BadSpec(format!(
                "layer {name:?}: {field} must be positive"
            )));
        }
        acc = acc
            .checked_mul(*v)
            .ok_or_else(|| Error::BadSpec(format!("layer {name:?}: FLOPs overflow")))?;
    }
    Ok(acc)
}

pub fn layer_flops(spec: &LayerSpec) -> Result<u64> {
    let s = spec;
    let n = s.n;
    match s.kind {
        LayerKind::Conv2d => product(
            &s.name,
            &[
                ("c_in", s.c_in),
                ("n", n),
                ("n", n),
                ("c_out", s.c_out),
                ("width", s.width),
                ("height", s.height),
                ("uses", s.uses),
            ],
        ),
        LayerKind::Conv3d => product(
            &s.name,
            &[
                ("c_in", s.c_in),
                ("n", n),
                ("n", n),
                ("n", n),
                ("c_out", s.c_out),
                ("width", s.width),
                ("height", s.height),
                ("time", s.time),
                ("uses", s.uses),
            ],
        ),
        LayerKind::Dense => product(&s.name, &[("i", s.i), ("o", s.o), ("uses", s.uses)]),
    }
}

/// FLOPs of a dense layer over those of the convolution it would replace.
pub fn fc_conv_ratio(
    i: u64,
    o: u64,
    c_in: u64,
    c_out: u64,
    n: u64,
    w_post: u64,
    h_post: u64,
) -> Result<f64> {
    let fc = layer_flops(&LayerSpec::dense(i, o, 1))?;
    let conv = layer_flops(&LayerSpec::conv2d(c_in, c_out, n, w_post, h_post))?;
    Ok(fc as f64 / conv as f64)
}

pub fn fl_score(flops: u64) -> Result<f64> {
    if flops == 0 {
        return Err(Error::BadSpec("FL score of zero FLOPs".into()));
    }
    Ok(1e8 / flops as f64)
}

/// GFLOPs to two significant figures, e.g. `0.017` for 16,777,216.
pub fn format_gflops(flops: u64) -> String {
    let g = flops as f64 / 1e9;
    if g == 0.0 {
        return "0".into();
    }
    let digits = (1 - g.log10().floor() as i64).max(0) as usize;
    format!("{g:.digits$}")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerCost {
    pub name: String,
    pub kind: LayerKind,
    pub flops: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub layers: Vec<LayerCost>,
    pub total: u64,
    pub dense: u64,
    pub conv: u64,
    pub fl_score: f64,
}

impl CostReport {
    pub fn dense_share(&self) -> f64 {
        self.dense as f64 / self.total as f64
    }

    pub fn conv_share(&self) -> f64 {
        self.conv as f64 / self.total as f64
    }

    /// One row per layer, then `dense`, `conv` and `total` rows for a stacked bar.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["layer", "kind", "flops", "gflops", "share"])?;
        let share = |f: u64| format!("{:.6}", f as f64 / self.total as f64);
        for l in &self.layers {
            let kind = match l.kind {
                LayerKind::Conv2d => "conv2d",
                LayerKind::Conv3d => "conv3d",
                LayerKind::Dense => "dense",
            };
            w.write_record([
                l.name.as_str(),
                kind,
                &l.flops.to_string(),
                &format_gflops(l.flops),
                &share(l.flops),
            ])?;
        }
        for (label, f) in [
            ("dense", self.dense),
            ("conv", self.conv),
            ("total", self.total),
        ] {
            w.write_record([
                label,
                "summary",
                &f.to_string(),
                &format_gflops(f),
                &share(f),
            ])?;
        }
        w.write_record([
            "fl_score",
            "summary",
            "",
            "",
            &format!("{:.2e}", self.fl_score),
        ])?;
        w.flush()?;
        Ok(())
    }
}

pub fn model_cost(specs: &[LayerSpec]) -> Result<CostReport> {
    if specs.is_empty() {
        return Err(Error::BadSpec("empty layer list".into()));
    }
    let mut layers = Vec::with_capacity(specs.len());
    let (mut dense, mut conv) = (0u64, 0u64);
    for (idx, s) in specs.iter().enumerate() {
        let f = layer_flops(s)?;
        let bucket = if s.kind == LayerKind::Dense {
            &mut dense
        } else {
            &mut conv
        };
        *bucket = bucket
            .checked_add(f)
            .ok_or_else(|| Error::BadSpec("total FLOPs overflow".into()))?;
        let name = if s.name.is_empty() {
            format!("layer{idx}")
        } else {
            s.name.clone()
        };
        layers.push(LayerCost {
            name,
            kind: s.kind,
            flops: f,
        });
    }
    let total = dense
        .checked_add(conv)
        .ok_or_else(|| Error::BadSpec("total FLOPs overflow".into()))?;
    Ok(CostReport {
        layers,
        total,
        dense,
        conv,
        fl_score: fl_score(total)?,
    })
}

pub fn parse_specs(json: &str) -> Result<Vec<LayerSpec>> {
    Ok(serde_json::from_str(json)?)
}

pub fn load_specs(path: impl AsRef<Path>) -> Result<Vec<LayerSpec>> {
    parse_specs(&std::fs::read_to_string(path)?)
}
