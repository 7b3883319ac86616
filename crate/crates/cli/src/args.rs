//! Flag groups shared by several subcommands, and the readers behind them.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::Args;
use focalmargin::format::{decode_pgm_mask, parse_grid_text};
use focalmargin::synth::{DatasetSpec, SynthConfig, RATIO_PRESETS};
use focalmargin::{Grid2D, LossParams, MaskGrid};
use serde_json::{Map, Value};

#[derive(Debug, Clone, Args)]
pub struct LossArgs {
    /// Loss parameters as inline JSON (`{"margin": 1.0}`) or a path to a JSON file.
    /// Missing fields keep their defaults; the flags below override it.
    #[arg(long, value_name = "JSON|FILE")]
    pub params: Option<String>,
    /// Background focal attenuation exponent [default: 2.0]
    #[arg(long)]
    pub gamma_hat: Option<f64>,
    /// Foreground/background weight in [0, 1]; 0.5 makes Tversky equal Dice [default: 0.7]
    #[arg(long)]
    pub delta: Option<f64>,
    /// Focal Tversky exponent [default: 0.75]
    #[arg(long)]
    pub gamma_tv: Option<f64>,
    /// Foreground logit margin [default: 0.5]
    #[arg(long)]
    pub margin: Option<f64>,
    /// Entropy weight of the weighted compound losses, in [0, 1] [default: 0.5]
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Overlap smoothing constant [default: 1.0]
    #[arg(long)]
    pub smooth: Option<f64>,
    /// Probability clamp applied before every log [default: 1e-7]
    #[arg(long)]
    pub eps: Option<f64>,
}

impl LossArgs {
    pub fn resolve(&self) -> Result<LossParams> {
        let mut obj = match &self.params {
            None => Map::new(),
            Some(raw) => read_params_object(raw)?,
        };
        let flags = [
            ("gamma_hat", self.gamma_hat),
            ("delta", self.delta),
            ("gamma_tv", self.gamma_tv),
            ("margin", self.margin),
            ("lambda", self.lambda),
            ("smooth", self.smooth),
            ("eps", self.eps),
        ];
        for (key, v) in flags {
            if let Some(v) = v {
                obj.insert(key.into(), Value::from(v));
            }
        }
        params_from_object(obj)
    }
}

fn read_params_object(raw: &str) -> Result<Map<String, Value>> {
    let text = if raw.trim_start().starts_with('{') {
        raw.to_string()
    } else {
        fs::read_to_string(raw).with_context(|| format!("reading params file {raw}"))?
    };
    match serde_json::from_str(&text)? {
        Value::Object(obj) => Ok(obj),
        _ => bail!(focalmargin::Error::Usage("--params must be a JSON object".into())),
    }
}

pub fn params_from_object(obj: Map<String, Value>) -> Result<LossParams> {
    let params: LossParams = serde_json::from_value(Value::Object(obj)).map_err(|e| {
        focalmargin::Error::Param(format!("invalid loss parameters: {e}"))
    })?;
    Ok(params)
}

/// `KIND` or `KIND,key=value,...`; keys are loss parameter names.
pub fn parse_variant(spec: &str, base: &LossParams) -> Result<(focalmargin::LossKind, LossParams)> {
    let mut parts = spec.split(',');
    let kind = parts.next().unwrap_or_default().trim().parse()?;
    let mut obj = match serde_json::to_value(base)? {
        Value::Object(obj) => obj,
        _ => unreachable!("params serialize to an object"),
    };
    for part in parts {
        let (key, value) = part.split_once('=').ok_or_else(|| {
            focalmargin::Error::Usage(format!("variant entry {part:?} is not key=value"))
        })?;
        let value: f64 = value.trim().parse().map_err(|_| {
            focalmargin::Error::Usage(format!("variant value {value:?} is not a number"))
        })?;
        obj.insert(key.trim().into(), Value::from(value));
    }
    Ok((kind, params_from_object(obj)?))
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Base seed; sample i derives its own seed from it
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 96)]
    pub height: usize,
    #[arg(long, default_value_t = 96)]
    pub width: usize,
    /// Target foreground fraction
    #[arg(long, default_value_t = 0.05, conflicts_with = "preset")]
    pub ratio: f64,
    /// Named target ratio: deepcrack (0.0505), crack500 (0.073) or panelcrack (0.0315)
    #[arg(long)]
    pub preset: Option<String>,
    /// Brush width of each stroke in pixels
    #[arg(long, default_value_t = 2)]
    pub stroke_width: usize,
    /// Number of random-walk curves per mask
    #[arg(long, default_value_t = 3)]
    pub curves: usize,
    /// Standard deviation of the Gaussian feature noise
    #[arg(long, default_value_t = 0.25)]
    pub noise: f64,
    /// Number of feature channels (channel k is the mask blurred with radius k, plus noise)
    #[arg(long, default_value_t = 2)]
    pub channels: usize,
}

impl SynthArgs {
    pub fn config(&self) -> Result<SynthConfig> {
        let target_ratio = match &self.preset {
            None => self.ratio,
            Some(name) => RATIO_PRESETS
                .iter()
                .find(|(n, _)| n.eq_ignore_ascii_case(name))
                .map(|&(_, r)| r)
                .ok_or_else(|| focalmargin::Error::Usage(format!("unknown preset {name:?}")))?,
        };
        let cfg = SynthConfig {
            seed: self.seed,
            height: self.height,
            width: self.width,
            target_ratio,
            stroke_width: self.stroke_width,
            n_curves: self.curves,
            feature_noise: self.noise,
            feature_channels: self.channels,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn dataset(&self, n_samples: usize) -> Result<DatasetSpec> {
        Ok(DatasetSpec {
            synth: self.config()?,
            n_samples,
        })
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn is_pgm(bytes: &[u8]) -> bool {
    bytes.starts_with(b"P5")
}

pub fn read_grid_file(path: &Path) -> Result<Grid2D> {
    let bytes = read_bytes(path)?;
    let text = String::from_utf8_lossy(&bytes);
    Ok(parse_grid_text(&text, &path.display().to_string())?)
}

/// A binary PGM, or a grid text file holding only 0 and 1.
pub fn read_mask_file(path: &Path) -> Result<MaskGrid> {
    let bytes = read_bytes(path)?;
    let name = path.display().to_string();
    if is_pgm(&bytes) {
        return Ok(decode_pgm_mask(&bytes, &name)?);
    }
    let grid = parse_grid_text(&String::from_utf8_lossy(&bytes), &name)?;
    Ok(MaskGrid::try_from(grid)?)
}

/// A PGM mask is taken as a hard prediction; a grid text file as probabilities.
pub fn read_prediction_file(path: &Path, threshold: f64) -> Result<MaskGrid> {
    let bytes = read_bytes(path)?;
    let name = path.display().to_string();
    if is_pgm(&bytes) {
        return Ok(decode_pgm_mask(&bytes, &name)?);
    }
    let grid = parse_grid_text(&String::from_utf8_lossy(&bytes), &name)?;
    Ok(focalmargin::metrics::binarize(&grid, threshold)?)
}

pub fn parse_m_list(raw: &str) -> Result<Vec<f64>> {
    raw.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            match s.trim().parse::<f64>() {
                Ok(m) if m.is_finite() => Ok(m),
                _ => bail!(focalmargin::Error::Usage(format!(
                    "--m-list entry {s:?} is not a finite number"
                ))),
            }
        })
        .collect()
}
