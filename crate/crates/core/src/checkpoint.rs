//! `arpro-ckpt-v1` JSON checkpoints.
//!
//! Every checkpoint carries its parameters as a single base64 string of
//! little-endian f64 values. The `kind` field selects how the remaining
//! fields are interpreted:
//!
//! | kind       | extra fields                         | data layout                 |
//! |------------|--------------------------------------|-----------------------------|
//! | `mlp`      | `layers`, `time_embed`               | `w0, b0, w1, b1, ...`       |
//! | `recon`    | `layers`                             | autoencoder, as `mlp`       |
//! | `gauss`    | `n`, `sigma_floor`                   | `mu[0..n], sigma[0..n]`     |
//! | `denoiser` | `layers`, `time_embed`, `schedule`   | noise network, as `mlp`     |

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::diffusion::StdMode;
use crate::error::{Error, Result};
use crate::nn::{Activation, Layer, MlpParams};
use crate::tensor::Tensor;

pub const CHECKPOINT_SCHEMA: &str = "arpro-ckpt-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    #[serde(rename = "in")]
    pub input: usize,
    pub out: usize,
    pub act: Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    #[serde(rename = "T")]
    pub steps: usize,
    pub b_start: f64,
    pub b_end: f64,
    pub std_mode: StdMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub schema: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub layers: Vec<LayerSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_embed: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_floor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trained_steps: Option<u64>,
    pub data: String,
}

pub fn encode_f64s(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

pub fn decode_f64s(encoded: &str) -> Result<Vec<f64>> {
    let bytes = STANDARD
        .decode(encoded)
        .map_err(|e| Error::Checkpoint(format!("bad base64 payload: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Checkpoint(format!(
            "payload length {} is not a multiple of 8",
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("checkpoint payload".into()));
    }
    Ok(values)
}

impl Checkpoint {
    pub fn new(kind: &str, data: &[f64]) -> Self {
        Checkpoint {
            schema: CHECKPOINT_SCHEMA.into(),
            kind: kind.into(),
            layers: Vec::new(),
            time_embed: None,
            n: None,
            sigma_floor: None,
            schedule: None,
            trained_steps: None,
            data: encode_f64s(data),
        }
    }

    pub fn from_mlp(kind: &str, net: &MlpParams) -> Self {
        let data: Vec<f64> = net
            .tensors()
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect();
        let mut ckpt = Checkpoint::new(kind, &data);
        ckpt.layers = net
            .layers()
            .iter()
            .map(|l| LayerSpec {
                input: l.input_dim(),
                out: l.output_dim(),
                act: l.act,
            })
            .collect();
        ckpt.time_embed = net.time_embed();
        ckpt
    }

    pub fn to_mlp(&self) -> Result<MlpParams> {
        if self.layers.is_empty() {
            return Err(Error::Checkpoint(format!("kind {} has no layers", self.kind)));
        }
        let values = decode_f64s(&self.data)?;
        let needed: usize = self.layers.iter().map(|l| l.input * l.out + l.out).sum();
        if values.len() != needed {
            return Err(Error::Checkpoint(format!(
                "layers need {needed} values, payload has {}",
                values.len()
            )));
        }
        let mut offset = 0;
        let mut layers = Vec::with_capacity(self.layers.len());
        for spec in &self.layers {
            let wlen = spec.input * spec.out;
            let weight = Tensor::matrix(
                spec.input,
                spec.out,
                values[offset..offset + wlen].to_vec(),
            )?;
            offset += wlen;
            let bias = Tensor::vector(values[offset..offset + spec.out].to_vec());
            offset += spec.out;
            layers.push(Layer {
                weight,
                bias,
                act: spec.act,
            });
        }
        MlpParams::new(layers, self.time_embed)
            .map_err(|e| Error::Checkpoint(format!("inconsistent layers: {e}")))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.schema != CHECKPOINT_SCHEMA {
            return Err(Error::Checkpoint(format!("unknown schema {:?}", self.schema)));
        }
        if self.kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected kind {kind:?}, found {:?}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str, context: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text).map_err(|source| Error::Json {
            context: context.to_string(),
            source,
        })?;
        if ckpt.schema != CHECKPOINT_SCHEMA {
            return Err(Error::Checkpoint(format!("unknown schema {:?}", ckpt.schema)));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }
}
