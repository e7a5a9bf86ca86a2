//! Versioned binary checkpoints: architecture metadata as JSON, every
//! tensor in declared order, and a sha256 trailer over the whole file.

use super::{AdamHyper, AdamState, DetNetParams, FullyConParams, NetworkParams, Parametrized};
use crate::channel::ChannelModel;
use crate::constellation::{make_constellation, ConstellationKind};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

const MAGIC: &[u8; 4] = b"MDET";
const VERSION: u32 = 1;

/// Optimizer state summary stored next to the moment vectors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamMeta {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
}

impl AdamMeta {
    pub fn from_state(s: &AdamState) -> Self {
        AdamMeta {
            lr: s.hyper.lr,
            beta1: s.hyper.beta1,
            beta2: s.hyper.beta2,
            eps: s.hyper.eps,
            step: s.step,
        }
    }

    fn hyper(&self) -> AdamHyper {
        AdamHyper {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// Everything needed to rebuild the parameter shapes and to refuse a
/// load into a mismatched evaluation configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub architecture: String,
    pub constellation: ConstellationKind,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub complex: bool,
    pub layers: usize,
    /// FullyCon: the full width chain including input and output.
    /// DetNet: `[z_width, v_width]`.
    pub widths: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    pub training_iterations: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adam: Option<AdamMeta>,
}

impl CheckpointMeta {
    pub fn dim_x(&self) -> usize {
        if self.complex {
            2 * self.k
        } else {
            self.k
        }
    }

    pub fn dim_y(&self) -> usize {
        if self.complex {
            2 * self.n
        } else {
            self.n
        }
    }

    /// Rejects use of this checkpoint with a different system setup.
    pub fn check_compatible(&self, model: &ChannelModel, kind: ConstellationKind) -> Result<()> {
        if self.constellation != kind {
            return Err(Error::Config(format!(
                "checkpoint was trained on {} but {} was requested",
                self.constellation, kind
            )));
        }
        if self.k != model.k || self.n != model.n || self.complex != model.complex {
            return Err(Error::Config(format!(
                "checkpoint system is K={} N={} complex={} but the requested model is \
                 K={} N={} complex={}",
                self.k, self.n, self.complex, model.k, model.n, model.complex
            )));
        }
        Ok(())
    }
}

/// Zero-valued parameters with the shapes the metadata describes.
pub fn params_from_meta(meta: &CheckpointMeta) -> Result<NetworkParams> {
    let c = make_constellation(meta.constellation);
    let dx = meta.dim_x();
    let dy = meta.dim_y();
    match meta.architecture.as_str() {
        "fullycon" => {
            if meta.widths.len() != meta.layers + 1 {
                return Err(Error::Integrity(format!(
                    "fullycon checkpoint lists {} widths for {} layers",
                    meta.widths.len(),
                    meta.layers
                )));
            }
            if meta.widths[0] != dy || *meta.widths.last().unwrap() != c.onehot_dim * dx {
                return Err(Error::Integrity(
                    "fullycon width chain does not match the stored system".into(),
                ));
            }
            Ok(NetworkParams::FullyCon(FullyConParams::zeros(&meta.widths)?))
        }
        "detnet" => {
            let [zw, vw] = meta.widths[..] else {
                return Err(Error::Integrity(
                    "detnet checkpoint must list exactly [z_width, v_width]".into(),
                ));
            };
            let eta = meta.eta.ok_or_else(|| {
                Error::Integrity("detnet checkpoint is missing eta".into())
            })?;
            Ok(NetworkParams::DetNet(DetNetParams::zeros(
                dx,
                dy,
                c.onehot_dim,
                meta.layers,
                zw,
                vw,
                eta,
            )?))
        }
        other => Err(Error::Integrity(format!(
            "unknown architecture {other:?} in checkpoint"
        ))),
    }
}

fn push_tensor(out: &mut Vec<u8>, t: &[f64]) {
    out.extend_from_slice(&(t.len() as u64).to_le_bytes());
    for v in t {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Integrity("checkpoint file is truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn take_u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn take_u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn take_tensor_into(&mut self, t: &mut [f64]) -> Result<()> {
        let len = self.take_u64()? as usize;
        if len != t.len() {
            return Err(Error::Integrity(format!(
                "tensor of length {len} where {} was expected",
                t.len()
            )));
        }
        let bytes = self.take(8 * len)?;
        for (i, v) in t.iter_mut().enumerate() {
            *v = f64::from_le_bytes(bytes[8 * i..8 * i + 8].try_into().unwrap());
        }
        Ok(())
    }
}

/// Serializes metadata, parameters, and optionally optimizer moments.
pub fn save_checkpoint(
    path: &Path,
    meta: &CheckpointMeta,
    params: &NetworkParams,
    adam: Option<&AdamState>,
) -> Result<()> {
    if meta.architecture != params.architecture_name() {
        return Err(Error::Internal(format!(
            "metadata says {} but the model is {}",
            meta.architecture,
            params.architecture_name()
        )));
    }
    let expected = params_from_meta(meta)?;
    let shapes: Vec<usize> = expected.tensors().iter().map(|t| t.len()).collect();
    let actual: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    if shapes != actual {
        return Err(Error::Internal(
            "checkpoint metadata does not describe this model's shapes".into(),
        ));
    }
    if meta.adam.is_some() != adam.is_some() {
        return Err(Error::Internal(
            "adam metadata and adam state must be given together".into(),
        ));
    }

    let meta_json = serde_json::to_vec(meta)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta_json);
    for t in params.tensors() {
        push_tensor(&mut out, t);
    }
    if let Some(state) = adam {
        if state.m.len() != params.num_params() {
            return Err(Error::Internal(
                "adam state does not match the model size".into(),
            ));
        }
        push_tensor(&mut out, &state.m);
        push_tensor(&mut out, &state.v);
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);

    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &out)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads a checkpoint back; any corruption or truncation is an
/// integrity error.
pub fn load_checkpoint(path: &Path) -> Result<(CheckpointMeta, NetworkParams, Option<AdamState>)> {
    let buf = std::fs::read(path)?;
    if buf.len() < MAGIC.len() + 4 + 8 + 32 {
        return Err(Error::Integrity("checkpoint file is truncated".into()));
    }
    let (body, trailer) = buf.split_at(buf.len() - 32);
    let digest = Sha256::digest(body);
    if digest.as_slice() != trailer {
        return Err(Error::Integrity("checkpoint checksum mismatch".into()));
    }

    let mut r = Reader { buf: body, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Integrity("not a checkpoint file".into()));
    }
    let version = r.take_u32()?;
    if version != VERSION {
        return Err(Error::Integrity(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let meta_len = r.take_u64()? as usize;
    let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?)?;

    let mut params = params_from_meta(&meta)?;
    for t in params.tensors_mut() {
        r.take_tensor_into(t)?;
    }
    let adam = match meta.adam {
        Some(am) => {
            let mut state = AdamState::new(params.num_params(), am.hyper());
            r.take_tensor_into(&mut state.m)?;
            r.take_tensor_into(&mut state.v)?;
            state.step = am.step;
            Some(state)
        }
        None => None,
    };
    if r.pos != body.len() {
        return Err(Error::Integrity(format!(
            "{} unexpected trailing bytes in checkpoint",
            body.len() - r.pos
        )));
    }
    Ok((meta, params, adam))
}
