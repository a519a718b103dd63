//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "TMAECKPT"
//! version    u32
//! config     u32 byte length + UTF-8 config echo (`[section]` / `key = value`)
//! state      u32 byte length + UTF-8 `key = value` training state
//! entries    u32 count, then per entry:
//!              u32 name length + UTF-8 name
//!              u8  dtype (0 = f32, 1 = f64)
//!              u32 rank, then rank × u32 dims
//!              payload: product(dims) little-endian values
//! ```
//!
//! Model tensors use their parameter names; AdamW moments are stored as
//! `optim.m.<name>` / `optim.v.<name>`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{Model, ModelParams};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::real::{DType, Real};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"TMAECKPT";

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<F> {
    pub step: u64,
    pub m: ModelParams<F>,
    pub v: ModelParams<F>,
}

/// Progress and early-stopping bookkeeping. Every random stream is derived
/// from `root_seed` and the epoch counter, so these fields fully determine
/// the RNG state on resume.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingState {
    pub phase: String,
    /// Epochs completed.
    pub epoch: usize,
    pub root_seed: u64,
    pub best_loss: f64,
    pub best_epoch: usize,
    pub epochs_since_improve: usize,
    pub stopped: bool,
}

impl Default for TrainingState {
    fn default() -> Self {
        TrainingState {
            phase: "init".into(),
            epoch: 0,
            root_seed: 0,
            best_loss: f64::INFINITY,
            best_epoch: 0,
            epochs_since_improve: 0,
            stopped: false,
        }
    }
}

impl TrainingState {
    fn to_text(&self) -> String {
        format!(
            "phase = {}\nepoch = {}\nroot_seed = {}\nbest_loss = {}\nbest_epoch = {}\nepochs_since_improve = {}\nstopped = {}\n",
            self.phase, self.epoch, self.root_seed, self.best_loss, self.best_epoch, self.epochs_since_improve, self.stopped
        )
    }

    fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut s = TrainingState::default();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| format!("bad state line {line:?}"))?;
            let v = v.trim();
            let bad = |e: &dyn std::fmt::Display| format!("state {}: {e}", k.trim());
            match k.trim() {
                "phase" => s.phase = v.to_string(),
                "epoch" => s.epoch = v.parse().map_err(|e| bad(&e))?,
                "root_seed" => s.root_seed = v.parse().map_err(|e| bad(&e))?,
                "best_loss" => s.best_loss = v.parse().map_err(|e| bad(&e))?,
                "best_epoch" => s.best_epoch = v.parse().map_err(|e| bad(&e))?,
                "epochs_since_improve" => s.epochs_since_improve = v.parse().map_err(|e| bad(&e))?,
                "stopped" => s.stopped = v.parse().map_err(|e| bad(&e))?,
                other => return Err(format!("unknown state key {other:?}")),
            }
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<F> {
    pub config: Config,
    pub model: Model<F>,
    pub optimizer: Option<OptimizerState<F>>,
    pub state: TrainingState,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_tensor<F: Real>(out: &mut Vec<u8>, name: &str, t: &Tensor<F>) {
    put_str(out, name);
    out.push(F::DTYPE.tag());
    put_u32(out, t.shape.len() as u32);
    for &d in &t.shape {
        put_u32(out, d as u32);
    }
    for &v in &t.data {
        v.write_le(out);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated checkpoint")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> std::result::Result<String, String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| e.to_string())
    }

    fn tensor<F: Real>(&mut self) -> std::result::Result<(String, Tensor<F>), String> {
        let name = self.string()?;
        let tag = self.take(1)?[0];
        let dtype = DType::from_tag(tag).ok_or_else(|| format!("{name}: unknown dtype {tag}"))?;
        let rank = self.u32()? as usize;
        let shape = (0..rank).map(|_| self.u32().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
        let len: usize = shape.iter().product();
        let raw = self.take(len * dtype.size())?;
        let data = raw
            .chunks_exact(dtype.size())
            .map(|c| match dtype {
                DType::F32 => F::lit(f32::read_le(c) as f64),
                DType::F64 => F::lit(f64::read_le(c)),
            })
            .collect();
        Ok((name, Tensor { shape, data }))
    }
}

impl<F: Real> Checkpoint<F> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        put_str(&mut out, &self.config.to_text());
        let mut state = self.state.to_text();
        if let Some(opt) = &self.optimizer {
            state.push_str(&format!("optimizer_step = {}\n", opt.step));
        }
        put_str(&mut out, &state);
        let params = self.model.params.named();
        let count = params.len() * if self.optimizer.is_some() { 3 } else { 1 };
        put_u32(&mut out, count as u32);
        for (name, t) in &params {
            put_tensor(&mut out, name, t);
        }
        if let Some(opt) = &self.optimizer {
            for (name, t) in opt.m.named() {
                put_tensor(&mut out, &format!("optim.m.{name}"), t);
            }
            for (name, t) in opt.v.named() {
                put_tensor(&mut out, &format!("optim.v.{name}"), t);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let incompatible = Error::IncompatibleCheckpoint;
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8).map_err(incompatible)? != MAGIC {
            return Err(Error::IncompatibleCheckpoint("bad magic".into()));
        }
        let version = r.u32().map_err(incompatible)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::IncompatibleCheckpoint(format!("version {version}, expected {CHECKPOINT_VERSION}")));
        }
        let config = Config::parse(&r.string().map_err(incompatible)?)?;
        let state_text = r.string().map_err(incompatible)?;
        let mut opt_step = None;
        let mut plain = String::new();
        for line in state_text.lines() {
            match line.split_once('=') {
                Some((k, v)) if k.trim() == "optimizer_step" => {
                    opt_step = Some(v.trim().parse::<u64>().map_err(|e| Error::IncompatibleCheckpoint(e.to_string()))?)
                }
                _ => {
                    plain.push_str(line);
                    plain.push('\n');
                }
            }
        }
        let state = TrainingState::parse(&plain).map_err(incompatible)?;
        let n = r.u32().map_err(incompatible)? as usize;
        let mut blobs: HashMap<String, Tensor<F>> = HashMap::with_capacity(n);
        for _ in 0..n {
            let (name, t) = r.tensor::<F>().map_err(incompatible)?;
            blobs.insert(name, t);
        }
        if r.pos != bytes.len() {
            return Err(Error::IncompatibleCheckpoint("trailing bytes".into()));
        }
        let model_cfg = config.model_config()?;
        let mut model = Model::<F>::new(model_cfg, 0)?;
        fill(&mut model.params, &mut blobs, "")?;
        let optimizer = match opt_step {
            Some(step) => {
                let mut m = model.params.zeros_like();
                let mut v = model.params.zeros_like();
                fill(&mut m, &mut blobs, "optim.m.")?;
                fill(&mut v, &mut blobs, "optim.v.")?;
                Some(OptimizerState { step, m, v })
            }
            None => None,
        };
        if let Some(extra) = blobs.keys().next() {
            return Err(Error::IncompatibleCheckpoint(format!("unexpected tensor {extra}")));
        }
        Ok(Checkpoint {
            config,
            model,
            optimizer,
            state,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}

fn fill<F: Real>(params: &mut ModelParams<F>, blobs: &mut HashMap<String, Tensor<F>>, prefix: &str) -> Result<()> {
    for (name, t) in params.named_mut() {
        let key = format!("{prefix}{name}");
        let blob = blobs
            .remove(&key)
            .ok_or_else(|| Error::IncompatibleCheckpoint(format!("missing tensor {key}")))?;
        if blob.shape != t.shape {
            return Err(Error::IncompatibleCheckpoint(format!(
                "{key}: shape {:?}, model expects {:?}",
                blob.shape, t.shape
            )));
        }
        *t = blob;
    }
    Ok(())
}
