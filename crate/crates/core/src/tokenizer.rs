//! Video → flattened patch tokens with learned spatial and temporal positions.
//!
//! Token `k` of a clip belongs to frame `k / N` and grid cell `k % N`
//! (frame-major ordering).

use crate::data::Video;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{add_into, gemm, Mat, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchConfig {
    pub patch: usize,
    pub height: usize,
    pub width: usize,
    pub frames: usize,
}

impl PatchConfig {
    pub fn new(patch: usize, height: usize, width: usize, frames: usize) -> Result<Self> {
        let cfg = PatchConfig {
            patch,
            height,
            width,
            frames,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.height % self.patch != 0 || self.width % self.patch != 0 {
            return Err(Error::IndivisibleDimensions {
                patch: self.patch,
                height: self.height,
                width: self.width,
            });
        }
        Ok(())
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height / self.patch, self.width / self.patch)
    }

    /// Patches per frame.
    pub fn num_patches(&self) -> usize {
        let (gh, gw) = self.grid();
        gh * gw
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch
    }

    pub fn seq_len(&self) -> usize {
        self.frames * self.num_patches()
    }

    /// `k → (frame, patch)`.
    pub fn unflatten(&self, k: usize) -> (usize, usize) {
        (k / self.num_patches(), k % self.num_patches())
    }

    pub fn flatten(&self, t: usize, i: usize) -> usize {
        t * self.num_patches() + i
    }
}

/// `(T·N) × D` tokens plus the optional CLS slot.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence<F> {
    pub tokens: Mat<F>,
    pub cls: Option<Vec<F>>,
}

/// Learned position tables: spatial `N×D`, temporal `T×D`, CLS `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionalTables<F> {
    pub spatial: Tensor<F>,
    pub temporal: Tensor<F>,
    pub cls: Tensor<F>,
}

impl<F: Real> PositionalTables<F> {
    pub fn zeros(n: usize, t: usize, d: usize) -> Self {
        PositionalTables {
            spatial: Tensor::zeros(&[n, d]),
            temporal: Tensor::zeros(&[t, d]),
            cls: Tensor::zeros(&[d]),
        }
    }

    pub fn dim(&self) -> usize {
        self.spatial.cols()
    }
}

/// Cuts every frame into non-overlapping `p×p` blocks, each flattened
/// row-major. Output rows are frame-major: `(T·N) × p²`.
pub fn patchify<F: Real>(video: &Video, cfg: &PatchConfig) -> Result<Mat<F>> {
    cfg.validate()?;
    if (video.frames, video.height, video.width) != (cfg.frames, cfg.height, cfg.width) {
        return Err(Error::shape(format!(
            "video {}x{}x{} vs config {}x{}x{}",
            video.frames, video.height, video.width, cfg.frames, cfg.height, cfg.width
        )));
    }
    let p = cfg.patch;
    let (gh, gw) = cfg.grid();
    let mut out = Mat::zeros(cfg.seq_len(), p * p);
    for t in 0..cfg.frames {
        let frame = video.frame(t);
        for gy in 0..gh {
            for gx in 0..gw {
                let row = out.row_mut(cfg.flatten(t, gy * gw + gx));
                for dy in 0..p {
                    for dx in 0..p {
                        row[dy * p + dx] = F::lit(frame[(gy * p + dy) * cfg.width + gx * p + dx] as f64);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`patchify`].
pub fn unpatchify<F: Real>(patches: &Mat<F>, cfg: &PatchConfig) -> Result<Mat<F>> {
    cfg.validate()?;
    if patches.rows != cfg.seq_len() || patches.cols != cfg.patch_dim() {
        return Err(Error::shape(format!(
            "patches {}x{} vs expected {}x{}",
            patches.rows,
            patches.cols,
            cfg.seq_len(),
            cfg.patch_dim()
        )));
    }
    let p = cfg.patch;
    let (gh, gw) = cfg.grid();
    let mut out = Mat::zeros(cfg.frames, cfg.height * cfg.width);
    for t in 0..cfg.frames {
        for gy in 0..gh {
            for gx in 0..gw {
                let src = patches.row(cfg.flatten(t, gy * gw + gx));
                let frame = out.row_mut(t);
                for dy in 0..p {
                    for dx in 0..p {
                        frame[(gy * p + dy) * cfg.width + gx * p + dx] = src[dy * p + dx];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// `token = patch · W + b` for every patch.
pub fn embed<F: Real>(patches: &Mat<F>, weight: &Tensor<F>, bias: &Tensor<F>) -> Result<TokenSequence<F>> {
    if weight.shape.len() != 2 || weight.shape[0] != patches.cols || bias.len() != weight.shape[1] {
        return Err(Error::shape(format!(
            "embed weight {:?} / bias {:?} vs patch width {}",
            weight.shape, bias.shape, patches.cols
        )));
    }
    let d = weight.shape[1];
    let mut tokens = Mat::zeros(patches.rows, d);
    for r in 0..patches.rows {
        tokens.row_mut(r).copy_from_slice(&bias.data);
    }
    gemm(
        patches.rows,
        d,
        patches.cols,
        F::one(),
        &patches.data,
        patches.cols,
        false,
        &weight.data,
        d,
        false,
        F::one(),
        &mut tokens.data,
        d,
    );
    Ok(TokenSequence { tokens, cls: None })
}

/// Adds `E_pos[k mod N] + E_time[k div N]` to token `k`, and the CLS position
/// to the CLS slot when present.
pub fn add_positional<F: Real>(mut seq: TokenSequence<F>, tables: &PositionalTables<F>) -> Result<TokenSequence<F>> {
    let n = tables.spatial.rows();
    let t = tables.temporal.rows();
    let d = tables.dim();
    if seq.tokens.cols != d || seq.tokens.rows != n * t || tables.temporal.cols() != d || tables.cls.len() != d {
        return Err(Error::shape(format!(
            "sequence {}x{} vs tables N={n} T={t} D={d}",
            seq.tokens.rows, seq.tokens.cols
        )));
    }
    for k in 0..seq.tokens.rows {
        let row = seq.tokens.row_mut(k);
        add_into(row, tables.spatial.row(k % n));
        add_into(row, tables.temporal.row(k / n));
    }
    if let Some(cls) = seq.cls.as_mut() {
        if cls.len() != d {
            return Err(Error::shape("cls width"));
        }
        add_into(cls, &tables.cls.data);
    }
    Ok(seq)
}
