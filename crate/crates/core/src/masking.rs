//! Frame-wise random masking: each frame independently hides a uniform random
//! subset of exactly `floor(ρ·N)` patches.

use rand::seq::index;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::{stream_rng, Stream};
use crate::tensor::{add_into, Mat};
use crate::tokenizer::{PositionalTables, TokenSequence};

#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlan {
    frames: usize,
    patches: usize,
    ratio: f64,
    seed: u64,
    /// `T·N` flags, frame-major; `true` = masked.
    mask: Vec<bool>,
    /// Sorted visible patch indices per frame.
    keep: Vec<Vec<usize>>,
}

impl MaskPlan {
    pub fn new(frames: usize, patches: usize, ratio: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&ratio) {
            return Err(Error::InvalidRatio(ratio));
        }
        if patches == 0 {
            return Err(Error::shape("mask plan needs at least one patch per frame"));
        }
        let m = Self::masked_count(patches, ratio);
        let mut mask = vec![false; frames * patches];
        let mut keep = Vec::with_capacity(frames);
        for t in 0..frames {
            let mut rng = stream_rng(seed, Stream::Mask, &[t as u64]);
            let row = &mut mask[t * patches..(t + 1) * patches];
            for i in index::sample(&mut rng, patches, m) {
                row[i] = true;
            }
            keep.push((0..patches).filter(|&i| !row[i]).collect());
        }
        Ok(MaskPlan {
            frames,
            patches,
            ratio,
            seed,
            mask,
            keep,
        })
    }

    /// The inference plan: nothing masked.
    pub fn unmasked(frames: usize, patches: usize) -> Self {
        MaskPlan {
            frames,
            patches,
            ratio: 0.0,
            seed: 0,
            mask: vec![false; frames * patches],
            keep: vec![(0..patches).collect(); frames],
        }
    }

    pub fn masked_count(patches: usize, ratio: f64) -> usize {
        (ratio * patches as f64).floor() as usize
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn patches(&self) -> usize {
        self.patches
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_masked(&self, t: usize, i: usize) -> bool {
        self.mask[t * self.patches + i]
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn keep(&self, t: usize) -> &[usize] {
        &self.keep[t]
    }

    pub fn masked_in_frame(&self, t: usize) -> usize {
        self.patches - self.keep[t].len()
    }

    pub fn total_masked(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn total_visible(&self) -> usize {
        self.keep.iter().map(Vec::len).sum()
    }

    /// Flat frame-major indices of visible tokens, in order.
    pub fn gather_map(&self) -> Vec<usize> {
        self.keep
            .iter()
            .enumerate()
            .flat_map(|(t, ks)| ks.iter().map(move |&i| t * self.patches + i))
            .collect()
    }

    /// Range of rows in the visible sequence that belong to frame `t`.
    pub fn visible_rows(&self, t: usize) -> std::ops::Range<usize> {
        let start: usize = self.keep[..t].iter().map(Vec::len).sum();
        start..start + self.keep[t].len()
    }
}

pub fn make_mask_plan(frames: usize, patches: usize, ratio: f64, seed: u64) -> Result<MaskPlan> {
    MaskPlan::new(frames, patches, ratio, seed)
}

fn check_plan<F: Real>(tokens: &Mat<F>, plan: &MaskPlan) -> Result<()> {
    if tokens.rows != plan.frames * plan.patches {
        return Err(Error::shape(format!(
            "{} tokens vs plan {}x{}",
            tokens.rows, plan.frames, plan.patches
        )));
    }
    Ok(())
}

/// Drops masked tokens, keeping frame-major order. Returns the visible
/// sequence and each survivor's original flat index.
pub fn apply_mask<F: Real>(seq: &TokenSequence<F>, plan: &MaskPlan) -> Result<(TokenSequence<F>, Vec<usize>)> {
    check_plan(&seq.tokens, plan)?;
    let gather = plan.gather_map();
    let d = seq.tokens.cols;
    let mut out = Mat::zeros(gather.len(), d);
    for (j, &k) in gather.iter().enumerate() {
        out.row_mut(j).copy_from_slice(seq.tokens.row(k));
    }
    Ok((
        TokenSequence {
            tokens: out,
            cls: seq.cls.clone(),
        },
        gather,
    ))
}

/// Places visible rows back at their flat indices; other rows stay zero.
pub fn scatter<F: Real>(visible: &Mat<F>, gather: &[usize], total: usize) -> Result<Mat<F>> {
    if visible.rows != gather.len() {
        return Err(Error::shape(format!("{} rows vs {} indices", visible.rows, gather.len())));
    }
    let mut out = Mat::zeros(total, visible.cols);
    for (j, &k) in gather.iter().enumerate() {
        if k >= total {
            return Err(Error::shape(format!("index {k} beyond {total}")));
        }
        out.row_mut(k).copy_from_slice(visible.row(j));
    }
    Ok(out)
}

/// Full `(T·N)×D` decoder input: encoded vectors in visible slots, the shared
/// mask token elsewhere, then positional tables added to every slot.
pub fn restore_sequence<F: Real>(
    encoded_visible: &Mat<F>,
    mask_token: &[F],
    plan: &MaskPlan,
    tables: &PositionalTables<F>,
) -> Result<Mat<F>> {
    let d = encoded_visible.cols;
    if encoded_visible.rows != plan.total_visible() {
        return Err(Error::shape(format!(
            "{} encoded rows vs {} visible in plan",
            encoded_visible.rows,
            plan.total_visible()
        )));
    }
    if mask_token.len() != d
        || tables.dim() != d
        || tables.spatial.rows() != plan.patches
        || tables.temporal.rows() != plan.frames
    {
        return Err(Error::shape("mask token or positional tables do not match width/plan"));
    }
    let n = plan.patches;
    let mut out = Mat::zeros(plan.frames * n, d);
    for k in 0..out.rows {
        out.row_mut(k).copy_from_slice(mask_token);
    }
    for (j, k) in plan.gather_map().into_iter().enumerate() {
        out.row_mut(k).copy_from_slice(encoded_visible.row(j));
    }
    for k in 0..out.rows {
        let row = out.row_mut(k);
        add_into(row, tables.spatial.row(k % n));
        add_into(row, tables.temporal.row(k / n));
    }
    Ok(out)
}
