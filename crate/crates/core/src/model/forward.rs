//! Forward passes and the hand-derived backward passes for pretraining
//! (reconstruction + temporal contrastive) and fine-tuning (BCE on the CLS
//! logit).

use super::layers::{stack_backward, stack_forward, BlockCache, LayerNormCache, Linear};
use super::{Classifier, FrameFeatureSource, Model, ModelParams};
use crate::data::Video;
use crate::error::{Error, Result};
use crate::losses::{
    frame_features, frame_means, reconstruction_loss_grad, temporal_contrastive_loss_grad, total_loss,
    ContrastiveParams,
};
use crate::masking::{apply_mask, restore_sequence, MaskPlan};
use crate::real::Real;
use crate::tensor::{add_into, Mat};
use crate::tokenizer::{add_positional, embed, patchify};

/// Encoder input for one clip: row 0 is the CLS slot, then visible tokens.
#[derive(Debug, Clone)]
pub struct EncodedInput<F> {
    pub patches: Mat<F>,
    pub x: Mat<F>,
    pub gather: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct PretrainOutput<F> {
    /// Reconstructed patches, `(T·N) × p²`.
    pub pred: Mat<F>,
    /// Per-frame features, `T × width`.
    pub features: Mat<F>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainLosses {
    pub rec: f64,
    pub contrast: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinetuneOutput {
    pub loss: f64,
    pub logit: f64,
}

struct ClassifierCache<F> {
    x: Mat<F>,
    pre1: Mat<F>,
    act1: Mat<F>,
    pre2: Mat<F>,
    act2: Mat<F>,
}

struct PretrainCache<F> {
    input: EncodedInput<F>,
    enc_caches: Vec<BlockCache<F>>,
    z_vis: Mat<F>,
    dec_caches: Vec<BlockCache<F>>,
    norm_cache: LayerNormCache<F>,
    normed: Mat<F>,
}

fn check_finite<F: Real>(m: &Mat<F>, what: &str) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteActivation(what.to_string()))
    }
}

/// Numerically stable `softplus(z) − y·z` and its derivative `σ(z) − y`.
pub fn bce_with_logits(logit: f64, target: bool) -> (f64, f64) {
    let y = if target { 1.0 } else { 0.0 };
    let loss = logit.max(0.0) - logit * y + (-logit.abs()).exp().ln_1p();
    let sigma = 1.0 / (1.0 + (-logit).exp());
    (loss, sigma - y)
}

/// Fine-tuning target: a binary label (BCE on the logit) or a value in
/// `[0, 1]` regressed by squared error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Binary(bool),
    Value(f64),
}

impl From<bool> for Target {
    fn from(b: bool) -> Self {
        Target::Binary(b)
    }
}

/// Loss on the head output and its derivative.
pub fn head_loss(output: f64, target: Target) -> (f64, f64) {
    match target {
        Target::Binary(y) => bce_with_logits(output, y),
        Target::Value(y) => ((output - y) * (output - y), 2.0 * (output - y)),
    }
}

impl<F: Real> Model<F> {
    /// Patchify, embed, add positions, drop masked tokens, prepend CLS.
    pub fn prepare_input(&self, video: &Video, plan: &MaskPlan) -> Result<EncodedInput<F>> {
        let cfg = &self.config.patch;
        if plan.frames() != cfg.frames || plan.patches() != cfg.num_patches() {
            return Err(Error::shape(format!(
                "plan {}x{} vs model {}x{}",
                plan.frames(),
                plan.patches(),
                cfg.frames,
                cfg.num_patches()
            )));
        }
        let p = &self.params;
        let patches = patchify::<F>(video, cfg)?;
        let mut seq = embed(&patches, &p.patch_embed.weight, &p.patch_embed.bias)?;
        seq.cls = Some(p.cls_token.data.clone());
        let seq = add_positional(seq, &p.pos)?;
        let (vis, gather) = apply_mask(&seq, plan)?;
        let d = self.config.encoder.dim;
        let mut x = Mat::zeros(vis.tokens.rows + 1, d);
        x.row_mut(0).copy_from_slice(vis.cls.as_ref().expect("cls set above"));
        x.data[d..].copy_from_slice(&vis.tokens.data);
        Ok(EncodedInput { patches, x, gather })
    }

    fn encode_cached(&self, x: Mat<F>) -> Result<(Mat<F>, Vec<BlockCache<F>>)> {
        check_finite(&x, "encoder input")?;
        let (z, caches) = stack_forward(&self.params.encoder, x, self.config.encoder.heads);
        check_finite(&z, "encoder output")?;
        Ok((z, caches))
    }

    /// Transformer encoder over `[CLS; visible tokens]`, same length out.
    pub fn encode(&self, x: &Mat<F>) -> Result<Mat<F>> {
        if x.cols != self.config.encoder.dim {
            return Err(Error::shape(format!("encoder width {} vs {}", x.cols, self.config.encoder.dim)));
        }
        Ok(self.encode_cached(x.clone())?.0)
    }

    /// Encodes several inputs independently.
    pub fn encode_batch(&self, xs: &[Mat<F>]) -> Result<Vec<Mat<F>>> {
        xs.iter().map(|x| self.encode(x)).collect()
    }

    fn decode_cached(&self, restored: Mat<F>) -> Result<(Mat<F>, Vec<BlockCache<F>>, Mat<F>, LayerNormCache<F>, Mat<F>)> {
        let (h, caches) = stack_forward(&self.params.decoder, restored, self.config.decoder.heads);
        let (normed, norm_cache) = self.params.decoder_norm.forward(&h);
        let pred = self.params.decoder_head.forward(&normed);
        check_finite(&pred, "decoder output")?;
        Ok((pred, caches, h, norm_cache, normed))
    }

    /// Decoder stack, final norm and pixel head over a restored `(T·N)×D_dec`
    /// sequence; returns `(T·N) × p²` patches.
    pub fn decode(&self, restored: &Mat<F>) -> Result<Mat<F>> {
        let cfg = &self.config;
        if restored.rows != cfg.patch.seq_len() || restored.cols != cfg.decoder.dim {
            return Err(Error::shape(format!(
                "decoder input {}x{} vs {}x{}",
                restored.rows,
                restored.cols,
                cfg.patch.seq_len(),
                cfg.decoder.dim
            )));
        }
        Ok(self.decode_cached(restored.clone())?.0)
    }

    fn classifier_forward(&self, cls: &[F]) -> (F, ClassifierCache<F>) {
        let act = self.config.head.activation;
        let h = &self.params.head;
        let x = Mat::from_vec(1, cls.len(), cls.to_vec());
        let pre1 = h.fc1.forward(&x);
        let act1 = Mat::from_vec(1, pre1.cols, pre1.data.iter().map(|&v| act.apply(v)).collect());
        let pre2 = h.fc2.forward(&act1);
        let act2 = Mat::from_vec(1, pre2.cols, pre2.data.iter().map(|&v| act.apply(v)).collect());
        let logit = h.out.forward(&act2).data[0];
        (
            logit,
            ClassifierCache {
                x,
                pre1,
                act1,
                pre2,
                act2,
            },
        )
    }

    fn classifier_backward(&self, cache: &ClassifierCache<F>, dlogit: F, grad: &mut Classifier<F>) -> Vec<F> {
        let act = self.config.head.activation;
        let h = &self.params.head;
        let dy = Mat::from_vec(1, 1, vec![dlogit]);
        let mut d2 = h.out.backward(&cache.act2, &dy, &mut grad.out, true).expect("dx");
        for (g, &p) in d2.data.iter_mut().zip(&cache.pre2.data) {
            *g *= act.derivative(p);
        }
        let mut d1 = h.fc2.backward(&cache.act1, &d2, &mut grad.fc2, true).expect("dx");
        for (g, &p) in d1.data.iter_mut().zip(&cache.pre1.data) {
            *g *= act.derivative(p);
        }
        h.fc1.backward(&cache.x, &d1, &mut grad.fc1, true).expect("dx").data
    }

    /// Classifier logit for an encoded CLS vector; probability is `σ(logit)`.
    pub fn classify(&self, cls: &[F]) -> Result<F> {
        if cls.len() != self.config.encoder.dim || cls.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteActivation("classifier input".into()));
        }
        Ok(self.classifier_forward(cls).0)
    }

    /// Full unmasked inference pass to the classifier logit.
    pub fn logit(&self, video: &Video) -> Result<F> {
        let cls = self.cls_embedding(video)?;
        self.classify(&cls)
    }

    /// Encoded CLS vector of a clip with nothing masked.
    pub fn cls_embedding(&self, video: &Video) -> Result<Vec<F>> {
        let plan = MaskPlan::unmasked(self.config.patch.frames, self.config.patch.num_patches());
        let input = self.prepare_input(video, &plan)?;
        let z = self.encode_cached(input.x)?.0;
        Ok(z.row(0).to_vec())
    }

    fn pretrain_forward_cached(&self, video: &Video, plan: &MaskPlan) -> Result<(PretrainOutput<F>, PretrainCache<F>)> {
        let input = self.prepare_input(video, plan)?;
        let (z, enc_caches) = self.encode_cached(input.x.clone())?;
        let d = self.config.encoder.dim;
        let z_vis = Mat::from_vec(z.rows - 1, d, z.data[d..].to_vec());
        let projected = self.params.decoder_embed.forward(&z_vis);
        let restored = restore_sequence(&projected, &self.params.mask_token.data, plan, &self.params.decoder_pos)?;
        let features = match self.config.frame_features {
            FrameFeatureSource::Visible => frame_features(&z_vis, plan)?,
            FrameFeatureSource::Restored => frame_means(&restored, plan.frames())?,
        };
        let (pred, dec_caches, _, norm_cache, normed) = self.decode_cached(restored)?;
        Ok((
            PretrainOutput { pred, features },
            PretrainCache {
                input,
                enc_caches,
                z_vis,
                dec_caches,
                norm_cache,
                normed,
            },
        ))
    }

    /// Masked forward pass: reconstructed patches and per-frame features.
    pub fn forward_pretrain(&self, video: &Video, plan: &MaskPlan) -> Result<PretrainOutput<F>> {
        Ok(self.pretrain_forward_cached(video, plan)?.0)
    }

    /// Pretraining losses for one clip without gradients.
    pub fn pretrain_losses(&self, video: &Video, plan: &MaskPlan, contrastive: Option<&ContrastiveParams>) -> Result<PretrainLosses> {
        let (out, cache) = self.pretrain_forward_cached(video, plan)?;
        let (rec, _) = reconstruction_loss_grad(&out.pred, &cache.input.patches, plan)?;
        let (con, _) = temporal_contrastive_loss_grad(&out.features, &contrastive.copied().unwrap_or_default())?;
        let lambda = contrastive.map_or(0.0, |c| c.lambda);
        Ok(PretrainLosses {
            rec: rec.f64(),
            contrast: con.f64(),
            total: total_loss(rec, con, F::lit(lambda)).f64(),
        })
    }

    /// Forward + backward of `L_rec + λ·L_contrast` for one clip,
    /// accumulating `scale · ∂L/∂θ` into `grads`.
    ///
    /// `contrastive = None` disables the contrastive term; its value is still
    /// reported (with default parameters) for monitoring.
    pub fn pretrain_step(
        &self,
        video: &Video,
        plan: &MaskPlan,
        contrastive: Option<&ContrastiveParams>,
        scale: F,
        grads: &mut ModelParams<F>,
    ) -> Result<PretrainLosses> {
        let (out, cache) = self.pretrain_forward_cached(video, plan)?;
        let cfg = &self.config;
        let p = &self.params;
        let (n, d) = (cfg.patch.num_patches(), cfg.encoder.dim);

        let (rec, mut dpred) = reconstruction_loss_grad(&out.pred, &cache.input.patches, plan)?;
        let con_params = contrastive.copied().unwrap_or_default();
        let (con, mut dfeat) = temporal_contrastive_loss_grad(&out.features, &con_params)?;
        let lambda = contrastive.map_or(0.0, |c| c.lambda);
        let total = total_loss(rec, con, F::lit(lambda));
        let use_contrast = lambda != 0.0;

        dpred.data.iter_mut().for_each(|g| *g *= scale);
        let lam = F::lit(lambda) * scale;
        dfeat.data.iter_mut().for_each(|g| *g *= lam);

        // decoder
        let dnormed = p.decoder_head.backward(&cache.normed, &dpred, &mut grads.decoder_head, true).expect("dx");
        let dh = p.decoder_norm.backward(&cache.norm_cache, &dnormed, &mut grads.decoder_norm);
        let mut drestored = stack_backward(&p.decoder, &cache.dec_caches, dh, cfg.decoder.heads, &mut grads.decoder);
        if use_contrast && cfg.frame_features == FrameFeatureSource::Restored {
            let inv = F::one() / F::lit(n as f64);
            for k in 0..drestored.rows {
                let t = k / n;
                for (g, &f) in drestored.row_mut(k).iter_mut().zip(dfeat.row(t)) {
                    *g += f * inv;
                }
            }
        }

        // restore: mask token, decoder positions, projected visible rows
        let dd = cfg.decoder.dim;
        let mut dproj = Mat::zeros(cache.z_vis.rows, dd);
        let gather = &cache.input.gather;
        let mut next_visible = 0;
        for k in 0..drestored.rows {
            let row = drestored.row(k);
            add_into(grads.decoder_pos.spatial_row_mut(k % n), row);
            add_into(grads.decoder_pos.temporal_row_mut(k / n), row);
            if next_visible < gather.len() && gather[next_visible] == k {
                dproj.row_mut(next_visible).copy_from_slice(row);
                next_visible += 1;
            } else {
                add_into(&mut grads.mask_token.data, row);
            }
        }
        let mut dz_vis = p.decoder_embed.backward(&cache.z_vis, &dproj, &mut grads.decoder_embed, true).expect("dx");
        if use_contrast && cfg.frame_features == FrameFeatureSource::Visible {
            for t in 0..plan.frames() {
                let rows = plan.visible_rows(t);
                let inv = F::one() / F::lit(rows.len() as f64);
                for r in rows {
                    for (g, &f) in dz_vis.row_mut(r).iter_mut().zip(dfeat.row(t)) {
                        *g += f * inv;
                    }
                }
            }
        }

        // encoder
        let mut dz = Mat::zeros(dz_vis.rows + 1, d);
        dz.data[d..].copy_from_slice(&dz_vis.data);
        let dx = stack_backward(&p.encoder, &cache.enc_caches, dz, cfg.encoder.heads, &mut grads.encoder);
        self.input_backward(&cache.input, &dx, grads);

        Ok(PretrainLosses {
            rec: rec.f64(),
            contrast: con.f64(),
            total: total.f64(),
        })
    }

    /// Gradients of CLS token, positions and patch projection from `∂L/∂x`.
    fn input_backward(&self, input: &EncodedInput<F>, dx: &Mat<F>, grads: &mut ModelParams<F>) {
        let n = self.config.patch.num_patches();
        let d = self.config.encoder.dim;
        add_into(&mut grads.cls_token.data, dx.row(0));
        add_into(&mut grads.pos.cls.data, dx.row(0));
        let mut dtokens = Mat::zeros(input.patches.rows, d);
        for (j, &k) in input.gather.iter().enumerate() {
            let row = dx.row(j + 1);
            dtokens.row_mut(k).copy_from_slice(row);
            add_into(grads.pos.spatial_row_mut(k % n), row);
            add_into(grads.pos.temporal_row_mut(k / n), row);
        }
        let pe: &Linear<F> = &self.params.patch_embed;
        pe.backward(&input.patches, &dtokens, &mut grads.patch_embed, false);
    }

    /// BCE fine-tuning step on one clip. With `train_encoder = false` only the
    /// classifier head receives gradients.
    pub fn finetune_step(
        &self,
        video: &Video,
        target: impl Into<Target>,
        train_encoder: bool,
        scale: F,
        grads: &mut ModelParams<F>,
    ) -> Result<FinetuneOutput> {
        let plan = MaskPlan::unmasked(self.config.patch.frames, self.config.patch.num_patches());
        let input = self.prepare_input(video, &plan)?;
        let (z, caches) = self.encode_cached(input.x.clone())?;
        let (logit, head_cache) = self.classifier_forward(z.row(0));
        let (loss, dlogit) = head_loss(logit.f64(), target.into());
        let dcls = self.classifier_backward(&head_cache, F::lit(dlogit) * scale, &mut grads.head);
        if train_encoder {
            let d = self.config.encoder.dim;
            let mut dz = Mat::zeros(z.rows, d);
            dz.row_mut(0).copy_from_slice(&dcls);
            let dx = stack_backward(&self.params.encoder, &caches, dz, self.config.encoder.heads, &mut grads.encoder);
            self.input_backward(&input, &dx, grads);
        }
        Ok(FinetuneOutput {
            loss,
            logit: logit.f64(),
        })
    }

    /// Head-only BCE step from a precomputed (frozen) CLS embedding.
    pub fn head_step(&self, cls: &[F], target: impl Into<Target>, scale: F, grads: &mut ModelParams<F>) -> FinetuneOutput {
        let (logit, cache) = self.classifier_forward(cls);
        let (loss, dlogit) = head_loss(logit.f64(), target.into());
        self.classifier_backward(&cache, F::lit(dlogit) * scale, &mut grads.head);
        FinetuneOutput {
            loss,
            logit: logit.f64(),
        }
    }
}

impl<F: Real> crate::tokenizer::PositionalTables<F> {
    pub(crate) fn spatial_row_mut(&mut self, i: usize) -> &mut [F] {
        let c = self.spatial.cols();
        &mut self.spatial.data[i * c..(i + 1) * c]
    }

    pub(crate) fn temporal_row_mut(&mut self, t: usize) -> &mut [F] {
        let c = self.temporal.cols();
        &mut self.temporal.data[t * c..(t + 1) * c]
    }
}
