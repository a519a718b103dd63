//! Encoder/decoder transformer with a CLS token and the downstream classifier
//! head. Every learnable tensor has a stable dotted name.

mod checkpoint;
mod forward;
pub mod layers;

pub use checkpoint::{Checkpoint, OptimizerState, TrainingState, CHECKPOINT_VERSION};
pub use forward::{bce_with_logits, head_loss, Target, EncodedInput, FinetuneOutput, PretrainLosses, PretrainOutput};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::{stream_rng, Stream};
use crate::tensor::Tensor;
use crate::tokenizer::{PatchConfig, PositionalTables};
use layers::{trunc_normal, Activation, Block, LayerNorm, Linear, Params, INIT_STD};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Tiny,
    Base,
    Micro,
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(Variant::Tiny),
            "base" => Ok(Variant::Base),
            "micro" => Ok(Variant::Micro),
            other => Err(Error::Config(format!("unknown model variant {other:?}"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Tiny => "tiny",
            Variant::Base => "base",
            Variant::Micro => "micro",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderConfig {
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
}

impl EncoderConfig {
    pub fn preset(variant: Variant) -> Self {
        let (dim, depth, heads) = match variant {
            Variant::Tiny => (192, 12, 3),
            Variant::Base => (768, 12, 12),
            Variant::Micro => (8, 1, 2),
        };
        EncoderConfig {
            dim,
            depth,
            heads,
            mlp_ratio: 4.0,
        }
    }

    pub fn mlp_hidden(&self) -> usize {
        (self.dim as f64 * self.mlp_ratio).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoderConfig {
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
}

impl DecoderConfig {
    pub fn preset(variant: Variant) -> Self {
        let (dim, depth, heads) = match variant {
            Variant::Tiny => (128, 4, 4),
            Variant::Base => (512, 8, 16),
            Variant::Micro => (8, 1, 2),
        };
        DecoderConfig {
            dim,
            depth,
            heads,
            mlp_ratio: 4.0,
        }
    }

    pub fn mlp_hidden(&self) -> usize {
        (self.dim as f64 * self.mlp_ratio).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadConfig {
    pub hidden1: usize,
    pub hidden2: usize,
    pub activation: Activation,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            hidden1: 256,
            hidden2: 128,
            activation: Activation::Gelu,
        }
    }
}

/// Which tokens are averaged into the per-frame features of the contrastive loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameFeatureSource {
    /// Encoder outputs of the visible tokens of each frame.
    Visible,
    /// The decoder-input sequence after mask filling and positions.
    Restored,
}

impl FromStr for FrameFeatureSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "visible" => Ok(FrameFeatureSource::Visible),
            "restored" => Ok(FrameFeatureSource::Restored),
            other => Err(Error::Config(format!("frame_features must be visible|restored, got {other:?}"))),
        }
    }
}

impl fmt::Display for FrameFeatureSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FrameFeatureSource::Visible => "visible",
            FrameFeatureSource::Restored => "restored",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub patch: PatchConfig,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub head: HeadConfig,
    pub frame_features: FrameFeatureSource,
}

impl ModelConfig {
    /// Preset widths on the default 10×32×32 clip with 4×4 patches.
    pub fn preset(variant: Variant) -> Self {
        let patch = match variant {
            Variant::Micro => PatchConfig {
                patch: 2,
                height: 4,
                width: 4,
                frames: 2,
            },
            _ => PatchConfig {
                patch: 4,
                height: 32,
                width: 32,
                frames: 10,
            },
        };
        ModelConfig {
            patch,
            encoder: EncoderConfig::preset(variant),
            decoder: DecoderConfig::preset(variant),
            head: HeadConfig::default(),
            frame_features: FrameFeatureSource::Visible,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.patch.validate()?;
        let e = &self.encoder;
        let d = &self.decoder;
        if e.heads == 0 || e.dim % e.heads != 0 {
            return Err(Error::Config(format!("encoder dim {} not divisible by heads {}", e.dim, e.heads)));
        }
        if d.heads == 0 || d.dim % d.heads != 0 {
            return Err(Error::Config(format!("decoder dim {} not divisible by heads {}", d.dim, d.heads)));
        }
        if d.depth == 0 {
            return Err(Error::Config("decoder depth must be >= 1".into()));
        }
        if !(e.mlp_ratio > 0.0 && d.mlp_ratio > 0.0) {
            return Err(Error::Config("mlp_ratio must be positive".into()));
        }
        if self.head.hidden1 == 0 || self.head.hidden2 == 0 {
            return Err(Error::Config("classifier widths must be positive".into()));
        }
        if self.patch.frames == 0 {
            return Err(Error::Config("need at least one frame".into()));
        }
        Ok(())
    }
}

/// Classifier `D → h1 → h2 → 1` applied to the encoded CLS vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier<F> {
    pub fc1: Linear<F>,
    pub fc2: Linear<F>,
    pub out: Linear<F>,
}

impl<F> Params<F> for Classifier<F> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<F>)) {
        self.fc1.visit(&format!("{prefix}.fc1"), f);
        self.fc2.visit(&format!("{prefix}.fc2"), f);
        self.out.visit(&format!("{prefix}.out"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Tensor<F>)) {
        self.fc1.visit_mut(&format!("{prefix}.fc1"), f);
        self.fc2.visit_mut(&format!("{prefix}.fc2"), f);
        self.out.visit_mut(&format!("{prefix}.out"), f);
    }
}

/// Name prefix of the classifier head, the only trainable part in base mode.
pub const HEAD_PREFIX: &str = "head.";

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F> {
    pub patch_embed: Linear<F>,
    pub cls_token: Tensor<F>,
    /// Encoder tables; `cls` is the CLS position.
    pub pos: PositionalTables<F>,
    pub encoder: Vec<Block<F>>,
    pub decoder_embed: Linear<F>,
    pub mask_token: Tensor<F>,
    /// Decoder tables; the `cls` slot is empty and not a parameter.
    pub decoder_pos: PositionalTables<F>,
    pub decoder: Vec<Block<F>>,
    pub decoder_norm: LayerNorm<F>,
    pub decoder_head: Linear<F>,
    pub head: Classifier<F>,
}

impl<F: Real> ModelParams<F> {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = stream_rng(seed, Stream::Init, &[]);
        let rng = &mut rng;
        let (n, t) = (cfg.patch.num_patches(), cfg.patch.frames);
        let (d, dd) = (cfg.encoder.dim, cfg.decoder.dim);
        ModelParams {
            patch_embed: Linear::init(rng, cfg.patch.patch_dim(), d),
            cls_token: trunc_normal(rng, &[d], INIT_STD),
            pos: PositionalTables {
                spatial: trunc_normal(rng, &[n, d], INIT_STD),
                temporal: trunc_normal(rng, &[t, d], INIT_STD),
                cls: trunc_normal(rng, &[d], INIT_STD),
            },
            encoder: (0..cfg.encoder.depth)
                .map(|_| Block::init(rng, d, cfg.encoder.mlp_hidden()))
                .collect(),
            decoder_embed: Linear::init(rng, d, dd),
            mask_token: trunc_normal(rng, &[dd], INIT_STD),
            decoder_pos: PositionalTables {
                spatial: trunc_normal(rng, &[n, dd], INIT_STD),
                temporal: trunc_normal(rng, &[t, dd], INIT_STD),
                cls: Tensor::zeros(&[0]),
            },
            decoder: (0..cfg.decoder.depth)
                .map(|_| Block::init(rng, dd, cfg.decoder.mlp_hidden()))
                .collect(),
            decoder_norm: LayerNorm::init(dd),
            decoder_head: Linear::init(rng, dd, cfg.patch.patch_dim()),
            head: Classifier {
                fc1: Linear::init(rng, d, cfg.head.hidden1),
                fc2: Linear::init(rng, cfg.head.hidden1, cfg.head.hidden2),
                out: Linear::init(rng, cfg.head.hidden2, 1),
            },
        }
    }

    /// Same layout, all zeros: the gradient accumulator shape.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut("", &mut |_, t| t.fill_zero());
        z
    }

    pub fn named(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, t| out.push((name, t)));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor<F>)> {
        let mut out = Vec::new();
        self.visit_mut("", &mut |name, t| out.push((name, t)));
        out
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.named().into_iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.is_finite())
    }

    pub fn visit_mut_all(&mut self, mut f: impl FnMut(&mut Tensor<F>)) {
        self.visit_mut("", &mut |_, t| f(t));
    }

    pub fn fill_zero(&mut self) {
        self.visit_mut("", &mut |_, t| t.fill_zero());
    }

    /// `self += scale · other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ModelParams<F>, scale: F) {
        let src = other.named();
        for ((_, dst), (_, s)) in self.named_mut().into_iter().zip(src) {
            for (d, &v) in dst.data.iter_mut().zip(&s.data) {
                *d += scale * v;
            }
        }
    }

    /// Converts every tensor to another scalar type.
    pub fn cast<G: Real>(&self) -> ModelParams<G> {
        let conv = |t: &Tensor<F>| Tensor::from_vec(&t.shape, t.data.iter().map(|v| G::lit(v.f64())).collect());
        let lin = |l: &Linear<F>| Linear {
            weight: conv(&l.weight),
            bias: conv(&l.bias),
        };
        let ln = |l: &LayerNorm<F>| LayerNorm {
            weight: conv(&l.weight),
            bias: conv(&l.bias),
        };
        let block = |b: &Block<F>| Block {
            norm1: ln(&b.norm1),
            attn: layers::Attention {
                q: lin(&b.attn.q),
                k: lin(&b.attn.k),
                v: lin(&b.attn.v),
                out: lin(&b.attn.out),
            },
            norm2: ln(&b.norm2),
            fc1: lin(&b.fc1),
            fc2: lin(&b.fc2),
        };
        let tables = |p: &PositionalTables<F>| PositionalTables {
            spatial: conv(&p.spatial),
            temporal: conv(&p.temporal),
            cls: conv(&p.cls),
        };
        ModelParams {
            patch_embed: lin(&self.patch_embed),
            cls_token: conv(&self.cls_token),
            pos: tables(&self.pos),
            encoder: self.encoder.iter().map(block).collect(),
            decoder_embed: lin(&self.decoder_embed),
            mask_token: conv(&self.mask_token),
            decoder_pos: tables(&self.decoder_pos),
            decoder: self.decoder.iter().map(block).collect(),
            decoder_norm: ln(&self.decoder_norm),
            decoder_head: lin(&self.decoder_head),
            head: Classifier {
                fc1: lin(&self.head.fc1),
                fc2: lin(&self.head.fc2),
                out: lin(&self.head.out),
            },
        }
    }
}

impl<F> Params<F> for ModelParams<F> {
    fn visit<'a>(&'a self, _prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<F>)) {
        self.patch_embed.visit("patch_embed", f);
        f("cls_token".into(), &self.cls_token);
        f("pos.spatial".into(), &self.pos.spatial);
        f("pos.temporal".into(), &self.pos.temporal);
        f("pos.cls".into(), &self.pos.cls);
        for (i, b) in self.encoder.iter().enumerate() {
            b.visit(&format!("encoder.blocks.{i}"), f);
        }
        self.decoder_embed.visit("decoder.embed", f);
        f("decoder.mask_token".into(), &self.mask_token);
        f("decoder.pos.spatial".into(), &self.decoder_pos.spatial);
        f("decoder.pos.temporal".into(), &self.decoder_pos.temporal);
        for (i, b) in self.decoder.iter().enumerate() {
            b.visit(&format!("decoder.blocks.{i}"), f);
        }
        self.decoder_norm.visit("decoder.norm", f);
        self.decoder_head.visit("decoder.head", f);
        self.head.visit("head", f);
    }

    fn visit_mut<'a>(&'a mut self, _prefix: &str, f: &mut dyn FnMut(String, &'a mut Tensor<F>)) {
        self.patch_embed.visit_mut("patch_embed", f);
        f("cls_token".into(), &mut self.cls_token);
        f("pos.spatial".into(), &mut self.pos.spatial);
        f("pos.temporal".into(), &mut self.pos.temporal);
        f("pos.cls".into(), &mut self.pos.cls);
        for (i, b) in self.encoder.iter_mut().enumerate() {
            b.visit_mut(&format!("encoder.blocks.{i}"), f);
        }
        self.decoder_embed.visit_mut("decoder.embed", f);
        f("decoder.mask_token".into(), &mut self.mask_token);
        f("decoder.pos.spatial".into(), &mut self.decoder_pos.spatial);
        f("decoder.pos.temporal".into(), &mut self.decoder_pos.temporal);
        for (i, b) in self.decoder.iter_mut().enumerate() {
            b.visit_mut(&format!("decoder.blocks.{i}"), f);
        }
        self.decoder_norm.visit_mut("decoder.norm", f);
        self.decoder_head.visit_mut("decoder.head", f);
        self.head.visit_mut("head", f);
    }
}

/// Configuration plus weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<F> {
    pub config: ModelConfig,
    pub params: ModelParams<F>,
}

impl<F: Real> Model<F> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Model {
            params: ModelParams::init(&config, seed),
            config,
        })
    }

    pub fn count_params(&self) -> usize {
        self.params.count()
    }
}

/// Exact learnable scalar count.
pub fn count_params<F: Real>(params: &ModelParams<F>) -> usize {
    params.count()
}
