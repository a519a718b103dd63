//! Run configuration: `[section]` headers with `key = value` lines.
//!
//! Every key, its default and its help text are declared once in the
//! `config_keys!` table below; parsing, `--set` overrides, the help listing
//! and the echo stored in checkpoints are all generated from it.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{Split, SyntheticSetConfig};
use crate::error::{Error, Result};
use crate::losses::ContrastiveParams;
use crate::model::layers::Activation;
use crate::model::{DecoderConfig, EncoderConfig, FrameFeatureSource, HeadConfig, ModelConfig, Variant};
use crate::tokenizer::PatchConfig;

/// One declared configuration key.
#[derive(Debug, Clone, Copy)]
pub struct KeySpec {
    pub section: &'static str,
    pub key: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

impl KeySpec {
    pub fn path(&self) -> String {
        format!("{}.{}", self.section, self.key)
    }
}

/// Parse/render for config value types.
pub trait ConfigValue: Sized {
    fn parse_value(s: &str) -> std::result::Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! via_fromstr {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> std::result::Result<Self, String> {
                s.parse::<$t>().map_err(|e| format!("{s:?}: {e}"))
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

via_fromstr!(usize, u64, f64, bool, Variant, FrameFeatureSource, TrainMode, Monitor, Task, Split, ActivationName);

impl ConfigValue for String {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        Ok(s.to_string())
    }
    fn render(&self) -> String {
        self.clone()
    }
}

impl ConfigValue for PathBuf {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        Ok(PathBuf::from(s))
    }
    fn render(&self) -> String {
        self.display().to_string()
    }
}

/// `auto` means "use the preset / derived value".
impl<T: ConfigValue> ConfigValue for Option<T> {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        if s == "auto" {
            Ok(None)
        } else {
            T::parse_value(s).map(Some)
        }
    }
    fn render(&self) -> String {
        self.as_ref().map_or_else(|| "auto".to_string(), T::render)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Frozen encoder, head only.
    Base,
    EndToEnd,
}

impl FromStr for TrainMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "base" => Ok(TrainMode::Base),
            "end_to_end" => Ok(TrainMode::EndToEnd),
            o => Err(format!("mode must be base|end_to_end, got {o:?}")),
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainMode::Base => "base",
            TrainMode::EndToEnd => "end_to_end",
        })
    }
}

/// Quantity watched by early stopping during pretraining.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Monitor {
    Reconstruction,
    Total,
}

impl FromStr for Monitor {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "rec" => Ok(Monitor::Reconstruction),
            "total" => Ok(Monitor::Total),
            o => Err(format!("monitor must be rec|total, got {o:?}")),
        }
    }
}

impl fmt::Display for Monitor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Monitor::Reconstruction => "rec",
            Monitor::Total => "total",
        })
    }
}

/// Downstream objective on the CLS head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// Binary reduced-EF detection with BCE on one logit.
    Classify,
    /// Scalar EF fraction with squared error, no output activation.
    Regress,
}

impl FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "classify" => Ok(Task::Classify),
            "regress" => Ok(Task::Regress),
            o => Err(format!("task must be classify|regress, got {o:?}")),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Classify => "classify",
            Task::Regress => "regress",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActivationName(pub Activation);

impl FromStr for ActivationName {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "gelu" => Ok(ActivationName(Activation::Gelu)),
            "identity" => Ok(ActivationName(Activation::Identity)),
            o => Err(format!("activation must be gelu|identity, got {o:?}")),
        }
    }
}

impl fmt::Display for ActivationName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self.0 {
            Activation::Gelu => "gelu",
            Activation::Identity => "identity",
        })
    }
}

macro_rules! config_keys {
    ($( [$sec:ident : $Sec:ident] $( $key:ident : $ty:ty = $default:literal, $help:literal; )* )*) => {
        $(
            #[derive(Debug, Clone, PartialEq)]
            pub struct $Sec { $( pub $key: $ty, )* }
        )*

        /// Resolved configuration of a run. Equality compares values only.
        #[derive(Debug, Clone)]
        pub struct Config {
            $( pub $sec: $Sec, )*
            /// Keys assigned explicitly by a file or an override.
            explicit: BTreeSet<String>,
            from_file: bool,
        }

        pub const KEYS: &[KeySpec] = &[
            $( $( KeySpec { section: stringify!($sec), key: stringify!($key), default: $default, help: $help }, )* )*
        ];

        pub const SECTIONS: &[&str] = &[$( stringify!($sec) ),*];

        impl PartialEq for Config {
            fn eq(&self, other: &Self) -> bool {
                true $( && self.$sec == other.$sec )*
            }
        }

        impl Default for Config {
            fn default() -> Self {
                Config {
                    $( $sec: $Sec { $( $key: <$ty as ConfigValue>::parse_value($default)
                        .expect(concat!("default of ", stringify!($sec), ".", stringify!($key))), )* }, )*
                    explicit: BTreeSet::new(),
                    from_file: false,
                }
            }
        }

        impl Config {
            fn set_raw(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
                match (section, key) {
                    $( $( (stringify!($sec), stringify!($key)) => {
                        self.$sec.$key = <$ty as ConfigValue>::parse_value(value)
                            .map_err(|e| Error::Config(format!("{section}.{key}: {e}")))?;
                    } )* )*
                    _ => return Err(Error::Config(format!("unknown key {section}.{key}"))),
                }
                self.explicit.insert(format!("{section}.{key}"));
                Ok(())
            }

            /// Current value of `section.key` rendered as text.
            pub fn get(&self, section: &str, key: &str) -> Option<String> {
                match (section, key) {
                    $( $( (stringify!($sec), stringify!($key)) => Some(self.$sec.$key.render()), )* )*
                    _ => None,
                }
            }
        }
    };
}

config_keys! {
    [data: DataSection]
    manifest: PathBuf = "data/FileList.csv", "manifest CSV (FileName,EF,Split,FPS[,EDFrame,ESFrame])";
    frames: usize = "10", "frames sampled per clip (T)";
    height: usize = "32", "clip height after resizing";
    width: usize = "32", "clip width after resizing";
    window_s: f64 = "1.0", "seconds spanned by the sampled frames";
    synth_size: usize = "32", "synthetic source frame size (square)";
    synth_fps: f64 = "50", "synthetic source frame rate";
    synth_duration_s: f64 = "2.2", "synthetic source duration in seconds";
    synth_noise_sigma: f64 = "0.05", "synthetic Gaussian pixel noise";
    synth_background: f64 = "0.1", "synthetic background intensity";
    synth_balance: f64 = "0.5", "fraction of synthetic clips with reduced EF";
    synth_ef_margin: f64 = "0.1", "EF-analog gap kept on each side of the 0.5 cut";
    synth_r_max_lo: f64 = "10", "smallest synthetic end-diastolic radius (px)";
    synth_r_max_hi: f64 = "14", "largest synthetic end-diastolic radius (px)";
    synth_period_lo: f64 = "0.9", "shortest synthetic cycle period (s)";
    synth_period_hi: f64 = "1.1", "longest synthetic cycle period (s)";
    val_fraction: f64 = "0.15", "synthetic validation share";
    test_fraction: f64 = "0.15", "synthetic test share";

    [model: ModelSection]
    variant: Variant = "tiny", "preset: tiny | base | micro";
    patch_size: usize = "4", "square patch side in pixels";
    encoder_dim: Option<usize> = "auto", "encoder width (auto = preset)";
    encoder_depth: Option<usize> = "auto", "encoder blocks (auto = preset)";
    encoder_heads: Option<usize> = "auto", "encoder attention heads (auto = preset)";
    decoder_dim: Option<usize> = "auto", "decoder width (auto = preset)";
    decoder_depth: Option<usize> = "auto", "decoder blocks (auto = preset)";
    decoder_heads: Option<usize> = "auto", "decoder heads (auto = preset)";
    mlp_ratio: f64 = "4.0", "MLP hidden width / model width";
    head_hidden1: usize = "256", "classifier first hidden width";
    head_hidden2: usize = "128", "classifier second hidden width";
    head_activation: ActivationName = "gelu", "classifier activation: gelu | identity";
    frame_features: FrameFeatureSource = "visible", "contrastive frame features: visible | restored";
    task: Task = "classify", "downstream objective: classify | regress";

    [mask: MaskSection]
    ratio: f64 = "0.75", "fraction of patches masked per frame during pretraining";

    [loss: LossSection]
    tau_p: usize = "1", "largest frame gap counted as a positive pair (required with contrastive)";
    tau_m: f64 = "0.5", "cosine-distance margin for negative pairs (required with contrastive)";
    lambda: f64 = "0.1", "weight of the contrastive term (required with contrastive)";

    [train: TrainSection]
    seed: u64 = "0", "root seed, split per subsystem";
    base_lr: f64 = "1.5e-4", "pretraining base learning rate (scaled by batch/256)";
    weight_decay: f64 = "0.05", "decoupled AdamW weight decay";
    beta1: f64 = "0.9", "AdamW first-moment decay";
    beta2: f64 = "0.95", "AdamW second-moment decay";
    adam_eps: f64 = "1e-8", "AdamW epsilon";
    batch_size: usize = "8", "clips per optimizer step";
    warmup_epochs: usize = "200", "linear warmup length in epochs";
    max_epochs: usize = "1600", "pretraining epochs";
    min_lr: Option<f64> = "auto", "cosine floor (auto = peak/100)";
    patience: usize = "75", "epochs without improvement before stopping";
    min_delta: f64 = "5e-5", "smallest loss decrease counted as improvement";
    monitor: Monitor = "rec", "early-stopping quantity: rec | total";
    clip_norm: f64 = "1.0", "global gradient-norm clip (0 disables)";
    use_contrastive: bool = "true", "add the temporal contrastive term";
    oracle: bool = "false", "align sampled windows to end diastole";
    mode: TrainMode = "end_to_end", "fine-tuning mode: base | end_to_end";
    finetune_epochs: usize = "200", "fine-tuning epochs";
    finetune_base_lr: f64 = "1.5e-4", "fine-tuning base learning rate (scaled by batch/256)";
    finetune_batch_size: usize = "8", "fine-tuning clips per step";
    finetune_weight_decay: f64 = "0.05", "fine-tuning weight decay";
    finetune_warmup_fraction: f64 = "0.05", "fine-tuning warmup share of epochs";
    finetune_patience: usize = "75", "fine-tuning early-stopping patience on validation loss";

    [eval: EvalSection]
    threshold: f64 = "0.5", "probability threshold for the reduced-EF call";
    split: Split = "test", "split evaluated by `eval`";
}

/// Keys that must be given explicitly in a config file when the contrastive
/// term is on.
const CONTRASTIVE_REQUIRED: &[&str] = &["loss.tau_p", "loss.tau_m", "loss.lambda"];

impl Config {
    /// Parses config text on top of the built-in defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config {
            from_file: true,
            ..Config::default()
        };
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if !SECTIONS.contains(&name) {
                    return Err(Error::Config(format!("line {}: unknown section [{name}]", i + 1)));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            let sec = section
                .as_deref()
                .ok_or_else(|| Error::Config(format!("line {}: key outside a [section]", i + 1)))?;
            cfg.set_raw(sec, key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::parse(&text)
    }

    /// Applies a `section.key=value` override.
    pub fn set_override(&mut self, assignment: &str) -> Result<()> {
        let (path, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not section.key=value")))?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| Error::Config(format!("override key {path:?} is not section.key")))?;
        self.set_raw(section, key, value.trim())
    }

    pub fn is_explicit(&self, path: &str) -> bool {
        self.explicit.contains(path)
    }

    /// Semantic checks across keys.
    pub fn validate(&self) -> Result<()> {
        if self.from_file && self.train.use_contrastive {
            for key in CONTRASTIVE_REQUIRED {
                if !self.explicit.contains(*key) {
                    return Err(Error::Config(format!(
                        "missing required key {key} (train.use_contrastive = true)"
                    )));
                }
            }
        }
        self.contrastive().validate()?;
        self.model_config()?;
        let t = &self.train;
        if !(t.base_lr > 0.0 && t.finetune_base_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(t.warmup_epochs > 0 && t.warmup_epochs < t.max_epochs) {
            return Err(Error::Config(format!(
                "need 0 < train.warmup_epochs ({}) < train.max_epochs ({})",
                t.warmup_epochs, t.max_epochs
            )));
        }
        if t.patience == 0 || t.finetune_patience == 0 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if !(t.min_delta > 0.0) {
            return Err(Error::Config("train.min_delta must be positive".into()));
        }
        if t.batch_size == 0 || t.finetune_batch_size == 0 || t.finetune_epochs == 0 {
            return Err(Error::Config("batch sizes and epochs must be positive".into()));
        }
        if !(0.0..1.0).contains(&t.finetune_warmup_fraction) {
            return Err(Error::Config("train.finetune_warmup_fraction must lie in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.mask.ratio) {
            return Err(Error::Config(format!("mask.ratio={} must lie in [0, 1)", self.mask.ratio)));
        }
        if !(0.0..=1.0).contains(&self.eval.threshold) {
            return Err(Error::Config("eval.threshold must lie in [0, 1]".into()));
        }
        if !(self.data.window_s > 0.0) {
            return Err(Error::Config("data.window_s must be positive".into()));
        }
        Ok(())
    }

    pub fn contrastive(&self) -> ContrastiveParams {
        ContrastiveParams {
            tau_p: self.loss.tau_p,
            tau_m: self.loss.tau_m,
            lambda: self.loss.lambda,
        }
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let m = &self.model;
        let enc = EncoderConfig::preset(m.variant);
        let dec = DecoderConfig::preset(m.variant);
        let cfg = ModelConfig {
            patch: PatchConfig {
                patch: m.patch_size,
                height: self.data.height,
                width: self.data.width,
                frames: self.data.frames,
            },
            encoder: EncoderConfig {
                dim: m.encoder_dim.unwrap_or(enc.dim),
                depth: m.encoder_depth.unwrap_or(enc.depth),
                heads: m.encoder_heads.unwrap_or(enc.heads),
                mlp_ratio: m.mlp_ratio,
            },
            decoder: DecoderConfig {
                dim: m.decoder_dim.unwrap_or(dec.dim),
                depth: m.decoder_depth.unwrap_or(dec.depth),
                heads: m.decoder_heads.unwrap_or(dec.heads),
                mlp_ratio: m.mlp_ratio,
            },
            head: HeadConfig {
                hidden1: m.head_hidden1,
                hidden2: m.head_hidden2,
                activation: m.head_activation.0,
            },
            frame_features: m.frame_features,
        };
        if cfg.encoder.depth == 0 {
            return Err(Error::Config("model.encoder_depth must be >= 1".into()));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Synthetic dataset parameters from the `data.synth_*` keys.
    pub fn synthetic_set(&self, n_clips: usize) -> SyntheticSetConfig {
        let d = &self.data;
        SyntheticSetConfig {
            n_clips,
            size: d.synth_size,
            fps: d.synth_fps,
            duration_s: d.synth_duration_s,
            noise_sigma: d.synth_noise_sigma,
            background: d.synth_background,
            balance: d.synth_balance,
            ef_margin: d.synth_ef_margin,
            r_max: (d.synth_r_max_lo, d.synth_r_max_hi),
            period_s: (d.synth_period_lo, d.synth_period_hi),
            val_fraction: d.val_fraction,
            test_fraction: d.test_fraction,
        }
    }

    /// Full resolved echo: every key, deterministic order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for section in SECTIONS {
            out.push_str(&format!("[{section}]\n"));
            for k in KEYS.iter().filter(|k| k.section == *section) {
                out.push_str(&format!("{} = {}\n", k.key, self.get(k.section, k.key).unwrap_or_default()));
            }
            out.push('\n');
        }
        out
    }

    /// Help listing of every key with its default.
    pub fn help_text() -> String {
        let mut out = String::from("Config keys (section.key = default  description):\n");
        for k in KEYS {
            out.push_str(&format!("  {:<32} = {:<18} {}\n", k.path(), k.default, k.help));
        }
        out
    }
}
