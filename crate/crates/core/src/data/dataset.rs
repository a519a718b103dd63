//! In-memory labeled dataset with per-epoch window sampling.

use std::path::Path;

use rand::Rng;

use super::{load_manifest, oracle_start_frame, read_tnsr, sample_clip, ClipRecord, PhaseSource, Split, Video, VideoClip};
use crate::error::{Error, Result};
use crate::eval::label_from_ef;
use crate::rng::{stream_rng, Stream};

/// Clip geometry shared by every sampled window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub window_s: f64,
}

/// Where a window starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartPolicy {
    /// End-diastole aligned; falls back to `Random` for clips without phase info.
    Oracle,
    /// Uniform over valid starts, drawn from the given stream key.
    Random { seed: u64, epoch: u64 },
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<ClipRecord>,
    pub videos: Vec<Video>,
}

impl Dataset {
    /// Loads every record of the manifest (optionally one split) and its frames.
    pub fn load(manifest: &Path, split: Option<Split>) -> Result<Self> {
        let records: Vec<ClipRecord> = load_manifest(manifest)?
            .into_iter()
            .filter(|r| split.map_or(true, |s| r.split == s))
            .collect();
        let videos = records.iter().map(|r| read_tnsr(&r.file_path)).collect::<Result<Vec<_>>>()?;
        Ok(Dataset { records, videos })
    }

    pub fn from_parts(records: Vec<ClipRecord>, videos: Vec<Video>) -> Self {
        assert_eq!(records.len(), videos.len());
        Dataset { records, videos }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn split(&self, split: Split) -> Dataset {
        let (records, videos) = self
            .records
            .iter()
            .zip(&self.videos)
            .filter(|(r, _)| r.split == split)
            .map(|(r, v)| (r.clone(), v.clone()))
            .unzip();
        Dataset { records, videos }
    }

    /// Reduced-EF flag per clip.
    pub fn labels(&self) -> Result<Vec<bool>> {
        self.records
            .iter()
            .map(|r| label_from_ef(r.ef_percent).map(|c| c.is_positive()))
            .collect()
    }

    /// Start frame for clip `i` under the policy.
    pub fn start_frame(&self, i: usize, cfg: &SamplingConfig, policy: StartPolicy) -> Result<usize> {
        let rec = &self.records[i];
        let span = (rec.fps * cfg.window_s).round() as usize;
        let frames = self.videos[i].frames;
        if span >= frames {
            return Err(Error::WindowOutOfRange {
                start: 0,
                end: span,
                available: frames,
            });
        }
        let random = |seed: u64, epoch: u64| {
            let mut rng = stream_rng(seed, Stream::Sample, &[epoch, i as u64]);
            rng.gen_range(0..frames - span)
        };
        match policy {
            StartPolicy::Oracle => match oracle_start_frame(PhaseSource::Record(rec)) {
                Ok(f) => Ok(f),
                Err(Error::NoPhaseInfo(_)) => Ok(random(0, u64::MAX)),
                Err(e) => Err(e),
            },
            StartPolicy::Random { seed, epoch } => Ok(random(seed, epoch)),
        }
    }

    pub fn clip(&self, i: usize, cfg: &SamplingConfig, policy: StartPolicy) -> Result<VideoClip> {
        let start = self.start_frame(i, cfg, policy)?;
        let rec = &self.records[i];
        let mut clip = sample_clip(&self.videos[i], rec.fps, start, cfg.frames, cfg.window_s, cfg.height, cfg.width)?;
        clip.label = Some(rec.ef_percent);
        Ok(clip)
    }
}
