//! Clip ingestion: manifests, raw `.tnsr` frame files, window sampling and the
//! synthetic pulsating-disk generator.

mod dataset;
mod manifest;
mod sample;
mod synth;
mod tnsr;

pub use dataset::{Dataset, SamplingConfig, StartPolicy};
pub use manifest::{load_manifest, write_manifest, ClipRecord, Split};
pub use sample::{resize_area, sample_clip, sample_indices, normalize_min_max};
pub use synth::{generate_synthetic_set, oracle_start_frame, synthesize_clip, PhaseSource, SyntheticSetConfig, SyntheticSpec};
pub use tnsr::{read_tnsr, write_tnsr};

/// `frames × height × width` grayscale intensities, frame-major then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Video {
    pub fn new(frames: usize, height: usize, width: usize, data: Vec<f32>) -> Self {
        assert_eq!(frames * height * width, data.len(), "video shape/data mismatch");
        Video {
            frames,
            height,
            width,
            data,
        }
    }

    pub fn zeros(frames: usize, height: usize, width: usize) -> Self {
        Video::new(frames, height, width, vec![0.0; frames * height * width])
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.data[t * n..(t + 1) * n]
    }
}

/// A fixed-length sampled clip, the unit of model input.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    pub frames: Video,
    pub fps: f64,
    /// Source frame index of each sampled frame; strictly increasing.
    pub t_indices: Vec<usize>,
    /// Ejection fraction in percent, when known.
    pub label: Option<f64>,
}

impl VideoClip {
    pub fn num_frames(&self) -> usize {
        self.frames.frames
    }
}
