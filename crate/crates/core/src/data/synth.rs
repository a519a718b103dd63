//! Pulsating-disk surrogate videos with a closed-form ejection-fraction analog.

use std::f64::consts::PI;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{write_manifest, write_tnsr, ClipRecord, Split, Video, VideoClip};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream_rng, Stream};

/// Supersampling factor per axis for the disk coverage estimate.
const SUPERSAMPLE: usize = 4;
const DISK_INTENSITY: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    /// Radius at end diastole, pixels.
    pub r_max: f64,
    /// Radius at end systole, pixels.
    pub r_min: f64,
    pub period_s: f64,
    pub phase0: f64,
    pub noise_sigma: f64,
    pub background: f64,
    pub fps: f64,
    pub duration_s: f64,
}

impl SyntheticSpec {
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        let limit = height.min(width) as f64 / 2.0;
        let fail = |m: String| Err(Error::InvalidSpec(m));
        if !(self.r_min > 0.0 && self.r_min < self.r_max && self.r_max < limit) {
            return fail(format!(
                "need 0 < r_min < r_max < {limit}, got r_min={} r_max={}",
                self.r_min, self.r_max
            ));
        }
        if !(self.period_s > 0.0) {
            return fail(format!("period_s={} must be positive", self.period_s));
        }
        if !(self.noise_sigma >= 0.0) {
            return fail(format!("noise_sigma={} must be non-negative", self.noise_sigma));
        }
        if !(0.0..=1.0).contains(&self.background) {
            return fail(format!("background={} outside [0,1]", self.background));
        }
        if !(self.fps > 0.0 && self.duration_s > 0.0) || self.num_frames() == 0 {
            return fail("fps and duration_s must give at least one frame".into());
        }
        if !self.phase0.is_finite() {
            return fail("phase0 must be finite".into());
        }
        Ok(())
    }

    pub fn num_frames(&self) -> usize {
        (self.duration_s * self.fps).round() as usize
    }

    /// Area-based analog `1 − (r_min/r_max)²`.
    pub fn ef_analog(&self) -> f64 {
        1.0 - (self.r_min / self.r_max).powi(2)
    }

    pub fn radius_at(&self, t_s: f64) -> f64 {
        self.r_min
            + (self.r_max - self.r_min) * (1.0 + (2.0 * PI * t_s / self.period_s + self.phase0).sin()) / 2.0
    }

    /// Earliest time ≥ 0 at the given fraction of the sine cycle (0.25 is
    /// the radius maximum).
    fn first_extremum(&self, quarter: f64) -> f64 {
        let cycles = quarter - self.phase0 / (2.0 * PI);
        self.period_s * cycles.rem_euclid(1.0)
    }

    /// Analytic (end-diastole, end-systole) frame pairs inside the video.
    pub fn phase_frames(&self) -> Vec<(usize, usize)> {
        let n = self.num_frames();
        let ed0 = self.first_extremum(0.25);
        let mut pairs = Vec::new();
        let mut k = 0.0;
        loop {
            let ed = ed0 + k * self.period_s;
            let es = ed + self.period_s / 2.0;
            let (ed_f, es_f) = ((ed * self.fps).round() as usize, (es * self.fps).round() as usize);
            if es_f >= n {
                break;
            }
            pairs.push((ed_f, es_f));
            k += 1.0;
        }
        pairs
    }
}

/// Renders every source frame of the spec at `height × width`.
///
/// Returns the full-rate video as a clip (one entry per source frame) along
/// with the EF analog; the clip label carries the analog in percent.
pub fn synthesize_clip(spec: &SyntheticSpec, height: usize, width: usize, seed: u64) -> Result<(VideoClip, f64)> {
    spec.validate(height, width)?;
    let n = spec.num_frames();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let (cy, cx) = (height as f64 / 2.0, width as f64 / 2.0);
    let ss = SUPERSAMPLE as f64;
    let mut video = Video::zeros(n, height, width);
    for f in 0..n {
        let r = spec.radius_at(f as f64 / spec.fps);
        let r2 = r * r;
        let frame = video.frame_mut(f);
        for y in 0..height {
            for x in 0..width {
                let mut inside = 0usize;
                for sy in 0..SUPERSAMPLE {
                    let py = y as f64 + (sy as f64 + 0.5) / ss - cy;
                    for sx in 0..SUPERSAMPLE {
                        let px = x as f64 + (sx as f64 + 0.5) / ss - cx;
                        if px * px + py * py <= r2 {
                            inside += 1;
                        }
                    }
                }
                let cover = inside as f64 / (ss * ss);
                let clean = spec.background + cover * (DISK_INTENSITY - spec.background);
                let noisy = if spec.noise_sigma > 0.0 {
                    clean + noise.sample(&mut rng)
                } else {
                    clean
                };
                frame[y * width + x] = noisy.clamp(0.0, 1.0) as f32;
            }
        }
    }
    let ef = spec.ef_analog();
    Ok((
        VideoClip {
            frames: video,
            fps: spec.fps,
            t_indices: (0..n).collect(),
            label: Some(100.0 * ef),
        },
        ef,
    ))
}

/// Where cardiac phase comes from when aligning a window to end diastole.
#[derive(Debug, Clone, Copy)]
pub enum PhaseSource<'a> {
    Record(&'a ClipRecord),
    Synthetic { period_s: f64, phase0: f64, fps: f64 },
}

/// Start frame aligning the sampling window with an end-diastole instant.
pub fn oracle_start_frame(source: PhaseSource<'_>) -> Result<usize> {
    match source {
        PhaseSource::Record(r) => r
            .phase_frames
            .first()
            .map(|&(ed, _)| ed)
            .ok_or_else(|| Error::NoPhaseInfo(r.source_id.clone())),
        PhaseSource::Synthetic { period_s, phase0, fps } => {
            if !(period_s > 0.0 && fps > 0.0) {
                return Err(Error::NoPhaseInfo("synthetic phase with non-positive period/fps".into()));
            }
            let t = period_s * (0.25 - phase0 / (2.0 * PI)).rem_euclid(1.0);
            Ok((t * fps).round() as usize)
        }
    }
}

/// Parameters of a generated synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSetConfig {
    pub n_clips: usize,
    pub size: usize,
    pub fps: f64,
    pub duration_s: f64,
    pub noise_sigma: f64,
    pub background: f64,
    /// Fraction of clips with a reduced EF analog (positive class).
    pub balance: f64,
    /// Gap kept between each class's EF range and the 0.5 cut.
    pub ef_margin: f64,
    pub r_max: (f64, f64),
    pub period_s: (f64, f64),
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl SyntheticSetConfig {
    fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidSpec(m.into()));
        if self.n_clips == 0 {
            return fail("n_clips must be positive");
        }
        if !(0.0..=1.0).contains(&self.balance) {
            return fail("balance must lie in [0, 1]");
        }
        if !(self.ef_margin >= 0.0 && self.ef_margin < 0.4) {
            return fail("ef_margin must lie in [0, 0.4)");
        }
        if !(self.r_max.0 > 0.0 && self.r_max.0 <= self.r_max.1 && self.period_s.0 > 0.0 && self.period_s.0 <= self.period_s.1) {
            return fail("ranges must be positive and ordered");
        }
        if !(self.val_fraction >= 0.0 && self.test_fraction >= 0.0 && self.val_fraction + self.test_fraction < 1.0) {
            return fail("val_fraction + test_fraction must be below 1");
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Writes `n_clips` rendered `.tnsr` clips and `FileList.csv` into `dir`.
///
/// Exactly `round(balance·n)` clips are positive (EF analog in
/// `[0.10, 0.5 − margin]`), the rest negative (`[0.5 + margin, 0.90]`).
/// Splits are stratified by class. Output depends only on `seed`.
pub fn generate_synthetic_set(cfg: &SyntheticSetConfig, dir: &Path, seed: u64) -> Result<Vec<ClipRecord>> {
    cfg.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let n = cfg.n_clips;
    let n_pos = (cfg.balance * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, Stream::Data, &[u64::MAX]));
    let mut positive = vec![false; n];
    for &i in &order[..n_pos] {
        positive[i] = true;
    }
    let mut split = vec![Split::Train; n];
    for class in [true, false] {
        let members: Vec<usize> = order.iter().copied().filter(|&i| positive[i] == class).collect();
        let n_test = (cfg.test_fraction * members.len() as f64).round() as usize;
        let n_val = (cfg.val_fraction * members.len() as f64).round() as usize;
        for (k, &i) in members.iter().enumerate() {
            split[i] = if k < n_test {
                Split::Test
            } else if k < n_test + n_val {
                Split::Val
            } else {
                Split::Train
            };
        }
    }
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = stream_rng(seed, Stream::Data, &[i as u64]);
        let ef = if positive[i] {
            uniform(&mut rng, (0.10, 0.5 - cfg.ef_margin))
        } else {
            uniform(&mut rng, (0.5 + cfg.ef_margin, 0.90))
        };
        let r_max = uniform(&mut rng, cfg.r_max);
        let spec = SyntheticSpec {
            r_max,
            r_min: r_max * (1.0 - ef).sqrt(),
            period_s: uniform(&mut rng, cfg.period_s),
            phase0: rng.gen_range(0.0..2.0 * PI),
            noise_sigma: cfg.noise_sigma,
            background: cfg.background,
            fps: cfg.fps,
            duration_s: cfg.duration_s,
        };
        let (clip, ef) = synthesize_clip(&spec, cfg.size, cfg.size, derive_seed(seed, Stream::Data, &[i as u64, 1]))?;
        let name = format!("clip_{i:04}");
        let path = dir.join(format!("{name}.tnsr"));
        write_tnsr(&path, &clip.frames)?;
        records.push(ClipRecord {
            source_id: name,
            file_path: path,
            ef_percent: 100.0 * ef,
            split: split[i],
            fps: spec.fps,
            phase_frames: spec.phase_frames(),
        });
    }
    write_manifest(&dir.join("FileList.csv"), &records)?;
    Ok(records)
}
