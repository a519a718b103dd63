use super::{Video, VideoClip};
use crate::error::{Error, Result};

/// Source indices `start + round(k·fps·window_s/(T−1))`, `k = 0..T`; both
/// window endpoints are included.
pub fn sample_indices(fps: f64, start: usize, t: usize, window_s: f64) -> Result<Vec<usize>> {
    if t < 2 {
        return Err(Error::TooFewFrames(t));
    }
    if !(window_s > 0.0 && fps > 0.0) {
        return Err(Error::InvalidSpec(format!(
            "window_s={window_s} and fps={fps} must be positive"
        )));
    }
    let step = fps * window_s / (t - 1) as f64;
    let idx: Vec<usize> = (0..t).map(|k| start + (k as f64 * step).round() as usize).collect();
    if idx.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::TooFewSourceFrames {
            needed: t,
            got: idx[t - 1] - start + 1,
        });
    }
    Ok(idx)
}

/// 1-D area-averaging weights: for every output cell, the `(source index,
/// weight)` overlaps of its footprint, weights summing to one.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            let mut ws: Vec<(usize, f64)> = (first..last)
                .map(|s| {
                    let overlap = (hi.min((s + 1) as f64) - lo.max(s as f64)).max(0.0);
                    (s, overlap / scale)
                })
                .filter(|&(_, w)| w > 0.0)
                .collect();
            let total: f64 = ws.iter().map(|w| w.1).sum();
            ws.iter_mut().for_each(|w| w.1 /= total);
            ws
        })
        .collect()
}

/// Box-filter resample of one frame.
pub fn resize_area(frame: &[f32], h0: usize, w0: usize, h: usize, w: usize) -> Vec<f32> {
    if (h0, w0) == (h, w) {
        return frame.to_vec();
    }
    let wy = area_weights(h0, h);
    let wx = area_weights(w0, w);
    // horizontal pass in f64, then vertical
    let mut tmp = vec![0.0f64; h0 * w];
    for y in 0..h0 {
        let row = &frame[y * w0..(y + 1) * w0];
        for (x, ws) in wx.iter().enumerate() {
            tmp[y * w + x] = ws.iter().map(|&(s, wt)| row[s] as f64 * wt).sum();
        }
    }
    let mut out = vec![0.0f32; h * w];
    for (y, ws) in wy.iter().enumerate() {
        for x in 0..w {
            out[y * w + x] = ws.iter().map(|&(s, wt)| tmp[s * w + x] * wt).sum::<f64>() as f32;
        }
    }
    out
}

/// Per-clip min-max scaling to [0,1]; a constant clip maps to all zeros.
pub fn normalize_min_max(data: &mut [f32]) {
    let (lo, hi) = data
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if !(range > 0.0) || !range.is_finite() {
        data.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    for v in data.iter_mut() {
        *v = ((*v - lo) / range).clamp(0.0, 1.0);
    }
}

/// Samples `t` frames uniformly over `window_s` seconds from `start_frame`,
/// resizes them to `height × width` and min-max normalizes the clip.
pub fn sample_clip(
    video: &Video,
    fps: f64,
    start_frame: usize,
    t: usize,
    window_s: f64,
    height: usize,
    width: usize,
) -> Result<VideoClip> {
    if video.frames < t {
        return Err(Error::TooFewSourceFrames {
            needed: t,
            got: video.frames,
        });
    }
    let t_indices = sample_indices(fps, start_frame, t, window_s)?;
    let end = t_indices[t - 1];
    if end >= video.frames {
        return Err(Error::WindowOutOfRange {
            start: start_frame,
            end,
            available: video.frames,
        });
    }
    let mut data = Vec::with_capacity(t * height * width);
    for &i in &t_indices {
        data.extend(resize_area(video.frame(i), video.height, video.width, height, width));
    }
    normalize_min_max(&mut data);
    Ok(VideoClip {
        frames: Video::new(t, height, width, data),
        fps,
        t_indices,
        label: None,
    })
}
