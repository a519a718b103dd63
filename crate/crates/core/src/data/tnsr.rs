//! `.tnsr` raw clip files: `"TMAE"`, then `u32 T, u32 H, u32 W` little-endian,
//! then `T·H·W` little-endian `f32` intensities, frame-major, row-major.

use std::fs;
use std::path::Path;

use super::Video;
use crate::error::{Error, Result};
use crate::io::write_atomic;

const MAGIC: &[u8; 4] = b"TMAE";
const HEADER_LEN: usize = 16;

pub fn read_tnsr(path: &Path) -> Result<Video> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|reason| Error::Format {
        path: path.to_path_buf(),
        reason,
    })
}

pub fn write_tnsr(path: &Path, video: &Video) -> Result<()> {
    write_atomic(path, &encode(video))
}

fn encode(video: &Video) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * video.data.len());
    out.extend_from_slice(MAGIC);
    for dim in [video.frames, video.height, video.width] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for v in &video.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode(bytes: &[u8]) -> std::result::Result<Video, String> {
    if bytes.len() < HEADER_LEN {
        return Err(format!("{} bytes is shorter than the header", bytes.len()));
    }
    if &bytes[..4] != MAGIC {
        return Err("bad magic".into());
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (t, h, w) = (dim(0), dim(1), dim(2));
    let count = t
        .checked_mul(h)
        .and_then(|x| x.checked_mul(w))
        .ok_or("dimension overflow")?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != 4 * count {
        return Err(format!(
            "payload has {} bytes, header implies {}",
            payload.len(),
            4 * count
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Video::new(t, h, w, data))
}
