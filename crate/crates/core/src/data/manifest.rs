//! EchoNet-style `FileList` manifests.
//!
//! Columns are located by header name, so the full EchoNet file list (which has
//! extra columns) loads as-is. Required: `FileName,EF,Split,FPS`; optional
//! `EDFrame,ESFrame`, each holding one index or a `;`-separated list.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::io::write_atomic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipRecord {
    pub source_id: String,
    pub file_path: PathBuf,
    pub ef_percent: f64,
    pub split: Split,
    pub fps: f64,
    /// (end-diastole, end-systole) source frame pairs.
    pub phase_frames: Vec<(usize, usize)>,
}

fn resolve(dir: &Path, file_name: &str) -> PathBuf {
    let p = dir.join(file_name);
    if p.extension().is_none() {
        p.with_extension("tnsr")
    } else {
        p
    }
}

fn parse_indices(field: &str) -> std::result::Result<Vec<usize>, String> {
    field
        .split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| format!("frame index {s:?} not an integer")))
        .collect()
}

pub fn load_manifest(path: &Path) -> Result<Vec<ClipRecord>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let missing = |name: &str| Error::Format {
        path: path.to_path_buf(),
        reason: format!("header lacks column {name}"),
    };
    let c_file = col("FileName").ok_or_else(|| missing("FileName"))?;
    let c_ef = col("EF").ok_or_else(|| missing("EF"))?;
    let c_split = col("Split").ok_or_else(|| missing("Split"))?;
    let c_fps = col("FPS").ok_or_else(|| missing("FPS"))?;
    let c_ed = col("EDFrame");
    let c_es = col("ESFrame");

    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        // header is row 1
        let row_no = i + 2;
        let bad = |reason: &str| Error::MalformedRow {
            row: row_no,
            reason: reason.to_string(),
        };
        let row = row.map_err(|e| bad(&e.to_string()))?;
        let field = |c: usize| row.get(c).unwrap_or("");
        let source_id = field(c_file).to_string();
        if source_id.is_empty() {
            return Err(bad("empty file name"));
        }
        let ef_percent: f64 = field(c_ef).parse().map_err(|_| bad("ef not numeric"))?;
        if !(0.0..=100.0).contains(&ef_percent) {
            return Err(bad("ef outside [0, 100]"));
        }
        let split: Split = field(c_split).parse().map_err(|e: String| bad(&e))?;
        let fps: f64 = field(c_fps).parse().map_err(|_| bad("fps not numeric"))?;
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(bad("fps must be positive"));
        }
        let ed = c_ed.map(|c| parse_indices(field(c))).transpose().map_err(|e| bad(&e))?;
        let es = c_es.map(|c| parse_indices(field(c))).transpose().map_err(|e| bad(&e))?;
        let ed = ed.unwrap_or_default();
        let es = es.unwrap_or_default();
        if ed.len() != es.len() {
            return Err(bad("EDFrame and ESFrame counts differ"));
        }
        let phase_frames: Vec<(usize, usize)> = ed.into_iter().zip(es).collect();
        if phase_frames.iter().any(|(d, s)| d >= s) {
            return Err(bad("EDFrame must precede ESFrame"));
        }
        records.push(ClipRecord {
            file_path: resolve(dir, &source_id),
            source_id,
            ef_percent,
            split,
            fps,
            phase_frames,
        });
    }
    if records.is_empty() {
        return Err(Error::EmptyManifest);
    }
    Ok(records)
}

/// Writes records with file names relative to the manifest's directory.
pub fn write_manifest(path: &Path, records: &[ClipRecord]) -> Result<()> {
    let with_phase = records.iter().any(|r| !r.phase_frames.is_empty());
    let mut out = String::from("FileName,EF,Split,FPS");
    if with_phase {
        out.push_str(",EDFrame,ESFrame");
    }
    out.push('\n');
    let join = |xs: Vec<usize>| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";");
    for r in records {
        out.push_str(&format!("{},{},{},{}", r.source_id, r.ef_percent, r.split, r.fps));
        if with_phase {
            let ed = join(r.phase_frames.iter().map(|p| p.0).collect());
            let es = join(r.phase_frames.iter().map(|p| p.1).collect());
            out.push_str(&format!(",{ed},{es}"));
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}
