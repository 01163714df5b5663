//! Clip archives: one file per clip, named `s<source>_w<window>.clp`.
//!
//! File layout (little-endian): `CLP1`, `u32` N, `u32` label (`0xFFFFFFFF` when
//! unlabeled), `u64` window start, `u64` window end, then `N x 3` `f32`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ttpoint_core::events::ClipSample;

use crate::error::{Error, Result};

pub const CLIP_MAGIC: &[u8; 4] = b"CLP1";
pub const NO_LABEL: u32 = u32::MAX;
const HEADER_BYTES: usize = 28;

pub fn encode_clip(clip: &ClipSample) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_BYTES + clip.points.len() * 12);
    out.extend_from_slice(CLIP_MAGIC);
    out.extend_from_slice(&(clip.points.len() as u32).to_le_bytes());
    out.extend_from_slice(&clip.label.unwrap_or(NO_LABEL).to_le_bytes());
    out.extend_from_slice(&clip.window_start_us.to_le_bytes());
    out.extend_from_slice(&clip.window_end_us.to_le_bytes());
    for p in &clip.points {
        for v in p {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Decodes one clip file; `source_id` comes from the file name.
pub fn decode_clip(bytes: &[u8], source_id: u32) -> Result<ClipSample> {
    if bytes.len() < HEADER_BYTES || &bytes[..4] != CLIP_MAGIC {
        return Err(Error::format("not a CLP1 clip"));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let u64_at = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().expect("8 bytes"));
    let n = u32_at(4) as usize;
    let label = u32_at(8);
    if bytes.len() != HEADER_BYTES + n * 12 {
        return Err(Error::format(format!("clip declares {n} points but holds {} bytes", bytes.len())));
    }
    let points = bytes[HEADER_BYTES..]
        .chunks_exact(12)
        .map(|c| {
            let f = |i: usize| f32::from_le_bytes(c[i..i + 4].try_into().expect("4 bytes"));
            [f(0), f(4), f(8)]
        })
        .collect();
    Ok(ClipSample {
        points,
        label: (label != NO_LABEL).then_some(label),
        window_start_us: u64_at(12),
        window_end_us: u64_at(20),
        source_id,
    })
}

pub fn clip_file_name(source_id: u32, window: usize) -> String {
    format!("s{source_id:06}_w{window:04}.clp")
}

fn parse_file_name(name: &str) -> Option<(u32, usize)> {
    let stem = name.strip_suffix(".clp")?.strip_prefix('s')?;
    let (s, w) = stem.split_once("_w")?;
    Some((s.parse().ok()?, w.parse().ok()?))
}

/// Writes every clip into `dir`; windows are numbered per source in order.
pub fn write_archive(dir: &Path, clips: &[ClipSample]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut next_window = std::collections::HashMap::<u32, usize>::new();
    let mut paths = Vec::with_capacity(clips.len());
    for clip in clips {
        let w = next_window.entry(clip.source_id).or_insert(0);
        let path = dir.join(clip_file_name(clip.source_id, *w));
        *w += 1;
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(&encode_clip(clip)).map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}

/// Reads every `.clp` file of `dir`, ordered by (source, window).
pub fn read_archive(dir: &Path) -> Result<Vec<ClipSample>> {
    let mut found = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        if let Some(key) = parse_file_name(name) {
            found.push((key, entry.path()));
        } else if name.ends_with(".clp") {
            return Err(Error::format(format!("{}: unexpected clip file name", entry.path().display())));
        }
    }
    found.sort();
    found
        .into_iter()
        .map(|((source, _), path)| {
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            decode_clip(&bytes, source).map_err(|e| Error::format(format!("{}: {e}", path.display())))
        })
        .collect()
}
