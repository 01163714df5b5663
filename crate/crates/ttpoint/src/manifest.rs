//! `manifest.csv` next to a directory of stream files: `file,label,split`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use ttpoint_core::events::EventStream;

use crate::error::{Error, Result};
use crate::events_io::{load_events, EventFormat};

pub const MANIFEST: &str = "manifest.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub file: String,
    pub label: Option<u32>,
    pub split: Split,
}

pub fn write_manifest(dir: &Path, rows: &[ManifestRow]) -> Result<()> {
    let path = dir.join(MANIFEST);
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestRow>> {
    let path = dir.join(MANIFEST);
    let mut r = csv::Reader::from_path(&path).map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::format(format!("{}: {e}", path.display()))))
        .collect()
}

/// A labelled stream with its position in the manifest.
pub struct LoadedStream {
    pub index: u32,
    pub path: PathBuf,
    pub split: Split,
    pub stream: EventStream,
}

pub fn load_streams(dir: &Path) -> Result<Vec<LoadedStream>> {
    read_manifest(dir)?
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let path = dir.join(&row.file);
            let mut stream = load_events(&path, EventFormat::from_path(&path))?;
            stream.label = row.label;
            Ok(LoadedStream { index: i as u32, path, split: row.split, stream })
        })
        .collect()
}
