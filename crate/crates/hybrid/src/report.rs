//! Output directory writer: CSV for series, JSON for reports, plus the
//! manifest.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::manifest::RunManifest;

pub struct OutputDir {
    dir: PathBuf,
    manifest: RunManifest,
}

impl OutputDir {
    pub fn create(dir: &Path, manifest: RunManifest) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), manifest })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    fn write(&mut self, name: &str, bytes: Vec<u8>) -> io::Result<()> {
        fs::write(self.dir.join(name), &bytes)?;
        self.manifest.add_output(name, &bytes);
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> io::Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(io::Error::other)?;
        bytes.push(b'\n');
        self.write(name, bytes)
    }

    /// Writes serializable rows; the header comes from the field names.
    pub fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> io::Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r).map_err(io::Error::other)?;
        }
        let bytes = w.into_inner().map_err(|e| io::Error::other(e.to_string()))?;
        self.write(name, bytes)
    }

    /// Writes the manifest; call last.
    pub fn finish(self) -> io::Result<RunManifest> {
        self.manifest.write(&self.dir)?;
        Ok(self.manifest)
    }
}

/// Rounds for display in reports without affecting computations.
pub fn round_to(x: f64, places: i32) -> f64 {
    let f = 10f64.powi(places);
    (x * f).round() / f
}
