use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Default, Serialize)]
pub struct TokenCounts {
    pub total: usize,
    pub valid: usize,
    pub windows: usize,
}

/// Provenance of one command invocation. Written before any data file and
/// rewritten with the final status once the command finishes.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub argv: Vec<String>,
    pub inputs: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub thresholds: BTreeMap<String, f64>,
    pub workers: usize,
    pub tokens: Option<TokenCounts>,
    pub outputs: Vec<String>,
    pub status: &'static str,
    pub wall_time_s: Option<f64>,
}

/// An output directory plus its manifest.
pub struct Run {
    dir: PathBuf,
    pub manifest: RunManifest,
    start: Instant,
}

impl Run {
    pub fn begin(dir: &Path, command: &str, argv: &[String], workers: usize) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        let run = Self {
            dir: dir.to_path_buf(),
            manifest: RunManifest {
                tool: "unineurons",
                version: env!("CARGO_PKG_VERSION"),
                command: command.to_string(),
                argv: argv.to_vec(),
                inputs: BTreeMap::new(),
                seeds: BTreeMap::new(),
                thresholds: BTreeMap::new(),
                workers,
                tokens: None,
                outputs: Vec::new(),
                status: "running",
                wall_time_s: None,
            },
            start: Instant::now(),
        };
        run.write_manifest()?;
        Ok(run)
    }

    pub fn input(&mut self, name: &str, path: &Path) -> &mut Self {
        self.manifest.inputs.insert(name.into(), path.display().to_string());
        self
    }

    pub fn seed(&mut self, name: &str, seed: u64) -> &mut Self {
        self.manifest.seeds.insert(name.into(), seed);
        self
    }

    pub fn threshold(&mut self, name: &str, value: f64) -> &mut Self {
        self.manifest.thresholds.insert(name.into(), value);
        self
    }

    /// Records inputs, seeds and thresholds gathered so far, before any data
    /// file is written.
    pub fn commit(&self) -> Result<()> {
        self.write_manifest()
    }

    fn write_manifest(&self) -> Result<()> {
        let path = self.dir.join(MANIFEST);
        let f = File::create(&path).map_err(|e| Error::file(&path, e))?;
        let mut w = BufWriter::new(f);
        serde_json::to_writer_pretty(&mut w, &self.manifest)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.path(name);
        let f = File::create(&path).map_err(|e| Error::file(&path, e))?;
        self.manifest.outputs.push(name.to_string());
        Ok(BufWriter::new(f))
    }

    pub fn csv(&mut self, name: &str) -> Result<csv::Writer<BufWriter<File>>> {
        Ok(csv::Writer::from_writer(self.create(name)?))
    }

    pub fn raw(&mut self, name: &str) -> Result<BufWriter<File>> {
        self.create(name)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.manifest.status = "complete";
        self.manifest.wall_time_s = Some(self.start.elapsed().as_secs_f64());
        self.write_manifest()
    }
}
