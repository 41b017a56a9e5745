//! Run directories. A `.incomplete` sentinel exists from creation until every
//! file is in place, and each file is written to a temporary name and renamed,
//! so a reader never mistakes a truncated file for a finished one.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use coaglab_core::{KernelDecl, Strategy};
use serde::Serialize;

use crate::config::{Loaded, RunConfig, CODE_VERSION};
use crate::CliError;

pub const SENTINEL: &str = ".incomplete";
pub const MANIFEST: &str = "manifest.json";

#[derive(Serialize)]
pub struct Manifest<'a> {
    pub command: &'a str,
    pub run_id: &'a str,
    pub seed: u64,
    pub n: u64,
    pub kernel: &'a KernelDecl,
    #[serde(rename = "L")]
    pub truncation: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub grid: &'a [f64],
    pub strategy: Strategy,
    pub code_version: &'a str,
    /// The effective config after overrides.
    pub config: &'a RunConfig,
    /// Command-specific results worth keeping next to the inputs.
    pub extra: serde_json::Value,
}

pub struct RunDir {
    root: PathBuf,
    command: String,
    run_id: String,
}

impl RunDir {
    /// Creates `out/<run-id>`. An existing directory is replaced only if it
    /// holds a manifest or sentinel, i.e. was made by an earlier run.
    pub fn create(cfg: &Loaded, command: &str) -> Result<Self> {
        let run_id = cfg.run_id(command);
        let root = cfg.out_dir().join(&run_id);
        if root.exists() {
            if !(root.join(MANIFEST).exists() || root.join(SENTINEL).exists()) {
                return Err(CliError::Config(format!(
                    "{} exists and is not a run directory; refusing to overwrite",
                    root.display()
                ))
                .into());
            }
            fs::remove_dir_all(&root).with_context(|| format!("clearing {}", root.display()))?;
        }
        fs::create_dir_all(root.join("trajectories")).with_context(|| format!("creating {}", root.display()))?;
        fs::write(root.join(SENTINEL), b"").context("writing sentinel")?;
        let dir = RunDir {
            root,
            command: command.to_owned(),
            run_id,
        };
        dir.manifest(cfg, serde_json::Value::Null)?;
        Ok(dir)
    }

    pub fn manifest(&self, cfg: &Loaded, extra: serde_json::Value) -> Result<()> {
        let c = &cfg.config;
        self.json(
            MANIFEST,
            &Manifest {
                command: &self.command,
                run_id: &self.run_id,
                seed: c.seed,
                n: c.n,
                kernel: &c.kernel,
                truncation: c.truncation,
                horizon: c.horizon,
                grid: cfg.grid(),
                strategy: c.strategy,
                code_version: CODE_VERSION,
                config: c,
                extra,
            },
        )
    }

    pub fn json<T: Serialize + ?Sized>(&self, rel: &str, value: &T) -> Result<()> {
        let dest = self.root.join(rel);
        let tmp = temp_name(&dest);
        let mut w = BufWriter::new(File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?);
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n")?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        fs::rename(&tmp, &dest).with_context(|| format!("renaming to {}", dest.display()))?;
        Ok(())
    }

    pub fn csv(&self, rel: &str) -> Result<CsvFile> {
        let dest = self.root.join(rel);
        let tmp = temp_name(&dest);
        let file = File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        Ok(CsvFile {
            writer: csv::Writer::from_writer(BufWriter::new(file)),
            tmp,
            dest,
        })
    }

    /// Removes the sentinel; the run is complete from here on.
    pub fn finish(self) -> Result<PathBuf> {
        fs::remove_file(self.root.join(SENTINEL)).context("removing sentinel")?;
        Ok(self.root)
    }
}

fn temp_name(dest: &Path) -> PathBuf {
    let mut name = dest.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    dest.with_file_name(name)
}

pub struct CsvFile {
    writer: csv::Writer<BufWriter<File>>,
    tmp: PathBuf,
    dest: PathBuf,
}

impl CsvFile {
    pub fn row<S: Serialize>(&mut self, row: S) -> Result<()> {
        self.writer.serialize(row)?;
        Ok(())
    }

    pub fn finish(self) -> Result<()> {
        let inner = self
            .writer
            .into_inner()
            .map_err(|e| anyhow::anyhow!("flushing csv: {}", e.error()))?;
        inner.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        fs::rename(&self.tmp, &self.dest).with_context(|| format!("renaming to {}", self.dest.display()))?;
        Ok(())
    }
}
