//! Run bookkeeping: exit codes, hashed inputs, staged outputs and the
//! manifest written next to them.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::anyhow;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

/// A failed run; the exit code tells usage and I/O problems (2) from
/// domain errors (1).
#[derive(Debug)]
pub enum Failure {
    Domain(anyhow::Error),
    Io(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Domain(_) => 1,
            Failure::Io(_) => 2,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Domain(e) | Failure::Io(e) => e,
        }
    }
}

pub type CliResult<T> = Result<T, Failure>;

pub fn domain(msg: impl Display) -> Failure {
    Failure::Domain(anyhow!("{msg}"))
}

pub fn io(msg: impl Display) -> Failure {
    Failure::Io(anyhow!("{msg}"))
}

/// Map any displayable error into a domain failure.
pub trait OrDomain<T> {
    fn or_domain(self) -> CliResult<T>;
}

impl<T, E: Display> OrDomain<T> for Result<T, E> {
    fn or_domain(self) -> CliResult<T> {
        self.map_err(domain)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// Everything needed to reproduce a run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub tool_version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    /// Input path (or bundled name) to SHA-256 of its content.
    pub inputs: BTreeMap<String, String>,
    /// Output file name to SHA-256 of its content.
    pub outputs: BTreeMap<String, String>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

impl RunManifest {
    pub fn load(dir: &Path) -> CliResult<Option<RunManifest>> {
        let path = dir.join(MANIFEST);
        if !path.exists() {
            return Ok(None);
        }
        let s = fs::read_to_string(&path).map_err(|e| io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&s)
            .map(Some)
            .map_err(|e| domain(format!("{}: {e}", path.display())))
    }
}

/// One subcommand invocation. Outputs go to `out_dir`; if the run fails
/// they are removed again.
pub struct Run {
    subcommand: String,
    seed: u64,
    out_dir: PathBuf,
    created_dir: bool,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    written: Vec<PathBuf>,
    started: u64,
}

impl Run {
    pub fn new(subcommand: &str, seed: u64, out_dir: &Path) -> Run {
        Run {
            subcommand: subcommand.to_string(),
            seed,
            out_dir: out_dir.to_path_buf(),
            created_dir: false,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            written: Vec::new(),
            started: unix_now(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Read an input file and record its hash.
    pub fn read(&mut self, path: &Path) -> CliResult<String> {
        let s = fs::read_to_string(path).map_err(|e| io(format!("{}: {e}", path.display())))?;
        self.inputs
            .insert(path.display().to_string(), sha256_hex(s.as_bytes()));
        Ok(s)
    }

    /// Record a bundled input under its name.
    pub fn bundled(&mut self, name: &str, content: &str) {
        self.inputs
            .insert(format!("builtin:{name}"), sha256_hex(content.as_bytes()));
    }

    /// Read `dir/name`, checking it against the hash the producing run
    /// recorded, if `dir` holds a manifest that lists it.
    pub fn read_checked(&mut self, dir: &Path, name: &str) -> CliResult<String> {
        let path = dir.join(name);
        let s = self.read(&path)?;
        if let Some(m) = RunManifest::load(dir)? {
            if let Some(expected) = m.outputs.get(name) {
                if *expected != sha256_hex(s.as_bytes()) {
                    return Err(domain(format!(
                        "{} does not match the hash in its manifest",
                        path.display()
                    )));
                }
            }
        }
        Ok(s)
    }

    pub fn write(&mut self, name: &str, content: &str) -> CliResult<()> {
        if !self.out_dir.exists() {
            fs::create_dir_all(&self.out_dir)
                .map_err(|e| io(format!("{}: {e}", self.out_dir.display())))?;
            self.created_dir = true;
        }
        let path = self.out_dir.join(name);
        self.written.push(path.clone());
        fs::write(&path, content).map_err(|e| io(format!("{}: {e}", path.display())))?;
        self.outputs
            .insert(name.to_string(), sha256_hex(content.as_bytes()));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut s = serde_json::to_string_pretty(value).or_domain()?;
        s.push('\n');
        self.write(name, &s)
    }

    pub fn write_jsonl<T: Serialize>(&mut self, name: &str, items: &[T]) -> CliResult<()> {
        let mut s = String::new();
        for item in items {
            s.push_str(&serde_json::to_string(item).or_domain()?);
            s.push('\n');
        }
        self.write(name, &s)
    }

    /// Write the manifest; a run with no outputs writes nothing.
    pub fn finish(mut self, config: serde_json::Value) -> CliResult<()> {
        if self.outputs.is_empty() {
            return Ok(());
        }
        let manifest = RunManifest {
            subcommand: self.subcommand.clone(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
            config,
            inputs: std::mem::take(&mut self.inputs),
            outputs: self.outputs.clone(),
            started_unix: self.started,
            finished_unix: unix_now(),
        };
        let s = serde_json::to_string_pretty(&manifest).or_domain()?;
        let path = self.out_dir.join(MANIFEST);
        fs::write(&path, s + "\n").map_err(|e| {
            self.abort();
            io(format!("{}: {e}", path.display()))
        })
    }

    /// Remove everything this run wrote.
    pub fn abort(&mut self) {
        for p in self.written.drain(..) {
            let _ = fs::remove_file(p);
        }
        if self.created_dir {
            let _ = fs::remove_dir(&self.out_dir);
        }
    }
}
