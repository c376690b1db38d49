use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

pub const LOCK_FILE: &str = ".neurodecode.lock";
pub const OUTPUTS_FILE: &str = "outputs.json";
pub const LOG_FILE: &str = "run.log";

/// Another run owns the output directory.
#[derive(Debug)]
pub struct Locked(pub PathBuf);

impl std::fmt::Display for Locked {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} is locked by another run; delete {} if that run is gone",
            self.0.display(),
            self.0.join(LOCK_FILE).display()
        )
    }
}

impl std::error::Error for Locked {}

struct Lock(PathBuf);

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

#[derive(Serialize)]
struct OutputEntry {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Outputs<'a> {
    command: &'a str,
    config_hash: &'a str,
    seed: u64,
    files: Vec<OutputEntry>,
}

/// One subcommand's view of its output directory.
pub struct Run {
    pub out: PathBuf,
    files: Vec<PathBuf>,
    _lock: Lock,
}

impl Run {
    pub fn open(out: &Path) -> Result<Self> {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let lock = out.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(Locked(out.to_path_buf()).into());
            }
            Err(e) => return Err(e).with_context(|| format!("creating {}", lock.display())),
        }
        Ok(Self {
            out: out.to_path_buf(),
            files: Vec::new(),
            _lock: Lock(lock),
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    pub fn write(&mut self, rel: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let p = self.path(rel);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))?;
        self.files.push(p);
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value)?;
        self.write(rel, text + "\n")
    }

    /// Records a file some library call already wrote.
    pub fn record(&mut self, path: &Path) {
        self.files.push(path.to_path_buf());
    }

    /// Records every file below `rel`.
    pub fn record_tree(&mut self, rel: &str) {
        for e in WalkDir::new(self.path(rel)).sort_by_file_name().into_iter().flatten() {
            if e.file_type().is_file() {
                self.files.push(e.into_path());
            }
        }
    }

    /// Writes the output manifest and appends to the log.
    pub fn finish(mut self, command: &str, config_hash: &str, seed: u64) -> Result<()> {
        self.files.sort();
        self.files.dedup();
        let mut entries = Vec::with_capacity(self.files.len());
        for f in &self.files {
            let bytes = fs::read(f).with_context(|| format!("hashing {}", f.display()))?;
            let rel = f.strip_prefix(&self.out).unwrap_or(f);
            entries.push(OutputEntry {
                path: rel.to_string_lossy().replace('\\', "/"),
                sha256: hex::encode(Sha256::digest(&bytes)),
            });
        }
        if entries.is_empty() {
            bail!("{command} produced no files");
        }
        let n = entries.len();
        let outputs = Outputs {
            command,
            config_hash,
            seed,
            files: entries,
        };
        let p = self.path(OUTPUTS_FILE);
        fs::write(&p, serde_json::to_string_pretty(&outputs)? + "\n")?;
        let stamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let mut log = OpenOptions::new().create(true).append(true).open(self.path(LOG_FILE))?;
        writeln!(
            log,
            "{stamp} {command} config_sha256={config_hash} seed={seed} files={n}"
        )?;
        Ok(())
    }
}
