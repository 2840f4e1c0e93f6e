//! Run manifests: line-oriented `key = value` records of a command, its configuration and
//! the SHA-256 of every file it read or wrote.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;

use anyhow::{bail, Context, Result};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq)]
pub struct FileHash {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileHash {
    pub fn of(path: &Path) -> Result<Self> {
        let path = fs::canonicalize(path).with_context(|| format!("cannot resolve {}", path.display()))?;
        let sha256 = sha256_file(&path)?;
        Ok(Self { path, sha256 })
    }
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(sha256_bytes(&bytes))
}

/// Writes `bytes` to `path` through a temporary file in the same directory and a rename,
/// so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp =
        tempfile::NamedTempFile::new_in(dir).with_context(|| format!("cannot write into {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    /// Subcommand name.
    pub command: String,
    /// Arguments after the program name, as given.
    pub args: Vec<String>,
    pub cwd: PathBuf,
    pub version: String,
    pub seed: Option<u64>,
    /// Resolved configuration.
    pub config: Vec<(String, String)>,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub wall_clock_s: f64,
}

impl RunManifest {
    /// A manifest for the current process, with no files recorded yet.
    pub fn for_current_run(command: &str) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            args: std::env::args().skip(1).collect(),
            cwd: std::env::current_dir()?,
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: None,
            config: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            wall_clock_s: 0.0,
        })
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.config.push((key.to_string(), value.to_string()));
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileHash::of(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(FileHash::of(path)?);
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: &str| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        };
        line("command", &self.command);
        line("version", &self.version);
        line("cwd", &self.cwd.to_string_lossy());
        for a in &self.args {
            line("arg", a);
        }
        if let Some(s) = self.seed {
            line("seed", &s.to_string());
        }
        for (k, v) in &self.config {
            line(&format!("config.{k}"), v);
        }
        for f in &self.inputs {
            line("input", &format!("sha256:{} {}", f.sha256, f.path.to_string_lossy()));
        }
        for f in &self.outputs {
            line("output", &format!("sha256:{} {}", f.sha256, f.path.to_string_lossy()));
        }
        line("wall_clock_s", &format!("{:.3}", self.wall_clock_s));
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut m = Self {
            command: String::new(),
            args: Vec::new(),
            cwd: PathBuf::new(),
            version: String::new(),
            seed: None,
            config: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            wall_clock_s: 0.0,
        };
        let file = |v: &str| -> Result<FileHash> {
            let rest = v
                .strip_prefix("sha256:")
                .context("file entry must start with sha256:")?;
            let (hash, path) = rest.split_once(' ').context("file entry needs a hash and a path")?;
            Ok(FileHash {
                path: PathBuf::from(path),
                sha256: hash.to_string(),
            })
        };
        for (n, raw) in text.lines().enumerate() {
            if raw.trim().is_empty() {
                continue;
            }
            let (k, v) = raw
                .split_once(" = ")
                .with_context(|| format!("manifest line {}: expected 'key = value'", n + 1))?;
            match k {
                "command" => m.command = v.to_string(),
                "version" => m.version = v.to_string(),
                "cwd" => m.cwd = PathBuf::from(v),
                "arg" => m.args.push(v.to_string()),
                "seed" => m.seed = Some(v.parse().context("bad seed")?),
                "input" => m.inputs.push(file(v)?),
                "output" => m.outputs.push(file(v)?),
                "wall_clock_s" => m.wall_clock_s = v.parse().context("bad wall clock")?,
                k => match k.strip_prefix("config.") {
                    Some(key) => m.config.push((key.to_string(), v.to_string())),
                    None => bail!("manifest line {}: unknown key '{k}'", n + 1),
                },
            }
        }
        if m.command.is_empty() {
            bail!("manifest has no command");
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read manifest {}", path.display()))?;
        Self::from_text(&text)
    }

    /// Outputs whose current content no longer matches the recorded hash.
    pub fn changed_outputs(&self) -> Result<Vec<PathBuf>> {
        let mut changed = Vec::new();
        for f in &self.outputs {
            if !f.path.exists() || sha256_file(&f.path)? != f.sha256 {
                changed.push(f.path.clone());
            }
        }
        Ok(changed)
    }

    /// Re-executes the recorded command with `exe` from the recorded working directory and
    /// returns the outputs whose hashes differ from this manifest.
    pub fn rerun(&self, exe: &Path) -> Result<Vec<PathBuf>> {
        let status = Command::new(exe)
            .args(&self.args)
            .current_dir(&self.cwd)
            .status()
            .with_context(|| format!("cannot start {}", exe.display()))?;
        if !status.success() {
            bail!("re-run of '{}' failed with {status}", self.command);
        }
        self.changed_outputs()
    }
}

/// Manifest path next to a single output file: `<file>.manifest`.
pub fn manifest_path_for(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}
