//! Experiment directories: exclusive lock, resolved config copy, log file and
//! atomic JSON writes.

use std::fs::{self, File, OpenOptions};
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::config::ExperimentConfig;
use super::PipelineError;

pub const LOCK_FILE: &str = ".lock";
pub const CONFIG_COPY: &str = "config.copy";

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::Json(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Json(format!("{}: {e}", path.display())))
}

/// Exclusive ownership of a directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

fn pid_alive(pid: u32) -> bool {
    // Without /proc there is no cheap liveness check; assume the owner lives.
    !Path::new("/proc/self").exists() || Path::new(&format!("/proc/{pid}")).exists()
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self, PipelineError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join(LOCK_FILE);
        for _ in 0..2 {
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    let _ = writeln!(f, "{}", std::process::id());
                    return Ok(Self { path });
                }
                Err(e) if e.kind() == ErrorKind::AlreadyExists => {
                    let owner = fs::read_to_string(&path).ok().and_then(|s| s.trim().parse::<u32>().ok());
                    match owner {
                        Some(pid) if !pid_alive(pid) => {
                            let _ = fs::remove_file(&path);
                        }
                        _ => return Err(PipelineError::Locked(dir.to_path_buf())),
                    }
                }
                Err(e) => return Err(io_err(&path)(e)),
            }
        }
        Err(PipelineError::Locked(dir.to_path_buf()))
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// An experiment directory owned by this process.
#[derive(Debug)]
pub struct Experiment {
    pub dir: PathBuf,
    pub cfg: ExperimentConfig,
    log: Mutex<File>,
    started: Instant,
    _lock: DirLock,
}

impl Experiment {
    /// Locks `dir` and records `cfg` in `config.copy`. A directory that
    /// already holds a different config is refused so that resumed runs
    /// cannot mix settings.
    pub fn create(dir: &Path, cfg: ExperimentConfig) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let lock = DirLock::acquire(dir)?;
        let copy = dir.join(CONFIG_COPY);
        if copy.exists() {
            let existing = ExperimentConfig::load(&copy)?;
            if existing != cfg {
                return Err(PipelineError::Config(format!(
                    "{} holds a different config; use a fresh output directory",
                    dir.display()
                )));
            }
        } else {
            write_atomic(&copy, cfg.to_toml().as_bytes())?;
        }
        Self::finish(dir, cfg, lock)
    }

    /// Locks an existing experiment and reads its `config.copy`.
    pub fn open(dir: &Path) -> Result<Self, PipelineError> {
        let copy = dir.join(CONFIG_COPY);
        if !copy.exists() {
            return Err(PipelineError::Missing(format!("{} (not an experiment directory)", copy.display())));
        }
        let lock = DirLock::acquire(dir)?;
        let cfg = ExperimentConfig::load(&copy)?;
        Self::finish(dir, cfg, lock)
    }

    fn finish(dir: &Path, cfg: ExperimentConfig, lock: DirLock) -> Result<Self, PipelineError> {
        let log_path = dir.join("log.txt");
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(io_err(&log_path))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            cfg,
            log: Mutex::new(log),
            started: Instant::now(),
            _lock: lock,
        })
    }

    pub fn log(&self, msg: &str) {
        let line = format!("[{:9.2}s] {msg}\n", self.started.elapsed().as_secs_f64());
        if let Ok(mut f) = self.log.lock() {
            let _ = f.write_all(line.as_bytes());
        }
    }

    pub fn base_dir(&self) -> PathBuf {
        self.dir.join("base")
    }

    pub fn group_dir(&self, i: usize) -> PathBuf {
        self.dir.join("groups").join(i.to_string())
    }

    pub fn report_path(&self) -> PathBuf {
        self.dir.join("report.json")
    }
}
