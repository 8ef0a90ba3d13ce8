//! Append-only memory bank of evaluated pruning schemes.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{PruneError, PruningScheme, ProxyKind};

/// One evaluated scheme. Serialised as a single JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryBankEntry {
    pub round: usize,
    pub proxy: ProxyKind,
    pub remove: BTreeMap<usize, Vec<usize>>,
    pub flops: u64,
    pub loss: f64,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
}

impl MemoryBankEntry {
    pub fn new(scheme: &PruningScheme, flops: u64, loss: f64) -> Self {
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        Self {
            round: scheme.round,
            proxy: scheme.proxy,
            remove: scheme.remove.clone(),
            flops,
            loss,
            timestamp,
        }
    }

    pub fn scheme(&self) -> PruningScheme {
        PruningScheme {
            remove: self.remove.clone(),
            proxy: self.proxy,
            round: self.round,
        }
    }

    /// Ordering used everywhere a "best" entry is needed: loss, then FLOPs,
    /// then the removal map.
    pub fn rank_cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.loss
            .total_cmp(&other.loss)
            .then(self.flops.cmp(&other.flops))
            .then_with(|| self.remove.cmp(&other.remove))
    }
}

/// History of `(scheme, loss)` pairs, optionally mirrored to a JSONL file.
#[derive(Debug, Default)]
pub struct MemoryBank {
    entries: Vec<MemoryBankEntry>,
    path: Option<PathBuf>,
}

impl MemoryBank {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) a bank file, loading any entries already present.
    pub fn open(path: &Path) -> Result<Self, PruneError> {
        let io = |e: std::io::Error| PruneError::Bank(format!("{}: {e}", path.display()));
        let mut entries = Vec::new();
        if path.exists() {
            let text = fs::read_to_string(path).map_err(io)?;
            for (n, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let entry = serde_json::from_str(line)
                    .map_err(|e| PruneError::Bank(format!("{} line {}: {e}", path.display(), n + 1)))?;
                entries.push(entry);
            }
        } else if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io)?;
        }
        Ok(Self {
            entries,
            path: Some(path.to_path_buf()),
        })
    }

    /// Appends an entry and persists it immediately.
    pub fn update(&mut self, entry: MemoryBankEntry) -> Result<(), PruneError> {
        if !entry.loss.is_finite() {
            return Err(PruneError::Bank(format!("non-finite loss {}", entry.loss)));
        }
        if let Some(path) = &self.path {
            let mut line = serde_json::to_string(&entry).map_err(|e| PruneError::Bank(e.to_string()))?;
            line.push('\n');
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| PruneError::Bank(format!("{}: {e}", path.display())))?;
            f.write_all(line.as_bytes())
                .map_err(|e| PruneError::Bank(format!("{}: {e}", path.display())))?;
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> &[MemoryBankEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries sorted best first.
    pub fn ranked(&self) -> Vec<MemoryBankEntry> {
        let mut sorted = self.entries.clone();
        sorted.sort_by(MemoryBankEntry::rank_cmp);
        sorted
    }

    pub fn best(&self) -> Option<&MemoryBankEntry> {
        self.entries.iter().min_by(|a, b| a.rank_cmp(b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(loss: f64, layer0: Vec<usize>) -> MemoryBankEntry {
        let mut remove = BTreeMap::new();
        remove.insert(0, layer0);
        MemoryBankEntry {
            round: 0,
            proxy: ProxyKind::Random,
            remove,
            flops: 100,
            loss,
            timestamp: 1,
        }
    }

    #[test]
    fn append_only_and_persistent() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g/bank.jsonl");
        let mut bank = MemoryBank::open(&path).unwrap();
        assert!(bank.is_empty());
        bank.update(entry(0.5, vec![1])).unwrap();
        assert_eq!(bank.len(), 1);
        let before = bank.entries().to_vec();
        bank.update(entry(0.2, vec![2])).unwrap();
        bank.update(entry(0.9, vec![3])).unwrap();
        assert_eq!(&bank.entries()[..1], &before[..]);

        let reloaded = MemoryBank::open(&path).unwrap();
        assert_eq!(reloaded.entries(), bank.entries());
        assert_eq!(bank.best().unwrap().loss, 0.2);
        let ranked: Vec<f64> = bank.ranked().iter().map(|e| e.loss).collect();
        assert_eq!(ranked, vec![0.2, 0.5, 0.9]);

        assert!(bank.update(entry(f64::NAN, vec![])).is_err());
        assert_eq!(bank.len(), 3);
    }
}
