//! On-disk layout of one campaign:
//!
//! ```text
//! <store>/<campaign_id>/
//!   config.json         campaign configuration
//!   manifest.jsonl      one DatasetManifestEntry per line
//!   annotations.jsonl   append-only annotation log
//!   batches.jsonl       issued batches, append-only (created on first issue)
//!   exclusions.jsonl    operator exclusions, append-only (created on demand)
//!   ledgers/<aid>.json  materialized annotator ledgers
//! ```
//!
//! Everything except the ledgers is replayed on startup; ledgers are
//! rewritten after every change for external readers.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use softlabel_core::gatekeeper::AnnotatorLedger;
use softlabel_core::AnnotationRecord;

use crate::error::{Result, ServiceError};
use crate::model::{CampaignConfig, DatasetManifestEntry, TaskBatch};

pub const CONFIG_FILE: &str = "config.json";
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const BATCHES_FILE: &str = "batches.jsonl";
pub const EXCLUSIONS_FILE: &str = "exclusions.jsonl";
pub const LEDGER_DIR: &str = "ledgers";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub annotator_id: String,
    pub reason: String,
    pub at_ms: u64,
}

/// Everything needed to rebuild a campaign in memory.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub config: CampaignConfig,
    pub manifest: Vec<DatasetManifestEntry>,
    pub batches: Vec<TaskBatch>,
    pub records: Vec<AnnotationRecord>,
    pub exclusions: Vec<Exclusion>,
}

#[derive(Debug, Clone)]
pub struct CampaignDir {
    root: PathBuf,
}

impl CampaignDir {
    /// Creates the directory with config, manifest and an empty log.
    pub fn create(store_dir: &Path, config: &CampaignConfig, manifest: &[DatasetManifestEntry]) -> Result<Self> {
        fs::create_dir_all(store_dir).map_err(|e| ServiceError::io(store_dir, e))?;
        let root = store_dir.join(&config.campaign_id);
        match fs::create_dir(&root) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(ServiceError::DuplicateCampaign(config.campaign_id.clone()))
            }
            Err(e) => return Err(ServiceError::io(&root, e)),
        }
        let dir = Self { root };
        let config_json = serde_json::to_string_pretty(config).expect("config serializes");
        dir.write_atomic(CONFIG_FILE, format!("{config_json}\n").as_bytes())?;
        dir.write_atomic(MANIFEST_FILE, jsonl(manifest).as_bytes())?;
        dir.write_atomic(ANNOTATIONS_FILE, b"")?;
        Ok(dir)
    }

    pub fn open(root: impl Into<PathBuf>) -> Result<(Self, Snapshot)> {
        let dir = Self { root: root.into() };
        let config_path = dir.path(CONFIG_FILE);
        let text = fs::read_to_string(&config_path).map_err(|e| ServiceError::io(&config_path, e))?;
        let config: CampaignConfig = serde_json::from_str(&text).map_err(|e| ServiceError::Corrupt {
            path: config_path.clone(),
            line: e.line(),
            message: e.to_string(),
        })?;
        let snapshot = Snapshot {
            manifest: dir.read_jsonl(MANIFEST_FILE)?,
            batches: dir.read_jsonl(BATCHES_FILE)?,
            records: dir.read_jsonl(ANNOTATIONS_FILE)?,
            exclusions: dir.read_jsonl(EXCLUSIONS_FILE)?,
            config,
        };
        Ok((dir, snapshot))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn append_records(&self, records: &[AnnotationRecord]) -> Result<()> {
        self.append(ANNOTATIONS_FILE, records)
    }

    pub fn append_batch(&self, batch: &TaskBatch) -> Result<()> {
        self.append(BATCHES_FILE, std::slice::from_ref(batch))
    }

    pub fn append_exclusion(&self, exclusion: &Exclusion) -> Result<()> {
        self.append(EXCLUSIONS_FILE, std::slice::from_ref(exclusion))
    }

    pub fn write_ledger(&self, ledger: &AnnotatorLedger) -> Result<()> {
        let dir = self.path(LEDGER_DIR);
        fs::create_dir_all(&dir).map_err(|e| ServiceError::io(&dir, e))?;
        let json = serde_json::to_string_pretty(ledger).expect("ledger serializes");
        self.write_atomic(
            &format!("{LEDGER_DIR}/{}.json", ledger_file_stem(&ledger.annotator_id)),
            format!("{json}\n").as_bytes(),
        )
    }

    fn append<T: Serialize>(&self, name: &str, items: &[T]) -> Result<()> {
        if items.is_empty() {
            return Ok(());
        }
        let path = self.path(name);
        let mut file =
            OpenOptions::new().create(true).append(true).open(&path).map_err(|e| ServiceError::io(&path, e))?;
        // one write per call keeps a crash from interleaving partial lines
        file.write_all(jsonl(items).as_bytes()).and_then(|_| file.sync_data()).map_err(|e| ServiceError::io(&path, e))
    }

    fn write_atomic(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(name);
        let tmp = path.with_extension("tmp");
        let mut file = File::create(&tmp).map_err(|e| ServiceError::io(&tmp, e))?;
        file.write_all(bytes).and_then(|_| file.sync_data()).map_err(|e| ServiceError::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| ServiceError::io(&path, e))
    }

    /// Missing files read as empty. A final line without its newline that
    /// fails to parse is a torn append and is dropped.
    fn read_jsonl<T: DeserializeOwned>(&self, name: &str) -> Result<Vec<T>> {
        let path = self.path(name);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(ServiceError::io(&path, e)),
        };
        let complete = text.ends_with('\n') || text.is_empty();
        let lines: Vec<&str> = text.lines().collect();
        let mut out = Vec::with_capacity(lines.len());
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(line) {
                Ok(v) => out.push(v),
                Err(_) if !complete && i + 1 == lines.len() => break,
                Err(e) => return Err(ServiceError::Corrupt { path, line: i + 1, message: e.to_string() }),
            }
        }
        Ok(out)
    }
}

/// Campaign directories below `store_dir`, in name order.
pub fn campaign_dirs(store_dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = match fs::read_dir(store_dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(ServiceError::io(store_dir, e)),
    };
    let mut dirs = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| ServiceError::io(store_dir, e))?;
        let path = entry.path();
        if path.join(CONFIG_FILE).is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

fn jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("store records serialize"));
        out.push('\n');
    }
    out
}

// annotator ids are free-form strings; keep file names tame
fn ledger_file_stem(annotator_id: &str) -> String {
    annotator_id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> CampaignConfig {
        serde_json::from_str(
            r#"{"campaign_id": "c1", "k": 2, "class_names": ["a", "b"],
                "a_cons": 1, "a_full": 2, "use_proposals": false}"#,
        )
        .unwrap()
    }

    #[test]
    fn create_writes_three_files_and_rejects_duplicates() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = CampaignDir::create(tmp.path(), &config(), &[]).unwrap();
        let mut names: Vec<_> =
            fs::read_dir(dir.root()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
        names.sort();
        assert_eq!(names, [ANNOTATIONS_FILE, CONFIG_FILE, MANIFEST_FILE]);
        assert!(matches!(CampaignDir::create(tmp.path(), &config(), &[]), Err(ServiceError::DuplicateCampaign(_))));
        assert_eq!(campaign_dirs(tmp.path()).unwrap().len(), 1);
    }

    #[test]
    fn torn_tail_is_dropped_but_corruption_is_not() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = CampaignDir::create(tmp.path(), &config(), &[]).unwrap();
        let rec = AnnotationRecord {
            image_id: "a".into(),
            annotator_id: "x".into(),
            chosen_class: 1,
            proposal_shown: None,
            timestamp_ms: 5,
            batch_id: "b".into(),
        };
        dir.append_records(&[rec.clone(), rec.clone()]).unwrap();
        let path = dir.path(ANNOTATIONS_FILE);
        let mut text = fs::read_to_string(&path).unwrap();
        text.push_str("{\"image_id\": \"a\", \"annot");
        fs::write(&path, &text).unwrap();
        let (_, snap) = CampaignDir::open(dir.root()).unwrap();
        assert_eq!(snap.records, vec![rec.clone(), rec]);

        fs::write(&path, "not json\n").unwrap();
        assert!(matches!(CampaignDir::open(dir.root()), Err(ServiceError::Corrupt { line: 1, .. })));
    }

    #[test]
    fn ledger_file_names_are_sanitized() {
        assert_eq!(ledger_file_stem("a/b c"), "a_b_c");
    }
}
