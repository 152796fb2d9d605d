use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

/// Provenance record of one invocation, written to `<out>/manifest.json`
/// before any work starts and completed at the end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub tool_version: String,
    pub defaults_version: u32,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub status: String,
    pub started_at: String,
    pub finished_at: Option<String>,
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn start(
        out: &Path,
        subcommand: &str,
        defaults_version: u32,
        config: serde_json::Value,
        seed: Option<u64>,
        inputs: &[PathBuf],
    ) -> io::Result<Self> {
        fs::create_dir_all(out)?;
        let inputs = inputs
            .iter()
            .map(|p| Ok(FileHash { path: p.display().to_string(), sha256: sha256_file(p)? }))
            .collect::<io::Result<Vec<_>>>()?;
        let m = RunManifest {
            subcommand: subcommand.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            defaults_version,
            config,
            seed,
            inputs,
            outputs: Vec::new(),
            status: "running".into(),
            started_at: now(),
            finished_at: None,
        };
        m.write(out)?;
        Ok(m)
    }

    fn write(&self, out: &Path) -> io::Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(io::Error::other)?;
        fs::write(out.join(MANIFEST_FILE), text + "\n")
    }

    /// Hashes every file under `out` except the manifest itself, in sorted
    /// relative-path order.
    pub fn finish(mut self, out: &Path, status: &str) -> io::Result<Self> {
        let mut files = Vec::new();
        collect_files(out, out, &mut files)?;
        files.sort();
        self.outputs = files
            .into_iter()
            .filter(|rel| rel != MANIFEST_FILE)
            .map(|rel| Ok(FileHash { sha256: sha256_file(&out.join(&rel))?, path: rel }))
            .collect::<io::Result<Vec<_>>>()?;
        self.status = status.to_string();
        self.finished_at = Some(now());
        self.write(out)?;
        Ok(self)
    }
}

fn collect_files(root: &Path, dir: &Path, acc: &mut Vec<String>) -> io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, acc)?;
        } else {
            let rel = path.strip_prefix(root).expect("under root");
            acc.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}
