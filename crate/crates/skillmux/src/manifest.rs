//! Provenance record written beside every artifact.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::io::{write_json, IoError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderInfo {
    pub role: String,
    pub identity: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub timestamp: String,
    pub command_line: Vec<String>,
    pub seeds: BTreeMap<String, u64>,
    pub providers: Vec<ProviderInfo>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub config: Config,
    /// Command-specific summaries (filter counts, judge flags, ...).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub notes: BTreeMap<String, serde_json::Value>,
}

pub fn sha256_file(path: &Path) -> Result<String, IoError> {
    let bytes = fs::read(path).map_err(|source| IoError::Fs {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn digest(path: &Path) -> Result<FileDigest, IoError> {
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: sha256_file(path)?,
    })
}

impl RunManifest {
    pub fn new(config: &Config, command_line: Vec<String>) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            command_line,
            seeds: BTreeMap::from([("seed".to_string(), config.seed)]),
            providers: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            config: config.clone(),
            notes: BTreeMap::new(),
        }
    }

    pub fn provider(&mut self, role: &str, identity: String, endpoint: Option<String>) {
        self.providers.push(ProviderInfo {
            role: role.to_string(),
            identity,
            endpoint,
        });
    }

    pub fn input(&mut self, path: &Path) -> Result<(), IoError> {
        if path.is_dir() {
            let mut files = Vec::new();
            collect_files(path, &mut files)?;
            files.sort();
            for f in files {
                self.inputs.push(digest(&f)?);
            }
        } else {
            self.inputs.push(digest(path)?);
        }
        Ok(())
    }

    pub fn note(&mut self, key: &str, value: impl serde::Serialize) {
        self.notes
            .insert(key.to_string(), serde_json::to_value(value).expect("note serialises"));
    }

    pub fn output(&mut self, path: &Path) -> Result<(), IoError> {
        self.outputs.push(digest(path)?);
        Ok(())
    }

    /// `<output>.manifest.json` beside the first output.
    pub fn path_for(output: &Path) -> PathBuf {
        let mut name = output.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        output.with_file_name(name)
    }

    pub fn write_beside(&self, output: &Path) -> Result<PathBuf, IoError> {
        let path = Self::path_for(output);
        write_json(&path, self)?;
        Ok(path)
    }
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), IoError> {
    let err = |source| IoError::Fs {
        path: dir.to_path_buf(),
        source,
    };
    for entry in fs::read_dir(dir).map_err(err)? {
        let p = entry.map_err(err)?.path();
        if p.is_dir() {
            collect_files(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}
