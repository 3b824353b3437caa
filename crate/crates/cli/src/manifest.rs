//! Per-run manifest: resolved configuration, paths, seed, timestamps and
//! SHA-256 checksums of every artifact, as `key = value` text.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use denseed::kv::KvMap;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const FORMAT: &str = "denseed-run-1";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: KvMap,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub summary: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// Paths relative to the manifest's directory.
    pub checksums: BTreeMap<String, String>,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

impl RunManifest {
    pub fn new(subcommand: &str) -> Self {
        RunManifest { subcommand: subcommand.to_string(), started_unix: unix_now(), ..Default::default() }
    }

    /// Records the checksum of `file`, keyed by its path relative to `base`.
    pub fn add_artifact(&mut self, base: &Path, file: &Path) -> Result<(), CliError> {
        let rel = file.strip_prefix(base).unwrap_or(file);
        let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        self.checksums.insert(key, sha256_file(file)?);
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut kv = KvMap::new();
        kv.insert("format", FORMAT);
        kv.insert("subcommand", &self.subcommand);
        if let Some(seed) = self.seed {
            kv.insert("seed", seed);
        }
        kv.insert("started_unix", self.started_unix);
        kv.insert("finished_unix", self.finished_unix);
        for (prefix, map) in [("input", &self.inputs), ("output", &self.outputs), ("summary", &self.summary)] {
            for (k, v) in map {
                kv.insert(format!("{prefix}.{k}"), v);
            }
        }
        for (k, v) in &self.config.0 {
            kv.insert(format!("config.{k}"), v);
        }
        for (k, v) in &self.checksums {
            kv.insert(format!("sha256.{k}"), v);
        }
        kv.render()
    }

    /// Stamps the finish time and writes the manifest.
    pub fn write(&mut self, path: &Path) -> Result<PathBuf, CliError> {
        self.finished_unix = unix_now();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        fs::write(path, self.render()).map_err(|e| CliError::io(path, e))?;
        Ok(path.to_path_buf())
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let kv = KvMap::parse(text).map_err(|e| CliError::Config(format!("run manifest: {e}")))?;
        if kv.get("format") != Some(FORMAT) {
            return Err(CliError::Config("not a run manifest".into()));
        }
        let num = |key: &str| kv.get(key).and_then(|v| v.parse::<u64>().ok()).unwrap_or(0);
        let mut m = RunManifest {
            subcommand: kv.get("subcommand").unwrap_or_default().to_string(),
            seed: kv.get("seed").and_then(|v| v.parse().ok()),
            started_unix: num("started_unix"),
            finished_unix: num("finished_unix"),
            ..Default::default()
        };
        for (k, v) in &kv.0 {
            let Some((prefix, rest)) = k.split_once('.') else { continue };
            match prefix {
                "input" => {
                    m.inputs.insert(rest.into(), v.clone());
                },
                "output" => {
                    m.outputs.insert(rest.into(), v.clone());
                },
                "summary" => {
                    m.summary.insert(rest.into(), v.clone());
                },
                "config" => m.config.insert(rest, v),
                "sha256" => {
                    m.checksums.insert(rest.into(), v.clone());
                },
                _ => {}
            }
        }
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        Self::parse(&fs::read_to_string(path).map_err(|e| CliError::io(path, e))?)
    }

    /// Recomputes every checksum relative to `base`; returns the
    /// artifacts that are missing or differ.
    pub fn verify(&self, base: &Path) -> Vec<String> {
        self.checksums
            .iter()
            .filter(|(rel, want)| sha256_file(&base.join(rel)).map(|got| &got != *want).unwrap_or(true))
            .map(|(rel, _)| rel.clone())
            .collect()
    }
}
