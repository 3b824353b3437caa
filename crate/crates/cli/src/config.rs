//! Layered `key = value` configuration: flag > config file > defaults.

use std::path::Path;

use denseed::kv::KvMap;

use crate::manifest::RunManifest;
use crate::CliError;

/// Reads a config file. A run manifest is accepted too: its `config.*`
/// entries are the configuration.
pub fn read_config_file(path: &Path) -> Result<KvMap, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    if let Ok(manifest) = RunManifest::parse(&text) {
        return Ok(manifest.config);
    }
    KvMap::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// File values overlaid by flag values; every key must be in `allowed`.
pub fn layer(file: Option<&KvMap>, flags: &KvMap, allowed: &[&str]) -> Result<KvMap, CliError> {
    let mut kv = KvMap::new();
    if let Some(file) = file {
        kv.merge(file);
    }
    kv.merge(flags);
    if let Some(bad) = kv.0.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(CliError::Config(format!("unknown configuration key {bad:?}")));
    }
    Ok(kv)
}

pub const SEED_ENV: &str = "DENSEED_SEED";

/// `seed` from the layered config, then `DENSEED_SEED`, then 0.
pub fn resolve_seed(kv: &KvMap) -> Result<u64, CliError> {
    if let Some(v) = kv.get("seed") {
        return v.parse().map_err(|_| CliError::Config(format!("seed must be an unsigned integer, got {v:?}")));
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| CliError::Config(format!("{SEED_ENV} must be an unsigned integer, got {v:?}"))),
        Err(_) => Ok(0),
    }
}

pub fn get_or<T: std::str::FromStr>(kv: &KvMap, key: &str, default: T) -> Result<T, CliError> {
    kv.parsed_or(key, default).map_err(|e| CliError::Config(e.to_string()))
}

/// `a,b` into a pair.
pub fn pair<T: std::str::FromStr + Copy>(kv: &KvMap, key: &str, default: (T, T)) -> Result<(T, T), CliError> {
    let Some(v) = kv.get(key) else { return Ok(default) };
    let items = denseed::kv::parse_list::<T>(key, v).map_err(|e| CliError::Config(e.to_string()))?;
    match items[..] {
        [a, b] => Ok((a, b)),
        [a] => Ok((a, a)),
        _ => Err(CliError::Config(format!("{key} needs one or two values, got {v:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let file = KvMap::parse("epochs = 10\nlearning_rate = 0.1\n").unwrap();
        let mut flags = KvMap::new();
        flags.insert("epochs", 3);
        let kv = layer(Some(&file), &flags, &["epochs", "learning_rate"]).unwrap();
        assert_eq!(kv.get("epochs"), Some("3"));
        assert_eq!(kv.get("learning_rate"), Some("0.1"));
        assert!(layer(Some(&file), &flags, &["epochs"]).is_err());
    }

    #[test]
    fn pairs() {
        let kv = KvMap::parse("a = 1,2\nb = 5\nc = 1,2,3").unwrap();
        assert_eq!(pair(&kv, "a", (0, 0)).unwrap(), (1, 2));
        assert_eq!(pair(&kv, "b", (0, 0)).unwrap(), (5, 5));
        assert!(pair::<u32>(&kv, "c", (0, 0)).is_err());
        assert_eq!(pair(&kv, "d", (7, 8)).unwrap(), (7, 8));
    }
}
