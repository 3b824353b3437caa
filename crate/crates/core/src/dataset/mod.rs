//! Field-of-view ingestion, normalization, quadrant patching and FOV-level
//! train/test splitting.
//!
//! On-disk layout, one directory per field of view:
//!
//! ```text
//! <root>/fov_<id>/frame_<k>.tif   one or more pages each, ordered by k
//! <root>/fov_<id>/frames.tif      alternatively, a single multi-page stack
//! <root>/fov_<id>/target.tif      the super-resolved target
//! <root>/dataset.manifest         optional `key = value` split assignment
//! ```

mod normalize;
mod patches;
mod tiffio;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use normalize::{normalize, Normalization};
pub use patches::{reassemble_patches, slice_patches, Patch, PatchSet, Provenance, Quadrant, Side};
pub use tiffio::{read_tiff_stack, write_tiff_stack, write_tiff_u8};

use crate::kv::{KvError, KvMap};
use crate::scalar::Scalar;

/// Diffraction-limited frames recorded per field of view.
pub const FRAMES_PER_FOV: usize = 50;
pub const MANIFEST_FILE: &str = "dataset.manifest";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DatasetError {
    #[error("i/o error: {0}")]
    Io(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("malformed FOV {id}: found {found} frames, expected {expected}")]
    MalformedFov { id: String, found: usize, expected: usize },
    #[error("FOV {0} has no target image")]
    MissingTarget(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("patch error: {0}")]
    Patches(String),
    #[error("unknown FOV id {0:?}")]
    UnknownFov(String),
    #[error("split leaves no test FOV for evaluation")]
    EmptyTest,
    #[error("split leaves no training FOV")]
    EmptyTrain,
    #[error("manifest error: {0}")]
    Manifest(String),
}

impl From<KvError> for DatasetError {
    fn from(e: KvError) -> Self {
        DatasetError::Manifest(e.to_string())
    }
}

/// One field of view: diffraction-limited frames plus a single target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FovRecord {
    pub id: String,
    pub frames: Vec<Array2<u16>>,
    pub target: Array2<u16>,
}

impl FovRecord {
    pub fn dim(&self) -> (usize, usize) {
        self.target.dim()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOptions {
    /// Required frame count; `None` accepts any positive count.
    pub expected_frames: Option<usize>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions { expected_frames: Some(FRAMES_PER_FOV) }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> DatasetError {
    DatasetError::Io(format!("{}: {e}", path.display()))
}

fn fov_id(dir: &Path) -> String {
    let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    name.strip_prefix("fov_").map(str::to_string).unwrap_or(name)
}

fn frame_index(name: &str) -> Option<usize> {
    let stem = name.strip_prefix("frame_")?;
    let stem = stem.strip_suffix(".tif").or_else(|| stem.strip_suffix(".tiff"))?;
    stem.parse().ok()
}

fn find_existing(dir: &Path, stem: &str) -> Option<PathBuf> {
    ["tif", "tiff"].iter().map(|ext| dir.join(format!("{stem}.{ext}"))).find(|p| p.is_file())
}

pub fn load_fov(dir: &Path, options: &LoadOptions) -> Result<FovRecord, DatasetError> {
    let id = fov_id(dir);
    let target_path = find_existing(dir, "target").ok_or_else(|| DatasetError::MissingTarget(id.clone()))?;
    let mut target_pages = read_tiff_stack(&target_path)?;
    if target_pages.len() != 1 {
        return Err(DatasetError::Format(format!("{}: target must be a single page", target_path.display())));
    }
    let target = target_pages.remove(0);

    let mut numbered: Vec<(usize, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let entry = entry.map_err(|e| io_err(dir, e))?;
        if let Some(k) = frame_index(&entry.file_name().to_string_lossy()) {
            numbered.push((k, entry.path()));
        }
    }
    numbered.sort();
    let mut frames = Vec::new();
    if numbered.is_empty() {
        if let Some(stack) = find_existing(dir, "frames") {
            frames = read_tiff_stack(&stack)?;
        }
    } else {
        for (_, path) in &numbered {
            frames.extend(read_tiff_stack(path)?);
        }
    }
    let expected = options.expected_frames.unwrap_or(frames.len().max(1));
    if frames.len() != expected || frames.is_empty() {
        return Err(DatasetError::MalformedFov { id, found: frames.len(), expected });
    }
    if let Some(f) = frames.iter().find(|f| f.dim() != target.dim()) {
        return Err(DatasetError::Dimension(format!(
            "FOV {id}: frame {:?} does not match target {:?}",
            f.dim(),
            target.dim()
        )));
    }
    Ok(FovRecord { id, frames, target })
}

/// Writes a record in the layout [`load_fov`] reads; returns the directory.
pub fn write_fov(root: &Path, record: &FovRecord) -> Result<PathBuf, DatasetError> {
    let dir = root.join(format!("fov_{}", record.id));
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    for (k, frame) in record.frames.iter().enumerate() {
        write_tiff_stack(&dir.join(format!("frame_{k:03}.tif")), std::slice::from_ref(frame))?;
    }
    write_tiff_stack(&dir.join("target.tif"), std::slice::from_ref(&record.target))?;
    Ok(dir)
}

/// Optional split assignment stored next to the FOV directories.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub fovs: Vec<String>,
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub frames_per_fov: Option<usize>,
}

fn id_list(kv: &KvMap, key: &str) -> Vec<String> {
    kv.get(key)
        .map(|v| v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
        .unwrap_or_default()
}

impl DatasetManifest {
    pub fn parse(text: &str) -> Result<Self, DatasetError> {
        let kv = KvMap::parse(text)?;
        Ok(DatasetManifest {
            fovs: id_list(&kv, "fovs"),
            train: id_list(&kv, "train"),
            test: id_list(&kv, "test"),
            frames_per_fov: kv.get_parsed("frames_per_fov")?,
        })
    }

    pub fn render(&self) -> String {
        let mut kv = KvMap::new();
        kv.insert("fovs", self.fovs.join(","));
        kv.insert("train", self.train.join(","));
        kv.insert("test", self.test.join(","));
        if let Some(n) = self.frames_per_fov {
            kv.insert("frames_per_fov", n);
        }
        kv.render()
    }

    pub fn read(root: &Path) -> Result<Option<Self>, DatasetError> {
        let path = root.join(MANIFEST_FILE);
        if !path.is_file() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        Self::parse(&text).map(Some)
    }
}

/// Loads every `fov_*` directory under `root`, sorted by id.
pub fn load_dataset(root: &Path, options: &LoadOptions) -> Result<Vec<FovRecord>, DatasetError> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| io_err(root, e))?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("fov_")))
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(DatasetError::Io(format!("{}: no fov_* directories", root.display())));
    }
    dirs.iter().map(|d| load_fov(d, options)).collect()
}

/// Disjoint FOV id sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetSplit {
    pub fn frame_counts(&self, records: &[FovRecord]) -> (usize, usize) {
        let count = |ids: &[String]| {
            records.iter().filter(|r| ids.contains(&r.id)).map(|r| r.frames.len()).sum::<usize>()
        };
        (count(&self.train), count(&self.test))
    }
}

/// Every FOV not in `train_ids` goes to the test side.
pub fn split_by_fov(records: &[FovRecord], train_ids: &[String], require_test: bool) -> Result<DatasetSplit, DatasetError> {
    let known: BTreeSet<&str> = records.iter().map(|r| r.id.as_str()).collect();
    if let Some(bad) = train_ids.iter().find(|id| !known.contains(id.as_str())) {
        return Err(DatasetError::UnknownFov(bad.clone()));
    }
    let wanted: BTreeSet<&str> = train_ids.iter().map(String::as_str).collect();
    let (train, test): (Vec<String>, Vec<String>) =
        records.iter().map(|r| r.id.clone()).partition(|id| wanted.contains(id.as_str()));
    if train.is_empty() {
        return Err(DatasetError::EmptyTrain);
    }
    if require_test && test.is_empty() {
        return Err(DatasetError::EmptyTest);
    }
    Ok(DatasetSplit { train, test })
}

/// A full-size held-out frame with its target.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFrame<T> {
    pub fov: String,
    pub frame: usize,
    pub input: Array2<T>,
    pub target: Array2<T>,
}

impl<T> TestFrame<T> {
    pub fn id(&self) -> String {
        format!("{}/{}", self.fov, self.frame)
    }
}

/// Normalized training patches and full-frame test pairs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PreparedData<T> {
    pub train: Vec<Patch<T>>,
    pub test: Vec<TestFrame<T>>,
}

/// Normalizes every image independently, slices training frames into
/// quadrants and keeps test frames whole. Every frame pairs with its FOV's
/// single target.
pub fn prepare<T: Scalar>(
    records: &[FovRecord],
    split: &DatasetSplit,
    norm: Normalization,
) -> Result<PreparedData<T>, DatasetError> {
    let mut data = PreparedData { train: Vec::new(), test: Vec::new() };
    for record in records {
        let in_train = split.train.contains(&record.id);
        let in_test = split.test.contains(&record.id);
        if !in_train && !in_test {
            continue;
        }
        let target: Array2<T> = normalize(&record.target, norm);
        for (k, frame) in record.frames.iter().enumerate() {
            let input: Array2<T> = normalize(frame, norm);
            if in_train {
                data.train.extend(slice_patches(&input, &target, &record.id, k)?.patches);
            } else {
                data.test.push(TestFrame { fov: record.id.clone(), frame: k, input, target: target.clone() });
            }
        }
    }
    Ok(data)
}

/// Seeded shuffle of `0..n` cut into batches of `batch_size`; the last
/// batch may be short. Depends only on `(n, batch_size, seed, epoch)`.
pub fn batch_order(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mixed = seed ^ (epoch as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(mixed));
    idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}
