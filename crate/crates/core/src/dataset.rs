//! Paired clean/rainy datasets built from a directory of clear images.
//!
//! `build_dataset` writes `rainy/<stem>.png` and `manifest.json` under the
//! output directory. Rainy paths in the manifest are relative to the
//! manifest file; clean and depth paths are absolute.
//!
//! Manifest schema (version 1):
//!
//! ```json
//! {
//!   "version": 1,
//!   "seed": 7,
//!   "rcflane_config": { "rain": {...}, "beta": 1.0, "mask": {...}, "fog": {...} },
//!   "entries": [
//!     { "clean_path": "/abs/src/0001.png", "rainy_path": "rainy/0001.png",
//!       "gt_depth_path": null, "split": "train" }
//!   ]
//! }
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{load_image, save_image, ImageBuffer};
use crate::rcflane::{synthesize, RcflaneConfig};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RAINY_DIR: &str = "rainy";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!(
                "unknown split {other:?} (train|test)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub clean_path: PathBuf,
    pub rainy_path: PathBuf,
    pub gt_depth_path: Option<PathBuf>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub rcflane_config: RcflaneConfig,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Self = serde_json::from_str(&text).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::Manifest {
                path: path.to_path_buf(),
                reason: format!(
                    "unsupported version {} (expected {MANIFEST_VERSION})",
                    manifest.version
                ),
            });
        }
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn count(&self, split: Split) -> usize {
        self.entries.iter().filter(|e| e.split == split).count()
    }
}

/// 64-bit FNV-1a. Stable across platforms and releases, unlike `std`'s hasher.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Rain seed for one source image: the dataset seed xor the file-name hash.
pub fn image_seed(seed: u64, file_name: &str) -> u64 {
    seed ^ stable_hash(file_name.as_bytes())
}

/// Number of training images for `n` images at `ratio`.
pub fn train_count(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64).round() as usize).min(n)
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref(),
        Some("png" | "ppm")
    )
}

/// Sorted PNG/PPM files directly under `dir`.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && is_image(&path) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Synthesizes a rainy counterpart for every image in `src_dir`.
pub fn build_dataset(
    src_dir: &Path,
    out_dir: &Path,
    cfg: &RcflaneConfig,
    split_ratio: f64,
    seed: u64,
) -> Result<DatasetManifest> {
    build_dataset_with_depth(src_dir, out_dir, cfg, split_ratio, seed, None)
}

/// Like [`build_dataset`], recording `<gt_depth_dir>/<stem>.png` for every
/// image that has one.
pub fn build_dataset_with_depth(
    src_dir: &Path,
    out_dir: &Path,
    cfg: &RcflaneConfig,
    split_ratio: f64,
    seed: u64,
    gt_depth_dir: Option<&Path>,
) -> Result<DatasetManifest> {
    if !(split_ratio > 0.0 && split_ratio < 1.0) {
        return Err(Error::Config(format!(
            "split ratio {split_ratio} not in (0,1)"
        )));
    }
    cfg.validate()?;
    let src_dir = src_dir.canonicalize().map_err(|e| Error::io(src_dir, e))?;
    let sources = list_images(&src_dir)?;
    if sources.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no PNG/PPM images in {}",
            src_dir.display()
        )));
    }
    let mut stems: Vec<String> = sources.iter().map(|p| stem(p)).collect();
    stems.sort();
    if let Some(w) = stems.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Config(format!(
            "two source images share the stem {:?}",
            w[0]
        )));
    }

    let rainy_dir = out_dir.join(RAINY_DIR);
    fs::create_dir_all(&rainy_dir).map_err(|e| Error::io(&rainy_dir, e))?;

    let rainy_rel: Vec<PathBuf> = sources
        .iter()
        .map(|p| Path::new(RAINY_DIR).join(format!("{}.png", stem(p))))
        .collect();
    sources
        .par_iter()
        .zip(&rainy_rel)
        .enumerate()
        .try_for_each(|(index, (src, rel))| -> Result<()> {
            let clean = load_image(src).map_err(|e| Error::Dataset {
                index,
                reason: e.to_string(),
            })?;
            let mut image_cfg = cfg.clone();
            image_cfg.rain.seed = image_seed(seed, &file_name(src));
            let synth = synthesize(&clean, &image_cfg)?;
            save_image(&synth.rainy, out_dir.join(rel))
        })?;

    let n_train = train_count(sources.len(), split_ratio);
    let mut order: Vec<usize> = (0..sources.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut split = vec![Split::Test; sources.len()];
    for &i in &order[..n_train] {
        split[i] = Split::Train;
    }

    let entries = sources
        .iter()
        .zip(rainy_rel)
        .zip(split)
        .map(|((src, rainy_path), split)| {
            let gt_depth_path = gt_depth_dir
                .map(|d| d.join(format!("{}.png", stem(src))))
                .filter(|p| p.is_file())
                .map(|p| p.canonicalize().unwrap_or(p));
            ManifestEntry {
                clean_path: src.clone(),
                rainy_path,
                gt_depth_path,
                split,
            }
        })
        .collect();
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        seed,
        rcflane_config: cfg.clone(),
        entries,
    };
    manifest.save(out_dir.join(MANIFEST_FILE))?;
    info!(
        "dataset: {} images ({} train / {} test) in {}",
        manifest.entries.len(),
        manifest.count(Split::Train),
        manifest.count(Split::Test),
        out_dir.display()
    );
    Ok(manifest)
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Manifest entries of `split` with paths resolved against the manifest's directory.
pub fn resolved_entries(
    manifest_path: &Path,
    split: Option<Split>,
) -> Result<Vec<(usize, ManifestEntry)>> {
    let manifest = DatasetManifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    Ok(manifest
        .entries
        .into_iter()
        .enumerate()
        .filter(|(_, e)| split.is_none_or(|s| e.split == s))
        .map(|(i, mut e)| {
            e.clean_path = resolve(base, &e.clean_path);
            e.rainy_path = resolve(base, &e.rainy_path);
            e.gt_depth_path = e.gt_depth_path.map(|p| resolve(base, &p));
            (i, e)
        })
        .collect())
}

/// Decoded `(clean, rainy)` pairs of one split, in manifest order.
pub fn load_pairs(
    manifest_path: impl AsRef<Path>,
    split: Split,
) -> Result<Vec<(ImageBuffer, ImageBuffer)>> {
    resolved_entries(manifest_path.as_ref(), Some(split))?
        .into_iter()
        .map(|(index, e)| {
            let wrap = |err: Error| Error::Dataset {
                index,
                reason: err.to_string(),
            };
            let clean = load_image(&e.clean_path).map_err(wrap)?;
            let rainy = load_image(&e.rainy_path).map_err(wrap)?;
            if !clean.same_shape(&rainy) {
                return Err(Error::Dataset {
                    index,
                    reason: format!(
                        "clean {}x{}x{} vs rainy {}x{}x{}",
                        clean.width(),
                        clean.height(),
                        clean.channels(),
                        rainy.width(),
                        rainy.height(),
                        rainy.channels()
                    ),
                });
            }
            Ok((clean, rainy))
        })
        .collect()
}
