//! Synthesized-instance pool: `<root>/<class>/seed<k>_<i>.png`.
//!
//! Any generator can fill the pool. [`make_mock_pool`] writes a
//! deterministic stand-in so the rest of the pipeline runs without a GPU.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageFormat, Rgb, RgbImage};
use log::warn;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_for};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PoolEntry {
    pub class_name: String,
    pub seed: u32,
    pub sample_index: u32,
    pub path: PathBuf,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PoolIndex {
    pub root: PathBuf,
    /// Entries per class, sorted by (seed, sample_index).
    pub classes: BTreeMap<String, Vec<PoolEntry>>,
    pub warnings: Vec<String>,
}

impl PoolIndex {
    pub fn len(&self) -> usize {
        self.classes.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn counts(&self) -> BTreeMap<String, usize> {
        self.classes.iter().map(|(k, v)| (k.clone(), v.len())).collect()
    }

    pub fn entries(&self, class_name: &str) -> &[PoolEntry] {
        self.classes.get(class_name).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Entry path relative to the pool root, with `/` separators.
    pub fn relative_path(&self, entry: &PoolEntry) -> String {
        let rel = entry.path.strip_prefix(&self.root).unwrap_or(&entry.path);
        rel.components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/")
    }
}

pub fn pool_file_name(seed: u32, sample_index: u32) -> String {
    format!("seed{seed}_{sample_index}.png")
}

/// Parses `seed<k>_<i>.png`.
pub fn parse_pool_file_name(name: &str) -> Option<(u32, u32)> {
    let rest = name.strip_prefix("seed")?.strip_suffix(".png")?;
    let (k, i) = rest.split_once('_')?;
    let all_digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
    if !all_digits(k) || !all_digits(i) {
        return None;
    }
    Some((k.parse().ok()?, i.parse().ok()?))
}

/// Indexes every decodable pool image. Unrecognized or undecodable files
/// become warnings; an index without entries is an error.
pub fn ingest_pool(root: &Path) -> Result<PoolIndex> {
    if !root.is_dir() {
        return Err(Error::EmptyPool(root.to_path_buf()));
    }
    let mut candidates: Vec<(String, u32, u32, PathBuf)> = Vec::new();
    let mut warnings = Vec::new();
    let dirs = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    for dir in dirs {
        let dir = dir.map_err(|e| Error::io(root, e))?.path();
        if !dir.is_dir() {
            continue;
        }
        let Some(class_name) = dir.file_name().and_then(|n| n.to_str()).map(str::to_string) else {
            warnings.push(format!("skipping non-UTF-8 directory '{}'", dir.display()));
            continue;
        };
        for file in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = file.map_err(|e| Error::io(&dir, e))?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            match parse_pool_file_name(name) {
                Some((seed, idx)) if path.is_file() => candidates.push((class_name.clone(), seed, idx, path)),
                _ => warnings.push(format!("skipping unrecognized pool file '{}'", path.display())),
            }
        }
    }
    candidates.sort();

    let decoded: Vec<std::result::Result<PoolEntry, String>> = candidates
        .into_par_iter()
        .map(|(class_name, seed, sample_index, path)| {
            match image::open(&path) {
                Ok(img) => Ok(PoolEntry {
                    class_name,
                    seed,
                    sample_index,
                    width: img.width(),
                    height: img.height(),
                    path,
                }),
                Err(e) => Err(format!("skipping undecodable pool file '{}': {e}", path.display())),
            }
        })
        .collect();

    let mut classes: BTreeMap<String, Vec<PoolEntry>> = BTreeMap::new();
    for d in decoded {
        match d {
            Ok(entry) if entry.width > 0 && entry.height > 0 => {
                classes.entry(entry.class_name.clone()).or_default().push(entry)
            }
            Ok(entry) => warnings.push(format!("skipping empty image '{}'", entry.path.display())),
            Err(w) => warnings.push(w),
        }
    }
    warnings.sort();
    for w in &warnings {
        warn!("{w}");
    }
    let index = PoolIndex {
        root: root.to_path_buf(),
        classes,
        warnings,
    };
    if index.is_empty() {
        return Err(Error::EmptyPool(root.to_path_buf()));
    }
    Ok(index)
}

/// Samples per seed in the mock layout; `per_class` of 200 fills seeds 0..19.
pub const MOCK_SAMPLES_PER_SEED: u32 = 10;
pub const MOCK_SIZE_RANGE: (u32, u32) = (12, 64);

fn class_color(class_name: &str) -> Rgb<u8> {
    let hue = (derive_seed(0, class_name) % 360) as f64;
    // HSV with s = 0.7, v = 0.9
    let (s, v) = (0.7, 0.9);
    let c = v * s;
    let hp = hue / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let to_u8 = |f: f64| ((f + m) * 255.0).round() as u8;
    Rgb([to_u8(r), to_u8(g), to_u8(b)])
}

/// Writes `per_class` flat-colored rectangles per class (darker one-pixel
/// border, class-hashed hue, seeded size) in the ingest layout.
pub fn make_mock_pool(classes: &[String], per_class: usize, seed: u64, out: &Path) -> Result<PoolIndex> {
    if per_class == 0 {
        return Err(Error::InvalidConfig("mock pool requires per_class >= 1".into()));
    }
    if classes.is_empty() {
        return Err(Error::InvalidConfig("mock pool requires at least one class".into()));
    }
    for class in classes {
        let dir = out.join(class);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let fill = class_color(class);
        let border = Rgb(fill.0.map(|c| c / 2));
        let mut rng = rng_for(seed, class);
        for j in 0..per_class as u32 {
            let w = rng.gen_range(MOCK_SIZE_RANGE.0..=MOCK_SIZE_RANGE.1);
            let h = rng.gen_range(MOCK_SIZE_RANGE.0..=MOCK_SIZE_RANGE.1);
            let img = RgbImage::from_fn(w, h, |x, y| {
                if x == 0 || y == 0 || x == w - 1 || y == h - 1 {
                    border
                } else {
                    fill
                }
            });
            let path = dir.join(pool_file_name(j / MOCK_SAMPLES_PER_SEED, j % MOCK_SAMPLES_PER_SEED));
            img.save_with_format(&path, ImageFormat::Png)
                .map_err(|e| Error::image(&path, e))?;
        }
    }
    ingest_pool(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_name_grammar() {
        assert_eq!(parse_pool_file_name("seed3_17.png"), Some((3, 17)));
        assert_eq!(parse_pool_file_name(&pool_file_name(19, 9)), Some((19, 9)));
        assert_eq!(parse_pool_file_name("seed3_17.jpg"), None);
        assert_eq!(parse_pool_file_name("seed_1.png"), None);
        assert_eq!(parse_pool_file_name("seedx_1.png"), None);
        assert_eq!(parse_pool_file_name("seed1_-1.png"), None);
    }

    #[test]
    fn colors_differ_between_classes() {
        assert_ne!(class_color("plane"), class_color("helipad"));
        assert_eq!(class_color("plane"), class_color("plane"));
    }

    #[test]
    fn mock_pool_requires_positive_count() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            make_mock_pool(&["plane".into()], 0, 1, dir.path()),
            Err(Error::InvalidConfig(_))
        ));
    }
}
