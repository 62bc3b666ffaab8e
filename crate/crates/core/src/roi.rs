//! Ground-truth crop extraction and finetune-set sampling.
//!
//! Every object is cropped with a per-side margin and paired with the prompt
//! `birdview of <class>`. The finetune set then takes a seeded, size-aware,
//! per-class-capped sample of those crops.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::ImageFormat;
use log::{info, warn};
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::HBox;
use crate::model::{DatasetIndex, ImageRecord};
use crate::seed::rng_for;
use crate::tiler::ImageFailure;

pub const PROMPT_PREFIX: &str = "birdview of ";
pub const DEFAULT_MARGIN: f64 = 10.0;
pub const CROPS_FILE: &str = "crops.jsonl";

pub fn prompt_for(class_name: &str) -> String {
    format!("{PROMPT_PREFIX}{class_name}")
}

/// Grows every side by `margin` and clamps to the image.
pub fn expand_box(b: &HBox, margin: f64, image_w: u32, image_h: u32) -> HBox {
    let (w, h) = (f64::from(image_w), f64::from(image_h));
    HBox::new(
        (b.xmin() - margin).max(0.0),
        (b.ymin() - margin).max(0.0),
        (b.xmax() + margin).min(w),
        (b.ymax() + margin).min(h),
    )
    .expect("box inside the image keeps positive area")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropRecord {
    pub crop_id: String,
    pub source_image_id: String,
    pub class_name: String,
    /// Post-margin rectangle in source coordinates.
    pub crop_rect: HBox,
    pub prompt: String,
    /// Pixel size of the written crop.
    pub width: u32,
    pub height: u32,
    pub output_path: PathBuf,
}

/// Integer pixel rectangle covering `rect`, clamped to the image.
fn pixel_rect(rect: &HBox, image_w: u32, image_h: u32) -> (u32, u32, u32, u32) {
    let x0 = (rect.xmin().floor().max(0.0) as u32).min(image_w - 1);
    let y0 = (rect.ymin().floor().max(0.0) as u32).min(image_h - 1);
    let x1 = (rect.xmax().ceil() as u32).clamp(x0 + 1, image_w);
    let y1 = (rect.ymax().ceil() as u32).clamp(y0 + 1, image_h);
    (x0, y0, x1 - x0, y1 - y0)
}

fn crop_image(img: &ImageRecord, margin: f64, out_dir: &Path) -> Result<Vec<CropRecord>> {
    if img.objects.is_empty() {
        return Ok(Vec::new());
    }
    let decoded = image::open(&img.path)
        .map_err(|e| Error::image(&img.path, e))?
        .to_rgb8();
    let (w, h) = decoded.dimensions();
    let mut out = Vec::with_capacity(img.objects.len());
    for (k, obj) in img.objects.iter().enumerate() {
        let crop_id = format!("{}_obj{k}", img.image_id);
        let hull = obj
            .hbox()
            .intersection(&HBox::new(0.0, 0.0, f64::from(w), f64::from(h))?)
            .ok_or_else(|| Error::DegenerateGeometry(format!("{crop_id} lies outside its image")))?;
        let crop_rect = expand_box(&hull, margin, w, h);
        let (x, y, cw, ch) = pixel_rect(&crop_rect, w, h);
        let output_path = out_dir.join(format!("{crop_id}.png"));
        image::imageops::crop_imm(&decoded, x, y, cw, ch)
            .to_image()
            .save_with_format(&output_path, ImageFormat::Png)
            .map_err(|e| Error::image(&output_path, e))?;
        out.push(CropRecord {
            crop_id,
            source_image_id: img.image_id.clone(),
            class_name: obj.class_name.clone(),
            crop_rect,
            prompt: prompt_for(&obj.class_name),
            width: cw,
            height: ch,
            output_path,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ExtractionOutcome {
    pub crops: Vec<CropRecord>,
    pub failures: Vec<ImageFailure>,
}

/// Writes one PNG per object into `out_dir` plus a `crops.jsonl` index.
pub fn extract_crops(ds: &DatasetIndex, margin: f64, out_dir: &Path) -> Result<ExtractionOutcome> {
    if !(margin >= 0.0 && margin.is_finite()) {
        return Err(Error::InvalidConfig(format!("margin must be non-negative, got {margin}")));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let results: Vec<(String, Result<Vec<CropRecord>>)> = ds
        .images
        .par_iter()
        .map(|img| (img.image_id.clone(), crop_image(img, margin, out_dir)))
        .collect();
    let mut crops = Vec::new();
    let mut failures = Vec::new();
    for (image_id, res) in results {
        match res {
            Ok(c) => crops.extend(c),
            Err(e) => {
                warn!("{image_id}: {e}");
                failures.push(ImageFailure {
                    image_id,
                    message: e.to_string(),
                });
            }
        }
    }
    write_crop_records(&out_dir.join(CROPS_FILE), &crops)?;
    info!("extracted {} crops", crops.len());
    Ok(ExtractionOutcome { crops, failures })
}

fn relative_to(path: &Path, base: &Path) -> PathBuf {
    pathdiff::diff_paths(path, base).unwrap_or_else(|| path.to_path_buf())
}

fn base_dir(file: &Path) -> &Path {
    file.parent().unwrap_or_else(|| Path::new(""))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut buf = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut buf, &row).map_err(|e| Error::json(path, e))?;
        buf.push(b'\n');
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: Some(path.to_path_buf()),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Crop index with paths stored relative to the index file.
pub fn write_crop_records(path: &Path, crops: &[CropRecord]) -> Result<()> {
    let base = base_dir(path);
    write_jsonl(
        path,
        crops.iter().map(|c| CropRecord {
            output_path: relative_to(&c.output_path, base),
            ..c.clone()
        }),
    )
}

pub fn read_crop_records(path: &Path) -> Result<Vec<CropRecord>> {
    let base = base_dir(path);
    let mut crops: Vec<CropRecord> = read_jsonl(path)?;
    for c in &mut crops {
        c.output_path = base.join(&c.output_path);
    }
    Ok(crops)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[clap(rename_all = "snake_case")]
pub enum SamplingStrategy {
    /// Every crop is a candidate regardless of size.
    UniformSample,
    /// Crops smaller than `min_size` on either side are excluded.
    MinResControl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub strategy: SamplingStrategy,
    pub min_size: u32,
    pub per_class_cap: usize,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            strategy: SamplingStrategy::MinResControl,
            min_size: 15,
            per_class_cap: 200,
            seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_size == 0 || self.per_class_cap == 0 {
            return Err(Error::InvalidConfig(
                "sampling requires min_size >= 1 and per_class_cap >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// One line of the manifest consumed by the diffusion finetuning stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub crop_id: String,
    pub path: PathBuf,
    pub prompt: String,
    #[serde(rename = "class")]
    pub class_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptManifest {
    pub entries: Vec<ManifestEntry>,
    pub seed: u64,
    pub strategy: SamplingStrategy,
    pub warnings: Vec<String>,
}

impl PromptManifest {
    pub fn per_class_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for e in &self.entries {
            *counts.entry(e.class_name.clone()).or_insert(0) += 1;
        }
        counts
    }

    pub fn classes(&self) -> Vec<String> {
        self.per_class_counts().into_keys().collect()
    }
}

/// Seeded per-class sample without replacement. Each class draws from its
/// own stream keyed by (seed, class name), so class subsets do not perturb
/// each other.
pub fn sample_finetune_set(crops: &[CropRecord], cfg: &SamplingConfig) -> Result<PromptManifest> {
    cfg.validate()?;
    let mut by_class: BTreeMap<&str, Vec<&CropRecord>> = BTreeMap::new();
    for c in crops {
        by_class.entry(&c.class_name).or_default().push(c);
    }
    let mut entries = Vec::new();
    let mut warnings = Vec::new();
    for (class, mut group) in by_class {
        group.sort_by(|a, b| a.crop_id.cmp(&b.crop_id));
        let candidates: Vec<&CropRecord> = match cfg.strategy {
            SamplingStrategy::UniformSample => group,
            SamplingStrategy::MinResControl => group
                .into_iter()
                .filter(|c| c.width >= cfg.min_size && c.height >= cfg.min_size)
                .collect(),
        };
        if candidates.is_empty() {
            let msg = format!(
                "class '{class}' has no crops of at least {0}x{0}; omitted",
                cfg.min_size
            );
            warn!("{msg}");
            warnings.push(msg);
            continue;
        }
        let take = cfg.per_class_cap.min(candidates.len());
        let mut rng = rng_for(cfg.seed, class);
        let mut picked = index::sample(&mut rng, candidates.len(), take).into_vec();
        picked.sort_unstable();
        entries.extend(picked.into_iter().map(|i| {
            let c = candidates[i];
            ManifestEntry {
                crop_id: c.crop_id.clone(),
                path: c.output_path.clone(),
                prompt: prompt_for(class),
                class_name: class.to_string(),
            }
        }));
    }
    Ok(PromptManifest {
        entries,
        seed: cfg.seed,
        strategy: cfg.strategy,
        warnings,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestMeta {
    seed: u64,
    strategy: SamplingStrategy,
    per_class_counts: BTreeMap<String, usize>,
    warnings: Vec<String>,
}

/// Sidecar file holding seed, strategy, and warnings next to the manifest.
pub fn manifest_meta_path(manifest_path: &Path) -> PathBuf {
    manifest_path.with_extension("meta.json")
}

/// Writes the JSON Lines manifest (keys `crop_id`, `path`, `prompt`,
/// `class`; paths relative to the manifest) and its sidecar.
pub fn write_manifest(manifest: &PromptManifest, path: &Path) -> Result<()> {
    let base = base_dir(path);
    write_jsonl(
        path,
        manifest.entries.iter().map(|e| ManifestEntry {
            path: relative_to(&e.path, base),
            ..e.clone()
        }),
    )?;
    let meta = ManifestMeta {
        seed: manifest.seed,
        strategy: manifest.strategy,
        per_class_counts: manifest.per_class_counts(),
        warnings: manifest.warnings.clone(),
    };
    let meta_path = manifest_meta_path(path);
    let mut text = serde_json::to_string_pretty(&meta).map_err(|e| Error::json(&meta_path, e))?;
    text.push('\n');
    fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))
}

/// Reads manifest entries, resolving paths against the manifest location.
pub fn read_manifest_entries(path: &Path) -> Result<Vec<ManifestEntry>> {
    let base = base_dir(path);
    let mut entries: Vec<ManifestEntry> = read_jsonl(path)?;
    for e in &mut entries {
        e.path = base.join(&e.path);
    }
    Ok(entries)
}
