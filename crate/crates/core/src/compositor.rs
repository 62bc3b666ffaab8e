//! Copy-paste composition of pool instances onto real backgrounds.
//!
//! Target sizes are resampled from each class's recorded (area, aspect)
//! pairs, pasted without blending, and annotated with the exact paste
//! rectangle.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use image::{ImageFormat, RgbImage};
use log::info;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dota::{write_annotation_file, write_class_list, CLASS_LIST_FILE};
use crate::error::{Error, Result};
use crate::geometry::{iou, HBox};
use crate::model::{DatasetIndex, ImageRecord, ObjectRecord};
use crate::pool::{PoolEntry, PoolIndex};
use crate::resample::rescale;
use crate::seed::{rng_for, StageRng};
use crate::stats::{ClassStats, StatsMap};

pub const AUDIT_LOG_FILE: &str = "composition_log.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[clap(rename_all = "snake_case")]
pub enum BackgroundSource {
    /// Only images without annotations.
    NegativesOnly,
    AllTiles,
}

impl BackgroundSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            BackgroundSource::NegativesOnly => "negatives_only",
            BackgroundSource::AllTiles => "all_tiles",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompositionConfig {
    /// Inclusive (min, max) number of paste attempts per image.
    pub instances_per_image: (u32, u32),
    pub max_placement_attempts: u32,
    pub collision_iou_max: f64,
    /// Restricts pasted classes; `None` allows every class.
    pub class_filter: Option<BTreeSet<String>>,
    pub geometry_jitter: f64,
    pub background_source: BackgroundSource,
    pub seed: u64,
}

impl Default for CompositionConfig {
    fn default() -> Self {
        Self {
            instances_per_image: (1, 5),
            max_placement_attempts: 50,
            collision_iou_max: 0.05,
            class_filter: None,
            geometry_jitter: 0.10,
            background_source: BackgroundSource::NegativesOnly,
            seed: 0,
        }
    }
}

impl CompositionConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.instances_per_image;
        if lo > hi {
            return Err(Error::InvalidConfig(format!(
                "instances_per_image min {lo} exceeds max {hi}"
            )));
        }
        if !(0.0..1.0).contains(&self.collision_iou_max) {
            return Err(Error::InvalidConfig(format!(
                "collision_iou_max must lie in [0, 1), got {}",
                self.collision_iou_max
            )));
        }
        if !(0.0..1.0).contains(&self.geometry_jitter) {
            return Err(Error::InvalidConfig(format!(
                "geometry_jitter must lie in [0, 1), got {}",
                self.geometry_jitter
            )));
        }
        if self.max_placement_attempts == 0 {
            return Err(Error::InvalidConfig("max_placement_attempts must be at least 1".into()));
        }
        Ok(())
    }
}

fn in_range(v: f64, range: (f64, f64)) -> bool {
    v >= range.0 && v <= range.1
}

/// Closest integer rectangle to the continuous target whose own area and
/// aspect stay inside the class ranges.
fn integer_fit(area: f64, aspect: f64, area_range: (f64, f64), aspect_range: (f64, f64)) -> Option<(u32, u32)> {
    let w = (area * aspect).sqrt();
    let h = (area / aspect).sqrt();
    let span = |v: f64| {
        let lo = (v.floor() - 1.0).max(1.0) as u32;
        let hi = (v.ceil() + 1.0).max(1.0) as u32;
        lo..=hi
    };
    let mut best: Option<(f64, u32, u32)> = None;
    for cw in span(w) {
        for ch in span(h) {
            let a = f64::from(cw) * f64::from(ch);
            let r = f64::from(cw) / f64::from(ch);
            if !in_range(a, area_range) || !in_range(r, aspect_range) {
                continue;
            }
            let cost = (a / area).ln().abs() + (r / aspect).ln().abs();
            if best.is_none_or(|(c, _, _)| cost < c) {
                best = Some((cost, cw, ch));
            }
        }
    }
    best.map(|(_, cw, ch)| (cw, ch))
}

/// Draws a paste size from the class distribution.
///
/// One recorded (area, aspect) pair is picked uniformly, both values are
/// jittered multiplicatively and clamped into the class ranges, then turned
/// into `sqrt(area * aspect) x sqrt(area / aspect)`. Rounding snaps to the
/// nearest integer size that stays inside the ranges; `Ok(None)` means no
/// such size exists near either the jittered or the original pair.
pub fn sample_target_geometry(stats: &ClassStats, cfg: &CompositionConfig, rng: &mut StageRng) -> Result<Option<(u32, u32)>> {
    let (Some(area_range), Some(aspect_range)) = (stats.area_range, stats.aspect_range) else {
        return Err(Error::NoGeometry(stats.class_name.clone()));
    };
    if stats.instances.is_empty() {
        return Err(Error::NoGeometry(stats.class_name.clone()));
    }
    let (area0, aspect0) = stats.instances[rng.gen_range(0..stats.instances.len())];
    let j = cfg.geometry_jitter;
    let (fa, fr) = if j > 0.0 {
        (rng.gen_range(1.0 - j..=1.0 + j), rng.gen_range(1.0 - j..=1.0 + j))
    } else {
        (1.0, 1.0)
    };
    let area = (area0 * fa).clamp(area_range.0, area_range.1);
    let aspect = (aspect0 * fr).clamp(aspect_range.0, aspect_range.1);
    Ok(integer_fit(area, aspect, area_range, aspect_range)
        .or_else(|| integer_fit(area0, aspect0, area_range, aspect_range)))
}

/// Random placement of a `w x h` box whose IoU with every occupied box is at
/// most `collision_iou_max`.
pub fn place_instance(
    bg_w: u32,
    bg_h: u32,
    occupied: &[HBox],
    w: u32,
    h: u32,
    cfg: &CompositionConfig,
    rng: &mut StageRng,
) -> Option<HBox> {
    place_instance_exclusive(bg_w, bg_h, occupied, &[], w, h, cfg, rng)
}

/// Like [`place_instance`], and additionally the result may not share any
/// pixel with a box in `exclusive`.
#[allow(clippy::too_many_arguments)]
pub fn place_instance_exclusive(
    bg_w: u32,
    bg_h: u32,
    occupied: &[HBox],
    exclusive: &[HBox],
    w: u32,
    h: u32,
    cfg: &CompositionConfig,
    rng: &mut StageRng,
) -> Option<HBox> {
    if w == 0 || h == 0 || w > bg_w || h > bg_h {
        return None;
    }
    for _ in 0..cfg.max_placement_attempts {
        let x = rng.gen_range(0..=bg_w - w);
        let y = rng.gen_range(0..=bg_h - h);
        let cand = HBox::from_xywh(f64::from(x), f64::from(y), f64::from(w), f64::from(h))
            .expect("positive size");
        let clear = occupied
            .iter()
            .chain(exclusive)
            .all(|b| iou(&cand, b) <= cfg.collision_iou_max)
            && exclusive.iter().all(|b| cand.intersection_area(b) == 0.0);
        if clear {
            return Some(cand);
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Placement {
    #[serde(rename = "class")]
    pub class_name: String,
    pub seed: u32,
    pub sample_index: u32,
    /// Pool-relative source path.
    pub source: String,
    /// `[x, y, w, h]` in background pixels.
    pub rect: [u32; 4],
    #[serde(skip)]
    pub entry: PoolEntry,
}

impl Placement {
    pub fn hbox(&self) -> HBox {
        let [x, y, w, h] = self.rect.map(f64::from);
        HBox::from_xywh(x, y, w, h).expect("placements have positive size")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PastePlan {
    pub background_image_id: String,
    pub requested: u32,
    pub placements: Vec<Placement>,
    /// Attempts that yielded no size within the class ranges.
    pub geometry_rejected: u32,
    /// Attempts with a size but no collision-free position.
    pub placement_failed: u32,
}

#[derive(Debug, Clone)]
pub struct Composition {
    pub image: RgbImage,
    /// Pasted objects only, in placement order.
    pub objects: Vec<ObjectRecord>,
    pub plan: PastePlan,
}

/// Classes allowed by the filter that have pool entries and geometry.
pub fn eligible_classes(pool: &PoolIndex, stats: &StatsMap, cfg: &CompositionConfig) -> Vec<String> {
    pool.classes
        .iter()
        .filter(|(name, entries)| !entries.is_empty() && stats.get(*name).is_some_and(|s| !s.is_empty()))
        .map(|(name, _)| name)
        .filter(|name| cfg.class_filter.as_ref().is_none_or(|f| f.contains(*name)))
        .cloned()
        .collect()
}

/// Composes onto an already decoded canvas.
pub fn compose_onto(
    mut canvas: RgbImage,
    background_image_id: &str,
    background_objects: &[ObjectRecord],
    pool: &PoolIndex,
    stats: &StatsMap,
    cfg: &CompositionConfig,
    rng: &mut StageRng,
) -> Result<Composition> {
    let classes = eligible_classes(pool, stats, cfg);
    if classes.is_empty() {
        return Err(Error::NoEligibleClass);
    }
    let (bg_w, bg_h) = canvas.dimensions();
    let occupied: Vec<HBox> = background_objects.iter().map(|o| *o.hbox()).collect();
    let mut pasted: Vec<HBox> = Vec::new();
    let mut plan = PastePlan {
        background_image_id: background_image_id.to_string(),
        requested: rng.gen_range(cfg.instances_per_image.0..=cfg.instances_per_image.1),
        placements: Vec::new(),
        geometry_rejected: 0,
        placement_failed: 0,
    };
    let mut objects = Vec::new();
    for _ in 0..plan.requested {
        let class = &classes[rng.gen_range(0..classes.len())];
        let entries = pool.entries(class);
        let entry = &entries[rng.gen_range(0..entries.len())];
        let Some((w, h)) = sample_target_geometry(&stats[class], cfg, rng)? else {
            plan.geometry_rejected += 1;
            continue;
        };
        let Some(target) = place_instance_exclusive(bg_w, bg_h, &occupied, &pasted, w, h, cfg, rng) else {
            plan.placement_failed += 1;
            continue;
        };
        let src = image::open(&entry.path)
            .map_err(|e| Error::image(&entry.path, e))?
            .to_rgb8();
        let patch = rescale(&src, w, h);
        let (x, y) = (target.xmin() as u32, target.ymin() as u32);
        image::imageops::replace(&mut canvas, &patch, i64::from(x), i64::from(y));
        objects.push(ObjectRecord::from_hbox(target, class.clone(), false)?);
        pasted.push(target);
        plan.placements.push(Placement {
            class_name: class.clone(),
            seed: entry.seed,
            sample_index: entry.sample_index,
            source: pool.relative_path(entry),
            rect: [x, y, w, h],
            entry: entry.clone(),
        });
    }
    Ok(Composition {
        image: canvas,
        objects,
        plan,
    })
}

/// Decodes `background` and composes onto it.
pub fn compose_image(
    background: &ImageRecord,
    pool: &PoolIndex,
    stats: &StatsMap,
    cfg: &CompositionConfig,
    rng: &mut StageRng,
) -> Result<Composition> {
    let canvas = image::open(&background.path)
        .map_err(|e| Error::image(&background.path, e))?
        .to_rgb8();
    compose_onto(canvas, &background.image_id, &background.objects, pool, stats, cfg, rng)
}

/// Stem of the `ordinal`-th synthetic image.
pub fn synthetic_image_id(ordinal: usize) -> String {
    format!("synthetic_{ordinal:06}")
}

#[derive(Debug, Serialize)]
struct AuditRecord<'a> {
    image_id: &'a str,
    background: &'a str,
    requested: u32,
    placed: usize,
    geometry_rejected: u32,
    placement_failed: u32,
    placements: &'a [Placement],
}

#[derive(Debug, Clone)]
pub struct SyntheticOutcome {
    pub index: DatasetIndex,
    pub plans: Vec<PastePlan>,
}

impl SyntheticOutcome {
    pub fn placed(&self) -> usize {
        self.plans.iter().map(|p| p.placements.len()).sum()
    }
}

/// Composes `count` images into `out_root/{images,annotations}` plus an
/// audit log. Backgrounds are drawn with replacement; image `k` uses the
/// stream keyed by (seed, k) alone, so output is independent of worker
/// scheduling.
pub fn generate_synthetic_set(
    ds: &DatasetIndex,
    pool: &PoolIndex,
    stats: &StatsMap,
    cfg: &CompositionConfig,
    count: usize,
    out_root: &Path,
) -> Result<SyntheticOutcome> {
    cfg.validate()?;
    if count == 0 {
        return Err(Error::InvalidConfig("synthetic image count must be at least 1".into()));
    }
    let backgrounds: Vec<&ImageRecord> = match cfg.background_source {
        BackgroundSource::NegativesOnly => ds.negatives().collect(),
        BackgroundSource::AllTiles => ds.images.iter().collect(),
    };
    if backgrounds.is_empty() {
        return Err(Error::NoBackgrounds(cfg.background_source.as_str().into()));
    }
    if eligible_classes(pool, stats, cfg).is_empty() {
        return Err(Error::NoEligibleClass);
    }
    let images_dir = out_root.join("images");
    let ann_dir = out_root.join("annotations");
    for dir in [&images_dir, &ann_dir] {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let results: Vec<Result<(ImageRecord, PastePlan)>> = (0..count)
        .into_par_iter()
        .map(|ordinal| {
            let mut rng = rng_for(cfg.seed, &format!("image-{ordinal}"));
            let bg = backgrounds[rng.gen_range(0..backgrounds.len())];
            let comp = compose_image(bg, pool, stats, cfg, &mut rng)?;
            let image_id = synthetic_image_id(ordinal);
            let image_path = images_dir.join(format!("{image_id}.png"));
            comp.image
                .save_with_format(&image_path, ImageFormat::Png)
                .map_err(|e| Error::image(&image_path, e))?;
            let mut objects = bg.objects.clone();
            objects.extend(comp.objects);
            write_annotation_file(&ann_dir.join(format!("{image_id}.txt")), &objects)?;
            let (width, height) = comp.image.dimensions();
            Ok((
                ImageRecord {
                    image_id,
                    path: image_path,
                    width,
                    height,
                    objects,
                },
                comp.plan,
            ))
        })
        .collect();

    let mut images = Vec::with_capacity(count);
    let mut plans = Vec::with_capacity(count);
    for r in results {
        let (img, plan) = r?;
        images.push(img);
        plans.push(plan);
    }

    let mut log = Vec::new();
    for (img, plan) in images.iter().zip(&plans) {
        let rec = AuditRecord {
            image_id: &img.image_id,
            background: &plan.background_image_id,
            requested: plan.requested,
            placed: plan.placements.len(),
            geometry_rejected: plan.geometry_rejected,
            placement_failed: plan.placement_failed,
            placements: &plan.placements,
        };
        let log_path = out_root.join(AUDIT_LOG_FILE);
        serde_json::to_writer(&mut log, &rec).map_err(|e| Error::json(&log_path, e))?;
        log.push(b'\n');
    }
    let log_path = out_root.join(AUDIT_LOG_FILE);
    fs::write(&log_path, log).map_err(|e| Error::io(&log_path, e))?;

    let index = DatasetIndex::new(out_root, images, &ds.class_names)?;
    write_class_list(&out_root.join(CLASS_LIST_FILE), &index.class_names)?;
    let outcome = SyntheticOutcome { index, plans };
    info!("composed {count} images with {} pasted instances", outcome.placed());
    Ok(outcome)
}

/// Per-class count of pasted instances.
pub fn placed_per_class(plans: &[PastePlan]) -> HashMap<String, usize> {
    let mut out = HashMap::new();
    for p in plans.iter().flat_map(|p| &p.placements) {
        *out.entry(p.class_name.clone()).or_insert(0) += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn single(area: f64, aspect: f64) -> ClassStats {
        ClassStats::from_instances("c", 1, vec![(area, aspect)])
    }

    fn cfg(jitter: f64) -> CompositionConfig {
        CompositionConfig {
            geometry_jitter: jitter,
            ..CompositionConfig::default()
        }
    }

    #[test]
    fn square_target() {
        let mut rng = rng_for(1, "t");
        assert_eq!(sample_target_geometry(&single(400., 1.), &cfg(0.), &mut rng).unwrap(), Some((20, 20)));
    }

    #[test]
    fn elongated_target() {
        let mut rng = rng_for(1, "t");
        assert_eq!(sample_target_geometry(&single(400., 4.), &cfg(0.), &mut rng).unwrap(), Some((40, 10)));
    }

    #[test]
    fn jitter_stays_within_bounds_and_range() {
        let stats = ClassStats::from_instances("c", 3, vec![(400., 1.), (300., 0.75), (500., 1.25)]);
        let mut rng = rng_for(3, "jitter");
        for _ in 0..2000 {
            let (w, h) = sample_target_geometry(&stats, &cfg(0.10), &mut rng).unwrap().unwrap();
            let area = f64::from(w * h);
            let aspect = f64::from(w) / f64::from(h);
            assert!((300.0..=500.0).contains(&area), "{w}x{h}");
            assert!((0.75..=1.25).contains(&aspect), "{w}x{h}");
        }
        // single instance: jitter is clamped away entirely
        let one = single(400., 1.);
        for _ in 0..200 {
            let (w, h) = sample_target_geometry(&one, &cfg(0.10), &mut rng).unwrap().unwrap();
            let area = f64::from(w * h);
            assert!((360.0..=440.0).contains(&area));
            assert_eq!((w, h), (20, 20));
        }
    }

    #[test]
    fn empty_stats_error() {
        let mut rng = rng_for(1, "t");
        let empty = ClassStats::from_instances("helipad", 0, vec![]);
        assert!(matches!(
            sample_target_geometry(&empty, &cfg(0.1), &mut rng),
            Err(Error::NoGeometry(_))
        ));
    }

    #[test]
    fn unreachable_fractional_range_yields_none() {
        // area pinned to 2.5 with aspect 1: no integer square has that area
        let mut rng = rng_for(1, "t");
        assert_eq!(sample_target_geometry(&single(2.5, 1.), &cfg(0.), &mut rng).unwrap(), None);
    }

    #[test]
    fn placement_on_empty_background() {
        let mut rng = rng_for(2, "p");
        let b = place_instance(100, 80, &[], 30, 20, &cfg(0.1), &mut rng).unwrap();
        assert!(HBox::new(0., 0., 100., 80.).unwrap().contains(&b));
        assert_eq!((b.width(), b.height()), (30., 20.));
    }

    #[test]
    fn oversized_instance_rejected() {
        let mut rng = rng_for(2, "p");
        assert!(place_instance(10, 10, &[], 11, 5, &cfg(0.1), &mut rng).is_none());
        assert!(place_instance(10, 10, &[], 5, 11, &cfg(0.1), &mut rng).is_none());
    }

    #[test]
    fn fully_covered_background_rejects() {
        let canvas = HBox::new(0., 0., 10., 10.).unwrap();
        // brute force: every 5x5 position collides with the canvas-sized box
        for x in 0..=5 {
            for y in 0..=5 {
                let c = HBox::from_xywh(f64::from(x), f64::from(y), 5., 5.).unwrap();
                assert!(iou(&c, &canvas) > 0.05);
            }
        }
        let mut rng = rng_for(2, "p");
        assert!(place_instance(10, 10, &[canvas], 5, 5, &cfg(0.1), &mut rng).is_none());
    }

    #[test]
    fn exclusive_boxes_never_share_pixels() {
        let mut rng = rng_for(5, "x");
        let c = CompositionConfig {
            collision_iou_max: 0.5,
            max_placement_attempts: 500,
            ..CompositionConfig::default()
        };
        let taken = HBox::new(0., 0., 20., 40.).unwrap();
        for _ in 0..100 {
            let b = place_instance_exclusive(40, 40, &[], &[taken], 10, 10, &c, &mut rng).unwrap();
            assert_eq!(b.intersection_area(&taken), 0.0);
        }
    }

    #[test]
    fn config_validation() {
        assert!(CompositionConfig::default().validate().is_ok());
        let bad = CompositionConfig { instances_per_image: (4, 2), ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = CompositionConfig { collision_iou_max: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = CompositionConfig { geometry_jitter: -0.1, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn no_eligible_class_errors() {
        let pool = PoolIndex::default();
        let canvas = RgbImage::from_pixel(32, 32, Rgb([0, 0, 0]));
        let mut rng = rng_for(1, "c");
        let err = compose_onto(canvas, "bg", &[], &pool, &StatsMap::new(), &cfg(0.1), &mut rng);
        assert!(matches!(err, Err(Error::NoEligibleClass)));
    }
}
