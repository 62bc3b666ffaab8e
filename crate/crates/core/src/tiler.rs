//! Overlapping fixed-size tiling of large aerial images.

use std::fs;
use std::path::Path;

use image::{ImageFormat, RgbImage};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dota::{write_annotation_file, write_class_list, CLASS_LIST_FILE};
use crate::error::{Error, Result};
use crate::geometry::{clip_box, HBox, QuadBox};
use crate::model::{DatasetIndex, ImageRecord, ObjectRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TilingConfig {
    pub tile_size: u32,
    pub overlap: u32,
    /// Minimum visible fraction for a clipped object to be kept.
    pub visibility_threshold: f64,
    pub keep_empty_tiles: bool,
}

impl Default for TilingConfig {
    fn default() -> Self {
        Self {
            tile_size: 512,
            overlap: 200,
            visibility_threshold: 0.5,
            keep_empty_tiles: true,
        }
    }
}

impl TilingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tile_size == 0 || self.overlap >= self.tile_size {
            return Err(Error::InvalidConfig(format!(
                "tiling requires 0 <= overlap < tile_size (got overlap {}, tile_size {})",
                self.overlap, self.tile_size
            )));
        }
        if !(self.visibility_threshold > 0.0 && self.visibility_threshold <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "visibility_threshold must lie in (0, 1], got {}",
                self.visibility_threshold
            )));
        }
        Ok(())
    }

    pub fn stride(&self) -> u32 {
        self.tile_size - self.overlap
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileSpec {
    pub parent_image_id: String,
    pub origin_x: u32,
    pub origin_y: u32,
    pub tile_w: u32,
    pub tile_h: u32,
    pub row: u32,
    pub col: u32,
}

impl TileSpec {
    /// Window in parent coordinates.
    pub fn window(&self) -> HBox {
        HBox::from_xywh(
            f64::from(self.origin_x),
            f64::from(self.origin_y),
            f64::from(self.tile_w),
            f64::from(self.tile_h),
        )
        .expect("tile extents are positive")
    }

    /// Stable output stem, `<parent>_r<row>_c<col>`.
    pub fn name(&self) -> String {
        format!("{}_r{}_c{}", self.parent_image_id, self.row, self.col)
    }
}

/// Window start positions along one axis.
pub fn axis_positions(extent: u32, tile_size: u32, stride: u32) -> Vec<u32> {
    if extent <= tile_size {
        return vec![0];
    }
    let mut positions = Vec::new();
    let mut p = 0u32;
    while p + tile_size < extent {
        positions.push(p);
        p += stride;
    }
    let last = extent - tile_size;
    if positions.last() != Some(&last) {
        positions.push(last);
    }
    positions
}

/// Row-major tile plan for one image. Edge windows are clamped inside the
/// image; nothing is padded.
pub fn plan_tiles(parent_image_id: &str, width: u32, height: u32, cfg: &TilingConfig) -> Vec<TileSpec> {
    let xs = axis_positions(width, cfg.tile_size, cfg.stride());
    let ys = axis_positions(height, cfg.tile_size, cfg.stride());
    let tile_w = width.min(cfg.tile_size);
    let tile_h = height.min(cfg.tile_size);
    let mut tiles = Vec::with_capacity(xs.len() * ys.len());
    for (row, &y) in ys.iter().enumerate() {
        for (col, &x) in xs.iter().enumerate() {
            tiles.push(TileSpec {
                parent_image_id: parent_image_id.to_string(),
                origin_x: x,
                origin_y: y,
                tile_w,
                tile_h,
                row: row as u32,
                col: col as u32,
            });
        }
    }
    tiles
}

/// Objects visible in `tile`, in tile-local coordinates.
///
/// Fully contained objects keep their quad; clipped ones are replaced by the
/// corner quad of the clipped hull.
pub fn assign_objects(tile: &TileSpec, objects: &[ObjectRecord], cfg: &TilingConfig) -> Vec<ObjectRecord> {
    let window = tile.window();
    let (dx, dy) = (-f64::from(tile.origin_x), -f64::from(tile.origin_y));
    objects
        .iter()
        .filter_map(|obj| {
            let clip = clip_box(obj.hbox(), &window)?;
            if clip.visible_fraction < cfg.visibility_threshold {
                return None;
            }
            let geometry = if clip.visible_fraction == 1.0 {
                obj.geometry().translated(dx, dy)
            } else {
                QuadBox::from_hbox(&clip.clipped.translated(dx, dy))
            };
            ObjectRecord::new(geometry, obj.class_name.clone(), obj.difficult).ok()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ImageFailure {
    pub image_id: String,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct TilingOutcome {
    pub index: DatasetIndex,
    pub failures: Vec<ImageFailure>,
}

type TiledImage = Vec<(TileSpec, ImageRecord)>;

fn tile_one(img: &ImageRecord, cfg: &TilingConfig, out_root: &Path) -> Result<TiledImage> {
    let decoded: RgbImage = image::open(&img.path)
        .map_err(|e| Error::image(&img.path, e))?
        .to_rgb8();
    let (width, height) = decoded.dimensions();
    if (width, height) != (img.width, img.height) {
        warn!(
            "{}: header said {}x{}, decoded {}x{}",
            img.image_id, img.width, img.height, width, height
        );
    }
    let mut out = Vec::new();
    for tile in plan_tiles(&img.image_id, width, height, cfg) {
        let objects = assign_objects(&tile, &img.objects, cfg);
        if objects.is_empty() && !cfg.keep_empty_tiles {
            continue;
        }
        let name = tile.name();
        let image_path = out_root.join("images").join(format!("{name}.png"));
        let ann_path = out_root.join("annotations").join(format!("{name}.txt"));
        image::imageops::crop_imm(&decoded, tile.origin_x, tile.origin_y, tile.tile_w, tile.tile_h)
            .to_image()
            .save_with_format(&image_path, ImageFormat::Png)
            .map_err(|e| Error::image(&image_path, e))?;
        write_annotation_file(&ann_path, &objects)?;
        let record = ImageRecord {
            image_id: name,
            path: image_path,
            width: tile.tile_w,
            height: tile.tile_h,
            objects,
        };
        out.push((tile, record));
    }
    Ok(out)
}

/// Tiles every image of `ds` into `out_root/{images,annotations}`.
///
/// Decode or write failures are collected per image; the remaining images
/// still proceed. The returned index is sorted by (parent, row, col).
pub fn tile_dataset(ds: &DatasetIndex, cfg: &TilingConfig, out_root: &Path) -> Result<TilingOutcome> {
    cfg.validate()?;
    for sub in ["images", "annotations"] {
        let dir = out_root.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    write_class_list(&out_root.join(CLASS_LIST_FILE), &ds.class_names)?;

    let results: Vec<(String, Result<TiledImage>)> = ds
        .images
        .par_iter()
        .map(|img| (img.image_id.clone(), tile_one(img, cfg, out_root)))
        .collect();

    let mut tiles = Vec::new();
    let mut failures = Vec::new();
    for (image_id, res) in results {
        match res {
            Ok(t) => tiles.extend(t),
            Err(e) => {
                warn!("{image_id}: {e}");
                failures.push(ImageFailure {
                    image_id,
                    message: e.to_string(),
                })
            }
        }
    }
    tiles.sort_by(|(a, _), (b, _)| {
        (&a.parent_image_id, a.row, a.col).cmp(&(&b.parent_image_id, b.row, b.col))
    });
    info!("tiled {} images into {} tiles", ds.images.len() - failures.len(), tiles.len());
    let images = tiles.into_iter().map(|(_, r)| r).collect();
    let index = DatasetIndex::new(out_root, images, &ds.class_names)?;
    Ok(TilingOutcome { index, failures })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn positions_x(tiles: &[TileSpec]) -> Vec<u32> {
        let mut xs: Vec<u32> = tiles.iter().map(|t| t.origin_x).collect();
        xs.sort_unstable();
        xs.dedup();
        xs
    }

    #[test]
    fn single_tile_when_extent_matches() {
        let t = plan_tiles("a", 512, 512, &TilingConfig::default());
        assert_eq!(t.len(), 1);
        assert_eq!((t[0].origin_x, t[0].origin_y, t[0].tile_w, t[0].tile_h), (0, 0, 512, 512));
    }

    #[test]
    fn nine_tiles_for_1024() {
        let t = plan_tiles("a", 1024, 1024, &TilingConfig::default());
        assert_eq!(t.len(), 9);
        assert_eq!(positions_x(&t), [0, 312, 512]);
        // row-major
        assert_eq!((t[1].row, t[1].col, t[1].origin_x, t[1].origin_y), (0, 1, 312, 0));
        assert_eq!((t[3].row, t[3].col, t[3].origin_x, t[3].origin_y), (1, 0, 0, 312));
    }

    #[test]
    fn clamped_final_position() {
        let t = plan_tiles("a", 700, 512, &TilingConfig::default());
        assert_eq!(t.len(), 2);
        assert_eq!(positions_x(&t), [0, 188]);
    }

    #[test]
    fn small_image_is_not_padded() {
        let t = plan_tiles("a", 100, 30, &TilingConfig::default());
        assert_eq!(t.len(), 1);
        assert_eq!((t[0].tile_w, t[0].tile_h), (100, 30));
    }

    #[test]
    fn tile_names() {
        let t = &plan_tiles("P0001", 1024, 700, &TilingConfig::default())[4];
        assert_eq!(t.name(), "P0001_r1_c1");
    }

    fn obj(b: (f64, f64, f64, f64)) -> ObjectRecord {
        ObjectRecord::from_hbox(HBox::new(b.0, b.1, b.2, b.3).unwrap(), "plane", true).unwrap()
    }

    fn tile_at(x: u32, y: u32) -> TileSpec {
        TileSpec {
            parent_image_id: "p".into(),
            origin_x: x,
            origin_y: y,
            tile_w: 512,
            tile_h: 512,
            row: 0,
            col: 0,
        }
    }

    #[test]
    fn inside_object_is_shifted() {
        let cfg = TilingConfig::default();
        let kept = assign_objects(&tile_at(50, 60), &[obj((100., 100., 120., 130.))], &cfg);
        assert_eq!(kept.len(), 1);
        assert_eq!(*kept[0].hbox(), HBox::new(50., 40., 70., 70.).unwrap());
        assert!(kept[0].difficult);
    }

    #[test]
    fn outside_object_is_dropped() {
        let cfg = TilingConfig::default();
        assert!(assign_objects(&tile_at(0, 0), &[obj((600., 600., 610., 610.))], &cfg).is_empty());
    }

    #[test]
    fn mostly_hidden_object_is_dropped() {
        let cfg = TilingConfig::default();
        assert!(assign_objects(&tile_at(50, 50), &[obj((0., 0., 100., 100.))], &cfg).is_empty());
        let loose = TilingConfig {
            visibility_threshold: 0.25,
            ..cfg
        };
        let kept = assign_objects(&tile_at(50, 50), &[obj((0., 0., 100., 100.))], &loose);
        assert_eq!(*kept[0].hbox(), HBox::new(0., 0., 50., 50.).unwrap());
    }

    #[test]
    fn invalid_configs() {
        let bad = TilingConfig {
            overlap: 512,
            ..TilingConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TilingConfig {
            visibility_threshold: 0.0,
            ..TilingConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(TilingConfig::default().validate().is_ok());
    }

    proptest! {
        #[test]
        fn windows_cover_every_pixel(w in 1u32..90, h in 1u32..90, tile in 2u32..40, ov_frac in 0.0..1.0f64) {
            let overlap = ((f64::from(tile) * ov_frac) as u32).min(tile - 1);
            let cfg = TilingConfig { tile_size: tile, overlap, ..TilingConfig::default() };
            let tiles = plan_tiles("p", w, h, &cfg);
            for t in &tiles {
                prop_assert!(t.origin_x + t.tile_w <= w && t.origin_y + t.tile_h <= h);
                prop_assert!(t.tile_w <= tile && t.tile_h <= tile);
            }
            // brute-force membership
            for y in 0..h {
                for x in 0..w {
                    let covered = tiles.iter().any(|t| {
                        x >= t.origin_x && x < t.origin_x + t.tile_w && y >= t.origin_y && y < t.origin_y + t.tile_h
                    });
                    prop_assert!(covered, "pixel ({}, {}) uncovered", x, y);
                }
            }
        }

        #[test]
        fn adjacent_windows_overlap(extent in 1u32..3000, tile in 2u32..600, ov_frac in 0.0..1.0f64) {
            let overlap = ((f64::from(tile) * ov_frac) as u32).min(tile - 1);
            let ps = axis_positions(extent, tile, tile - overlap);
            for pair in ps.windows(2) {
                prop_assert!(pair[0] < pair[1]);
                prop_assert!(pair[0] + tile - pair[1] >= overlap);
            }
        }

        #[test]
        fn assigned_objects_fit_tile(x in 0.0..900.0f64, y in 0.0..900.0f64, w in 1.0..300.0f64, h in 1.0..300.0f64) {
            let cfg = TilingConfig::default();
            let o = obj((x, y, x + w, y + h));
            for t in plan_tiles("p", 1024, 1024, &cfg) {
                for k in assign_objects(&t, std::slice::from_ref(&o), &cfg) {
                    let b = k.hbox();
                    prop_assert!(b.xmin() >= 0.0 && b.ymin() >= 0.0);
                    prop_assert!(b.xmax() <= f64::from(t.tile_w) && b.ymax() <= f64::from(t.tile_h));
                }
            }
        }
    }
}
