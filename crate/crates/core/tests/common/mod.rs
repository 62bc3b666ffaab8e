#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use aerosynth::dota::write_annotation_file;
use aerosynth::geometry::HBox;
use aerosynth::model::ObjectRecord;
use image::{Rgb, RgbImage};

/// Textured RGB image so crops and tiles are distinguishable.
pub fn textured(w: u32, h: u32, salt: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| {
        Rgb([
            ((x * 7 + y * 3 + salt) % 251) as u8,
            ((x * 5 + y * 11 + salt * 3) % 241) as u8,
            ((x ^ y).wrapping_add(salt) % 256) as u8,
        ])
    })
}

pub fn obj(class: &str, xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> ObjectRecord {
    ObjectRecord::from_hbox(HBox::new(xmin, ymin, xmax, ymax).unwrap(), class, false).unwrap()
}

pub struct ImageSpec {
    pub stem: String,
    pub width: u32,
    pub height: u32,
    /// `None` writes no annotation file (negative image).
    pub objects: Option<Vec<ObjectRecord>>,
}

impl ImageSpec {
    pub fn new(stem: &str, width: u32, height: u32, objects: Vec<ObjectRecord>) -> Self {
        Self {
            stem: stem.into(),
            width,
            height,
            objects: Some(objects),
        }
    }

    pub fn bare(stem: &str, width: u32, height: u32) -> Self {
        Self {
            stem: stem.into(),
            width,
            height,
            objects: None,
        }
    }
}

/// Writes `root/images/*.png` and `root/annotations/*.txt`.
pub fn write_dataset(root: &Path, specs: &[ImageSpec]) -> PathBuf {
    fs::create_dir_all(root.join("images")).unwrap();
    fs::create_dir_all(root.join("annotations")).unwrap();
    for (i, s) in specs.iter().enumerate() {
        textured(s.width, s.height, i as u32 * 17)
            .save(root.join("images").join(format!("{}.png", s.stem)))
            .unwrap();
        if let Some(objects) = &s.objects {
            write_annotation_file(&root.join("annotations").join(format!("{}.txt", s.stem)), objects).unwrap();
        }
    }
    root.to_path_buf()
}

/// A small DOTA-like scene set: two annotated aerial images with a mix of
/// common and rare classes, plus negative backgrounds.
pub fn small_scene_dataset(root: &Path) -> PathBuf {
    let specs = vec![
        ImageSpec::new(
            "P0001",
            700,
            600,
            vec![
                obj("plane", 40., 40., 100., 90.),
                obj("plane", 300., 320., 352., 380.),
                obj("small-vehicle", 500., 100., 512., 108.),
                obj("small-vehicle", 520., 130., 534., 140.),
                obj("helipad", 600., 450., 640., 492.),
            ],
        ),
        ImageSpec::new(
            "P0002",
            520,
            520,
            vec![
                obj("ship", 10., 200., 70., 230.),
                obj("ship", 100., 260., 150., 285.),
                obj("helipad", 400., 40., 436., 74.),
                obj("plane", 200., 380., 262., 440.),
            ],
        ),
        ImageSpec::bare("N0001", 600, 540),
        ImageSpec::new("N0002", 512, 512, vec![]),
    ];
    write_dataset(root, &specs)
}

/// Every file under `root`, relative path and bytes, sorted.
pub fn tree_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// Files under `root` whose names end with one of `exts`.
pub fn tree_bytes_with(root: &Path, exts: &[&str]) -> Vec<(String, Vec<u8>)> {
    tree_bytes(root)
        .into_iter()
        .filter(|(p, _)| exts.iter().any(|e| p.ends_with(e)))
        .collect()
}
