//! DOTA annotation text format and dataset discovery.
//!
//! Object lines are `x1 y1 x2 y2 x3 y3 x4 y4 class difficult`. Header lines
//! (`imagesource:...`, `gsd:...`) are skipped on read and never written.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::QuadBox;
use crate::model::{DatasetIndex, ImageRecord, ObjectRecord};

pub const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];
pub const ANNOTATION_EXTENSION: &str = "txt";
pub const CLASS_LIST_FILE: &str = "classes.txt";

/// Parses one annotation file. `image_id` is only used in diagnostics.
///
/// Negative coordinates are clamped to zero. Lines whose hull has no area
/// are skipped with a warning.
pub fn parse_dota_annotation(text: &str, image_id: &str) -> Result<Vec<ObjectRecord>> {
    let mut records = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with("imagesource") || line.starts_with("gsd") {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let fail = |message: String| Error::Parse {
            path: None,
            line: line_no,
            message,
        };
        if tokens.len() != 10 {
            return Err(fail(format!(
                "expected 10 tokens, found {}",
                tokens.len()
            )));
        }
        let mut coords = [0.0f64; 8];
        for (slot, tok) in coords.iter_mut().zip(&tokens[..8]) {
            let v: f64 = tok
                .parse()
                .map_err(|_| fail(format!("cannot parse coordinate '{tok}'")))?;
            if !v.is_finite() {
                return Err(fail(format!("non-finite coordinate '{tok}'")));
            }
            *slot = if v <= 0.0 { 0.0 } else { v };
        }
        let class_name = tokens[8];
        if class_name.is_empty() {
            return Err(fail("empty class name".into()));
        }
        let difficult = match tokens[9] {
            "0" => false,
            "1" => true,
            other => return Err(fail(format!("difficult flag must be 0 or 1, found '{other}'"))),
        };
        let record = QuadBox::from_flat(coords)
            .and_then(|q| ObjectRecord::new(q, class_name, difficult));
        match record {
            Ok(r) => records.push(r),
            Err(e) => warn!("{image_id}: line {line_no} skipped: {e}"),
        }
    }
    Ok(records)
}

/// Shortest representation that parses back to the same value; integral
/// values carry no decimal point.
pub fn format_coord(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    format!("{v}")
}

pub fn write_dota_annotation(records: &[ObjectRecord]) -> String {
    let mut out = String::new();
    for r in records {
        for c in r.geometry().to_flat() {
            out.push_str(&format_coord(c));
            out.push(' ');
        }
        out.push_str(&r.class_name);
        out.push(' ');
        out.push(if r.difficult { '1' } else { '0' });
        out.push('\n');
    }
    out
}

pub fn read_annotation_file(path: &Path, image_id: &str) -> Result<Vec<ObjectRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dota_annotation(&text, image_id).map_err(|e| match e {
        Error::Parse { line, message, .. } => Error::Parse {
            path: Some(path.to_path_buf()),
            line,
            message,
        },
        other => other,
    })
}

pub fn write_annotation_file(path: &Path, records: &[ObjectRecord]) -> Result<()> {
    fs::write(path, write_dota_annotation(records)).map_err(|e| Error::io(path, e))
}

/// Reads a class list: one class per line, blank lines and `#` comments
/// ignored.
pub fn read_class_list(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

pub fn write_class_list(path: &Path, names: &[String]) -> Result<()> {
    let mut text = names.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Directory names used to locate a dataset under its root.
#[derive(Debug, Clone)]
pub struct DatasetLayout {
    pub images_dir: String,
    /// `None` tries `annotations/` first, then DOTA's own `labelTxt/`.
    pub annotations_dir: Option<String>,
    /// Explicit class list pinning category order. Defaults to
    /// `<root>/classes.txt` when that file exists.
    pub class_list: Option<PathBuf>,
}

impl Default for DatasetLayout {
    fn default() -> Self {
        Self {
            images_dir: "images".into(),
            annotations_dir: None,
            class_list: None,
        }
    }
}

impl DatasetLayout {
    fn annotations_path(&self, root: &Path) -> PathBuf {
        match &self.annotations_dir {
            Some(d) => root.join(d),
            None => {
                let primary = root.join("annotations");
                let dota = root.join("labelTxt");
                if !primary.is_dir() && dota.is_dir() {
                    dota
                } else {
                    primary
                }
            }
        }
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// Indexes `<root>/<images_dir>` against same-stem annotation files.
///
/// Images without an annotation file become negative images. Dimensions
/// come from the image header only. Objects are clamped to the image and
/// dropped if nothing remains.
pub fn discover_dataset(root: &Path, layout: &DatasetLayout) -> Result<DatasetIndex> {
    if !root.is_dir() {
        return Err(Error::Indexing(format!(
            "dataset root '{}' is not a directory",
            root.display()
        )));
    }
    let images_dir = root.join(&layout.images_dir);
    let ann_dir = layout.annotations_path(root);

    let mut by_stem: BTreeMap<String, PathBuf> = BTreeMap::new();
    if images_dir.is_dir() {
        let entries = fs::read_dir(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
        let mut paths = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&images_dir, e))?;
            let path = entry.path();
            if path.is_file() && is_image(&path) {
                paths.push(path);
            }
        }
        paths.sort();
        for path in paths {
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::Indexing(format!("non-UTF-8 file name '{}'", path.display())))?
                .to_string();
            if let Some(first) = by_stem.get(&stem) {
                return Err(Error::DuplicateStem {
                    stem,
                    first: first.clone(),
                    second: path,
                });
            }
            by_stem.insert(stem, path);
        }
    }

    let declared = match &layout.class_list {
        Some(p) => read_class_list(p)?,
        None => {
            let p = root.join(CLASS_LIST_FILE);
            if p.is_file() {
                read_class_list(&p)?
            } else {
                Vec::new()
            }
        }
    };

    let probed: Vec<Result<ImageRecord>> = by_stem
        .into_par_iter()
        .map(|(stem, path)| {
            let (width, height) = image::image_dimensions(&path).map_err(|e| {
                Error::Indexing(format!("unreadable image header '{}': {e}", path.display()))
            })?;
            let ann_path = ann_dir.join(format!("{stem}.{ANNOTATION_EXTENSION}"));
            let objects = if ann_path.is_file() {
                read_annotation_file(&ann_path, &stem)?
                    .into_iter()
                    .filter_map(|o| {
                        let clamped = o.clamped_to(width, height);
                        if clamped.is_none() {
                            warn!("{stem}: object of class '{}' lies outside the image", o.class_name);
                        }
                        clamped
                    })
                    .collect()
            } else {
                Vec::new()
            };
            Ok(ImageRecord {
                image_id: stem,
                path,
                width,
                height,
                objects,
            })
        })
        .collect();
    let images = probed.into_iter().collect::<Result<Vec<_>>>()?;
    DatasetIndex::new(root, images, &declared)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::HBox;
    use proptest::prelude::*;

    #[test]
    fn parses_header_and_object() {
        let text = "imagesource:GoogleEarth\ngsd:0.1\n10 10 20 10 20 20 10 20 plane 0";
        let recs = parse_dota_annotation(text, "img").unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].class_name, "plane");
        assert!(!recs[0].difficult);
        assert_eq!(*recs[0].hbox(), HBox::new(10., 10., 20., 20.).unwrap());
    }

    #[test]
    fn empty_text_is_empty_list() {
        assert!(parse_dota_annotation("", "img").unwrap().is_empty());
        assert!(parse_dota_annotation("\n\n  \n", "img").unwrap().is_empty());
    }

    #[test]
    fn wrong_arity_reports_line() {
        match parse_dota_annotation("1 2 3 plane 0", "img") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        match parse_dota_annotation("gsd:1\n\n1 2 3 4 5 6 7 x plane 0", "img") {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("'x'"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn difficult_flag_must_be_binary() {
        assert!(parse_dota_annotation("0 0 1 0 1 1 0 1 plane 2", "img").is_err());
        let r = parse_dota_annotation("0 0 1 0 1 1 0 1 plane 1", "img").unwrap();
        assert!(r[0].difficult);
    }

    #[test]
    fn negative_coordinates_clamp_to_zero() {
        let r = parse_dota_annotation("-1 -2 10 -1 10 10 -1 10 ship 0", "img").unwrap();
        assert_eq!(*r[0].hbox(), HBox::new(0., 0., 10., 10.).unwrap());
        let text = write_dota_annotation(&r);
        assert_eq!(text, "0 0 10 0 10 10 0 10 ship 0\n");
    }

    #[test]
    fn zero_area_line_is_skipped() {
        let r = parse_dota_annotation("5 5 9 5 9 5 5 5 ship 0\n0 0 1 0 1 1 0 1 ship 0", "img").unwrap();
        assert_eq!(r.len(), 1);
    }

    #[test]
    fn write_formats() {
        assert_eq!(write_dota_annotation(&[]), "");
        let r = parse_dota_annotation("10.5 10 20 10 20 20.25 10.5 20.25 small-vehicle 0", "img").unwrap();
        let line = write_dota_annotation(&r);
        assert_eq!(line, "10.5 10 20 10 20 20.25 10.5 20.25 small-vehicle 0\n");
        assert_eq!(parse_dota_annotation(&line, "img").unwrap(), r);
    }

    fn arb_record() -> impl Strategy<Value = ObjectRecord> {
        (
            proptest::array::uniform8(0u32..8000),
            prop::sample::select(vec!["plane", "ship", "helipad", "small-vehicle"]),
            any::<bool>(),
        )
            .prop_filter_map("degenerate", |(c, class, d)| {
                let coords = c.map(|v| f64::from(v) / 2.0);
                QuadBox::from_flat(coords)
                    .and_then(|q| ObjectRecord::new(q, class, d))
                    .ok()
            })
    }

    proptest! {
        #[test]
        fn write_parse_round_trip(recs in prop::collection::vec(arb_record(), 0..20)) {
            let text = write_dota_annotation(&recs);
            let back = parse_dota_annotation(&text, "img").unwrap();
            prop_assert_eq!(&back, &recs);
            prop_assert_eq!(write_dota_annotation(&back), text);
        }
    }
}
