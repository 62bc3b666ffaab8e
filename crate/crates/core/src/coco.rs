//! COCO-style JSON export for downstream detectors.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DatasetIndex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoDocument {
    pub images: Vec<CocoImage>,
    pub categories: Vec<CocoCategory>,
    pub annotations: Vec<CocoAnnotation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: u64,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    /// `[x, y, width, height]`
    pub bbox: [f64; 4],
    pub area: f64,
    pub iscrowd: u8,
}

fn round6(v: f64) -> f64 {
    let r = (v * 1e6).round() / 1e6;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Builds the document. Ids are dense from 1 in index order; category ids
/// follow `class_names`.
pub fn to_coco(ds: &DatasetIndex) -> CocoDocument {
    let categories: Vec<CocoCategory> = ds
        .class_names
        .iter()
        .enumerate()
        .map(|(i, name)| CocoCategory {
            id: i as u64 + 1,
            name: name.clone(),
        })
        .collect();
    let cat_ids: HashMap<&str, u64> = categories.iter().map(|c| (c.name.as_str(), c.id)).collect();

    let mut images = Vec::with_capacity(ds.images.len());
    let mut annotations = Vec::with_capacity(ds.object_count());
    for (i, img) in ds.images.iter().enumerate() {
        let image_id = i as u64 + 1;
        let file_name = img
            .path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| img.image_id.clone());
        images.push(CocoImage {
            id: image_id,
            file_name,
            width: img.width,
            height: img.height,
        });
        for obj in &img.objects {
            let b = obj.hbox();
            let (w, h) = (round6(b.width()), round6(b.height()));
            annotations.push(CocoAnnotation {
                id: annotations.len() as u64 + 1,
                image_id,
                category_id: cat_ids[obj.class_name.as_str()],
                bbox: [round6(b.xmin()), round6(b.ymin()), w, h],
                area: round6(b.area()),
                iscrowd: 0,
            });
        }
    }
    CocoDocument {
        images,
        categories,
        annotations,
    }
}

pub fn write_coco_dataset(ds: &DatasetIndex, out: &Path) -> Result<()> {
    let doc = to_coco(ds);
    let mut text = serde_json::to_string_pretty(&doc).map_err(|e| Error::json(out, e))?;
    text.push('\n');
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(out, text).map_err(|e| Error::io(out, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::HBox;
    use crate::model::{ImageRecord, ObjectRecord};

    fn ds_with(objects: Vec<ObjectRecord>, declared: &[&str]) -> DatasetIndex {
        let declared: Vec<String> = declared.iter().map(|s| s.to_string()).collect();
        DatasetIndex::new(
            "/d",
            vec![ImageRecord {
                image_id: "p0001".into(),
                path: "/d/images/p0001.png".into(),
                width: 64,
                height: 64,
                objects,
            }],
            &declared,
        )
        .unwrap()
    }

    #[test]
    fn bbox_is_xywh() {
        let o = ObjectRecord::from_hbox(HBox::new(10., 10., 20., 20.).unwrap(), "plane", false).unwrap();
        let doc = to_coco(&ds_with(vec![o], &[]));
        assert_eq!(doc.images[0].file_name, "p0001.png");
        let a = &doc.annotations[0];
        assert_eq!(a.bbox, [10., 10., 10., 10.]);
        assert_eq!(a.area, 100.);
        assert_eq!((a.id, a.image_id, a.category_id, a.iscrowd), (1, 1, 1, 0));
    }

    #[test]
    fn empty_index_has_three_empty_arrays() {
        let doc = to_coco(&DatasetIndex::empty("/d"));
        let v = serde_json::to_value(&doc).unwrap();
        assert_eq!(v, serde_json::json!({"images": [], "categories": [], "annotations": []}));
    }

    #[test]
    fn unused_declared_class_is_listed() {
        let o = ObjectRecord::from_hbox(HBox::new(1., 1., 2., 2.).unwrap(), "ship", false).unwrap();
        let doc = to_coco(&ds_with(vec![o], &["helipad", "ship"]));
        let names: Vec<_> = doc.categories.iter().map(|c| (c.id, c.name.as_str())).collect();
        assert_eq!(names, [(1, "helipad"), (2, "ship")]);
        assert_eq!(doc.annotations[0].category_id, 2);
    }

    #[test]
    fn key_order_is_fixed() {
        let o = ObjectRecord::from_hbox(HBox::new(1., 1., 2.5, 2.).unwrap(), "ship", false).unwrap();
        let text = serde_json::to_string(&to_coco(&ds_with(vec![o], &[]))).unwrap();
        let i = text.find("\"images\"").unwrap();
        let c = text.find("\"categories\"").unwrap();
        let a = text.find("\"annotations\"").unwrap();
        assert!(i < c && c < a);
        assert!(text.contains("\"bbox\":[1.0,1.0,1.5,1.0],\"area\":1.5"));
    }
}
