//! Annotation data model shared by every pipeline stage.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::{quad_to_hbox, HBox, QuadBox};

/// One ground-truth instance. `hbox` is always the hull of `geometry`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectRecord {
    geometry: QuadBox,
    hbox: HBox,
    pub class_name: String,
    pub difficult: bool,
}

impl ObjectRecord {
    pub fn new(geometry: QuadBox, class_name: impl Into<String>, difficult: bool) -> Result<Self> {
        let class_name = class_name.into();
        if class_name.is_empty() {
            return Err(Error::DegenerateGeometry("empty class name".into()));
        }
        let hbox = quad_to_hbox(&geometry)?;
        Ok(Self {
            geometry,
            hbox,
            class_name,
            difficult,
        })
    }

    /// Object whose quad is the corner quad of `hbox`.
    pub fn from_hbox(hbox: HBox, class_name: impl Into<String>, difficult: bool) -> Result<Self> {
        Self::new(QuadBox::from_hbox(&hbox), class_name, difficult)
    }

    pub fn geometry(&self) -> &QuadBox {
        &self.geometry
    }

    pub fn hbox(&self) -> &HBox {
        &self.hbox
    }

    /// Clamps the geometry to the image rectangle. `None` when the clamped
    /// hull has no area left.
    pub fn clamped_to(&self, width: u32, height: u32) -> Option<Self> {
        let geometry = self.geometry.clamped(f64::from(width), f64::from(height));
        Self::new(geometry, self.class_name.clone(), self.difficult).ok()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: String,
    pub path: PathBuf,
    pub width: u32,
    pub height: u32,
    pub objects: Vec<ObjectRecord>,
}

impl ImageRecord {
    pub fn bounds(&self) -> HBox {
        HBox::new(0.0, 0.0, f64::from(self.width), f64::from(self.height))
            .expect("image dimensions are positive")
    }

    pub fn is_negative(&self) -> bool {
        self.objects.is_empty()
    }
}

/// A discovered dataset. `class_names` holds declared classes first, in
/// declaration order, followed by undeclared classes in first-seen order.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub images: Vec<ImageRecord>,
    pub class_names: Vec<String>,
}

impl DatasetIndex {
    pub fn new(root: impl Into<PathBuf>, images: Vec<ImageRecord>, declared: &[String]) -> Result<Self> {
        let mut ids = HashSet::with_capacity(images.len());
        for img in &images {
            if img.width == 0 || img.height == 0 {
                return Err(Error::Indexing(format!(
                    "image '{}' has zero extent",
                    img.image_id
                )));
            }
            if !ids.insert(img.image_id.as_str()) {
                return Err(Error::Indexing(format!(
                    "duplicate image id '{}'",
                    img.image_id
                )));
            }
        }
        let mut class_names: Vec<String> = Vec::new();
        let mut seen: HashSet<String> = HashSet::new();
        let all = declared
            .iter()
            .chain(images.iter().flat_map(|i| i.objects.iter().map(|o| &o.class_name)));
        for name in all {
            if seen.insert(name.clone()) {
                class_names.push(name.clone());
            }
        }
        Ok(Self {
            root: root.into(),
            images,
            class_names,
        })
    }

    pub fn empty(root: impl AsRef<Path>) -> Self {
        Self {
            root: root.as_ref().to_path_buf(),
            images: Vec::new(),
            class_names: Vec::new(),
        }
    }

    pub fn object_count(&self) -> usize {
        self.images.iter().map(|i| i.objects.len()).sum()
    }

    pub fn negatives(&self) -> impl Iterator<Item = &ImageRecord> {
        self.images.iter().filter(|i| i.is_negative())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obj(x: f64, class: &str) -> ObjectRecord {
        ObjectRecord::from_hbox(HBox::new(x, 0., x + 5., 5.).unwrap(), class, false).unwrap()
    }

    fn img(id: &str, objects: Vec<ObjectRecord>) -> ImageRecord {
        ImageRecord {
            image_id: id.into(),
            path: PathBuf::from(format!("{id}.png")),
            width: 100,
            height: 100,
            objects,
        }
    }

    #[test]
    fn class_names_declared_then_first_seen() {
        let ds = DatasetIndex::new(
            "/d",
            vec![
                img("a", vec![obj(0., "ship"), obj(1., "plane")]),
                img("b", vec![obj(0., "ship"), obj(1., "harbor")]),
            ],
            &["plane".to_string(), "helipad".to_string()],
        )
        .unwrap();
        assert_eq!(ds.class_names, ["plane", "helipad", "ship", "harbor"]);
        assert_eq!(ds.object_count(), 4);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = DatasetIndex::new("/d", vec![img("a", vec![]), img("a", vec![])], &[]);
        assert!(matches!(err, Err(Error::Indexing(_))));
    }

    #[test]
    fn clamping_keeps_hull_consistent() {
        let q = QuadBox::from_flat([90., 90., 110., 90., 110., 105., 90., 105.]).unwrap();
        let o = ObjectRecord::new(q, "plane", false).unwrap();
        let c = o.clamped_to(100, 100).unwrap();
        assert_eq!(*c.hbox(), HBox::new(90., 90., 100., 100.).unwrap());
        assert_eq!(quad_to_hbox(c.geometry()).unwrap(), *c.hbox());
    }

    #[test]
    fn clamping_fully_outside_object_drops_it() {
        let o = ObjectRecord::from_hbox(HBox::new(120., 0., 130., 10.).unwrap(), "x", false).unwrap();
        assert!(o.clamped_to(100, 100).is_none());
    }

    #[test]
    fn empty_class_rejected() {
        assert!(ObjectRecord::from_hbox(HBox::new(0., 0., 1., 1.).unwrap(), "", false).is_err());
    }
}
