//! Per-class geometry and frequency statistics.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DatasetIndex;

/// Empirical box geometry of one class. Lists are sorted ascending;
/// `instances` keeps the (area, aspect) pairing that the sorted lists lose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub class_name: String,
    pub image_count: usize,
    pub instance_count: usize,
    pub areas: Vec<f64>,
    /// Width over height of each hbox.
    pub aspect_ratios: Vec<f64>,
    pub instances: Vec<(f64, f64)>,
    pub area_range: Option<(f64, f64)>,
    pub aspect_range: Option<(f64, f64)>,
}

impl ClassStats {
    /// Builds stats from `(area, aspect)` pairs.
    pub fn from_instances(class_name: impl Into<String>, image_count: usize, mut instances: Vec<(f64, f64)>) -> Self {
        instances.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let mut areas: Vec<f64> = instances.iter().map(|p| p.0).collect();
        let mut aspect_ratios: Vec<f64> = instances.iter().map(|p| p.1).collect();
        areas.sort_by(f64::total_cmp);
        aspect_ratios.sort_by(f64::total_cmp);
        let range = |v: &[f64]| Some((*v.first()?, *v.last()?));
        Self {
            class_name: class_name.into(),
            image_count,
            instance_count: instances.len(),
            area_range: range(&areas),
            aspect_range: range(&aspect_ratios),
            areas,
            aspect_ratios,
            instances,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.instance_count == 0
    }
}

/// Nearest-rank quantiles at 0%, 10%, ..., 100% of a sorted list.
pub fn deciles(sorted: &[f64]) -> Vec<f64> {
    if sorted.is_empty() {
        return Vec::new();
    }
    let last = sorted.len() - 1;
    (0..=10)
        .map(|d| sorted[(d * last + 5) / 10])
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LongTailPolicy {
    pub max_images: usize,
}

impl Default for LongTailPolicy {
    fn default() -> Self {
        Self { max_images: 200 }
    }
}

impl LongTailPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.max_images == 0 {
            return Err(Error::InvalidConfig("long-tail max_images must be at least 1".into()));
        }
        Ok(())
    }

    pub fn is_long_tail(&self, image_count: usize) -> bool {
        image_count > 0 && image_count <= self.max_images
    }
}

pub type StatsMap = BTreeMap<String, ClassStats>;

/// Counts and sorted geometry per class. Declared classes without objects
/// get zero counts.
pub fn compute_class_stats(ds: &DatasetIndex) -> StatsMap {
    let mut pairs: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    let mut images: BTreeMap<&str, usize> = BTreeMap::new();
    for name in &ds.class_names {
        pairs.entry(name).or_default();
        images.entry(name).or_default();
    }
    for img in &ds.images {
        let mut present: HashSet<&str> = HashSet::new();
        for obj in &img.objects {
            let b = obj.hbox();
            pairs
                .entry(&obj.class_name)
                .or_default()
                .push((b.area(), b.aspect_ratio()));
            present.insert(&obj.class_name);
        }
        for name in present {
            *images.entry(name).or_default() += 1;
        }
    }
    pairs
        .into_iter()
        .map(|(name, inst)| {
            let count = images.get(name).copied().unwrap_or(0);
            (name.to_string(), ClassStats::from_instances(name, count, inst))
        })
        .collect()
}

/// Classes with `0 < image_count <= max_images`, rarest first, ties by name.
pub fn long_tail_classes(stats: &StatsMap, policy: &LongTailPolicy) -> Vec<String> {
    let mut out: Vec<(usize, &str)> = stats
        .values()
        .filter(|s| policy.is_long_tail(s.image_count))
        .map(|s| (s.image_count, s.class_name.as_str()))
        .collect();
    out.sort();
    out.into_iter().map(|(_, n)| n.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStatsEntry {
    #[serde(flatten)]
    pub stats: ClassStats,
    pub area_deciles: Vec<f64>,
    pub aspect_deciles: Vec<f64>,
}

/// On-disk statistics document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsDocument {
    /// Which dataset the numbers were computed on (`original`, `tiled`, ...).
    pub basis: String,
    pub classes: Vec<ClassStatsEntry>,
}

impl StatsDocument {
    pub fn new(basis: impl Into<String>, stats: &StatsMap) -> Self {
        let classes = stats
            .values()
            .map(|s| ClassStatsEntry {
                area_deciles: deciles(&s.areas),
                aspect_deciles: deciles(&s.aspect_ratios),
                stats: s.clone(),
            })
            .collect();
        Self {
            basis: basis.into(),
            classes,
        }
    }

    pub fn into_map(self) -> StatsMap {
        self.classes
            .into_iter()
            .map(|e| (e.stats.class_name.clone(), e.stats))
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::HBox;
    use crate::model::{ImageRecord, ObjectRecord};
    use proptest::prelude::*;

    fn obj(w: f64, h: f64, class: &str) -> ObjectRecord {
        ObjectRecord::from_hbox(HBox::new(0., 0., w, h).unwrap(), class, false).unwrap()
    }

    fn image(id: &str, objects: Vec<ObjectRecord>) -> ImageRecord {
        ImageRecord {
            image_id: id.into(),
            path: format!("{id}.png").into(),
            width: 512,
            height: 512,
            objects,
        }
    }

    #[test]
    fn two_planes_one_image() {
        let ds = DatasetIndex::new("/d", vec![image("a", vec![obj(10., 10., "plane"), obj(20., 5., "plane")])], &[]).unwrap();
        let s = &compute_class_stats(&ds)["plane"];
        assert_eq!(s.instance_count, 2);
        assert_eq!(s.image_count, 1);
        assert_eq!(s.areas, [100., 100.]);
        assert_eq!(s.aspect_ratios, [1.0, 4.0]);
        assert_eq!(s.area_range, Some((100., 100.)));
        assert_eq!(s.aspect_range, Some((1.0, 4.0)));
    }

    #[test]
    fn empty_and_declared() {
        assert!(compute_class_stats(&DatasetIndex::empty("/d")).is_empty());
        let ds = DatasetIndex::new("/d", vec![], &["helipad".into()]).unwrap();
        let s = &compute_class_stats(&ds)["helipad"];
        assert_eq!((s.image_count, s.instance_count), (0, 0));
        assert!(s.areas.is_empty() && s.area_range.is_none());
    }

    fn stats_with_counts(counts: &[(&str, usize)]) -> StatsMap {
        counts
            .iter()
            .map(|&(n, c)| (n.to_string(), ClassStats::from_instances(n, c, vec![(1.0, 1.0); c])))
            .collect()
    }

    #[test]
    fn long_tail_threshold() {
        let stats = stats_with_counts(&[("small-vehicle", 24_341), ("helipad", 91), ("baseball-diamond", 200), ("ghost", 0), ("x", 201)]);
        let lt = long_tail_classes(&stats, &LongTailPolicy::default());
        assert_eq!(lt, ["helipad", "baseball-diamond"]);
    }

    #[test]
    fn long_tail_ties_by_name() {
        let stats = stats_with_counts(&[("b", 5), ("a", 5), ("c", 1)]);
        assert_eq!(long_tail_classes(&stats, &LongTailPolicy::default()), ["c", "a", "b"]);
    }

    #[test]
    fn decile_nearest_rank() {
        let v: Vec<f64> = (0..=100).map(f64::from).collect();
        assert_eq!(deciles(&v), (0..=10).map(|d| f64::from(d * 10)).collect::<Vec<_>>());
        assert_eq!(deciles(&[3.0]), vec![3.0; 11]);
        assert!(deciles(&[]).is_empty());
    }

    #[test]
    fn document_round_trip() {
        let ds = DatasetIndex::new("/d", vec![image("a", vec![obj(10., 3., "plane"), obj(7., 5., "ship")])], &[]).unwrap();
        let stats = compute_class_stats(&ds);
        let doc = StatsDocument::new("tiled", &stats);
        let text = serde_json::to_string(&doc).unwrap();
        let back: StatsDocument = serde_json::from_str(&text).unwrap();
        assert_eq!(back.into_map(), stats);
    }

    fn arb_dataset() -> impl Strategy<Value = Vec<ImageRecord>> {
        let o = (1u32..100, 1u32..100, prop::sample::select(vec!["a", "b", "c"]))
            .prop_map(|(w, h, c)| obj(f64::from(w), f64::from(h), c));
        prop::collection::vec(prop::collection::vec(o, 0..6), 0..10).prop_map(|imgs| {
            imgs.into_iter()
                .enumerate()
                .map(|(i, objs)| image(&format!("i{i}"), objs))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn aggregation_invariants(images in arb_dataset(), seed in any::<u64>()) {
            let ds = DatasetIndex::new("/d", images.clone(), &[]).unwrap();
            let stats = compute_class_stats(&ds);
            let total: usize = stats.values().map(|s| s.instance_count).sum();
            prop_assert_eq!(total, ds.object_count());
            for s in stats.values() {
                prop_assert!(s.image_count <= s.instance_count);
                prop_assert_eq!(s.areas.len(), s.instance_count);
                if let (Some((lo, hi)), Some((alo, ahi))) = (s.area_range, s.aspect_range) {
                    prop_assert!(s.areas.iter().all(|a| *a >= lo && *a <= hi && *a > 0.0));
                    prop_assert!(s.aspect_ratios.iter().all(|a| *a >= alo && *a <= ahi && *a > 0.0));
                }
            }
            // permutation invariance
            let mut shuffled = images;
            use rand::seq::SliceRandom;
            shuffled.shuffle(&mut crate::seed::rng_for(seed, "perm"));
            let ds2 = DatasetIndex::new("/d", shuffled, &[]).unwrap();
            prop_assert_eq!(compute_class_stats(&ds2), stats);
        }
    }
}
