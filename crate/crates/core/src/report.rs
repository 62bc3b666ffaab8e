//! Class-frequency reports and before/after comparisons.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DatasetIndex;
use crate::stats::{compute_class_stats, LongTailPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ReportBasis {
    Original,
    Tiled,
    Augmented,
}

impl ReportBasis {
    pub fn as_str(&self) -> &'static str {
        match self {
            ReportBasis::Original => "original",
            ReportBasis::Tiled => "tiled",
            ReportBasis::Augmented => "augmented",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub image_count: usize,
    pub instance_count: usize,
    pub area_range: Option<(f64, f64)>,
    pub aspect_range: Option<(f64, f64)>,
    pub long_tail: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTotals {
    /// Number of images in the dataset, negatives included.
    pub images: usize,
    /// Sum of per-class image counts.
    pub image_count: usize,
    pub instance_count: usize,
    pub long_tail_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub basis: ReportBasis,
    pub long_tail_max_images: usize,
    /// Descending by image count, ties by name.
    pub rows: Vec<ReportRow>,
    pub totals: ReportTotals,
}

pub fn build_report(ds: &DatasetIndex, policy: &LongTailPolicy, basis: ReportBasis) -> DatasetReport {
    let stats = compute_class_stats(ds);
    let mut rows: Vec<ReportRow> = stats
        .into_values()
        .map(|s| ReportRow {
            long_tail: policy.is_long_tail(s.image_count),
            name: s.class_name,
            image_count: s.image_count,
            instance_count: s.instance_count,
            area_range: s.area_range,
            aspect_range: s.aspect_range,
        })
        .collect();
    rows.sort_by(|a, b| b.image_count.cmp(&a.image_count).then_with(|| a.name.cmp(&b.name)));
    let totals = ReportTotals {
        images: ds.images.len(),
        image_count: rows.iter().map(|r| r.image_count).sum(),
        instance_count: rows.iter().map(|r| r.instance_count).sum(),
        long_tail_classes: rows.iter().filter(|r| r.long_tail).count(),
    };
    DatasetReport {
        basis,
        long_tail_max_images: policy.max_images,
        rows,
        totals,
    }
}

fn fmt_range(r: Option<(f64, f64)>) -> String {
    match r {
        Some((lo, hi)) => format!("{lo:.1}-{hi:.1}"),
        None => "-".into(),
    }
}

fn fmt_ratio_range(r: Option<(f64, f64)>) -> String {
    match r {
        Some((lo, hi)) => format!("{lo:.3}-{hi:.3}"),
        None => "-".into(),
    }
}

impl DatasetReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    /// Fixed-width table, one row per class.
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(5).max(5);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "basis: {}  long-tail: 0 < images <= {}",
            self.basis.as_str(),
            self.long_tail_max_images
        );
        let _ = writeln!(
            out,
            "{:<width$}  {:>8}  {:>10}  {:<22}  {:<14}  long-tail",
            "class", "images", "instances", "area", "aspect"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<width$}  {:>8}  {:>10}  {:<22}  {:<14}  {}",
                r.name,
                r.image_count,
                r.instance_count,
                fmt_range(r.area_range),
                fmt_ratio_range(r.aspect_range),
                if r.long_tail { "yes" } else { "no" }
            );
        }
        let _ = writeln!(
            out,
            "{:<width$}  {:>8}  {:>10}  ({} images, {} long-tail classes)",
            "total", self.totals.image_count, self.totals.instance_count, self.totals.images, self.totals.long_tail_classes
        );
        out
    }

    /// Writes `<stem>.json` and `<stem>.txt` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join(format!("{stem}.json"));
        fs::write(&json, self.to_json()).map_err(|e| Error::io(&json, e))?;
        let txt = dir.join(format!("{stem}.txt"));
        fs::write(&txt, self.to_text()).map_err(|e| Error::io(&txt, e))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffRow {
    pub name: String,
    pub images_before: usize,
    pub images_after: usize,
    pub image_delta: i64,
    pub instances_before: usize,
    pub instances_after: usize,
    pub instance_delta: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportDiff {
    pub before: ReportBasis,
    pub after: ReportBasis,
    /// Union of both class sets, sorted by name.
    pub rows: Vec<DiffRow>,
}

/// (images, instances)
type Counts = (usize, usize);

/// Per-class deltas `b - a`; a class missing on one side counts as zero.
pub fn diff_reports(a: &DatasetReport, b: &DatasetReport) -> ReportDiff {
    let mut merged: BTreeMap<&str, (Counts, Counts)> = BTreeMap::new();
    for r in &a.rows {
        merged.entry(&r.name).or_default().0 = (r.image_count, r.instance_count);
    }
    for r in &b.rows {
        merged.entry(&r.name).or_default().1 = (r.image_count, r.instance_count);
    }
    let rows = merged
        .into_iter()
        .map(|(name, ((ia, na), (ib, nb)))| DiffRow {
            name: name.to_string(),
            images_before: ia,
            images_after: ib,
            image_delta: ib as i64 - ia as i64,
            instances_before: na,
            instances_after: nb,
            instance_delta: nb as i64 - na as i64,
        })
        .collect();
    ReportDiff {
        before: a.basis,
        after: b.basis,
        rows,
    }
}

impl ReportDiff {
    pub fn is_zero(&self) -> bool {
        self.rows.iter().all(|r| r.image_delta == 0 && r.instance_delta == 0)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("diff serializes");
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(5).max(5);
        let mut out = String::new();
        let _ = writeln!(out, "{} -> {}", self.before.as_str(), self.after.as_str());
        let _ = writeln!(
            out,
            "{:<width$}  {:>8}  {:>8}  {:>8}  {:>10}  {:>10}  {:>8}",
            "class", "img-a", "img-b", "delta", "inst-a", "inst-b", "delta"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<width$}  {:>8}  {:>8}  {:>+8}  {:>10}  {:>10}  {:>+8}",
                r.name, r.images_before, r.images_after, r.image_delta, r.instances_before, r.instances_after, r.instance_delta
            );
        }
        out
    }

    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join(format!("{stem}.json"));
        fs::write(&json, self.to_json()).map_err(|e| Error::io(&json, e))?;
        let txt = dir.join(format!("{stem}.txt"));
        fs::write(&txt, self.to_text()).map_err(|e| Error::io(&txt, e))
    }
}
