//! End-to-end run: tile, extract, sample, pool, compose, report.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::coco::write_coco_dataset;
use crate::compositor::{generate_synthetic_set, CompositionConfig};
use crate::dota::{discover_dataset, DatasetLayout};
use crate::error::{Error, Result};
use crate::model::DatasetIndex;
use crate::pool::{ingest_pool, make_mock_pool};
use crate::report::{build_report, diff_reports, ReportBasis};
use crate::roi::{extract_crops, sample_finetune_set, write_manifest, SamplingConfig, DEFAULT_MARGIN};
use crate::seed::derive_seed;
use crate::stats::{compute_class_stats, long_tail_classes, LongTailPolicy, StatsDocument};
use crate::tiler::{tile_dataset, TilingConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum PoolSource {
    /// Generate a mock pool for the classes in the finetune manifest.
    Mock { per_class: usize },
    /// Use an existing pool directory.
    Directory { root: PathBuf },
}

impl Default for PoolSource {
    fn default() -> Self {
        PoolSource::Mock { per_class: 20 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatsBasis {
    Original,
    #[default]
    Tiled,
}

/// Per-stage output locations. Unset entries default to a subdirectory of
/// `output_root`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageOutputs {
    pub tiled: Option<PathBuf>,
    pub crops: Option<PathBuf>,
    pub finetune: Option<PathBuf>,
    pub pool: Option<PathBuf>,
    pub synthetic: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub dataset_root: PathBuf,
    pub output_root: PathBuf,
    #[serde(default)]
    pub outputs: StageOutputs,
    #[serde(default)]
    pub class_list: Option<PathBuf>,
    /// Master seed; sampling, mock-pool and composition seeds derive from it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default)]
    pub tiling: TilingConfig,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub composition: CompositionConfig,
    #[serde(default)]
    pub long_tail: LongTailPolicy,
    #[serde(default)]
    pub pool: PoolSource,
    #[serde(default = "default_synthetic_count")]
    pub synthetic_count: usize,
    #[serde(default)]
    pub stats_basis: StatsBasis,
}

fn default_margin() -> f64 {
    DEFAULT_MARGIN
}

fn default_synthetic_count() -> usize {
    100
}

/// Resolved output paths of every stage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StagePaths {
    pub tiled: PathBuf,
    pub crops: PathBuf,
    pub manifest: PathBuf,
    pub pool: PathBuf,
    pub synthetic: PathBuf,
    pub report: PathBuf,
    pub stats: PathBuf,
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn paths(&self) -> StagePaths {
        let o = &self.outputs;
        let or = |p: &Option<PathBuf>, d: &str| p.clone().unwrap_or_else(|| self.output_root.join(d));
        let finetune = or(&o.finetune, "finetune");
        let report = or(&o.report, "report");
        StagePaths {
            tiled: or(&o.tiled, "tiled"),
            crops: or(&o.crops, "crops"),
            manifest: finetune.join("manifest.jsonl"),
            pool: match &self.pool {
                PoolSource::Directory { root } => root.clone(),
                PoolSource::Mock { .. } => or(&o.pool, "pool"),
            },
            synthetic: or(&o.synthetic, "synthetic"),
            stats: report.join("stats.json"),
            report,
        }
    }

    /// Stage configs with seeds derived from the master seed.
    pub fn sampling_config(&self) -> SamplingConfig {
        SamplingConfig {
            seed: derive_seed(self.seed, "sampling"),
            ..self.sampling.clone()
        }
    }

    pub fn composition_config(&self) -> CompositionConfig {
        CompositionConfig {
            seed: derive_seed(self.seed, "composition"),
            ..self.composition.clone()
        }
    }

    pub fn mock_pool_seed(&self) -> u64 {
        derive_seed(self.seed, "mock-pool")
    }

    pub fn validate(&self) -> Result<()> {
        self.tiling.validate()?;
        self.sampling.validate()?;
        self.composition.validate()?;
        self.long_tail.validate()?;
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(Error::InvalidConfig(format!("margin must be non-negative, got {}", self.margin)));
        }
        if self.synthetic_count == 0 {
            return Err(Error::InvalidConfig("synthetic_count must be at least 1".into()));
        }
        if let PoolSource::Mock { per_class: 0 } = self.pool {
            return Err(Error::InvalidConfig("mock pool per_class must be at least 1".into()));
        }
        let p = self.paths();
        let stage_dirs = [
            ("tiled", &p.tiled),
            ("crops", &p.crops),
            ("finetune", &p.manifest.parent().map(Path::to_path_buf).unwrap_or_default()),
            ("pool", &p.pool),
            ("synthetic", &p.synthetic),
            ("report", &p.report),
        ];
        let mut seen: BTreeMap<&PathBuf, &str> = BTreeMap::new();
        for (name, dir) in stage_dirs {
            if dir == &self.dataset_root {
                return Err(Error::InvalidConfig(format!("{name} output would overwrite the input dataset")));
            }
            if let Some(other) = seen.insert(dir, name) {
                return Err(Error::InvalidConfig(format!(
                    "stages '{other}' and '{name}' share the output path '{}'",
                    dir.display()
                )));
            }
        }
        Ok(())
    }

    /// Human-readable plan of what a run would do.
    pub fn plan(&self) -> String {
        let p = self.paths();
        let pool = match &self.pool {
            PoolSource::Mock { per_class } => format!("generate mock pool ({per_class} per class) -> {}", p.pool.display()),
            PoolSource::Directory { root } => format!("ingest pool {}", root.display()),
        };
        [
            format!("1. discover dataset {}", self.dataset_root.display()),
            format!(
                "2. tile {}px / overlap {}px / visibility {} -> {}",
                self.tiling.tile_size,
                self.tiling.overlap,
                self.tiling.visibility_threshold,
                p.tiled.display()
            ),
            format!("3. class statistics ({:?} basis) -> {}", self.stats_basis, p.stats.display()),
            format!("4. extract ROI crops (margin {}px) -> {}", self.margin, p.crops.display()),
            format!(
                "5. sample finetune set ({:?}, min {}px, cap {}) -> {}",
                self.sampling.strategy,
                self.sampling.min_size,
                self.sampling.per_class_cap,
                p.manifest.display()
            ),
            format!("6. {pool}"),
            format!("7. compose {} synthetic images -> {}", self.synthetic_count, p.synthetic.display()),
            format!("8. reports -> {}", p.report.display()),
        ]
        .join("\n")
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineSummary {
    pub seed: u64,
    pub source_images: usize,
    pub tiled_images: usize,
    pub tile_failures: usize,
    pub crops: usize,
    pub crop_failures: usize,
    pub manifest_entries: usize,
    pub manifest_warnings: Vec<String>,
    pub pool_entries: usize,
    pub synthetic_images: usize,
    pub pasted_instances: usize,
    pub long_tail_classes: Vec<String>,
    pub paths: StagePaths,
}

fn merge(a: &DatasetIndex, b: &DatasetIndex, root: &Path) -> Result<DatasetIndex> {
    let images = a.images.iter().chain(&b.images).cloned().collect();
    let mut declared = a.class_names.clone();
    declared.extend(b.class_names.iter().cloned());
    let declared: Vec<String> = {
        let mut seen = BTreeSet::new();
        declared.into_iter().filter(|c| seen.insert(c.clone())).collect()
    };
    DatasetIndex::new(root, images, &declared)
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineSummary> {
    cfg.validate()?;
    let paths = cfg.paths();
    let layout = DatasetLayout {
        class_list: cfg.class_list.clone(),
        ..DatasetLayout::default()
    };

    let source = discover_dataset(&cfg.dataset_root, &layout)?;
    info!("discovered {} images", source.images.len());

    let tiled = tile_dataset(&source, &cfg.tiling, &paths.tiled)?;
    write_coco_dataset(&tiled.index, &paths.tiled.join("coco.json"))?;

    let stats = match cfg.stats_basis {
        StatsBasis::Tiled => compute_class_stats(&tiled.index),
        StatsBasis::Original => compute_class_stats(&source),
    };
    fs::create_dir_all(&paths.report).map_err(|e| Error::io(&paths.report, e))?;
    let basis_name = match cfg.stats_basis {
        StatsBasis::Tiled => "tiled",
        StatsBasis::Original => "original",
    };
    StatsDocument::new(basis_name, &stats).write(&paths.stats)?;

    let crops = extract_crops(&tiled.index, cfg.margin, &paths.crops)?;
    let manifest = sample_finetune_set(&crops.crops, &cfg.sampling_config())?;
    write_manifest(&manifest, &paths.manifest)?;

    let pool = match &cfg.pool {
        PoolSource::Mock { per_class } => {
            let classes = manifest.classes();
            if classes.is_empty() {
                return Err(Error::InvalidConfig("finetune manifest is empty; nothing to synthesize".into()));
            }
            make_mock_pool(&classes, *per_class, cfg.mock_pool_seed(), &paths.pool)?
        }
        PoolSource::Directory { root } => ingest_pool(root)?,
    };

    let synthetic = generate_synthetic_set(
        &tiled.index,
        &pool,
        &stats,
        &cfg.composition_config(),
        cfg.synthetic_count,
        &paths.synthetic,
    )?;
    write_coco_dataset(&synthetic.index, &paths.synthetic.join("coco.json"))?;

    let before = build_report(&tiled.index, &cfg.long_tail, ReportBasis::Tiled);
    let augmented = merge(&tiled.index, &synthetic.index, &cfg.output_root)?;
    let after = build_report(&augmented, &cfg.long_tail, ReportBasis::Augmented);
    before.write(&paths.report, "report")?;
    after.write(&paths.report, "augmented_report")?;
    diff_reports(&before, &after).write(&paths.report, "diff")?;

    Ok(PipelineSummary {
        seed: cfg.seed,
        source_images: source.images.len(),
        tiled_images: tiled.index.images.len(),
        tile_failures: tiled.failures.len(),
        crops: crops.crops.len(),
        crop_failures: crops.failures.len(),
        manifest_entries: manifest.entries.len(),
        manifest_warnings: manifest.warnings.clone(),
        pool_entries: pool.len(),
        synthetic_images: synthetic.index.images.len(),
        pasted_instances: synthetic.placed(),
        long_tail_classes: long_tail_classes(&stats, &cfg.long_tail),
        paths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> PipelineConfig {
        serde_json::from_str(r#"{"dataset_root": "/data/in", "output_root": "/runs/a"}"#).unwrap()
    }

    #[test]
    fn defaults_fill_in() {
        let c = minimal();
        assert_eq!(c.tiling, TilingConfig::default());
        assert_eq!(c.margin, 10.0);
        assert_eq!(c.pool, PoolSource::Mock { per_class: 20 });
        assert_eq!(c.paths().manifest, PathBuf::from("/runs/a/finetune/manifest.jsonl"));
        assert!(c.validate().is_ok());
    }

    #[test]
    fn stage_seeds_follow_master() {
        let a = minimal();
        let b = minimal().with_seed(1);
        assert_ne!(a.sampling_config().seed, b.sampling_config().seed);
        assert_ne!(a.composition_config().seed, a.sampling_config().seed);
    }

    #[test]
    fn colliding_outputs_rejected() {
        let mut c = minimal();
        c.outputs.crops = Some("/runs/a/tiled".into());
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
        let mut c = minimal();
        c.outputs.synthetic = Some("/data/in".into());
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let r: std::result::Result<PipelineConfig, _> =
            serde_json::from_str(r#"{"dataset_root": "a", "output_root": "b", "tilling": {}}"#);
        assert!(r.is_err());
    }

    #[test]
    fn directory_pool_parses() {
        let c: PipelineConfig = serde_json::from_str(
            r#"{"dataset_root": "a", "output_root": "b", "pool": {"source": "directory", "root": "/p"}}"#,
        )
        .unwrap();
        assert_eq!(c.paths().pool, PathBuf::from("/p"));
    }
}
