//! `aerosynth` command line.
//!
//! Exit status: 0 on success, 1 when a stage fails, 2 for usage or
//! configuration errors. Log verbosity comes from `AEROSYNTH_LOG`.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand};
use log::{error, info};
use serde_json::{json, Value};

use crate::coco::write_coco_dataset;
use crate::compositor::{generate_synthetic_set, placed_per_class, BackgroundSource, CompositionConfig};
use crate::dota::{discover_dataset, DatasetLayout};
use crate::error::{Error, Result};
use crate::pipeline::{run_pipeline, PipelineConfig};
use crate::pool::{ingest_pool, make_mock_pool};
use crate::report::{build_report, diff_reports, ReportBasis};
use crate::roi::{
    extract_crops, read_crop_records, read_manifest_entries, sample_finetune_set, write_manifest,
    SamplingConfig, SamplingStrategy, CROPS_FILE,
};
use crate::stats::{compute_class_stats, long_tail_classes, LongTailPolicy, StatsDocument, StatsMap};
use crate::tiler::{tile_dataset, TilingConfig};

pub const LOG_ENV: &str = "AEROSYNTH_LOG";

#[derive(Debug, Parser)]
#[command(name = "aerosynth", version, about = "Synthetic copy-paste augmentation for aerial detection datasets")]
pub struct Cli {
    /// Write a machine-readable JSON summary of the run here.
    #[arg(long, global = true)]
    pub summary: Option<PathBuf>,

    /// Worker threads for parallel stages (default: available parallelism).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// Dataset root holding images/ and annotations/ (or labelTxt/).
    #[arg(long)]
    pub input: PathBuf,
    /// Class list pinning category order (default: <input>/classes.txt if present).
    #[arg(long)]
    pub class_list: Option<PathBuf>,
    /// Annotation directory name under the root.
    #[arg(long)]
    pub annotations_dir: Option<String>,
}

impl DatasetArgs {
    fn layout(&self) -> DatasetLayout {
        DatasetLayout {
            annotations_dir: self.annotations_dir.clone(),
            class_list: self.class_list.clone(),
            ..DatasetLayout::default()
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Slice images into overlapping tiles with re-assigned annotations.
    Tile {
        #[command(flatten)]
        dataset: DatasetArgs,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 512)]
        tile_size: u32,
        #[arg(long, default_value_t = 200)]
        overlap: u32,
        #[arg(long, default_value_t = 0.5)]
        visibility_threshold: f64,
        #[arg(long, action = ArgAction::Set, default_value_t = true)]
        keep_empty_tiles: bool,
        /// Also export the tiled dataset as COCO JSON.
        #[arg(long)]
        coco: Option<PathBuf>,
    },
    /// Crop every object with a margin and attach its prompt.
    ExtractRois {
        #[command(flatten)]
        dataset: DatasetArgs,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 10.0)]
        margin: f64,
    },
    /// Assemble the balanced finetune manifest from extracted crops.
    SampleFinetune {
        /// crops.jsonl, or the directory containing it.
        #[arg(long)]
        crops: PathBuf,
        /// Manifest path (JSON Lines).
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = SamplingStrategy::MinResControl)]
        strategy: SamplingStrategy,
        #[arg(long, default_value_t = 15)]
        min_size: u32,
        #[arg(long, default_value_t = 200)]
        cap: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a deterministic placeholder instance pool.
    MockPool {
        #[arg(long)]
        output: PathBuf,
        /// Comma-separated class names.
        #[arg(long, value_delimiter = ',', required_unless_present = "manifest")]
        classes: Vec<String>,
        /// Take the class list from a finetune manifest instead.
        #[arg(long, conflicts_with = "classes")]
        manifest: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Validate and count an instance pool directory.
    IngestPool {
        #[arg(long)]
        pool: PathBuf,
    },
    /// Paste pool instances onto backgrounds and write a synthetic dataset.
    Compose {
        #[command(flatten)]
        dataset: DatasetArgs,
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Statistics JSON from `report`; computed from --stats-dataset or --input otherwise.
        #[arg(long)]
        stats: Option<PathBuf>,
        #[arg(long, conflicts_with = "stats")]
        stats_dataset: Option<PathBuf>,
        /// JSON file with a composition config; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        min_instances: Option<u32>,
        #[arg(long)]
        max_instances: Option<u32>,
        #[arg(long)]
        max_attempts: Option<u32>,
        #[arg(long)]
        collision_iou_max: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        class_filter: Option<Vec<String>>,
        #[arg(long)]
        geometry_jitter: Option<f64>,
        #[arg(long, value_enum)]
        background_source: Option<BackgroundSource>,
    },
    /// Class frequency report (report.json, report.txt, stats.json).
    Report {
        #[command(flatten)]
        dataset: DatasetArgs,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = ReportBasis::Tiled)]
        basis: ReportBasis,
        #[arg(long, default_value_t = 200)]
        max_images: usize,
        /// Second dataset to compare against (writes diff.json, diff.txt).
        #[arg(long)]
        compare: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ReportBasis::Augmented)]
        compare_basis: ReportBasis,
        /// Also export the dataset as COCO JSON.
        #[arg(long)]
        coco: Option<PathBuf>,
    },
    /// Run every stage from a JSON config.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        /// Validate and print the plan without writing anything.
        #[arg(long)]
        dry_run: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output_root: Option<PathBuf>,
        #[arg(long)]
        synthetic_count: Option<usize>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Tile { .. } => "tile",
            Command::ExtractRois { .. } => "extract-rois",
            Command::SampleFinetune { .. } => "sample-finetune",
            Command::MockPool { .. } => "mock-pool",
            Command::IngestPool { .. } => "ingest-pool",
            Command::Compose { .. } => "compose",
            Command::Report { .. } => "report",
            Command::Pipeline { .. } => "pipeline",
        }
    }
}

fn counts_json<I: IntoIterator<Item = (String, usize)>>(it: I) -> Value {
    Value::Object(it.into_iter().map(|(k, v)| (k, json!(v))).collect())
}

fn load_stats(stats: Option<&Path>, stats_dataset: Option<&Path>, fallback: &crate::model::DatasetIndex) -> Result<StatsMap> {
    if let Some(p) = stats {
        return Ok(StatsDocument::read(p)?.into_map());
    }
    if let Some(root) = stats_dataset {
        return Ok(compute_class_stats(&discover_dataset(root, &DatasetLayout::default())?));
    }
    Ok(compute_class_stats(fallback))
}

fn execute(command: Command) -> Result<Value> {
    match command {
        Command::Tile {
            dataset,
            output,
            tile_size,
            overlap,
            visibility_threshold,
            keep_empty_tiles,
            coco,
        } => {
            let cfg = TilingConfig {
                tile_size,
                overlap,
                visibility_threshold,
                keep_empty_tiles,
            };
            cfg.validate()?;
            let ds = discover_dataset(&dataset.input, &dataset.layout())?;
            let out = tile_dataset(&ds, &cfg, &output)?;
            if let Some(path) = &coco {
                write_coco_dataset(&out.index, path)?;
            }
            Ok(json!({
                "source_images": ds.images.len(),
                "tiles": out.index.images.len(),
                "objects": out.index.object_count(),
                "failures": out.failures,
                "output": output,
            }))
        }
        Command::ExtractRois { dataset, output, margin } => {
            let ds = discover_dataset(&dataset.input, &dataset.layout())?;
            let out = extract_crops(&ds, margin, &output)?;
            Ok(json!({
                "crops": out.crops.len(),
                "failures": out.failures,
                "index": output.join(CROPS_FILE),
            }))
        }
        Command::SampleFinetune {
            crops,
            output,
            strategy,
            min_size,
            cap,
            seed,
        } => {
            let crops_path = if crops.is_dir() { crops.join(CROPS_FILE) } else { crops };
            let records = read_crop_records(&crops_path)?;
            let cfg = SamplingConfig {
                strategy,
                min_size,
                per_class_cap: cap,
                seed,
            };
            let manifest = sample_finetune_set(&records, &cfg)?;
            write_manifest(&manifest, &output)?;
            Ok(json!({
                "candidates": records.len(),
                "entries": manifest.entries.len(),
                "per_class": counts_json(manifest.per_class_counts()),
                "warnings": manifest.warnings,
                "manifest": output,
            }))
        }
        Command::MockPool {
            output,
            classes,
            manifest,
            per_class,
            seed,
        } => {
            let classes = match manifest {
                Some(m) => read_manifest_entries(&m)?
                    .into_iter()
                    .map(|e| e.class_name)
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect(),
                None => classes,
            };
            let pool = make_mock_pool(&classes, per_class, seed, &output)?;
            Ok(json!({ "entries": pool.len(), "per_class": counts_json(pool.counts()), "pool": output }))
        }
        Command::IngestPool { pool } => {
            let index = ingest_pool(&pool)?;
            Ok(json!({
                "entries": index.len(),
                "per_class": counts_json(index.counts()),
                "warnings": index.warnings,
            }))
        }
        Command::Compose {
            dataset,
            pool,
            output,
            stats,
            stats_dataset,
            config,
            count,
            seed,
            min_instances,
            max_instances,
            max_attempts,
            collision_iou_max,
            class_filter,
            geometry_jitter,
            background_source,
        } => {
            let mut cfg = match &config {
                Some(p) => {
                    let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                    serde_json::from_str::<CompositionConfig>(&text)
                        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", p.display())))?
                }
                None => CompositionConfig::default(),
            };
            if let Some(v) = seed {
                cfg.seed = v;
            }
            if let Some(v) = min_instances {
                cfg.instances_per_image.0 = v;
            }
            if let Some(v) = max_instances {
                cfg.instances_per_image.1 = v;
            }
            if let Some(v) = max_attempts {
                cfg.max_placement_attempts = v;
            }
            if let Some(v) = collision_iou_max {
                cfg.collision_iou_max = v;
            }
            if let Some(v) = class_filter {
                cfg.class_filter = Some(v.into_iter().collect());
            }
            if let Some(v) = geometry_jitter {
                cfg.geometry_jitter = v;
            }
            if let Some(v) = background_source {
                cfg.background_source = v;
            }
            cfg.validate()?;
            let ds = discover_dataset(&dataset.input, &dataset.layout())?;
            let stats = load_stats(stats.as_deref(), stats_dataset.as_deref(), &ds)?;
            let pool = ingest_pool(&pool)?;
            let out = generate_synthetic_set(&ds, &pool, &stats, &cfg, count, &output)?;
            let per_class: std::collections::BTreeMap<_, _> = placed_per_class(&out.plans).into_iter().collect();
            Ok(json!({
                "images": out.index.images.len(),
                "pasted": out.placed(),
                "per_class": counts_json(per_class),
                "output": output,
            }))
        }
        Command::Report {
            dataset,
            output,
            basis,
            max_images,
            compare,
            compare_basis,
            coco,
        } => {
            let policy = LongTailPolicy { max_images };
            policy.validate()?;
            let ds = discover_dataset(&dataset.input, &dataset.layout())?;
            let report = build_report(&ds, &policy, basis);
            report.write(&output, "report")?;
            let stats = compute_class_stats(&ds);
            StatsDocument::new(basis.as_str(), &stats).write(&output.join("stats.json"))?;
            if let Some(path) = &coco {
                write_coco_dataset(&ds, path)?;
            }
            let mut summary = json!({
                "classes": report.rows.len(),
                "images": report.totals.images,
                "instances": report.totals.instance_count,
                "long_tail": long_tail_classes(&stats, &policy),
                "output": output,
            });
            if let Some(other) = compare {
                let ds_b = discover_dataset(&other, &DatasetLayout::default())?;
                let b = build_report(&ds_b, &policy, compare_basis);
                let diff = diff_reports(&report, &b);
                diff.write(&output, "diff")?;
                summary["diff_rows"] = json!(diff.rows.len());
            }
            Ok(summary)
        }
        Command::Pipeline {
            config,
            dry_run,
            seed,
            output_root,
            synthetic_count,
        } => {
            let mut cfg = PipelineConfig::from_file(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = output_root {
                cfg.output_root = o;
            }
            if let Some(n) = synthetic_count {
                cfg.synthetic_count = n;
            }
            cfg.validate()?;
            if dry_run {
                let plan = cfg.plan();
                println!("{plan}");
                return Ok(json!({ "dry_run": true, "plan": plan.lines().collect::<Vec<_>>(), "paths": cfg.paths() }));
            }
            let summary = run_pipeline(&cfg)?;
            Ok(serde_json::to_value(summary).expect("summary serializes"))
        }
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidConfig(_) => 2,
        _ => 1,
    }
}

fn write_summary(path: &Path, value: &Value) {
    let text = serde_json::to_string_pretty(value).expect("summary serializes") + "\n";
    if let Err(e) = fs::write(path, text) {
        error!("cannot write summary '{}': {e}", path.display());
    }
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "info"))
        .format_timestamp(None)
        .try_init();

    let name = cli.command.name();
    let dry_run = matches!(cli.command, Command::Pipeline { dry_run: true, .. });
    let result = match cli.jobs {
        Some(0) => Err(Error::InvalidConfig("--jobs must be at least 1".into())),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| execute(cli.command)),
            Err(e) => Err(Error::InvalidConfig(format!("cannot build worker pool: {e}"))),
        },
        None => execute(cli.command),
    };
    let (code, body) = match result {
        Ok(details) => {
            info!("{name}: done");
            (0, json!({ "command": name, "status": "ok", "details": details }))
        }
        Err(e) => {
            error!("{name}: {e}");
            let code = exit_code(&e);
            (code, json!({ "command": name, "status": "error", "exit_code": code, "error": e.to_string() }))
        }
    };
    match &cli.summary {
        // a dry run touches nothing on disk
        Some(_) if dry_run => println!("{}", serde_json::to_string_pretty(&body).expect("summary serializes")),
        Some(path) => write_summary(path, &body),
        None => {}
    }
    code
}
