use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use difd::config::{Profile, RunConfig, DEFAULT_SEED};
use difd::dataset::{self, Generation};
use difd::error::{AppError, Result};
use difd::harness::{self, RunRecord, Splits};
use difd::{report, rstx};
use difd_core::bands::BandSelection;
use difd_core::model::Variant;
use difd_core::raster::{class_stats, preprocess_parent};
use difd_core::NUM_CLASSES;

#[derive(Parser)]
#[command(name = "difd", version, about = "Dual-input fusion segmentation of aerial and satellite rasters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "toy", value_parser = parse_profile)]
    profile: Profile,
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[arg(long, default_value = "UpConvT", value_parser = parse_variant)]
    variant: Variant,
    #[arg(long, default_value = "7B", value_parser = parse_bands)]
    bands: BandSelection,
    /// Dataset directory.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    run_id: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic paired dataset.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "7B", value_parser = parse_bands)]
        bands: BandSelection,
        #[arg(long, default_value_t = 48)]
        train: usize,
        #[arg(long, default_value_t = 16)]
        val: usize,
        #[arg(long, default_value_t = 16)]
        test: usize,
        /// Make the satellite bands label-independent noise.
        #[arg(long)]
        no_signal: bool,
    },
    /// Tile an aerial parent, crop its satellite windows and add the pairs to a dataset split.
    Preprocess {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        aerial: PathBuf,
        #[arg(long)]
        label: PathBuf,
        /// 17-band satellite raster in catalog order.
        #[arg(long)]
        sat: PathBuf,
        #[arg(long, default_value = "train")]
        split: String,
        /// Parent id; defaults to the aerial file stem.
        #[arg(long)]
        parent: Option<String>,
        #[arg(long, default_value = "7B", value_parser = parse_bands)]
        bands: BandSelection,
    },
    /// Class counts, frequencies and loss weights of a split.
    Stats {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "train")]
        split: String,
    },
    /// Train one configuration.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Score a checkpoint on a split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Run the ablation matrix.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        max_epochs: Option<usize>,
        /// Comma-separated row ids; all rows by default.
        #[arg(long, value_delimiter = ',')]
        ids: Vec<u32>,
    },
    /// Render tables and plots from run directories and an ablation file.
    Report {
        #[command(flatten)]
        common: Common,
        /// Run directories holding record.json.
        #[arg(long, num_args = 0..)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        ablation: Option<PathBuf>,
    },
}

fn parse_profile(s: &str) -> Result<Profile, String> {
    s.parse().map_err(|e: AppError| e.to_string())
}

fn parse_bands(s: &str) -> Result<BandSelection, String> {
    BandSelection::parse(s).map_err(|e| e.to_string())
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    Variant::ALL
        .into_iter()
        .find(|v| v.name().eq_ignore_ascii_case(s))
        .ok_or_else(|| format!("unknown variant {s:?}"))
}

fn out_dir(common: &Common, default: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn run_config(common: &Common, m: &ModelArgs) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::new(common.profile, m.variant, m.bands),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    if let Some(d) = &m.data {
        cfg.data_dir = d.clone();
    }
    if let Some(e) = m.max_epochs {
        cfg.max_epochs = e;
    }
    if let Some(b) = m.batch_size {
        cfg.batch_size = b;
    }
    if let Some(w) = m.workers {
        cfg.workers = w;
    }
    if let Some(r) = &m.run_id {
        cfg.run_id = r.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializes"));
}

/// Splits for `sel`: the stored dataset when it carries those bands,
/// otherwise regenerated from its synthetic recipe.
fn splits_for(data: &Path, sel: BandSelection) -> Result<Splits> {
    let manifest = dataset::read_manifest(data)?;
    if manifest.band_selection == sel {
        return Ok(Splits::load(data)?.0);
    }
    let Some(gen) = &manifest.generation else {
        return Err(AppError::config(format!(
            "dataset {} holds {} bands and has no synthetic recipe to derive {}",
            data.display(),
            manifest.band_selection.name(),
            sel.name()
        )));
    };
    let size = |s: &str| manifest.splits.get(s).map_or(0, Vec::len);
    let raw = dataset::synth_splits(gen.seed, &gen.spec, sel, &[("train", size("train")), ("val", size("val")), ("test", size("test"))])?;
    Splits::from_raw(&raw[0].1, &raw[1].1, &raw[2].1)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common, bands, train, val, test, no_signal } => {
            let out = out_dir(&common, "data");
            let seed = common.seed.unwrap_or(DEFAULT_SEED);
            let mut spec = common.profile.synth();
            spec.satellite_signal = !no_signal;
            let splits = dataset::synth_splits(seed, &spec, bands, &[("train", train), ("val", val), ("test", test)])?;
            let refs: Vec<(&str, &[_])> = splits.iter().map(|(n, p)| (n.as_str(), p.as_slice())).collect();
            let manifest = dataset::write_dataset(&out, bands, Some(Generation { seed, spec }), &refs)?;
            for (name, ids) in &manifest.splits {
                println!("{name}: {} pairs", ids.len());
            }
            println!("wrote {}", out.display());
        }
        Command::Preprocess { common, aerial, label, sat, split, parent, bands } => {
            let out = out_dir(&common, "data");
            let spec = common.profile.synth();
            let parent = parent
                .or_else(|| aerial.file_stem().map(|s| s.to_string_lossy().split('.').next().unwrap_or("").to_string()))
                .filter(|p| !p.is_empty())
                .ok_or_else(|| AppError::config("cannot derive a parent id; pass --parent"))?;
            let (a, l, s) = (rstx::read(&aerial)?, rstx::read(&label)?, rstx::read(&sat)?);
            let pairs = preprocess_parent(&parent, &a, &l, &s, spec.tile_size, spec.sat_size, bands)?;
            for p in &pairs {
                p.validate(NUM_CLASSES)?;
            }
            dataset::write_split(&out, bands, &split, &pairs)?;
            println!("{}: {} pairs added to split {split} of {}", parent, pairs.len(), out.display());
        }
        Command::Stats { common: _, data, split } => {
            let manifest = dataset::read_manifest(&data)?;
            let pairs = dataset::load_split(&data, &manifest, &split, NUM_CLASSES)?;
            print_json(&class_stats(pairs.iter().map(|p| &p.label), NUM_CLASSES)?);
        }
        Command::Train { common, model } => {
            let cfg = run_config(&common, &model)?;
            let splits = Splits::load(&cfg.data_dir)?.0;
            let rec = harness::train(&cfg, &splits)?;
            println!(
                "{}: best val mIoU {:.4} at epoch {} ({:?} after {} steps); checkpoint {}",
                rec.run_id,
                rec.best_val_miou,
                rec.best_epoch,
                rec.stop_reason,
                rec.steps,
                rec.best_checkpoint.display()
            );
        }
        Command::Eval { common, model, checkpoint, split } => {
            let cfg = run_config(&common, &model)?;
            let manifest = dataset::read_manifest(&cfg.data_dir)?;
            let pairs = dataset::load_split(&cfg.data_dir, &manifest, &split, NUM_CLASSES)?;
            let pairs = Splits::from_raw(&[], &[], &pairs)?.test;
            let row = harness::evaluate_checkpoint(&checkpoint, &cfg, &pairs, &split)?;
            if let Some(out) = &common.out {
                std::fs::create_dir_all(out).map_err(|e| AppError::io(out, e))?;
                harness::write_metrics_csv(&out.join(format!("eval_{split}.csv")), std::slice::from_ref(&row))?;
            }
            print_json(&row);
        }
        Command::Ablate { common, data, max_epochs, ids } => {
            let out = out_dir(&common, "runs");
            let mut specs = harness::paper_matrix(common.profile);
            if !ids.is_empty() {
                specs.retain(|s| ids.contains(&s.id));
            }
            if specs.is_empty() {
                return Err(AppError::config("no ablation rows selected"));
            }
            for s in &mut specs {
                s.config.out_dir = out.clone();
                s.config.data_dir = data.clone();
                if let Some(seed) = common.seed {
                    s.config.seed = seed;
                }
                if let Some(e) = max_epochs {
                    s.config.max_epochs = e;
                }
            }
            let rows = harness::ablate(&specs, |sel| splits_for(&data, sel));
            harness::save_ablation(&out.join("ablation.json"), &rows)?;
            let records: Vec<RunRecord> =
                specs.iter().filter_map(|s| RunRecord::load(&s.config.run_dir()).ok()).collect();
            let files = report::write_report(&out.join("report"), &records, &rows)?;
            println!("{}", std::fs::read_to_string(&files.markdown).map_err(|e| AppError::io(&files.markdown, e))?);
        }
        Command::Report { common, runs, ablation } => {
            let out = out_dir(&common, "report");
            let records = runs.iter().map(|r| RunRecord::load(r)).collect::<Result<Vec<_>>>()?;
            let rows = match ablation {
                Some(p) => harness::load_ablation(&p)?,
                None => Vec::new(),
            };
            let files = report::write_report(&out, &records, &rows)?;
            println!("wrote {}", files.markdown.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
