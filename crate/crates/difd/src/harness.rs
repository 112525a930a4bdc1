//! Training loop, split evaluation and the ablation matrix.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use difd_core::bands::BandSelection;
use difd_core::early_stop::{EarlyStopping, StopReason, Verdict};
use difd_core::loss::{dice_ce_logits, one_hot};
use difd_core::metrics::{argmax_channels, ConfusionMatrix, MetricSummary};
use difd_core::model::{ModelState, SecondInput, Variant};
use difd_core::raster::{class_stats, make_batch, normalize_pair, Batch, TilePair};
use difd_core::rng::SeededRng;
use difd_core::train::{predict, Trainer};
use difd_core::{Tensor, Var, CLASS_NAMES, NUM_CLASSES};
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::{Profile, RunConfig};
use crate::dataset;
use crate::error::{AppError, Result};

pub const METRICS_CSV: &str = "metrics.csv";
pub const RECORD_JSON: &str = "record.json";
pub const BEST_CHECKPOINT: &str = "best.ckpt";

/// Normalized train/val/test pairs.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Vec<TilePair>,
    pub val: Vec<TilePair>,
    pub test: Vec<TilePair>,
}

fn normalize_all(pairs: &[TilePair]) -> Result<Vec<TilePair>> {
    Ok(pairs.iter().map(normalize_pair).collect::<difd_core::Result<_>>()?)
}

impl Splits {
    pub fn from_raw(train: &[TilePair], val: &[TilePair], test: &[TilePair]) -> Result<Self> {
        Ok(Self { train: normalize_all(train)?, val: normalize_all(val)?, test: normalize_all(test)? })
    }

    /// Load a dataset directory; a missing split is empty.
    pub fn load(root: &Path) -> Result<(Self, dataset::Manifest)> {
        let manifest = dataset::read_manifest(root)?;
        let split = |name: &str| -> Result<Vec<TilePair>> {
            if manifest.splits.contains_key(name) {
                normalize_all(&dataset::load_split(root, &manifest, name, NUM_CLASSES)?)
            } else {
                Ok(Vec::new())
            }
        };
        let s = Self { train: split("train")?, val: split("val")?, test: split("test")? };
        Ok((s, manifest))
    }

    pub fn synthetic(
        seed: u64,
        profile: Profile,
        sel: BandSelection,
        sizes: (usize, usize, usize),
    ) -> Result<Self> {
        let spec = profile.synth();
        let mut s =
            dataset::synth_splits(seed, &spec, sel, &[("train", sizes.0), ("val", sizes.1), ("test", sizes.2)])?
                .into_iter()
                .map(|(_, p)| p);
        let (train, val, test) = (s.next().unwrap(), s.next().unwrap(), s.next().unwrap());
        Self::from_raw(&train, &val, &test)
    }

    pub fn band_ids(&self) -> Option<&[usize]> {
        self.train.first().or(self.val.first()).or(self.test.first()).map(|p| p.sat_bands.as_slice())
    }
}

/// Check that the data carries what `cfg` consumes.
pub fn check_compatible(cfg: &RunConfig, splits: &Splits) -> Result<()> {
    let uses_sat = cfg.model.variant.uses_second() && cfg.model.second_input == SecondInput::Satellite;
    if let (true, Some(ids)) = (uses_sat, splits.band_ids()) {
        if ids != cfg.bands.indices() {
            return Err(AppError::config(format!(
                "run {} expects {} satellite bands {:?}, data carries {:?}",
                cfg.run_id,
                cfg.bands.name(),
                cfg.bands.indices(),
                ids
            )));
        }
    }
    let k = cfg.model.aerial_size;
    let s = cfg.model.sat_plan.sat_size;
    for p in splits.train.iter().chain(&splits.val).chain(&splits.test) {
        if p.aerial.width != k || p.aerial.height != k || (uses_sat && p.satellite.width != s) {
            return Err(AppError::config(format!(
                "pair {} has {}x{} aerial / {} px satellite tiles, the model expects {k} / {s}",
                p.id(),
                p.aerial.width,
                p.aerial.height,
                p.satellite.width
            )));
        }
    }
    Ok(())
}

/// Batches of `pairs` in `order`; the last one may be short.
pub fn batches(pairs: &[TilePair], order: &[usize], batch_size: usize) -> Result<Vec<Batch>> {
    order
        .chunks(batch_size.max(1))
        .map(|idx| Ok(make_batch(&idx.iter().map(|&i| &pairs[i]).collect::<Vec<_>>())?))
        .collect()
}

/// Anything that maps a batch to per-class logits.
pub trait Predictor: Sync {
    fn num_classes(&self) -> usize;
    fn logits(&self, batch: &Batch) -> Result<Tensor>;
}

impl Predictor for ModelState {
    fn num_classes(&self) -> usize {
        self.config().num_classes
    }

    fn logits(&self, batch: &Batch) -> Result<Tensor> {
        Ok(predict(self, batch)?)
    }
}

/// Confusion matrix of `predictor` over `pairs`, plus the mean loss when
/// class weights are given. Batches are sharded across `workers` threads and
/// merged in batch order, so the result does not depend on `workers`.
pub fn evaluate_pairs(
    predictor: &dyn Predictor,
    pairs: &[TilePair],
    batch_size: usize,
    workers: usize,
    class_weights: Option<&[f64]>,
) -> Result<(ConfusionMatrix, Option<f64>)> {
    let classes = predictor.num_classes();
    let order: Vec<usize> = (0..pairs.len()).collect();
    let all = batches(pairs, &order, batch_size)?;
    let one = |b: &Batch| -> Result<(ConfusionMatrix, f64, usize)> {
        let logits = predictor.logits(b)?;
        let mut cm = ConfusionMatrix::new(classes);
        cm.accumulate(&argmax_channels(&logits), &b.labels)?;
        let n = b.aerial.batch();
        let loss = match class_weights {
            Some(w) => {
                let [_, _, h, wd] = b.aerial.shape();
                let target = one_hot(&b.labels, [n, h, wd], classes)?;
                dice_ce_logits(&Var::constant(logits), &target, w)?.value().data()[0]
            }
            None => 0.0,
        };
        Ok((cm, loss, n))
    };
    let per_batch: Vec<Result<(ConfusionMatrix, f64, usize)>> = if workers <= 1 || all.len() <= 1 {
        all.iter().map(one).collect()
    } else {
        let chunk = all.len().div_ceil(workers);
        std::thread::scope(|scope| {
            let handles: Vec<_> =
                all.chunks(chunk).map(|c| scope.spawn(move || c.iter().map(one).collect::<Vec<_>>())).collect();
            handles.into_iter().flat_map(|h| h.join().expect("evaluation worker panicked")).collect()
        })
    };
    let mut cm = ConfusionMatrix::new(classes);
    let (mut loss, mut n) = (0.0, 0usize);
    for r in per_batch {
        let (c, l, k) = r?;
        cm.merge(&c)?;
        loss += l * k as f64;
        n += k;
    }
    let loss = class_weights.map(|_| if n == 0 { 0.0 } else { loss / n as f64 });
    Ok((cm, loss))
}

/// One line of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub epoch: usize,
    pub split: String,
    pub loss: Option<f64>,
    pub metrics: MetricSummary,
}

impl MetricRow {
    pub fn new(epoch: usize, split: &str, loss: Option<f64>, cm: &ConfusionMatrix) -> Self {
        Self { epoch, split: split.to_string(), loss, metrics: cm.summary() }
    }
}

pub fn csv_header() -> Vec<String> {
    let mut h: Vec<String> =
        ["epoch", "split", "loss", "miou", "mf1", "miou_fg", "mf1_fg"].iter().map(|s| s.to_string()).collect();
    h.extend(CLASS_NAMES.iter().map(|c| format!("iou_{c}")));
    h.extend(CLASS_NAMES.iter().map(|c| format!("f1_{c}")));
    h
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_cell(s: &str, path: &Path) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| AppError::format(path, format!("bad number {s:?}")))
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let io = |e: csv::Error| AppError::format(path, e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(csv_header()).map_err(io)?;
    for r in rows {
        let m = &r.metrics;
        let mut rec = vec![r.epoch.to_string(), r.split.clone(), cell(r.loss)];
        rec.extend([m.miou, m.mf1, m.miou_fg, m.mf1_fg].iter().map(|x| x.to_string()));
        rec.extend(m.iou.iter().map(|&x| cell(x)));
        rec.extend(m.f1.iter().map(|&x| cell(x)));
        w.write_record(rec).map_err(io)?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| AppError::format(path, e.to_string()))?;
    let header: Vec<String> = r.headers().map_err(|e| AppError::format(path, e.to_string()))?.iter().map(String::from).collect();
    if header != csv_header() {
        return Err(AppError::format(path, "unexpected metrics header"));
    }
    let c = NUM_CLASSES;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| AppError::format(path, e.to_string()))?;
        let f = |i: usize| parse_cell(&rec[i], path);
        let req = |i: usize| f(i)?.ok_or_else(|| AppError::format(path, format!("empty column {}", header[i])));
        rows.push(MetricRow {
            epoch: rec[0].parse().map_err(|_| AppError::format(path, "bad epoch"))?,
            split: rec[1].to_string(),
            loss: f(2)?,
            metrics: MetricSummary {
                miou: req(3)?,
                mf1: req(4)?,
                miou_fg: req(5)?,
                mf1_fg: req(6)?,
                iou: (7..7 + c).map(f).collect::<Result<_>>()?,
                f1: (7 + c..7 + 2 * c).map(f).collect::<Result<_>>()?,
            },
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub fingerprint: u64,
    pub rows: Vec<MetricRow>,
    pub best_epoch: usize,
    pub best_val_miou: f64,
    pub best_checkpoint: PathBuf,
    pub stop_reason: StopReason,
    pub steps: u64,
    pub wall_time_s: f64,
}

impl RunRecord {
    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(RECORD_JSON);
        let text = fs::read_to_string(&path).map_err(|e| AppError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| AppError::format(&path, e.to_string()))
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let json = serde_json::to_string_pretty(value).expect("serializes");
    fs::write(path, json).map_err(|e| AppError::io(path, e))
}

/// Class weights from the training labels.
pub fn train_class_weights(splits: &Splits) -> Result<Vec<f64>> {
    Ok(class_stats(splits.train.iter().map(|p| &p.label), NUM_CLASSES)?.weights)
}

/// Train with early stopping on validation mIoU. Writes `config.json`,
/// `metrics.csv`, `record.json` and the best checkpoint under the run
/// directory.
pub fn train(cfg: &RunConfig, splits: &Splits) -> Result<RunRecord> {
    let started = Instant::now();
    cfg.validate()?;
    check_compatible(cfg, splits)?;
    if splits.train.is_empty() || splits.val.is_empty() {
        return Err(AppError::Core(difd_core::Error::Data("training needs non-empty train and val splits".into())));
    }
    let dir = cfg.run_dir();
    fs::create_dir_all(&dir).map_err(|e| AppError::io(&dir, e))?;
    fs::write(dir.join("config.json"), cfg.to_json()).map_err(|e| AppError::io(dir.join("config.json"), e))?;

    let weights = train_class_weights(splits)?;
    let state = ModelState::init(&cfg.model, cfg.seed)?;
    let mut trainer = Trainer::new(state, cfg.optimizer, weights.clone())?;
    let mut stopper = EarlyStopping::new(cfg.patience)?;
    let best_path = dir.join(BEST_CHECKPOINT);
    let metrics_path = dir.join(METRICS_CSV);
    let mut rows = Vec::new();
    let mut reason = StopReason::MaxEpochs;

    for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<usize> = (0..splits.train.len()).collect();
        SeededRng::derive(cfg.seed, epoch as u64).shuffle(&mut order);
        let mut cm = ConfusionMatrix::new(NUM_CLASSES);
        let (mut loss, mut n) = (0.0, 0usize);
        for b in batches(&splits.train, &order, cfg.batch_size)? {
            let out = trainer.step(&b)?;
            cm.merge(&out.confusion)?;
            loss += out.loss * b.aerial.batch() as f64;
            n += b.aerial.batch();
        }
        rows.push(MetricRow::new(epoch, "train", Some(loss / n as f64), &cm));

        let (vcm, vloss) = evaluate_pairs(trainer.state(), &splits.val, cfg.batch_size, cfg.workers, Some(&weights))?;
        let val = MetricRow::new(epoch, "val", vloss, &vcm);
        let verdict = stopper.observe(val.metrics.miou);
        rows.push(val);
        write_metrics_csv(&metrics_path, &rows)?;
        match verdict {
            Verdict::Improved => checkpoint::save(&best_path, trainer.state())?,
            Verdict::Continue => {}
            Verdict::Stop => {
                reason = StopReason::EarlyStop;
                break;
            }
        }
    }

    let record = RunRecord {
        run_id: cfg.run_id.clone(),
        fingerprint: cfg.model.fingerprint(),
        rows,
        best_epoch: stopper.best_epoch(),
        best_val_miou: stopper.best().unwrap_or(0.0),
        best_checkpoint: best_path,
        stop_reason: reason,
        steps: trainer.steps(),
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    write_json(&dir.join(RECORD_JSON), &record)?;
    Ok(record)
}

/// Metrics of a stored checkpoint on `pairs`; the checkpoint must match
/// `cfg.model`.
pub fn evaluate_checkpoint(path: &Path, cfg: &RunConfig, pairs: &[TilePair], split: &str) -> Result<MetricRow> {
    let state = checkpoint::load_matching(path, &cfg.model)?;
    let (cm, _) = evaluate_pairs(&state, pairs, cfg.batch_size, cfg.workers, None)?;
    Ok(MetricRow::new(0, split, None, &cm))
}

/// Published scores of one reference configuration, per-class IoU in
/// `CLASS_NAMES` order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Published {
    pub mf1: f64,
    pub miou: f64,
    pub iou: [f64; NUM_CLASSES],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub id: u32,
    pub label: String,
    pub inputs: String,
    pub config: RunConfig,
    pub published: Option<Published>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Outcome {
    Done { best_epoch: usize, val_miou: f64, test: MetricSummary },
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub id: u32,
    pub label: String,
    pub inputs: String,
    pub outcome: Outcome,
    pub published: Option<Published>,
}

fn published(mf1: f64, miou: f64, [b, w, wa, r, bg]: [f64; 5]) -> Option<Published> {
    Some(Published { mf1, miou, iou: [bg, b, w, wa, r] })
}

/// The runnable rows of the published ablation: aerial only, satellite only,
/// RGB+RGB, the UpConvT band sweep and the upsampler sweep.
pub fn paper_matrix(profile: Profile) -> Vec<AblationSpec> {
    let row = |id, label: &str, inputs: &str, config: RunConfig, p| AblationSpec {
        id,
        label: label.into(),
        inputs: inputs.into(),
        config: RunConfig { run_id: format!("{id:02}-{}", config.run_id), ..config },
        published: p,
    };
    let cfg = |v, b| RunConfig::new(profile, v, b);
    use BandSelection::*;
    use Variant::*;
    vec![
        row(2, "aerial only, UpConvT", "RGB", cfg(AerialOnly, B7), published(90.12, 82.74, [75.25, 88.9, 93.28, 64.36, 91.88])),
        row(3, "satellite only, UpConvT", "10B", cfg(SatOnly, B10), published(14.54, 11.43, [0.0, 0.0, 0.0, 0.0, 57.13])),
        row(4, "dual input, UpConvT", "RGB+RGB", RunConfig::rgb_rgb(profile), published(90.8, 83.84, [76.66, 90.3, 94.12, 65.59, 92.54])),
        row(6, "DIFD_UpConvT", "RGB+4B", cfg(UpConvT, B4), published(90.75, 83.7, [75.89, 90.3, 93.32, 66.71, 92.3])),
        row(7, "DIFD_UpConvT", "RGB+10B", cfg(UpConvT, B10), published(90.94, 84.07, [75.98, 90.8, 94.22, 66.54, 92.79])),
        row(8, "DIFD_UpConvT", "RGB+7B", cfg(UpConvT, B7), published(91.5, 84.91, [78.68, 90.9, 94.29, 67.79, 92.94])),
        row(9, "DIFD_UpBilinear", "RGB+7B", cfg(UpBilinear, B7), published(91.32, 84.63, [77.76, 90.7, 94.35, 67.55, 92.81])),
        row(10, "DIFD_UpNearest", "RGB+7B", cfg(UpNearest, B7), published(91.3, 84.56, [77.43, 90.2, 94.24, 68.49, 92.41])),
        row(11, "DIFD_UpPS", "RGB+7B", cfg(UpPS, B7), published(91.28, 84.53, [78.22, 90.4, 93.87, 67.51, 92.64])),
    ]
}

/// Train every spec and score its best checkpoint on the test split.
/// `data_for` supplies the splits for a band selection. Failures become
/// `Outcome::Failed` rows.
pub fn ablate(
    specs: &[AblationSpec],
    mut data_for: impl FnMut(BandSelection) -> Result<Splits>,
) -> Vec<AblationRow> {
    specs
        .iter()
        .map(|s| {
            let outcome = (|| -> Result<Outcome> {
                let splits = data_for(s.config.bands)?;
                let rec = train(&s.config, &splits)?;
                let test = if splits.test.is_empty() { &splits.val } else { &splits.test };
                let row = evaluate_checkpoint(&rec.best_checkpoint, &s.config, test, "test")?;
                Ok(Outcome::Done { best_epoch: rec.best_epoch, val_miou: rec.best_val_miou, test: row.metrics })
            })()
            .unwrap_or_else(|e| Outcome::Failed { error: e.to_string() });
            AblationRow { id: s.id, label: s.label.clone(), inputs: s.inputs.clone(), outcome, published: s.published }
        })
        .collect()
}

pub fn save_ablation(path: &Path, rows: &[AblationRow]) -> Result<()> {
    write_json(path, &rows)
}

pub fn load_ablation(path: &Path) -> Result<Vec<AblationRow>> {
    let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| AppError::format(path, e.to_string()))
}
