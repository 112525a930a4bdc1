//! Markdown, CSV and SVG summaries of finished runs and ablations.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use difd_core::CLASS_NAMES;
use plotters::prelude::*;

use crate::error::{AppError, Result};
use crate::harness::{AblationRow, Outcome, RunRecord};

/// One plotted line.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub run_id: String,
    pub split: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Loss,
    MeanIou,
}

impl Metric {
    fn name(self) -> &'static str {
        match self {
            Metric::Loss => "loss",
            Metric::MeanIou => "miou",
        }
    }
}

/// Per-epoch series of `metric`, one per run and split, in record order.
pub fn curve_series(records: &[RunRecord], metric: Metric) -> Vec<Series> {
    let mut out: Vec<Series> = Vec::new();
    for rec in records {
        for row in &rec.rows {
            let y = match metric {
                Metric::Loss => match row.loss {
                    Some(l) => l,
                    None => continue,
                },
                Metric::MeanIou => row.metrics.miou,
            };
            match out.iter_mut().find(|s| s.run_id == rec.run_id && s.split == row.split) {
                Some(s) => s.points.push((row.epoch as f64, y)),
                None => out.push(Series {
                    run_id: rec.run_id.clone(),
                    split: row.split.clone(),
                    points: vec![(row.epoch as f64, y)],
                }),
            }
        }
    }
    out
}

fn plot_err(path: &Path, e: impl std::fmt::Display) -> AppError {
    AppError::format(path, format!("plotting failed: {e}"))
}

fn draw_curves(path: &Path, series: &[Series], metric: Metric) -> Result<()> {
    let (mut x1, mut y0, mut y1) = (1.0f64, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in series.iter().flat_map(|s| &s.points) {
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    if !y0.is_finite() {
        (y0, y1) = (0.0, 1.0);
    }
    if y1 - y0 < 1e-9 {
        y1 = y0 + 1.0;
    }
    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(path, e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(metric.name(), ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(50)
        .build_cartesian_2d(0.0..x1 + 1.0, y0..y1)
        .map_err(|e| plot_err(path, e))?;
    chart.configure_mesh().x_desc("epoch").y_desc(metric.name()).draw().map_err(|e| plot_err(path, e))?;
    for (i, s) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(s.points.iter().copied(), color.stroke_width(2)))
            .map_err(|e| plot_err(path, e))?
            .label(format!("{} {}", s.run_id, s.split))
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
    }
    if !series.is_empty() {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(|e| plot_err(path, e))?;
    }
    root.present().map_err(|e| plot_err(path, e))
}

/// Grouped bars: one group per class, one bar per labelled entry.
fn draw_class_bars(path: &Path, entries: &[(String, Vec<Option<f64>>)]) -> Result<()> {
    let root = SVGBackend::new(path, (900, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(path, e))?;
    let groups = CLASS_NAMES.len();
    let width = entries.len().max(1) as f64 + 1.0;
    let mut chart = ChartBuilder::on(&root)
        .caption("per-class IoU", ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(50)
        .build_cartesian_2d(0.0..groups as f64 * width, 0.0..1.0)
        .map_err(|e| plot_err(path, e))?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(groups)
        .x_label_formatter(&|x| {
            let g = (*x / width) as usize;
            CLASS_NAMES.get(g).map(|s| s.to_string()).unwrap_or_default()
        })
        .y_desc("IoU")
        .draw()
        .map_err(|e| plot_err(path, e))?;
    for (i, (label, values)) in entries.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let bars = values.iter().enumerate().filter_map(|(g, v)| {
            let x = g as f64 * width + i as f64 + 0.5;
            v.map(|v| Rectangle::new([(x, 0.0), (x + 1.0, v)], color.filled()))
        });
        chart
            .draw_series(bars)
            .map_err(|e| plot_err(path, e))?
            .label(label.clone())
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 10, y + 5)], color.filled()));
    }
    if !entries.is_empty() {
        chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw().map_err(|e| plot_err(path, e))?;
    }
    root.present().map_err(|e| plot_err(path, e))
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

fn pct_opt(v: Option<f64>) -> String {
    v.map(pct).unwrap_or_else(|| "-".into())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| AppError::io(path, e))
}

fn csv_text(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for r in rows {
        w.write_record(r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
}

pub const CURVES_HEADER: [&str; 4] = ["run_id", "split", "epoch", "value"];

fn curves_csv(series: &[Series]) -> String {
    let rows: Vec<Vec<String>> = series
        .iter()
        .flat_map(|s| s.points.iter().map(move |(x, y)| vec![s.run_id.clone(), s.split.clone(), x.to_string(), y.to_string()]))
        .collect();
    csv_text(&CURVES_HEADER, &rows)
}

/// Files written by [`write_report`].
#[derive(Debug, Clone)]
pub struct ReportFiles {
    pub markdown: PathBuf,
    pub csvs: Vec<PathBuf>,
    pub plots: Vec<PathBuf>,
}

/// Write `report.md`, CSV tables and SVG plots into `out`.
pub fn write_report(out: &Path, records: &[RunRecord], ablation: &[AblationRow]) -> Result<ReportFiles> {
    fs::create_dir_all(out).map_err(|e| AppError::io(out, e))?;
    let mut md = String::from("# Run report\n\n## Runs\n\n");
    let run_rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            vec![
                r.run_id.clone(),
                format!("{:016x}", r.fingerprint),
                r.best_epoch.to_string(),
                r.best_val_miou.to_string(),
                format!("{:?}", r.stop_reason),
                r.steps.to_string(),
                format!("{:.1}", r.wall_time_s),
            ]
        })
        .collect();
    md.push_str("| run | fingerprint | best epoch | best val mIoU (%) | stop | steps | wall (s) |\n|---|---|---|---|---|---|---|\n");
    for (r, rec) in run_rows.iter().zip(records) {
        let _ = writeln!(md, "| {} | {} | {} | {} | {} | {} | {} |", r[0], r[1], r[2], pct(rec.best_val_miou), r[4], r[5], r[6]);
    }
    if records.is_empty() {
        md.push_str("\nNo runs recorded.\n");
    }

    let mut csvs = Vec::new();
    let runs_csv = out.join("runs.csv");
    write_file(&runs_csv, &csv_text(&["run_id", "fingerprint", "best_epoch", "best_val_miou", "stop_reason", "steps", "wall_time_s"], &run_rows))?;
    csvs.push(runs_csv);

    let mut plots = Vec::new();
    md.push_str("\n## Curves\n\n");
    for metric in [Metric::Loss, Metric::MeanIou] {
        let series = curve_series(records, metric);
        let csv_path = out.join(format!("curve_{}.csv", metric.name()));
        write_file(&csv_path, &curves_csv(&series))?;
        csvs.push(csv_path);
        let svg = out.join(format!("curve_{}.svg", metric.name()));
        draw_curves(&svg, &series, metric)?;
        let _ = writeln!(md, "![{0}](curve_{0}.svg)\n", metric.name());
        plots.push(svg);
    }

    md.push_str("## Ablation\n\n");
    md.push_str("Published values are quoted from the full-scale LandCover.ai experiments and are not recomputed.\n\n");
    md.push_str("| ID | configuration | input | mF1 (%) | mIoU (%) | published mF1 | published mIoU |\n|---|---|---|---|---|---|---|\n");
    let mut table = Vec::new();
    let mut per_class = Vec::new();
    let mut bars = Vec::new();
    for r in ablation {
        let (mf1, miou, iou) = match &r.outcome {
            Outcome::Done { test, .. } => (pct(test.mf1), pct(test.miou), test.iou.clone()),
            Outcome::Failed { error } => ("failed".into(), error.replace('|', "/"), vec![None; CLASS_NAMES.len()]),
        };
        let (pf1, piou) = r.published.map(|p| (format!("{}", p.mf1), format!("{}", p.miou))).unwrap_or_default();
        let _ = writeln!(md, "| {} | {} | {} | {} | {} | {} | {} |", r.id, r.label, r.inputs, mf1, miou, pf1, piou);
        table.push(vec![r.id.to_string(), r.label.clone(), r.inputs.clone(), mf1, miou, pf1, piou]);
        let mut row = vec![r.id.to_string(), r.inputs.clone()];
        row.extend(iou.iter().map(|&v| pct_opt(v)));
        row.extend((0..CLASS_NAMES.len()).map(|c| r.published.map(|p| p.iou[c].to_string()).unwrap_or_default()));
        per_class.push(row);
        if matches!(r.outcome, Outcome::Done { .. }) {
            bars.push((format!("{} {}", r.id, r.inputs), iou));
        }
    }
    if ablation.is_empty() {
        md.push_str("\nNo ablation rows.\n");
    }
    md.push_str("\n### Per-class IoU (%)\n\n| ID | input |");
    for c in CLASS_NAMES {
        let _ = write!(md, " {c} |");
    }
    md.push_str("\n|---|---|");
    md.push_str(&"---|".repeat(CLASS_NAMES.len()));
    md.push('\n');
    for row in &per_class {
        let _ = writeln!(md, "| {} |", row[..2 + CLASS_NAMES.len()].join(" | "));
    }

    let ab_csv = out.join("ablation.csv");
    write_file(&ab_csv, &csv_text(&["id", "configuration", "input", "mf1", "miou", "published_mf1", "published_miou"], &table))?;
    csvs.push(ab_csv);
    let mut header = vec!["id".to_string(), "input".to_string()];
    header.extend(CLASS_NAMES.iter().map(|c| format!("iou_{c}")));
    header.extend(CLASS_NAMES.iter().map(|c| format!("published_iou_{c}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let pc_csv = out.join("ablation_per_class.csv");
    write_file(&pc_csv, &csv_text(&header, &per_class))?;
    csvs.push(pc_csv);

    let bar_svg = out.join("per_class_iou.svg");
    draw_class_bars(&bar_svg, &bars)?;
    md.push_str("\n![per-class IoU](per_class_iou.svg)\n");
    plots.push(bar_svg);

    let markdown = out.join("report.md");
    write_file(&markdown, &md)?;
    Ok(ReportFiles { markdown, csvs, plots })
}
