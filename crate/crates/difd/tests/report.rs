use difd::harness::{MetricRow, RunRecord};
use difd::report::{curve_series, write_report, Metric, CURVES_HEADER};
use difd_core::early_stop::StopReason;
use difd_core::metrics::ConfusionMatrix;
use std::path::PathBuf;

fn record(id: &str, epochs: usize) -> RunRecord {
    let mut rows = Vec::new();
    for e in 1..=epochs {
        for (split, k) in [("train", 3u64), ("val", 1)] {
            let mut counts = vec![0u64; 25];
            for c in 0..5 {
                counts[c * 5 + c] = 10 * e as u64 + c as u64;
                counts[c * 5 + (c + 1) % 5] = k;
            }
            let cm = ConfusionMatrix::from_counts(5, counts).unwrap();
            rows.push(MetricRow::new(e, split, Some(1.0 / e as f64 + k as f64), &cm));
        }
    }
    RunRecord {
        run_id: id.into(),
        fingerprint: 7,
        best_epoch: epochs,
        best_val_miou: rows.last().unwrap().metrics.miou,
        rows,
        best_checkpoint: PathBuf::from("best.ckpt"),
        stop_reason: StopReason::MaxEpochs,
        steps: 10,
        wall_time_s: 1.0,
    }
}

fn polyline_points(svg: &str) -> Vec<usize> {
    svg.split("<polyline")
        .skip(1)
        .filter(|s| s[..s.find("/>").unwrap()].contains("stroke-width=\"2\""))
        .map(|s| {
            let start = s.find("points=\"").unwrap() + 8;
            let end = start + s[start..].find('"').unwrap();
            s[start..end].split_whitespace().count()
        })
        .collect()
}

#[test]
fn plotted_points_equal_csv_rows() {
    let dir = tempfile::tempdir().unwrap();
    let records = [record("a", 4), record("b", 2)];
    let files = write_report(dir.path(), &records, &[]).unwrap();
    assert_eq!(files.plots.len(), 3);
    for metric in [Metric::Loss, Metric::MeanIou] {
        let name = if metric == Metric::Loss { "loss" } else { "miou" };
        let series = curve_series(&records, metric);
        assert_eq!(series.len(), 4);
        let mut rdr = csv::Reader::from_path(dir.path().join(format!("curve_{name}.csv"))).unwrap();
        assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), CURVES_HEADER);
        let csv_rows: Vec<(String, String, f64, f64)> = rdr.deserialize().map(|r| r.unwrap()).collect();
        let plotted: Vec<(String, String, f64, f64)> = series
            .iter()
            .flat_map(|s| s.points.iter().map(move |&(x, y)| (s.run_id.clone(), s.split.clone(), x, y)))
            .collect();
        assert_eq!(csv_rows, plotted);

        let from_records: Vec<f64> = records
            .iter()
            .flat_map(|r| {
                let mut v: Vec<_> = r.rows.iter().filter(|x| x.split == "train").collect();
                v.extend(r.rows.iter().filter(|x| x.split == "val"));
                v.into_iter().map(|x| if metric == Metric::Loss { x.loss.unwrap() } else { x.metrics.miou })
            })
            .collect();
        assert_eq!(plotted.iter().map(|p| p.3).collect::<Vec<_>>(), from_records);

        let svg = std::fs::read_to_string(dir.path().join(format!("curve_{name}.svg"))).unwrap();
        assert_eq!(polyline_points(&svg), series.iter().map(|s| s.points.len()).collect::<Vec<_>>());
    }
}

#[test]
fn one_record_gives_one_curve_per_metric_and_split() {
    let recs = [record("solo", 3)];
    for metric in [Metric::Loss, Metric::MeanIou] {
        let s = curve_series(&recs, metric);
        assert_eq!(s.iter().map(|x| x.split.as_str()).collect::<Vec<_>>(), ["train", "val"]);
    }
}

#[test]
fn empty_input_gives_a_valid_scaffold() {
    let dir = tempfile::tempdir().unwrap();
    let files = write_report(dir.path(), &[], &[]).unwrap();
    let md = std::fs::read_to_string(&files.markdown).unwrap();
    assert!(md.contains("No runs recorded") && md.contains("No ablation rows"));
    for p in files.plots.iter().chain(&files.csvs) {
        let text = std::fs::read_to_string(p).unwrap();
        assert!(!text.is_empty(), "{}", p.display());
    }
    for p in &files.plots {
        let svg = std::fs::read_to_string(p).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("plain");
    std::fs::write(&file, b"x").unwrap();
    let err = write_report(&file.join("sub"), &[], &[]).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}
