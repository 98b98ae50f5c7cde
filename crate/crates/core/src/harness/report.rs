use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use serde::Serialize;

use crate::checkpoint::PredictorKind;
use crate::error::{PlaError, Result};

use super::plan::{json_hash, ExperimentPlan};
use super::sweep::ReportRow;

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const F1_PLOT: &str = "f1_vs_snr.svg";
pub const RE_PLOT: &str = "re_vs_snr.svg";

pub const METRICS_COLUMNS: [&str; 11] = [
    "scheme",
    "snr_db",
    "seed",
    "p_tl",
    "p_ta",
    "f1",
    "f1_conventional",
    "r_e",
    "latency_ms",
    "energy_j",
    "complexity_ops",
];

#[derive(Serialize)]
struct CsvRow<'a> {
    scheme: &'a str,
    snr_db: f64,
    seed: u64,
    p_tl: f64,
    p_ta: f64,
    f1: f64,
    f1_conventional: f64,
    r_e: f64,
    latency_ms: Option<f64>,
    energy_j: Option<f64>,
    complexity_ops: Option<&'a str>,
}

#[derive(Serialize)]
struct Summary<'a> {
    plan_hash: String,
    rows: &'a [ReportRow],
}

/// Paths written by [`emit_report`].
#[derive(Debug, Clone)]
pub struct ReportFiles {
    pub metrics: PathBuf,
    pub summary: PathBuf,
    pub plots: Vec<PathBuf>,
}

pub fn metrics_csv(rows: &[ReportRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        let m = &r.metrics;
        w.serialize(CsvRow {
            scheme: r.scheme.as_str(),
            snr_db: m.snr_db,
            seed: r.seed,
            p_tl: m.p_tl,
            p_ta: m.p_ta,
            f1: m.f1,
            f1_conventional: m.f1_conventional,
            r_e: m.r_e,
            latency_ms: m.latency_ms,
            energy_j: m.energy_j,
            complexity_ops: r.complexity_ops.as_deref(),
        })
        .map_err(|e| PlaError::Serde(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| PlaError::Serde(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| PlaError::Serde(e.to_string()))
}

/// Metrics table, summary record and F1/R_e-versus-SNR plots in `plan.output_dir`.
pub fn emit_report(rows: &[ReportRow], plan: &ExperimentPlan) -> Result<ReportFiles> {
    if rows.is_empty() {
        return Err(PlaError::argument("reports", "nothing to report"));
    }
    let dir = &plan.output_dir;
    std::fs::create_dir_all(dir)?;
    let metrics = dir.join(METRICS_FILE);
    std::fs::write(&metrics, metrics_csv(rows)?)?;
    let summary = dir.join(SUMMARY_FILE);
    // where the results are written is not part of what was run
    let located = ExperimentPlan {
        output_dir: PathBuf::new(),
        ..plan.clone()
    };
    let record = Summary {
        plan_hash: json_hash(&located)?,
        rows,
    };
    std::fs::write(&summary, serde_json::to_string_pretty(&record)?)?;
    let plots = vec![
        plot_metric(rows, &dir.join(F1_PLOT), "F1 vs SNR", "F1", |r| r.metrics.f1)?,
        plot_metric(rows, &dir.join(RE_PLOT), "Authentication error rate vs SNR", "R_e", |r| r.metrics.r_e)?,
    ];
    Ok(ReportFiles { metrics, summary, plots })
}

const PALETTE: [RGBColor; 5] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
];

/// One line per scheme, averaged over seeds; infinite SNRs are left out.
fn plot_metric(
    rows: &[ReportRow],
    path: &Path,
    title: &str,
    y_label: &str,
    value: impl Fn(&ReportRow) -> f64,
) -> Result<PathBuf> {
    let mut series: BTreeMap<(usize, PredictorKind), BTreeMap<i64, (f64, f64, usize)>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.metrics.snr_db.is_finite()) {
        let rank = PredictorKind::ALL.iter().position(|&k| k == r.scheme).unwrap_or(0);
        // key SNRs on millidecibels so they order and merge exactly
        let key = (r.metrics.snr_db * 1000.0).round() as i64;
        let e = series.entry((rank, r.scheme)).or_default().entry(key).or_insert((r.metrics.snr_db, 0.0, 0));
        e.1 += value(r);
        e.2 += 1;
    }
    let snrs: Vec<f64> = series.values().flat_map(|s| s.values().map(|v| v.0)).collect();
    let (lo, hi) = snrs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let (lo, hi) = if snrs.is_empty() {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 1.0, hi + 1.0)
    } else {
        (lo, hi)
    };
    let mut svg = String::new();
    {
        let plot_err = |e: &dyn std::fmt::Display| PlaError::Serde(format!("plot {}: {e}", path.display()));
        let root = SVGBackend::with_string(&mut svg, (720, 440)).into_drawing_area();
        root.fill(&WHITE).map_err(|e| plot_err(&e))?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(48)
            .build_cartesian_2d(lo..hi, -0.02f64..1.02f64)
            .map_err(|e| plot_err(&e))?;
        chart
            .configure_mesh()
            .x_desc("SNR (dB)")
            .y_desc(y_label)
            .draw()
            .map_err(|e| plot_err(&e))?;
        for (i, ((_, scheme), pts)) in series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let line: Vec<(f64, f64)> = pts.values().map(|(x, sum, n)| (*x, sum / *n as f64)).collect();
            chart
                .draw_series(LineSeries::new(line.clone(), color.stroke_width(2)))
                .map_err(|e| plot_err(&e))?
                .label(scheme.as_str())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
            chart
                .draw_series(line.into_iter().map(|p| Circle::new(p, 3, color.filled())))
                .map_err(|e| plot_err(&e))?;
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(|e| plot_err(&e))?;
        root.present().map_err(|e| plot_err(&e))?;
    }
    std::fs::write(path, svg)?;
    Ok(path.to_path_buf())
}
