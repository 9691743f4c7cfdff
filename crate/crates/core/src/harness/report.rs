//! Experiment reports: CSV rows, a JSON document and a static PNG chart,
//! named `{experiment}_{seed}.{ext}`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ablation::AblationCell;
use crate::io::log::EpochRecord;
use crate::metrics::report::rows_to_csv;
use crate::metrics::MetricRow;
use crate::{PuirError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub seed: u64,
    pub rows: Vec<MetricRow>,
    /// Named series plotted as lines, e.g. per-epoch losses.
    pub curves: BTreeMap<String, Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportFiles {
    pub csv: PathBuf,
    pub json: PathBuf,
    pub png: PathBuf,
}

impl ExperimentReport {
    pub fn new(experiment: &str, seed: u64) -> Self {
        Self {
            experiment: experiment.into(),
            seed,
            rows: Vec::new(),
            curves: BTreeMap::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty() && self.curves.values().all(Vec::is_empty)
    }

    /// Loss components of a training history as curves.
    pub fn add_history(&mut self, prefix: &str, history: &[EpochRecord]) {
        let mut put = |name: &str, f: &dyn Fn(&EpochRecord) -> f64| {
            self.curves.insert(format!("{prefix}{name}"), history.iter().map(f).collect());
        };
        put("total", &|r| r.losses.total);
        put("contr", &|r| r.losses.contr);
        put("decom", &|r| r.losses.decom);
        put("equ", &|r| r.losses.equ);
        put("inv", &|r| r.losses.inv);
    }

    /// Metric rows of every successful cell of one seed, prefixed by the cell name.
    pub fn from_ablation(experiment: &str, seed: u64, cells: &[AblationCell]) -> Self {
        let mut r = Self::new(experiment, seed);
        for c in cells.iter().filter(|c| c.seed == seed) {
            if let Some(m) = &c.metrics {
                for mut row in m.rows() {
                    row.setting_id = format!("{}/{}", c.name, row.setting_id);
                    r.rows.push(row);
                }
            }
            if let Some(p) = c.personalization {
                r.rows.push(MetricRow {
                    setting_id: format!("{}/fused", c.name),
                    present_modalities: String::new(),
                    mn: 0,
                    metric: "personalization".into(),
                    value: p,
                });
            }
            if let Some(s) = c.mean_ssim() {
                r.rows.push(MetricRow {
                    setting_id: format!("{}/avg", c.name),
                    present_modalities: String::new(),
                    mn: 0,
                    metric: "mean_ssim".into(),
                    value: s,
                });
            }
        }
        r
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| PuirError::io(path, e))
}

/// Write `{experiment}_{seed}.csv`, `.json` and `.png` into `dir`.
pub fn emit_report(report: &ExperimentReport, dir: &Path) -> Result<ReportFiles> {
    if report.is_empty() {
        return Err(PuirError::precondition("cannot emit an empty report"));
    }
    std::fs::create_dir_all(dir).map_err(|e| PuirError::io(dir, e))?;
    let stem = format!("{}_{}", report.experiment, report.seed);
    let files = ReportFiles {
        csv: dir.join(format!("{stem}.csv")),
        json: dir.join(format!("{stem}.json")),
        png: dir.join(format!("{stem}.png")),
    };
    write(&files.csv, rows_to_csv(&report.rows)?.as_bytes())?;
    write(&files.json, report.to_json()?.as_bytes())?;
    write(&files.png, &render_png(report)?)?;
    Ok(files)
}

const W: usize = 640;
const H: usize = 400;
const PALETTE: [[u8; 3]; 6] = [[31, 119, 180], [255, 127, 14], [44, 160, 44], [214, 39, 40], [148, 103, 189], [140, 86, 75]];

struct Canvas(Vec<u8>);

impl Canvas {
    fn put(&mut self, x: usize, y: usize, c: [u8; 3]) {
        if x < W && y < H {
            let i = (y * W + x) * 3;
            self.0[i..i + 3].copy_from_slice(&c);
        }
    }

    fn rect(&mut self, x0: usize, y0: usize, x1: usize, y1: usize, c: [u8; 3]) {
        for y in y0.min(y1)..=y0.max(y1) {
            for x in x0..=x1 {
                self.put(x, y, c);
            }
        }
    }

    fn line(&mut self, (x0, y0): (f64, f64), (x1, y1): (f64, f64), c: [u8; 3]) {
        let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let (x, y) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
            self.put(x.round() as usize, y.round() as usize, c);
        }
    }
}

/// Bars for the rows of the first metric (upper half) and min-max scaled
/// curves (lower half).
fn render_png(report: &ExperimentReport) -> Result<Vec<u8>> {
    let mut c = Canvas(vec![255; W * H * 3]);
    let half = H / 2;
    if let Some(first) = report.rows.first() {
        let vals: Vec<f64> = report
            .rows
            .iter()
            .filter(|r| r.metric == first.metric && r.value.is_finite())
            .map(|r| r.value)
            .collect();
        let top = vals.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let slot = (W - 20) as f64 / vals.len().max(1) as f64;
        let base = half - 10;
        for (i, v) in vals.iter().enumerate() {
            let x0 = 10 + (i as f64 * slot) as usize;
            let x1 = 10 + ((i as f64 + 0.8) * slot) as usize;
            let hgt = (v.abs() / top * (half - 30) as f64) as usize;
            c.rect(x0, base - hgt, x1.max(x0), base, PALETTE[i % PALETTE.len()]);
        }
        c.rect(5, base, W - 5, base, [0, 0, 0]);
    }
    for (k, series) in report.curves.values().filter(|s| s.len() > 1).enumerate() {
        let finite: Vec<f64> = series.iter().copied().filter(|v| v.is_finite()).collect();
        let (lo, hi) = finite.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let span = if hi > lo { hi - lo } else { 1.0 };
        let pt = |i: usize, v: f64| {
            let x = 10.0 + i as f64 / (series.len() - 1) as f64 * (W - 20) as f64;
            let y = (H - 10) as f64 - (v - lo) / span * (half - 20) as f64;
            (x, y)
        };
        for i in 1..series.len() {
            if series[i - 1].is_finite() && series[i].is_finite() {
                c.line(pt(i - 1, series[i - 1]), pt(i, series[i]), PALETTE[k % PALETTE.len()]);
            }
        }
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, W as u32, H as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(|e| PuirError::Serialization(e.to_string()))?;
        w.write_image_data(&c.0).map_err(|e| PuirError::Serialization(e.to_string()))?;
    }
    Ok(out)
}
