use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const REPORT_SCHEMA: &str = "report-v1";

/// One (victim, transfer, attack, defense) cell aggregated over seeds.
/// Percentages are means; `*_std` are sample standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub victim: String,
    pub transfer: String,
    pub attack: String,
    pub defense: String,
    pub sweep_value: Option<f64>,
    pub trans: Option<f64>,
    pub trans_std: Option<f64>,
    /// Clean accuracy of the transfer model on the (defended) subset.
    pub accuracy: Option<f64>,
    pub accuracy_std: Option<f64>,
    pub targeted_success: Option<f64>,
    pub targeted_success_std: Option<f64>,
    pub n_samples: usize,
    pub per_seed_trans: Vec<f64>,
    pub error: Option<String>,
}

impl ReportEntry {
    pub fn is_white_box(&self) -> bool {
        self.victim == self.transfer
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepInfo {
    pub param: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub schema: String,
    pub config_digest: String,
    pub seeds: Vec<u64>,
    pub sweep: Option<SweepInfo>,
    pub entries: Vec<ReportEntry>,
}

impl TransferReport {
    pub fn empty(config_digest: impl Into<String>) -> Self {
        Self {
            schema: REPORT_SCHEMA.into(),
            config_digest: config_digest.into(),
            seeds: Vec::new(),
            sweep: None,
            entries: Vec::new(),
        }
    }

    pub fn find(
        &self,
        victim: &str,
        transfer: &str,
        attack: &str,
        defense: &str,
    ) -> Option<&ReportEntry> {
        self.entries.iter().find(|e| {
            e.victim == victim
                && e.transfer == transfer
                && e.attack == attack
                && e.defense == defense
        })
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let report: Self = serde_json::from_str(&text)?;
        if report.schema != REPORT_SCHEMA {
            return Err(Error::Config(format!(
                "unsupported report schema '{}', expected {REPORT_SCHEMA}",
                report.schema
            )));
        }
        Ok(report)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
    Svg,
}

fn attack_label(entry: &ReportEntry, sweep: Option<&SweepInfo>) -> String {
    match (entry.sweep_value, sweep) {
        (Some(v), Some(s)) => format!("{}[{}={v}]", entry.attack, s.param),
        (Some(v), None) => format!("{}[{v}]", entry.attack),
        _ => entry.attack.clone(),
    }
}

fn write_csv(report: &TransferReport, path: &Path) -> Result<()> {
    let io = |e: csv::Error| Error::Config(format!("writing {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record([
        "victim", "transfer", "attack", "defense", "metric", "value", "std", "n",
    ])
    .map_err(io)?;
    for e in &report.entries {
        let attack = attack_label(e, report.sweep.as_ref());
        let metrics = [
            ("trans", e.trans, e.trans_std),
            ("accuracy", e.accuracy, e.accuracy_std),
            (
                "targeted_success",
                e.targeted_success,
                e.targeted_success_std,
            ),
        ];
        for (metric, value, std) in metrics {
            let Some(value) = value else { continue };
            let std = std.map(|s| s.to_string()).unwrap_or_default();
            w.write_record([
                e.victim.as_str(),
                e.transfer.as_str(),
                attack.as_str(),
                e.defense.as_str(),
                metric,
                &value.to_string(),
                &std,
                &e.n_samples.to_string(),
            ])
            .map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Line chart of transferability against the swept value, one series per
/// (victim, transfer, attack, defense).
pub fn sweep_svg(report: &TransferReport) -> Option<String> {
    let sweep = report.sweep.as_ref()?;
    let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for e in &report.entries {
        if let (Some(x), Some(y)) = (e.sweep_value, e.trans) {
            let name = format!(
                "{} -> {} ({}, {})",
                e.victim, e.transfer, e.attack, e.defense
            );
            series.entry(name).or_default().push((x, y));
        }
    }
    let (w, h, left, right, top, bottom) = (720.0, 420.0, 60.0, 240.0, 30.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let xmin = sweep.values.iter().copied().fold(f64::INFINITY, f64::min);
    let xmax = sweep
        .values
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let span = if xmax > xmin { xmax - xmin } else { 1.0 };
    let sx = |x: f64| left + (x - xmin) / span * pw;
    let sy = |y: f64| top + (1.0 - y / 100.0) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<path d="M{left} {top} V{} H{}" fill="none" stroke="black"/>"#,
        top + ph,
        left + pw
    );
    for &x in &sweep.values {
        let px = sx(x);
        let _ = writeln!(
            svg,
            r#"<line x1="{px:.2}" y1="{}" x2="{px:.2}" y2="{}" stroke="black"/><text class="xtick" x="{px:.2}" y="{}" text-anchor="middle">{x}</text>"#,
            top + ph,
            top + ph + 5.0,
            top + ph + 18.0
        );
    }
    for y in (0..=100).step_by(20) {
        let py = sy(y as f64);
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{py:.2}" x2="{left}" y2="{py:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{y}</text>"#,
            left - 5.0,
            left - 8.0,
            py + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        h - 10.0,
        sweep.param
    );
    let _ = writeln!(
        svg,
        r#"<text x="15" y="{:.2}" text-anchor="middle" transform="rotate(-90 15 {:.2})">transferability (%)</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );
    for (i, (name, mut pts)) in series.into_iter().enumerate() {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts
            .iter()
            .enumerate()
            .map(|(j, &(x, y))| {
                format!(
                    "{}{:.2} {:.2}",
                    if j == 0 { "M" } else { "L" },
                    sx(x),
                    sy(y)
                )
            })
            .collect();
        let _ = writeln!(
            svg,
            r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            path.join(" ")
        );
        for &(x, y) in &pts {
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#,
                sx(x),
                sy(y)
            );
        }
        let ly = top + 12.0 + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            left + pw + 10.0,
            left + pw + 30.0,
            left + pw + 35.0,
            ly + 4.0,
            escape(&name)
        );
    }
    svg.push_str("</svg>\n");
    Some(svg)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Writes the report into `dir` in each requested format and returns the
/// written paths. SVG output is produced only for sweep reports.
pub fn emit_report(
    report: &TransferReport,
    dir: &Path,
    formats: &[ReportFormat],
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for format in formats {
        match format {
            ReportFormat::Csv => {
                let path = dir.join("report.csv");
                write_csv(report, &path)?;
                written.push(path);
            }
            ReportFormat::Json => {
                let path = dir.join("report.json");
                let text = serde_json::to_string_pretty(report)?;
                fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
                written.push(path);
            }
            ReportFormat::Svg => {
                if let (Some(svg), Some(sweep)) = (sweep_svg(report), &report.sweep) {
                    let path = dir.join(format!("sweep_{}.svg", sweep.param));
                    fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
                    written.push(path);
                }
            }
        }
    }
    Ok(written)
}
