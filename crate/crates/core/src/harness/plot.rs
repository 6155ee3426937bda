//! Static SVG figures and a markdown report. Output is a pure function of the
//! run record, so reruns produce byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::summary::{summarize, Summary};
use super::RunRecord;
use crate::classifier::Arm;
use crate::error::{Error, Result};
use crate::io_util::atomic_write;

const WIDTH: f64 = 520.0;
const HEIGHT: f64 = 340.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    /// (x, mean top-1) in increasing x.
    pub points: Vec<(f64, f64)>,
}

/// Accuracy against n_shot: one series for real-only and one per augmented m.
pub fn nshot_series(summary: &Summary) -> Vec<Series> {
    let mut keys: Vec<(Arm, usize)> = summary.rows.iter().map(|r| (r.arm, r.m)).collect();
    keys.sort();
    keys.dedup();
    let many_m = keys.iter().filter(|(a, _)| *a == Arm::Augmented).count() > 1;
    keys.into_iter()
        .map(|(arm, m)| {
            let label = match arm {
                Arm::RealOnly => arm.to_string(),
                Arm::Augmented if many_m => format!("augmented m={m}"),
                Arm::Augmented => format!("augmented (m={m})"),
            };
            let points = summary
                .rows
                .iter()
                .filter(|r| r.arm == arm && r.m == m)
                .filter_map(|r| r.mean_top1.map(|v| (r.n_shot as f64, v)))
                .collect();
            Series { label, points }
        })
        .collect()
}

/// Accuracy against m at the smallest n_shot; real-only enters as m = 0.
/// Empty when the record has no augmented cells.
pub fn m_series(summary: &Summary) -> (Option<usize>, Vec<Series>) {
    let Some(n_shot) = summary
        .rows
        .iter()
        .filter(|r| r.arm == Arm::Augmented)
        .map(|r| r.n_shot)
        .min()
    else {
        return (None, vec![]);
    };
    let mut points: Vec<(f64, f64)> = summary
        .rows
        .iter()
        .filter(|r| r.n_shot == n_shot && (r.arm == Arm::Augmented || r.m == 0))
        .filter_map(|r| r.mean_top1.map(|v| (r.m as f64, v)))
        .collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    points.dedup_by(|a, b| a.0 == b.0);
    (
        Some(n_shot),
        vec![Series {
            label: format!("n_shot={n_shot}"),
            points,
        }],
    )
}

fn svg_chart(title: &str, x_label: &str, series: &[Series]) -> String {
    let xs: Vec<f64> = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .collect();
    let (mut x0, mut x1) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
            (a.min(x), b.max(x))
        });
    if !x0.is_finite() {
        (x0, x1) = (0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    let (pw, ph) = (WIDTH - 2.0 * MARGIN, HEIGHT - 2.0 * MARGIN);
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| MARGIN + (1.0 - y) * ph;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{title}</text>"#,
        WIDTH / 2.0
    );
    let _ = writeln!(
        s,
        r#"<path d="M{MARGIN} {MARGIN} V{} H{}" fill="none" stroke="black"/>"#,
        MARGIN + ph,
        MARGIN + pw
    );
    for i in 0..=5 {
        let y = i as f64 / 5.0;
        let _ = writeln!(
            s,
            r##"<line x1="{MARGIN}" x2="{}" y1="{py:.1}" y2="{py:.1}" stroke="#ddd"/><text x="{}" y="{:.1}" text-anchor="end">{y:.1}</text>"##,
            MARGIN + pw,
            MARGIN - 6.0,
            sy(y) + 4.0,
            py = sy(y),
        );
    }
    let mut ticks: Vec<f64> = xs.clone();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    for x in ticks {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{x}</text>"#,
            sx(x),
            MARGIN + ph + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">mean top-1</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    for (i, series) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = series
            .points
            .iter()
            .map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="series" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            pts.join(" ")
        );
        for &(x, y) in &series.points {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#,
                sx(x),
                sy(y)
            );
        }
        let ly = MARGIN + 8.0 + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{:.1}" width="10" height="10" fill="{color}"/><text x="{}" y="{:.1}">{}</text>"#,
            MARGIN + pw - 150.0,
            ly - 9.0,
            MARGIN + pw - 134.0,
            ly,
            series.label
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `summary.csv`, `accuracy_vs_nshot.svg`, `accuracy_vs_m.svg` (when
/// there are augmented cells) and `report.md` into `out`. Returns the paths
/// written.
pub fn plot_report(record: &RunRecord, out: &Path) -> Result<Vec<PathBuf>> {
    let summary = summarize(record)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut written = Vec::new();
    let mut md = String::from("# Experiment report\n\n");
    let _ = writeln!(md, "Config hash: `{}`\n", record.config_hash);
    md.push_str(&summary.to_markdown());
    md.push('\n');

    let csv = out.join("summary.csv");
    atomic_write(&csv, summary.to_csv().as_bytes())?;
    written.push(csv);

    let nshot = out.join("accuracy_vs_nshot.svg");
    atomic_write(
        &nshot,
        svg_chart("Query accuracy vs shots", "n_shot", &nshot_series(&summary)).as_bytes(),
    )?;
    md.push_str("## Accuracy vs n_shot\n\n![accuracy vs n_shot](accuracy_vs_nshot.svg)\n\n");
    written.push(nshot);

    md.push_str("## Accuracy vs m\n\n");
    match m_series(&summary) {
        (Some(n_shot), series) => {
            let path = out.join("accuracy_vs_m.svg");
            atomic_write(
                &path,
                svg_chart(
                    &format!("Query accuracy vs m ({n_shot}-shot)"),
                    "m",
                    &series,
                )
                .as_bytes(),
            )?;
            md.push_str("![accuracy vs m](accuracy_vs_m.svg)\n");
            written.push(path);
        }
        (None, _) => md.push_str("No selection sweep in this run; the m curve is omitted.\n"),
    }

    md.push_str("\n## Per-seed deltas (augmented minus real-only)\n\n");
    let mut any = false;
    for cell in record.cells.iter().filter(|c| c.arm == Arm::Augmented) {
        let (Some(aug), Some(base)) = (
            cell.report(),
            record
                .cell(Arm::RealOnly, cell.seed, cell.n_shot, 0)
                .and_then(|c| c.report()),
        ) else {
            continue;
        };
        any = true;
        let _ = writeln!(
            md,
            "- seed {} n_shot {} m {}: {:+.4}",
            cell.seed,
            cell.n_shot,
            cell.m,
            aug.top1_accuracy - base.top1_accuracy
        );
    }
    if !any {
        md.push_str("No paired cells.\n");
    }
    let report = out.join("report.md");
    atomic_write(&report, md.as_bytes())?;
    written.push(report);
    Ok(written)
}
