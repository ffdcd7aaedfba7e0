//! Time-series SVG plots of a metrics CSV, one file per metric.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use splinefuse::evalkit::{read_metrics_csv, MetricsRow};

use crate::RunError;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

struct Panel {
    file: &'static str,
    title: &'static str,
    unit: &'static str,
    value: fn(&MetricsRow) -> f64,
    fixed_range: Option<(f64, f64)>,
}

const PANELS: [Panel; 4] = [
    Panel { file: "position_error.svg", title: "Planar position error", unit: "m", value: |r| r.pos_err, fixed_range: None },
    Panel { file: "z_error.svg", title: "Vertical error", unit: "m", value: |r| r.z_err, fixed_range: None },
    Panel { file: "orientation_error.svg", title: "Orientation error", unit: "rad", value: |r| r.psi_err, fixed_range: None },
    Panel { file: "iou.svg", title: "Side-view IoU", unit: "", value: |r| r.iou, fixed_range: Some((0.0, 1.0)) },
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi - lo > 1e-12 {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

fn render(panel: &Panel, groups: &[(String, Vec<&MetricsRow>)]) -> String {
    let all = || groups.iter().flat_map(|(_, rows)| rows.iter());
    let (t0, t1) = range(all().map(|r| r.t));
    let (y0, y1) = panel.fixed_range.unwrap_or_else(|| range(all().map(|r| (panel.value)(r))));
    let pw = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let ph = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let sx = |t: f64| MARGIN_LEFT + (t - t0) / (t1 - t0) * pw;
    let sy = |v: f64| MARGIN_TOP + (y1 - v) / (y1 - y0) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="24" font-size="16" text-anchor="middle">{}</text>"#, MARGIN_LEFT + pw / 2.0, panel.title);
    for i in 0..=5 {
        let f = i as f64 / 5.0;
        let (t, v) = (t0 + f * (t1 - t0), y0 + f * (y1 - y0));
        let (x, y) = (sx(t), sy(v));
        let _ = writeln!(
            svg,
            r##"<line x1="{MARGIN_LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{v:.3}</text>"##,
            MARGIN_LEFT + pw,
            MARGIN_LEFT - 6.0,
            y + 4.0
        );
        let _ = writeln!(
            svg,
            r##"<line x1="{x:.2}" y1="{MARGIN_TOP}" x2="{x:.2}" y2="{:.2}" stroke="#ddd"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{t:.1}</text>"##,
            MARGIN_TOP + ph,
            MARGIN_TOP + ph + 18.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(svg, r#"<text x="{:.2}" y="{}" text-anchor="middle">t (s)</text>"#, MARGIN_LEFT + pw / 2.0, HEIGHT - 10.0);
    let label = if panel.unit.is_empty() { panel.title.to_owned() } else { format!("{} ({})", panel.title, panel.unit) };
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{label}</text>"#,
        MARGIN_TOP + ph / 2.0,
        MARGIN_TOP + ph / 2.0
    );
    for (i, (variant, rows)) in groups.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = rows.iter().map(|r| format!("{:.2},{:.2}", sx(r.t), sy((panel.value)(r)))).collect();
        let _ = writeln!(svg, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, points.join(" "));
        let ly = MARGIN_TOP + 10.0 + 18.0 * i as f64;
        let lx = MARGIN_LEFT + pw + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(variant)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Rows grouped by variant in order of first appearance, each sorted by time.
fn group(rows: &[MetricsRow]) -> Vec<(String, Vec<&MetricsRow>)> {
    let mut groups: Vec<(String, Vec<&MetricsRow>)> = Vec::new();
    for r in rows {
        match groups.iter_mut().find(|(v, _)| *v == r.variant) {
            Some((_, g)) => g.push(r),
            None => groups.push((r.variant.clone(), vec![r])),
        }
    }
    for (_, g) in &mut groups {
        g.sort_by(|a, b| a.t.total_cmp(&b.t));
    }
    groups
}

/// Renders the four metric plots from parsed rows.
pub fn render_plots(rows: &[MetricsRow]) -> Vec<(&'static str, String)> {
    let groups = group(rows);
    PANELS.iter().map(|p| (p.file, render(p, &groups))).collect()
}

/// Reads `metrics_csv` and writes one SVG per metric into `out_dir`.
/// Nothing is written unless the whole file parses.
pub fn export_plots(metrics_csv: &Path, out_dir: &Path) -> Result<Vec<PathBuf>, RunError> {
    let file = std::fs::File::open(metrics_csv).map_err(crate::io_err(metrics_csv))?;
    let rows = read_metrics_csv(std::io::BufReader::new(file))?;
    let plots = render_plots(&rows);
    std::fs::create_dir_all(out_dir).map_err(crate::io_err(out_dir))?;
    plots
        .into_iter()
        .map(|(name, svg)| {
            let path = out_dir.join(name);
            std::fs::write(&path, svg).map_err(crate::io_err(&path))?;
            Ok(path)
        })
        .collect()
}
