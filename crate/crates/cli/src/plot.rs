//! Static SVG learning curves: one panel per metric, one line per method.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use alcode::simulator::RunLog;
use alcode::Result;

const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 260.0;
const MARGIN: f64 = 48.0;
const LEGEND_H: f64 = 18.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

struct Series {
    method: String,
    /// (labeled count, mean metric value) per round.
    points: Vec<(f64, f64)>,
}

fn mean_curves(logs: &[RunLog], metric_col: usize) -> Vec<Series> {
    let mut methods: Vec<&str> = Vec::new();
    for log in logs {
        if !methods.contains(&log.method.as_str()) {
            methods.push(&log.method);
        }
    }
    methods
        .into_iter()
        .map(|method| {
            let runs: Vec<&RunLog> = logs.iter().filter(|l| l.method == method).collect();
            let rounds = runs.iter().map(|r| r.rounds.len()).min().unwrap_or(0);
            let points = (0..rounds)
                .map(|k| {
                    let x = runs[0].rounds[k].labeled as f64;
                    let y = runs
                        .iter()
                        .map(|r| r.rounds[k].metrics[metric_col].value)
                        .sum::<f64>()
                        / runs.len() as f64;
                    (x, y)
                })
                .collect();
            Series {
                method: method.to_string(),
                points,
            }
        })
        .collect()
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Renders mean curves over seeds for every metric in the logs.
pub fn render(logs: &[RunLog]) -> String {
    let metrics = logs.first().map(|l| l.metrics.clone()).unwrap_or_default();
    let methods = logs.iter().fold(Vec::<&str>::new(), |mut acc, l| {
        if !acc.contains(&l.method.as_str()) {
            acc.push(&l.method);
        }
        acc
    });
    let width = PANEL_W * metrics.len().max(1) as f64;
    let height = PANEL_H + LEGEND_H * methods.len() as f64 + 10.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        svg,
        r#"<rect width="{width}" height="{height}" fill="white"/>"#
    );

    for (p, metric) in metrics.iter().enumerate() {
        let series = mean_curves(logs, p);
        let (x0, x1) = bounds(series.iter().flat_map(|s| s.points.iter().map(|q| q.0)));
        let (y0, y1) = bounds(series.iter().flat_map(|s| s.points.iter().map(|q| q.1)));
        let left = p as f64 * PANEL_W + MARGIN;
        let right = (p + 1) as f64 * PANEL_W - 12.0;
        let top = 24.0;
        let bottom = PANEL_H - MARGIN + 12.0;
        let sx = |x: f64| left + (x - x0) / (x1 - x0) * (right - left);
        let sy = |y: f64| bottom - (y - y0) / (y1 - y0) * (bottom - top);

        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="16" text-anchor="middle" font-weight="bold">{}</text>"#,
            (left + right) / 2.0,
            metric
        );
        let _ = writeln!(
            svg,
            r#"<path d="M{left:.1},{top:.1} V{bottom:.1} H{right:.1}" fill="none" stroke="black"/>"#
        );
        for t in 0..=4 {
            let fx = x0 + (x1 - x0) * t as f64 / 4.0;
            let fy = y0 + (y1 - y0) * t as f64 / 4.0;
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{:.0}</text>"#,
                sx(fx),
                bottom + 14.0,
                fx
            );
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.3}</text>"#,
                left - 4.0,
                sy(fy) + 4.0,
                fy
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">labeled items</text>"#,
            (left + right) / 2.0,
            bottom + 30.0
        );
        for s in &series {
            let colour =
                PALETTE[methods.iter().position(|m| *m == s.method).unwrap_or(0) % PALETTE.len()];
            let pts: Vec<String> = s
                .points
                .iter()
                .map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y)))
                .collect();
            let _ = writeln!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#,
                pts.join(" ")
            );
        }
    }

    for (i, method) in methods.iter().enumerate() {
        let y = PANEL_H + LEGEND_H * i as f64;
        let colour = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            svg,
            r#"<line x1="{MARGIN}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{colour}" stroke-width="2"/>"#,
            MARGIN + 20.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}">{}</text>"#,
            MARGIN + 26.0,
            y + 4.0,
            escape(method)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn write_learning_curves(path: &Path, logs: &[RunLog]) -> Result<()> {
    fs::write(path, render(logs))?;
    Ok(())
}
