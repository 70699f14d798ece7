//! Minimal single-file SVG line charts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::CliError;

pub struct Series {
    pub label: String,
    pub values: Vec<f64>,
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

const W: f64 = 720.0;
const H: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

/// Renders every series against `t` and writes `dir/name`.
pub fn line_chart(
    dir: &Path,
    name: &str,
    title: &str,
    t: &[f64],
    series: &[Series],
) -> Result<PathBuf, CliError> {
    let (t0, t1) = bounds(t.iter().copied());
    let (mut y0, mut y1) = bounds(series.iter().flat_map(|s| s.values.iter().copied()));
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let x = |v: f64| LEFT + (v - t0) / (t1 - t0).max(f64::MIN_POSITIVE) * pw;
    let y = |v: f64| TOP + (y1 - v) / (y1 - y0) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, LEFT + pw / 2.0, escape(title));
    let _ = writeln!(svg, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let tv = t0 + f * (t1 - t0);
        let yv = y0 + f * (y1 - y0);
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, x(tv), H - BOTTOM + 18.0, tick(tv));
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, LEFT - 6.0, y(yv) + 4.0, tick(yv));
        let _ = writeln!(svg, r##"<line x1="{LEFT}" x2="{:.1}" y1="{:.1}" y2="{:.1}" stroke="#ddd"/>"##, LEFT + pw, y(yv), y(yv));
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">t</text>"#, LEFT + pw / 2.0, H - 12.0);

    // thin long series so files stay small
    let stride = (t.len() / 2000).max(1);
    for (k, s) in series.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let mut points = String::new();
        for (i, (&tv, &v)) in t.iter().zip(&s.values).enumerate() {
            if i % stride == 0 || i + 1 == t.len() {
                let _ = write!(points, "{:.2},{:.2} ", x(tv), y(v));
            }
        }
        let _ = writeln!(svg, r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#, points.trim_end());
        let ly = TOP + 16.0 * k as f64 + 10.0;
        let lx = W - RIGHT + 12.0;
        let _ = writeln!(svg, r#"<line x1="{lx}" x2="{}" y1="{ly}" y2="{ly}" stroke="{colour}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, escape(&s.label));
    }
    svg.push_str("</svg>\n");

    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, svg)?;
    Ok(path)
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
