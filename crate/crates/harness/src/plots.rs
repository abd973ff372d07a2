//! Static SVG charts of coverage and log-width against the confidence level.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{HarnessError, Result};
use crate::experiment::CoverageRow;
use crate::methods::Method;

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 360.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 130.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 50.0;
const PALETTE: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd"];

struct Axes {
    x: (f64, f64),
    y: (f64, f64),
}

impl Axes {
    fn px(&self, x: f64) -> f64 {
        MARGIN_LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN_BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    }
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if hi - lo < 1e-9 {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Series {
    method: Method,
    points: Vec<(f64, f64)>,
}

fn chart(title: &str, y_label: &str, series: &[Series], axes: &Axes, diagonal: bool) -> String {
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="18" text-anchor="middle" font-size="13">{}</text>"#,
        (MARGIN_LEFT + WIDTH - MARGIN_RIGHT) / 2.0,
        escape(title)
    );
    let (x0, x1) = (axes.px(axes.x.0), axes.px(axes.x.1));
    let (y0, y1) = (axes.py(axes.y.0), axes.py(axes.y.1));
    let _ = writeln!(
        svg,
        r#"<rect class="frame" x="{x0:.1}" y="{y1:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
        x1 - x0,
        y0 - y1
    );
    for i in 0..=4 {
        let fx = axes.x.0 + (axes.x.1 - axes.x.0) * i as f64 / 4.0;
        let fy = axes.y.0 + (axes.y.1 - axes.y.0) * i as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{fx:.2}</text>"#,
            axes.px(fx),
            y0 + 15.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{fy:.2}</text>"#,
            x0 - 5.0,
            axes.py(fy) + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">confidence level</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="15" y="{:.1}" text-anchor="middle" transform="rotate(-90 15 {:.1})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
    if diagonal {
        let lo = axes.x.0.max(axes.y.0);
        let hi = axes.x.1.min(axes.y.1);
        let _ = writeln!(
            svg,
            r##"<line class="reference" x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#888888" stroke-dasharray="4 3"/>"##,
            axes.px(lo),
            axes.py(lo),
            axes.px(hi),
            axes.py(hi)
        );
    }
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.1},{:.1}", axes.px(x), axes.py(y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline class="series" data-method="{}" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            s.method,
            pts.join(" ")
        );
        for &(x, y) in &s.points {
            let _ = writeln!(
                svg,
                r#"<circle class="marker" data-method="{}" cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#,
                s.method,
                axes.px(x),
                axes.py(y)
            );
        }
        let ly = MARGIN_TOP + 10.0 + 16.0 * k as f64;
        let lx = WIDTH - MARGIN_RIGHT + 10.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            lx + 18.0,
            lx + 22.0,
            ly + 4.0,
            s.method
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn series_for(rows: &[&CoverageRow], value: impl Fn(&CoverageRow) -> f64) -> Vec<Series> {
    let mut methods: Vec<Method> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
    }
    methods
        .into_iter()
        .map(|method| {
            let mut points: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.method == method)
                .map(|r| (r.level, value(r)))
                .filter(|(_, y)| y.is_finite())
                .collect();
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series { method, points }
        })
        .collect()
}

fn bounds(series: &[Series], axis: impl Fn(&(f64, f64)) -> f64) -> Option<(f64, f64)> {
    let vals = series.iter().flat_map(|s| s.points.iter().map(&axis));
    vals.fold(None, |acc, v| match acc {
        None => Some((v, v)),
        Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
    })
}

/// Writes `{env}_coverage_n{n}.svg` and `{env}_log_width_n{n}.svg` for each
/// dataset size in `rows`. Non-finite values (e.g. a log-width of -inf) are
/// left out of the lines.
pub fn emit_plots(rows: &[CoverageRow], env: &str, output_dir: &Path) -> Result<Vec<PathBuf>> {
    if rows.is_empty() {
        return Err(HarnessError::config("rows", "nothing to plot"));
    }
    fs::create_dir_all(output_dir).map_err(|source| HarnessError::File {
        path: output_dir.display().to_string(),
        source,
    })?;
    let sizes: BTreeSet<usize> = rows.iter().map(|r| r.n).collect();
    let mut written = Vec::new();
    for n in sizes {
        let cell: Vec<&CoverageRow> = rows.iter().filter(|r| r.n == n).collect();
        let (lmin, lmax) = cell.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
            (lo.min(r.level), hi.max(r.level))
        });
        let x = padded(lmin, lmax);

        let coverage = series_for(&cell, |r| r.coverage);
        let axes = Axes { x, y: (0.0, 1.0) };
        let svg = chart(&format!("{env}: coverage, n = {n}"), "empirical coverage", &coverage, &axes, true);
        written.push(write(output_dir, &format!("{env}_coverage_n{n}.svg"), &svg)?);

        let widths = series_for(&cell, |r| r.median_log_width);
        let y = bounds(&widths, |p| p.1).map_or((-1.0, 1.0), |(lo, hi)| padded(lo, hi));
        let svg = chart(&format!("{env}: interval width, n = {n}"), "median log-width", &widths, &Axes { x, y }, false);
        written.push(write(output_dir, &format!("{env}_log_width_n{n}.svg"), &svg)?);
    }
    Ok(written)
}

fn write(dir: &Path, name: &str, content: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, content).map_err(|source| HarnessError::File {
        path: path.display().to_string(),
        source,
    })?;
    Ok(path)
}
