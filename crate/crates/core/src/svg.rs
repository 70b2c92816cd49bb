// SPDX-License-Identifier: Apache-2.0

//! Minimal SVG histograms: one `<rect>` per bin plus two axis lines.
//! Coordinates are printed with fixed precision so output is byte-stable.

use std::fmt::Write;

use crate::simulate::Histogram;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 48.0;

pub struct Series<'a> {
    pub label: &'a str,
    pub histogram: &'a Histogram,
    pub color: &'a str,
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Overlaid histograms sharing one x-axis. Each series is normalized to
/// unit area so different sample counts compare visually.
pub fn histogram_svg(title: &str, x_label: &str, series: &[Series<'_>]) -> String {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in series {
        if let (Some(first), Some(last)) = (s.histogram.edges.first(), s.histogram.edges.last()) {
            lo = lo.min(*first);
            hi = hi.max(*last);
        }
    }
    if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
        lo = 0.0;
        hi = 1.0;
    }

    let density = |h: &Histogram| -> Vec<f64> {
        let total: u64 = h.counts.iter().sum();
        h.counts
            .iter()
            .zip(h.edges.windows(2))
            .map(|(&c, e)| {
                let w = e[1] - e[0];
                if total == 0 || w <= 0.0 {
                    0.0
                } else {
                    c as f64 / (total as f64 * w)
                }
            })
            .collect()
    };
    let densities: Vec<Vec<f64>> = series.iter().map(|s| density(s.histogram)).collect();
    let peak = densities.iter().flatten().copied().fold(0.0, f64::max);
    let peak = if peak > 0.0 { peak } else { 1.0 };

    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let x = |v: f64| MARGIN + (v - lo) / (hi - lo) * plot_w;
    let y = |d: f64| HEIGHT - MARGIN - d / peak * plot_h;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0}" height="{HEIGHT:.0}" viewBox="0 0 {WIDTH:.0} {HEIGHT:.0}">"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    for (s, dens) in series.iter().zip(&densities) {
        let _ = writeln!(out, r#"<g fill="{}" fill-opacity="0.5">"#, escape(s.color));
        for (d, e) in dens.iter().zip(s.histogram.edges.windows(2)) {
            if *d <= 0.0 {
                continue;
            }
            let _ = writeln!(
                out,
                r#"<rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}"/>"#,
                x(e[0]),
                y(*d),
                x(e[1]) - x(e[0]),
                HEIGHT - MARGIN - y(*d)
            );
        }
        let _ = writeln!(out, "</g>");
    }
    let base = HEIGHT - MARGIN;
    let _ = writeln!(
        out,
        r#"<line x1="{MARGIN:.1}" y1="{base:.1}" x2="{:.1}" y2="{base:.1}" stroke="black"/>"#,
        WIDTH - MARGIN
    );
    let _ = writeln!(
        out,
        r#"<line x1="{MARGIN:.1}" y1="{MARGIN:.1}" x2="{MARGIN:.1}" y2="{base:.1}" stroke="black"/>"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{MARGIN:.1}" y="{:.1}" font-family="sans-serif" font-size="11">{lo:.6}</text>"#,
        base + 16.0
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="11">{hi:.6}</text>"#,
        WIDTH - MARGIN,
        base + 16.0
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 8.0,
        escape(x_label)
    );
    for (k, s) in series.iter().enumerate() {
        let ly = MARGIN + 16.0 * k as f64;
        let _ = writeln!(
            out,
            r#"<rect x="{:.1}" y="{:.1}" width="10" height="10" fill="{}" fill-opacity="0.5"/><text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11">{}</text>"#,
            WIDTH - MARGIN - 150.0,
            ly,
            escape(s.color),
            WIDTH - MARGIN - 134.0,
            ly + 9.0,
            escape(s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}
