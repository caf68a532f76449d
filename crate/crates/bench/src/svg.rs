//! Minimal SVG charts: axes, one polyline per series, or histogram bars.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::report::Chart;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    /// Draw bars of this width at each point instead of a polyline.
    #[serde(default)]
    pub bar_width: Option<f64>,
}

impl Series {
    pub fn line(name: &str, points: Vec<(f64, f64)>) -> Self {
        Self { name: name.into(), points, bar_width: None }
    }

    /// Counts of `values` in `bins` equal-width bins over `[lo, hi]`.
    pub fn histogram(name: &str, values: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0.0; bins];
        for &v in values {
            let b = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
            counts[b] += 1.0;
        }
        let points = counts.iter().enumerate().map(|(b, &c)| (lo + (b as f64 + 0.5) * width, c)).collect();
        Self { name: name.into(), points, bar_width: Some(width) }
    }
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn bounds(chart: &Chart) -> (f64, f64, f64, f64) {
    let mut xs = (f64::INFINITY, f64::NEG_INFINITY);
    let mut ys = (f64::INFINITY, f64::NEG_INFINITY);
    for s in &chart.series {
        let half = s.bar_width.unwrap_or(0.0) / 2.0;
        for &(x, y) in s.points.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
            xs = (xs.0.min(x - half), xs.1.max(x + half));
            ys = (ys.0.min(y), ys.1.max(y));
        }
        if s.bar_width.is_some() {
            ys.0 = ys.0.min(0.0);
        }
    }
    if !xs.0.is_finite() {
        return (0.0, 1.0, 0.0, 1.0);
    }
    let pad = |(lo, hi): (f64, f64)| if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
    let (x0, x1) = pad(xs);
    let (y0, y1) = pad(ys);
    (x0, x1, y0, y1)
}

pub fn line_chart(chart: &Chart) -> String {
    let (x0, x1, y0, y1) = bounds(chart);
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(&chart.title)
    );
    let (left, bottom, right, top) = (MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN, MARGIN);
    let _ = writeln!(out, r#"<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/>"#);
    let _ = writeln!(out, r#"<line x1="{left}" y1="{bottom}" x2="{left}" y2="{top}" stroke="black"/>"#);
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        let (xv, yv) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="11">{}</text>"#,
            px(xv),
            bottom + 16.0,
            tick(xv)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-size="11">{}</text>"#,
            left - 6.0,
            py(yv) + 4.0,
            tick(yv)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0,
        escape(&chart.x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(&chart.y_label)
    );

    for (k, s) in chart.series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<(f64, f64)> = s.points.iter().copied().filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
        match s.bar_width {
            Some(w) => {
                let _ = writeln!(out, r#"<g fill="{color}" fill-opacity="0.5"><title>{}</title>"#, escape(&s.name));
                for (x, y) in pts {
                    let (xa, xb) = (px(x - w / 2.0), px(x + w / 2.0));
                    let (ya, yb) = (py(y.max(0.0)), py(0.0f64.max(y0)));
                    let _ = writeln!(
                        out,
                        r#"<rect x="{xa:.1}" y="{ya:.1}" width="{:.1}" height="{:.1}"/>"#,
                        (xb - xa).max(0.0),
                        (yb - ya).max(0.0)
                    );
                }
                let _ = writeln!(out, "</g>");
            }
            None => {
                let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
                let _ = writeln!(
                    out,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"><title>{}</title></polyline>"#,
                    coords.join(" "),
                    escape(&s.name)
                );
            }
        }
        let ly = top + 14.0 * k as f64;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{ly:.1}" font-size="11" fill="{color}">{}</text>"#,
            right - 90.0,
            escape(&s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 || v == v.round() {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_counts_every_value() {
        let s = Series::histogram("h", &[-1.0, -0.2, 0.1, 0.9, 1.0], -1.0, 1.0, 4);
        let total: f64 = s.points.iter().map(|p| p.1).sum();
        assert_eq!(total, 5.0);
        assert_eq!(s.points[3].1, 2.0);
    }

    #[test]
    fn names_are_escaped() {
        let chart = Chart {
            name: "c".into(),
            title: "a < b & c".into(),
            x_label: String::new(),
            y_label: String::new(),
            series: vec![Series::line("m", vec![(0.0, 1.0), (1.0, 2.0)])],
        };
        let svg = line_chart(&chart);
        assert!(svg.contains("a &lt; b &amp; c"));
        assert_eq!(svg.matches("<polyline").count(), 1);
    }
}
