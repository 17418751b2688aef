//! Minimal SVG charts: line, bar and scatter plots with labelled axes.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[derive(Clone, Copy)]
struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit(points: impl Iterator<Item = (f64, f64)>) -> Frame {
        let mut f = Frame { x0: f64::INFINITY, x1: f64::NEG_INFINITY, y0: f64::INFINITY, y1: f64::NEG_INFINITY };
        for (x, y) in points.filter(|(x, y)| x.is_finite() && y.is_finite()) {
            f.x0 = f.x0.min(x);
            f.x1 = f.x1.max(x);
            f.y0 = f.y0.min(y);
            f.y1 = f.y1.max(y);
        }
        if !f.x0.is_finite() {
            return Frame { x0: 0.0, x1: 1.0, y0: 0.0, y1: 1.0 };
        }
        let pad = |lo: f64, hi: f64| {
            let d = if hi > lo { 0.05 * (hi - lo) } else { 0.5f64.max(0.05 * hi.abs()) };
            (lo - d, hi + d)
        };
        (f.x0, f.x1) = pad(f.x0, f.x1);
        (f.y0, f.y1) = pad(f.y0, f.y1);
        f
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }
}

fn header(out: &mut String, title: &str, xlabel: &str, ylabel: &str) {
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (LEFT + W - RIGHT) / 2.0, H - 15.0, escape(xlabel));
    let _ = writeln!(
        out,
        r#"<text x="18" y="{y}" text-anchor="middle" transform="rotate(-90 18 {y})">{}</text>"#,
        escape(ylabel),
        y = (TOP + H - BOTTOM) / 2.0
    );
}

fn axes(out: &mut String, f: &Frame, x_ticks: bool) {
    let (xa, ya) = (H - BOTTOM, LEFT);
    let _ = writeln!(out, r#"<line x1="{ya}" y1="{xa}" x2="{}" y2="{xa}" stroke="black"/>"#, W - RIGHT);
    let _ = writeln!(out, r#"<line x1="{ya}" y1="{TOP}" x2="{ya}" y2="{xa}" stroke="black"/>"#);
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let y = f.y0 + t * (f.y1 - f.y0);
        let _ = writeln!(out, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, LEFT - 6.0, f.py(y) + 4.0, tick(y));
        if x_ticks {
            let x = f.x0 + t * (f.x1 - f.x0);
            let _ = writeln!(out, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, f.px(x), H - BOTTOM + 16.0, tick(x));
        }
    }
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn legend(out: &mut String, names: &[&str]) {
    for (i, name) in names.iter().enumerate() {
        let y = TOP + 14.0 * i as f64;
        let c = COLORS[i % COLORS.len()];
        let _ = writeln!(out, r#"<rect x="{}" y="{}" width="10" height="10" fill="{c}"/>"#, W - RIGHT - 150.0, y);
        let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, W - RIGHT - 135.0, y + 9.0, escape(name));
    }
}

/// One polyline per named series.
pub fn line_plot(title: &str, xlabel: &str, ylabel: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let f = Frame::fit(series.iter().flat_map(|(_, p)| p.iter().copied()));
    let mut out = String::new();
    header(&mut out, title, xlabel, ylabel);
    axes(&mut out, &f, true);
    for (i, (_, pts)) in series.iter().enumerate() {
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", f.px(x), f.py(y))).collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{}" stroke-width="2" points="{}"/>"#,
            COLORS[i % COLORS.len()],
            path.join(" ")
        );
    }
    legend(&mut out, &series.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

/// Vertical bars with a category label under each; `groups` colours bars by group index.
pub fn bar_plot(title: &str, ylabel: &str, labels: &[String], values: &[f64], groups: &[usize]) -> String {
    let top = values.iter().copied().fold(0.0f64, f64::max).max(1e-12);
    let f = Frame { x0: 0.0, x1: values.len().max(1) as f64, y0: 0.0, y1: top * 1.05 };
    let mut out = String::new();
    header(&mut out, title, "", ylabel);
    axes(&mut out, &f, false);
    let slot = (W - LEFT - RIGHT) / values.len().max(1) as f64;
    for (i, (&v, label)) in values.iter().zip(labels).enumerate() {
        let x = f.px(i as f64) + 0.1 * slot;
        let y = f.py(v);
        let c = COLORS[groups.get(i).copied().unwrap_or(0) % COLORS.len()];
        let _ = writeln!(
            out,
            r#"<rect x="{x:.1}" y="{y:.1}" width="{:.1}" height="{:.1}" fill="{c}"/>"#,
            0.8 * slot,
            (H - BOTTOM - y).max(0.0)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{}" text-anchor="middle" font-size="10">{}</text>"#,
            x + 0.4 * slot,
            H - BOTTOM + 14.0,
            escape(label)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Points with an optional text label beside each.
pub fn scatter_plot(title: &str, xlabel: &str, ylabel: &str, points: &[(f64, f64, String)]) -> String {
    let f = Frame::fit(points.iter().map(|p| (p.0, p.1)));
    let mut out = String::new();
    header(&mut out, title, xlabel, ylabel);
    axes(&mut out, &f, true);
    for (x, y, label) in points {
        let (px, py) = (f.px(*x), f.py(*y));
        let _ = writeln!(out, r#"<circle cx="{px:.1}" cy="{py:.1}" r="4" fill="{}"/>"#, COLORS[0]);
        if !label.is_empty() {
            let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" font-size="10">{}</text>"#, px + 6.0, py - 4.0, escape(label));
        }
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_are_well_formed() {
        let l = line_plot("a<b", "x", "y", &[("s".into(), vec![(0.0, 1.0), (1.0, 2.0)])]);
        let b = bar_plot("t", "y", &["b0".into(), "b1".into()], &[0.2, 0.0], &[0, 1]);
        let s = scatter_plot("t", "x", "y", &[(1.0, 1.0, "p".into())]);
        for svg in [&l, &b, &s] {
            assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
            assert!(!svg.contains("NaN") && !svg.contains("inf"));
        }
        assert!(l.contains("a&lt;b"));
    }

    #[test]
    fn degenerate_inputs_render() {
        let s = scatter_plot("t", "x", "y", &[]);
        assert!(!s.contains("NaN"));
        let s = scatter_plot("t", "x", "y", &[(3.0, 3.0, String::new())]);
        assert!(!s.contains("NaN"));
    }
}
