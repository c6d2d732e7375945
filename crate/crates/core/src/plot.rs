// SPDX-License-Identifier: MIT OR Apache-2.0

//! Standalone SVG scatter plots with optional graph-edge overlays, and their
//! CSV twins.

use std::fmt::Write as _;

/// One labelled point set.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    /// Legend entry.
    pub name: String,
    /// `(x, y)` coordinates.
    pub points: Vec<(f64, f64)>,
    /// Optional per-point labels.
    pub labels: Vec<String>,
    /// Segments drawn between points `(i, j)` of this series.
    pub edges: Vec<(usize, usize)>,
    /// Connect consecutive points with a line.
    pub line: bool,
}

impl Series {
    /// Bare points.
    pub fn points(name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            name: name.into(),
            points,
            labels: Vec::new(),
            edges: Vec::new(),
            line: false,
        }
    }
}

/// A plot.
#[derive(Debug, Clone, PartialEq)]
pub struct Scatter {
    /// Title.
    pub title: String,
    /// Horizontal axis label.
    pub x_label: String,
    /// Vertical axis label.
    pub y_label: String,
    /// Log-scale horizontal axis (positive `x` only).
    pub log_x: bool,
    /// Point sets.
    pub series: Vec<Series>,
    /// Free text stored in the SVG `<desc>` element.
    pub description: String,
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"];
const W: f64 = 640.0;
const H: f64 = 480.0;
const MARGIN: f64 = 60.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

impl Scatter {
    fn tx(&self, x: f64) -> f64 {
        if self.log_x {
            x.max(f64::MIN_POSITIVE).ln()
        } else {
            x
        }
    }

    /// Render as a standalone SVG document.
    pub fn to_svg(&self) -> String {
        let (x0, x1) = span(self.series.iter().flat_map(|s| s.points.iter().map(|p| self.tx(p.0))));
        let (y0, y1) = span(self.series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
        let px = |x: f64| MARGIN + (self.tx(x) - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
        let py = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, "<title>{}</title>", escape(&self.title));
        let _ = writeln!(s, "<desc>{}</desc>", escape(&self.description));
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r##"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
            W - 2.0 * MARGIN,
            H - 2.0 * MARGIN
        );
        let _ = writeln!(s, r#"<text x="{}" y="30" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, escape(&self.title));
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 15.0, escape(&self.x_label));
        let _ = writeln!(
            s,
            r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
            H / 2.0,
            H / 2.0,
            escape(&self.y_label)
        );
        for (v, anchor, x, y) in [
            (x0, "start", MARGIN, H - MARGIN + 16.0),
            (x1, "end", W - MARGIN, H - MARGIN + 16.0),
        ] {
            let shown = if self.log_x { v.exp() } else { v };
            let _ = writeln!(s, r#"<text x="{x}" y="{y}" text-anchor="{anchor}">{shown:.3}</text>"#);
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{y0:.3}</text>"#, MARGIN - 4.0, H - MARGIN);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{y1:.3}</text>"#, MARGIN - 4.0, MARGIN + 4.0);

        for (k, series) in self.series.iter().enumerate() {
            let c = PALETTE[k % PALETTE.len()];
            for &(i, j) in &series.edges {
                if let (Some(a), Some(b)) = (series.points.get(i), series.points.get(j)) {
                    let _ = writeln!(
                        s,
                        r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{c}" stroke-opacity="0.45"/>"#,
                        px(a.0),
                        py(a.1),
                        px(b.0),
                        py(b.1)
                    );
                }
            }
            if series.line && series.points.len() > 1 {
                let path: Vec<String> = series.points.iter().map(|p| format!("{:.2},{:.2}", px(p.0), py(p.1))).collect();
                let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{c}"/>"#, path.join(" "));
            }
            for (i, p) in series.points.iter().enumerate() {
                let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{c}"/>"#, px(p.0), py(p.1));
                if let Some(label) = series.labels.get(i) {
                    let _ = writeln!(
                        s,
                        r#"<text x="{:.2}" y="{:.2}" font-size="9">{}</text>"#,
                        px(p.0) + 4.0,
                        py(p.1) - 4.0,
                        escape(label)
                    );
                }
            }
            let ly = MARGIN + 14.0 + 16.0 * k as f64;
            let _ = writeln!(s, r#"<circle cx="{}" cy="{}" r="4" fill="{c}"/>"#, W - MARGIN - 110.0, ly - 4.0);
            let _ = writeln!(s, r#"<text x="{}" y="{ly}">{}</text>"#, W - MARGIN - 100.0, escape(&series.name));
        }
        s.push_str("</svg>\n");
        s
    }

    /// CSV twin: `series,index,label,x,y`, preceded by `# ` comment lines
    /// holding the description.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for line in self.description.lines() {
            let _ = writeln!(s, "# {line}");
        }
        s.push_str("series,index,label,x,y\n");
        for series in &self.series {
            for (i, p) in series.points.iter().enumerate() {
                let label = series.labels.get(i).map(String::as_str).unwrap_or("");
                let _ = writeln!(s, "{},{i},{},{:.16e},{:.16e}", csv_field(&series.name), csv_field(label), p.0, p.1);
            }
        }
        s
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}
