//! Minimal SVG plots. Every plotted point carries its data coordinates in
//! `data-x` / `data-y` attributes so plots can be compared numerically.

use std::fmt::Write;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesKind {
    Points,
    Line,
    /// Piecewise constant through the points, changing at midpoints.
    Step,
    Bars,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub kind: SeriesKind,
    pub color: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(name: &str, kind: SeriesKind, color: &str, points: Vec<(f64, f64)>) -> Self {
        Self {
            name: name.to_string(),
            kind,
            color: color.to_string(),
            points,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Horizontal reference lines `(y, label)`.
    pub hlines: Vec<(f64, String)>,
    /// Vertical reference lines `(x, label)`.
    pub vlines: Vec<(f64, String)>,
}

impl Panel {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Self {
            title: title.to_string(),
            x_label: x_label.to_string(),
            y_label: y_label.to_string(),
            ..Self::default()
        }
    }

    pub fn with_series(mut self, s: Series) -> Self {
        self.series.push(s);
        self
    }

    pub fn with_hline(mut self, y: f64, label: &str) -> Self {
        self.hlines.push((y, label.to_string()));
        self
    }

    pub fn with_vline(mut self, x: f64, label: &str) -> Self {
        self.vlines.push((x, label.to_string()));
        self
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        let xs = self
            .series
            .iter()
            .flat_map(|s| s.points.iter().map(|p| p.0))
            .chain(self.vlines.iter().map(|v| v.0));
        let ys = self
            .series
            .iter()
            .flat_map(|s| {
                let bars = s.kind == SeriesKind::Bars;
                s.points.iter().map(|p| p.1).chain(bars.then_some(0.0))
            })
            .chain(self.hlines.iter().map(|h| h.0));
        let (x0, x1) = span(xs);
        let (y0, y1) = span(ys);
        (x0, x1, y0, y1)
    }
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 320.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_R: f64 = 15.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 45.0;

struct Frame {
    ox: f64,
    oy: f64,
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        self.ox + MARGIN_L + (x - self.x0) / (self.x1 - self.x0) * (PANEL_W - MARGIN_L - MARGIN_R)
    }

    fn py(&self, y: f64) -> f64 {
        self.oy + PANEL_H - MARGIN_B - (y - self.y0) / (self.y1 - self.y0) * (PANEL_H - MARGIN_T - MARGIN_B)
    }
}

fn tick_label(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        format!("{:.3}", v)
            .trim_end_matches('0')
            .trim_end_matches('.')
            .to_string()
    }
}

fn render_panel(out: &mut String, panel: &Panel, ox: f64, oy: f64) {
    let (x0, x1, y0, y1) = panel.bounds();
    let f = Frame { ox, oy, x0, x1, y0, y1 };
    let (left, right) = (f.px(x0), f.px(x1));
    let (top, bottom) = (f.py(y1), f.py(y0));
    let _ = writeln!(out, r#"<g class="panel" data-title="{}">"#, esc(&panel.title));
    let _ = writeln!(
        out,
        r##"<rect x="{left:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#444"/>"##,
        right - left,
        bottom - top
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="13">{}</text>"#,
        (left + right) / 2.0,
        oy + 18.0,
        esc(&panel.title)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="11">{}</text>"#,
        (left + right) / 2.0,
        oy + PANEL_H - 8.0,
        esc(&panel.x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="11" transform="rotate(-90 {:.2} {:.2})">{}</text>"#,
        ox + 14.0,
        (top + bottom) / 2.0,
        ox + 14.0,
        (top + bottom) / 2.0,
        esc(&panel.y_label)
    );
    for i in 0..=4 {
        let xv = x0 + (x1 - x0) * i as f64 / 4.0;
        let yv = y0 + (y1 - y0) * i as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="9">{}</text>"#,
            f.px(xv),
            bottom + 13.0,
            tick_label(xv)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end" font-size="9">{}</text>"#,
            left - 4.0,
            f.py(yv) + 3.0,
            tick_label(yv)
        );
    }
    for (y, label) in &panel.hlines {
        let _ = writeln!(
            out,
            r##"<line class="hline" x1="{left:.2}" x2="{right:.2}" y1="{0:.2}" y2="{0:.2}" stroke="#c33" stroke-dasharray="4 3" data-y="{y}" data-label="{1}"/>"##,
            f.py(*y),
            esc(label)
        );
    }
    for (x, label) in &panel.vlines {
        let _ = writeln!(
            out,
            r##"<line class="vline" x1="{0:.2}" x2="{0:.2}" y1="{top:.2}" y2="{bottom:.2}" stroke="#36c" stroke-dasharray="4 3" data-x="{x}" data-label="{1}"/>"##,
            f.px(*x),
            esc(label)
        );
    }
    for s in &panel.series {
        let name = esc(&s.name);
        match s.kind {
            SeriesKind::Line | SeriesKind::Step => {
                let mut path = Vec::new();
                for (i, &(x, y)) in s.points.iter().enumerate() {
                    if s.kind == SeriesKind::Step && i > 0 {
                        let prev = s.points[i - 1];
                        let mid = 0.5 * (prev.0 + x);
                        path.push(format!("{:.2},{:.2}", f.px(mid), f.py(prev.1)));
                        path.push(format!("{:.2},{:.2}", f.px(mid), f.py(y)));
                    }
                    path.push(format!("{:.2},{:.2}", f.px(x), f.py(y)));
                }
                let _ = writeln!(
                    out,
                    r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5" data-series="{name}"/>"#,
                    path.join(" "),
                    s.color
                );
                for &(x, y) in &s.points {
                    let _ = writeln!(
                        out,
                        r#"<circle class="point" cx="{:.2}" cy="{:.2}" r="1.5" fill="{}" data-series="{name}" data-x="{x}" data-y="{y}"/>"#,
                        f.px(x),
                        f.py(y),
                        s.color
                    );
                }
            }
            SeriesKind::Points => {
                for &(x, y) in &s.points {
                    let _ = writeln!(
                        out,
                        r#"<circle class="point" cx="{:.2}" cy="{:.2}" r="3" fill="{}" data-series="{name}" data-x="{x}" data-y="{y}"/>"#,
                        f.px(x),
                        f.py(y),
                        s.color
                    );
                }
            }
            SeriesKind::Bars => {
                let width = if s.points.len() > 1 {
                    let step = (s.points[1].0 - s.points[0].0).abs();
                    0.35 * step / (x1 - x0) * (PANEL_W - MARGIN_L - MARGIN_R)
                } else {
                    8.0
                };
                for &(x, y) in &s.points {
                    let (ya, yb) = (f.py(y.max(0.0)), f.py(y.min(0.0)));
                    let _ = writeln!(
                        out,
                        r#"<rect class="point" x="{:.2}" y="{ya:.2}" width="{width:.2}" height="{:.2}" fill="{}" fill-opacity="0.7" data-series="{name}" data-x="{x}" data-y="{y}"/>"#,
                        f.px(x) - width / 2.0,
                        yb - ya,
                        s.color
                    );
                }
            }
        }
    }
    out.push_str("</g>\n");
}

/// Lays `panels` out on a grid with `columns` per row.
pub fn render(panels: &[Panel], columns: usize) -> String {
    let columns = columns.max(1);
    let rows = panels.len().div_ceil(columns).max(1);
    let width = PANEL_W * columns.min(panels.len().max(1)) as f64;
    let height = PANEL_H * rows as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif">"#
    );
    let _ = writeln!(out, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    for (i, p) in panels.iter().enumerate() {
        let ox = PANEL_W * (i % columns) as f64;
        let oy = PANEL_H * (i / columns) as f64;
        render_panel(&mut out, p, ox, oy);
    }
    out.push_str("</svg>\n");
    out
}

/// `(series, x, y)` of every plotted point, in document order.
pub fn data_points(svg: &str) -> Vec<(String, f64, f64)> {
    let attr = |tag: &str, name: &str| -> Option<String> {
        let key = format!(" {name}=\"");
        let start = tag.find(&key)? + key.len();
        let end = tag[start..].find('"')? + start;
        Some(tag[start..end].to_string())
    };
    svg.split('<')
        .filter(|t| t.contains("class=\"point\""))
        .filter_map(|t| {
            Some((
                attr(t, "data-series")?,
                attr(t, "data-x")?.parse().ok()?,
                attr(t, "data-y")?.parse().ok()?,
            ))
        })
        .collect()
}
