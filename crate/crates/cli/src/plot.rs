//! Minimal self-contained SVG charts.

use std::fmt::Write as _;

const W: f64 = 720.0;
const H: f64 = 420.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;

const PALETTE: &[&str] = &[
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    pub series: Vec<Series>,
    /// Horizontal reference lines (label, value).
    pub references: Vec<(String, f64)>,
    pub footer: Option<String>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.0e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn nice_ticks(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let raw = span / count as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * span {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        W / 2.0,
        esc(title)
    );
}

impl LineChart {
    pub fn render(&self) -> String {
        let tf = |v: f64| if self.log_y { v.abs().max(1e-300).log10() } else { v };
        let pts = self.series.iter().flat_map(|s| s.points.iter()).filter(|p| p.0.is_finite() && p.1.is_finite());
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in pts {
            if self.log_y && y <= 0.0 {
                continue;
            }
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(tf(y));
            y1 = y1.max(tf(y));
        }
        for (_, v) in &self.references {
            if !self.log_y || *v > 0.0 {
                y0 = y0.min(tf(*v));
                y1 = y1.max(tf(*v));
            }
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 <= x0 {
            x1 = x0 + 1.0;
        }
        if y1 <= y0 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        let pad = 0.04 * (y1 - y0);
        let (y0, y1) = (y0 - pad, y1 + pad);
        let pw = W - LEFT - RIGHT;
        let ph = H - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

        let mut out = String::new();
        header(&mut out, &self.title);
        let _ = writeln!(
            out,
            r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##
        );
        for t in nice_ticks(x0, x1, 6) {
            let x = sx(t);
            let _ = writeln!(
                out,
                r##"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="#ddd"/><text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"##,
                TOP,
                TOP + ph,
                TOP + ph + 16.0,
                fmt_tick(t)
            );
        }
        let yticks: Vec<f64> = if self.log_y {
            (y0.ceil() as i64..=y1.floor() as i64).map(|e| e as f64).collect()
        } else {
            nice_ticks(y0, y1, 6)
        };
        for t in yticks {
            let y = sy(t);
            let label = if self.log_y { format!("1e{}", t as i64) } else { fmt_tick(t) };
            let _ = writeln!(
                out,
                r##"<line x1="{LEFT}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end">{label}</text>"##,
                LEFT + pw,
                LEFT - 6.0,
                y + 4.0
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            H - 18.0,
            esc(&self.x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            esc(&self.y_label)
        );
        for (label, v) in &self.references {
            if self.log_y && *v <= 0.0 {
                continue;
            }
            let y = sy(tf(*v));
            let _ = writeln!(
                out,
                r##"<line x1="{LEFT}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#000" stroke-dasharray="6 4"/><text x="{}" y="{:.2}" font-size="10">{}</text>"##,
                LEFT + pw,
                LEFT + pw + 4.0,
                y + 3.0,
                esc(label)
            );
        }
        for (k, s) in self.series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let mut d = String::new();
            let mut pen_up = true;
            for &(x, y) in &s.points {
                if !(x.is_finite() && y.is_finite()) || (self.log_y && y <= 0.0) {
                    pen_up = true;
                    continue;
                }
                let _ = write!(d, "{}{:.2},{:.2} ", if pen_up { "M" } else { "L" }, sx(x), sy(tf(y)));
                pen_up = false;
            }
            let _ = writeln!(out, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.4"/>"#, d.trim_end());
            let ly = TOP + 12.0 + 16.0 * k as f64;
            if ly < TOP + ph {
                let _ = writeln!(
                    out,
                    r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}" font-size="11">{}</text>"#,
                    LEFT + pw + 12.0,
                    LEFT + pw + 30.0,
                    LEFT + pw + 34.0,
                    ly + 4.0,
                    esc(&s.name)
                );
            }
        }
        if let Some(f) = &self.footer {
            let _ = writeln!(out, r##"<text x="{}" y="{}" font-size="10" fill="#666">{}</text>"##, W - 8.0, H - 4.0, esc(f));
        }
        out.push_str("</svg>\n");
        out
    }
}

/// Grid of cell values in `[0, 1]` (fraction stable), `None` for failed
/// cells. Rows are sweep settings, columns the alpha grid.
pub struct HeatMap {
    pub title: String,
    pub row_labels: Vec<String>,
    pub col_values: Vec<f64>,
    pub cells: Vec<Vec<Option<f64>>>,
    /// Per-row marker positions on the alpha axis (e.g. a bound).
    pub markers: Vec<Option<f64>>,
    pub footer: Option<String>,
}

fn heat_color(v: f64) -> String {
    // red (0) -> yellow (0.5) -> green (1)
    let v = v.clamp(0.0, 1.0);
    let (r, g) = if v < 0.5 { (220.0, 60.0 + 340.0 * v) } else { (220.0 - 340.0 * (v - 0.5), 230.0) };
    format!("rgb({},{},70)", r.round() as i64, g.round() as i64)
}

impl HeatMap {
    pub fn render(&self) -> String {
        let rows = self.row_labels.len().max(1);
        let cols = self.col_values.len().max(1);
        let left = 150.0;
        let pw = W - left - 40.0;
        let ph = H - TOP - BOTTOM - 20.0;
        let cw = pw / cols as f64;
        let ch = ph / rows as f64;
        let mut out = String::new();
        header(&mut out, &self.title);
        for (r, row) in self.cells.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                let fill = v.map_or("#888".to_string(), heat_color);
                let _ = writeln!(
                    out,
                    r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{fill}"/>"#,
                    left + c as f64 * cw,
                    TOP + r as f64 * ch,
                    cw + 0.05,
                    ch + 0.05
                );
            }
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{:.2}" text-anchor="end" font-size="11">{}</text>"#,
                left - 6.0,
                TOP + (r as f64 + 0.5) * ch + 4.0,
                esc(&self.row_labels[r])
            );
        }
        let la = |a: f64| a.ln();
        let (a0, a1) = (
            self.col_values.first().copied().unwrap_or(1.0),
            self.col_values.last().copied().unwrap_or(1.0),
        );
        let ax = |a: f64| {
            if a1 > a0 {
                left + cw * 0.5 + (la(a) - la(a0)) / (la(a1) - la(a0)) * (pw - cw)
            } else {
                left + pw / 2.0
            }
        };
        for (r, m) in self.markers.iter().enumerate() {
            if let Some(a) = m.filter(|a| *a >= a0 && *a <= a1) {
                let x = ax(a);
                let _ = writeln!(
                    out,
                    r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#000" stroke-width="2"/>"##,
                    TOP + r as f64 * ch,
                    TOP + (r as f64 + 1.0) * ch
                );
            }
        }
        let step = (cols / 8).max(1);
        for c in (0..cols).step_by(step) {
            let x = left + (c as f64 + 0.5) * cw;
            let _ = writeln!(
                out,
                r#"<text x="{x:.2}" y="{}" text-anchor="middle" font-size="10">{}</text>"#,
                TOP + ph + 14.0,
                fmt_tick(self.col_values[c])
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">alpha (black bar: alpha_bar_tight; green stable, red unstable, grey failed)</text>"#,
            left + pw / 2.0,
            TOP + ph + 34.0
        );
        if let Some(f) = &self.footer {
            let _ = writeln!(out, r##"<text x="{}" y="{}" font-size="10" fill="#666" text-anchor="end">{}</text>"##, W - 8.0, H - 4.0, esc(f));
        }
        out.push_str("</svg>\n");
        out
    }
}
