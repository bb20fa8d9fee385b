//! Minimal SVG output for loss curves and 2D prediction maps.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

pub struct Series<'a> {
    pub label: &'a str,
    pub points: Vec<(f64, f64)>,
}

/// Line plot; with `log_y` nonpositive values are dropped.
pub fn line_plot(title: &str, series: &[Series<'_>], log_y: bool) -> String {
    let ty = |y: f64| if log_y { y.log10() } else { y };
    let pts: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| {
            s.points
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite() && (!log_y || *y > 0.0))
                .map(|&(x, y)| (x, ty(y)))
                .collect()
        })
        .collect();
    let all = pts.iter().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);

    let mut s = header(title);
    let _ = writeln!(
        s,
        r##"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    let fmt_y = |y: f64| if log_y { format!("1e{y:.1}") } else { format!("{y:.3e}") };
    let _ = writeln!(s, r#"<text x="4" y="{}" font-size="11">{}</text>"#, PAD, fmt_y(y1));
    let _ = writeln!(s, r#"<text x="4" y="{}" font-size="11">{}</text>"#, H - PAD, fmt_y(y0));
    let _ = writeln!(s, r#"<text x="{PAD}" y="{}" font-size="11">{x0}</text>"#, H - PAD + 16.0);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{x1}</text>"#,
        W - PAD,
        H - PAD + 16.0
    );
    for (i, (ser, p)) in series.iter().zip(&pts).enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = p.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            path.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="12" fill="{color}">{}</text>"#,
            W - PAD - 120.0,
            PAD + 16.0 * (i as f64 + 1.0),
            escape(ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Heatmap of scattered grid values `(x1, x2, v)` on a regular grid with
/// spacing `cell` in both directions.
pub fn heatmap(title: &str, cells: &[(f64, f64, f64)], cell: f64) -> String {
    let mut s = header(title);
    if cells.is_empty() {
        s.push_str("</svg>\n");
        return s;
    }
    let fold = |f: fn(f64, f64) -> f64, init: f64, sel: fn(&(f64, f64, f64)) -> f64| {
        cells.iter().map(sel).fold(init, f)
    };
    let (x0, x1) = (fold(f64::min, f64::INFINITY, |c| c.0), fold(f64::max, f64::NEG_INFINITY, |c| c.0));
    let (y0, y1) = (fold(f64::min, f64::INFINITY, |c| c.1), fold(f64::max, f64::NEG_INFINITY, |c| c.1));
    let (v0, v1) = (fold(f64::min, f64::INFINITY, |c| c.2), fold(f64::max, f64::NEG_INFINITY, |c| c.2));
    let span = |a: f64, b: f64| if b > a { b - a } else { 1.0 };
    let size = H - 2.0 * PAD;
    let px = size * cell / span(x0, x1 + cell);
    let py = size * cell / span(y0, y1 + cell);
    for &(x, y, v) in cells {
        let t = ((v - v0) / span(v0, v1)).clamp(0.0, 1.0);
        let left = PAD + (x - x0) / span(x0, x1 + cell) * size;
        let top = H - PAD - (y - y0) / span(y0, y1 + cell) * size - py;
        let _ = writeln!(
            s,
            r#"<rect x="{left:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
            px + 0.3,
            py + 0.3,
            colormap(t)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12">min {v0:.3e} max {v1:.3e}</text>"#,
        PAD + size + 20.0,
        PAD + 12.0
    );
    s.push_str("</svg>\n");
    s
}

fn colormap(t: f64) -> String {
    let r = (255.0 * t).round() as u8;
    let b = (255.0 * (1.0 - t)).round() as u8;
    let g = (255.0 * (1.0 - (2.0 * t - 1.0).abs())).round() as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
        W / 2.0,
        escape(title)
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
