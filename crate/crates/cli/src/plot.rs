//! Minimal SVG line and scatter plots for run reports.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 360.0;
const MARGIN: f64 = 50.0;

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn fit(xs: &[f64], ys: &[f64]) -> Frame {
        Frame {
            x: span(xs),
            y: span(ys),
        }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        H - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (H - 2.0 * MARGIN)
    }
}

fn span(v: &[f64]) -> (f64, f64) {
    let lo = v.iter().copied().filter(|x| x.is_finite()).fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().filter(|x| x.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn open(title: &str, xlabel: &str, ylabel: &str, f: &Frame) -> String {
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#, W / 2.0, escape(title)).unwrap();
    let (x0, x1, y0, y1) = (MARGIN, W - MARGIN, MARGIN, H - MARGIN);
    writeln!(
        s,
        r#"<path d="M{x0} {y0} L{x0} {y1} L{x1} {y1}" fill="none" stroke="black"/>"#
    )
    .unwrap();
    for (v, anchor, x) in [(f.x.0, "start", x0), (f.x.1, "end", x1)] {
        writeln!(s, r#"<text x="{x}" y="{}" text-anchor="{anchor}">{}</text>"#, y1 + 15.0, tick(v)).unwrap();
    }
    for (v, y) in [(f.y.0, y1), (f.y.1, y0 + 4.0)] {
        writeln!(s, r#"<text x="{}" y="{y}" text-anchor="end">{}</text>"#, x0 - 4.0, tick(v)).unwrap();
    }
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 12.0, escape(xlabel)).unwrap();
    writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(ylabel)
    )
    .unwrap();
    s
}

fn tick(v: f64) -> String {
    if v.abs() >= 1000.0 || (v != 0.0 && v.abs() < 0.01) {
        format!("{v:.2e}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn line_plot(title: &str, xlabel: &str, ylabel: &str, xs: &[f64], ys: &[f64]) -> String {
    let f = Frame::fit(xs, ys);
    let mut s = open(title, xlabel, ylabel, &f);
    // At most one vertex per horizontal pixel pair keeps long traces small.
    let stride = (xs.len() / (2 * W as usize)).max(1);
    let mut d = String::new();
    for (k, (x, y)) in xs.iter().zip(ys).enumerate().step_by(stride) {
        let cmd = if k == 0 { 'M' } else { 'L' };
        write!(d, "{cmd}{:.1} {:.1} ", f.px(*x), f.py(*y)).unwrap();
    }
    writeln!(s, r#"<path d="{}" fill="none" stroke="steelblue" stroke-width="1"/>"#, d.trim_end()).unwrap();
    s.push_str("</svg>\n");
    s
}

pub fn scatter_plot(title: &str, xlabel: &str, ylabel: &str, xs: &[f64], ys: &[f64]) -> String {
    let f = Frame::fit(xs, ys);
    let mut s = open(title, xlabel, ylabel, &f);
    for (x, y) in xs.iter().zip(ys) {
        writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="1.5" fill="darkred" fill-opacity="0.5"/>"#, f.px(*x), f.py(*y))
            .unwrap();
    }
    s.push_str("</svg>\n");
    s
}
