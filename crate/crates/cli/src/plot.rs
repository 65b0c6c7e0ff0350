//! Minimal static SVG line charts.

use std::fmt::Write as _;

use modcodec::metrics::{msssim_db, RdCurve};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;
const COLOURS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-6);
    (lo - pad, hi + pad)
}

/// Quality (PSNR or MS-SSIM in dB) against bpp, one polyline per curve.
pub fn render(curves: &[(String, RdCurve)], msssim: bool) -> String {
    let quality = |p: &modcodec::metrics::RdPoint| if msssim { msssim_db(p.msssim) } else { p.psnr };
    let all = || curves.iter().flat_map(|(_, c)| c.points().iter());
    let (x0, x1) = range(all().map(|p| p.bpp));
    let (y0, y1) = range(all().map(quality));
    let sx = |v: f64| MARGIN + (v - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |v: f64| HEIGHT - MARGIN - (v - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    let w = &mut s;
    writeln!(w, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#).unwrap();
    writeln!(w, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    let (left, right, top, bottom) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    writeln!(w, r#"<path d="M{left},{top} V{bottom} H{right}" fill="none" stroke="black"/>"#).unwrap();
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let (xv, yv) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        writeln!(w, r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{xv:.3}</text>"#, sx(xv), bottom + 16.0).unwrap();
        writeln!(w, r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{yv:.2}</text>"#, left - 6.0, sy(yv) + 4.0).unwrap();
    }
    writeln!(w, r#"<text x="{:.1}" y="{:.1}" font-size="13" text-anchor="middle">bpp</text>"#, WIDTH / 2.0, HEIGHT - 18.0).unwrap();
    let ylabel = if msssim { "MS-SSIM (dB)" } else { "PSNR (dB)" };
    writeln!(w, r#"<text x="16" y="{:.1}" font-size="13" text-anchor="middle" transform="rotate(-90 16 {:.1})">{ylabel}</text>"#, HEIGHT / 2.0, HEIGHT / 2.0).unwrap();

    for (i, (label, curve)) in curves.iter().enumerate() {
        let colour = COLOURS[i % COLOURS.len()];
        let pts: Vec<String> = curve
            .points()
            .iter()
            .filter(|p| quality(p).is_finite())
            .map(|p| format!("{:.2},{:.2}", sx(p.bpp), sy(quality(p))))
            .collect();
        writeln!(w, r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#, pts.join(" ")).unwrap();
        let ly = top + 16.0 * i as f64;
        writeln!(w, r#"<text x="{:.1}" y="{ly:.1}" font-size="12" fill="{colour}">{}</text>"#, right - 120.0, escape(label)).unwrap();
    }
    s.push_str("</svg>\n");
    s
}
