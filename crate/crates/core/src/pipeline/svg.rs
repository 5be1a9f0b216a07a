//! Minimal self-contained SVG charts.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 56.0;
const COLORS: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = write!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = write!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, escape(title));
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(values: impl Iterator<Item = f64>, include_zero: bool) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if include_zero {
        lo = lo.min(0.0);
        hi = hi.max(0.0);
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let m = (hi - lo) * 0.05;
    (lo - m, hi + m)
}

fn axes(s: &mut String, (lo, hi): (f64, f64)) -> impl Fn(f64) -> f64 {
    let top = PAD;
    let bottom = H - PAD;
    let _ = write!(s, r#"<line x1="{PAD}" y1="{top}" x2="{PAD}" y2="{bottom}" stroke="black"/>"#);
    let _ = write!(s, r#"<line x1="{PAD}" y1="{bottom}" x2="{}" y2="{bottom}" stroke="black"/>"#, W - PAD);
    let y = move |v: f64| bottom - (v - lo) / (hi - lo) * (bottom - top);
    for i in 0..=4 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        let _ = write!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.3}</text>"#, PAD - 4.0, y(v) + 4.0);
    }
    y
}

pub fn bar_chart(title: &str, labels: &[String], values: &[f64], reference: Option<f64>) -> String {
    let mut s = header(title);
    let y = axes(&mut s, range(values.iter().copied().chain(reference), true));
    let slot = (W - 2.0 * PAD) / values.len().max(1) as f64;
    for (i, (label, &v)) in labels.iter().zip(values).enumerate() {
        let x = PAD + slot * i as f64 + slot * 0.15;
        let (y0, y1) = (y(0.0), y(v));
        let _ = write!(
            s,
            r#"<rect x="{x:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{}"/>"#,
            y0.min(y1),
            slot * 0.7,
            (y0 - y1).abs(),
            COLORS[i % COLORS.len()]
        );
        let cx = x + slot * 0.35;
        let _ = write!(s, r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, H - PAD + 16.0, escape(label));
        let _ = write!(s, r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{v:.3}</text>"#, y1.min(y0) - 4.0);
    }
    if let Some(r) = reference {
        let _ = write!(
            s,
            r#"<line x1="{PAD}" y1="{0:.1}" x2="{1}" y2="{0:.1}" stroke="gray" stroke-dasharray="4 3"/>"#,
            y(r),
            W - PAD
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Line chart of `(name, points)` series sharing one y axis.
pub fn line_chart(title: &str, x_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let mut s = header(title);
    let all = || series.iter().flat_map(|(_, p)| p.iter());
    let y = axes(&mut s, range(all().map(|p| p.1), false));
    let (xlo, xhi) = range(all().map(|p| p.0), false);
    let x = |v: f64| PAD + (v - xlo) / (xhi - xlo) * (W - 2.0 * PAD);
    for (i, (name, points)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> =
            points.iter().filter(|p| p.1.is_finite()).map(|&(a, b)| format!("{:.1},{:.1}", x(a), y(b))).collect();
        let _ = write!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
        let ly = PAD + 14.0 * i as f64;
        let _ = write!(s, r#"<rect x="{}" y="{:.1}" width="10" height="10" fill="{color}"/>"#, W - PAD - 120.0, ly - 9.0);
        let _ = write!(s, r#"<text x="{}" y="{ly:.1}">{}</text>"#, W - PAD - 106.0, escape(name));
    }
    for i in 0..=4 {
        let v = xlo + (xhi - xlo) * i as f64 / 4.0;
        let _ = write!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{v:.0}</text>"#, x(v), H - PAD + 16.0);
    }
    let _ = write!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 12.0, escape(x_label));
    s.push_str("</svg>\n");
    s
}
