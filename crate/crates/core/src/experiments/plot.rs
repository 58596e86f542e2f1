//! Self-contained SVG step plot of empirical CDFs.

use std::fmt::Write as _;

use super::report::ecdf;

const W: f64 = 480.0;
const H: f64 = 360.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn sx(p: f64) -> f64 {
    MARGIN + p.clamp(0.0, 1.0) * (W - 2.0 * MARGIN)
}

fn sy(f: f64) -> f64 {
    H - MARGIN - f * (H - 2.0 * MARGIN)
}

/// ECDF curves of p-values on [0, 1], one polyline per named series.
pub fn ecdf_svg(title: &str, series: &[(&str, &[f64])]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, W / 2.0, escape(title));
    let (x0, x1, y0, y1) = (sx(0.0), sx(1.0), sy(0.0), sy(1.0));
    let _ = writeln!(s, r#"<path d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" stroke="black" fill="none"/>"#);
    for i in 0..=4 {
        let t = f64::from(i) / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{t}</text>"#, sx(t), y0 + 16.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{t}</text>"#, x0 - 6.0, sy(t) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">p_leaf</text>"#, W / 2.0, H - 8.0);
    for (i, (name, values)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut d = format!("M{},{}", sx(0.0), sy(0.0));
        let mut last = 0.0;
        for (p, f) in ecdf(values) {
            let _ = write!(d, " L{:.2},{:.2} L{:.2},{:.2}", sx(p), sy(last), sx(p), sy(f));
            last = f;
        }
        let _ = write!(d, " L{:.2},{:.2}", sx(1.0), sy(last));
        let _ = writeln!(s, r#"<path d="{d}" stroke="{color}" fill="none" stroke-width="1.5"/>"#);
        let ly = MARGIN + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            x1 - 110.0,
            x1 - 90.0,
            x1 - 85.0,
            ly + 4.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_one_path_per_series() {
        let a = [0.01, 0.02, 0.5];
        let b = [0.3, 0.9];
        let svg = ecdf_svg("Simple vs Null", &[("simple", &a), ("null", &b)]);
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("stroke-width=\"1.5\"").count(), 2);
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}
