//! Minimal SVG charts for report summaries.

use std::fmt::Write;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Vertical bars on a 0..1 axis, with optional CI whiskers (clamped to the axis).
pub fn bar_chart_svg(title: &str, bars: &[(&str, f64, Option<(f64, f64)>)]) -> String {
    let (left, top, plot_h, bar_w, gap) = (50.0, 40.0, 240.0, 28.0, 12.0);
    let width = left + bars.len() as f64 * (bar_w + gap) + 20.0;
    let height = top + plot_h + 120.0;
    let y = |v: f64| top + plot_h * (1.0 - v.clamp(0.0, 1.0));
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<text x="{left}" y="20" font-size="14">{}</text>"#, esc(title));
    for tick in 0..=4 {
        let v = f64::from(tick) / 4.0;
        let _ = writeln!(
            s,
            r##"<line x1="{left}" x2="{:.1}" y1="{:.1}" y2="{:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"##,
            width - 20.0,
            y(v),
            y(v),
            left - 4.0,
            y(v) + 4.0
        );
    }
    for (i, (label, value, ci)) in bars.iter().enumerate() {
        let x = left + gap / 2.0 + i as f64 * (bar_w + gap);
        let _ = writeln!(
            s,
            r##"<rect x="{x:.1}" y="{:.1}" width="{bar_w}" height="{:.1}" fill="#4a7fb5"><title>{}: {value:.4}</title></rect>"##,
            y(*value),
            top + plot_h - y(*value),
            esc(label)
        );
        if let Some((lo, hi)) = ci {
            let cx = x + bar_w / 2.0;
            let _ = writeln!(
                s,
                r#"<line x1="{cx:.1}" x2="{cx:.1}" y1="{:.1}" y2="{:.1}" stroke="black"/>"#,
                y(*lo),
                y(*hi)
            );
        }
        let lx = x + bar_w / 2.0;
        let ly = top + plot_h + 8.0;
        let _ = writeln!(
            s,
            r#"<text x="{lx:.1}" y="{ly:.1}" transform="rotate(60 {lx:.1} {ly:.1})">{}</text>"#,
            esc(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// One spoke per entry, radius proportional to the value in 0..1.
pub fn radar_chart_svg(title: &str, spokes: &[(&str, f64)]) -> String {
    let (cx, cy, r) = (260.0, 250.0, 170.0);
    let n = spokes.len().max(1) as f64;
    let at = |i: usize, v: f64| {
        let a = std::f64::consts::TAU * i as f64 / n - std::f64::consts::FRAC_PI_2;
        (cx + r * v * a.cos(), cy + r * v * a.sin())
    };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="520" height="500" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(s, r#"<text x="10" y="20" font-size="14">{}</text>"#, esc(title));
    for ring in 1..=4 {
        let v = f64::from(ring) / 4.0;
        let pts: Vec<String> = (0..spokes.len()).map(|i| at(i, v)).map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
        let _ = writeln!(s, r##"<polygon points="{}" fill="none" stroke="#ddd"/>"##, pts.join(" "));
    }
    for (i, (label, _)) in spokes.iter().enumerate() {
        let (x, y) = at(i, 1.0);
        let (lx, ly) = at(i, 1.12);
        let _ = writeln!(s, r##"<line x1="{cx}" y1="{cy}" x2="{x:.1}" y2="{y:.1}" stroke="#ccc"/>"##);
        let _ = writeln!(s, r#"<text x="{lx:.1}" y="{ly:.1}" text-anchor="middle">{}</text>"#, esc(label));
    }
    let pts: Vec<String> = spokes
        .iter()
        .enumerate()
        .map(|(i, (_, v))| at(i, v.clamp(0.0, 1.0)))
        .map(|(x, y)| format!("{x:.1},{y:.1}"))
        .collect();
    let _ =
        writeln!(s, r##"<polygon points="{}" fill="#4a7fb5" fill-opacity="0.35" stroke="#4a7fb5"/>"##, pts.join(" "));
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_are_well_formed() {
        let bar = bar_chart_svg("a<b", &[("caries", 0.8, Some((0.7, 0.9))), ("x&y", 1.2, None)]);
        assert!(bar.starts_with("<svg") && bar.trim_end().ends_with("</svg>"));
        assert!(bar.contains("a&lt;b") && bar.contains("x&amp;y"));
        assert_eq!(bar.matches("<rect").count(), 2);
        let radar = radar_chart_svg("r", &[("a", 0.5), ("b", 1.0), ("c", 0.0)]);
        assert_eq!(radar.matches("<polygon").count(), 5);
    }
}
