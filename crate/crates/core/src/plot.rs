//! PRR-versus-distance charts as standalone SVG.

use std::fmt::Write;

use crate::metrics::PrrCsvRow;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Rows grouped by mode, in order of first appearance.
pub fn curves(rows: &[PrrCsvRow]) -> Vec<(String, Vec<&PrrCsvRow>)> {
    let mut out: Vec<(String, Vec<&PrrCsvRow>)> = Vec::new();
    for r in rows {
        match out.iter_mut().find(|(m, _)| *m == r.mode) {
            Some((_, v)) => v.push(r),
            None => out.push((r.mode.clone(), vec![r])),
        }
    }
    for (_, v) in &mut out {
        v.sort_by(|a, b| a.bin_lo_m.total_cmp(&b.bin_lo_m));
    }
    out
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// One polyline per mode at bin centres, with 95 % CI whiskers and a legend.
pub fn render_prr_svg(rows: &[PrrCsvRow], title: &str) -> String {
    let groups = curves(rows);
    let x_max = rows.iter().map(|r| r.bin_hi_m).fold(0.0, f64::max).max(1.0);
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |d: f64| LEFT + d / x_max * pw;
    let sy = |p: f64| TOP + (1.0 - p.clamp(0.0, 1.0)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + pw / 2.0,
        esc(title)
    );
    for k in 0..=5 {
        let p = k as f64 / 5.0;
        let y = sy(p);
        let _ = writeln!(s, r##"<line x1="{LEFT}" y1="{y}" x2="{}" y2="{y}" stroke="#ddd"/>"##, LEFT + pw);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{p:.1}</text>"#, LEFT - 6.0, y + 4.0);
    }
    let step = if x_max > 200.0 { 50.0 } else { 25.0 };
    let mut d = 0.0;
    while d <= x_max + 1e-9 {
        let x = sx(d);
        let _ = writeln!(s, r##"<line x1="{x}" y1="{TOP}" x2="{x}" y2="{}" stroke="#eee"/>"##, TOP + ph);
        let _ = writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">{d}</text>"#, TOP + ph + 18.0);
        d += step;
    }
    let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">Distance to learning node [m]</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 16.0
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(18 {}) rotate(-90)" text-anchor="middle">Packet reception ratio</text>"#,
        TOP + ph / 2.0
    );

    for (k, (mode, pts)) in groups.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let path: Vec<String> =
            pts.iter().map(|r| format!("{:.2},{:.2}", sx(0.5 * (r.bin_lo_m + r.bin_hi_m)), sy(r.prr))).collect();
        let _ = writeln!(
            s,
            r#"<polyline class="curve" data-mode="{}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            esc(mode),
            path.join(" ")
        );
        for r in pts {
            let x = sx(0.5 * (r.bin_lo_m + r.bin_hi_m));
            let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, sy(r.prr));
            if let Some(ci) = r.ci95 {
                let _ = writeln!(
                    s,
                    r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{color}"/>"#,
                    sy(r.prr - ci),
                    sy(r.prr + ci)
                );
            }
        }
        let ly = TOP + 10.0 + 20.0 * k as f64;
        let lx = LEFT + pw + 14.0;
        let _ = writeln!(
            s,
            r#"<g class="legend"><line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text></g>"#,
            lx + 24.0,
            lx + 30.0,
            ly + 4.0,
            esc(mode)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(mode: &str, lo: f64, prr: f64) -> PrrCsvRow {
        PrrCsvRow {
            scenario: "s".into(),
            mode: mode.into(),
            bin_lo_m: lo,
            bin_hi_m: lo + 25.0,
            prr,
            ci95: Some(0.01),
            n_runs: 2,
        }
    }

    #[test]
    fn one_curve_and_legend_entry_per_mode() {
        let mut rows = Vec::new();
        for m in ["none", "visible", "hidden", "visible_hidden"] {
            for k in 0..12 {
                rows.push(row(m, 25.0 * k as f64, 1.0 - 0.05 * k as f64));
            }
        }
        let svg = render_prr_svg(&rows, "a < b");
        assert_eq!(svg.matches("class=\"curve\"").count(), 4);
        assert_eq!(svg.matches("class=\"legend\"").count(), 4);
        assert!(svg.contains("a &lt; b"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}
