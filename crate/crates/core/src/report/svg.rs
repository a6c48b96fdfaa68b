//! Minimal SVG interval-band plots.

use std::fmt::Write;

use super::Quantiles;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 40.0;

/// Median line over a 90% band and a darker 50% band. On the log scale,
/// non-positive values are clamped to the smallest positive one.
pub fn band_plot(title: &str, series: &[(i32, Quantiles)], log10: bool) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" font-family="sans-serif" font-size="15" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    if series.is_empty() {
        out.push_str("</svg>\n");
        return out;
    }
    let floor = series
        .iter()
        .flat_map(|(_, q)| [q.q5, q.q95])
        .filter(|v| *v > 0.0)
        .fold(f64::INFINITY, f64::min);
    let tf = |v: f64| if log10 { v.max(floor).log10() } else { v };
    let (x0, x1) = (series[0].0 as f64, series[series.len() - 1].0 as f64);
    let lo = series.iter().map(|(_, q)| tf(q.q5)).fold(f64::INFINITY, f64::min);
    let hi = series.iter().map(|(_, q)| tf(q.q95)).fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
    let xspan = (x1 - x0).max(1.0);
    let px = |year: f64| LEFT + (year - x0) / xspan * (WIDTH - LEFT - RIGHT);
    let py = |v: f64| TOP + (hi - tf(v)) / (hi - lo) * (HEIGHT - TOP - BOTTOM);

    let band = |out: &mut String, lower: fn(&Quantiles) -> f64, upper: fn(&Quantiles) -> f64, fill: &str| {
        let mut pts: Vec<String> = series
            .iter()
            .map(|(y, q)| format!("{:.2},{:.2}", px(*y as f64), py(upper(q))))
            .collect();
        pts.extend(series.iter().rev().map(|(y, q)| format!("{:.2},{:.2}", px(*y as f64), py(lower(q)))));
        let _ = writeln!(out, r#"<polygon points="{}" fill="{fill}" stroke="none"/>"#, pts.join(" "));
    };
    band(&mut out, |q| q.q5, |q| q.q95, "#c6dbef");
    band(&mut out, |q| q.q25, |q| q.q75, "#6baed6");
    let median: Vec<String> = series
        .iter()
        .map(|(y, q)| format!("{:.2},{:.2}", px(*y as f64), py(q.q50)))
        .collect();
    let _ = writeln!(
        out,
        r##"<polyline points="{}" fill="none" stroke="#08306b" stroke-width="1.5"/>"##,
        median.join(" ")
    );

    // Axes and ticks.
    let (bx, by) = (HEIGHT - BOTTOM, LEFT);
    let _ = writeln!(
        out,
        r#"<line x1="{by}" y1="{bx}" x2="{}" y2="{bx}" stroke="black"/><line x1="{by}" y1="{TOP}" x2="{by}" y2="{bx}" stroke="black"/>"#,
        WIDTH - RIGHT
    );
    let first_tick = ((x0 / 10.0).ceil() * 10.0) as i32;
    for year in (first_tick..=x1 as i32).step_by(10) {
        let x = px(year as f64);
        let _ = writeln!(
            out,
            r#"<line x1="{x:.2}" y1="{bx}" x2="{x:.2}" y2="{}" stroke="black"/><text x="{x:.2}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">{year}</text>"#,
            bx + 5.0,
            bx + 18.0
        );
    }
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let y = TOP + (hi - v) / (hi - lo) * (HEIGHT - TOP - BOTTOM);
        let label = if log10 { format!("{:.3}", 10f64.powf(v)) } else { format!("{v:.3}") };
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{y:.2}" x2="{by}" y2="{y:.2}" stroke="black"/><text x="{}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="end">{label}</text>"#,
            by - 5.0,
            by - 8.0,
            y + 4.0
        );
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
