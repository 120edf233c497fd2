//! Standalone SVG forest plot: one row per effect with its point estimate,
//! interval and numeric label.

use std::fmt::Write;

#[derive(Debug, Clone, PartialEq)]
pub struct ForestRow {
    pub label: String,
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
}

const WIDTH: f64 = 760.0;
const LABEL_X: f64 = 150.0;
const PLOT_LEFT: f64 = 170.0;
const PLOT_RIGHT: f64 = 540.0;
const TEXT_X: f64 = 560.0;
const TOP: f64 = 56.0;
const ROW: f64 = 30.0;
const BOTTOM: f64 = 56.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Tick spacing of 1, 2 or 5 times a power of ten giving about five ticks.
fn tick_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let m = if norm < 1.5 {
        1.0
    } else if norm < 3.5 {
        2.0
    } else if norm < 7.5 {
        5.0
    } else {
        10.0
    };
    m * mag
}

/// Label text `point [lower, upper]` with three decimals.
pub fn interval_label(point: f64, lower: f64, upper: f64) -> String {
    format!("{} [{}, {}]", fixed3(point), fixed3(lower), fixed3(upper))
}

fn fixed3(v: f64) -> String {
    let s = format!("{v:.3}");
    // avoid "-0.000"
    if s == "-0.000" {
        "0.000".into()
    } else {
        s
    }
}

pub fn forest_svg(title: &str, x_label: &str, rows: &[ForestRow]) -> String {
    let finite: Vec<f64> = rows.iter().flat_map(|r| [r.lower, r.upper, r.point]).filter(|v| v.is_finite()).collect();
    let mut lo = finite.iter().copied().fold(0.0f64, f64::min);
    let mut hi = finite.iter().copied().fold(0.0f64, f64::max);
    if hi - lo < 1e-9 {
        lo -= 1.0;
        hi += 1.0;
    }
    let step = tick_step(hi - lo);
    lo = (lo / step).floor() * step;
    hi = (hi / step).ceil() * step;
    let x = |v: f64| PLOT_LEFT + (v - lo) / (hi - lo) * (PLOT_RIGHT - PLOT_LEFT);
    let height = TOP + ROW * rows.len().max(1) as f64 + BOTTOM;
    let axis_y = TOP + ROW * rows.len().max(1) as f64;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="13">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="28" text-anchor="middle" font-size="15">{}</text>"#, WIDTH / 2.0, escape(title));
    // zero line
    let _ = writeln!(
        s,
        r##"<line x1="{z:.2}" y1="{TOP}" x2="{z:.2}" y2="{axis_y}" stroke="#888" stroke-dasharray="4,3"/>"##,
        z = x(0.0)
    );
    let _ = writeln!(s, r#"<line x1="{PLOT_LEFT}" y1="{axis_y}" x2="{PLOT_RIGHT}" y2="{axis_y}" stroke="black"/>"#);
    let n_ticks = ((hi - lo) / step).round() as i64;
    for i in 0..=n_ticks {
        let v = lo + i as f64 * step;
        let tx = x(v);
        let _ = writeln!(s, r#"<line x1="{tx:.2}" y1="{axis_y}" x2="{tx:.2}" y2="{}" stroke="black"/>"#, axis_y + 5.0);
        let _ = writeln!(
            s,
            r#"<text x="{tx:.2}" y="{}" text-anchor="middle" font-size="11">{}</text>"#,
            axis_y + 18.0,
            tick_text(v, step)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (PLOT_LEFT + PLOT_RIGHT) / 2.0,
        axis_y + 40.0,
        escape(x_label)
    );
    for (i, r) in rows.iter().enumerate() {
        let y = TOP + ROW * (i as f64 + 0.5);
        let _ = writeln!(
            s,
            r#"<text x="{LABEL_X}" y="{:.2}" text-anchor="end">{}</text>"#,
            y + 4.0,
            escape(&r.label)
        );
        if r.point.is_finite() && r.lower.is_finite() && r.upper.is_finite() {
            let _ = writeln!(
                s,
                r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="black" stroke-width="1.5"/>"#,
                x(r.lower),
                x(r.upper)
            );
            let _ = writeln!(s, r#"<rect x="{:.2}" y="{:.2}" width="8" height="8" fill="black"/>"#, x(r.point) - 4.0, y - 4.0);
            let _ = writeln!(
                s,
                r#"<text x="{TEXT_X}" y="{:.2}">{}</text>"#,
                y + 4.0,
                interval_label(r.point, r.lower, r.upper)
            );
        } else {
            let _ = writeln!(s, r#"<text x="{TEXT_X}" y="{:.2}">not estimable</text>"#, y + 4.0);
        }
    }
    s.push_str("</svg>\n");
    s
}

fn tick_text(v: f64, step: f64) -> String {
    let decimals = if step >= 1.0 { 0 } else { (-step.log10()).ceil() as usize };
    let t = format!("{v:.decimals$}");
    if t.starts_with('-') && t.trim_start_matches(['-', '0', '.']).is_empty() {
        t[1..].to_string()
    } else {
        t
    }
}
