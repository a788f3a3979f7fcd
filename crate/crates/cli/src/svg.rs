//! Deterministic SVG 1.1 heatmaps of a remainder field.

use std::fmt::Write;

use uniform_delta::remainder::{CellMask, RemainderField};

/// Nine-stop viridis ramp, low to high.
pub const RAMP: [&str; 9] = [
    "#440154", "#472d7b", "#3b528b", "#2c728e", "#21918c", "#28ae80", "#5ec962", "#addc30", "#fde725",
];
pub const MASKED: &str = "#bdbdbd";

/// Upper end of the color scale as a quantile of valid cells.
pub const VMAX_QUANTILE: f64 = 0.99;

const PLOT: f64 = 480.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 60.0;
const BAR_GAP: f64 = 24.0;
const BAR_WIDTH: f64 = 18.0;
const MARGIN_RIGHT: f64 = 80.0;
const TICKS: usize = 5;

fn hex_rgb(hex: &str) -> [f64; 3] {
    let v = |i: usize| u8::from_str_radix(&hex[i..i + 2], 16).expect("static color") as f64;
    [v(1), v(3), v(5)]
}

/// Piecewise-linear interpolation in the ramp, `u` clamped to `[0, 1]`.
pub fn color(u: f64) -> String {
    let u = if u.is_nan() { 0.0 } else { u.clamp(0.0, 1.0) };
    let x = u * (RAMP.len() - 1) as f64;
    let i = (x.floor() as usize).min(RAMP.len() - 2);
    let w = x - i as f64;
    let (a, b) = (hex_rgb(RAMP[i]), hex_rgb(RAMP[i + 1]));
    let c: Vec<u8> = (0..3).map(|k| (a[k] + w * (b[k] - a[k])).round() as u8).collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

/// Linear-interpolated empirical quantile.
fn quantile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let pos = q * (values.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    values[lo] + (pos - lo as f64) * (values[hi] - values[lo])
}

fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-3 {
        format!("{v:.2e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Tick positions along an axis with `count` cells and their labels.
fn ticks(labels: &[f64], count: usize) -> Vec<(f64, String)> {
    let n = TICKS.min(count);
    (0..n)
        .map(|k| {
            let i = if n == 1 { 0 } else { k * (count - 1) / (n - 1) };
            let label = labels.get(i).map_or_else(|| i.to_string(), |v| fmt_num(*v));
            (i as f64 + 0.5, label)
        })
        .collect()
}

/// Axis labels of a field: coordinates for one-dimensional points, the
/// point index otherwise.
pub fn coordinate_labels(points: &[Vec<f64>]) -> Vec<f64> {
    if points.iter().all(|p| p.len() == 1) {
        points.iter().map(|p| p[0]).collect()
    } else {
        (0..points.len()).map(|i| i as f64).collect()
    }
}

/// Heatmap with `m` on the horizontal and `t` on the vertical axis.
pub fn heatmap(field: &RemainderField, m_labels: &[f64], t_labels: &[f64], x_title: &str, y_title: &str) -> String {
    let (n_t, n_m) = field.shape();
    let mut valid: Vec<f64> = field.valid_values().collect();
    let vmax = if valid.is_empty() {
        1.0
    } else {
        let q = quantile(&mut valid, VMAX_QUANTILE);
        if q > 0.0 {
            q
        } else {
            1.0
        }
    };
    let (cw, ch) = (PLOT / n_m.max(1) as f64, PLOT / n_t.max(1) as f64);
    let width = MARGIN_LEFT + PLOT + BAR_GAP + BAR_WIDTH + MARGIN_RIGHT;
    let height = MARGIN_TOP + PLOT + MARGIN_BOTTOM;
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(s, r#"<g shape-rendering="crispEdges">"#);
    for i_t in 0..n_t {
        // first t row at the bottom
        let y = MARGIN_TOP + PLOT - (i_t + 1) as f64 * ch;
        for i_m in 0..n_m {
            let (v, mask) = field.get(i_t, i_m);
            let fill = if mask == CellMask::Valid { color(v / vmax) } else { MASKED.to_string() };
            let x = MARGIN_LEFT + i_m as f64 * cw;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.3}" y="{y:.3}" width="{cw:.3}" height="{ch:.3}" fill="{fill}"/>"#
            );
        }
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{PLOT}" height="{PLOT}" fill="none" stroke="black"/>"#
    );
    let base = MARGIN_TOP + PLOT;
    for (pos, label) in ticks(m_labels, n_m) {
        let x = MARGIN_LEFT + pos * cw;
        let _ = writeln!(s, r#"<line x1="{x:.3}" y1="{base}" x2="{x:.3}" y2="{:.3}" stroke="black"/>"#, base + 5.0);
        let _ = writeln!(s, r#"<text x="{x:.3}" y="{:.3}" text-anchor="middle">{label}</text>"#, base + 18.0);
    }
    for (pos, label) in ticks(t_labels, n_t) {
        let y = base - pos * ch;
        let _ = writeln!(
            s,
            r#"<line x1="{:.3}" y1="{y:.3}" x2="{MARGIN_LEFT}" y2="{y:.3}" stroke="black"/>"#,
            MARGIN_LEFT - 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.3}" y="{:.3}" text-anchor="end">{label}</text>"#,
            MARGIN_LEFT - 8.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.3}" y="{:.3}" text-anchor="middle" font-size="14">{x_title}</text>"#,
        MARGIN_LEFT + PLOT / 2.0,
        base + 44.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.3}" y="{:.3}" text-anchor="middle" font-size="14" transform="rotate(-90 {:.3} {:.3})">{y_title}</text>"#,
        20.0,
        MARGIN_TOP + PLOT / 2.0,
        20.0,
        MARGIN_TOP + PLOT / 2.0
    );
    let bx = MARGIN_LEFT + PLOT + BAR_GAP;
    let _ = writeln!(s, "<defs>");
    let _ = writeln!(s, r#"<linearGradient id="ramp" x1="0" y1="1" x2="0" y2="0">"#);
    for (k, c) in RAMP.iter().enumerate() {
        let _ = writeln!(s, r#"<stop offset="{}" stop-color="{c}"/>"#, fmt_num(k as f64 / 8.0));
    }
    let _ = writeln!(s, "</linearGradient>");
    let _ = writeln!(s, "</defs>");
    let _ = writeln!(
        s,
        r#"<rect x="{bx}" y="{MARGIN_TOP}" width="{BAR_WIDTH}" height="{PLOT}" fill="url(#ramp)" stroke="black"/>"#
    );
    for k in 0..=4 {
        let u = k as f64 / 4.0;
        let y = base - u * PLOT;
        let _ = writeln!(
            s,
            r#"<text x="{:.3}" y="{:.3}">{}</text>"#,
            bx + BAR_WIDTH + 4.0,
            y + 4.0,
            fmt_num(u * vmax)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.3}" y="{:.3}" text-anchor="middle">&#916;</text>"#,
        bx + BAR_WIDTH / 2.0,
        MARGIN_TOP - 10.0
    );
    let _ = writeln!(
        s,
        r#"<rect x="{bx}" y="{:.3}" width="{BAR_WIDTH}" height="10" fill="{MASKED}" stroke="black"/>"#,
        base + 30.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.3}" y="{:.3}">masked</text>"#,
        bx + BAR_WIDTH + 4.0,
        base + 39.0
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_endpoints() {
        assert_eq!(color(0.0), RAMP[0]);
        assert_eq!(color(1.0), RAMP[8]);
        assert_eq!(color(0.5), RAMP[4]);
        assert_eq!(color(7.0), RAMP[8]);
        assert_eq!(color(-1.0), RAMP[0]);
    }

    #[test]
    fn masked_cells_are_gray() {
        let field = RemainderField::tabulate(vec![vec![0.0], vec![1.0]], vec![vec![0.0], vec![1.0]], |t, m| {
            if t == m {
                Err(uniform_delta::Error::Degenerate { distance: 0.0 })
            } else {
                Ok(1.0)
            }
        });
        let svg = heatmap(&field, &[0.0, 1.0], &[0.0, 1.0], "m", "t");
        assert_eq!(svg.matches(&format!(r#"fill="{MASKED}"/>"#)).count(), 2);
        assert!(svg.contains(">t</text>") && svg.contains(">m</text>"));
        assert_eq!(svg, heatmap(&field, &[0.0, 1.0], &[0.0, 1.0], "m", "t"));
    }
}
