//! Minimal SVG line charts for residual and fault traces. No dependencies;
//! the output is a static report-style figure.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 16.0;
const MARGIN_TOP: f64 = 36.0;
const MARGIN_BOTTOM: f64 = 44.0;

/// One curve: equally spaced samples starting at t = 0.
pub struct Series<'a> {
    pub label: &'a str,
    /// Any CSS color.
    pub color: &'a str,
    pub values: &'a [f64],
}

fn nice_ticks(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if !(hi > lo) {
        return vec![lo];
    }
    let raw = (hi - lo) / count as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let step = if norm < 1.5 {
        1.0
    } else if norm < 3.0 {
        2.0
    } else if norm < 7.0 {
        5.0
    } else {
        10.0
    } * mag;
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + step * 1e-9 {
        out.push(t);
        t += step;
    }
    out
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.abs() >= 1000.0 || v.abs() < 0.01 {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Renders overlaid time series with axes, ticks and a legend.
/// `dt` is the sample spacing in seconds.
pub fn line_chart(title: &str, y_label: &str, dt: f64, series: &[Series<'_>]) -> String {
    let n = series.iter().map(|s| s.values.len()).max().unwrap_or(0);
    let t_max = if n > 1 { (n - 1) as f64 * dt } else { 1.0 };
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for s in series {
        for &v in s.values {
            y_min = y_min.min(v);
            y_max = y_max.max(v);
        }
    }
    if !y_min.is_finite() || !y_max.is_finite() {
        y_min = -1.0;
        y_max = 1.0;
    }
    if y_max - y_min < 1e-12 {
        y_min -= 1.0;
        y_max += 1.0;
    }
    let pad = 0.08 * (y_max - y_min);
    y_min -= pad;
    y_max += pad;

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let x_of = |t: f64| MARGIN_LEFT + t / t_max * plot_w;
    let y_of = |v: f64| MARGIN_TOP + (y_max - v) / (y_max - y_min) * plot_h;

    let mut svg = String::new();
    write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    )
    .unwrap();
    svg.push('\n');
    writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
    writeln!(
        svg,
        r#"<text x="{}" y="20" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        title
    )
    .unwrap();

    // Axes box and grid.
    writeln!(
        svg,
        r#"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black" stroke-width="1"/>"#
    )
    .unwrap();
    for tick in nice_ticks(0.0, t_max, 6) {
        let x = x_of(tick);
        writeln!(
            svg,
            r##"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="#ddd"/>"##,
            MARGIN_TOP,
            MARGIN_TOP + plot_h
        )
        .unwrap();
        writeln!(
            svg,
            r#"<text x="{x:.2}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
            MARGIN_TOP + plot_h + 16.0,
            fmt_tick(tick)
        )
        .unwrap();
    }
    for tick in nice_ticks(y_min, y_max, 5) {
        let y = y_of(tick);
        writeln!(
            svg,
            r##"<line x1="{}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#ddd"/>"##,
            MARGIN_LEFT,
            MARGIN_LEFT + plot_w
        )
        .unwrap();
        writeln!(
            svg,
            r#"<text x="{}" y="{y:.2}" font-family="sans-serif" font-size="11" text-anchor="end" dominant-baseline="middle">{}</text>"#,
            MARGIN_LEFT - 6.0,
            fmt_tick(tick)
        )
        .unwrap();
    }
    writeln!(
        svg,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">t [s]</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 8.0
    )
    .unwrap();
    writeln!(
        svg,
        r#"<text x="14" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0,
        y_label
    )
    .unwrap();

    // Curves.
    for s in series {
        if s.values.is_empty() {
            continue;
        }
        let mut points = String::new();
        for (k, &v) in s.values.iter().enumerate() {
            write!(points, "{:.2},{:.2} ", x_of(k as f64 * dt), y_of(v)).unwrap();
        }
        writeln!(
            svg,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            s.color,
            points.trim_end()
        )
        .unwrap();
    }

    // Legend, top-right inside the plot box.
    for (idx, s) in series.iter().enumerate() {
        let y = MARGIN_TOP + 16.0 + idx as f64 * 16.0;
        let x = MARGIN_LEFT + plot_w - 130.0;
        writeln!(
            svg,
            r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{}" stroke-width="2"/>"#,
            x + 22.0,
            s.color
        )
        .unwrap();
        writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" dominant-baseline="middle">{}</text>"#,
            x + 28.0,
            y,
            s.label
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_contains_curves_and_labels() {
        let r: Vec<f64> = (0..80).map(|k| (0.1 * k as f64).sin() * 0.05).collect();
        let f: Vec<f64> = (0..80).map(|k| if k >= 40 { 0.03 } else { 0.0 }).collect();
        let svg = line_chart(
            "detector 1",
            "residual [m]",
            0.25,
            &[
                Series { label: "residual", color: "#1f77b4", values: &r },
                Series { label: "true fault", color: "#d62728", values: &f },
            ],
        );
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("detector 1"));
        assert!(svg.contains("true fault"));
        assert!(svg.contains("t [s]"));
    }

    #[test]
    fn degenerate_inputs_do_not_panic() {
        let svg = line_chart("empty", "y", 0.25, &[]);
        assert!(svg.contains("</svg>"));
        let flat = [0.5; 10];
        let svg = line_chart(
            "flat",
            "y",
            1.0,
            &[Series { label: "c", color: "black", values: &flat }],
        );
        assert!(svg.contains("polyline"));
    }
}
