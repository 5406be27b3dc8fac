//! Self-contained static SVG charts: line charts for rate curves and loss
//! traces, and 3-panel scatter projections for labelled 3-D datasets.
//! No scripting, no external assets; output is diffable text.

use std::fmt::Write as _;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

const W: f64 = 640.0;
const H: f64 = 440.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;

pub struct Series<'a> {
    pub name: &'a str,
    /// (x, y) points; non-finite y values break the polyline.
    pub points: Vec<(f64, f64)>,
}

fn finite_bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn ticks(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..=count)
        .map(|i| lo + (hi - lo) * i as f64 / count as f64)
        .collect()
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if a >= 1e4 || a < 1e-3 {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn header(out: &mut String, title: &str, timestamp: Option<&str>) {
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">"
    );
    if let Some(ts) = timestamp {
        let _ = writeln!(out, "<!-- generated {ts} -->");
    }
    let _ = writeln!(
        out,
        "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{}</text>",
        W / 2.0,
        escape(title)
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Multi-series line chart with axes and a legend.
pub fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
    timestamp: Option<&str>,
) -> String {
    let (x_lo, x_hi) = finite_bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y_lo, y_hi) = finite_bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let px = |x: f64| MARGIN_L + (x - x_lo) / (x_hi - x_lo) * (W - MARGIN_L - MARGIN_R);
    let py = |y: f64| H - MARGIN_B - (y - y_lo) / (y_hi - y_lo) * (H - MARGIN_T - MARGIN_B);

    let mut out = String::new();
    header(&mut out, title, timestamp);
    // axes
    let _ = writeln!(
        out,
        "<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/>\
         <line x1=\"{0}\" y1=\"{3}\" x2=\"{0}\" y2=\"{1}\" stroke=\"black\"/>",
        MARGIN_L,
        H - MARGIN_B,
        W - MARGIN_R,
        MARGIN_T
    );
    for t in ticks(x_lo, x_hi, 5) {
        let _ = writeln!(
            out,
            "<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>\
             <text x=\"{0}\" y=\"{3}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{4}</text>",
            px(t),
            H - MARGIN_B,
            H - MARGIN_B + 5.0,
            H - MARGIN_B + 18.0,
            fmt_tick(t)
        );
    }
    for t in ticks(y_lo, y_hi, 5) {
        let _ = writeln!(
            out,
            "<line x1=\"{0}\" y1=\"{2}\" x2=\"{1}\" y2=\"{2}\" stroke=\"black\"/>\
             <text x=\"{3}\" y=\"{4}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{5}</text>",
            MARGIN_L - 5.0,
            MARGIN_L,
            py(t),
            MARGIN_L - 8.0,
            py(t) + 4.0,
            fmt_tick(t)
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">{}</text>\
         <text x=\"16\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" transform=\"rotate(-90 16 {})\">{}</text>",
        (MARGIN_L + W - MARGIN_R) / 2.0,
        H - 12.0,
        escape(x_label),
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut segment: Vec<String> = Vec::new();
        let flush = |seg: &mut Vec<String>, out: &mut String| {
            if seg.len() >= 2 {
                let _ = writeln!(
                    out,
                    "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
                    seg.join(" ")
                );
            }
            seg.clear();
        };
        for &(x, y) in &s.points {
            if y.is_finite() && x.is_finite() {
                segment.push(format!("{:.2},{:.2}", px(x), py(y)));
            } else {
                flush(&mut segment, &mut out);
            }
        }
        flush(&mut segment, &mut out);
        for &(x, y) in s.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()) {
            let _ = writeln!(
                out,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"{color}\"/>",
                px(x),
                py(y)
            );
        }
        // legend entry
        let ly = MARGIN_T + 8.0 + 18.0 * k as f64;
        let _ = writeln!(
            out,
            "<line x1=\"{0}\" y1=\"{ly}\" x2=\"{1}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>\
             <text x=\"{2}\" y=\"{3}\" font-family=\"sans-serif\" font-size=\"12\">{4}</text>",
            W - MARGIN_R - 130.0,
            W - MARGIN_R - 105.0,
            W - MARGIN_R - 100.0,
            ly + 4.0,
            escape(s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Three coordinate-pair projections (d0/d1, d0/d2, d1/d2) of a 3-D
/// dataset, points colored by hard label.
pub fn scatter3_chart(
    title: &str,
    data: &nalgebra::DMatrix<f64>,
    labels: &[usize],
    timestamp: Option<&str>,
) -> String {
    assert_eq!(data.ncols(), 3);
    assert_eq!(data.nrows(), labels.len());
    let panel_w = 300.0;
    let panel_h = 300.0;
    let pad = 40.0;
    let total_w = 3.0 * panel_w + 4.0 * pad;
    let total_h = panel_h + 2.0 * pad + 30.0;

    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{total_w}\" height=\"{total_h}\" viewBox=\"0 0 {total_w} {total_h}\">"
    );
    if let Some(ts) = timestamp {
        let _ = writeln!(out, "<!-- generated {ts} -->");
    }
    let _ = writeln!(
        out,
        "<rect width=\"{total_w}\" height=\"{total_h}\" fill=\"white\"/>\
         <text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">{}</text>",
        total_w / 2.0,
        escape(title)
    );
    for (p, (a, b)) in [(0usize, 1usize), (0, 2), (1, 2)].iter().enumerate() {
        let ox = pad + p as f64 * (panel_w + pad);
        let oy = pad + 20.0;
        let (x_lo, x_hi) = finite_bounds((0..data.nrows()).map(|i| data[(i, *a)]));
        let (y_lo, y_hi) = finite_bounds((0..data.nrows()).map(|i| data[(i, *b)]));
        let _ = writeln!(
            out,
            "<rect x=\"{ox}\" y=\"{oy}\" width=\"{panel_w}\" height=\"{panel_h}\" fill=\"none\" stroke=\"black\"/>\
             <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">d{a} vs d{b}</text>",
            ox + panel_w / 2.0,
            oy + panel_h + 18.0
        );
        for i in 0..data.nrows() {
            let x = data[(i, *a)];
            let y = data[(i, *b)];
            if !x.is_finite() || !y.is_finite() {
                continue;
            }
            let cx = ox + (x - x_lo) / (x_hi - x_lo) * panel_w;
            let cy = oy + panel_h - (y - y_lo) / (y_hi - y_lo) * panel_h;
            let color = PALETTE[labels[i] % PALETTE.len()];
            let _ = writeln!(
                out,
                "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"2\" fill=\"{color}\" fill-opacity=\"0.7\"/>"
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn line_chart_is_valid_markup_without_timestamp() {
        let s = Series {
            name: "baseline",
            points: vec![(0.0, 0.1), (1.0, 0.5), (2.0, f64::NAN), (3.0, 0.9)],
        };
        let svg = line_chart("rates", "snr (dB)", "bits/use", &[s], None);
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>\n"));
        assert!(!svg.contains("<!--"));
        assert!(svg.contains("polyline"));
        assert!(svg.contains("baseline"));
    }

    #[test]
    fn timestamp_comment_is_the_only_difference() {
        let s = Series {
            name: "a",
            points: vec![(0.0, 0.0), (1.0, 1.0)],
        };
        let plain = line_chart("t", "x", "y", &[s], None);
        let s = Series {
            name: "a",
            points: vec![(0.0, 0.0), (1.0, 1.0)],
        };
        let stamped = line_chart("t", "x", "y", &[s], Some("2026-01-01T00:00:00Z"));
        assert_ne!(plain, stamped);
        let stripped: String = stamped
            .lines()
            .filter(|l| !l.contains("<!--"))
            .map(|l| format!("{l}\n"))
            .collect();
        assert_eq!(plain, stripped);
    }

    #[test]
    fn scatter_renders_all_three_panels() {
        let data = DMatrix::from_row_slice(4, 3, &[0.0, 0.0, 0.0, 1.0, 2.0, 3.0, -1.0, 0.5, 2.0, 4.0, -2.0, 1.0]);
        let svg = scatter3_chart("clusters", &data, &[0, 1, 2, 1], None);
        assert_eq!(svg.matches("d0 vs d1").count(), 1);
        assert_eq!(svg.matches("d0 vs d2").count(), 1);
        assert_eq!(svg.matches("d1 vs d2").count(), 1);
        assert_eq!(svg.matches("<circle").count(), 12);
    }
}
