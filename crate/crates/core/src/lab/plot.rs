//! Minimal SVG emission for the regret curves: one polyline per agent on
//! log-log axes with stderr whiskers. No drawing dependency; the output is
//! assembled by hand and is deterministic.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;

const COLORS: &[&str] = &[
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

fn map(v: f64, lo: f64, hi: f64, out_lo: f64, out_hi: f64) -> f64 {
    if hi <= lo {
        return (out_lo + out_hi) / 2.0;
    }
    out_lo + (v - lo) / (hi - lo) * (out_hi - out_lo)
}

/// Renders mean regret vs horizon (log-log) and writes the SVG document.
/// `curves` maps agent name to sorted `(horizon, mean, stderr)` points.
pub fn render_regret_svg(
    curves: &BTreeMap<String, Vec<(u64, f64, f64)>>,
    path: &Path,
) -> Result<()> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for points in curves.values() {
        for &(t, m, se) in points {
            if t == 0 || m <= 0.0 {
                continue;
            }
            xs.push((t as f64).ln());
            ys.push((m - se).max(m * 0.5).ln());
            ys.push((m + se).ln());
        }
    }
    if xs.is_empty() {
        return Err(Error::InsufficientPoints { need: 1, got: 0 });
    }
    let (x_lo, x_hi) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let (y_lo, y_hi) = ys
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let px = |x: f64| map(x, x_lo, x_hi, MARGIN, WIDTH - MARGIN);
    let py = |y: f64| map(y, y_lo, y_hi, HEIGHT - MARGIN, MARGIN);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(
        svg,
        "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>"
    );
    // Axes.
    let _ = writeln!(
        svg,
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\
         <line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>",
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN,
        t = MARGIN,
    );
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\">horizon T (log)</text>",
        WIDTH / 2.0,
        HEIGHT - MARGIN / 3.0
    );
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\" \
         transform=\"rotate(-90 {x} {y})\">mean regret (log)</text>",
        MARGIN / 3.0,
        HEIGHT / 2.0,
        x = MARGIN / 3.0,
        y = HEIGHT / 2.0
    );

    for (i, (agent, points)) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut poly = String::new();
        for &(t, m, se) in points {
            if t == 0 || m <= 0.0 {
                continue;
            }
            let x = px((t as f64).ln());
            let y = py(m.ln());
            let _ = write!(poly, "{x:.2},{y:.2} ");
            // stderr whisker
            let y_lo_pt = py((m - se).max(m * 0.5).ln());
            let y_hi_pt = py((m + se).ln());
            let _ = writeln!(
                svg,
                "<line x1=\"{x:.2}\" y1=\"{y_lo_pt:.2}\" x2=\"{x:.2}\" y2=\"{y_hi_pt:.2}\" \
                 stroke=\"{color}\" stroke-width=\"1\"/>"
            );
            let _ = writeln!(
                svg,
                "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"3\" fill=\"{color}\"/>"
            );
        }
        let _ = writeln!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
            poly.trim_end()
        );
        // Legend entry.
        let ly = MARGIN + 18.0 * i as f64;
        let _ = writeln!(
            svg,
            "<line x1=\"{x1}\" y1=\"{ly}\" x2=\"{x2}\" y2=\"{ly}\" stroke=\"{color}\" \
             stroke-width=\"2\"/><text x=\"{tx}\" y=\"{ty}\" font-size=\"12\">{agent}</text>",
            x1 = WIDTH - MARGIN - 110.0,
            x2 = WIDTH - MARGIN - 80.0,
            tx = WIDTH - MARGIN - 72.0,
            ty = ly + 4.0,
        );
    }
    let _ = writeln!(svg, "</svg>");
    std::fs::write(path, svg)?;
    Ok(())
}
