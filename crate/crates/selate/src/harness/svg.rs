//! Box-plot rendering of per-method errors as a standalone SVG.

use std::path::Path;

use crate::data::Method;
use crate::harness::report::write_string;
use crate::harness::run::RunReport;
use crate::Result;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_BOTTOM: f64 = 60.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_RIGHT: f64 = 20.0;

struct BoxStats {
    method: Method,
    low_whisker: f64,
    q1: f64,
    median: f64,
    q3: f64,
    high_whisker: f64,
    outliers: Vec<f64>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

fn box_stats(method: Method, errors: &mut Vec<f64>) -> Option<BoxStats> {
    errors.retain(|e| e.is_finite());
    if errors.is_empty() {
        return None;
    }
    errors.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q1 = quantile(errors, 0.25);
    let median = quantile(errors, 0.5);
    let q3 = quantile(errors, 0.75);
    let iqr = q3 - q1;
    let fence_lo = q1 - 1.5 * iqr;
    let fence_hi = q3 + 1.5 * iqr;
    let low_whisker = errors
        .iter()
        .copied()
        .filter(|&e| e >= fence_lo)
        .fold(f64::INFINITY, f64::min);
    let high_whisker = errors
        .iter()
        .copied()
        .filter(|&e| e <= fence_hi)
        .fold(f64::NEG_INFINITY, f64::max);
    let outliers = errors
        .iter()
        .copied()
        .filter(|&e| e < fence_lo || e > fence_hi)
        .collect();
    Some(BoxStats {
        method,
        low_whisker,
        q1,
        median,
        q3,
        high_whisker,
        outliers,
    })
}

/// Render one box (median, quartiles, whiskers at 1.5 IQR) per method with a
/// horizontal zero-error line.
pub fn boxplot_svg(report: &RunReport) -> String {
    let mut methods: Vec<Method> = Vec::new();
    for row in &report.rows {
        if !methods.contains(&row.method) {
            methods.push(row.method);
        }
    }
    let stats: Vec<BoxStats> = methods
        .into_iter()
        .filter_map(|m| {
            let mut errors: Vec<f64> = report
                .rows
                .iter()
                .filter(|r| r.method == m)
                .map(|r| r.error)
                .collect();
            box_stats(m, &mut errors)
        })
        .collect();

    let (mut lo, mut hi) = (0.0f64, 0.0f64);
    for s in &stats {
        lo = lo.min(s.low_whisker).min(s.outliers.iter().copied().fold(0.0, f64::min));
        hi = hi.max(s.high_whisker).max(s.outliers.iter().copied().fold(0.0, f64::max));
    }
    let span = (hi - lo).max(1e-9);
    let (lo, hi) = (lo - 0.1 * span, hi + 0.1 * span);

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let y_of = |v: f64| MARGIN_TOP + plot_h * (1.0 - (v - lo) / (hi - lo));

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"18\" font-size=\"13\" font-family=\"sans-serif\">error = estimate - oracle ATE (oracle {:.4})</text>\n",
        MARGIN_LEFT, report.oracle_ate
    ));

    // Zero-error line.
    let y0 = y_of(0.0);
    svg.push_str(&format!(
        "<line class=\"zero\" x1=\"{MARGIN_LEFT}\" y1=\"{y0:.2}\" x2=\"{:.2}\" y2=\"{y0:.2}\" stroke=\"#aa3333\" stroke-dasharray=\"4 3\"/>\n",
        WIDTH - MARGIN_RIGHT
    ));

    let n = stats.len().max(1) as f64;
    let slot = plot_w / n;
    let box_w = (slot * 0.5).min(60.0);
    for (k, s) in stats.iter().enumerate() {
        let cx = MARGIN_LEFT + slot * (k as f64 + 0.5);
        let x0 = cx - box_w / 2.0;
        let (yq1, yq3) = (y_of(s.q1), y_of(s.q3));
        let (ywl, ywh) = (y_of(s.low_whisker), y_of(s.high_whisker));
        let ymed = y_of(s.median);
        // Whisker stems and caps.
        svg.push_str(&format!(
            "<line x1=\"{cx:.2}\" y1=\"{ywh:.2}\" x2=\"{cx:.2}\" y2=\"{yq3:.2}\" stroke=\"black\"/>\n"
        ));
        svg.push_str(&format!(
            "<line x1=\"{cx:.2}\" y1=\"{yq1:.2}\" x2=\"{cx:.2}\" y2=\"{ywl:.2}\" stroke=\"black\"/>\n"
        ));
        for yw in [ywl, ywh] {
            svg.push_str(&format!(
                "<line x1=\"{:.2}\" y1=\"{yw:.2}\" x2=\"{:.2}\" y2=\"{yw:.2}\" stroke=\"black\"/>\n",
                cx - box_w / 4.0,
                cx + box_w / 4.0
            ));
        }
        svg.push_str(&format!(
            "<rect class=\"box\" x=\"{x0:.2}\" y=\"{yq3:.2}\" width=\"{box_w:.2}\" height=\"{:.2}\" fill=\"#7fa6d9\" stroke=\"black\"/>\n",
            (yq1 - yq3).abs()
        ));
        svg.push_str(&format!(
            "<line x1=\"{x0:.2}\" y1=\"{ymed:.2}\" x2=\"{:.2}\" y2=\"{ymed:.2}\" stroke=\"black\" stroke-width=\"2\"/>\n",
            x0 + box_w
        ));
        for &o in &s.outliers {
            svg.push_str(&format!(
                "<circle cx=\"{cx:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"none\" stroke=\"black\"/>\n",
                y_of(o)
            ));
        }
        svg.push_str(&format!(
            "<text x=\"{cx:.2}\" y=\"{:.2}\" font-size=\"12\" font-family=\"sans-serif\" text-anchor=\"middle\">{}</text>\n",
            HEIGHT - MARGIN_BOTTOM + 18.0,
            s.method
        ));
    }

    // Y-axis ticks.
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let y = y_of(v);
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" font-family=\"sans-serif\" text-anchor=\"end\">{v:.2}</text>\n",
            MARGIN_LEFT - 6.0,
            y + 4.0
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn emit_boxplot_svg(report: &RunReport, path: &Path) -> Result<()> {
    write_string(path, &boxplot_svg(report))
}
