//! Stacked-bar SVG rendering of attribution reports.
//!
//! One row per report on a shared value axis. A grey span marks the gap
//! between the raw external level and the within-site reference level; the
//! factor shares stack from the raw level toward the matched level, each as
//! its own colored segment. Negative shares extend away from the reference
//! side rather than being clamped. A dark tick marks the reference level and
//! a black tick the matched level.

use disparity_core::shapley::AttributionReport;

/// The three levels a report's bar is built from.
pub struct BarLevels {
    /// External performance before any matching.
    pub raw: f64,
    /// raw plus the summed factor shares.
    pub matched: f64,
    /// Within-site reference performance.
    pub reference: f64,
    /// Matched level falls outside the raw-to-reference span, which happens
    /// exactly when some share pulls against the total gap.
    pub inverted: bool,
}

pub fn bar_levels(report: &AttributionReport) -> BarLevels {
    let raw = report.external_performance.value;
    let matched = raw + report.explained;
    let reference = report.reference_performance.value;
    let lo = raw.min(reference) - 1e-12;
    let hi = raw.max(reference) + 1e-12;
    BarLevels {
        raw,
        matched,
        reference,
        inverted: matched < lo || matched > hi,
    }
}

const PALETTE: [&str; 8] = [
    "#4c78a8", "#f58518", "#54a24b", "#b279a2", "#e45756", "#72b7b2", "#eeca3b", "#9d755d",
];

const MARGIN_LEFT: f64 = 190.0;
const MARGIN_RIGHT: f64 = 40.0;
const MARGIN_TOP: f64 = 34.0;
const ROW_H: f64 = 64.0;
const BAR_H: f64 = 20.0;
const WIDTH: f64 = 940.0;

fn esc(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Every value the axis must cover for one report: the three levels plus
/// each intermediate cumulative position of the stacked segments.
fn breakpoints(report: &AttributionReport) -> Vec<f64> {
    let levels = bar_levels(report);
    let mut points = vec![levels.raw, levels.matched, levels.reference];
    let mut cursor = levels.raw;
    for factor in &report.factors {
        cursor += factor.phi;
        points.push(cursor);
    }
    points
}

pub fn render_reports(reports: &[AttributionReport]) -> String {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for report in reports {
        for v in breakpoints(report) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    let pad = ((hi - lo) * 0.06).max(0.004);
    lo -= pad;
    hi += pad;
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let x = |v: f64| MARGIN_LEFT + (v - lo) * plot_w / (hi - lo);
    let height = MARGIN_TOP + reports.len() as f64 * ROW_H + 26.0;

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH} {height}\" \
         font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    out.push_str(&format!(
        "  <text x=\"{MARGIN_LEFT}\" y=\"20\" fill=\"#333\">performance level: \
         raw external, matched (stacked factor shares), reference</text>\n"
    ));
    for (i, report) in reports.iter().enumerate() {
        let levels = bar_levels(report);
        let y0 = MARGIN_TOP + i as f64 * ROW_H;
        let bar_y = y0 + 12.0;
        let label = format!("{} on {}", report.reference_site, report.external_site);
        out.push_str(&format!(
            "  <text x=\"8\" y=\"{:.1}\" fill=\"#111\">{}</text>\n",
            bar_y + BAR_H - 5.0,
            esc(&label)
        ));
        // Total-gap span.
        let (gx0, gx1) = (
            x(levels.raw.min(levels.reference)),
            x(levels.raw.max(levels.reference)),
        );
        out.push_str(&format!(
            "  <rect x=\"{:.2}\" y=\"{:.1}\" width=\"{:.2}\" height=\"{BAR_H}\" \
             fill=\"#d9d9d9\"/>\n",
            gx0,
            bar_y,
            (gx1 - gx0).max(0.5)
        ));
        // Factor shares, stacked from the raw level.
        let mut cursor = levels.raw;
        for (j, factor) in report.factors.iter().enumerate() {
            let start = cursor;
            let end = cursor + factor.phi;
            cursor = end;
            let (sx0, sx1) = (x(start.min(end)), x(start.max(end)));
            out.push_str(&format!(
                "  <rect x=\"{:.2}\" y=\"{:.1}\" width=\"{:.2}\" height=\"{BAR_H}\" \
                 fill=\"{}\" fill-opacity=\"0.92\" data-factor=\"{}\" data-phi=\"{}\">\
                 <title>{}: {}</title></rect>\n",
                sx0,
                bar_y + 2.0,
                (sx1 - sx0).max(0.25),
                PALETTE[j % PALETTE.len()],
                esc(&factor.name),
                factor.phi,
                esc(&factor.name),
                factor.phi
            ));
        }
        // Level ticks: raw (grey), matched (black), reference (dark blue).
        for (v, color, w) in [
            (levels.raw, "#777777", 1.5),
            (levels.matched, "#000000", 2.0),
            (levels.reference, "#1f3b70", 2.0),
        ] {
            out.push_str(&format!(
                "  <line x1=\"{0:.2}\" y1=\"{1:.1}\" x2=\"{0:.2}\" y2=\"{2:.1}\" \
                 stroke=\"{3}\" stroke-width=\"{4}\"/>\n",
                x(v),
                y0 + 6.0,
                bar_y + BAR_H + 8.0,
                color,
                w
            ));
        }
        out.push_str(&format!(
            "  <text x=\"{MARGIN_LEFT}\" y=\"{:.1}\" fill=\"#555\">raw {:.4} \
             &#8594; matched {:.4}; reference {:.4}{}</text>\n",
            bar_y + BAR_H + 22.0,
            levels.raw,
            levels.matched,
            levels.reference,
            if levels.inverted { " (inverted)" } else { "" }
        ));
    }
    // Value axis endpoints.
    out.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"{:.1}\" fill=\"#888\">{:.3}</text>\n",
        x(lo),
        height - 8.0,
        lo
    ));
    out.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"{:.1}\" text-anchor=\"end\" fill=\"#888\">{:.3}</text>\n",
        x(hi),
        height - 8.0,
        hi
    ));
    out.push_str("</svg>\n");
    out
}
