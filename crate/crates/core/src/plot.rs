//! Standalone SVG chart of a metrics file: meta loss on top, mask density
//! below, sharing the iteration axis.

use crate::metrics::MetricsRecord;

const WIDTH: f64 = 640.0;
const PANEL: f64 = 200.0;
const MARGIN: f64 = 48.0;

fn polyline(xs: &[f64], ys: &[f64], top: f64, colour: &str) -> String {
    let finite = |v: &&f64| v.is_finite();
    let (x0, x1) = bounds(xs.iter().filter(finite));
    let (mut y0, mut y1) = bounds(ys.iter().filter(finite));
    if y0 == y1 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0).max(f64::MIN_POSITIVE) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| top + PANEL - (y - y0) / (y1 - y0) * PANEL;
    let points: Vec<String> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .map(|(&x, &y)| format!("{:.2},{:.2}", sx(x), sy(y)))
        .collect();
    format!(
        "<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.5\" points=\"{}\"/>\n\
         <text x=\"4\" y=\"{:.1}\" font-size=\"10\">{y1:.4}</text>\n\
         <text x=\"4\" y=\"{:.1}\" font-size=\"10\">{y0:.4}</text>\n",
        points.join(" "),
        top + 10.0,
        top + PANEL
    )
}

fn bounds<'a>(values: impl Iterator<Item = &'a f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

pub fn metrics_svg(records: &[MetricsRecord]) -> String {
    let height = 2.0 * PANEL + 3.0 * MARGIN;
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{height}\" viewBox=\"0 0 {WIDTH} {height}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    if records.is_empty() {
        out.push_str("<text x=\"20\" y=\"40\">no iterations recorded</text>\n</svg>\n");
        return out;
    }
    let xs: Vec<f64> = records.iter().map(|r| r.iteration as f64).collect();
    let panels = [
        ("meta loss", records.iter().map(|r| r.meta_loss).collect::<Vec<_>>(), "#1f5fa8"),
        ("mask density", records.iter().map(|r| r.mask_density).collect(), "#b2442c"),
    ];
    for (i, (title, ys, colour)) in panels.iter().enumerate() {
        let top = MARGIN + i as f64 * (PANEL + MARGIN);
        out.push_str(&format!(
            "<rect x=\"{MARGIN}\" y=\"{top}\" width=\"{}\" height=\"{PANEL}\" fill=\"none\" stroke=\"#999\"/>\n\
             <text x=\"{MARGIN}\" y=\"{:.1}\" font-size=\"12\">{title}</text>\n",
            WIDTH - 2.0 * MARGIN,
            top - 6.0
        ));
        out.push_str(&polyline(&xs, ys, top, colour));
    }
    out.push_str(&format!(
        "<text x=\"{MARGIN}\" y=\"{:.1}\" font-size=\"10\">iteration {} to {}</text>\n</svg>\n",
        height - 12.0,
        records[0].iteration,
        records[records.len() - 1].iteration
    ));
    out
}
