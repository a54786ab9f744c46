//! Learning-curve rendering to a standalone SVG.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::train::MetricsRow;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;

/// Mean episode reward against timestep. Rows without finished episodes
/// (NaN reward) are skipped.
pub fn learning_curve_svg(rows: &[MetricsRow]) -> Result<String> {
    let points: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.ep_reward_mean.is_finite())
        .map(|r| (r.timestep as f64, r.ep_reward_mean))
        .collect();
    if points.is_empty() {
        return Err(Error::invalid("no metrics rows with finished episodes to plot"));
    }
    let (x_lo, x_hi) = bounds(points.iter().map(|p| p.0));
    let (y_lo, y_hi) = bounds(points.iter().map(|p| p.1));
    let sx = |x: f64| MARGIN + (x - x_lo) / (x_hi - x_lo) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y_lo) / (y_hi - y_lo) * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<path d="M{m} {t} L{m} {b} L{r} {b}" fill="none" stroke="black"/>"#,
        m = MARGIN,
        t = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    );
    let polyline: Vec<String> = points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
    let _ = writeln!(
        svg,
        r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="1.5"/>"#,
        polyline.join(" ")
    );
    let label = |svg: &mut String, x: f64, y: f64, anchor: &str, text: String| {
        let _ = writeln!(
            svg,
            r#"<text x="{x:.2}" y="{y:.2}" font-family="sans-serif" font-size="11" text-anchor="{anchor}">{text}</text>"#
        );
    };
    label(&mut svg, MARGIN, HEIGHT - MARGIN + 16.0, "start", format!("{x_lo}"));
    label(&mut svg, WIDTH - MARGIN, HEIGHT - MARGIN + 16.0, "end", format!("{x_hi}"));
    label(&mut svg, MARGIN - 4.0, HEIGHT - MARGIN, "end", format!("{y_lo:.3}"));
    label(&mut svg, MARGIN - 4.0, MARGIN + 4.0, "end", format!("{y_hi:.3}"));
    label(&mut svg, WIDTH / 2.0, HEIGHT - 12.0, "middle", "timestep".into());
    label(&mut svg, WIDTH / 2.0, MARGIN - 16.0, "middle", "mean episode reward".into());
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}
