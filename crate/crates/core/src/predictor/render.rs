use std::fmt::Write;

use super::{PredictionSet, Sample};
use crate::geometry::Point;

const SIZE: f64 = 600.0;
const MARGIN: f64 = 20.0;
const MODE_COLORS: [&str; 6] = ["#d62728", "#ff7f0e", "#2ca02c", "#9467bd", "#8c564b", "#e377c2"];

/// Target-frame overlay of one scene: observed tracks, centerlines, the
/// plausible area, ground truth and every mode (opacity follows confidence).
pub fn render_svg(sample: &Sample, pred: &PredictionSet) -> String {
    let mut all: Vec<Point> = sample.agents.iter().flatten().copied().collect();
    all.extend(pred.trajectories.iter().flatten());
    if let Some(f) = &sample.future {
        all.extend(f);
    }
    if let Some(p) = &sample.prior {
        all.extend(p.valid_centerlines().flatten());
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &all {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1.0);
    let scale = (SIZE - 2.0 * MARGIN) / span;
    // y grows upwards in the scene and downwards in SVG
    let map = |p: Point| [MARGIN + (p[0] - lo[0]) * scale, SIZE - MARGIN - (p[1] - lo[1]) * scale];
    let path = |pts: &[Point]| {
        pts.iter()
            .map(|&p| {
                let q = map(p);
                format!("{:.2},{:.2}", q[0], q[1])
            })
            .collect::<Vec<_>>()
            .join(" ")
    };

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#);
    let _ = writeln!(svg, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    let _ = writeln!(svg, "<title>{}</title>", escape(&sample.scenario_id));
    if let Some(prior) = &sample.prior {
        for q in prior.plausible_points.iter().map(|&p| map(p)) {
            let _ = writeln!(svg, r##"<circle cx="{:.2}" cy="{:.2}" r="1.2" fill="#9ecae1"/>"##, q[0], q[1]);
        }
        for line in prior.valid_centerlines() {
            let _ = writeln!(svg, r##"<polyline points="{}" fill="none" stroke="#555555" stroke-dasharray="4 3"/>"##, path(line));
        }
    }
    for (i, track) in sample.agents.iter().enumerate() {
        let color = if i == 0 { "#1f77b4" } else { "#aaaaaa" };
        let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, path(track));
    }
    if let Some(f) = &sample.future {
        let _ = writeln!(svg, r##"<polyline points="{}" fill="none" stroke="#000000" stroke-width="2"/>"##, path(f));
    }
    for (m, (traj, c)) in pred.trajectories.iter().zip(&pred.confidences).enumerate() {
        let color = MODE_COLORS[m % MODE_COLORS.len()];
        let opacity = 0.25 + 0.75 * c.clamp(0.0, 1.0);
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5" stroke-opacity="{opacity:.3}"/>"#,
            path(traj)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
