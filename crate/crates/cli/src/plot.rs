//! Minimal hand-written SVG charts.

use std::fmt::Write;

use land_core::experiment::EvalReport;
use land_core::planner::PlanDiagnostics;
use land_core::sim::STEP_LENGTH_M;

pub const WIDTH: f64 = 640.0;
pub const HEIGHT: f64 = 420.0;
pub const LEFT: f64 = 70.0;
pub const RIGHT: f64 = 20.0;
pub const TOP: f64 = 30.0;
pub const BOTTOM: f64 = 50.0;

/// Linear map from data range onto the plot area.
#[derive(Debug, Clone, Copy)]
pub struct Frame {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Frame {
    pub fn x(&self, v: f64) -> f64 {
        LEFT + (v - self.x_min) / span(self.x_min, self.x_max) * (WIDTH - LEFT - RIGHT)
    }

    pub fn y(&self, v: f64) -> f64 {
        HEIGHT - BOTTOM - (v - self.y_min) / span(self.y_min, self.y_max) * (HEIGHT - TOP - BOTTOM)
    }
}

fn span(lo: f64, hi: f64) -> f64 {
    if hi > lo {
        hi - lo
    } else {
        1.0
    }
}

fn header(out: &mut String, title: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">
<rect width="100%" height="100%" fill="white"/>
<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>
"#,
        WIDTH / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, frame: &Frame, x_label: &str, y_label: &str, ticks: usize) {
    let (x0, x1) = (frame.x(frame.x_min), frame.x(frame.x_max));
    let (y0, y1) = (frame.y(frame.y_min), frame.y(frame.y_max));
    let _ = writeln!(
        out,
        r#"<path d="M{x0:.2},{y1:.2} L{x0:.2},{y0:.2} L{x1:.2},{y0:.2}" fill="none" stroke="black"/>"#
    );
    for k in 0..=ticks {
        let t = k as f64 / ticks as f64;
        let xv = frame.x_min + t * (frame.x_max - frame.x_min);
        let yv = frame.y_min + t * (frame.y_max - frame.y_min);
        let (px, py) = (frame.x(xv), frame.y(yv));
        let _ = writeln!(
            out,
            r#"<line x1="{px:.2}" y1="{y0:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            y0 + 4.0,
            y0 + 18.0,
            tick_label(xv)
        );
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{py:.2}" x2="{x0:.2}" y2="{py:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            x0 - 4.0,
            x0 - 7.0,
            py + 4.0,
            tick_label(yv)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text transform="translate(16,{:.2}) rotate(-90)" text-anchor="middle">{}</text>"#,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn tick_label(v: f64) -> String {
    if v.abs() >= 100.0 || v == v.round() {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn points(pts: &[(f64, f64)]) -> String {
    pts.iter()
        .map(|(x, y)| format!("{x:.3},{y:.3}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Fraction of trajectories no longer than each distance, drawn as a step
/// function ending at 1.
pub fn cdf_svg(report: &EvalReport) -> String {
    let x_max = report.cdf.last().map_or(1.0, |p| p.distance_m).max(1.0);
    let frame = Frame {
        x_min: 0.0,
        x_max,
        y_min: 0.0,
        y_max: 1.0,
    };
    let mut out = String::new();
    header(&mut out, "Engaged trajectory distances");
    axes(&mut out, &frame, "distance (m)", "fraction of trajectories", 5);
    let mut pts = vec![(frame.x(0.0), frame.y(0.0))];
    let mut prev = 0.0;
    for p in &report.cdf {
        pts.push((frame.x(p.distance_m), frame.y(prev)));
        pts.push((frame.x(p.distance_m), frame.y(p.fraction)));
        prev = p.fraction;
    }
    let _ = writeln!(
        out,
        r##"<polyline id="cdf" points="{}" fill="none" stroke="#1f5fbf" stroke-width="2"/>"##,
        points(&pts)
    );
    out.push_str("</svg>\n");
    out
}

/// Average distance until disengagement per evaluation, in order.
pub fn learning_curve_svg(reports: &[EvalReport]) -> String {
    let values: Vec<f64> = reports.iter().map(|r| r.avg_distance_m).collect();
    let y_max = values.iter().copied().fold(1.0, f64::max) * 1.1;
    let frame = Frame {
        x_min: 0.0,
        x_max: (values.len().max(2) - 1) as f64,
        y_min: 0.0,
        y_max,
    };
    let mut out = String::new();
    header(&mut out, "Learning curve");
    axes(
        &mut out,
        &frame,
        "training phases completed",
        "avg distance until disengagement (m)",
        values.len().clamp(2, 10) - 1,
    );
    let pts: Vec<(f64, f64)> = values
        .iter()
        .enumerate()
        .map(|(i, &v)| (frame.x(i as f64), frame.y(v)))
        .collect();
    let _ = writeln!(
        out,
        r##"<polyline id="curve" points="{}" fill="none" stroke="#1f5fbf" stroke-width="2"/>"##,
        points(&pts)
    );
    for (x, y) in &pts {
        let _ = writeln!(out, r##"<circle cx="{x:.3}" cy="{y:.3}" r="4" fill="#1f5fbf"/>"##);
    }
    out.push_str("</svg>\n");
    out
}

/// Low-to-high probability color ramp (blue to red).
pub fn ramp(p: f64) -> String {
    let t = p.clamp(0.0, 1.0);
    let r = (40.0 + t * 200.0).round() as u8;
    let b = (220.0 - t * 190.0).round() as u8;
    format!("#{r:02x}40{b:02x}")
}

/// Robot-frame path of a heading-change sequence: x forward, y left.
pub fn unroll(actions: &[f64]) -> Vec<(f64, f64)> {
    let mut pts = vec![(0.0, 0.0)];
    let (mut x, mut y, mut heading) = (0.0, 0.0, 0.0f64);
    for &a in actions {
        heading += a;
        x += STEP_LENGTH_M * heading.cos();
        y += STEP_LENGTH_M * heading.sin();
        pts.push((x, y));
    }
    pts
}

/// Candidate paths colored by mean predicted disengagement probability,
/// with the optimized mean on top.
pub fn plan_svg(diag: &PlanDiagnostics) -> String {
    let horizon = diag.mean.len().max(1) as f64;
    let reach = horizon * STEP_LENGTH_M;
    // Plot coordinates: lateral on x (left of robot drawn on the left), forward on y.
    let frame = Frame {
        x_min: -reach,
        x_max: reach,
        y_min: 0.0,
        y_max: reach,
    };
    let to_plot = |(fwd, left): (f64, f64)| (frame.x(-left), frame.y(fwd));
    let mut out = String::new();
    header(&mut out, "Planner candidates");
    axes(&mut out, &frame, "lateral (m, left is negative x)", "forward (m)", 4);
    let mut order: Vec<usize> = (0..diag.candidates.len()).collect();
    let mean_prob = |k: usize| {
        let p = &diag.candidates[k].probs;
        p.iter().sum::<f64>() / p.len().max(1) as f64
    };
    // Draw the likeliest failures first so safer paths stay visible.
    order.sort_by(|&a, &b| mean_prob(b).total_cmp(&mean_prob(a)));
    for k in order {
        let pts: Vec<(f64, f64)> = unroll(&diag.candidates[k].actions).into_iter().map(to_plot).collect();
        let _ = writeln!(
            out,
            r#"<polyline class="candidate" points="{}" fill="none" stroke="{}" stroke-opacity="0.6"/>"#,
            points(&pts),
            ramp(mean_prob(k))
        );
    }
    let pts: Vec<(f64, f64)> = unroll(&diag.mean).into_iter().map(to_plot).collect();
    let _ = writeln!(
        out,
        r#"<polyline id="mean" points="{}" fill="none" stroke="black" stroke-width="3"/>"#,
        points(&pts)
    );
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use land_core::experiment::RolloutTally;

    #[test]
    fn cdf_ends_at_one() {
        let tally = RolloutTally {
            trajectories: vec![3.0, 1.0, 7.5],
            causes: vec![],
            steps: 10,
        };
        let report = EvalReport::from_tallies([&tally]);
        let svg = cdf_svg(&report);
        let frame = Frame {
            x_min: 0.0,
            x_max: 7.5,
            y_min: 0.0,
            y_max: 1.0,
        };
        let last = format!("{:.3},{:.3}\"", frame.x(7.5), frame.y(1.0));
        assert!(svg.contains(&last), "{svg}");
    }

    #[test]
    fn straight_sequence_unrolls_forward() {
        let pts = unroll(&[0.0; 4]);
        assert_eq!(pts.last().copied(), Some((2.0, 0.0)));
        let left = unroll(&[0.4]);
        assert!(left[1].1 > 0.0);
    }

    #[test]
    fn ramp_endpoints() {
        assert_eq!(ramp(0.0), "#2840dc");
        assert_eq!(ramp(1.0), "#f0401e");
    }
}
