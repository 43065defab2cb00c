//! Plain SVG output: trajectory overlays and cluster scatter plots.

use std::fmt::Write;

use crate::geometry::Vec2;
use crate::scenario::{AgentKind, Scenario};
use crate::sim::SimOutput;

const WIDTH: f64 = 800.0;
const MARGIN: f64 = 30.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Maps world coordinates onto the canvas with y pointing up.
struct Frame {
    min: Vec2<f64>,
    scale: f64,
    height: f64,
}

impl Frame {
    fn new(min: Vec2<f64>, max: Vec2<f64>) -> Self {
        let span = Vec2::new((max.x - min.x).max(1e-9), (max.y - min.y).max(1e-9));
        let scale = (WIDTH - 2.0 * MARGIN) / span.x;
        Self { min, scale, height: span.y * scale + 2.0 * MARGIN }
    }

    fn map(&self, p: Vec2<f64>) -> (f64, f64) {
        (MARGIN + (p.x - self.min.x) * self.scale, self.height - MARGIN - (p.y - self.min.y) * self.scale)
    }

    fn open(&self, title: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0}" height="{h:.0}" viewBox="0 0 {WIDTH:.0} {h:.0}">"#,
            h = self.height
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{MARGIN}" y="20" font-family="sans-serif" font-size="14">{}</text>"#, escape(title));
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn polyline(frame: &Frame, pts: &[Vec2<f64>], color: &str, dashed: bool) -> String {
    let coords: Vec<String> = pts
        .iter()
        .map(|p| {
            let (x, y) = frame.map(*p);
            format!("{x:.2},{y:.2}")
        })
        .collect();
    let dash = if dashed { r#" stroke-dasharray="2,4""# } else { "" };
    format!(r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"{dash}/>"#, coords.join(" "))
}

/// Recorded tracks dotted, simulated tracks solid; pedestrians blue, cars red.
pub fn trajectories_svg(real: &Scenario<f64>, sim: Option<&SimOutput<f64>>) -> String {
    let frame = Frame::new(real.bounds.min, real.bounds.max);
    let mut s = frame.open(&format!("scenario {}", real.id));
    for o in &real.obstacles {
        let mut pts = o.vertices.clone();
        if o.closed {
            pts.extend(o.vertices.first().copied());
        }
        let _ = writeln!(s, "{}", polyline(&frame, &pts, "#555555", false));
    }
    let color = |k: AgentKind| if k == AgentKind::Car { PALETTE[1] } else { PALETTE[0] };
    for t in &real.tracks {
        let _ = writeln!(s, "{}", polyline(&frame, &t.positions, color(t.kind), true));
    }
    for t in sim.into_iter().flat_map(|o| &o.tracks).filter(|t| !t.ghost) {
        let _ = writeln!(s, "{}", polyline(&frame, &t.positions, color(t.kind), false));
    }
    s.push_str("</svg>\n");
    s
}

/// Scatter of 2-D points coloured by cluster.
pub fn clusters_svg(points: &[(f64, f64)], assignments: &[usize], x_label: &str, y_label: &str) -> String {
    let (mut min, mut max) = (Vec2::new(f64::INFINITY, f64::INFINITY), Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
    for &(x, y) in points {
        min = Vec2::new(min.x.min(x), min.y.min(y));
        max = Vec2::new(max.x.max(x), max.y.max(y));
    }
    if points.is_empty() {
        (min, max) = (Vec2::zero(), Vec2::new(1.0, 1.0));
    }
    let pad = Vec2::new((max.x - min.x).max(1.0) * 0.05, (max.y - min.y).max(1.0) * 0.05);
    let frame = Frame::new(min - pad, max + pad);
    let mut s = frame.open(&format!("{y_label} vs {x_label}"));
    for (&(x, y), &g) in points.iter().zip(assignments) {
        let (cx, cy) = frame.map(Vec2::new(x, y));
        let _ = writeln!(s, r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="5" fill="{}"/>"#, PALETTE[g % PALETTE.len()]);
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{crossing_scenario, synthetic_config};

    #[test]
    fn trajectory_plot_has_dotted_real_and_solid_sim() {
        let s = crossing_scenario("x");
        let out = crate::sim::run(&s, &synthetic_config()).unwrap();
        let svg = trajectories_svg(&s, Some(&out));
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("stroke-dasharray").count(), 2);
        assert_eq!(svg.matches("<polyline").count(), 4);
        assert_eq!(svg, trajectories_svg(&s, Some(&out)));
    }

    #[test]
    fn cluster_plot_colours_groups() {
        let svg = clusters_svg(&[(0.0, 0.0), (1.0, 1.0), (5.0, 5.0)], &[0, 0, 1], "a", "b");
        assert_eq!(svg.matches("<circle").count(), 3);
        assert_eq!(svg.matches(PALETTE[1]).count(), 1);
    }
}
