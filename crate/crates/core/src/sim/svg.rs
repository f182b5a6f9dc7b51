//! Minimal SVG emitter for scenes and trajectory overlays (world units in meters).

use std::fmt::Write;

use super::{Bounds, Footprint, ObstacleShape, RobotState, Scene, Vec2};

pub struct SvgCanvas {
    bounds: Bounds,
    scale: f64,
    body: String,
}

impl SvgCanvas {
    pub fn new(bounds: Bounds, pixels_per_meter: f64) -> Self {
        Self {
            bounds,
            scale: pixels_per_meter,
            body: String::new(),
        }
    }

    fn px(&self, p: &Vec2) -> (f64, f64) {
        (
            (p.x - self.bounds.min_x) * self.scale,
            (self.bounds.max_y - p.y) * self.scale,
        )
    }

    fn points_attr(&self, pts: &[Vec2]) -> String {
        pts.iter()
            .map(|p| {
                let (x, y) = self.px(p);
                format!("{x:.2},{y:.2}")
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn comment(&mut self, text: &str) {
        let _ = writeln!(self.body, "<!-- {} -->", text.replace("--", "- -"));
    }

    pub fn begin_group(&mut self, id: &str) {
        let _ = writeln!(self.body, "<g id=\"{id}\">");
    }

    pub fn end_group(&mut self) {
        self.body.push_str("</g>\n");
    }

    pub fn circle(&mut self, c: &Vec2, r: f64, fill: &str, stroke: &str) {
        let (x, y) = self.px(c);
        let _ = writeln!(
            self.body,
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"{:.2}\" fill=\"{fill}\" stroke=\"{stroke}\"/>",
            r * self.scale
        );
    }

    pub fn polygon(&mut self, pts: &[Vec2], fill: &str, stroke: &str) {
        let _ = writeln!(
            self.body,
            "<polygon points=\"{}\" fill=\"{fill}\" stroke=\"{stroke}\"/>",
            self.points_attr(pts)
        );
    }

    pub fn polyline(&mut self, pts: &[Vec2], stroke: &str, width: f64, opacity: f64) {
        let _ = writeln!(
            self.body,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{stroke}\" stroke-width=\"{width}\" stroke-opacity=\"{opacity}\"/>",
            self.points_attr(pts)
        );
    }

    pub fn text(&mut self, at: &Vec2, text: &str) {
        let (x, y) = self.px(at);
        let _ = writeln!(
            self.body,
            "<text x=\"{x:.2}\" y=\"{y:.2}\" font-size=\"10\" font-family=\"sans-serif\">{text}</text>"
        );
    }

    /// Draws obstacles, objects (at their pose in `state`) and the arm.
    pub fn scene(&mut self, scene: &Scene, state: &RobotState) {
        self.begin_group("scene");
        let b = self.bounds;
        self.polygon(
            &[
                Vec2::new(b.min_x, b.min_y),
                Vec2::new(b.max_x, b.min_y),
                Vec2::new(b.max_x, b.max_y),
                Vec2::new(b.min_x, b.max_y),
            ],
            "#fafafa",
            "#999",
        );
        for ob in &scene.obstacles {
            match ob.shape {
                ObstacleShape::Circle { x, y, radius } => self.circle(&Vec2::new(x, y), radius, "#555", "#222"),
                ObstacleShape::Rect {
                    min_x,
                    min_y,
                    max_x,
                    max_y,
                } => self.polygon(
                    &[
                        Vec2::new(min_x, min_y),
                        Vec2::new(max_x, min_y),
                        Vec2::new(max_x, max_y),
                        Vec2::new(min_x, max_y),
                    ],
                    "#555",
                    "#222",
                ),
            }
        }
        for o in &scene.objects {
            let pose = scene.object_pose(state, &o.name).unwrap_or(o.pose);
            let fill = match o.category {
                super::ObjectCategory::Link => "#e8b04a",
                super::ObjectCategory::Node => "#6a9fd8",
                super::ObjectCategory::Other => "#bbb",
            };
            match o.footprint {
                Footprint::Circle { radius } => self.circle(&pose.position(), radius, fill, "#333"),
                Footprint::Box { .. } => {
                    if let super::geometry::Core::Polygon(pts) = o.footprint.shape_at(&pose).core {
                        self.polygon(&pts, fill, "#333");
                    }
                }
            }
            self.text(&(pose.position() + Vec2::new(0.03, 0.05)), &o.name);
        }
        self.arm(scene, &state.joints, "#222", 1.0);
        self.end_group();
    }

    pub fn arm(&mut self, scene: &Scene, joints: &[f64], stroke: &str, opacity: f64) {
        let fk = scene.arm.forward_kinematics(joints);
        let width = scene.arm.link_radii.first().copied().unwrap_or(0.02) * self.scale;
        self.polyline(&fk.joints, stroke, width, opacity);
    }

    pub fn finish(self) -> String {
        let w = (self.bounds.max_x - self.bounds.min_x) * self.scale;
        let h = (self.bounds.max_y - self.bounds.min_y) * self.scale;
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.2} {h:.2}\">\n{}</svg>\n",
            self.body
        )
    }
}
