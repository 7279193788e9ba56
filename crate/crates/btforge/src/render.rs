//! Schematic top-down SVG rendering of scenes.
//!
//! The view fixes the spatial convention shared with instruction
//! grounding: smaller world x is drawn further left. World y grows
//! upward in the image.

use crate::scene::{Dims, Scene, Shape};

/// Affine world-to-image mapping used by the renderer.
#[derive(Debug, Clone, Copy)]
pub struct SchematicView {
    pub scale: f64,
    pub margin: f64,
    x_min: f64,
    y_max: f64,
}

impl SchematicView {
    pub fn for_scene(scene: &Scene) -> Self {
        SchematicView {
            scale: 1000.0,
            margin: 40.0,
            x_min: scene.table.x_min,
            y_max: scene.table.y_max,
        }
    }

    pub fn world_to_image(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.x_min) * self.scale + self.margin,
            (self.y_max - y) * self.scale + self.margin,
        )
    }

    pub fn image_to_world(&self, ix: f64, iy: f64) -> (f64, f64) {
        (
            (ix - self.margin) / self.scale + self.x_min,
            self.y_max - (iy - self.margin) / self.scale,
        )
    }
}

fn fmt(v: f64) -> String {
    format!("{:.2}", v)
}

/// Renders the scene as a standalone SVG document: the table rectangle,
/// one group per object footprint (translated to the object center and
/// rotated by its yaw), and an id label per object.
pub fn render_schematic(scene: &Scene) -> String {
    let view = SchematicView::for_scene(scene);
    let width = scene.table.x_max - scene.table.x_min;
    let depth = scene.table.y_max - scene.table.y_min;
    let iw = width * view.scale + 2.0 * view.margin;
    let ih = depth * view.scale + 2.0 * view.margin;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n",
        fmt(iw),
        fmt(ih),
        fmt(iw),
        fmt(ih)
    ));
    svg.push_str(&format!(
        "  <rect class=\"table\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"#d9c29a\" stroke=\"black\"/>\n",
        fmt(view.margin),
        fmt(view.margin),
        fmt(width * view.scale),
        fmt(depth * view.scale)
    ));

    for obj in &scene.objects {
        let (ix, iy) = view.world_to_image(obj.pose.x(), obj.pose.y());
        let yaw_deg = yaw_of(obj.pose.quat()).to_degrees();
        svg.push_str(&format!(
            "  <g class=\"object\" transform=\"translate({} {}) rotate({})\">\n",
            fmt(ix),
            fmt(iy),
            // Image y is flipped, so a counterclockwise world yaw is a
            // clockwise image rotation.
            fmt(-yaw_deg)
        ));
        match obj.dims {
            Dims::Cylinder { radius, .. } => {
                svg.push_str(&format!(
                    "    <circle r=\"{}\" fill=\"{}\" stroke=\"black\"/>\n",
                    fmt(radius * view.scale),
                    obj.color
                ));
            }
            Dims::Box { width, depth, .. } => match obj.shape {
                Shape::Prism => {
                    let hw = width / 2.0 * view.scale;
                    let hd = depth / 2.0 * view.scale;
                    svg.push_str(&format!(
                        "    <polygon points=\"{},{} {},{} {},{}\" fill=\"{}\" stroke=\"black\"/>\n",
                        fmt(-hw),
                        fmt(hd),
                        fmt(hw),
                        fmt(hd),
                        fmt(0.0),
                        fmt(-hd),
                        obj.color
                    ));
                }
                _ => {
                    let w = width * view.scale;
                    let d = depth * view.scale;
                    svg.push_str(&format!(
                        "    <rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\" stroke=\"black\"/>\n",
                        fmt(-w / 2.0),
                        fmt(-d / 2.0),
                        fmt(w),
                        fmt(d),
                        obj.color
                    ));
                }
            },
        }
        svg.push_str("  </g>\n");
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
            fmt(ix),
            fmt(iy - 8.0),
            obj.id
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn yaw_of(q: [f64; 4]) -> f64 {
    // Scene objects rotate about the vertical axis only: q = (cos t/2, 0, 0, sin t/2).
    2.0 * q[3].atan2(q[0])
}
