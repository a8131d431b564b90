//! Anti-aliased grayscale rasterizer for the two camera views.
//!
//! Shapes are drawn with the painter's algorithm; each pixel blends toward a
//! shape's intensity by its approximate area coverage, derived from the
//! signed distance at the pixel centre.

use serde::{Deserialize, Serialize};

use crate::arm::{self, Point};
use crate::env::EnvState;
use crate::task::{TaskConfig, TaskId};

/// Front view world window: `[x0, y0, side]` in meters.
pub const FRONT_WINDOW: [f64; 3] = [-0.05, -0.15, 0.90];
/// Side length of the wrist window, centred on the end effector.
pub const WRIST_SIDE: f64 = 0.24;

const FINGER_LEN: f64 = 0.04;

/// Row-major grayscale image; row 0 is the top of the view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![0.0; width * height],
        }
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }
}

enum Shape {
    Capsule { a: Point, b: Point, radius: f64 },
    Rect { min: Point, max: Point },
    Disc { c: Point, radius: f64 },
}

impl Shape {
    fn signed_distance(&self, p: Point) -> f64 {
        match *self {
            Shape::Capsule { a, b, radius } => {
                let ab = [b[0] - a[0], b[1] - a[1]];
                let ap = [p[0] - a[0], p[1] - a[1]];
                let len2 = ab[0] * ab[0] + ab[1] * ab[1];
                let t = if len2 > 0.0 {
                    ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                arm::distance(p, [a[0] + t * ab[0], a[1] + t * ab[1]]) - radius
            }
            Shape::Rect { min, max } => {
                let c = [(min[0] + max[0]) / 2.0, (min[1] + max[1]) / 2.0];
                let h = [(max[0] - min[0]) / 2.0, (max[1] - min[1]) / 2.0];
                let d = [(p[0] - c[0]).abs() - h[0], (p[1] - c[1]).abs() - h[1]];
                let outside = (d[0].max(0.0).powi(2) + d[1].max(0.0).powi(2)).sqrt();
                outside + d[0].max(d[1]).min(0.0)
            }
            Shape::Disc { c, radius } => arm::distance(p, c) - radius,
        }
    }
}

struct Canvas {
    image: Image,
    origin: Point,
    side: f64,
}

impl Canvas {
    fn new(size: usize, origin: Point, side: f64) -> Self {
        Self {
            image: Image::new(size, size),
            origin,
            side,
        }
    }

    fn draw(&mut self, shape: &Shape, intensity: f64) {
        let n = self.image.width;
        let px = self.side / n as f64;
        for i in 0..n {
            let y = self.origin[1] + self.side - (i as f64 + 0.5) * px;
            for j in 0..n {
                let x = self.origin[0] + (j as f64 + 0.5) * px;
                let cover = (0.5 - shape.signed_distance([x, y]) / px).clamp(0.0, 1.0);
                if cover > 0.0 {
                    let v = &mut self.image.pixels[i * n + j];
                    *v += (intensity - *v) * cover;
                }
            }
        }
    }
}

fn scene(state: &EnvState, cfg: &TaskConfig) -> Vec<(Shape, f64)> {
    let mut shapes = vec![(
        Shape::Rect {
            min: [-1.0, -1.0],
            max: [2.0, 0.0],
        },
        0.2,
    )];
    let obj = state.object;
    match cfg.task {
        TaskId::LatchPull => {
            let home = state.object_home;
            shapes.push((
                Shape::Rect {
                    min: [home[0] + 0.012, home[1] - 0.09],
                    max: [home[0] + 0.24, home[1] + 0.09],
                },
                0.3,
            ));
            shapes.push((
                Shape::Rect {
                    min: [obj[0] + 0.012, obj[1] - 0.06],
                    max: [obj[0] + 0.21, obj[1] + 0.06],
                },
                0.45,
            ));
            shapes.push((
                Shape::Capsule {
                    a: [obj[0], obj[1] - 0.03],
                    b: [obj[0], obj[1] + 0.03],
                    radius: 0.008,
                },
                1.0,
            ));
        }
        TaskId::PressButton => {
            shapes.push((
                Shape::Rect {
                    min: [obj[0] - 0.035, 0.0],
                    max: [obj[0] + 0.035, 0.01],
                },
                0.5,
            ));
            // pressed cap sinks 2 mm and darkens slightly
            let pressed = state.progress > 0.0;
            let (top, shade) = if pressed { (0.018, 0.82) } else { (0.02, 0.85) };
            shapes.push((
                Shape::Rect {
                    min: [obj[0] - 0.02, 0.01],
                    max: [obj[0] + 0.02, top],
                },
                shade,
            ));
        }
        TaskId::PlaceBlock => {
            let z = state.zone;
            shapes.push((
                Shape::Rect {
                    min: [z[0] - 0.05, -0.012],
                    max: [z[0] + 0.05, 0.0],
                },
                0.55,
            ));
            shapes.push((
                Shape::Rect {
                    min: [obj[0] - 0.02, obj[1] - 0.02],
                    max: [obj[0] + 0.02, obj[1] + 0.02],
                },
                0.9,
            ));
        }
    }

    let q = state.joints;
    let elbow = arm::elbow(q);
    let ee = arm::end_effector(q);
    let a = arm::tool_angle(q);
    let dir = [a.cos(), a.sin()];
    let normal = [-dir[1], dir[0]];
    let palm = [ee[0] - FINGER_LEN * dir[0], ee[1] - FINGER_LEN * dir[1]];
    let half = state.gripper / 2.0 + 0.004;
    let offset = |p: Point, s: f64| [p[0] + s * normal[0], p[1] + s * normal[1]];

    shapes.push((Shape::Disc { c: [0.0, 0.0], radius: 0.04 }, 0.5));
    shapes.push((Shape::Capsule { a: [0.0, 0.0], b: elbow, radius: 0.02 }, 0.65));
    shapes.push((Shape::Capsule { a: elbow, b: palm, radius: 0.015 }, 0.65));
    shapes.push((
        Shape::Capsule {
            a: offset(palm, -half),
            b: offset(palm, half),
            radius: 0.005,
        },
        0.8,
    ));
    for s in [-half, half] {
        shapes.push((
            Shape::Capsule {
                a: offset(palm, s),
                b: offset(ee, s),
                radius: 0.005,
            },
            0.8,
        ));
    }
    shapes
}

fn rasterize(shapes: &[(Shape, f64)], size: usize, origin: Point, side: f64) -> Image {
    let mut canvas = Canvas::new(size, origin, side);
    for (shape, intensity) in shapes {
        canvas.draw(shape, *intensity);
    }
    for v in &mut canvas.image.pixels {
        *v = v.clamp(0.0, 1.0);
    }
    canvas.image
}

/// Renders the front view and the wrist view (a zoomed window centred on the
/// end effector).
pub fn render(state: &EnvState, cfg: &TaskConfig) -> (Image, Image) {
    let shapes = scene(state, cfg);
    let n = cfg.image_size;
    let front = rasterize(&shapes, n, [FRONT_WINDOW[0], FRONT_WINDOW[1]], FRONT_WINDOW[2]);
    let ee = arm::end_effector(state.joints);
    let half = WRIST_SIDE / 2.0;
    let wrist = rasterize(&shapes, n, [ee[0] - half, ee[1] - half], WRIST_SIDE);
    (front, wrist)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rect_distance_sign() {
        let r = Shape::Rect {
            min: [0.0, 0.0],
            max: [1.0, 1.0],
        };
        assert!(r.signed_distance([0.5, 0.5]) < 0.0);
        assert!((r.signed_distance([2.0, 0.5]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn capsule_distance() {
        let c = Shape::Capsule {
            a: [0.0, 0.0],
            b: [1.0, 0.0],
            radius: 0.1,
        };
        assert!((c.signed_distance([0.5, 1.0]) - 0.9).abs() < 1e-12);
        assert!((c.signed_distance([2.0, 0.0]) - 0.9).abs() < 1e-12);
    }
}
