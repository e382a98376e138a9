use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

/// Wraps an angle into `[-π, π)`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a - TAU * ((a + PI) / TAU).floor();
    if w >= PI {
        w - TAU
    } else {
        w
    }
}

/// Planar agent pose; `theta` in `[-π, π)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn position(&self) -> (f64, f64) {
        (self.x, self.y)
    }

    pub fn dist_to(&self, p: (f64, f64)) -> f64 {
        ((self.x - p.0).powi(2) + (self.y - p.1).powi(2)).sqrt()
    }

    /// `other` expressed in this pose's body frame.
    pub fn relative(&self, other: &Pose) -> RelPose {
        let (dx, dy) = (other.x - self.x, other.y - self.y);
        let (s, c) = self.theta.sin_cos();
        let dtheta = wrap_angle(other.theta - self.theta);
        RelPose {
            dx: c * dx + s * dy,
            dy: -s * dx + c * dy,
            sin: dtheta.sin(),
            cos: dtheta.cos(),
        }
    }

    /// Applies a body-frame displacement and relative heading.
    pub fn compose(&self, dx: f64, dy: f64, dtheta: f64) -> Pose {
        let (s, c) = self.theta.sin_cos();
        Pose::new(
            self.x + c * dx - s * dy,
            self.y + s * dx + c * dy,
            self.theta + dtheta,
        )
    }
}

/// Pose of one frame relative to another, `(Δx, Δy, sin Δθ, cos Δθ)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelPose {
    pub dx: f64,
    pub dy: f64,
    pub sin: f64,
    pub cos: f64,
}

impl RelPose {
    pub const IDENTITY: RelPose = RelPose {
        dx: 0.0,
        dy: 0.0,
        sin: 0.0,
        cos: 1.0,
    };

    pub fn to_array(self) -> [f64; 4] {
        [self.dx, self.dy, self.sin, self.cos]
    }
}

/// Body-frame waypoint `[x, y, sin θ, cos θ, stop]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
    pub sin: f64,
    pub cos: f64,
    pub stop: f64,
}

impl Waypoint {
    pub fn from_array(a: [f64; 5]) -> Self {
        Self {
            x: a[0],
            y: a[1],
            sin: a[2],
            cos: a[3],
            stop: a[4],
        }
    }

    pub fn to_array(self) -> [f64; 5] {
        [self.x, self.y, self.sin, self.cos, self.stop]
    }

    pub fn from_rel(r: RelPose, stop: bool) -> Self {
        Self {
            x: r.dx,
            y: r.dy,
            sin: r.sin,
            cos: r.cos,
            stop: if stop { 1.0 } else { 0.0 },
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    pub fn contains_strict(&self, x: f64, y: f64) -> bool {
        x > self.x0 && x < self.x1 && y > self.y0 && y < self.y1
    }

    /// True when the open interiors intersect.
    pub fn interiors_overlap(&self, o: &Rect) -> bool {
        self.x0 < o.x1 - 1e-9 && o.x0 < self.x1 - 1e-9 && self.y0 < o.y1 - 1e-9 && o.y0 < self.y1 - 1e-9
    }
}

/// Axis-aligned segment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: (f64, f64),
    pub b: (f64, f64),
}

impl Segment {
    pub fn dist_to(&self, p: (f64, f64)) -> f64 {
        let (dx, dy) = (self.b.0 - self.a.0, self.b.1 - self.a.1);
        let len2 = dx * dx + dy * dy;
        let t = if len2 == 0.0 {
            0.0
        } else {
            (((p.0 - self.a.0) * dx + (p.1 - self.a.1) * dy) / len2).clamp(0.0, 1.0)
        };
        let (cx, cy) = (self.a.0 + t * dx, self.a.1 + t * dy);
        ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
    }

    /// Distance along a ray to this segment, if hit.
    pub fn ray_hit(&self, o: (f64, f64), d: (f64, f64)) -> Option<f64> {
        let e = (self.b.0 - self.a.0, self.b.1 - self.a.1);
        let denom = d.0 * e.1 - d.1 * e.0;
        if denom.abs() < 1e-15 {
            return None;
        }
        let w = (self.a.0 - o.0, self.a.1 - o.1);
        let t = (w.0 * e.1 - w.1 * e.0) / denom;
        let u = (w.0 * d.1 - w.1 * d.0) / denom;
        (t > 1e-12 && (-1e-12..=1.0 + 1e-12).contains(&u)).then_some(t)
    }
}
