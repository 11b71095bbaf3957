use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Disk,
    Rectangle,
    Triangle,
}

/// A filled planar shape in pixel coordinates (pixel `(x, y)` has centre
/// `(x + 0.5, y + 0.5)`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape2d {
    Disk {
        cx: f64,
        cy: f64,
        r: f64,
    },
    /// Axis-aligned, given by centre and half extents.
    Rectangle {
        cx: f64,
        cy: f64,
        hw: f64,
        hh: f64,
    },
    Triangle {
        v: [(f64, f64); 3],
    },
}

fn edge(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

impl Shape2d {
    /// Inclusive point test.
    pub fn contains(&self, px: f64, py: f64) -> bool {
        match *self {
            Shape2d::Disk { cx, cy, r } => (px - cx).powi(2) + (py - cy).powi(2) <= r * r,
            Shape2d::Rectangle { cx, cy, hw, hh } => (px - cx).abs() <= hw && (py - cy).abs() <= hh,
            Shape2d::Triangle { v } => {
                let p = (px, py);
                let e0 = edge(v[0], v[1], p);
                let e1 = edge(v[1], v[2], p);
                let e2 = edge(v[2], v[0], p);
                (e0 >= 0.0 && e1 >= 0.0 && e2 >= 0.0) || (e0 <= 0.0 && e1 <= 0.0 && e2 <= 0.0)
            }
        }
    }

    /// Coverage mask sampled at pixel centres, row-major.
    pub fn rasterize(&self, width: usize, height: usize) -> Vec<bool> {
        let mut out = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                out.push(self.contains(x as f64 + 0.5, y as f64 + 0.5));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_corners() {
        let r = Shape2d::Rectangle {
            cx: 2.0,
            cy: 2.0,
            hw: 1.0,
            hh: 1.0,
        };
        let m = r.rasterize(4, 4);
        assert_eq!(m.iter().filter(|&&b| b).count(), 4);
        assert!(m[5] && m[6] && m[9] && m[10]);
    }

    #[test]
    fn triangle_orientation_does_not_matter() {
        let a = Shape2d::Triangle {
            v: [(1.0, 1.0), (9.0, 2.0), (4.0, 8.0)],
        };
        let b = Shape2d::Triangle {
            v: [(1.0, 1.0), (4.0, 8.0), (9.0, 2.0)],
        };
        assert_eq!(a.rasterize(10, 10), b.rasterize(10, 10));
        assert!(a.rasterize(10, 10).iter().any(|&x| x));
    }
}
