//! Planar points and axis-aligned rectangles, in micrometres.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Absolute tolerance used when comparing grid-aligned coordinates.
pub const COORD_EPS: f64 = 1e-9;

/// A point in the cell plane (µm).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    /// Builds a point from coordinates.
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    /// Euclidean distance to another point.
    pub fn distance_to(&self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// This point shifted by `(dx, dy)`.
    pub fn translated(&self, dx: f64, dy: f64) -> Point {
        Point::new(self.x + dx, self.y + dy)
    }
}

/// Axis-aligned rectangle with `x0 < x1` and `y0 < y1` (µm).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    /// Builds a rectangle, rejecting empty or inverted extents and
    /// non-finite coordinates.
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        let r = Rect { x0, y0, x1, y1 };
        if ![x0, y0, x1, y1].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid(format!("rectangle has non-finite coordinates: {r:?}")));
        }
        if x0 >= x1 || y0 >= y1 {
            return Err(Error::invalid(format!(
                "rectangle must satisfy x0 < x1 and y0 < y1, got {r:?}"
            )));
        }
        Ok(r)
    }

    /// Rectangle of size `width x height` centred on `center`.
    pub fn from_center(center: Point, width: f64, height: f64) -> Result<Self> {
        Rect::new(
            center.x - width / 2.0,
            center.y - height / 2.0,
            center.x + width / 2.0,
            center.y + height / 2.0,
        )
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> Point {
        Point::new((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    /// Whether `p` lies inside the closed rectangle (boundary included).
    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x0 && p.x <= self.x1 && p.y >= self.y0 && p.y <= self.y1
    }

    /// Whether the open interiors of the two rectangles overlap.
    /// Rectangles that merely share an edge do not count as overlapping.
    pub fn overlaps(&self, other: &Rect) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }

    /// Whether `other` lies entirely inside this rectangle (edges may touch).
    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.x0 >= self.x0 - COORD_EPS
            && other.y0 >= self.y0 - COORD_EPS
            && other.x1 <= self.x1 + COORD_EPS
            && other.y1 <= self.y1 + COORD_EPS
    }

    /// Smallest rectangle containing both inputs.
    pub fn union(&self, other: &Rect) -> Rect {
        Rect {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }

    /// This rectangle shifted by `(dx, dy)`.
    pub fn translated(&self, dx: f64, dy: f64) -> Rect {
        Rect {
            x0: self.x0 + dx,
            y0: self.y0 + dy,
            x1: self.x1 + dx,
            y1: self.y1 + dy,
        }
    }

    /// This rectangle grown by `margin` on every side.
    pub fn expanded(&self, margin: f64) -> Rect {
        Rect {
            x0: self.x0 - margin,
            y0: self.y0 - margin,
            x1: self.x1 + margin,
            y1: self.y1 + margin,
        }
    }

    /// Distance from `p` to the nearest point of the closed rectangle
    /// (zero when `p` is inside).
    pub fn distance_to_point(&self, p: Point) -> f64 {
        let dx = (self.x0 - p.x).max(0.0).max(p.x - self.x1);
        let dy = (self.y0 - p.y).max(0.0).max(p.y - self.y1);
        dx.hypot(dy)
    }
}

/// Inclusive arithmetic progression `lo, lo+step, …` up to `hi` (with a small
/// tolerance so that exact endpoints are kept despite rounding).
pub fn grid_coords(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::invalid(format!("grid step must be positive, got {step}")));
    }
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::invalid("grid endpoints must be finite".to_string()));
    }
    let mut out = Vec::new();
    let n = ((hi - lo) / step + COORD_EPS).floor() as i64;
    for k in 0..=n.max(-1) {
        out.push(lo + k as f64 * step);
    }
    if out.is_empty() && hi >= lo {
        out.push(lo);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rect_rejects_inverted_and_empty_extents() {
        assert!(Rect::new(0.0, 0.0, 1.0, 1.0).is_ok());
        assert!(Rect::new(1.0, 0.0, 0.0, 1.0).is_err());
        assert!(Rect::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(Rect::new(0.0, 2.0, 1.0, 2.0).is_err());
        assert!(Rect::new(0.0, f64::NAN, 1.0, 2.0).is_err());
    }

    #[test]
    fn containment_is_closed_overlap_is_open() {
        let r = Rect::new(0.0, 0.0, 2.0, 1.0).unwrap();
        assert!(r.contains(Point::new(0.0, 0.0)));
        assert!(r.contains(Point::new(2.0, 1.0)));
        assert!(!r.contains(Point::new(2.0 + 1e-12, 0.5)));

        let touching = Rect::new(2.0, 0.0, 3.0, 1.0).unwrap();
        assert!(!r.overlaps(&touching));
        let crossing = Rect::new(1.5, 0.5, 3.0, 2.0).unwrap();
        assert!(r.overlaps(&crossing));
    }

    #[test]
    fn distance_to_point_clamps_to_boundary() {
        let r = Rect::new(0.0, 0.0, 2.0, 2.0).unwrap();
        assert_eq!(r.distance_to_point(Point::new(1.0, 1.0)), 0.0);
        assert_eq!(r.distance_to_point(Point::new(5.0, 1.0)), 3.0);
        let d = r.distance_to_point(Point::new(5.0, 6.0));
        assert!((d - 5.0).abs() < 1e-12);
    }

    #[test]
    fn grid_coords_keeps_exact_endpoints() {
        let xs = grid_coords(-2.0, 84.0, 0.5).unwrap();
        assert_eq!(xs.len(), 173);
        assert_eq!(xs[0], -2.0);
        assert_eq!(*xs.last().unwrap(), 84.0);
        assert!(grid_coords(0.0, 1.0, 0.0).is_err());
        assert_eq!(grid_coords(3.0, 3.0, 0.5).unwrap(), vec![3.0]);
    }

    #[test]
    fn union_and_expand_cover_both_inputs() {
        let a = Rect::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let b = Rect::new(3.0, -1.0, 4.0, 0.5).unwrap();
        let u = a.union(&b);
        assert_eq!((u.x0, u.y0, u.x1, u.y1), (0.0, -1.0, 4.0, 1.0));
        let e = a.expanded(2.0);
        assert_eq!((e.x0, e.y0, e.x1, e.y1), (-2.0, -2.0, 3.0, 3.0));
    }
}
