//! Plane geometry for the canvas. Coordinates are unbounded finite reals,
//! `y` grows downward.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("coordinate is not finite: ({x}, {y})")]
    NonFinite { x: f64, y: f64 },
    #[error("rectangle must have positive size, got {width}x{height}")]
    NonPositiveSize { width: f64, height: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPoint")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

#[derive(Deserialize)]
struct RawPoint {
    x: f64,
    y: f64,
}

impl TryFrom<RawPoint> for Point {
    type Error = GeometryError;

    fn try_from(raw: RawPoint) -> Result<Self, Self::Error> {
        Point::new(raw.x, raw.y)
    }
}

impl Point {
    pub fn new(x: f64, y: f64) -> Result<Self, GeometryError> {
        if x.is_finite() && y.is_finite() {
            Ok(Self { x, y })
        } else {
            Err(GeometryError::NonFinite { x, y })
        }
    }

    pub const ORIGIN: Point = Point { x: 0.0, y: 0.0 };

    pub fn translated(self, delta: Delta) -> Result<Self, GeometryError> {
        Point::new(self.x + delta.dx, self.y + delta.dy)
    }
}

/// A translation vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub dx: f64,
    pub dy: f64,
}

impl Delta {
    pub fn new(dx: f64, dy: f64) -> Self {
        Self { dx, dy }
    }
}

/// Axis-aligned rectangle anchored at its top-left corner.
///
/// Containment is half-open: the left and top edges are inside, the right and
/// bottom edges are not, so regions sharing an edge never both contain a point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRect")]
pub struct Rect {
    pub origin: Point,
    pub width: f64,
    pub height: f64,
}

#[derive(Deserialize)]
struct RawRect {
    origin: Point,
    width: f64,
    height: f64,
}

impl TryFrom<RawRect> for Rect {
    type Error = GeometryError;

    fn try_from(raw: RawRect) -> Result<Self, Self::Error> {
        Rect::from_origin(raw.origin, raw.width, raw.height)
    }
}

impl Rect {
    pub fn new(x: f64, y: f64, width: f64, height: f64) -> Result<Self, GeometryError> {
        Rect::from_origin(Point::new(x, y)?, width, height)
    }

    pub fn from_origin(origin: Point, width: f64, height: f64) -> Result<Self, GeometryError> {
        // NaN fails the comparison as well
        if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
            return Err(GeometryError::NonPositiveSize { width, height });
        }
        Ok(Self {
            origin,
            width,
            height,
        })
    }

    pub fn left(&self) -> f64 {
        self.origin.x
    }

    pub fn top(&self) -> f64 {
        self.origin.y
    }

    pub fn right(&self) -> f64 {
        self.origin.x + self.width
    }

    pub fn bottom(&self) -> f64 {
        self.origin.y + self.height
    }

    pub fn center(&self) -> Point {
        Point {
            x: self.origin.x + self.width / 2.0,
            y: self.origin.y + self.height / 2.0,
        }
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.left() && p.x < self.right() && p.y >= self.top() && p.y < self.bottom()
    }

    /// True when the interiors overlap; touching edges do not count.
    pub fn intersects(&self, other: &Rect) -> bool {
        self.left() < other.right()
            && other.left() < self.right()
            && self.top() < other.bottom()
            && other.top() < self.bottom()
    }

    pub fn with_origin(&self, origin: Point) -> Rect {
        Rect { origin, ..*self }
    }

    pub fn translated(&self, delta: Delta) -> Result<Rect, GeometryError> {
        Ok(self.with_origin(self.origin.translated(delta)?))
    }
}

/// Smallest box covering every given rectangle, as `(left, top, right, bottom)`.
pub fn bounding_box<'a>(rects: impl IntoIterator<Item = &'a Rect>) -> Option<(f64, f64, f64, f64)> {
    rects.into_iter().fold(None, |acc, r| {
        Some(match acc {
            None => (r.left(), r.top(), r.right(), r.bottom()),
            Some((l, t, rt, b)) => (
                l.min(r.left()),
                t.min(r.top()),
                rt.max(r.right()),
                b.max(r.bottom()),
            ),
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_degenerate_rects() {
        assert!(Rect::new(0.0, 0.0, 0.0, 10.0).is_err());
        assert!(Rect::new(0.0, 0.0, 10.0, -1.0).is_err());
        assert!(Rect::new(0.0, 0.0, f64::NAN, 1.0).is_err());
        assert!(Rect::new(f64::INFINITY, 0.0, 1.0, 1.0).is_err());
        assert!(Rect::new(-1e12, 1e12, 1.0, 1.0).is_ok());
    }

    #[test]
    fn containment_is_half_open() {
        let r = Rect::new(0.0, 0.0, 10.0, 10.0).unwrap();
        assert!(r.contains(Point { x: 0.0, y: 0.0 }));
        assert!(r.contains(Point { x: 9.99, y: 5.0 }));
        assert!(!r.contains(Point { x: 10.0, y: 5.0 }));
        assert!(!r.contains(Point { x: 5.0, y: 10.0 }));
    }

    #[test]
    fn touching_rects_do_not_intersect() {
        let a = Rect::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let b = Rect::new(10.0, 0.0, 10.0, 10.0).unwrap();
        let c = Rect::new(9.0, 9.0, 10.0, 10.0).unwrap();
        assert!(!a.intersects(&b));
        assert!(a.intersects(&c));
        assert!(c.intersects(&b));
    }

    #[test]
    fn deserialize_validates() {
        let bad = r#"{"origin":{"x":0,"y":0},"width":0,"height":5}"#;
        assert!(serde_json::from_str::<Rect>(bad).is_err());
        let good = r#"{"origin":{"x":1.5,"y":-2},"width":3,"height":5}"#;
        let r: Rect = serde_json::from_str(good).unwrap();
        assert_eq!(r.center(), Point { x: 3.0, y: 0.5 });
    }
}
