//! Pixel-space geometry: oriented quadrilaterals and axis-aligned boxes.
//!
//! All coordinates are `f64` in image space with the origin at the top-left
//! corner. Rounding to integers happens only where pixels are touched.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Four-vertex oriented box, the native DOTA annotation geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadBox {
    points: [(f64, f64); 4],
}

impl QuadBox {
    /// Builds a quad, rejecting non-finite or negative coordinates and the
    /// case where all four vertices coincide.
    pub fn new(points: [(f64, f64); 4]) -> Result<Self> {
        for &(x, y) in &points {
            if !x.is_finite() || !y.is_finite() {
                return Err(Error::DegenerateGeometry(format!(
                    "non-finite vertex ({x}, {y})"
                )));
            }
            if x < 0.0 || y < 0.0 {
                return Err(Error::DegenerateGeometry(format!(
                    "negative vertex ({x}, {y})"
                )));
            }
        }
        if points.iter().all(|p| *p == points[0]) {
            return Err(Error::DegenerateGeometry(
                "all four vertices are identical".into(),
            ));
        }
        Ok(Self { points })
    }

    /// Parses the flat `x1 y1 x2 y2 x3 y3 x4 y4` layout.
    pub fn from_flat(c: [f64; 8]) -> Result<Self> {
        Self::new([(c[0], c[1]), (c[2], c[3]), (c[4], c[5]), (c[6], c[7])])
    }

    /// Corner quad of an axis-aligned box, clockwise from the top-left.
    pub fn from_hbox(b: &HBox) -> Self {
        Self {
            points: [
                (b.xmin, b.ymin),
                (b.xmax, b.ymin),
                (b.xmax, b.ymax),
                (b.xmin, b.ymax),
            ],
        }
    }

    pub fn points(&self) -> &[(f64, f64); 4] {
        &self.points
    }

    pub fn to_flat(&self) -> [f64; 8] {
        let p = &self.points;
        [
            p[0].0, p[0].1, p[1].0, p[1].1, p[2].0, p[2].1, p[3].0, p[3].1,
        ]
    }

    /// Clamps every vertex into `[0, width] x [0, height]`.
    pub fn clamped(&self, width: f64, height: f64) -> Self {
        let mut points = self.points;
        for p in &mut points {
            p.0 = p.0.clamp(0.0, width);
            p.1 = p.1.clamp(0.0, height);
        }
        Self { points }
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        let mut points = self.points;
        for p in &mut points {
            p.0 += dx;
            p.1 += dy;
        }
        Self { points }
    }
}

/// Axis-aligned box with strictly positive area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HBox {
    xmin: f64,
    ymin: f64,
    xmax: f64,
    ymax: f64,
}

impl HBox {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self> {
        let finite = [xmin, ymin, xmax, ymax].iter().all(|v| v.is_finite());
        if !finite || xmin >= xmax || ymin >= ymax {
            return Err(Error::DegenerateGeometry(format!(
                "box ({xmin}, {ymin}, {xmax}, {ymax}) has no area"
            )));
        }
        Ok(Self {
            xmin,
            ymin,
            xmax,
            ymax,
        })
    }

    /// Box from a top-left corner and a size.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(x, y, x + w, y + h)
    }

    #[inline]
    pub fn xmin(&self) -> f64 {
        self.xmin
    }

    #[inline]
    pub fn ymin(&self) -> f64 {
        self.ymin
    }

    #[inline]
    pub fn xmax(&self) -> f64 {
        self.xmax
    }

    #[inline]
    pub fn ymax(&self) -> f64 {
        self.ymax
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    #[inline]
    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Width over height.
    #[inline]
    pub fn aspect_ratio(&self) -> f64 {
        self.width() / self.height()
    }

    pub fn contains(&self, other: &HBox) -> bool {
        other.xmin >= self.xmin
            && other.ymin >= self.ymin
            && other.xmax <= self.xmax
            && other.ymax <= self.ymax
    }

    /// Intersection rectangle, `None` when empty or zero-width.
    pub fn intersection(&self, other: &HBox) -> Option<HBox> {
        let xmin = self.xmin.max(other.xmin);
        let ymin = self.ymin.max(other.ymin);
        let xmax = self.xmax.min(other.xmax);
        let ymax = self.ymax.min(other.ymax);
        HBox::new(xmin, ymin, xmax, ymax).ok()
    }

    pub fn intersection_area(&self, other: &HBox) -> f64 {
        let w = self.xmax.min(other.xmax) - self.xmin.max(other.xmin);
        let h = self.ymax.min(other.ymax) - self.ymin.max(other.ymin);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn translated(&self, dx: f64, dy: f64) -> HBox {
        HBox {
            xmin: self.xmin + dx,
            ymin: self.ymin + dy,
            xmax: self.xmax + dx,
            ymax: self.ymax + dy,
        }
    }
}

/// Axis-aligned hull of a quad.
pub fn quad_to_hbox(q: &QuadBox) -> Result<HBox> {
    let pts = q.points();
    let (mut xmin, mut ymin) = (f64::INFINITY, f64::INFINITY);
    let (mut xmax, mut ymax) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        xmin = xmin.min(x);
        ymin = ymin.min(y);
        xmax = xmax.max(x);
        ymax = ymax.max(y);
    }
    HBox::new(xmin, ymin, xmax, ymax)
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou(a: &HBox, b: &HBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Result of clipping a box against a window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clipped {
    pub clipped: HBox,
    /// Intersection area over the original box area, in `(0, 1]`.
    pub visible_fraction: f64,
}

/// Clips `b` to `window`. Returns `None` when nothing with positive area
/// remains.
pub fn clip_box(b: &HBox, window: &HBox) -> Option<Clipped> {
    let clipped = b.intersection(window)?;
    let visible_fraction = if window.contains(b) {
        1.0
    } else {
        // a partially visible box never reports full visibility
        (clipped.area() / b.area()).min(1.0 - f64::EPSILON / 2.0)
    };
    Some(Clipped {
        clipped,
        visible_fraction,
    })
}
