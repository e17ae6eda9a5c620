use serde::{Deserialize, Serialize};

use super::PerturbError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionKind {
    Bbox,
    Point,
}

/// A visual-prompt locus in normalized image coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub kind: RegionKind,
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub w: f64,
    #[serde(default)]
    pub h: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl Region {
    pub fn bbox(x: f64, y: f64, w: f64, h: f64) -> Result<Self, PerturbError> {
        let r = Region {
            kind: RegionKind::Bbox,
            x,
            y,
            w,
            h,
            label: None,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn point(x: f64, y: f64) -> Result<Self, PerturbError> {
        let r = Region {
            kind: RegionKind::Point,
            x,
            y,
            w: 0.0,
            h: 0.0,
            label: None,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn validate(&self) -> Result<(), PerturbError> {
        let unit = |v: f64| v.is_finite() && (0.0..=1.0).contains(&v);
        let ok = unit(self.x)
            && unit(self.y)
            && unit(self.w)
            && unit(self.h)
            && self.x + self.w <= 1.0
            && self.y + self.h <= 1.0
            && (self.kind == RegionKind::Bbox || (self.w == 0.0 && self.h == 0.0));
        if ok {
            Ok(())
        } else {
            Err(PerturbError::InvalidRegion(format!("{self:?}")))
        }
    }

    pub fn area(&self) -> f64 {
        match self.kind {
            RegionKind::Bbox => self.w * self.h,
            RegionKind::Point => 0.0,
        }
    }

    /// Closed containment test for a point.
    pub fn contains(&self, px: f64, py: f64) -> bool {
        px >= self.x && px <= self.x + self.w && py >= self.y && py <= self.y + self.h
    }

    /// Stable textual key, used to detect duplicate pool entries.
    pub fn key(&self) -> String {
        format!(
            "{:?}:{}:{}:{}:{}",
            self.kind,
            self.x.to_bits(),
            self.y.to_bits(),
            self.w.to_bits(),
            self.h.to_bits()
        )
    }
}

/// Overlap ratio in `[0, 1]`.
///
/// Box vs box is intersection over union. A point against a box is 1 when
/// the point lies inside the box, else 0. Two points score 1 only when they
/// coincide.
pub fn iou(a: &Region, b: &Region) -> f64 {
    use RegionKind::*;
    match (a.kind, b.kind) {
        (Bbox, Bbox) => {
            let ix = ((a.x + a.w).min(b.x + b.w) - a.x.max(b.x)).max(0.0);
            let iy = ((a.y + a.h).min(b.y + b.h) - a.y.max(b.y)).max(0.0);
            let inter = ix * iy;
            let union = a.area() + b.area() - inter;
            if union <= 0.0 {
                // two degenerate boxes
                if a.x == b.x && a.y == b.y {
                    1.0
                } else {
                    0.0
                }
            } else {
                (inter / union).clamp(0.0, 1.0)
            }
        }
        (Point, Bbox) => f64::from(u8::from(b.contains(a.x, a.y))),
        (Bbox, Point) => f64::from(u8::from(a.contains(b.x, b.y))),
        (Point, Point) => f64::from(u8::from(a.x == b.x && a.y == b.y)),
    }
}
