use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{ModelError, VideoMeta};

/// Axis-aligned box in pixel coordinates of the source frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelBox {
    pub left: f64,
    pub top: f64,
    pub right: f64,
    pub bottom: f64,
}

impl PixelBox {
    pub fn new(left: f64, top: f64, right: f64, bottom: f64) -> Self {
        Self {
            left,
            top,
            right,
            bottom,
        }
    }

    pub fn width(&self) -> f64 {
        self.right - self.left
    }

    pub fn height(&self) -> f64 {
        self.bottom - self.top
    }

    /// Scales the box about its center by `factor` in each dimension, then
    /// clamps it to a `width`×`height` frame.
    pub fn expand_about_center(&self, factor: f64, width: f64, height: f64) -> PixelBox {
        let cx = (self.left + self.right) / 2.0;
        let cy = (self.top + self.bottom) / 2.0;
        let hw = self.width() * factor / 2.0;
        let hh = self.height() * factor / 2.0;
        PixelBox {
            left: (cx - hw).clamp(0.0, width),
            top: (cy - hh).clamp(0.0, height),
            right: (cx + hw).clamp(0.0, width),
            bottom: (cy + hh).clamp(0.0, height),
        }
    }
}

/// Box in `[0,1]²` frame-relative coordinates, `[left, top, right, bottom]`.
///
/// Serialized as a four-element array. Degenerate (zero-area) boxes are
/// allowed since detectors emit them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedBBox {
    left: f64,
    top: f64,
    right: f64,
    bottom: f64,
}

/// Slack tolerated on deserialization before a coordinate is rejected.
const COORD_SLACK: f64 = 1e-9;

impl NormalizedBBox {
    pub fn new(left: f64, top: f64, right: f64, bottom: f64) -> Result<Self, ModelError> {
        let coords = [left, top, right, bottom];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(ModelError::InvalidBox(format!("non-finite coordinate in {coords:?}")));
        }
        if coords.iter().any(|&c| !(-COORD_SLACK..=1.0 + COORD_SLACK).contains(&c)) {
            return Err(ModelError::InvalidBox(format!(
                "coordinate outside [0,1] in {coords:?}"
            )));
        }
        if left > right + COORD_SLACK || top > bottom + COORD_SLACK {
            return Err(ModelError::InvalidBox(format!("inverted box {coords:?}")));
        }
        let c = |v: f64| v.clamp(0.0, 1.0);
        let (left, top) = (c(left), c(top));
        Ok(Self {
            left,
            top,
            right: c(right).max(left),
            bottom: c(bottom).max(top),
        })
    }

    pub fn full_frame() -> Self {
        Self {
            left: 0.0,
            top: 0.0,
            right: 1.0,
            bottom: 1.0,
        }
    }

    pub fn left(&self) -> f64 {
        self.left
    }
    pub fn top(&self) -> f64 {
        self.top
    }
    pub fn right(&self) -> f64 {
        self.right
    }
    pub fn bottom(&self) -> f64 {
        self.bottom
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.left, self.top, self.right, self.bottom]
    }

    pub fn width(&self) -> f64 {
        self.right - self.left
    }

    pub fn height(&self) -> f64 {
        self.bottom - self.top
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.left + self.right) / 2.0, (self.top + self.bottom) / 2.0)
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.left && x <= self.right && y >= self.top && y <= self.bottom
    }

    /// Returns the same box shifted by `(dx, dy)`, clamped into the frame.
    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        let c = |v: f64| v.clamp(0.0, 1.0);
        Self {
            left: c(self.left + dx),
            top: c(self.top + dy),
            right: c(self.right + dx),
            bottom: c(self.bottom + dy),
        }
    }

    /// Rounds every coordinate to `decimals` places.
    pub fn rounded(&self, decimals: i32) -> Self {
        let scale = 10f64.powi(decimals);
        let r = |v: f64| ((v * scale).round() / scale).clamp(0.0, 1.0);
        Self {
            left: r(self.left),
            top: r(self.top),
            right: r(self.right).max(r(self.left)),
            bottom: r(self.bottom).max(r(self.top)),
        }
    }

    pub fn denormalize(&self, meta: &VideoMeta) -> PixelBox {
        let (w, h) = (meta.width as f64, meta.height as f64);
        PixelBox {
            left: self.left * w,
            top: self.top * h,
            right: self.right * w,
            bottom: self.bottom * h,
        }
    }
}

impl Serialize for NormalizedBBox {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_array().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for NormalizedBBox {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let [l, t, r, b] = <[f64; 4]>::deserialize(deserializer)?;
        NormalizedBBox::new(l, t, r, b).map_err(serde::de::Error::custom)
    }
}

/// Converts a pixel box into frame-relative coordinates.
///
/// Boxes may overhang the frame by at most one pixel (rounding in detector
/// outputs); the overhang is clamped away after division.
pub fn normalize_bbox(px: &PixelBox, meta: &VideoMeta) -> Result<NormalizedBBox, ModelError> {
    let (w, h) = (meta.width as f64, meta.height as f64);
    let coords = [px.left, px.top, px.right, px.bottom];
    if coords.iter().any(|c| !c.is_finite()) {
        return Err(ModelError::InvalidBox(format!("non-finite pixel box {coords:?}")));
    }
    if px.left > px.right || px.top > px.bottom {
        return Err(ModelError::InvalidBox(format!("inverted pixel box {coords:?}")));
    }
    if px.left < -1.0 || px.top < -1.0 || px.right > w + 1.0 || px.bottom > h + 1.0 {
        return Err(ModelError::InvalidBox(format!(
            "pixel box {coords:?} outside {}x{} frame",
            meta.width, meta.height
        )));
    }
    let c = |v: f64| v.clamp(0.0, 1.0);
    NormalizedBBox::new(c(px.left / w), c(px.top / h), c(px.right / w), c(px.bottom / h))
}

/// Intersection over union. Zero whenever the union has zero area, so two
/// identical degenerate boxes also score 0.
pub fn iou(a: &NormalizedBBox, b: &NormalizedBBox) -> f64 {
    let iw = (a.right.min(b.right) - a.left.max(b.left)).max(0.0);
    let ih = (a.bottom.min(b.bottom) - a.top.max(b.top)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}
