/// Axis-aligned box in center format `[x, y, w, h]`, normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    /// The box covering the whole image.
    pub const fn full_frame() -> Self {
        Self::new(0.5, 0.5, 1.0, 1.0)
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }

    /// Corners `(x0, y0, x1, y1)`; negative extents are treated as zero.
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        let hw = self.w.max(0.0) / 2.0;
        let hh = self.h.max(0.0) / 2.0;
        (self.x - hw, self.y - hh, self.x + hw, self.y + hh)
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Componentwise `(1 - s) * self + s * other`.
    pub fn lerp(&self, other: &BBox, s: f64) -> BBox {
        let a = self.to_array();
        let b = other.to_array();
        BBox::from_array(std::array::from_fn(|i| (1.0 - s) * a[i] + s * b[i]))
    }
}
