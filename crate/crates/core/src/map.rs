use crate::error::CoreError;
use crate::Point2;

pub const LAYER_NAMES: [&str; 3] = ["driveable", "crosswalk", "walkway"];
pub const DRIVEABLE: usize = 0;

/// Binary bird-eye-view raster, one `h × w` plane per semantic layer.
///
/// Cell `(r, c)` covers `[c·res, (c+1)·res) × [r·res, (r+1)·res)` in raster
/// coordinates, whose origin sits at `origin` and whose x-axis is rotated by
/// `rotation` relative to the containing frame. Rasters produced in the agent
/// frame have `rotation == 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticMap {
    pub h: usize,
    pub w: usize,
    pub resolution: f64,
    pub origin: Point2,
    pub rotation: f64,
    pub layer_names: Vec<String>,
    /// Layer-major, then row-major.
    pub data: Vec<u8>,
}

impl SemanticMap {
    pub fn zeros(h: usize, w: usize, resolution: f64, origin: Point2) -> Self {
        Self {
            h,
            w,
            resolution,
            origin,
            rotation: 0.0,
            layer_names: LAYER_NAMES.iter().map(|s| s.to_string()).collect(),
            data: vec![0; LAYER_NAMES.len() * h * w],
        }
    }

    /// All-zero raster centred on the agent.
    pub fn agent_centered(h: usize, w: usize, resolution: f64) -> Self {
        let origin = [-(w as f64) * resolution / 2.0, -(h as f64) * resolution / 2.0];
        Self::zeros(h, w, resolution, origin)
    }

    pub fn from_data(
        h: usize,
        w: usize,
        resolution: f64,
        origin: Point2,
        data: Vec<u8>,
    ) -> Result<Self, CoreError> {
        let expected = LAYER_NAMES.len() * h * w;
        if data.len() != expected {
            return Err(CoreError::MapSize { got: data.len(), expected });
        }
        let mut m = Self::zeros(h, w, resolution, origin);
        m.data = data;
        Ok(m)
    }

    pub fn n_layers(&self) -> usize {
        self.layer_names.len()
    }

    #[inline]
    pub fn index(&self, layer: usize, r: usize, c: usize) -> usize {
        (layer * self.h + r) * self.w + c
    }

    pub fn get(&self, layer: usize, r: usize, c: usize) -> u8 {
        self.data[self.index(layer, r, c)]
    }

    pub fn set(&mut self, layer: usize, r: usize, c: usize, v: u8) {
        let i = self.index(layer, r, c);
        self.data[i] = v;
    }

    pub fn layer(&self, layer: usize) -> &[u8] {
        let n = self.h * self.w;
        &self.data[layer * n..(layer + 1) * n]
    }

    /// Raster-frame coordinates of a point given in the containing frame.
    fn to_raster(&self, p: Point2) -> Point2 {
        let dx = p[0] - self.origin[0];
        let dy = p[1] - self.origin[1];
        if self.rotation == 0.0 {
            return [dx, dy];
        }
        let (s, c) = self.rotation.sin_cos();
        [c * dx + s * dy, -s * dx + c * dy]
    }

    /// Cell containing `p`, by `floor(coordinate / resolution)`, or `None`
    /// outside the raster.
    pub fn cell_of(&self, p: Point2) -> Option<(usize, usize)> {
        let q = self.to_raster(p);
        let c = (q[0] / self.resolution).floor();
        let r = (q[1] / self.resolution).floor();
        if !c.is_finite() || !r.is_finite() || c < 0.0 || r < 0.0 {
            return None;
        }
        let (r, c) = (r as usize, c as usize);
        (r < self.h && c < self.w).then_some((r, c))
    }

    /// Centre of a cell in the containing frame.
    pub fn cell_center(&self, r: usize, c: usize) -> Point2 {
        let qx = (c as f64 + 0.5) * self.resolution;
        let qy = (r as f64 + 0.5) * self.resolution;
        let (s, co) = self.rotation.sin_cos();
        [
            self.origin[0] + co * qx - s * qy,
            self.origin[1] + s * qx + co * qy,
        ]
    }

    /// Whether `p` lies in a driveable cell; points outside the raster are not.
    pub fn is_driveable(&self, p: Point2) -> bool {
        match self.cell_of(p) {
            Some((r, c)) => self.get(DRIVEABLE, r, c) == 1,
            None => false,
        }
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v <= 1)
    }

    pub fn is_empty_raster(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_boundaries_follow_floor() {
        let m = SemanticMap::agent_centered(4, 4, 1.0);
        // origin (-2,-2): x = 0.0 is the left edge of column 2
        assert_eq!(m.cell_of([0.0, 0.0]), Some((2, 2)));
        assert_eq!(m.cell_of([-0.0001, 0.0]), Some((2, 1)));
        assert_eq!(m.cell_of([-2.0, -2.0]), Some((0, 0)));
        assert_eq!(m.cell_of([2.0, 0.0]), None);
        assert_eq!(m.cell_of([1.999, 1.999]), Some((3, 3)));
    }

    #[test]
    fn rotated_raster_round_trips_centers() {
        let mut m = SemanticMap::zeros(8, 8, 0.5, [1.0, -3.0]);
        m.rotation = 0.7;
        for r in 0..8 {
            for c in 0..8 {
                assert_eq!(m.cell_of(m.cell_center(r, c)), Some((r, c)));
            }
        }
    }
}
