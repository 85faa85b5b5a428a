use cab_core::map::DRIVEABLE;
use cab_core::{Pose2, SemanticMap};
use serde::{Deserialize, Serialize};

use crate::world::World;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RasterConfig {
    pub size: usize,
    pub resolution: f64,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self { size: 64, resolution: 1.0 }
    }
}

/// Agent-centred, heading-aligned raster of `world` seen from `pose`. A cell
/// is set iff its centre lies inside a polygon of the layer.
pub fn rasterize(world: &World, pose: Pose2, cfg: &RasterConfig) -> SemanticMap {
    let mut map = SemanticMap::agent_centered(cfg.size, cfg.size, cfg.resolution);
    let layers = [(DRIVEABLE, &world.driveable), (1, &world.crosswalks), (2, &world.walkways)];
    for r in 0..cfg.size {
        for c in 0..cfg.size {
            let p = pose.point_to_world(map.cell_center(r, c));
            for (layer, polys) in layers {
                if polys.iter().any(|poly| poly.contains(p)) {
                    map.set(layer, r, c, 1);
                }
            }
        }
    }
    map
}
