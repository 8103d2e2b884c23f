use serde::{Deserialize, Serialize};

use super::SceneSpec;
use crate::error::{Error, Result};
use crate::geometry::{Extrinsics, PointCloud};

pub const MAX_LIDAR_RAYS: usize = 65536;

/// Regular azimuth × elevation scan grid, in degrees. Azimuth is positive
/// to the right, elevation positive upward, both relative to the sensor's
/// forward (z) axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LidarPattern {
    pub azimuth_min: f64,
    pub azimuth_max: f64,
    pub azimuth_step: f64,
    pub elevation_min: f64,
    pub elevation_max: f64,
    pub elevation_step: f64,
}

impl Default for LidarPattern {
    fn default() -> Self {
        Self {
            azimuth_min: -34.0,
            azimuth_max: 34.0,
            azimuth_step: 2.0,
            elevation_min: -30.0,
            elevation_max: 6.0,
            elevation_step: 2.0,
        }
    }
}

fn axis_count(lo: f64, hi: f64, step: f64) -> usize {
    ((hi - lo) / step + 1e-9).floor() as usize + 1
}

impl LidarPattern {
    pub fn azimuth_count(&self) -> usize {
        axis_count(self.azimuth_min, self.azimuth_max, self.azimuth_step)
    }

    pub fn elevation_count(&self) -> usize {
        axis_count(self.elevation_min, self.elevation_max, self.elevation_step)
    }

    pub fn ray_count(&self) -> usize {
        self.azimuth_count() * self.elevation_count()
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.azimuth_min,
            self.azimuth_max,
            self.azimuth_step,
            self.elevation_min,
            self.elevation_max,
            self.elevation_step,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite || self.azimuth_step <= 0.0 || self.elevation_step <= 0.0 {
            return Err(Error::Input("lidar steps must be finite and > 0".into()));
        }
        if self.azimuth_max < self.azimuth_min || self.elevation_max < self.elevation_min {
            return Err(Error::Input("lidar ranges must be non-empty".into()));
        }
        if self.ray_count() > MAX_LIDAR_RAYS {
            return Err(Error::Input(format!(
                "lidar pattern has {} rays, limit is {MAX_LIDAR_RAYS}",
                self.ray_count()
            )));
        }
        Ok(())
    }

    /// Unit ray directions in the sensor frame, elevation-major.
    pub fn directions(&self) -> Vec<[f64; 3]> {
        let mut dirs = Vec::with_capacity(self.ray_count());
        for ei in 0..self.elevation_count() {
            let el = (self.elevation_min + ei as f64 * self.elevation_step).to_radians();
            for ai in 0..self.azimuth_count() {
                let az = (self.azimuth_min + ai as f64 * self.azimuth_step).to_radians();
                dirs.push([el.cos() * az.sin(), -el.sin(), el.cos() * az.cos()]);
            }
        }
        dirs
    }
}

/// Casts the scan pattern from the sensor origin. Hits are returned in the
/// sensor frame; misses are omitted.
pub fn simulate_lidar(scene: &SceneSpec, pattern: &LidarPattern, extr: &Extrinsics) -> Result<PointCloud> {
    pattern.validate()?;
    let origin = extr.translation;
    let points = pattern
        .directions()
        .into_iter()
        .filter_map(|d| scene.cast(origin, extr.rotate(d)))
        .map(|hit| extr.to_sensor(hit.point))
        .collect();
    Ok(PointCloud::new(points))
}
