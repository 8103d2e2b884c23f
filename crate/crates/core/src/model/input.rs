use super::{health_monitor, patchify, AvailabilityMask, Modality, ModalityHealth, ModelConfig, RawModality, TextTokens, Vocab, DEPTH_SCALE};
use crate::error::{Error, Result};
use crate::geometry::{
    densify_depth, project_point_cloud, translate_depth, Extrinsics, Image, Intrinsics, PointCloud,
    DEFAULT_DENSIFY_K, DEFAULT_DENSIFY_RADIUS,
};
use crate::scene::Sample;
use crate::tensor::Tensor;

/// Encoder-ready tensors plus the health verdicts that gate fusion.
#[derive(Debug, Clone)]
pub struct ModelInput {
    /// `[T, P·P·3]`
    pub camera: Tensor,
    /// `[T, P·P·2]`: scaled depth (0 where missing) and a validity channel.
    pub depth: Tensor,
    /// `None` when the text cannot be tokenized.
    pub text: Option<TextTokens>,
    /// Indexed by [`Modality::index`].
    pub health: [ModalityHealth; 3],
}

impl ModelInput {
    /// Modalities the health monitor did not fail.
    pub fn health_mask(&self) -> AvailabilityMask {
        AvailabilityMask::from_fn(|m| self.health[m.index()].usable())
    }
}

/// Camera patches, the LiDAR → sparse → dense → (mis)registered depth
/// channels, and text tokens. Non-finite camera values and LiDAR points are
/// dropped before encoding; the health monitor has already seen them.
pub fn prepare_input(
    sample: &Sample,
    cfg: &ModelConfig,
    intr: &Intrinsics,
    extr: &Extrinsics,
) -> Result<ModelInput> {
    let raw = SensorFrame {
        rgb: &sample.rgb,
        cloud: &sample.cloud,
        text: &sample.text,
        depth_shift: sample.depth_misregistration,
    };
    prepare_frame(&raw, cfg, intr, extr)
}

/// Raw readings of one time step, as a sensor rig would deliver them.
pub struct SensorFrame<'a> {
    pub rgb: &'a Image,
    pub cloud: &'a PointCloud,
    pub text: &'a str,
    /// Registration offset in pixels applied to the projected depth.
    pub depth_shift: (i32, i32),
}

pub fn prepare_frame(
    sample: &SensorFrame<'_>,
    cfg: &ModelConfig,
    intr: &Intrinsics,
    extr: &Extrinsics,
) -> Result<ModelInput> {
    let n = cfg.image_size;
    if sample.rgb.width != n || sample.rgb.height != n || intr.width != n || intr.height != n {
        return Err(Error::Dimension(format!(
            "model expects {n}x{n} frames, got rgb {}x{} and camera {}x{}",
            sample.rgb.width, sample.rgb.height, intr.width, intr.height
        )));
    }
    let cam_health = health_monitor(RawModality::Camera(sample.rgb));
    let pixels: Vec<f64> = sample
        .rgb
        .data
        .iter()
        .map(|&v| if v.is_finite() { v } else { 0.0 })
        .collect();
    let camera = patchify(&pixels, n, n, 3, cfg.patch)?;

    let finite = PointCloud::new(
        sample
            .cloud
            .points
            .iter()
            .copied()
            .filter(|p| p.iter().all(|v| v.is_finite()))
            .collect(),
    );
    let sparse = project_point_cloud(&finite, intr, extr)?;
    let depth_health = health_monitor(RawModality::Depth(sample.cloud, &sparse));
    let dense = densify_depth(&sparse, DEFAULT_DENSIFY_RADIUS, DEFAULT_DENSIFY_K)?;
    let (dx, dy) = sample.depth_shift;
    let dense = translate_depth(&dense, dx, dy);
    let mut channels = Vec::with_capacity(n * n * 2);
    for &v in &dense.depth {
        if v.is_finite() {
            channels.extend([v / DEPTH_SCALE, 1.0]);
        } else {
            channels.extend([0.0, 0.0]);
        }
    }
    let depth = patchify(&channels, n, n, 2, cfg.patch)?;

    let text_health = health_monitor(RawModality::Text(sample.text));
    let text = Vocab::default().tokenize(sample.text, cfg.text_len).ok();
    Ok(ModelInput {
        camera,
        depth,
        text,
        health: [cam_health, depth_health, text_health],
    })
}

impl ModelInput {
    pub fn modality_health(&self, m: Modality) -> &ModalityHealth {
        &self.health[m.index()]
    }
}
