use serde::{Deserialize, Serialize};

use super::{FaultKind, FaultSpec, IndependenceReport, Scenario};
use crate::error::Result;
use crate::model::{AvailabilityMask, Modality, ModelConfig};
use crate::scene::Sample;
use crate::tasks::{evaluate, Metrics, Rig};
use crate::tensor::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ScenarioStatus {
    /// Every sample produced decoder output.
    Operational,
    /// Fusion had nothing to work with and signalled the defined error.
    FailSilent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub status: ScenarioStatus,
    /// Scenario accuracy over nominal accuracy; `null` if nominal is 0.
    pub retained_ratio: Option<f64>,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationReport {
    pub nominal: Metrics,
    pub scenarios: Vec<ScenarioResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub independence: Option<IndependenceReport>,
}

/// Evaluates the nominal baseline and then each scenario. Single-modality
/// failures never raise; a scenario in which fusion receives no modality
/// is reported `FAIL_SILENT` with the fusion error captured.
pub fn fail_operational_eval(
    store: &ParamStore,
    cfg: &ModelConfig,
    rig: &Rig,
    test: &[Sample],
    scenarios: &[Scenario],
) -> Result<DegradationReport> {
    let nominal = evaluate(store, cfg, rig, test, &Scenario::nominal())?;
    let mut results = Vec::with_capacity(scenarios.len());
    for sc in scenarios {
        let metrics = if *sc == Scenario::nominal() {
            nominal.clone()
        } else {
            evaluate(store, cfg, rig, test, sc)?
        };
        let retained_ratio =
            (nominal.command_accuracy > 0.0).then(|| metrics.command_accuracy / nominal.command_accuracy);
        let status = if metrics.fail_silent > 0 {
            ScenarioStatus::FailSilent
        } else {
            ScenarioStatus::Operational
        };
        results.push(ScenarioResult {
            status,
            retained_ratio,
            metrics,
        });
    }
    Ok(DegradationReport {
        nominal,
        scenarios: results,
        independence: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrRow {
    pub sigma: f64,
    /// All modalities present, camera and LiDAR both noisy.
    pub fused_accuracy: f64,
    /// Only the (noisy) camera is fused.
    pub camera_only_accuracy: f64,
}

fn noise(sigma: f64, modalities: &[Modality]) -> Vec<FaultSpec> {
    if sigma == 0.0 {
        return vec![];
    }
    modalities
        .iter()
        .map(|&m| FaultSpec::new(m, FaultKind::GaussianNoise, sigma))
        .collect()
}

/// Accuracy against additive noise level for fused versus camera-only
/// operation; one row per σ, in the given order.
pub fn snr_enrichment_eval(
    store: &ParamStore,
    cfg: &ModelConfig,
    rig: &Rig,
    test: &[Sample],
    sigmas: &[f64],
) -> Result<Vec<SnrRow>> {
    sigmas
        .iter()
        .map(|&sigma| {
            let fused = Scenario {
                name: format!("snr_fused_{sigma}"),
                faults: noise(sigma, &[Modality::Camera, Modality::Depth]),
                mask: None,
            };
            let camera = Scenario {
                name: format!("snr_camera_{sigma}"),
                faults: noise(sigma, &[Modality::Camera]),
                mask: Some(AvailabilityMask::only(Modality::Camera)),
            };
            Ok(SnrRow {
                sigma,
                fused_accuracy: evaluate(store, cfg, rig, test, &fused)?.command_accuracy,
                camera_only_accuracy: evaluate(store, cfg, rig, test, &camera)?.command_accuracy,
            })
        })
        .collect()
}
