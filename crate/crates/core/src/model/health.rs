use serde::{Deserialize, Serialize};

use super::{vocab, Modality, Vocab};
use crate::geometry::{Image, PointCloud, SparseDepthMap};

/// Above this fraction of non-finite values a modality is failed; any
/// non-finite value at or below it makes it degraded.
pub const NON_FINITE_FAIL_RATE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HealthStatus {
    Nominal,
    Degraded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthEvidence {
    pub non_finite_rate: f64,
    /// Population variance of the finite values.
    pub variance: f64,
    /// Longest run of identical consecutive values.
    pub stuck_run: usize,
    pub samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub valid_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityHealth {
    pub modality: Modality,
    pub status: HealthStatus,
    pub evidence: HealthEvidence,
}

impl ModalityHealth {
    pub fn usable(&self) -> bool {
        self.status != HealthStatus::Failed
    }
}

pub enum RawModality<'a> {
    Camera(&'a Image),
    /// Sensor-frame cloud and its projection into the camera.
    Depth(&'a PointCloud, &'a SparseDepthMap),
    Text(&'a str),
}

fn evidence(values: &[f64]) -> HealthEvidence {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let non_finite_rate = if values.is_empty() {
        0.0
    } else {
        (values.len() - finite.len()) as f64 / values.len() as f64
    };
    let variance = if finite.is_empty() {
        0.0
    } else {
        let mean = finite.iter().sum::<f64>() / finite.len() as f64;
        finite.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / finite.len() as f64
    };
    let mut stuck_run = 0;
    let mut run = 0;
    for (i, v) in values.iter().enumerate() {
        run = if i > 0 && values[i - 1] == *v { run + 1 } else { 1 };
        stuck_run = stuck_run.max(run);
    }
    HealthEvidence {
        non_finite_rate,
        variance,
        stuck_run,
        samples: values.len(),
        valid_count: None,
        reason: None,
    }
}

fn classify(modality: Modality, mut ev: HealthEvidence, extra_failure: Option<String>) -> ModalityHealth {
    let stuck = ev.samples > 1 && ev.stuck_run == ev.samples;
    let reason = if let Some(r) = extra_failure {
        Some(r)
    } else if ev.non_finite_rate > NON_FINITE_FAIL_RATE {
        Some(format!("non-finite rate {:.4} above {NON_FINITE_FAIL_RATE}", ev.non_finite_rate))
    } else if stuck {
        Some("stuck-at: every value identical".to_string())
    } else {
        None
    };
    let status = if reason.is_some() {
        HealthStatus::Failed
    } else if ev.non_finite_rate > 0.0 {
        HealthStatus::Degraded
    } else {
        HealthStatus::Nominal
    };
    ev.reason = reason;
    ModalityHealth {
        modality,
        status,
        evidence: ev,
    }
}

/// Rule-based runtime check of one raw modality input.
pub fn health_monitor(input: RawModality<'_>) -> ModalityHealth {
    match input {
        RawModality::Camera(img) => classify(Modality::Camera, evidence(&img.data), None),
        RawModality::Depth(cloud, sparse) => {
            let ranges: Vec<f64> = cloud
                .points
                .iter()
                .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
                .collect();
            let mut ev = evidence(&ranges);
            ev.valid_count = Some(sparse.valid_count);
            let empty = (sparse.valid_count == 0).then(|| "no valid depth cells".to_string());
            classify(Modality::Depth, ev, empty)
        }
        RawModality::Text(text) => {
            let v = Vocab::default();
            let ids: Vec<f64> = text.split_whitespace().map(|w| v.id(&w.to_lowercase()) as f64).collect();
            let ev = evidence(&ids);
            let failure = if ids.is_empty() {
                Some("empty command text".to_string())
            } else if ids.iter().all(|&i| i == vocab::UNK as f64) {
                Some("no known command words".to_string())
            } else {
                None
            };
            classify(Modality::Text, ev, failure)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_image_is_stuck() {
        let img = Image::new(32, 32);
        let h = health_monitor(RawModality::Camera(&img));
        assert_eq!(h.status, HealthStatus::Failed);
        assert_eq!(h.evidence.stuck_run, 32 * 32 * 3);
    }

    #[test]
    fn few_non_finite_pixels_degrade() {
        let mut img = Image::new(10, 10);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i % 7) as f64 / 7.0;
        }
        img.data[0] = f64::NAN;
        img.data[1] = f64::INFINITY;
        img.data[2] = f64::NAN;
        let h = health_monitor(RawModality::Camera(&img));
        assert_eq!(h.status, HealthStatus::Degraded, "{h:?}");
        for v in img.data.iter_mut().take(20) {
            *v = f64::NAN;
        }
        assert_eq!(health_monitor(RawModality::Camera(&img)).status, HealthStatus::Failed);
    }

    #[test]
    fn empty_depth_fails() {
        let cloud = PointCloud::new(vec![]);
        let sparse = SparseDepthMap::empty(4, 4);
        let h = health_monitor(RawModality::Depth(&cloud, &sparse));
        assert_eq!(h.status, HealthStatus::Failed);
        assert_eq!(h.evidence.valid_count, Some(0));
    }

    #[test]
    fn text_rules() {
        let t = |s: &str| health_monitor(RawModality::Text(s)).status;
        assert_eq!(t("go straight road clear"), HealthStatus::Nominal);
        assert_eq!(t(""), HealthStatus::Failed);
        assert_eq!(t("zebra giraffe"), HealthStatus::Failed);
        assert_eq!(t("stop stop stop"), HealthStatus::Failed);
        assert_eq!(t("stop"), HealthStatus::Nominal);
    }
}
