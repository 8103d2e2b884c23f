use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AvailabilityMask, Modality};
use crate::rng::Rng;
use crate::scene::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    Blackout,
    GaussianNoise,
    StuckAt,
    MiscalibrationShift,
    PartialDropout,
}

impl FaultKind {
    pub fn name(self) -> &'static str {
        match self {
            FaultKind::Blackout => "blackout",
            FaultKind::GaussianNoise => "gaussian_noise",
            FaultKind::StuckAt => "stuck_at",
            FaultKind::MiscalibrationShift => "miscalibration_shift",
            FaultKind::PartialDropout => "partial_dropout",
        }
    }
}

/// `magnitude` is the noise σ, the stuck-at value, the shift in pixels, or
/// the dropout fraction depending on `kind`; blackout ignores it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub modality: Modality,
    pub kind: FaultKind,
    #[serde(default)]
    pub magnitude: f64,
    #[serde(default)]
    pub seed: u64,
}

impl FaultSpec {
    pub fn new(modality: Modality, kind: FaultKind, magnitude: f64) -> Self {
        Self {
            modality,
            kind,
            magnitude,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |why: &str| {
            Err(Error::InvalidFault(format!(
                "{} on {}: {why}",
                self.kind.name(),
                self.modality.name()
            )))
        };
        if !self.magnitude.is_finite() || self.magnitude < 0.0 {
            return bad("magnitude must be finite and >= 0");
        }
        use FaultKind::*;
        match (self.modality, self.kind) {
            (_, Blackout | StuckAt) => Ok(()),
            (Modality::Camera | Modality::Depth, GaussianNoise) => Ok(()),
            (Modality::Depth, MiscalibrationShift) => Ok(()),
            (Modality::Depth, PartialDropout) if self.magnitude <= 1.0 => Ok(()),
            (Modality::Depth, PartialDropout) => bad("dropout fraction must be <= 1"),
            (_, MiscalibrationShift) => bad("miscalibration applies only to the depth path"),
            (_, PartialDropout) => bad("partial dropout applies only to LiDAR points"),
            (Modality::Text, GaussianNoise) => bad("text has no continuous values to perturb"),
        }
    }
}

/// Returns a corrupted copy of `sample`. Random faults draw from a stream
/// keyed by `(spec.seed, sample.id)`.
///
/// * blackout: camera pixels and LiDAR points become zeros, text becomes empty
/// * gaussian_noise: camera `+σ·N(0,1)` per value; LiDAR `+σ·N(0,1)` along each ray
/// * stuck_at: every camera value / LiDAR range equals `magnitude`; text repeats its first word
/// * miscalibration_shift: depth lands `round(magnitude)` pixels right of where it belongs
/// * partial_dropout: exactly `round(fraction·n)` LiDAR points removed uniformly
pub fn inject_fault(sample: &Sample, spec: &FaultSpec) -> Result<Sample> {
    spec.validate()?;
    let mut out = sample.clone();
    let mut rng = Rng::derive(spec.seed, &format!("fault.{}.{}", spec.modality.name(), sample.id));
    let mag = spec.magnitude;
    match (spec.modality, spec.kind) {
        (Modality::Camera, FaultKind::Blackout) => out.rgb.data.fill(0.0),
        (Modality::Camera, FaultKind::StuckAt) => out.rgb.data.fill(mag),
        (Modality::Camera, FaultKind::GaussianNoise) => {
            for v in &mut out.rgb.data {
                *v += mag * rng.normal();
            }
        }
        (Modality::Depth, FaultKind::Blackout) => {
            out.cloud.points.fill([0.0; 3]);
        }
        (Modality::Depth, FaultKind::StuckAt) => {
            for p in &mut out.cloud.points {
                let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                if r > 0.0 {
                    *p = p.map(|c| c / r * mag);
                }
            }
        }
        (Modality::Depth, FaultKind::GaussianNoise) => {
            let mut kept = Vec::with_capacity(out.cloud.points.len());
            let mut kept_intensity = Vec::new();
            for (i, p) in out.cloud.points.iter().enumerate() {
                let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                let dr = mag * rng.normal();
                if r + dr <= 0.0 {
                    continue;
                }
                kept.push(if r > 0.0 { p.map(|c| c + dr * c / r) } else { *p });
                if let Some(int) = &out.cloud.intensity {
                    kept_intensity.push(int[i]);
                }
            }
            out.cloud.points = kept;
            if out.cloud.intensity.is_some() {
                out.cloud.intensity = Some(kept_intensity);
            }
        }
        (Modality::Depth, FaultKind::MiscalibrationShift) => {
            out.depth_misregistration.0 += mag.round() as i32;
        }
        (Modality::Depth, FaultKind::PartialDropout) => {
            let n = out.cloud.points.len();
            let remove = ((mag * n as f64).round() as usize).min(n);
            let mut order: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut order);
            let mut drop = vec![false; n];
            for &i in &order[..remove] {
                drop[i] = true;
            }
            out.cloud.points = out.cloud.points.iter().zip(&drop).filter(|(_, &d)| !d).map(|(p, _)| *p).collect();
            if let Some(int) = &out.cloud.intensity {
                out.cloud.intensity = Some(int.iter().zip(&drop).filter(|(_, &d)| !d).map(|(v, _)| *v).collect());
            }
        }
        (Modality::Text, FaultKind::Blackout) => out.text.clear(),
        (Modality::Text, FaultKind::StuckAt) => {
            let words: Vec<&str> = sample.text.split_whitespace().collect();
            if let Some(first) = words.first() {
                out.text = vec![*first; words.len()].join(" ");
            }
        }
        _ => unreachable!("rejected by validate"),
    }
    Ok(out)
}

/// A named evaluation condition: faults applied to every sample, optionally
/// combined with a forced availability mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<AvailabilityMask>,
}

impl Scenario {
    pub fn nominal() -> Self {
        Self {
            name: "nominal".into(),
            faults: vec![],
            mask: None,
        }
    }

    pub fn fault(name: &str, spec: FaultSpec) -> Self {
        Self {
            name: name.into(),
            faults: vec![spec],
            mask: None,
        }
    }

    pub fn apply(&self, sample: &Sample) -> Result<Sample> {
        let mut s = sample.clone();
        for f in &self.faults {
            s = inject_fault(&s, f)?;
        }
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.faults.iter().try_for_each(FaultSpec::validate)
    }
}

/// Nominal plus the five single-modality fault scenarios.
pub fn default_scenarios() -> Vec<Scenario> {
    vec![
        Scenario::nominal(),
        Scenario::fault("camera_blackout", FaultSpec::new(Modality::Camera, FaultKind::Blackout, 0.0)),
        Scenario::fault("depth_blackout", FaultSpec::new(Modality::Depth, FaultKind::Blackout, 0.0)),
        Scenario::fault("text_blackout", FaultSpec::new(Modality::Text, FaultKind::Blackout, 0.0)),
        Scenario::fault("camera_noise", FaultSpec::new(Modality::Camera, FaultKind::GaussianNoise, 0.5)),
        Scenario::fault(
            "depth_miscalibration",
            FaultSpec::new(Modality::Depth, FaultKind::MiscalibrationShift, 2.0),
        ),
    ]
}

pub fn triple_blackout() -> Scenario {
    Scenario {
        name: "all_blackout".into(),
        faults: Modality::ALL
            .into_iter()
            .map(|m| FaultSpec::new(m, FaultKind::Blackout, 0.0))
            .collect(),
        mask: None,
    }
}
