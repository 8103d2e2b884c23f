use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::encoders::embed_text_tokens;
use crate::model::{embed_patches, encode_modality, AvailabilityMask, Modality, ModelConfig, ModelInput};
use crate::tasks::{forward, task_loss};
use crate::scene::Sample;
use crate::tensor::{ParamStore, Tape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralCheck {
    pub pass: bool,
    /// Paths used by more than one branch, with the branches involved.
    pub shared: Vec<SharedParam>,
    pub params_per_branch: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedParam {
    pub path: String,
    pub branches: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalCheck {
    pub masked: Modality,
    pub pass: bool,
    pub samples: usize,
    pub params_checked: usize,
    /// Branch parameters that received a nonzero gradient while masked.
    pub nonzero: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndependenceReport {
    pub structural: StructuralCheck,
    pub functional: Vec<FunctionalCheck>,
    pub pass: bool,
}

/// Parameter paths each encoder branch reads, found by tracing one forward
/// pass per branch on a fresh tape.
pub fn branch_param_usage(
    store: &ParamStore,
    cfg: &ModelConfig,
    input: &ModelInput,
) -> Result<BTreeMap<Modality, BTreeSet<String>>> {
    let mut usage = BTreeMap::new();
    for m in Modality::ALL {
        let mut tape = Tape::new();
        let seq = match m {
            Modality::Camera => embed_patches(&mut tape, store, cfg, m, &input.camera)?,
            Modality::Depth => embed_patches(&mut tape, store, cfg, m, &input.depth)?,
            Modality::Text => match &input.text {
                Some(t) => embed_text_tokens(&mut tape, store, cfg, t)?,
                None => continue,
            },
        };
        encode_modality(&mut tape, store, cfg, seq)?;
        usage.insert(m, tape.param_vars().iter().map(|(p, _)| p.clone()).collect());
    }
    Ok(usage)
}

/// Pairwise disjointness of branch parameter sets.
pub fn structural_check(usage: &BTreeMap<Modality, BTreeSet<String>>) -> StructuralCheck {
    let mut owners: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for (m, paths) in usage {
        for p in paths {
            owners.entry(p).or_default().push(m.name().to_string());
        }
    }
    let shared: Vec<SharedParam> = owners
        .into_iter()
        .filter(|(_, b)| b.len() > 1)
        .map(|(p, branches)| SharedParam {
            path: p.to_string(),
            branches,
        })
        .collect();
    StructuralCheck {
        pass: shared.is_empty(),
        shared,
        params_per_branch: usage.iter().map(|(m, p)| (m.name().to_string(), p.len())).collect(),
    }
}

/// With `masked` excluded from fusion, every parameter under its branch
/// prefix must get a gradient of exactly 0.0 from the full training loss.
pub fn functional_check(
    store: &ParamStore,
    cfg: &ModelConfig,
    probe: &[(ModelInput, Sample)],
    masked: Modality,
) -> Result<FunctionalCheck> {
    let prefix = format!("{}.", masked.prefix());
    let mut nonzero = BTreeSet::new();
    let mut checked = BTreeSet::new();
    for (input, sample) in probe {
        let mut tape = Tape::new();
        let fwd = forward(&mut tape, store, cfg, input, AvailabilityMask::without(masked))?;
        let loss = task_loss(&mut tape, &fwd, sample)?;
        let grads = tape.backward(loss)?;
        for (path, var) in tape.param_vars() {
            if !path.starts_with(&prefix) {
                continue;
            }
            checked.insert(path.clone());
            if grads.wrt(*var).data().iter().any(|&g| g != 0.0) {
                nonzero.insert(path.clone());
            }
        }
    }
    Ok(FunctionalCheck {
        masked,
        pass: nonzero.is_empty() && !checked.is_empty(),
        samples: probe.len(),
        params_checked: checked.len(),
        nonzero: nonzero.into_iter().collect(),
    })
}

pub fn verify_independence(
    store: &ParamStore,
    cfg: &ModelConfig,
    probe: &[(ModelInput, Sample)],
) -> Result<IndependenceReport> {
    let structural = match probe.first() {
        Some((input, _)) => structural_check(&branch_param_usage(store, cfg, input)?),
        None => structural_check(&BTreeMap::new()),
    };
    let functional = Modality::ALL
        .into_iter()
        .map(|m| functional_check(store, cfg, probe, m))
        .collect::<Result<Vec<_>>>()?;
    let pass = structural.pass && functional.iter().all(|f| f.pass);
    Ok(IndependenceReport {
        structural,
        functional,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shared_path_fails_structural_check() {
        let mut usage = BTreeMap::new();
        usage.insert(Modality::Camera, BTreeSet::from(["shared.embed".to_string(), "a".to_string()]));
        usage.insert(Modality::Depth, BTreeSet::from(["shared.embed".to_string(), "b".to_string()]));
        let c = structural_check(&usage);
        assert!(!c.pass);
        assert_eq!(c.shared.len(), 1);
        assert_eq!(c.shared[0].branches, vec!["camera", "depth"]);
    }
}
