//! Forward pass, losses, training with modality dropout, and evaluation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Extrinsics, Intrinsics};
use crate::model::{
    check_params, decode_command, decode_segmentation, embed_patches, encode_modality, fuse,
    init_params, prepare_input, AvailabilityMask, FusedLatent, Modality, ModelConfig, ModelInput,
    TokenSequence,
};
use crate::model::encoders::embed_text_tokens;
use crate::rng::Rng;
use crate::safety::Scenario;
use crate::scene::{CommandLabel, DatasetConfig, Sample};
use crate::tensor::{adam_step, AdamHyper, AdamState, ParamStore, Tape, Tensor, Var};

/// Weight of the mean segmentation cross-entropy in the training loss.
pub const SEG_LOSS_WEIGHT: f64 = 0.5;
pub const MAX_P_DROP: f64 = 0.5;

/// Camera intrinsics and LiDAR-to-camera extrinsics used to build inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Rig {
    pub intrinsics: Intrinsics,
    pub extrinsics: Extrinsics,
}

impl Rig {
    pub fn from_dataset(cfg: &DatasetConfig) -> Self {
        Self {
            intrinsics: cfg.intrinsics,
            extrinsics: cfg.lidar_extrinsics,
        }
    }

    pub fn prepare(&self, sample: &Sample, cfg: &ModelConfig) -> Result<ModelInput> {
        prepare_input(sample, cfg, &self.intrinsics, &self.extrinsics)
    }
}

pub struct Forward {
    pub latents: Vec<TokenSequence>,
    pub fused: FusedLatent,
    /// `[4]`
    pub command: Var,
    /// `[64, 4]` in grid order.
    pub seg: Var,
}

/// Runs every encoder whose input can be encoded. Each latent's
/// `available` flag carries the health monitor's verdict; text that cannot
/// be tokenized becomes masked zero tokens.
pub fn encode_all(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &ModelConfig,
    input: &ModelInput,
) -> Result<Vec<TokenSequence>> {
    let health = input.health_mask();
    let cam = embed_patches(tape, store, cfg, Modality::Camera, &input.camera)?;
    let cam = encode_modality(tape, store, cfg, cam)?;
    let depth = embed_patches(tape, store, cfg, Modality::Depth, &input.depth)?;
    let depth = encode_modality(tape, store, cfg, depth)?;
    let text = match &input.text {
        Some(tokens) => {
            let t = embed_text_tokens(tape, store, cfg, tokens)?;
            encode_modality(tape, store, cfg, t)?
        }
        None => TokenSequence {
            modality: Modality::Text,
            tokens: tape.constant(Tensor::zeros(&[cfg.text_len, cfg.d])),
            positions: (0..cfg.text_len).collect(),
            keep: vec![false; cfg.text_len],
            available: false,
        },
    };
    Ok([cam, depth, text]
        .into_iter()
        .map(|l| {
            let ok = health.get(l.modality);
            l.with_available(ok)
        })
        .collect())
}

/// Encode, fuse under `mask` (intersected with health), decode.
pub fn forward(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &ModelConfig,
    input: &ModelInput,
    mask: AvailabilityMask,
) -> Result<Forward> {
    let latents = encode_all(tape, store, cfg, input)?;
    let fused = fuse(tape, store, cfg, &latents, mask)?;
    let command = decode_command(tape, store, &fused)?;
    let seg = decode_segmentation(tape, store, cfg, &fused)?;
    Ok(Forward {
        latents,
        fused,
        command,
        seg,
    })
}

/// Max abs difference between fusing with `m` masked and fusing with `m`
/// left out of the sequence, over the CLS token, every remaining token and
/// both decoder outputs.
pub fn mask_equivalence_deviation(
    store: &ParamStore,
    cfg: &ModelConfig,
    input: &ModelInput,
    m: Modality,
) -> Result<f64> {
    let mut tape = Tape::new();
    let latents = encode_all(&mut tape, store, cfg, input)?;
    let masked = fuse(&mut tape, store, cfg, &latents, AvailabilityMask::without(m))?;
    let kept: Vec<TokenSequence> = latents.iter().filter(|l| l.modality != m).cloned().collect();
    let removed = fuse(&mut tape, store, cfg, &kept, AvailabilityMask::all())?;
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let (ta, tb) = (tape.value(masked.tokens), tape.value(removed.tokens));
    let mut dev = diff(ta.row(0), tb.row(0));
    for (modality, span) in &removed.spans {
        let other = masked.span(*modality).expect("same modality present");
        for (i, j) in span.clone().zip(other) {
            dev = dev.max(diff(tb.row(i), ta.row(j)));
        }
    }
    for (a, b) in masked.arbitration.iter().zip(removed.arbitration) {
        dev = dev.max((a - b).abs());
    }
    let cmd_a = decode_command(&mut tape, store, &masked)?;
    let cmd_b = decode_command(&mut tape, store, &removed)?;
    let seg_a = decode_segmentation(&mut tape, store, cfg, &masked)?;
    let seg_b = decode_segmentation(&mut tape, store, cfg, &removed)?;
    dev = dev.max(diff(tape.value(cmd_a).data(), tape.value(cmd_b).data()));
    dev = dev.max(diff(tape.value(seg_a).data(), tape.value(seg_b).data()));
    Ok(dev)
}

/// `CE(command) + 0.5 · mean CE(segmentation cells)`.
pub fn task_loss(tape: &mut Tape, fwd: &Forward, sample: &Sample) -> Result<Var> {
    let cmd = tape.nll(fwd.command, &[sample.label.index()])?;
    let labels: Vec<usize> = sample.seg.iter().map(|&c| c as usize).collect();
    let seg = tape.nll(fwd.seg, &labels)?;
    let seg = tape.scale(seg, SEG_LOSS_WEIGHT);
    tape.add(cmd, seg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub p_drop: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            lr: 1e-3,
            p_drop: 0.3,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=MAX_P_DROP).contains(&self.p_drop) {
            return Err(Error::Config(format!("p_drop {} outside [0, {MAX_P_DROP}]", self.p_drop)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    /// Mean loss of every batch, in order.
    pub loss_curve: Vec<f64>,
    pub epoch_loss: Vec<f64>,
    /// Which modality each batch masked, if any.
    pub dropped: Vec<Option<Modality>>,
}

pub struct TrainOutput {
    pub params: ParamStore,
    pub metrics: TrainMetrics,
}

/// Mini-batch Adam on `train`. Each batch masks one uniformly chosen
/// modality with probability `p_drop`; gradients are averaged over the batch.
pub fn train(
    train: &[Sample],
    rig: &Rig,
    model: &ModelConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainOutput> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Input("training split is empty".into()));
    }
    let mut params = init_params(model)?;
    let inputs: Vec<ModelInput> = train.iter().map(|s| rig.prepare(s, model)).collect::<Result<_>>()?;
    let hyper = AdamHyper {
        lr: cfg.lr,
        ..AdamHyper::default()
    };
    let mut adam = AdamState::new();
    let mut metrics = TrainMetrics {
        loss_curve: vec![],
        epoch_loss: vec![],
        dropped: vec![],
    };
    let mut drop_rng = Rng::derive(cfg.seed, "modality-dropout");
    let mut batch_no = 0usize;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        Rng::derive(cfg.seed, &format!("epoch{epoch}")).shuffle(&mut order);
        let mut epoch_total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let dropped = (drop_rng.uniform() < cfg.p_drop).then(|| Modality::ALL[drop_rng.below(3)]);
            let mask = dropped.map_or_else(AvailabilityMask::all, AvailabilityMask::without);
            params.zero_grad();
            let mut total = 0.0;
            for &i in batch {
                let mut tape = Tape::new();
                let fwd = forward(&mut tape, &params, model, &inputs[i], mask)?;
                let loss = task_loss(&mut tape, &fwd, &train[i])?;
                let value = tape.value(loss).data()[0];
                if !value.is_finite() {
                    return Err(Error::Diverged(format!(
                        "batch {batch_no}: loss {value} on sample {}",
                        train[i].id
                    )));
                }
                total += value;
                tape.backward_into(loss, &mut params)?;
            }
            params.scale_grads(1.0 / batch.len() as f64);
            adam_step(&mut params, &mut adam, &hyper).map_err(|e| match e {
                Error::NonFiniteGradient(path) => {
                    Error::Diverged(format!("batch {batch_no}: non-finite gradient in `{path}`"))
                }
                other => other,
            })?;
            let mean = total / batch.len() as f64;
            metrics.loss_curve.push(mean);
            metrics.dropped.push(dropped);
            epoch_total += total;
            batch_no += 1;
        }
        let epoch_mean = epoch_total / train.len() as f64;
        metrics.epoch_loss.push(epoch_mean);
        on_epoch(epoch, epoch_mean);
    }
    Ok(TrainOutput { params, metrics })
}

/// Decoder outputs for one sample, or the fusion error when nothing is
/// available (fail-silent).
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub command: Vec<f64>,
    pub seg: Vec<f64>,
    pub arbitration: [f64; 3],
    pub available: AvailabilityMask,
}

impl Prediction {
    pub fn command_label(&self) -> usize {
        argmax(&self.command)
    }

    pub fn all_finite(&self) -> bool {
        self.command.iter().chain(&self.seg).all(|v| v.is_finite())
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn predict(store: &ParamStore, cfg: &ModelConfig, input: &ModelInput, mask: AvailabilityMask) -> Result<Prediction> {
    let mut tape = Tape::new();
    let fwd = forward(&mut tape, store, cfg, input, mask)?;
    Ok(Prediction {
        command: tape.value(fwd.command).data().to_vec(),
        seg: tape.value(fwd.seg).data().to_vec(),
        arbitration: fwd.fused.arbitration,
        available: fwd.fused.available,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub scenario: String,
    pub samples: usize,
    pub command_accuracy: f64,
    /// Accuracy per true command; `null` when the class is absent.
    pub per_class: BTreeMap<String, Option<f64>>,
    pub seg_accuracy: f64,
    /// Mean arbitration weight per modality over samples that produced output.
    pub arbitration: BTreeMap<String, f64>,
    /// Samples for which fusion had no available modality.
    pub fail_silent: usize,
    /// Samples with any non-finite decoder output.
    pub non_finite_outputs: usize,
    pub loss_curve: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Runs the model on `samples` under `scenario`. Fail-silent samples count
/// as incorrect; any other error aborts.
pub fn evaluate(
    store: &ParamStore,
    cfg: &ModelConfig,
    rig: &Rig,
    samples: &[Sample],
    scenario: &Scenario,
) -> Result<Metrics> {
    check_params(cfg, store)?;
    scenario.validate()?;
    let mask = scenario.mask.unwrap_or_default();
    let mut correct = 0usize;
    let mut class_hits = [0usize; CommandLabel::COUNT];
    let mut class_total = [0usize; CommandLabel::COUNT];
    let mut seg_hits = 0usize;
    let mut seg_total = 0usize;
    let mut arbitration = [0.0; 3];
    let mut produced = 0usize;
    let mut fail_silent = 0usize;
    let mut non_finite = 0usize;
    let mut error = None;
    for s in samples {
        let faulty = scenario.apply(s)?;
        let input = rig.prepare(&faulty, cfg)?;
        let label = s.label.index();
        class_total[label] += 1;
        seg_total += s.seg.len();
        match predict(store, cfg, &input, mask) {
            Ok(p) => {
                produced += 1;
                if !p.all_finite() {
                    non_finite += 1;
                }
                if p.command_label() == label {
                    correct += 1;
                    class_hits[label] += 1;
                }
                seg_hits += p
                    .seg
                    .chunks(crate::scene::NUM_SEG_CLASSES)
                    .zip(&s.seg)
                    .filter(|(row, &c)| argmax(row) == c as usize)
                    .count();
                for (a, v) in arbitration.iter_mut().zip(p.arbitration) {
                    *a += v;
                }
            }
            Err(Error::Fusion(msg)) => {
                fail_silent += 1;
                error.get_or_insert(msg);
            }
            Err(e) => return Err(e),
        }
    }
    let n = samples.len();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(Metrics {
        scenario: scenario.name.clone(),
        samples: n,
        command_accuracy: ratio(correct, n),
        per_class: CommandLabel::ALL
            .iter()
            .map(|c| {
                let i = c.index();
                (c.name().to_string(), (class_total[i] > 0).then(|| ratio(class_hits[i], class_total[i])))
            })
            .collect(),
        seg_accuracy: ratio(seg_hits, seg_total),
        arbitration: Modality::ALL
            .iter()
            .map(|m| {
                let v = if produced == 0 { 0.0 } else { arbitration[m.index()] / produced as f64 };
                (m.name().to_string(), v)
            })
            .collect(),
        fail_silent,
        non_finite_outputs: non_finite,
        loss_curve: vec![],
        error,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGradCheck {
    pub path: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Compares backprop against central differences of the full training loss
/// on `count` parameter scalars drawn uniformly from the whole model.
pub fn end_to_end_grad_check(
    store: &ParamStore,
    cfg: &ModelConfig,
    input: &ModelInput,
    sample: &Sample,
    count: usize,
    eps: f64,
    seed: u64,
) -> Result<Vec<ParamGradCheck>> {
    let loss_of = |params: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let fwd = forward(&mut tape, params, cfg, input, AvailabilityMask::all())?;
        let loss = task_loss(&mut tape, &fwd, sample)?;
        Ok(tape.value(loss).data()[0])
    };
    let mut tape = Tape::new();
    let fwd = forward(&mut tape, store, cfg, input, AvailabilityMask::all())?;
    let loss = task_loss(&mut tape, &fwd, sample)?;
    let grads = tape.backward(loss)?;
    let analytic: BTreeMap<&str, Tensor> = tape
        .param_vars()
        .iter()
        .map(|(p, v)| (p.as_str(), grads.wrt(*v)))
        .collect();
    let total = store.num_scalars();
    let mut rng = Rng::derive(seed, "grad-check");
    let mut scratch = store.clone();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut k = rng.below(total);
        let (path, len) = store
            .iter()
            .find_map(|(p, t)| {
                if k < t.numel() {
                    Some((p.to_string(), t.numel()))
                } else {
                    k -= t.numel();
                    None
                }
            })
            .expect("index within store");
        debug_assert!(k < len);
        let original = scratch.get(&path)?.data()[k];
        scratch.get_mut(&path)?.data_mut()[k] = original + eps;
        let plus = loss_of(&scratch)?;
        let hi = scratch.get(&path)?.data()[k];
        scratch.get_mut(&path)?.data_mut()[k] = original - eps;
        let minus = loss_of(&scratch)?;
        let lo = scratch.get(&path)?.data()[k];
        scratch.get_mut(&path)?.data_mut()[k] = original;
        let numeric = (plus - minus) / (hi - lo);
        let a = analytic.get(path.as_str()).map_or(0.0, |g| g.data()[k]);
        let rel_error = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        out.push(ParamGradCheck {
            path,
            index: k,
            analytic: a,
            numeric,
            rel_error,
        });
    }
    Ok(out)
}
