use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::encoders::embed_text_tokens;
use crate::model::{embed_patches, encode_modality, Modality, ModelConfig, ModelInput};
use crate::rng::Rng;
use crate::scene::CommandLabel;
use crate::tasks::argmax;
use crate::tensor::{adam_step, AdamHyper, AdamState, ParamStore, Tape, Tensor};

pub const PROBE_EPOCHS: usize = 50;
pub const PROBE_BATCH: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub modality: Modality,
    pub shuffled_labels: bool,
    pub train_samples: usize,
    pub val_samples: usize,
    pub accuracy: f64,
}

/// Mean of one frozen encoder's output tokens over non-padding positions.
pub fn pooled_latent(store: &ParamStore, cfg: &ModelConfig, input: &ModelInput, m: Modality) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let seq = match m {
        Modality::Camera => embed_patches(&mut tape, store, cfg, m, &input.camera)?,
        Modality::Depth => embed_patches(&mut tape, store, cfg, m, &input.depth)?,
        Modality::Text => {
            let t = input
                .text
                .as_ref()
                .ok_or_else(|| Error::Input("probe needs tokenizable text".into()))?;
            embed_text_tokens(&mut tape, store, cfg, t)?
        }
    };
    let seq = encode_modality(&mut tape, store, cfg, seq)?;
    let tokens = tape.value(seq.tokens);
    let kept = seq.keep.iter().filter(|&&k| k).count() as f64;
    let mut pooled = vec![0.0; cfg.d];
    for (row, _) in (0..seq.len()).zip(&seq.keep).filter(|(_, &k)| k) {
        for (p, v) in pooled.iter_mut().zip(tokens.row(row)) {
            *p += v / kept;
        }
    }
    Ok(pooled)
}

fn features(store: &ParamStore, cfg: &ModelConfig, inputs: &[ModelInput], m: Modality) -> Result<Vec<Vec<f64>>> {
    inputs.iter().map(|i| pooled_latent(store, cfg, i, m)).collect()
}

/// A linear classifier on pooled latents of modality `m`, trained with
/// Adam defaults for 50 epochs in minibatches of 32 and scored on `val`.
/// With `shuffle_labels`, train and val labels are each permuted first.
pub fn single_modality_probe(
    store: &ParamStore,
    cfg: &ModelConfig,
    train: (&[ModelInput], &[CommandLabel]),
    val: (&[ModelInput], &[CommandLabel]),
    m: Modality,
    shuffle_labels: bool,
    seed: u64,
) -> Result<ProbeResult> {
    if train.0.is_empty() || val.0.is_empty() || train.0.len() != train.1.len() || val.0.len() != val.1.len() {
        return Err(Error::Input("probe needs non-empty, labelled train and val splits".into()));
    }
    let mut train_y: Vec<usize> = train.1.iter().map(|l| l.index()).collect();
    let mut val_y: Vec<usize> = val.1.iter().map(|l| l.index()).collect();
    if shuffle_labels {
        Rng::derive(seed, "probe.shuffle.train").shuffle(&mut train_y);
        Rng::derive(seed, "probe.shuffle.val").shuffle(&mut val_y);
    }
    let xtr = features(store, cfg, train.0, m)?;
    let xval = features(store, cfg, val.0, m)?;
    let d = cfg.d;
    let k = CommandLabel::COUNT;
    let mut params = ParamStore::new();
    let s = 1.0 / (d as f64).sqrt();
    let mut rng = Rng::derive(seed, "probe.w");
    params.insert("probe.w", Tensor::new(&[d, k], (0..d * k).map(|_| rng.range(-s, s)).collect())?)?;
    params.insert("probe.b", Tensor::zeros(&[k]))?;
    let hyper = AdamHyper::default();
    let mut adam = AdamState::new();
    for epoch in 0..PROBE_EPOCHS {
        let mut order: Vec<usize> = (0..xtr.len()).collect();
        Rng::derive(seed, &format!("probe.epoch{epoch}")).shuffle(&mut order);
        for batch in order.chunks(PROBE_BATCH) {
            params.zero_grad();
            let mut tape = Tape::new();
            let x: Vec<f64> = batch.iter().flat_map(|&i| xtr[i].iter().copied()).collect();
            let x = tape.constant(Tensor::new(&[batch.len(), d], x)?);
            let w = tape.param(&params, "probe.w")?;
            let b = tape.param(&params, "probe.b")?;
            let z = tape.matmul(x, w)?;
            let z = tape.add_bias(z, b)?;
            let p = tape.softmax(z, 1)?;
            let labels: Vec<usize> = batch.iter().map(|&i| train_y[i]).collect();
            let loss = tape.nll(p, &labels)?;
            tape.backward_into(loss, &mut params)?;
            adam_step(&mut params, &mut adam, &hyper)?;
        }
    }
    let (w, b) = (params.get("probe.w")?, params.get("probe.b")?);
    let correct = xval
        .iter()
        .zip(&val_y)
        .filter(|(x, &y)| {
            let logits: Vec<f64> = (0..k)
                .map(|c| b.data()[c] + (0..d).map(|j| x[j] * w.data()[j * k + c]).sum::<f64>())
                .collect();
            argmax(&logits) == y
        })
        .count();
    Ok(ProbeResult {
        modality: m,
        shuffled_labels: shuffle_labels,
        train_samples: xtr.len(),
        val_samples: xval.len(),
        accuracy: correct as f64 / xval.len() as f64,
    })
}
