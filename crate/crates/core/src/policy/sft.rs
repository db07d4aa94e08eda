//! Supervised fine-tuning with teacher forcing.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::hash_json;
use crate::nn::{Adam, AdamConfig, Grads, Tape, Var};
use crate::seed::{derive_seed, rng};
use crate::segment::tokenize;
use crate::vocab::Vocab;

use super::model::Policy;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftExample {
    pub observation: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub val_fraction: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub prompt: String,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            lr: 3e-3,
            batch_size: 16,
            epochs: 12,
            patience: 2,
            val_fraction: 0.1,
            grad_clip: 1.0,
            seed: 0,
            prompt: crate::annotate::SAMPLING_PROMPT.into(),
        }
    }
}

impl SftConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch_size == 0 || self.epochs == 0 || !(self.grad_clip > 0.0) {
            return Err(Error::Config(
                "SFT learning rate, batch size, epochs and clip must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!(
                "validation fraction {} outside [0, 1)",
                self.val_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftEpoch {
    pub epoch: usize,
    pub train_ce: f64,
    pub val_ce: f64,
    pub val_perplexity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftReport {
    /// Mean token cross-entropy before training.
    pub initial_ce: f64,
    pub epochs: Vec<SftEpoch>,
    pub best_epoch: usize,
    pub val_perplexity: f64,
    pub train_examples: usize,
    pub val_examples: usize,
}

/// Context and target ids (response tokens followed by EOS).
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub context: Vec<u32>,
    pub target: Vec<u32>,
}

pub fn encode_examples(examples: &[SftExample], prompt: &str, vocab: &Vocab) -> Vec<Encoded> {
    examples
        .iter()
        .map(|e| {
            let s = tokenize(prompt, &e.observation, &e.target, vocab);
            let mut target = s.ids[s.response.clone()].to_vec();
            target.push(vocab.eos());
            Encoded {
                context: s.ids[..s.response.start].to_vec(),
                target,
            }
        })
        .collect()
}

/// Token-mean cross-entropy of a batch.
pub(crate) fn batch_ce(policy: &Policy, tape: &mut Tape<'_>, batch: &[&Encoded]) -> Result<Var> {
    let items: Vec<(&[u32], &[u32])> = batch
        .iter()
        .map(|e| (e.context.as_slice(), e.target.as_slice()))
        .collect();
    let total: usize = batch.iter().map(|e| e.target.len()).sum();
    let forced = policy.teacher_force(tape, &items)?;
    let mut loss: Option<Var> = None;
    for (t, step) in forced.steps.iter().enumerate() {
        let targets: Vec<usize> = step
            .items
            .iter()
            .map(|&i| batch[i].target[t] as usize)
            .collect();
        let weights = vec![1.0 / total as f64; targets.len()];
        let ce = tape.cross_entropy(step.logits, &targets, &weights);
        loss = Some(match loss {
            Some(l) => tape.add(l, ce),
            None => ce,
        });
    }
    loss.ok_or_else(|| Error::DegenerateData("empty SFT batch".into()))
}

/// Mean token cross-entropy over `examples`.
pub fn mean_token_ce(policy: &Policy, examples: &[Encoded]) -> Result<f64> {
    let mut total = 0.0;
    let mut tokens = 0usize;
    for chunk in examples.chunks(64) {
        let refs: Vec<&Encoded> = chunk.iter().collect();
        let n: usize = chunk.iter().map(|e| e.target.len()).sum();
        let mut tape = Tape::new(&policy.params);
        let l = batch_ce(policy, &mut tape, &refs)?;
        total += tape.value(l).item() * n as f64;
        tokens += n;
    }
    Ok(if tokens > 0 {
        total / tokens as f64
    } else {
        0.0
    })
}

/// Trains the token head and decoder on `(observation, target)` pairs. The
/// value head is left untouched.
pub fn sft_train(
    mut policy: Policy,
    examples: &[SftExample],
    vocab: &Vocab,
    config: &SftConfig,
) -> Result<(Policy, SftReport)> {
    config.validate()?;
    policy.check_vocab(vocab)?;
    if examples.is_empty() {
        return Err(Error::DegenerateData("empty SFT corpus".into()));
    }
    let encoded = encode_examples(examples, &config.prompt, vocab);
    let (train_idx, val_idx) =
        crate::reward::split_indices(encoded.len(), config.val_fraction, config.seed);
    let train: Vec<&Encoded> = train_idx.iter().map(|&i| &encoded[i]).collect();
    let val: Vec<Encoded> = val_idx.iter().map(|&i| encoded[i].clone()).collect();
    let monitor: Vec<Encoded> = if val.is_empty() {
        train.iter().map(|e| (*e).clone()).collect()
    } else {
        val.clone()
    };
    policy.training_config_hash = Some(hash_json(config)?);
    let initial_ce = mean_token_ce(&policy, &monitor)?;
    let mut report = SftReport {
        initial_ce,
        epochs: Vec::new(),
        best_epoch: 0,
        val_perplexity: initial_ce.exp(),
        train_examples: train.len(),
        val_examples: val.len(),
    };
    let mut opt = Adam::new(AdamConfig::with_lr(config.lr), &policy.params);
    let mut best = (initial_ce, policy.params.clone());
    let mut stale = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle = rng(derive_seed(config.seed, 7));
    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Encoded> = chunk.iter().map(|&i| train[i]).collect();
            let mut grads = {
                let mut tape = Tape::new(&policy.params);
                let loss = batch_ce(&policy, &mut tape, &batch)?;
                let l = tape.value(loss).item();
                if !l.is_finite() {
                    return Err(Error::NonFinite(format!("SFT loss {l} at epoch {epoch}")));
                }
                sum += l;
                batches += 1;
                let mut g = Grads::zeros_like(&policy.params);
                tape.backward_into(loss, &mut g);
                g
            };
            grads.clip_norm(config.grad_clip);
            opt.step(&mut policy.params, &grads);
        }
        let val_ce = mean_token_ce(&policy, &monitor)?;
        let train_ce = sum / batches.max(1) as f64;
        log::info!("sft epoch {epoch}: train {train_ce:.4} val {val_ce:.4}");
        report.epochs.push(SftEpoch {
            epoch,
            train_ce,
            val_ce,
            val_perplexity: val_ce.exp(),
        });
        if val_ce < best.0 {
            best = (val_ce, policy.params.clone());
            report.best_epoch = epoch;
            report.val_perplexity = val_ce.exp();
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    policy.params = best.1;
    Ok((policy, report))
}
