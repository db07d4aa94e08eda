use serde::{Deserialize, Serialize};

use crate::annotate::labels::NO_FACT;
use crate::annotate::record::FeedbackRecord;
use crate::error::{Error, Result};
use crate::hash::hash_json;
use crate::nn::{Adam, AdamConfig, Grads, Tape, Var};
use crate::seed::{derive_seed, rng};
use crate::vocab::Vocab;

use super::model::{Query, RewardKind, RewardModel, RewardModelConfig};

use rand::seq::SliceRandom;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmTrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub val_fraction: f64,
    pub allow_degenerate: bool,
    /// Drop no-fact segments from the loss instead of learning class 2.
    pub mask_no_fact: bool,
    pub model: RewardModelConfig,
}

impl Default for RmTrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 4,
            epochs: 20,
            patience: 3,
            seed: 0,
            val_fraction: 0.1,
            allow_degenerate: false,
            mask_no_fact: false,
            model: RewardModelConfig::default(),
        }
    }
}

impl RmTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "learning rate, batch size and epochs must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!(
                "validation fraction {} outside [0, 1)",
                self.val_fraction
            )));
        }
        self.model.validate()
    }
}

/// Token ids, classification positions and their targets for one record.
#[derive(Debug, Clone, PartialEq)]
pub struct RmExample {
    pub ids: Vec<u32>,
    pub positions: Vec<usize>,
    pub targets: Vec<usize>,
}

/// Training targets for `kind`. Typed models read only their own
/// category's labels; the coarse model reads the derived sequence label at
/// the final response token.
pub fn examples_for(
    kind: RewardKind,
    records: &[FeedbackRecord],
    mask_no_fact: bool,
) -> Vec<RmExample> {
    records
        .iter()
        .map(|r| match kind {
            RewardKind::Fine(cat) => {
                let (positions, targets) = r
                    .spans
                    .iter()
                    .zip(r.labels.category(cat))
                    .filter(|(_, l)| !(mask_no_fact && *l == NO_FACT))
                    .map(|(s, l)| (s.last_token_index, l as usize))
                    .unzip();
                RmExample {
                    ids: r.stream.ids.clone(),
                    positions,
                    targets,
                }
            }
            RewardKind::Coarse => RmExample {
                ids: r.stream.ids.clone(),
                positions: vec![r.stream.response.end - 1],
                targets: vec![r.labels.sequence_label() as usize],
            },
        })
        .collect()
}

/// Mean over records of the per-record mean segment cross-entropy.
pub fn batch_loss(
    model: &RewardModel,
    tape: &mut Tape<'_>,
    batch: &[&RmExample],
) -> Result<Option<Var>> {
    let batch: Vec<&RmExample> = batch
        .iter()
        .copied()
        .filter(|e| !e.positions.is_empty())
        .collect();
    if batch.is_empty() {
        return Ok(None);
    }
    let queries: Vec<Query<'_>> = batch
        .iter()
        .map(|e| Query {
            ids: &e.ids,
            positions: &e.positions,
        })
        .collect();
    let logits = model.logits(tape, &queries)?;
    let mut targets = Vec::new();
    let mut weights = Vec::new();
    for e in &batch {
        let w = 1.0 / (e.positions.len() as f64 * batch.len() as f64);
        targets.extend_from_slice(&e.targets);
        weights.extend(std::iter::repeat_n(w, e.targets.len()));
    }
    Ok(Some(tape.cross_entropy(logits, &targets, &weights)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    /// Mean per-record cross-entropy.
    pub loss: f64,
    /// Argmax accuracy over all classified segments.
    pub accuracy: f64,
    pub segments: usize,
}

const EVAL_CHUNK: usize = 32;

pub fn evaluate(model: &RewardModel, examples: &[RmExample]) -> Result<EvalStats> {
    let mut loss = 0.0;
    let mut records = 0usize;
    let mut correct = 0usize;
    let mut segments = 0usize;
    for chunk in examples.chunks(EVAL_CHUNK) {
        let queries: Vec<Query<'_>> = chunk
            .iter()
            .map(|e| Query {
                ids: &e.ids,
                positions: &e.positions,
            })
            .collect();
        let probs = model.predict(&queries)?;
        for (e, ps) in chunk.iter().zip(probs) {
            if e.positions.is_empty() {
                continue;
            }
            let mut rec = 0.0;
            for (p, &t) in ps.iter().zip(&e.targets) {
                rec -= p[t].max(f64::MIN_POSITIVE).ln();
                let arg = p
                    .iter()
                    .enumerate()
                    .fold(0, |best, (i, &x)| if x > p[best] { i } else { best });
                correct += (arg == t) as usize;
            }
            loss += rec / e.positions.len() as f64;
            records += 1;
            segments += e.positions.len();
        }
    }
    Ok(EvalStats {
        loss: if records > 0 {
            loss / records as f64
        } else {
            0.0
        },
        accuracy: if segments > 0 {
            correct as f64 / segments as f64
        } else {
            0.0
        },
        segments,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub initial_val_loss: f64,
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub train_records: usize,
    pub val_records: usize,
}

/// Deterministic disjoint split: a seeded shuffle of record indices.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng(seed));
    let n_val = ((n as f64) * val_fraction).round() as usize;
    let n_val = if val_fraction > 0.0 && n > 1 {
        n_val.clamp(1, n - 1)
    } else {
        0
    };
    let val = idx[..n_val].to_vec();
    let train = idx[n_val..].to_vec();
    (train, val)
}

fn check_classes(kind: RewardKind, examples: &[RmExample], allow: bool) -> Result<()> {
    let mut seen = vec![0usize; kind.classes()];
    for t in examples.iter().flat_map(|e| e.targets.iter()) {
        seen[*t] += 1;
    }
    let present = seen.iter().filter(|&&c| c > 0).count();
    if present < 2 {
        let msg = format!("training labels for {kind} cover a single class (counts {seen:?})");
        if !allow {
            return Err(Error::DegenerateData(format!(
                "{msg}; pass --allow-degenerate to train anyway"
            )));
        }
        log::warn!("{msg}");
    }
    Ok(())
}

/// Trains one reward model and returns the best-validation parameters.
pub fn train_reward_model(
    kind: RewardKind,
    records: &[FeedbackRecord],
    vocab: &Vocab,
    config: &RmTrainConfig,
) -> Result<(RewardModel, TrainingCurve)> {
    config.validate()?;
    if records.is_empty() {
        return Err(Error::DegenerateData("no feedback records".into()));
    }
    let examples = examples_for(kind, records, config.mask_no_fact);
    let (train_idx, val_idx) = split_indices(examples.len(), config.val_fraction, config.seed);
    let train: Vec<&RmExample> = train_idx.iter().map(|&i| &examples[i]).collect();
    let val: Vec<RmExample> = val_idx.iter().map(|&i| examples[i].clone()).collect();
    let train_owned: Vec<RmExample> = train.iter().map(|e| (*e).clone()).collect();
    check_classes(kind, &train_owned, config.allow_degenerate)?;

    let mut model = RewardModel::new(kind, config.model, vocab, derive_seed(config.seed, 1))?;
    model.training_config_hash = Some(hash_json(config)?);
    let mut opt = Adam::new(AdamConfig::with_lr(config.lr), &model.params);
    let monitor: &[RmExample] = if val.is_empty() { &train_owned } else { &val };
    let initial = evaluate(&model, monitor)?;
    let mut curve = TrainingCurve {
        initial_val_loss: initial.loss,
        epochs: Vec::new(),
        best_epoch: 0,
        train_records: train.len(),
        val_records: val.len(),
    };
    let mut best = (initial.loss, model.params.clone());
    let mut stale = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = rng(derive_seed(config.seed, 2));
    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&RmExample> = chunk.iter().map(|&i| train[i]).collect();
            let grads = {
                let mut tape = Tape::new(&model.params);
                let Some(loss) = batch_loss(&model, &mut tape, &batch)? else {
                    continue;
                };
                let l = tape.value(loss).item();
                if !l.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "{kind} reward model loss {l} at epoch {epoch}"
                    )));
                }
                total += l;
                batches += 1;
                let mut g = Grads::zeros_like(&model.params);
                tape.backward_into(loss, &mut g);
                g
            };
            opt.step(&mut model.params, &grads);
        }
        let stats = evaluate(&model, monitor)?;
        let train_loss = if batches > 0 {
            total / batches as f64
        } else {
            0.0
        };
        log::info!(
            "rm {kind} epoch {epoch}: train {train_loss:.4} val {:.4} acc {:.4}",
            stats.loss,
            stats.accuracy
        );
        curve.epochs.push(EpochStats {
            epoch,
            train_loss,
            val_loss: stats.loss,
            val_accuracy: stats.accuracy,
        });
        if stats.loss < best.0 {
            best = (stats.loss, model.params.clone());
            curve.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    model.params = best.1;
    Ok((model, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::facts::Category;
    use crate::annotate::labels::SegmentLabels;
    use crate::annotate::{
        collect_feedback, CollectConfig, InjectingCaptioner, OracleVerifier, RuleBasedExtractor,
        SAMPLING_PROMPT,
    };
    use crate::nn::gradcheck::{all_coordinates, check_gradients, max_rel_error};
    use crate::nn::Params;
    use crate::vocab::VocabularyConfig;
    use crate::world::inject::ALL_KINDS;
    use crate::world::{generate_corpus, SceneLimits};
    use rand::Rng;

    fn corpus(n: usize, rate: f64) -> (Vocab, Vec<FeedbackRecord>) {
        let v = Vocab::new(VocabularyConfig::default()).unwrap();
        let scenes = generate_corpus(50, n, &v, &SceneLimits::default()).unwrap();
        let cap = InjectingCaptioner {
            vocab: v.clone(),
            rate,
            types: ALL_KINDS.to_vec(),
        };
        let (records, _) = collect_feedback(
            &cap,
            &scenes,
            &RuleBasedExtractor::new(v.clone()),
            &OracleVerifier::new(v.clone()),
            &v,
            &CollectConfig {
                prompt: SAMPLING_PROMPT.into(),
                seed: 9,
            },
        )
        .unwrap();
        (v, records)
    }

    #[test]
    fn initial_loss_is_ln3() {
        let (v, records) = corpus(40, 0.3);
        let kind = RewardKind::Fine(Category::Relation);
        let m = RewardModel::new(kind, RewardModelConfig::default(), &v, 0).unwrap();
        let stats = evaluate(&m, &examples_for(kind, &records, false)).unwrap();
        assert!((stats.loss - 3f64.ln()).abs() < 0.05, "{}", stats.loss);
        let coarse =
            RewardModel::new(RewardKind::Coarse, RewardModelConfig::default(), &v, 0).unwrap();
        let stats = evaluate(&coarse, &examples_for(RewardKind::Coarse, &records, false)).unwrap();
        assert!((stats.loss - 2f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn degenerate_labels_refused_unless_allowed() {
        let (v, records) = corpus(60, 0.0);
        let kind = RewardKind::Coarse;
        let config = RmTrainConfig {
            lr: 1e-2,
            epochs: 3,
            batch_size: 8,
            ..Default::default()
        };
        let err = train_reward_model(kind, &records, &v, &config).unwrap_err();
        assert!(matches!(err, Error::DegenerateData(_)));
        let config = RmTrainConfig {
            allow_degenerate: true,
            ..config
        };
        let (m, curve) = train_reward_model(kind, &records, &v, &config).unwrap();
        let stats = evaluate(&m, &examples_for(kind, &records, false)).unwrap();
        assert!(stats.loss < 0.05, "{}", stats.loss);
        assert!(stats.loss < curve.initial_val_loss);
        assert_eq!(stats.accuracy, 1.0);
    }

    #[test]
    fn typed_examples_read_only_their_category() {
        let (_, records) = corpus(30, 0.5);
        let mut scrambled = records.clone();
        for r in &mut scrambled {
            r.labels = SegmentLabels(
                r.labels
                    .0
                    .iter()
                    .map(|l| [(l[0] + 1) % 3, l[1], (l[2] + 2) % 3])
                    .collect(),
            );
        }
        let a = RewardKind::Fine(Category::Attribute);
        assert_eq!(
            examples_for(a, &records, false),
            examples_for(a, &scrambled, false)
        );
        let o = RewardKind::Fine(Category::Existence);
        assert_ne!(
            examples_for(o, &records, false),
            examples_for(o, &scrambled, false)
        );
    }

    #[test]
    fn masking_drops_no_fact_segments() {
        let (_, records) = corpus(30, 0.3);
        let kind = RewardKind::Fine(Category::Relation);
        let masked = examples_for(kind, &records, true);
        assert!(masked
            .iter()
            .flat_map(|e| &e.targets)
            .all(|&t| t != NO_FACT as usize));
        let full = examples_for(kind, &records, false);
        assert!(
            full.iter().map(|e| e.targets.len()).sum::<usize>()
                > masked.iter().map(|e| e.targets.len()).sum::<usize>()
        );
    }

    #[test]
    fn coarse_sequence_label() {
        let (_, records) = corpus(80, 0.3);
        for (r, e) in records
            .iter()
            .zip(examples_for(RewardKind::Coarse, &records, false))
        {
            let any = r.labels.0.iter().any(|l| l.contains(&1));
            assert_eq!(e.targets, vec![any as usize]);
            assert_eq!(e.positions, vec![r.stream.response.end - 1]);
        }
    }

    #[test]
    fn split_is_disjoint_and_deterministic() {
        let (tr, va) = split_indices(101, 0.1, 4);
        assert_eq!((tr.len(), va.len()), (91, 10));
        let mut all: Vec<usize> = tr.iter().chain(&va).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..101).collect::<Vec<_>>());
        assert_eq!(split_indices(101, 0.1, 4), (tr, va));
    }

    fn tiny_vocab() -> Vocab {
        Vocab::new(VocabularyConfig {
            nouns: vec!["dog".into(), "cat".into()],
            attributes: vec!["red".into()],
            predicates: vec!["on".into()],
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let v = tiny_vocab();
        let config = RewardModelConfig {
            embed_dim: 2,
            window: 2,
            hidden: 2,
            heads: 1,
            max_len: 64,
        };
        let kind = RewardKind::Fine(Category::Attribute);
        let mut model = RewardModel::new(kind, config, &v, 3).unwrap();
        assert!(model.param_count() <= 200, "{}", model.param_count());
        let mut r = rng(11);
        for e in &mut model.params.entries {
            for x in &mut e.tensor.data {
                *x = r.random_range(-0.9..0.9);
            }
        }
        let n = v.len() as u32;
        let examples: Vec<RmExample> = (0..3)
            .map(|k| {
                let ids: Vec<u32> = (0..9).map(|i| (i * 5 + k * 3) % n).collect();
                RmExample {
                    ids,
                    positions: vec![3, 5 + k as usize, 8],
                    targets: vec![k as usize % 3, 1, 2],
                }
            })
            .collect();
        let batch: Vec<&RmExample> = examples.iter().collect();
        let loss_at = |p: &Params| {
            let mut m = model.clone();
            m.params = p.clone();
            let mut t = Tape::new(&m.params);
            let l = batch_loss(&m, &mut t, &batch).unwrap().unwrap();
            t.value(l).item()
        };
        let mut tape = Tape::new(&model.params);
        let loss = batch_loss(&model, &mut tape, &batch).unwrap().unwrap();
        let grads = tape.backward(loss);
        let results = check_gradients(
            &model.params,
            &grads,
            &all_coordinates(&model.params),
            1e-4,
            loss_at,
        );
        let worst = max_rel_error(&results);
        assert!(worst < 1e-3, "max relative error {worst}");
    }

    #[test]
    fn batch_loss_matches_direct_formula() {
        let (v, records) = corpus(6, 0.3);
        let kind = RewardKind::Fine(Category::Existence);
        let mut model = RewardModel::new(kind, RewardModelConfig::default(), &v, 5).unwrap();
        let mut r = rng(2);
        for x in &mut model.params.entries.last_mut().unwrap().tensor.data {
            *x = r.random_range(-1.0..1.0);
        }
        let examples = examples_for(kind, &records, false);
        let batch: Vec<&RmExample> = examples.iter().collect();
        let mut tape = Tape::new(&model.params);
        let loss = batch_loss(&model, &mut tape, &batch).unwrap().unwrap();
        let probs = model
            .predict(
                &examples
                    .iter()
                    .map(|e| Query {
                        ids: &e.ids,
                        positions: &e.positions,
                    })
                    .collect::<Vec<_>>(),
            )
            .unwrap();
        let direct: f64 = examples
            .iter()
            .zip(&probs)
            .map(|(e, ps)| {
                e.targets
                    .iter()
                    .zip(ps)
                    .map(|(&t, p)| -p[t].ln())
                    .sum::<f64>()
                    / e.targets.len() as f64
            })
            .sum::<f64>()
            / examples.len() as f64;
        assert!((tape.value(loss).item() - direct).abs() < 1e-9);
    }
}
