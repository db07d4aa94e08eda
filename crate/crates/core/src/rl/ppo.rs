//! KL-regularized PPO over fine-grained token rewards.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate_policy, EvalConfig};
use crate::nn::{Adam, AdamConfig, Grads, Tape, Var};
use crate::policy::{evaluate_logprobs_values, row_seed, sample_batch, Policy, SampleRequest, Trajectory};
use crate::reward::{hallucination_probabilities, segment_rewards_batch, Query, RewardModels, SegmentRewards};
use crate::seed::{derive_seed, rng};
use crate::segment::{search_last_token_indices, split_response};
use crate::vocab::Vocab;
use crate::world::scene::SceneGraph;

use super::rewards::{
    apply_kl_penalty, assemble_coarse_rewards, assemble_token_rewards, compute_gae,
    normalize_advantages, ActiveRewards, ResolvedVariant, RewardWeights,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub clip_eps: f64,
    pub kl_beta: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub lr: f64,
    /// Rollouts per iteration.
    pub batch_size: usize,
    pub ppo_epochs: usize,
    /// Trajectories per gradient step.
    pub minibatch_size: usize,
    pub value_coef: f64,
    pub grad_clip: f64,
    pub iterations: usize,
    pub temperature: f64,
    pub seed: u64,
    pub weights: RewardWeights,
    /// Evaluate on the held-out scenes every this many iterations (0 = never).
    pub eval_every: usize,
    pub prompt: String,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            kl_beta: 0.1,
            gamma: 1.0,
            lambda: 0.95,
            lr: 1e-4,
            batch_size: 32,
            ppo_epochs: 2,
            minibatch_size: 8,
            value_coef: 0.5,
            grad_clip: 1.0,
            iterations: 60,
            temperature: 1.0,
            seed: 0,
            weights: RewardWeights::default(),
            eval_every: 0,
            prompt: crate::annotate::SAMPLING_PROMPT.into(),
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.clip_eps > 0.0) {
            return bad(format!("clip epsilon {} must be positive", self.clip_eps));
        }
        if !(self.kl_beta >= 0.0) {
            return bad(format!("KL coefficient {} must be non-negative", self.kl_beta));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("discount {} outside (0, 1]", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("GAE lambda {} outside [0, 1]", self.lambda));
        }
        if !(self.lr > 0.0) || !(self.grad_clip > 0.0) || !(self.value_coef >= 0.0) {
            return bad("learning rate and clip must be positive, value weight non-negative".into());
        }
        if self.batch_size == 0 || self.minibatch_size == 0 || self.ppo_epochs == 0 {
            return bad("batch, minibatch and epoch counts must be positive".into());
        }
        if !(self.temperature > 0.0) {
            return bad(format!("rollout temperature {} must be positive", self.temperature));
        }
        Ok(())
    }
}

/// One trajectory prepared for the update.
#[derive(Debug, Clone, PartialEq)]
pub struct PpoSample {
    pub context: Vec<u32>,
    pub actions: Vec<u32>,
    pub old_logprobs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    /// Fraction of tokens whose ratio left `[1 − ε, 1 + ε]`.
    pub clip_fraction: f64,
    /// Mean of `old − new` log-probability over tokens.
    pub approx_kl: f64,
    pub steps: usize,
}

/// Token-mean clipped surrogate plus weighted value loss of one
/// minibatch; also returns `(clipped tokens, Σ old − new, tokens)`.
pub fn minibatch_loss(
    policy: &Policy,
    tape: &mut Tape<'_>,
    batch: &[&PpoSample],
    clip_eps: f64,
    value_coef: f64,
) -> Result<(Var, Var, Var, (usize, f64, usize))> {
    let items: Vec<(&[u32], &[u32])> = batch
        .iter()
        .map(|s| (s.context.as_slice(), s.actions.as_slice()))
        .collect();
    let total: usize = batch.iter().map(|s| s.actions.len()).sum();
    if total == 0 {
        return Err(Error::DegenerateData("minibatch without actions".into()));
    }
    let forced = policy.teacher_force(tape, &items)?;
    let mut pl: Option<Var> = None;
    let mut vl: Option<Var> = None;
    let mut clipped = 0usize;
    let mut kl = 0.0;
    for (t, step) in forced.steps.iter().enumerate() {
        let old: Vec<f64> = step.items.iter().map(|&i| batch[i].old_logprobs[t]).collect();
        let adv: Vec<f64> = step.items.iter().map(|&i| batch[i].advantages[t]).collect();
        let ret: Vec<f64> = step.items.iter().map(|&i| batch[i].returns[t]).collect();
        let new = tape.value(step.logp).data.clone();
        for (n, o) in new.iter().zip(&old) {
            let ratio = (n - o).exp();
            clipped += ((ratio - 1.0).abs() > clip_eps) as usize;
            kl += o - n;
        }
        let share = step.items.len() as f64 / total as f64;
        let p = tape.ppo_clip_loss(step.logp, &old, &adv, clip_eps);
        let p = tape.scale(p, share);
        let v = tape.mse_loss(step.values, &ret);
        let v = tape.scale(v, share);
        pl = Some(pl.map_or(p, |a| tape.add(a, p)));
        vl = Some(vl.map_or(v, |a| tape.add(a, v)));
    }
    let (pl, vl) = (pl.expect("non-empty"), vl.expect("non-empty"));
    let weighted = tape.scale(vl, value_coef);
    let loss = tape.add(pl, weighted);
    Ok((loss, pl, vl, (clipped, kl, total)))
}

/// `ppo_epochs` passes of shuffled minibatch updates over `samples`.
pub fn ppo_update(
    policy: &mut Policy,
    opt: &mut Adam,
    samples: &[PpoSample],
    config: &PpoConfig,
    shuffle_seed: u64,
) -> Result<UpdateStats> {
    let mut stats = UpdateStats::default();
    let usable: Vec<usize> = (0..samples.len())
        .filter(|&i| !samples[i].actions.is_empty())
        .collect();
    if usable.is_empty() {
        return Ok(stats);
    }
    let mut order = usable;
    let mut shuffle = rng(shuffle_seed);
    let (mut clipped, mut kl, mut tokens) = (0usize, 0.0, 0usize);
    let (mut pl_sum, mut vl_sum) = (0.0, 0.0);
    for epoch in 0..config.ppo_epochs {
        order.shuffle(&mut shuffle);
        for (mb, chunk) in order.chunks(config.minibatch_size).enumerate() {
            let batch: Vec<&PpoSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let mut grads = Grads::zeros_like(&policy.params);
            {
                let mut tape = Tape::new(&policy.params);
                let (loss, pl, vl, (c, k, n)) =
                    minibatch_loss(policy, &mut tape, &batch, config.clip_eps, config.value_coef)?;
                let (l, p, v) = (
                    tape.value(loss).item(),
                    tape.value(pl).item(),
                    tape.value(vl).item(),
                );
                if !l.is_finite() {
                    log::error!(
                        "non-finite PPO loss: epoch {epoch} minibatch {mb} policy {p} value {v} \
                         rows {:?}",
                        chunk
                    );
                    return Err(Error::NonFinite(format!(
                        "PPO loss {l} (policy {p}, value {v}) at epoch {epoch}, minibatch {mb}"
                    )));
                }
                tape.backward_into(loss, &mut grads);
                clipped += c;
                kl += k;
                tokens += n;
                pl_sum += p;
                vl_sum += v;
            }
            if !grads.all_finite() {
                return Err(Error::NonFinite(format!(
                    "PPO gradient at epoch {epoch}, minibatch {mb}"
                )));
            }
            grads.clip_norm(config.grad_clip);
            opt.step(&mut policy.params, &grads);
            stats.steps += 1;
        }
    }
    stats.policy_loss = pl_sum / stats.steps as f64;
    stats.value_loss = vl_sum / stats.steps as f64;
    stats.clip_fraction = clipped as f64 / tokens as f64;
    stats.approx_kl = kl / tokens as f64;
    Ok(stats)
}

/// Task rewards of one trajectory before KL shaping.
fn trajectory_rewards(
    traj: &Trajectory,
    text: &str,
    positions: &[usize],
    seg: Option<&SegmentRewards>,
    coarse: Option<f64>,
    active: &ActiveRewards,
    weights: RewardWeights,
) -> Result<Vec<f64>> {
    let len = traj.len();
    let body = traj.stream.response.len();
    if text.trim().is_empty() || body == 0 {
        return Ok(vec![0.0; len]);
    }
    Ok(match active {
        ActiveRewards::Fine(cats) => {
            let seg = seg.ok_or_else(|| Error::Contract("missing segment rewards".into()))?;
            assemble_token_rewards(seg, positions, weights, cats, len)?.values
        }
        ActiveRewards::Coarse => {
            let r = coarse.ok_or_else(|| Error::Contract("missing coarse reward".into()))?;
            assemble_coarse_rewards(r, body - 1, weights, len)?.values
        }
        ActiveRewards::Skip => vec![0.0; len],
    })
}

/// Segment end positions relative to the response start.
fn response_positions(traj: &Trajectory, text: &str) -> Result<Vec<usize>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let spans = split_response(text)?;
    let spans = search_last_token_indices(&traj.stream, text, &spans)?;
    Ok(spans
        .iter()
        .map(|s| s.last_token_index - traj.stream.response.start)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    /// Mean per-trajectory sum of task rewards, before KL shaping.
    pub mean_reward: f64,
    /// Mean per-trajectory `Σ (log π − log π_ref)`.
    pub mean_kl: f64,
    pub mean_length: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub chair_s: Option<f64>,
    pub chair_i: Option<f64>,
    pub per_type_rates: Option<[Option<f64>; 3]>,
}

fn check_models(models: &RewardModels, active: &ActiveRewards, vocab: &Vocab) -> Result<()> {
    let check = |m: Option<&crate::reward::RewardModel>, what: &str| -> Result<()> {
        let m = m.ok_or_else(|| {
            Error::Config(format!("variant needs the {what} reward model, none loaded"))
        })?;
        m.check_vocab(vocab)
            .map_err(|e| Error::Config(format!("{what} reward model: {e}")))
    };
    match active {
        ActiveRewards::Fine(cats) => {
            for &c in cats {
                check(models.get(c), c.code())?;
            }
            Ok(())
        }
        ActiveRewards::Coarse => check(models.coarse.as_ref(), "coarse"),
        ActiveRewards::Skip => Ok(()),
    }
}

/// Fine-tunes `policy` against the variant's rewards with a frozen copy of
/// the input as KL reference. Returns the final policy and one metrics row
/// per iteration. The `wo_aif` variant and zero iterations return the input
/// unchanged.
pub fn run_fgaif(
    scenes: &[SceneGraph],
    policy: Policy,
    models: &RewardModels,
    variant: &ResolvedVariant,
    vocab: &Vocab,
    config: &PpoConfig,
    eval_scenes: &[SceneGraph],
) -> Result<(Policy, Vec<IterationMetrics>)> {
    config.validate()?;
    policy.check_vocab(vocab)?;
    if matches!(variant.active, ActiveRewards::Skip) || config.iterations == 0 {
        return Ok((policy, Vec::new()));
    }
    check_models(models, &variant.active, vocab)?;
    if scenes.is_empty() {
        return Err(Error::DegenerateData("no training scenes for RL".into()));
    }
    let reference = policy.clone();
    let mut policy = policy;
    let mut opt = Adam::new(AdamConfig::with_lr(config.lr), &policy.params);
    let observations: Vec<String> = scenes.iter().map(SceneGraph::observation).collect();
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    let mut order_rng = rng(derive_seed(config.seed, 0x5CE));
    order.shuffle(&mut order_rng);
    let mut cursor = 0;
    let eval_config = EvalConfig {
        prompt: config.prompt.clone(),
        seed: derive_seed(config.seed, 0xE7A1),
        ..EvalConfig::default()
    };
    let mut metrics = Vec::with_capacity(config.iterations);
    for iteration in 1..=config.iterations {
        let iter_seed = derive_seed(config.seed, iteration as u64);
        let mut picked = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut order_rng);
                cursor = 0;
            }
            picked.push(order[cursor]);
            cursor += 1;
        }
        let requests: Vec<SampleRequest<'_>> = picked
            .iter()
            .enumerate()
            .map(|(row, &i)| SampleRequest {
                prompt: &config.prompt,
                observation: &observations[i],
                seed: row_seed(iter_seed, row),
            })
            .collect();
        let mut rollouts = sample_batch(&policy, vocab, &requests, config.temperature, None)?;

        let items: Vec<(&[u32], &[u32])> = rollouts
            .iter()
            .map(|(_, t)| (t.context(), t.actions.as_slice()))
            .collect();
        let refs = evaluate_logprobs_values(&reference, &items)?;
        for ((_, t), r) in rollouts.iter_mut().zip(refs) {
            t.ref_logprobs = r.logprobs;
            t.validate()?;
        }

        let positions: Vec<Vec<usize>> = rollouts
            .iter()
            .map(|(text, t)| response_positions(t, text))
            .collect::<Result<_>>()?;
        let scored: Vec<usize> = (0..rollouts.len())
            .filter(|&i| !positions[i].is_empty())
            .collect();
        let mut seg: Vec<Option<SegmentRewards>> = vec![None; rollouts.len()];
        let mut coarse: Vec<Option<f64>> = vec![None; rollouts.len()];
        match &variant.active {
            ActiveRewards::Fine(cats) => {
                let batch: Vec<_> = scored
                    .iter()
                    .map(|&i| (&rollouts[i].1.stream, positions[i].iter().map(|p| p + rollouts[i].1.stream.response.start).collect::<Vec<_>>()))
                    .collect();
                let refs: Vec<_> = batch.iter().map(|(s, p)| (*s, p.as_slice())).collect();
                for (&i, s) in scored.iter().zip(segment_rewards_batch(models, cats, &refs)?) {
                    seg[i] = Some(s);
                }
            }
            ActiveRewards::Coarse => {
                let model = models.coarse.as_ref().expect("checked above");
                let ends: Vec<[usize; 1]> = scored
                    .iter()
                    .map(|&i| [rollouts[i].1.stream.response.end - 1])
                    .collect();
                let queries: Vec<Query<'_>> = scored
                    .iter()
                    .zip(&ends)
                    .map(|(&i, e)| Query {
                        ids: &rollouts[i].1.stream.ids,
                        positions: e,
                    })
                    .collect();
                for (&i, p) in scored.iter().zip(hallucination_probabilities(model, &queries)?) {
                    coarse[i] = Some(p[0]);
                }
            }
            ActiveRewards::Skip => unreachable!("handled above"),
        }

        let mut samples = Vec::with_capacity(rollouts.len());
        let mut advantages = Vec::with_capacity(rollouts.len());
        let (mut reward_sum, mut kl_sum, mut len_sum) = (0.0, 0.0, 0.0);
        for (i, (text, t)) in rollouts.iter().enumerate() {
            let task = trajectory_rewards(
                t,
                text,
                &positions[i],
                seg[i].as_ref(),
                coarse[i],
                &variant.active,
                config.weights,
            )?;
            reward_sum += task.iter().sum::<f64>();
            kl_sum += t
                .logprobs
                .iter()
                .zip(&t.ref_logprobs)
                .map(|(a, b)| a - b)
                .sum::<f64>();
            len_sum += t.stream.response.len() as f64;
            let shaped = apply_kl_penalty(&task, &t.logprobs, &t.ref_logprobs, config.kl_beta);
            let (adv, returns) = compute_gae(&shaped, &t.values, config.gamma, config.lambda);
            advantages.push(adv);
            samples.push(PpoSample {
                context: t.context().to_vec(),
                actions: t.actions.clone(),
                old_logprobs: t.logprobs.clone(),
                advantages: Vec::new(),
                returns,
            });
        }
        normalize_advantages(&mut advantages);
        for (s, a) in samples.iter_mut().zip(advantages) {
            s.advantages = a;
        }
        let stats = ppo_update(
            &mut policy,
            &mut opt,
            &samples,
            config,
            derive_seed(iter_seed, 0x5AFF),
        )?;
        let n = rollouts.len() as f64;
        let mut row = IterationMetrics {
            iteration,
            mean_reward: reward_sum / n,
            mean_kl: kl_sum / n,
            mean_length: len_sum / n,
            clip_fraction: stats.clip_fraction,
            approx_kl: stats.approx_kl,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            chair_s: None,
            chair_i: None,
            per_type_rates: None,
        };
        let due = config.eval_every > 0
            && (iteration % config.eval_every == 0 || iteration == config.iterations);
        if due && !eval_scenes.is_empty() {
            let report = evaluate_policy(&policy, vocab, eval_scenes, &eval_config)?;
            row.chair_s = Some(report.chair_s);
            row.chair_i = Some(report.chair_i);
            row.per_type_rates = Some(report.per_type_rates);
        }
        log::info!(
            "ppo iter {iteration}: reward {:.4} kl {:.4} len {:.1} clip {:.3}",
            row.mean_reward,
            row.mean_kl,
            row.mean_length,
            row.clip_fraction
        );
        metrics.push(row);
    }
    Ok((policy, metrics))
}
