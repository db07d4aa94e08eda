//! Sampling, teacher-forced scoring and trajectories.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::kernels::softmax_in_place;
use crate::nn::{Tape, Var};
use crate::seed::{derive_seed, rng};
use crate::segment::{tokenize, TokenStream};
use crate::vocab::Vocab;

use super::model::{Policy, State};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    Eos,
    LengthCap,
}

/// One sampled response. Per-token arrays run over `actions`, which include
/// the final EOS when one was emitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub stream: TokenStream,
    pub actions: Vec<u32>,
    pub logprobs: Vec<f64>,
    /// Log-probabilities under the frozen reference; equal to `logprobs`
    /// until a reference policy rescoring fills them in.
    pub ref_logprobs: Vec<f64>,
    pub values: Vec<f64>,
    pub terminal: Terminal,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn context(&self) -> &[u32] {
        &self.stream.ids[..self.stream.response.start]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.actions.len();
        if self.logprobs.len() != n || self.ref_logprobs.len() != n || self.values.len() != n {
            return Err(Error::Contract("trajectory arrays differ in length".into()));
        }
        if self
            .logprobs
            .iter()
            .chain(&self.ref_logprobs)
            .chain(&self.values)
            .any(|x| !x.is_finite())
        {
            return Err(Error::NonFinite(
                "trajectory log-probability or value".into(),
            ));
        }
        Ok(())
    }
}

/// Context token ids `[PROMPT, prompt, SCENE_BEGIN, scene, SCENE_END, RESP_BEGIN]`.
pub fn context_ids(prompt: &str, observation: &str, vocab: &Vocab) -> Vec<u32> {
    tokenize(prompt, observation, "", vocab).ids
}

/// Teacher-forced log-probabilities, values and logits at every step of
/// every item. `steps[t]` covers the items still running at step `t`.
pub(crate) struct Forced {
    pub steps: Vec<ForcedStep>,
}

pub(crate) struct ForcedStep {
    /// Item indices of the rows, in row order.
    pub items: Vec<usize>,
    pub logits: Var,
    /// Column of log-probabilities of the forced tokens.
    pub logp: Var,
    pub values: Var,
}

impl Policy {
    fn check_item(&self, context: &[u32], actions: &[u32]) -> Result<()> {
        self.check_context(context)?;
        if actions.len() > self.config.max_response_len {
            return Err(Error::Truncation {
                len: actions.len(),
                max: self.config.max_response_len,
            });
        }
        if let Some(&bad) = actions.iter().find(|&&id| id as usize >= self.vocab_size) {
            return Err(Error::Contract(format!(
                "token id {bad} outside the vocabulary"
            )));
        }
        Ok(())
    }

    /// Runs the decoder over given action sequences. Items are processed in
    /// order of decreasing length so that the running rows form a prefix.
    pub(crate) fn teacher_force(
        &self,
        tape: &mut Tape<'_>,
        items: &[(&[u32], &[u32])],
    ) -> Result<Forced> {
        for (c, a) in items {
            self.check_item(c, a)?;
        }
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.sort_by_key(|&i| std::cmp::Reverse(items[i].1.len()));
        let contexts: Vec<&[u32]> = order.iter().map(|&i| items[i].0).collect();
        let memory = self.encode_memory(tape, &contexts);
        let longest = order.first().map_or(0, |&i| items[i].1.len());
        let mut state = self.initial_state(tape, order.len());
        let mut rows = order.len();
        let mut steps = Vec::with_capacity(longest);
        for t in 0..longest {
            let running = order.iter().take_while(|&&i| items[i].1.len() > t).count();
            if running < rows {
                let keep: Vec<usize> = (0..running).collect();
                state = State {
                    h: tape.select_rows(state.h, &keep),
                    o: tape.select_rows(state.o, &keep),
                };
                rows = running;
            }
            let active = &order[..rows];
            let inputs: Vec<u32> = active
                .iter()
                .map(|&i| {
                    let (c, a) = items[i];
                    if t == 0 {
                        *c.last().expect("non-empty context")
                    } else {
                        a[t - 1]
                    }
                })
                .collect();
            let targets: Vec<usize> = active.iter().map(|&i| items[i].1[t] as usize).collect();
            let out = self.step(tape, &memory, &memory.ranges[..rows], &inputs, state);
            let logp = tape.log_softmax_pick(out.logits, &targets);
            steps.push(ForcedStep {
                items: active.to_vec(),
                logits: out.logits,
                logp,
                values: out.values,
            });
            state = out.state;
        }
        Ok(Forced { steps })
    }
}

/// Per-token log-probabilities and values from a teacher-forced pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub logprobs: Vec<f64>,
    pub values: Vec<f64>,
}

/// Teacher-forced log-probabilities and values of each `(context, actions)`.
pub fn evaluate_logprobs_values(
    policy: &Policy,
    items: &[(&[u32], &[u32])],
) -> Result<Vec<Scored>> {
    let mut tape = Tape::new(&policy.params);
    let forced = policy.teacher_force(&mut tape, items)?;
    let mut out: Vec<Scored> = items
        .iter()
        .map(|(_, a)| Scored {
            logprobs: Vec::with_capacity(a.len()),
            values: Vec::with_capacity(a.len()),
        })
        .collect();
    for step in &forced.steps {
        let (lp, v) = (tape.value(step.logp), tape.value(step.values));
        for (r, &i) in step.items.iter().enumerate() {
            out[i].logprobs.push(lp.data[r]);
            out[i].values.push(v.data[r]);
        }
    }
    Ok(out)
}

/// Next-token distributions of a teacher-forced pass, one row per step.
pub fn next_token_distributions(
    policy: &Policy,
    context: &[u32],
    actions: &[u32],
) -> Result<Vec<Vec<f64>>> {
    let mut tape = Tape::new(&policy.params);
    let forced = policy.teacher_force(&mut tape, &[(context, actions)])?;
    Ok(forced
        .steps
        .iter()
        .map(|s| {
            let mut p = tape.value(s.logits).row(0).to_vec();
            softmax_in_place(&mut p);
            p
        })
        .collect())
}

fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(probs.len() - 1)
}

fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .fold(0, |best, (i, &x)| if x > xs[best] { i } else { best })
}

/// Input of one sampled response.
#[derive(Debug, Clone, Copy)]
pub struct SampleRequest<'a> {
    pub prompt: &'a str,
    pub observation: &'a str,
    /// Seed of this row's sampling stream.
    pub seed: u64,
}

/// Samples a batch of responses in lockstep. Each row draws from its own
/// seeded stream and rows never interact, so a row's result does not depend
/// on the rest of the batch. `temperature == 0` decodes greedily; recorded
/// log-probabilities are always those of the untempered policy.
pub fn sample_batch(
    policy: &Policy,
    vocab: &Vocab,
    requests: &[SampleRequest<'_>],
    temperature: f64,
    max_len: Option<usize>,
) -> Result<Vec<(String, Trajectory)>> {
    if !(temperature >= 0.0) || !temperature.is_finite() {
        return Err(Error::Config(format!("invalid temperature {temperature}")));
    }
    let cap = max_len
        .unwrap_or(policy.config.max_response_len)
        .min(policy.config.max_response_len);
    let contexts: Vec<Vec<u32>> = requests
        .iter()
        .map(|r| context_ids(r.prompt, r.observation, vocab))
        .collect();
    for c in &contexts {
        policy.check_context(c)?;
    }
    let mut rngs: Vec<_> = requests.iter().map(|r| rng(r.seed)).collect();
    let mut actions: Vec<Vec<u32>> = vec![Vec::new(); requests.len()];
    let mut logprobs: Vec<Vec<f64>> = vec![Vec::new(); requests.len()];
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); requests.len()];
    let mut terminal = vec![Terminal::LengthCap; requests.len()];

    let mut tape = Tape::new(&policy.params);
    let refs: Vec<&[u32]> = contexts.iter().map(Vec::as_slice).collect();
    let memory = policy.encode_memory(&mut tape, &refs);
    let mut active: Vec<usize> = (0..requests.len()).collect();
    let mut ranges: Vec<Range<usize>> = memory.ranges.clone();
    let mut state = policy.initial_state(&mut tape, active.len());
    let eos = policy.eos;
    for t in 0..cap {
        if active.is_empty() {
            break;
        }
        let inputs: Vec<u32> = active
            .iter()
            .map(|&i| {
                if t == 0 {
                    *contexts[i].last().expect("non-empty context")
                } else {
                    actions[i][t - 1]
                }
            })
            .collect();
        let out = policy.step(&mut tape, &memory, &ranges, &inputs, state);
        let logits = tape.value(out.logits).clone();
        let mut chosen = Vec::with_capacity(active.len());
        for (r, &i) in active.iter().enumerate() {
            let row = logits.row(r);
            let token = if temperature == 0.0 {
                argmax(row)
            } else {
                let mut p: Vec<f64> = row.iter().map(|x| x / temperature).collect();
                softmax_in_place(&mut p);
                sample_index(&p, rngs[i].random::<f64>())
            };
            chosen.push(token);
        }
        let lp = tape.log_softmax_pick(out.logits, &chosen);
        let (lpv, vv) = (tape.value(lp).clone(), tape.value(out.values).clone());
        let mut keep = Vec::with_capacity(active.len());
        for (r, &i) in active.iter().enumerate() {
            let token = chosen[r] as u32;
            actions[i].push(token);
            logprobs[i].push(lpv.data[r]);
            values[i].push(vv.data[r]);
            if token == eos {
                terminal[i] = Terminal::Eos;
            } else {
                keep.push(r);
            }
        }
        if keep.len() < active.len() {
            state = State {
                h: tape.select_rows(out.state.h, &keep),
                o: tape.select_rows(out.state.o, &keep),
            };
            active = keep.iter().map(|&r| active[r]).collect();
            ranges = keep.iter().map(|&r| ranges[r].clone()).collect();
        } else {
            state = out.state;
        }
    }

    let mut out = Vec::with_capacity(requests.len());
    for (i, req) in requests.iter().enumerate() {
        let body: Vec<u32> = actions[i]
            .iter()
            .copied()
            .take_while(|&a| a != eos)
            .collect();
        let text = body
            .iter()
            .map(|&id| vocab.term(id))
            .collect::<Vec<_>>()
            .join(" ");
        let stream = tokenize(req.prompt, req.observation, &text, vocab);
        debug_assert_eq!(&stream.ids[stream.response.clone()], &body[..]);
        let traj = Trajectory {
            stream,
            ref_logprobs: logprobs[i].clone(),
            actions: std::mem::take(&mut actions[i]),
            logprobs: std::mem::take(&mut logprobs[i]),
            values: std::mem::take(&mut values[i]),
            terminal: terminal[i],
        };
        out.push((text, traj));
    }
    Ok(out)
}

/// Samples one response.
pub fn sample_response(
    policy: &Policy,
    vocab: &Vocab,
    observation: &str,
    prompt: &str,
    temperature: f64,
    seed: u64,
) -> Result<(String, Trajectory)> {
    Ok(sample_batch(
        policy,
        vocab,
        &[SampleRequest {
            prompt,
            observation,
            seed,
        }],
        temperature,
        None,
    )?
    .remove(0))
}

/// Per-row seeds for a batch sampled under `seed`.
pub fn row_seed(seed: u64, row: usize) -> u64 {
    derive_seed(seed, row as u64)
}
