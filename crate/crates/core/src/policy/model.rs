//! Grounded captioning policy: a GRU decoder with input feeding and
//! multi-head attention over an encoded `[prompt, scene]` memory, plus a
//! scalar value head on the (detached) output features. A gated copy head
//! adds attention mass over context tokens to the vocabulary logits.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CHECKPOINT_SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::hash::vocab_fingerprint;
use crate::nn::{Init, ParamId, Params, Tape, Tensor, Var};
use crate::seed::rng;
use crate::vocab::Vocab;

pub const POLICY_KIND: &str = "policy";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub embed_dim: usize,
    /// Causal window of the memory encoder.
    pub mem_window: usize,
    pub mem_dim: usize,
    /// Width of the fixed sinusoidal position code appended to memory rows.
    pub pos_dim: usize,
    pub hidden: usize,
    pub heads: usize,
    pub max_response_len: usize,
    /// Longest accepted `[prompt, scene]` context.
    pub max_context_len: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            embed_dim: 24,
            mem_window: 8,
            mem_dim: 48,
            pos_dim: 16,
            hidden: 64,
            heads: 4,
            max_response_len: 128,
            max_context_len: 96,
        }
    }
}

pub const PARAM_BUDGET: usize = 100_000;

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            self.embed_dim,
            self.mem_window,
            self.mem_dim,
            self.hidden,
            self.heads,
            self.max_response_len,
            self.max_context_len,
        ];
        if sizes.contains(&0) {
            return Err(Error::Config("policy sizes must be positive".into()));
        }
        if self.pos_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "position code width {} must be even",
                self.pos_dim
            )));
        }
        if self.mem_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "memory width {} is not divisible by {} heads",
                self.mem_dim, self.heads
            )));
        }
        Ok(())
    }

    /// Closed-form parameter count.
    pub fn param_count(&self, vocab_size: usize) -> usize {
        let (v, e, w, m, h) = (
            vocab_size,
            self.embed_dim,
            self.mem_window,
            self.mem_dim,
            self.hidden,
        );
        v * e
            + (w * e * m + m)
            + 2 * (m + self.pos_dim) * m
            + (e + h) * 3 * h
            + h * 2 * h
            + h * h
            + 3 * h
            + h * m
            + ((h + m) * h + h)
            + (h * v + v)
            + (h + 1)
            + (h * m + h + 1)
    }
}

const LAYOUT: [&str; 19] = [
    "emb", "mem_w", "mem_b", "mem_k", "mem_v", "gru_w", "gru_u", "gru_un", "gru_b", "att_q",
    "out_w", "out_b", "tok_w", "tok_b", "val_w", "val_b", "copy_q", "copy_g", "copy_gb",
];

#[derive(Debug, Clone, Copy)]
struct Layout {
    emb: ParamId,
    mem_w: ParamId,
    mem_b: ParamId,
    mem_k: ParamId,
    mem_v: ParamId,
    gru_w: ParamId,
    gru_u: ParamId,
    gru_un: ParamId,
    gru_b: ParamId,
    att_q: ParamId,
    out_w: ParamId,
    out_b: ParamId,
    tok_w: ParamId,
    tok_b: ParamId,
    val_w: ParamId,
    val_b: ParamId,
    copy_q: ParamId,
    copy_g: ParamId,
    copy_gb: ParamId,
}

impl Layout {
    fn resolve(params: &Params) -> Result<Self> {
        let id = |i: usize| {
            params
                .id(LAYOUT[i])
                .ok_or_else(|| Error::Config(format!("policy parameters lack {:?}", LAYOUT[i])))
        };
        Ok(Self {
            emb: id(0)?,
            mem_w: id(1)?,
            mem_b: id(2)?,
            mem_k: id(3)?,
            mem_v: id(4)?,
            gru_w: id(5)?,
            gru_u: id(6)?,
            gru_un: id(7)?,
            gru_b: id(8)?,
            att_q: id(9)?,
            out_w: id(10)?,
            out_b: id(11)?,
            tok_w: id(12)?,
            tok_b: id(13)?,
            val_w: id(14)?,
            val_b: id(15)?,
            copy_q: id(16)?,
            copy_g: id(17)?,
            copy_gb: id(18)?,
        })
    }
}

/// Encoded memory of a batch, reused across decoder steps.
pub(crate) struct Memory {
    pub keys: Var,
    pub values: Var,
    /// One-hot context token ids, the values of the copy head.
    pub tokens: Var,
    /// Memory rows of each sequence in the batch.
    pub ranges: Vec<std::ops::Range<usize>>,
}

/// Recurrent state of the active rows.
#[derive(Clone, Copy)]
pub(crate) struct State {
    pub h: Var,
    pub o: Var,
}

pub(crate) struct StepOut {
    pub state: State,
    pub logits: Var,
    pub values: Var,
}

pub struct Policy {
    pub config: PolicyConfig,
    pub vocab_fingerprint: String,
    pub vocab_size: usize,
    pub eos: u32,
    pub params: Params,
    pub training_config_hash: Option<String>,
    layout: Layout,
}

impl fmt::Debug for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Policy")
            .field("config", &self.config)
            .field("params", &self.params.count())
            .finish()
    }
}

impl Clone for Policy {
    fn clone(&self) -> Self {
        Self {
            config: self.config,
            vocab_fingerprint: self.vocab_fingerprint.clone(),
            vocab_size: self.vocab_size,
            eos: self.eos,
            params: self.params.clone(),
            training_config_hash: self.training_config_hash.clone(),
            layout: self.layout,
        }
    }
}

/// Sinusoidal codes of each row's offset inside its own context.
fn position_codes(contexts: &[&[u32]], width: usize) -> Tensor {
    let rows: usize = contexts.iter().map(|c| c.len()).sum();
    let mut data = Vec::with_capacity(rows * width);
    for c in contexts {
        for pos in 0..c.len() {
            for i in 0..width / 2 {
                let angle = pos as f64 / 100f64.powf(2.0 * i as f64 / width as f64);
                data.push(angle.sin());
                data.push(angle.cos());
            }
        }
    }
    Tensor::from_vec(rows, width, data)
}

impl Policy {
    /// Deterministic initialization. The token and value output layers start
    /// at zero, so an untrained policy is uniform over the vocabulary.
    pub fn new(config: PolicyConfig, vocab: &Vocab, seed: u64) -> Result<Self> {
        config.validate()?;
        let count = config.param_count(vocab.len());
        if count > PARAM_BUDGET {
            log::warn!("policy has {count} parameters, above the {PARAM_BUDGET} budget");
        }
        let (v, e, w, m, h) = (
            vocab.len(),
            config.embed_dim,
            config.mem_window,
            config.mem_dim,
            config.hidden,
        );
        let mut r = rng(seed);
        let mut p = Params::default();
        p.add(LAYOUT[0], v, e, Init::Uniform(0.5), &mut r);
        p.add(LAYOUT[1], w * e, m, Init::Xavier, &mut r);
        p.add(LAYOUT[2], 1, m, Init::Zeros, &mut r);
        let mp = m + config.pos_dim;
        p.add(LAYOUT[3], mp, m, Init::Xavier, &mut r);
        p.add(LAYOUT[4], mp, m, Init::Xavier, &mut r);
        p.add(LAYOUT[5], e + h, 3 * h, Init::Xavier, &mut r);
        p.add(LAYOUT[6], h, 2 * h, Init::Xavier, &mut r);
        p.add(LAYOUT[7], h, h, Init::Xavier, &mut r);
        p.add(LAYOUT[8], 1, 3 * h, Init::Zeros, &mut r);
        p.add(LAYOUT[9], h, m, Init::Xavier, &mut r);
        p.add(LAYOUT[10], h + m, h, Init::Xavier, &mut r);
        p.add(LAYOUT[11], 1, h, Init::Zeros, &mut r);
        p.add(LAYOUT[12], h, v, Init::Zeros, &mut r);
        p.add(LAYOUT[13], 1, v, Init::Zeros, &mut r);
        p.add(LAYOUT[14], h, 1, Init::Zeros, &mut r);
        p.add(LAYOUT[15], 1, 1, Init::Zeros, &mut r);
        p.add(LAYOUT[16], h, m, Init::Xavier, &mut r);
        p.add(LAYOUT[17], h, 1, Init::Zeros, &mut r);
        p.add(LAYOUT[18], 1, 1, Init::Zeros, &mut r);
        let layout = Layout::resolve(&p)?;
        Ok(Self {
            config,
            vocab_fingerprint: vocab_fingerprint(vocab),
            vocab_size: v,
            eos: vocab.eos(),
            params: p,
            training_config_hash: None,
            layout,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Whether `id` names one of the value-head tensors.
    pub fn is_value_head(&self, id: ParamId) -> bool {
        id == self.layout.val_w || id == self.layout.val_b
    }

    pub fn check_vocab(&self, vocab: &Vocab) -> Result<()> {
        if self.vocab_fingerprint != vocab_fingerprint(vocab) {
            return Err(Error::Config(
                "policy was trained with a different vocabulary".into(),
            ));
        }
        Ok(())
    }

    pub(crate) fn check_context(&self, ids: &[u32]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::Contract("empty policy context".into()));
        }
        if ids.len() > self.config.max_context_len {
            return Err(Error::Truncation {
                len: ids.len(),
                max: self.config.max_context_len,
            });
        }
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= self.vocab_size) {
            return Err(Error::Contract(format!(
                "token id {bad} outside the vocabulary"
            )));
        }
        Ok(())
    }

    /// Encodes the contexts of a batch into attention keys and values. The
    /// last context token is the decoder's first input.
    pub(crate) fn encode_memory(&self, tape: &mut Tape<'_>, contexts: &[&[u32]]) -> Memory {
        let l = &self.layout;
        let mut ids = Vec::new();
        let mut starts = Vec::new();
        let mut ranges = Vec::with_capacity(contexts.len());
        for c in contexts {
            let start = ids.len();
            ids.extend_from_slice(c);
            starts.extend(std::iter::repeat_n(start, c.len()));
            ranges.push(start..ids.len());
        }
        let emb = tape.param(l.emb);
        let x = tape.embed_window(emb, &ids, &starts, self.config.mem_window);
        let (w, b) = (tape.param(l.mem_w), tape.param(l.mem_b));
        let m = tape.linear(x, w, b);
        let m = tape.tanh(m);
        let m = if self.config.pos_dim > 0 {
            let codes = position_codes(contexts, self.config.pos_dim);
            let codes = tape.constant(codes);
            tape.concat(m, codes)
        } else {
            m
        };
        let (wk, wv) = (tape.param(l.mem_k), tape.param(l.mem_v));
        let keys = tape.matmul(m, wk);
        let values = tape.matmul(m, wv);
        let mut onehot = Tensor::zeros(ids.len(), self.vocab_size);
        for (row, &id) in ids.iter().enumerate() {
            onehot.data[row * self.vocab_size + id as usize] = 1.0;
        }
        let tokens = tape.constant(onehot);
        Memory {
            keys,
            values,
            tokens,
            ranges,
        }
    }

    pub(crate) fn initial_state(&self, tape: &mut Tape<'_>, rows: usize) -> State {
        let h = tape.constant(Tensor::zeros(rows, self.config.hidden));
        let o = tape.constant(Tensor::zeros(rows, self.config.hidden));
        State { h, o }
    }

    /// One decoder step for the rows whose memory ranges are `ranges`.
    pub(crate) fn step(
        &self,
        tape: &mut Tape<'_>,
        memory: &Memory,
        ranges: &[std::ops::Range<usize>],
        inputs: &[u32],
        state: State,
    ) -> StepOut {
        let l = &self.layout;
        let hd = self.config.hidden;
        let emb = tape.param(l.emb);
        let e = tape.gather(emb, inputs);
        let x = tape.concat(e, state.o);
        let (gw, gu, gun, gb) = (
            tape.param(l.gru_w),
            tape.param(l.gru_u),
            tape.param(l.gru_un),
            tape.param(l.gru_b),
        );
        let gx = tape.linear(x, gw, gb);
        let gh = tape.matmul(state.h, gu);
        let gx_zr = tape.col_slice(gx, 0, 2 * hd);
        let zr = tape.add(gx_zr, gh);
        let zr = tape.sigmoid(zr);
        let z = tape.col_slice(zr, 0, hd);
        let r = tape.col_slice(zr, hd, hd);
        let rh = tape.mul(r, state.h);
        let nh = tape.matmul(rh, gun);
        let nx = tape.col_slice(gx, 2 * hd, hd);
        let n = tape.add(nx, nh);
        let n = tape.tanh(n);
        let diff = tape.sub(state.h, n);
        let zd = tape.mul(z, diff);
        let h = tape.add(n, zd);

        let wq = tape.param(l.att_q);
        let q = tape.matmul(h, wq);
        let c = tape.attend(q, memory.keys, memory.values, ranges, self.config.heads);
        let hc = tape.concat(h, c);
        let (ow, ob) = (tape.param(l.out_w), tape.param(l.out_b));
        let o = tape.linear(hc, ow, ob);
        let o = tape.tanh(o);
        let (tw, tb) = (tape.param(l.tok_w), tape.param(l.tok_b));
        let logits = tape.linear(o, tw, tb);
        let cq = tape.param(l.copy_q);
        let cq = tape.matmul(o, cq);
        let copy = tape.attend(cq, memory.keys, memory.tokens, ranges, 1);
        let (gw, gb) = (tape.param(l.copy_g), tape.param(l.copy_gb));
        let gate = tape.linear(o, gw, gb);
        let ones = tape.constant(Tensor::from_vec(1, self.vocab_size, vec![1.0; self.vocab_size]));
        let gate = tape.matmul(gate, ones);
        let bonus = tape.mul(gate, copy);
        let logits = tape.add(logits, bonus);
        let od = tape.detach(o);
        let (vw, vb) = (tape.param(l.val_w), tape.param(l.val_b));
        let values = tape.linear(od, vw, vb);
        StepOut {
            state: State { h, o },
            logits,
            values,
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint<PolicyConfig> {
        Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            kind: POLICY_KIND.into(),
            config: self.config,
            vocab_fingerprint: self.vocab_fingerprint.clone(),
            params: self.params.clone(),
            training_config_hash: self.training_config_hash.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint<PolicyConfig>, vocab: &Vocab) -> Result<Self> {
        if ckpt.kind != POLICY_KIND {
            return Err(Error::Config(format!(
                "{:?} is not a policy checkpoint",
                ckpt.kind
            )));
        }
        let fresh = Policy::new(ckpt.config, vocab, 0)?;
        fresh.params.check_layout(&ckpt.params)?;
        let policy = Self {
            config: ckpt.config,
            vocab_fingerprint: ckpt.vocab_fingerprint,
            vocab_size: vocab.len(),
            eos: vocab.eos(),
            layout: Layout::resolve(&ckpt.params)?,
            params: ckpt.params,
            training_config_hash: ckpt.training_config_hash,
        };
        policy.check_vocab(vocab)?;
        Ok(policy)
    }

    pub fn checkpoint_id(&self) -> Result<String> {
        self.to_checkpoint().id()
    }
}
