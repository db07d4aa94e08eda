//! Segment reward model: a causal sequence encoder over the full
//! `[prompt, scene, response]` stream and a two-layer classifier applied to
//! the feature of each sub-sentence's last token.
//!
//! Encoder: a causal window of token embeddings is projected to the hidden
//! width (`tanh`), then multi-head attention from each position over its
//! prefix adds a context vector. The feature at position `t` is
//! `[h_t ; c_t ; h_t ⊙ c_t]`; the product term lets the head compare a
//! segment with the scene content it attended to.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::annotate::facts::Category;
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::hash::vocab_fingerprint;
use crate::nn::kernels::softmax_in_place;
use crate::nn::{Init, ParamId, Params, Tape, Tensor, Var};
use crate::seed::rng;
use crate::segment::TokenStream;
use crate::vocab::Vocab;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum RewardKind {
    Fine(Category),
    Coarse,
}

impl RewardKind {
    pub const FINE: [RewardKind; 3] = [
        RewardKind::Fine(Category::Existence),
        RewardKind::Fine(Category::Attribute),
        RewardKind::Fine(Category::Relation),
    ];

    pub fn code(self) -> &'static str {
        match self {
            RewardKind::Fine(c) => c.code(),
            RewardKind::Coarse => "coarse",
        }
    }

    pub fn parse(code: &str) -> Result<Self> {
        match code {
            "coarse" => Ok(RewardKind::Coarse),
            other => Category::from_code(other)
                .map(RewardKind::Fine)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "unknown reward category {other:?} (expected o, a, r or coarse)"
                    ))
                }),
        }
    }

    /// 3 for typed models (faithful, hallucinated, no fact), 2 for coarse.
    pub fn classes(self) -> usize {
        match self {
            RewardKind::Fine(_) => 3,
            RewardKind::Coarse => 2,
        }
    }

    pub fn checkpoint_kind(self) -> String {
        format!("reward-{}", self.code())
    }
}

impl fmt::Display for RewardKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl TryFrom<String> for RewardKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        RewardKind::parse(&s)
    }
}

impl From<RewardKind> for String {
    fn from(k: RewardKind) -> String {
        k.code().to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardModelConfig {
    pub embed_dim: usize,
    pub window: usize,
    pub hidden: usize,
    pub heads: usize,
    /// Longest accepted token stream.
    pub max_len: usize,
}

impl Default for RewardModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 16,
            window: 8,
            hidden: 32,
            heads: 4,
            max_len: 256,
        }
    }
}

impl RewardModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0
            || self.window == 0
            || self.hidden == 0
            || self.heads == 0
            || self.max_len == 0
        {
            return Err(Error::Config("reward model sizes must be positive".into()));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden width {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        Ok(())
    }

    /// Closed-form parameter count.
    pub fn param_count(&self, vocab_size: usize, classes: usize) -> usize {
        let (d, w, h) = (self.embed_dim, self.window, self.hidden);
        vocab_size * d + (w * d * h + h) + 3 * h * h + (3 * h * h + h) + (h * classes + classes)
    }
}

struct Layout {
    emb: ParamId,
    conv_w: ParamId,
    conv_b: ParamId,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

const LAYOUT: [&str; 10] = [
    "emb", "conv_w", "conv_b", "wq", "wk", "wv", "head_w1", "head_b1", "head_w2", "head_b2",
];

impl Layout {
    fn resolve(params: &Params) -> Result<Self> {
        let id = |n: &str| {
            params
                .id(n)
                .ok_or_else(|| Error::Config(format!("reward model parameters lack {n:?}")))
        };
        Ok(Self {
            emb: id(LAYOUT[0])?,
            conv_w: id(LAYOUT[1])?,
            conv_b: id(LAYOUT[2])?,
            wq: id(LAYOUT[3])?,
            wk: id(LAYOUT[4])?,
            wv: id(LAYOUT[5])?,
            w1: id(LAYOUT[6])?,
            b1: id(LAYOUT[7])?,
            w2: id(LAYOUT[8])?,
            b2: id(LAYOUT[9])?,
        })
    }
}

/// One stream and the positions at which to classify.
#[derive(Debug, Clone, Copy)]
pub struct Query<'a> {
    pub ids: &'a [u32],
    pub positions: &'a [usize],
}

pub struct RewardModel {
    pub kind: RewardKind,
    pub config: RewardModelConfig,
    pub vocab_fingerprint: String,
    pub vocab_size: usize,
    pub params: Params,
    pub training_config_hash: Option<String>,
    layout: Layout,
}

impl fmt::Debug for RewardModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RewardModel")
            .field("kind", &self.kind)
            .field("config", &self.config)
            .field("params", &self.params.count())
            .finish()
    }
}

impl Clone for RewardModel {
    fn clone(&self) -> Self {
        Self {
            kind: self.kind,
            config: self.config,
            vocab_fingerprint: self.vocab_fingerprint.clone(),
            vocab_size: self.vocab_size,
            params: self.params.clone(),
            training_config_hash: self.training_config_hash.clone(),
            layout: Layout::resolve(&self.params).expect("layout of a valid model"),
        }
    }
}

impl RewardModel {
    /// Xavier-initialized encoder with a zero output layer, so an untrained
    /// model predicts the uniform distribution.
    pub fn new(
        kind: RewardKind,
        config: RewardModelConfig,
        vocab: &Vocab,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut r = rng(seed);
        let mut p = Params::default();
        let (d, w, h, c) = (
            config.embed_dim,
            config.window,
            config.hidden,
            kind.classes(),
        );
        p.add(LAYOUT[0], vocab.len(), d, Init::Uniform(0.5), &mut r);
        p.add(LAYOUT[1], w * d, h, Init::Xavier, &mut r);
        p.add(LAYOUT[2], 1, h, Init::Zeros, &mut r);
        p.add(LAYOUT[3], h, h, Init::Xavier, &mut r);
        p.add(LAYOUT[4], h, h, Init::Xavier, &mut r);
        p.add(LAYOUT[5], h, h, Init::Xavier, &mut r);
        p.add(LAYOUT[6], 3 * h, h, Init::Xavier, &mut r);
        p.add(LAYOUT[7], 1, h, Init::Zeros, &mut r);
        p.add(LAYOUT[8], h, c, Init::Zeros, &mut r);
        p.add(LAYOUT[9], 1, c, Init::Zeros, &mut r);
        let layout = Layout::resolve(&p)?;
        Ok(Self {
            kind,
            config,
            vocab_fingerprint: vocab_fingerprint(vocab),
            vocab_size: vocab.len(),
            params: p,
            training_config_hash: None,
            layout,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    pub fn check_vocab(&self, vocab: &Vocab) -> Result<()> {
        if self.vocab_fingerprint != vocab_fingerprint(vocab) {
            return Err(Error::Config(format!(
                "reward model {} was trained with a different vocabulary",
                self.kind
            )));
        }
        Ok(())
    }

    fn check_query(&self, q: &Query<'_>) -> Result<()> {
        if q.ids.len() > self.config.max_len {
            return Err(Error::Truncation {
                len: q.ids.len(),
                max: self.config.max_len,
            });
        }
        if let Some(&bad) = q.ids.iter().find(|&&id| id as usize >= self.vocab_size) {
            return Err(Error::Contract(format!(
                "token id {bad} outside the vocabulary"
            )));
        }
        if let Some(&bad) = q.positions.iter().find(|&&p| p >= q.ids.len()) {
            return Err(Error::Contract(format!(
                "index {bad} outside a stream of {} tokens",
                q.ids.len()
            )));
        }
        Ok(())
    }

    /// Features at the query positions of every stream, stacked in order.
    pub fn features(&self, tape: &mut Tape<'_>, queries: &[Query<'_>]) -> Result<Var> {
        for q in queries {
            self.check_query(q)?;
        }
        let l = &self.layout;
        let mut ids = Vec::new();
        let mut starts = Vec::new();
        let mut rows = Vec::new();
        let mut ranges = Vec::new();
        for q in queries {
            let offset = ids.len();
            ids.extend_from_slice(q.ids);
            starts.extend(std::iter::repeat_n(offset, q.ids.len()));
            for &p in q.positions {
                rows.push(offset + p);
                ranges.push(offset..offset + p + 1);
            }
        }
        let emb = tape.param(l.emb);
        let x = tape.embed_window(emb, &ids, &starts, self.config.window);
        let (cw, cb) = (tape.param(l.conv_w), tape.param(l.conv_b));
        let h = tape.linear(x, cw, cb);
        let h = tape.tanh(h);
        let (wq, wk, wv) = (tape.param(l.wq), tape.param(l.wk), tape.param(l.wv));
        let k = tape.matmul(h, wk);
        let v = tape.matmul(h, wv);
        let hs = tape.select_rows(h, &rows);
        let q = tape.matmul(hs, wq);
        let c = tape.attend(q, k, v, &ranges, self.config.heads);
        let hc = tape.mul(hs, c);
        let f = tape.concat(hs, c);
        Ok(tape.concat(f, hc))
    }

    /// Classifier logits at the query positions.
    pub fn logits(&self, tape: &mut Tape<'_>, queries: &[Query<'_>]) -> Result<Var> {
        let f = self.features(tape, queries)?;
        let l = &self.layout;
        let (w1, b1, w2, b2) = (
            tape.param(l.w1),
            tape.param(l.b1),
            tape.param(l.w2),
            tape.param(l.b2),
        );
        let z = tape.linear(f, w1, b1);
        let z = tape.tanh(z);
        Ok(tape.linear(z, w2, b2))
    }

    /// Per-position feature vectors of a whole stream.
    pub fn encode(&self, stream: &TokenStream) -> Result<Tensor> {
        let positions: Vec<usize> = (0..stream.ids.len()).collect();
        let mut tape = Tape::new(&self.params);
        let f = self.features(
            &mut tape,
            &[Query {
                ids: &stream.ids,
                positions: &positions,
            }],
        )?;
        Ok(tape.value(f).clone())
    }

    /// Class probabilities at each query position, one list per query.
    pub fn predict(&self, queries: &[Query<'_>]) -> Result<Vec<Vec<Vec<f64>>>> {
        let mut tape = Tape::new(&self.params);
        let logits = self.logits(&mut tape, queries)?;
        let t = tape.value(logits);
        let mut out = Vec::with_capacity(queries.len());
        let mut row = 0;
        for q in queries {
            let mut per = Vec::with_capacity(q.positions.len());
            for _ in q.positions {
                let mut p = t.row(row).to_vec();
                softmax_in_place(&mut p);
                per.push(p);
                row += 1;
            }
            out.push(per);
        }
        Ok(out)
    }

    /// Class probabilities at each sub-sentence end `{ind_j}`.
    pub fn predict_segment_labels(
        &self,
        stream: &TokenStream,
        indices: &[usize],
    ) -> Result<Vec<Vec<f64>>> {
        if let Some(&bad) = indices.iter().find(|&&i| !stream.response.contains(&i)) {
            return Err(Error::Contract(format!(
                "index {bad} outside the response region {:?}",
                stream.response
            )));
        }
        Ok(self
            .predict(&[Query {
                ids: &stream.ids,
                positions: indices,
            }])?
            .remove(0))
    }

    pub fn to_checkpoint(&self) -> Checkpoint<RewardModelConfig> {
        Checkpoint {
            schema_version: crate::checkpoint::CHECKPOINT_SCHEMA_VERSION,
            kind: self.kind.checkpoint_kind(),
            config: self.config,
            vocab_fingerprint: self.vocab_fingerprint.clone(),
            params: self.params.clone(),
            training_config_hash: self.training_config_hash.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint<RewardModelConfig>, vocab: &Vocab) -> Result<Self> {
        let code = ckpt.kind.strip_prefix("reward-").ok_or_else(|| {
            Error::Config(format!("{:?} is not a reward model checkpoint", ckpt.kind))
        })?;
        let kind = RewardKind::parse(code)?;
        let fresh = RewardModel::new(kind, ckpt.config, vocab, 0)?;
        fresh.params.check_layout(&ckpt.params)?;
        let model = Self {
            kind,
            config: ckpt.config,
            vocab_fingerprint: ckpt.vocab_fingerprint,
            vocab_size: vocab.len(),
            layout: Layout::resolve(&ckpt.params)?,
            params: ckpt.params,
            training_config_hash: ckpt.training_config_hash,
        };
        model.check_vocab(vocab)?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::templates::SAMPLING_PROMPT;
    use crate::segment::segment;
    use crate::vocab::VocabularyConfig;

    fn setup() -> (Vocab, TokenStream, Vec<usize>) {
        let v = Vocab::new(VocabularyConfig::default()).unwrap();
        let (stream, spans) = segment(
            SAMPLING_PROMPT,
            "dog red - , ball - - , dog left_of ball ;",
            "there is a red dog . the dog is left_of the ball .",
            &v,
        )
        .unwrap();
        let idx = spans.iter().map(|s| s.last_token_index).collect();
        (v, stream, idx)
    }

    #[test]
    fn shapes_count_and_uniform_init() {
        let (v, stream, idx) = setup();
        let cfg = RewardModelConfig::default();
        let m = RewardModel::new(RewardKind::Fine(Category::Attribute), cfg, &v, 1).unwrap();
        assert_eq!(m.param_count(), cfg.param_count(v.len(), 3));
        let f = m.encode(&stream).unwrap();
        assert_eq!(f.rows, stream.ids.len());
        assert_eq!(f, m.encode(&stream.clone()).unwrap());
        for p in m.predict_segment_labels(&stream, &idx).unwrap() {
            assert!(p.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-12));
        }
    }

    #[test]
    fn causal_sensitivity() {
        let (v, stream, _) = setup();
        let m = RewardModel::new(RewardKind::Coarse, RewardModelConfig::default(), &v, 2).unwrap();
        let base = m.encode(&stream).unwrap();
        let at = stream.response.start + 3;
        let mut perturbed = stream.clone();
        perturbed.ids[at] = v.id("blue").unwrap();
        let f = m.encode(&perturbed).unwrap();
        for t in 0..stream.ids.len() {
            let same = base.row(t) == f.row(t);
            assert_eq!(same, t < at, "position {t}");
        }
    }

    #[test]
    fn length_and_index_contracts() {
        let (v, stream, _) = setup();
        let cfg = RewardModelConfig {
            max_len: 10,
            ..Default::default()
        };
        let m = RewardModel::new(RewardKind::Coarse, cfg, &v, 0).unwrap();
        assert!(matches!(m.encode(&stream), Err(Error::Truncation { .. })));
        let m = RewardModel::new(RewardKind::Coarse, RewardModelConfig::default(), &v, 0).unwrap();
        assert!(matches!(
            m.predict_segment_labels(&stream, &[stream.ids.len()]),
            Err(Error::Contract(_))
        ));
    }
}
