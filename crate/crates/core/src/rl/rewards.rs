//! Dense token rewards, KL shaping and advantage estimation.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::annotate::facts::Category;
use crate::error::{Error, Result};
use crate::reward::SegmentRewards;

/// Per-category reward weights `w_l`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub o: f64,
    pub a: f64,
    pub r: f64,
    /// Weight of the coarse sequence-level reward.
    pub coarse: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            o: 1.0,
            a: 1.0,
            r: 1.0,
            coarse: 1.0,
        }
    }
}

impl RewardWeights {
    pub fn get(&self, category: Category) -> f64 {
        match category {
            Category::Existence => self.o,
            Category::Attribute => self.a,
            Category::Relation => self.r,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Fgaif,
    WoObj,
    WoAtt,
    WoRel,
    WoAif,
    WCoarse,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Fgaif,
        Variant::WoObj,
        Variant::WoAtt,
        Variant::WoRel,
        Variant::WoAif,
        Variant::WCoarse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Fgaif => "fgaif",
            Variant::WoObj => "wo_obj",
            Variant::WoAtt => "wo_att",
            Variant::WoRel => "wo_rel",
            Variant::WoAif => "wo_aif",
            Variant::WCoarse => "w_coarse",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == name)
            .ok_or_else(|| Error::UnknownVariant {
                name: name.to_string(),
                valid: Variant::ALL.map(Variant::name).join(", "),
            })
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which reward signal drives RL.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActiveRewards {
    /// Typed segment rewards for the listed categories (possibly none).
    Fine(Vec<Category>),
    /// One sequence-level reward at the final response token.
    Coarse,
    /// RL is skipped and the SFT policy is returned unchanged.
    Skip,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedVariant {
    pub variant: Variant,
    pub active: ActiveRewards,
}

pub fn select_variant(name: &str) -> Result<ResolvedVariant> {
    let variant = Variant::parse(name)?;
    let without = |c: Category| {
        ActiveRewards::Fine(Category::ALL.into_iter().filter(|&x| x != c).collect())
    };
    let active = match variant {
        Variant::Fgaif => ActiveRewards::Fine(Category::ALL.to_vec()),
        Variant::WoObj => without(Category::Existence),
        Variant::WoAtt => without(Category::Attribute),
        Variant::WoRel => without(Category::Relation),
        Variant::WoAif => ActiveRewards::Skip,
        Variant::WCoarse => ActiveRewards::Coarse,
    };
    Ok(ResolvedVariant { variant, active })
}

/// Per-token rewards over a response, before KL shaping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRewardVector {
    pub values: Vec<f64>,
    /// Segment end positions `T_i`, relative to the response start.
    pub positions: Vec<usize>,
    pub weights: RewardWeights,
}

impl TokenRewardVector {
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// `r_t = −Σ_l Σ_i 𝕀(t = T_i) w_l r_l^i` over the active categories.
/// `len` may exceed the last position (e.g. a trailing EOS action).
pub fn assemble_token_rewards(
    seg: &SegmentRewards,
    positions: &[usize],
    weights: RewardWeights,
    active: &[Category],
    len: usize,
) -> Result<TokenRewardVector> {
    for w in positions.windows(2) {
        if w[0] >= w[1] {
            return Err(Error::Contract(format!(
                "segment positions must be strictly increasing, got {} then {}",
                w[0], w[1]
            )));
        }
    }
    if let Some(&p) = positions.iter().find(|&&p| p >= len) {
        return Err(Error::Contract(format!(
            "segment position {p} outside a response of {len} tokens"
        )));
    }
    let mut values = vec![0.0; len];
    for &cat in active {
        let r = seg.get(cat).ok_or_else(|| {
            Error::Config(format!("no segment rewards for active category {cat}"))
        })?;
        if r.len() != positions.len() {
            return Err(Error::Contract(format!(
                "{} rewards for {} segments in category {cat}",
                r.len(),
                positions.len()
            )));
        }
        let w = weights.get(cat);
        for (&p, &ri) in positions.iter().zip(r) {
            values[p] -= w * ri;
        }
    }
    Ok(TokenRewardVector {
        values,
        positions: positions.to_vec(),
        weights,
    })
}

/// Coarse reward `−w · r` placed at the final response token.
pub fn assemble_coarse_rewards(
    r: f64,
    final_position: usize,
    weights: RewardWeights,
    len: usize,
) -> Result<TokenRewardVector> {
    if final_position >= len {
        return Err(Error::Contract(format!(
            "final position {final_position} outside a response of {len} tokens"
        )));
    }
    let mut values = vec![0.0; len];
    values[final_position] = -weights.coarse * r;
    Ok(TokenRewardVector {
        values,
        positions: vec![final_position],
        weights,
    })
}

/// `r'_t = r_t − β (log π(a_t) − log π_ref(a_t))`.
pub fn apply_kl_penalty(rewards: &[f64], logp: &[f64], ref_logp: &[f64], beta: f64) -> Vec<f64> {
    assert_eq!(rewards.len(), logp.len());
    assert_eq!(rewards.len(), ref_logp.len());
    rewards
        .iter()
        .zip(logp.iter().zip(ref_logp))
        .map(|(r, (lp, rp))| r - beta * (lp - rp))
        .collect()
}

/// Generalized advantage estimation with a zero terminal bootstrap.
pub fn compute_gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(rewards.len(), values.len());
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_value = 0.0;
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let delta = rewards[t] + gamma * next_value - values[t];
        acc = delta + gamma * lambda * acc;
        adv[t] = acc;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Normalizes all advantages of a batch to mean 0 and standard deviation 1.
pub fn normalize_advantages(batch: &mut [Vec<f64>]) {
    let n: usize = batch.iter().map(Vec::len).sum();
    if n == 0 {
        return;
    }
    let mean = batch.iter().flatten().sum::<f64>() / n as f64;
    let var = batch.iter().flatten().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt().max(1e-8);
    for a in batch.iter_mut().flatten() {
        *a = (*a - mean) / std;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(o: Vec<f64>, a: Vec<f64>, r: Vec<f64>) -> SegmentRewards {
        SegmentRewards {
            by_category: [Some(o), Some(a), Some(r)],
        }
    }

    #[test]
    fn worked_reward_example() {
        let s = seg(vec![0.2, 0.8], vec![0.1, 0.0], vec![0.0, 0.3]);
        let v = assemble_token_rewards(&s, &[5, 11], RewardWeights::default(), &Category::ALL, 14)
            .unwrap();
        for (t, x) in v.values.iter().enumerate() {
            let expect = match t {
                5 => -0.3,
                11 => -1.1,
                _ => 0.0,
            };
            assert!((x - expect).abs() < 1e-12, "t={t}: {x}");
        }
    }

    #[test]
    fn zero_and_ablated_rewards() {
        let s = seg(vec![0.0; 3], vec![0.0; 3], vec![0.0; 3]);
        let v = assemble_token_rewards(&s, &[1, 2, 4], RewardWeights::default(), &Category::ALL, 6)
            .unwrap();
        assert!(v.values.iter().all(|&x| x == 0.0));
        let s = seg(vec![0.5], vec![0.25], vec![0.125]);
        let wo_att = select_variant("wo_att").unwrap();
        let ActiveRewards::Fine(active) = wo_att.active else {
            panic!("fine variant")
        };
        let v = assemble_token_rewards(&s, &[0], RewardWeights::default(), &active, 1).unwrap();
        assert_eq!(v.values, vec![-0.625]);
    }

    #[test]
    fn position_contracts() {
        let s = seg(vec![0.1, 0.1], vec![0.1, 0.1], vec![0.1, 0.1]);
        let w = RewardWeights::default();
        assert!(matches!(
            assemble_token_rewards(&s, &[3, 3], w, &Category::ALL, 5),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            assemble_token_rewards(&s, &[3, 5], w, &Category::ALL, 5),
            Err(Error::Contract(_))
        ));
        let missing = SegmentRewards::default();
        assert!(matches!(
            assemble_token_rewards(&missing, &[0], w, &[Category::Relation], 2),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn variants_resolve() {
        assert_eq!(select_variant("wo_aif").unwrap().active, ActiveRewards::Skip);
        assert_eq!(select_variant("w_coarse").unwrap().active, ActiveRewards::Coarse);
        assert_eq!(
            select_variant("wo_obj").unwrap().active,
            ActiveRewards::Fine(vec![Category::Attribute, Category::Relation])
        );
        let err = select_variant("nope").unwrap_err();
        assert!(err.to_string().contains("w_coarse"), "{err}");
        let coarse = assemble_coarse_rewards(0.4, 3, RewardWeights::default(), 5).unwrap();
        assert_eq!(coarse.values, vec![0.0, 0.0, 0.0, -0.4, 0.0]);
    }

    #[test]
    fn kl_penalty_identities() {
        let r = [0.0, -1.0, 0.5];
        let lp = [-0.3, -2.0, -0.1];
        assert_eq!(apply_kl_penalty(&r, &lp, &[-1.0, -1.0, -1.0], 0.0), r.to_vec());
        assert_eq!(apply_kl_penalty(&r, &lp, &lp, 0.7), r.to_vec());
    }

    #[test]
    fn gae_worked_examples() {
        let (a, ret) = compute_gae(&[0.0, 0.0, -1.0], &[0.0; 3], 1.0, 1.0);
        assert_eq!(a, vec![-1.0, -1.0, -1.0]);
        assert_eq!(ret, a);
        let r = [0.3, -0.2, 1.0, 0.0];
        let v = [0.1, 0.4, -0.3, 0.2];
        let (a, _) = compute_gae(&r, &v, 0.9, 0.0);
        for t in 0..4 {
            let next = if t + 1 < 4 { v[t + 1] } else { 0.0 };
            assert!((a[t] - (r[t] + 0.9 * next - v[t])).abs() < 1e-15);
        }
    }

    #[test]
    fn advantage_normalization() {
        let mut b = vec![vec![1.0, 2.0], vec![3.0], vec![]];
        normalize_advantages(&mut b);
        let flat: Vec<f64> = b.concat();
        let mean = flat.iter().sum::<f64>() / 3.0;
        let var = flat.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        let mut flat_batch = vec![vec![0.5; 4]];
        normalize_advantages(&mut flat_batch);
        assert!(flat_batch[0].iter().all(|&x| x == 0.0));
    }
}
