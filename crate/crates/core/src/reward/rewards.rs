use serde::{Deserialize, Serialize};

use crate::annotate::facts::Category;
use crate::error::{Error, Result};
use crate::segment::TokenStream;

use super::model::{Query, RewardKind, RewardModel};

/// The three typed reward models; an ablated category may be absent.
#[derive(Debug, Clone, Default)]
pub struct RewardModels {
    pub fine: [Option<RewardModel>; 3],
    pub coarse: Option<RewardModel>,
}

impl RewardModels {
    pub fn get(&self, category: Category) -> Option<&RewardModel> {
        self.fine[category.index()].as_ref()
    }

    pub fn insert(&mut self, model: RewardModel) {
        match model.kind {
            RewardKind::Fine(c) => self.fine[c.index()] = Some(model),
            RewardKind::Coarse => self.coarse = Some(model),
        }
    }
}

/// `r_l^i` per category, one value per sub-sentence; `None` for
/// categories that were not scored.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SegmentRewards {
    pub by_category: [Option<Vec<f64>>; 3],
}

impl SegmentRewards {
    pub fn get(&self, category: Category) -> Option<&[f64]> {
        self.by_category[category.index()].as_deref()
    }
}

/// Probability of class 1 ("hallucinated") at each query position.
pub fn hallucination_probabilities(
    model: &RewardModel,
    queries: &[Query<'_>],
) -> Result<Vec<Vec<f64>>> {
    Ok(model
        .predict(queries)?
        .into_iter()
        .map(|per| per.into_iter().map(|p| p[1]).collect())
        .collect())
}

/// Scores a batch of streams with every active category's model.
pub fn segment_rewards_batch(
    models: &RewardModels,
    active: &[Category],
    items: &[(&TokenStream, &[usize])],
) -> Result<Vec<SegmentRewards>> {
    let mut out = vec![SegmentRewards::default(); items.len()];
    let queries: Vec<Query<'_>> = items
        .iter()
        .map(|(s, idx)| Query {
            ids: &s.ids,
            positions: idx,
        })
        .collect();
    for &cat in active {
        let model = models.get(cat).ok_or_else(|| {
            Error::Config(format!("no reward model loaded for active category {cat}"))
        })?;
        for (o, r) in out
            .iter_mut()
            .zip(hallucination_probabilities(model, &queries)?)
        {
            o.by_category[cat.index()] = Some(r);
        }
    }
    Ok(out)
}

pub fn segment_rewards(
    models: &RewardModels,
    active: &[Category],
    stream: &TokenStream,
    indices: &[usize],
) -> Result<SegmentRewards> {
    Ok(segment_rewards_batch(models, active, &[(stream, indices)])?.remove(0))
}
