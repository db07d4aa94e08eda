use serde::{Deserialize, Serialize};

use super::facts::Category;
use super::verify::FactVerdict;

pub const FAITHFUL: u8 = 0;
pub const HALLUCINATED: u8 = 1;
/// The sub-sentence has no fact of that category.
pub const NO_FACT: u8 = 2;

/// `sgn(sum)` over one category's verdicts, or [`NO_FACT`] when empty.
pub fn aggregate_category(verdicts: &[u8]) -> u8 {
    if verdicts.is_empty() {
        NO_FACT
    } else {
        verdicts.iter().map(|&v| v as u32).sum::<u32>().min(1) as u8
    }
}

/// Per sub-sentence `[f_o, f_a, f_r]`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SegmentLabels(pub Vec<[u8; 3]>);

impl SegmentLabels {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, segment: usize, category: Category) -> u8 {
        self.0[segment][category.index()]
    }

    pub fn category(&self, category: Category) -> Vec<u8> {
        self.0.iter().map(|l| l[category.index()]).collect()
    }

    /// 1 iff any segment has any category labeled hallucinated.
    pub fn sequence_label(&self) -> u8 {
        self.0.iter().flatten().any(|&l| l == HALLUCINATED) as u8
    }
}

/// Verdict labels grouped per sub-sentence, indexed by [`Category::index`].
pub fn aggregate_labels(groups: &[[Vec<u8>; 3]]) -> SegmentLabels {
    SegmentLabels(
        groups
            .iter()
            .map(|g| {
                [
                    aggregate_category(&g[0]),
                    aggregate_category(&g[1]),
                    aggregate_category(&g[2]),
                ]
            })
            .collect(),
    )
}

/// Groups each sub-sentence's verdicts by fact category.
pub fn group_verdicts(per_segment: &[Vec<FactVerdict>]) -> Vec<[Vec<u8>; 3]> {
    per_segment
        .iter()
        .map(|vs| {
            let mut g: [Vec<u8>; 3] = Default::default();
            for v in vs {
                g[v.fact.category().index()].push(v.label);
            }
            g
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgn_and_sentinel() {
        let l = aggregate_labels(&[[vec![0, 0], vec![], vec![1]]]);
        assert_eq!(l.0, vec![[0, 2, 1]]);
        assert_eq!(aggregate_category(&[1, 1, 0]), 1);
        assert_eq!(aggregate_labels(&[Default::default()]).0, vec![[2, 2, 2]]);
    }

    #[test]
    fn sequence_label() {
        assert_eq!(
            SegmentLabels(vec![[0, 2, 2], [2, 2, 0]]).sequence_label(),
            0
        );
        assert_eq!(
            SegmentLabels(vec![[0, 2, 2], [2, 1, 2]]).sequence_label(),
            1
        );
    }
}
