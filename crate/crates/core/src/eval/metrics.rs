use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::ingest::{GoldAnnotation, Source};

/// Indices of the `k` highest scores, best first. Ties go to the lower
/// index. `k ≥ n` returns every index.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// A ranked top-k selection for one entity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub entity_id: String,
    pub k: usize,
    pub indices: Vec<usize>,
    /// Attention of each selected triple, aligned with `indices`.
    pub scores: Vec<f64>,
}

impl Summary {
    pub fn new(entity_id: &str, attention: &[f64], k: usize) -> Self {
        let indices = top_k(attention, k);
        let scores = indices.iter().map(|&i| attention[i]).collect();
        Self {
            entity_id: entity_id.to_string(),
            k,
            indices,
            scores,
        }
    }
}

fn hits(summary: &[usize], gold: &[usize]) -> usize {
    summary.iter().filter(|i| gold.contains(i)).count()
}

/// Harmonic mean of precision and recall of `summary` against `gold`,
/// evaluated as `2·hits / (|S| + |G|)` so equal-size sets give P = R = F
/// exactly.
pub fn f_measure(summary: &[usize], gold: &[usize]) -> Result<f64, EvalError> {
    if gold.is_empty() {
        return Err(EvalError::EmptyGold);
    }
    let h = hits(summary, gold) as f64;
    Ok(2.0 * h / (summary.len() + gold.len()) as f64)
}

/// `(1/|G|) Σ precision@r` over the ranks `r` of `ranked` that hit `gold`.
pub fn average_precision(ranked: &[usize], gold: &[usize]) -> Result<f64, EvalError> {
    if gold.is_empty() {
        return Err(EvalError::EmptyGold);
    }
    let mut found = 0usize;
    let mut total = 0.0;
    for (r, i) in ranked.iter().enumerate() {
        if gold.contains(i) {
            found += 1;
            total += found as f64 / (r + 1) as f64;
        }
    }
    Ok(total / gold.len() as f64)
}

/// One entity's scores at one `k`, per user.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityScores {
    pub entity_id: String,
    pub source: Source,
    pub k: usize,
    pub f_users: Vec<f64>,
    pub ap_users: Vec<f64>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

impl EntityScores {
    /// Scores the top-`k` of `attention` against every user's gold set.
    pub fn compute(source: Source, attention: &[f64], gold: &GoldAnnotation, k: usize) -> Result<Self, EvalError> {
        let sets = gold.for_k(k).ok_or(EvalError::NoGold {
            entity: gold.entity_id.clone(),
            k,
        })?;
        if attention.len() != gold.counts.len() {
            return Err(EvalError::Mismatch(format!(
                "entity {}: {} scores for {} triples",
                gold.entity_id,
                attention.len(),
                gold.counts.len()
            )));
        }
        let summary = top_k(attention, k);
        let mut f_users = Vec::with_capacity(sets.len());
        let mut ap_users = Vec::with_capacity(sets.len());
        for set in sets {
            f_users.push(f_measure(&summary, set)?);
            ap_users.push(average_precision(&summary, set)?);
        }
        Ok(Self {
            entity_id: gold.entity_id.clone(),
            source,
            k,
            f_users,
            ap_users,
        })
    }

    pub fn f(&self) -> f64 {
        mean(&self.f_users)
    }

    pub fn ap(&self) -> f64 {
        mean(&self.ap_users)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn top_k_examples() {
        assert_eq!(top_k(&[0.1, 0.7, 0.2], 2), vec![1, 2]);
        assert_eq!(top_k(&[0.1, 0.7, 0.2], 9), vec![1, 2, 0]);
        assert_eq!(top_k(&[0.25; 4], 2), vec![0, 1]);
        assert!(top_k(&[], 3).is_empty());
    }

    #[test]
    fn f_examples() {
        let g = [3, 1, 4, 5, 9];
        assert_eq!(f_measure(&[9, 5, 4, 3, 1], &g).unwrap(), 1.0);
        assert_eq!(f_measure(&[0, 2, 6, 7, 8], &g).unwrap(), 0.0);
        assert_eq!(f_measure(&[3, 1, 0, 2, 6], &g).unwrap(), 0.4);
        assert!(matches!(f_measure(&[1], &[]), Err(EvalError::EmptyGold)));
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[4, 2, 0], &[2, 4]).unwrap(), 1.0);
        assert_eq!(average_precision(&[7, 3], &[3]).unwrap(), 0.5);
        let ap = average_precision(&[1, 0, 2], &[1, 2]).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert!(matches!(average_precision(&[1], &[]), Err(EvalError::EmptyGold)));
    }

    proptest! {
        #[test]
        fn equal_sizes_make_p_r_f_equal(
            s in proptest::sample::subsequence((0..20usize).collect::<Vec<_>>(), 5),
            g in proptest::sample::subsequence((0..20usize).collect::<Vec<_>>(), 5),
        ) {
            let h = s.iter().filter(|i| g.contains(i)).count() as f64;
            let f = f_measure(&s, &g).unwrap();
            prop_assert_eq!(f, h / 5.0);
            prop_assert!((0.0..=1.0).contains(&f));
            prop_assert_eq!(f == 1.0, { let mut a = s.clone(); a.sort(); let mut b = g.clone(); b.sort(); a == b });
        }

        #[test]
        fn gold_first_gives_perfect_ap(
            mut g in proptest::sample::subsequence((0..30usize).collect::<Vec<_>>(), 1..8),
            rest in proptest::collection::vec(30..60usize, 0..5),
            seed in any::<u64>(),
        ) {
            use rand::{seq::SliceRandom, SeedableRng};
            g.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let mut ranked = g.clone();
            ranked.extend(rest);
            prop_assert_eq!(average_precision(&ranked, &g).unwrap(), 1.0);
        }

        #[test]
        fn ap_is_a_probability(
            ranked in proptest::sample::subsequence((0..15usize).collect::<Vec<_>>(), 0..15),
            g in proptest::sample::subsequence((0..15usize).collect::<Vec<_>>(), 1..15),
        ) {
            let ap = average_precision(&ranked, &g).unwrap();
            prop_assert!((0.0..=1.0).contains(&ap));
        }
    }
}
