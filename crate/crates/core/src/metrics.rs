//! Ranking metrics: per-class average precision and mAP.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::svm::{MultiLabelSet, Scores};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ApVariant {
    /// Mean of precision at the rank of each relevant item.
    #[default]
    NonInterpolated,
    /// Mean over recall levels 0, 0.1, …, 1 of the best precision at or
    /// beyond that recall.
    Interpolated11,
}

impl ApVariant {
    pub fn name(self) -> &'static str {
        match self {
            ApVariant::NonInterpolated => "non-interpolated",
            ApVariant::Interpolated11 => "11-point",
        }
    }
}

/// Ranking by descending score, ties broken by ascending index.
fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

fn check_inputs(scores: &[f64], relevance: &[bool]) -> Result<usize> {
    if scores.len() != relevance.len() {
        return Err(Error::DimensionMismatch {
            op: "average precision (scores vs relevance)",
            left: scores.len(),
            right: relevance.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("scores"));
    }
    match relevance.iter().filter(|&&r| r).count() {
        0 => Err(Error::NoRelevant),
        n => Ok(n),
    }
}

pub fn average_precision(scores: &[f64], relevance: &[bool]) -> Result<f64> {
    let relevant = check_inputs(scores, relevance)?;
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &idx) in ranking(scores).iter().enumerate() {
        if relevance[idx] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / relevant as f64)
}

pub fn average_precision_11pt(scores: &[f64], relevance: &[bool]) -> Result<f64> {
    let relevant = check_inputs(scores, relevance)?;
    let mut points = Vec::with_capacity(scores.len());
    let mut hits = 0usize;
    for (rank, &idx) in ranking(scores).iter().enumerate() {
        if relevance[idx] {
            hits += 1;
        }
        points.push((hits as f64 / relevant as f64, hits as f64 / (rank + 1) as f64));
    }
    let mut total = 0.0;
    for step in 0..=10 {
        let level = step as f64 / 10.0;
        let best = points
            .iter()
            .filter(|(recall, _)| *recall >= level - 1e-12)
            .map(|&(_, p)| p)
            .fold(0.0, f64::max);
        total += best;
    }
    Ok(total / 11.0)
}

pub fn average_precision_with(variant: ApVariant, scores: &[f64], relevance: &[bool]) -> Result<f64> {
    match variant {
        ApVariant::NonInterpolated => average_precision(scores, relevance),
        ApVariant::Interpolated11 => average_precision_11pt(scores, relevance),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapReport {
    pub variant: ApVariant,
    /// `None` for classes without positives.
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
}

impl MapReport {
    pub fn skipped(&self) -> Vec<usize> {
        (0..self.per_class.len()).filter(|&j| self.per_class[j].is_none()).collect()
    }
}

/// Unweighted mean of per-class AP over classes with at least one positive.
pub fn mean_ap(scores: &Scores, labels: &MultiLabelSet, variant: ApVariant) -> Result<MapReport> {
    if scores.rows() != labels.n() || scores.classes() != labels.classes() {
        return Err(Error::DimensionMismatch {
            op: "mean_ap (score rows*P vs label rows*P)",
            left: scores.rows() * scores.classes(),
            right: labels.n() * labels.classes(),
        });
    }
    let per_class = (0..labels.classes())
        .map(|j| {
            let rel = labels.column(j);
            match average_precision_with(variant, &scores.column(j), &rel) {
                Ok(ap) => Ok(Some(ap)),
                Err(Error::NoRelevant) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let valid: Vec<f64> = per_class.iter().flatten().copied().collect();
    if valid.is_empty() {
        return Err(Error::NoEvaluableClasses);
    }
    Ok(MapReport {
        variant,
        mean: valid.iter().sum::<f64>() / valid.len() as f64,
        per_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::ap_by_counting;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_cases() {
        let ap = average_precision(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert_eq!(average_precision(&[0.1, 0.5, 0.3], &[true; 3]).unwrap(), 1.0);
        for n in [1usize, 2, 5, 17] {
            let scores: Vec<f64> = (0..n).map(|i| (n - i) as f64).collect();
            let mut rel = vec![false; n];
            rel[n - 1] = true;
            assert!((average_precision(&scores, &rel).unwrap() - 1.0 / n as f64).abs() < 1e-12);
        }
        assert!(matches!(average_precision(&[1.0], &[false]), Err(Error::NoRelevant)));
        assert!(average_precision(&[1.0], &[true, false]).is_err());
    }

    #[test]
    fn ties_break_by_index() {
        assert_eq!(average_precision(&[0.5, 0.5], &[true, false]).unwrap(), 1.0);
        assert_eq!(average_precision(&[0.5, 0.5], &[false, true]).unwrap(), 0.5);
    }

    #[test]
    fn eleven_point_cases() {
        assert_eq!(average_precision_11pt(&[3.0, 2.0, 1.0], &[true, true, false]).unwrap(), 1.0);
        // precision at recall 0.5 is 1, at recall 1 is 2/3
        let ap = average_precision_11pt(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap();
        assert!((ap - (6.0 + 5.0 * 2.0 / 3.0) / 11.0).abs() < 1e-12);
    }

    #[test]
    fn map_cases() {
        let scores = Scores::new(3, 2, vec![0.9, 0.1, 0.8, 0.7, 0.7, 0.2]).unwrap();
        let labels = MultiLabelSet::new(3, 2, vec![1, 0, 0, 1, 1, 0]).unwrap();
        let r = mean_ap(&scores, &labels, ApVariant::NonInterpolated).unwrap();
        assert!((r.per_class[0].unwrap() - 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(r.per_class[1], Some(1.0));
        assert!((r.mean - (5.0 / 6.0 + 1.0) / 2.0).abs() < 1e-12);

        let same = Scores::new(3, 2, vec![0.9, 0.9, 0.8, 0.8, 0.7, 0.7]).unwrap();
        let twin = MultiLabelSet::new(3, 2, vec![1, 1, 0, 0, 1, 1]).unwrap();
        let r = mean_ap(&same, &twin, ApVariant::NonInterpolated).unwrap();
        assert_eq!(r.mean, r.per_class[0].unwrap());
        assert_eq!(r.per_class[0], r.per_class[1]);

        let empty = MultiLabelSet::new(3, 2, vec![1, 0, 0, 0, 1, 0]).unwrap();
        let r = mean_ap(&scores, &empty, ApVariant::NonInterpolated).unwrap();
        assert_eq!(r.skipped(), vec![1]);
        let none = MultiLabelSet::new(3, 2, vec![0; 6]).unwrap();
        assert!(matches!(mean_ap(&scores, &none, ApVariant::NonInterpolated), Err(Error::NoEvaluableClasses)));
    }

    #[test]
    fn perfect_ranking_gives_one() {
        let scores = Scores::new(4, 2, vec![1.0, -1.0, -1.0, 1.0, 0.5, 2.0, -2.0, -0.5]).unwrap();
        let labels = MultiLabelSet::new(4, 2, vec![1, 0, 0, 1, 1, 1, 0, 0]).unwrap();
        assert_eq!(mean_ap(&scores, &labels, ApVariant::NonInterpolated).unwrap().mean, 1.0);
    }

    #[test]
    fn random_scores_concentrate_near_positive_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let rel: Vec<bool> = (0..200).map(|i| i % 2 == 0).collect();
        let mut total = 0.0;
        for _ in 0..20 {
            let scores: Vec<f64> = (0..200).map(|_| rng.random()).collect();
            let ap = average_precision(&scores, &rel).unwrap();
            assert!((ap - 0.5).abs() < 0.15, "{ap}");
            total += ap;
        }
        assert!((total / 20.0 - 0.5).abs() < 0.05);
    }

    proptest! {
        #[test]
        fn matches_counting_oracle(
            data in prop::collection::vec((-5i32..5, any::<bool>()), 1..40)
        ) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| f64::from(*s)).collect();
            let rel: Vec<bool> = data.iter().map(|(_, r)| *r).collect();
            prop_assume!(rel.iter().any(|&r| r));
            let ap = average_precision(&scores, &rel).unwrap();
            prop_assert!((ap - ap_by_counting(&scores, &rel)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&ap));
        }

        #[test]
        fn invariant_under_monotone_maps(
            data in prop::collection::vec((-100.0f64..100.0, any::<bool>()), 1..40)
        ) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| *s).collect();
            let rel: Vec<bool> = data.iter().map(|(_, r)| *r).collect();
            prop_assume!(rel.iter().any(|&r| r));
            let mapped: Vec<f64> = scores.iter().map(|s| (s / 50.0).exp() * 3.0 + 1.0).collect();
            let a = average_precision(&scores, &rel).unwrap();
            let b = average_precision(&mapped, &rel).unwrap();
            // exp may merge nearly equal scores into ties; skip those draws
            let distinct = |v: &[f64]| {
                let mut s = v.to_vec();
                s.sort_by(f64::total_cmp);
                s.windows(2).filter(|w| w[0] == w[1]).count()
            };
            prop_assume!(distinct(&scores) == distinct(&mapped));
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
