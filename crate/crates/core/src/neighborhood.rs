//! Memory-based prediction and top-N recommendation over a precomputed
//! [`SimilarityModel`].

use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::ratings::{clamp_rating, RatingsMatrix};
use crate::similarity::{for_each_common, Orientation, SimilarityModel};

/// A predicted rating and how it was obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub user: usize,
    pub item: usize,
    /// Final score, clamped to the rating scale.
    pub score: f64,
    /// Score before clamping.
    pub raw: f64,
    /// Neighbors that contributed a term.
    pub support: usize,
    pub fallback_used: bool,
}

/// Top-N items for one user, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct RecommendationList {
    pub user: usize,
    pub items: Vec<(usize, f64)>,
}

impl RecommendationList {
    pub fn item_ids(&self) -> Vec<usize> {
        self.items.iter().map(|e| e.0).collect()
    }
}

pub(crate) fn rank_scored(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

fn expect_orientation(sims: &SimilarityModel, want: Orientation) -> Result<()> {
    if sims.orientation() == want {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "expected a {want} similarity model, got {}",
            sims.orientation()
        )))
    }
}

/// Mean of `v`'s ratings over the items `v` and `u` have both rated; the
/// full-row mean when they share none.
pub fn co_rated_mean(train: &RatingsMatrix, v: usize, u: usize) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for_each_common(train.user_row(v), train.user_row(u), |_, rv, _| {
        sum += rv;
        count += 1;
    });
    if count == 0 {
        train.user_mean(v)
    } else {
        sum / count as f64
    }
}

fn user_fallback(train: &RatingsMatrix, u: usize, i: usize) -> f64 {
    if !train.user_row(u).is_empty() {
        train.user_mean(u)
    } else if !train.item_col(i).is_empty() {
        train.item_mean(i)
    } else {
        train.global_mean()
    }
}

fn item_fallback(train: &RatingsMatrix, i: usize) -> f64 {
    if !train.item_col(i).is_empty() {
        train.item_mean(i)
    } else {
        train.global_mean()
    }
}

/// Mean-offset weighted average over the user's nearest neighbors who
/// rated `i`. Neighbor offsets use co-rated means.
pub fn predict_user_based(train: &RatingsMatrix, sims: &SimilarityModel, u: usize, i: usize) -> Result<Prediction> {
    expect_orientation(sims, Orientation::UserUser)?;
    train.check_user(u)?;
    train.check_item(i)?;
    let mut num = 0.0;
    let mut den = 0.0;
    let mut support = 0;
    for &(v, w) in sims.neighbors(u) {
        if let Some(r) = train.rating(v, i) {
            num += (r - co_rated_mean(train, v, u)) * w;
            den += w.abs();
            support += 1;
        }
    }
    Ok(finish(u, i, num, den, support, train.user_mean(u), || user_fallback(train, u, i)))
}

/// Similarity-weighted average of the user's own ratings on the items most
/// similar to `i`.
pub fn predict_item_based(train: &RatingsMatrix, sims: &SimilarityModel, u: usize, i: usize) -> Result<Prediction> {
    expect_orientation(sims, Orientation::ItemItem)?;
    train.check_user(u)?;
    train.check_item(i)?;
    let mut num = 0.0;
    let mut den = 0.0;
    let mut support = 0;
    for &(j, w) in sims.neighbors(i) {
        if let Some(r) = train.rating(u, j) {
            num += r * w;
            den += w.abs();
            support += 1;
        }
    }
    Ok(finish(u, i, num, den, support, 0.0, || item_fallback(train, i)))
}

fn finish(
    u: usize,
    i: usize,
    num: f64,
    den: f64,
    support: usize,
    base: f64,
    fallback: impl FnOnce() -> f64,
) -> Prediction {
    let (raw, support, fallback_used) = if support == 0 || den == 0.0 {
        (fallback(), 0, true)
    } else {
        (base + num / den, support, false)
    };
    Prediction {
        user: u,
        item: i,
        score: clamp_rating(raw),
        raw,
        support,
        fallback_used,
    }
}

/// Candidates are the items the user's neighbors rated and the user did
/// not, each scored exactly as [`predict_user_based`] would score it.
pub fn topn_user_based(train: &RatingsMatrix, sims: &SimilarityModel, u: usize, n: usize) -> Result<RecommendationList> {
    expect_orientation(sims, Orientation::UserUser)?;
    check_list_size(n)?;
    train.check_user(u)?;
    // Accumulate terms neighbor by neighbor, in knn order, so every
    // candidate sees the same summation order as a direct prediction.
    let mut acc: BTreeMap<usize, (f64, f64, usize)> = BTreeMap::new();
    for &(v, w) in sims.neighbors(u) {
        let mean_v = co_rated_mean(train, v, u);
        for &(i, r) in train.user_row(v) {
            if train.has_rated(u, i) {
                continue;
            }
            let e = acc.entry(i).or_insert((0.0, 0.0, 0));
            e.0 += (r - mean_v) * w;
            e.1 += w.abs();
            e.2 += 1;
        }
    }
    let base = train.user_mean(u);
    let mut scored: Vec<(usize, f64)> = acc
        .into_iter()
        .map(|(i, (num, den, support))| (i, finish(u, i, num, den, support, base, || user_fallback(train, u, i)).score))
        .collect();
    scored.sort_by(rank_scored);
    scored.truncate(n);
    Ok(RecommendationList { user: u, items: scored })
}

/// Union of the kNN lists of every owned item, minus owned items, scored by
/// the summed similarity to the owned items that list the candidate.
pub fn topn_item_based(train: &RatingsMatrix, sims: &SimilarityModel, u: usize, n: usize) -> Result<RecommendationList> {
    expect_orientation(sims, Orientation::ItemItem)?;
    check_list_size(n)?;
    train.check_user(u)?;
    let mut scores: BTreeMap<usize, f64> = BTreeMap::new();
    for &(i, _) in train.user_row(u) {
        for &(c, w) in sims.neighbors(i) {
            if !train.has_rated(u, c) {
                *scores.entry(c).or_insert(0.0) += w;
            }
        }
    }
    let mut scored: Vec<(usize, f64)> = scores.into_iter().collect();
    scored.sort_by(rank_scored);
    scored.truncate(n);
    Ok(RecommendationList { user: u, items: scored })
}

pub(crate) fn check_list_size(n: usize) -> Result<()> {
    if n == 0 {
        Err(Error::domain("list size N must be at least 1"))
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{from_cells, toy_ratings};
    use crate::similarity::{build_similarity_model, Metric};
    use approx::assert_abs_diff_eq;

    fn user_model(k: usize) -> (RatingsMatrix, SimilarityModel) {
        let m = toy_ratings();
        let s = build_similarity_model(&m, Orientation::UserUser, Metric::Pearson, k, 2).unwrap();
        (m, s)
    }

    #[test]
    fn worked_prediction_u1_i6() {
        let (m, s) = user_model(3);
        let p = predict_user_based(&m, &s, 0, 5).unwrap();
        assert_abs_diff_eq!(p.raw, 3.0 + 2.8 / 1.8, epsilon = 1e-12);
        assert_eq!(p.support, 2);
        assert!(!p.fallback_used);
    }

    #[test]
    fn no_neighbor_rated_item_falls_back_to_user_mean() {
        // exactly one neighbor rated the target item
        let m = from_cells(2, 3, &[(0, 0, 4.0), (0, 1, 2.0), (1, 0, 5.0), (1, 1, 1.0), (0, 2, 3.0)]);
        let s = build_similarity_model(&m, Orientation::UserUser, Metric::Cosine, 5, 1).unwrap();
        let p = predict_user_based(&m, &s, 1, 2).unwrap();
        assert_eq!(p.support, 1);
        let isolated = from_cells(2, 2, &[(0, 0, 4.0), (1, 1, 2.0)]);
        let s = build_similarity_model(&isolated, Orientation::UserUser, Metric::Cosine, 5, 1).unwrap();
        let p = predict_user_based(&isolated, &s, 0, 1).unwrap();
        assert!(p.fallback_used);
        assert_eq!(p.score, 4.0);
    }

    #[test]
    fn single_neighbor_one_above_its_mean() {
        // v rates (2, 4) on shared items, mean 3, and 4 on the target
        let m = from_cells(2, 3, &[(0, 0, 1.0), (0, 1, 3.0), (1, 0, 2.0), (1, 1, 4.0), (1, 2, 4.0)]);
        let s = build_similarity_model(&m, Orientation::UserUser, Metric::Pearson, 1, 2).unwrap();
        assert_abs_diff_eq!(s.weight(0, 1).unwrap(), 1.0, epsilon = 1e-12);
        let p = predict_user_based(&m, &s, 0, 2).unwrap();
        assert_abs_diff_eq!(p.raw, 2.0 + 1.0, epsilon = 1e-12);
    }

    #[test]
    fn item_based_single_and_equal_weights() {
        // item 0 target; items 1, 2 similar
        let m = from_cells(3, 3, &[(0, 1, 4.0), (1, 0, 3.0), (1, 1, 3.0), (2, 0, 2.0), (2, 2, 2.0)]);
        let s = build_similarity_model(&m, Orientation::ItemItem, Metric::Cosine, 5, 1).unwrap();
        let p = predict_item_based(&m, &s, 0, 0).unwrap();
        assert_eq!(p.support, 1);
        assert_abs_diff_eq!(p.score, 4.0, epsilon = 1e-12);

        let m = from_cells(
            3,
            3,
            &[(0, 1, 2.0), (0, 2, 4.0), (1, 0, 3.0), (1, 1, 3.0), (2, 0, 3.0), (2, 2, 3.0)],
        );
        let s = build_similarity_model(&m, Orientation::ItemItem, Metric::Cosine, 5, 1).unwrap();
        assert_eq!(s.weight(0, 1), s.weight(0, 2));
        let p = predict_item_based(&m, &s, 0, 0).unwrap();
        assert_abs_diff_eq!(p.score, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn item_based_empty_neighborhood_uses_item_mean() {
        let m = from_cells(2, 2, &[(0, 0, 4.0), (1, 1, 2.0)]);
        let s = build_similarity_model(&m, Orientation::ItemItem, Metric::Cosine, 5, 1).unwrap();
        let p = predict_item_based(&m, &s, 0, 1).unwrap();
        assert!(p.fallback_used);
        assert_eq!(p.score, 2.0);
    }

    #[test]
    fn wrong_orientation_rejected() {
        let (m, s) = user_model(2);
        assert!(predict_item_based(&m, &s, 0, 0).is_err());
        assert!(predict_user_based(&m, &s, 0, 6).is_err());
    }

    #[test]
    fn topn_user_based_toy() {
        let (m, s) = user_model(2);
        let list = topn_user_based(&m, &s, 0, 2).unwrap();
        let ids = list.item_ids();
        assert!(ids.iter().all(|i| [2, 5].contains(i)));
        assert_eq!(ids[0], 5);
    }

    #[test]
    fn topn_user_who_rated_everything() {
        let m = from_cells(2, 2, &[(0, 0, 4.0), (0, 1, 2.0), (1, 0, 5.0), (1, 1, 1.0)]);
        let s = build_similarity_model(&m, Orientation::UserUser, Metric::Cosine, 5, 1).unwrap();
        assert!(topn_user_based(&m, &s, 0, 3).unwrap().items.is_empty());
        let s = build_similarity_model(&m, Orientation::ItemItem, Metric::Cosine, 5, 1).unwrap();
        assert!(topn_item_based(&m, &s, 0, 3).unwrap().items.is_empty());
    }

    #[test]
    fn topn_n_larger_than_candidates() {
        let (m, s) = user_model(3);
        let list = topn_user_based(&m, &s, 0, 50).unwrap();
        assert_eq!(list.items.len(), 2);
    }

    #[test]
    fn topn_item_based_additive_scores() {
        // owned items 0 and 1; candidate 2 similar to both, candidate 3 to one
        let m = from_cells(1, 4, &[(0, 0, 5.0), (0, 1, 5.0)]);
        let s = crate::similarity::SimilarityModel::read_from(
            "simmodel v1 item_item cosine 5\nentities 4\n0 2 0.5\n0 3 0.8\n1 2 0.4\n".as_bytes(),
        )
        .unwrap();
        let list = topn_item_based(&m, &s, 0, 5).unwrap();
        assert_eq!(list.items.len(), 2);
        assert_eq!(list.items[0].0, 2);
        assert_abs_diff_eq!(list.items[0].1, 0.9, epsilon = 1e-12);
        assert_eq!(list.items[1], (3, 0.8));
    }
}
