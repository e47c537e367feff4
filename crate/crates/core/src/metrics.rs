//! Offline evaluation: accuracy, coverage, set quality, rank quality,
//! novelty and diversity.
//!
//! Accuracy metrics are macro-averaged: each user's error is computed
//! first, then averaged across users. Every aggregate reports how many
//! users it evaluated and how many it skipped.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::neighborhood::RecommendationList;
use crate::ratings::RatingsMatrix;
use crate::similarity::{Orientation, SimilarityModel};

/// Knobs shared by the set and rank metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    /// A test rating at or above this is relevant.
    pub relevance_theta: f64,
    /// Recommendations requested per user.
    pub list_size: usize,
    /// Half-life rank: the item at this position gets half the weight of
    /// the first one.
    pub halflife_alpha: f64,
    /// Neutral ("default") rating for the half-life utility.
    pub halflife_d: f64,
    /// Cutoff for DCG and half-life.
    pub dcg_k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            relevance_theta: 4.0,
            list_size: 10,
            halflife_alpha: 5.0,
            halflife_d: 0.0,
            dcg_k: 10,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.list_size == 0 {
            return Err(Error::domain("list size must be at least 1"));
        }
        if !self.halflife_alpha.is_finite() || self.halflife_alpha < 2.0 {
            return Err(Error::domain(format!("halflife_alpha = {} must be >= 2", self.halflife_alpha)));
        }
        if self.dcg_k == 0 {
            return Err(Error::domain("dcg_k must be at least 1"));
        }
        if !self.relevance_theta.is_finite() || !self.halflife_d.is_finite() {
            return Err(Error::domain("relevance_theta and halflife_d must be finite"));
        }
        Ok(())
    }
}

/// An aggregate plus the number of users (or lists) it covers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricValue {
    pub value: f64,
    pub evaluated: usize,
    pub skipped: usize,
}

fn mean_of(values: &[f64], skipped: usize) -> MetricValue {
    let value = if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    };
    MetricValue {
        value,
        evaluated: values.len(),
        skipped,
    }
}

/// Held-out ratings grouped by user, each row sorted by item.
#[derive(Debug, Clone, PartialEq)]
pub struct HeldOut {
    rows: Vec<Vec<(usize, f64)>>,
}

impl HeldOut {
    pub fn new(n_users: usize, triples: &[(usize, usize, f64)]) -> Result<Self> {
        let mut rows = vec![Vec::new(); n_users];
        for &(u, i, r) in triples {
            let row: &mut Vec<(usize, f64)> = rows
                .get_mut(u)
                .ok_or_else(|| Error::domain(format!("test user index {u} out of range")))?;
            row.push((i, r));
        }
        for row in &mut rows {
            row.sort_by_key(|e| e.0);
        }
        Ok(HeldOut { rows })
    }

    pub fn n_users(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, u: usize) -> &[(usize, f64)] {
        &self.rows[u]
    }

    pub fn rating(&self, u: usize, i: usize) -> Option<f64> {
        let row = self.rows.get(u)?;
        row.binary_search_by_key(&i, |e| e.0).ok().map(|p| row[p].1)
    }

    pub fn relevant(&self, u: usize, theta: f64) -> HashSet<usize> {
        self.rows[u].iter().filter(|e| e.1 >= theta).map(|e| e.0).collect()
    }

    /// Users with at least one held-out rating.
    pub fn users(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.rows.len()).filter(|&u| !self.rows[u].is_empty())
    }
}

fn accuracy(per_user: &[Vec<(f64, f64)>], name: &'static str, user_error: impl Fn(&[(f64, f64)]) -> f64) -> Result<MetricValue> {
    let mut values = Vec::with_capacity(per_user.len());
    let mut skipped = 0;
    for pairs in per_user {
        if pairs.is_empty() {
            skipped += 1;
        } else {
            values.push(user_error(pairs));
        }
    }
    if values.is_empty() {
        return Err(Error::UndefinedMetric(name));
    }
    Ok(mean_of(&values, skipped))
}

/// Macro MAE over `(predicted, actual)` pairs grouped per user.
pub fn mae(per_user: &[Vec<(f64, f64)>]) -> Result<MetricValue> {
    accuracy(per_user, "mae", |pairs| {
        pairs.iter().map(|(p, a)| (p - a).abs()).sum::<f64>() / pairs.len() as f64
    })
}

/// Mean over users of each user's root-mean-squared error.
pub fn rmse(per_user: &[Vec<(f64, f64)>]) -> Result<MetricValue> {
    accuracy(per_user, "rmse", |pairs| {
        (pairs.iter().map(|(p, a)| (p - a).powi(2)).sum::<f64>() / pairs.len() as f64).sqrt()
    })
}

/// Percentage of each user's unrated items that at least one of the user's
/// neighbors rated, averaged over users with any unrated item.
pub fn coverage(train: &RatingsMatrix, sims: &SimilarityModel, users: &[usize]) -> Result<MetricValue> {
    if sims.orientation() != Orientation::UserUser {
        return Err(Error::domain("coverage needs a user_user similarity model"));
    }
    let mut values = Vec::new();
    let mut skipped = 0;
    let mut seen = vec![false; train.n_items()];
    for &u in users {
        train.check_user(u)?;
        let unrated = train.n_items() - train.user_row(u).len();
        if unrated == 0 {
            skipped += 1;
            continue;
        }
        seen.fill(false);
        let mut covered = 0usize;
        for &(v, _) in sims.neighbors(u) {
            for &(i, _) in train.user_row(v) {
                if !seen[i] && !train.has_rated(u, i) {
                    seen[i] = true;
                    covered += 1;
                }
            }
        }
        values.push(100.0 * covered as f64 / unrated as f64);
    }
    Ok(mean_of(&values, skipped))
}

/// Precision, recall and their harmonic mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SetQuality {
    pub precision: MetricValue,
    pub recall: MetricValue,
    pub f1: f64,
}

/// Precision always divides by the configured list size, even when fewer
/// items were recommendable; users without any recommendation are skipped.
/// Recall averages over users with at least one relevant test item.
pub fn precision_recall_f1(lists: &[RecommendationList], test: &HeldOut, cfg: &EvalConfig) -> Result<SetQuality> {
    cfg.validate()?;
    let mut precisions = Vec::new();
    let mut recalls = Vec::new();
    let (mut p_skipped, mut r_skipped) = (0, 0);
    for list in lists {
        let relevant = test.relevant(list.user, cfg.relevance_theta);
        let hits = list
            .items
            .iter()
            .take(cfg.list_size)
            .filter(|e| relevant.contains(&e.0))
            .count();
        if list.items.is_empty() {
            p_skipped += 1;
        } else {
            precisions.push(hits as f64 / cfg.list_size as f64);
        }
        if relevant.is_empty() {
            r_skipped += 1;
        } else {
            recalls.push(hits as f64 / relevant.len() as f64);
        }
    }
    if precisions.is_empty() {
        return Err(Error::UndefinedMetric("precision"));
    }
    let precision = mean_of(&precisions, p_skipped);
    let recall = mean_of(&recalls, r_skipped);
    let sum = precision.value + recall.value;
    let f1 = if sum > 0.0 {
        2.0 * precision.value * recall.value / sum
    } else {
        0.0
    };
    Ok(SetQuality { precision, recall, f1 })
}

/// Mean of AP@n over users with at least one relevant test item. AP@n
/// averages precision-at-rank over the relevant ranks, normalized by
/// `min(#relevant, n)`.
pub fn mean_average_precision(lists: &[RecommendationList], test: &HeldOut, cfg: &EvalConfig) -> Result<MetricValue> {
    cfg.validate()?;
    let mut values = Vec::new();
    let mut skipped = 0;
    for list in lists {
        let relevant = test.relevant(list.user, cfg.relevance_theta);
        if relevant.is_empty() {
            skipped += 1;
            continue;
        }
        let mut hits = 0usize;
        let mut total = 0.0;
        for (rank, e) in list.items.iter().take(cfg.list_size).enumerate() {
            if relevant.contains(&e.0) {
                hits += 1;
                total += hits as f64 / (rank + 1) as f64;
            }
        }
        values.push(total / relevant.len().min(cfg.list_size) as f64);
    }
    Ok(mean_of(&values, skipped))
}

fn per_list(lists: &[RecommendationList], score: impl Fn(&RecommendationList) -> f64) -> MetricValue {
    let mut values = Vec::new();
    let mut skipped = 0;
    for list in lists {
        if list.items.is_empty() {
            skipped += 1;
        } else {
            values.push(score(list));
        }
    }
    mean_of(&values, skipped)
}

/// Half-life utility over the first `dcg_k` ranks. Items without a test
/// rating count as the neutral rating `d`.
pub fn half_life(lists: &[RecommendationList], test: &HeldOut, cfg: &EvalConfig) -> Result<MetricValue> {
    cfg.validate()?;
    Ok(per_list(lists, |list| {
        list.items
            .iter()
            .take(cfg.dcg_k)
            .enumerate()
            .map(|(rank, e)| {
                let r = test.rating(list.user, e.0).unwrap_or(cfg.halflife_d);
                (r - cfg.halflife_d).max(0.0) / 2f64.powf(rank as f64 / (cfg.halflife_alpha - 1.0))
            })
            .sum()
    }))
}

/// Unnormalized DCG: the first rank at full weight, rank `i >= 2`
/// discounted by `log2(i)`. Items without a test rating contribute zero.
pub fn dcg(lists: &[RecommendationList], test: &HeldOut, cfg: &EvalConfig) -> Result<MetricValue> {
    cfg.validate()?;
    Ok(per_list(lists, |list| {
        list.items
            .iter()
            .take(cfg.dcg_k)
            .enumerate()
            .map(|(rank, e)| {
                let r = test.rating(list.user, e.0).unwrap_or(0.0);
                if rank == 0 {
                    r
                } else {
                    r / ((rank + 1) as f64).log2()
                }
            })
            .sum()
    }))
}

/// Per-item novelty of a list: mean dissimilarity to the other listed
/// items. Undefined similarities count as zero. `None` for lists shorter
/// than two.
pub fn novelty(items: &[usize], sim: impl Fn(usize, usize) -> Option<f64>) -> Option<Vec<f64>> {
    if items.len() < 2 {
        return None;
    }
    let denom = (items.len() - 1) as f64;
    Some(
        items
            .iter()
            .enumerate()
            .map(|(a, &i)| {
                items
                    .iter()
                    .enumerate()
                    .filter(|&(b, _)| b != a)
                    .map(|(_, &j)| 1.0 - sim(i, j).unwrap_or(0.0))
                    .sum::<f64>()
                    / denom
            })
            .collect(),
    )
}

/// Mean pairwise dissimilarity of a list; `None` below two items.
pub fn diversity(items: &[usize], sim: impl Fn(usize, usize) -> Option<f64>) -> Option<f64> {
    let n = items.len();
    if n < 2 {
        return None;
    }
    let mut total = 0.0;
    for (a, &i) in items.iter().enumerate() {
        for (b, &j) in items.iter().enumerate() {
            if a != b {
                total += 1.0 - sim(i, j).unwrap_or(0.0);
            }
        }
    }
    Some(total / (n * (n - 1)) as f64)
}

/// Mean list novelty and mean list diversity, skipping lists shorter than
/// two.
pub fn novelty_diversity(lists: &[RecommendationList], sim: impl Fn(usize, usize) -> Option<f64>) -> (MetricValue, MetricValue) {
    let mut nov = Vec::new();
    let mut div = Vec::new();
    let mut skipped = 0;
    for list in lists {
        let ids = list.item_ids();
        match (novelty(&ids, &sim), diversity(&ids, &sim)) {
            (Some(n), Some(d)) => {
                nov.push(n.iter().sum::<f64>() / n.len() as f64);
                div.push(d);
            }
            _ => skipped += 1,
        }
    }
    (mean_of(&nov, skipped), mean_of(&div, skipped))
}

/// Flat, ordered set of metric values with the context that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub model: String,
    pub split_seed: u64,
    pub split_ratio: f64,
    pub config: EvalConfig,
    values: Vec<(String, f64)>,
    skipped: Vec<(String, usize)>,
    pub notes: Vec<String>,
}

impl EvaluationReport {
    pub fn new(model: impl Into<String>, split_seed: u64, split_ratio: f64, config: EvalConfig) -> Self {
        EvaluationReport {
            model: model.into(),
            split_seed,
            split_ratio,
            config,
            values: Vec::new(),
            skipped: Vec::new(),
            notes: Vec::new(),
        }
    }

    /// Record a metric. Non-finite values are rejected.
    pub fn record(&mut self, name: &str, value: MetricValue) -> Result<()> {
        self.record_value(name, value.value)?;
        self.skipped.push((name.to_string(), value.skipped));
        Ok(())
    }

    pub fn record_value(&mut self, name: &str, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::domain(format!("metric {name} is not finite ({value})")));
        }
        self.values.push((name.to_string(), value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.iter().find(|e| e.0 == name).map(|e| e.1)
    }

    pub fn values(&self) -> &[(String, f64)] {
        &self.values
    }

    pub fn skipped(&self) -> &[(String, usize)] {
        &self.skipped
    }

    /// Every field as ordered `(key, value)` strings.
    pub fn fields(&self) -> Vec<(String, String)> {
        let c = &self.config;
        let mut out = vec![
            ("model".to_string(), self.model.clone()),
            ("split_seed".to_string(), self.split_seed.to_string()),
            ("split_ratio".to_string(), self.split_ratio.to_string()),
            ("relevance_theta".to_string(), c.relevance_theta.to_string()),
            ("list_size".to_string(), c.list_size.to_string()),
            ("halflife_alpha".to_string(), c.halflife_alpha.to_string()),
            ("halflife_d".to_string(), c.halflife_d.to_string()),
            ("dcg_k".to_string(), c.dcg_k.to_string()),
        ];
        out.extend(self.values.iter().map(|(k, v)| (k.clone(), format!("{v:.6}"))));
        out.extend(self.skipped.iter().map(|(k, v)| (format!("{k}_skipped"), v.to_string())));
        if !self.notes.is_empty() {
            out.push(("notes".to_string(), self.notes.join("; ")));
        }
        out
    }

    /// `key=value` lines.
    pub fn to_text(&self) -> String {
        self.fields().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Header and one data row, fields in [`Self::fields`] order.
    pub fn to_csv(&self) -> Result<String> {
        let (keys, vals): (Vec<String>, Vec<String>) = self.fields().into_iter().unzip();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&keys).and_then(|_| w.write_record(&vals)).map_err(|e| Error::domain(e.to_string()))?;
        let bytes = w.into_inner().map_err(|e| Error::domain(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv writer emits UTF-8"))
    }
}
