//! One handle over every model family: fit, predict, recommend, evaluate.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::factorization::{
    explainability_scores, predict_factor, train_emf, train_mf, train_nmf, ExplanationStyle, FactorModel, TrainConfig,
};
use crate::metrics::{self, EvalConfig, EvaluationReport, HeldOut};
use crate::neighborhood::{
    predict_item_based, predict_user_based, rank_scored, topn_item_based, topn_user_based, RecommendationList,
};
use crate::ratings::{NormalizationKind, RatingsMatrix};
use crate::similarity::{build_similarity_model, Metric, Orientation, SimilarityModel};
use crate::svd::{svd_fit, svd_predict, SvdModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    UserKnn,
    ItemKnn,
    Svd,
    Mf,
    Nmf,
    Emf,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::UserKnn,
        ModelKind::ItemKnn,
        ModelKind::Svd,
        ModelKind::Mf,
        ModelKind::Nmf,
        ModelKind::Emf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::UserKnn => "user-knn",
            ModelKind::ItemKnn => "item-knn",
            ModelKind::Svd => "svd",
            ModelKind::Mf => "mf",
            ModelKind::Nmf => "nmf",
            ModelKind::Emf => "emf",
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::domain(format!("unknown model {s:?}")))
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything needed to fit any [`ModelKind`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitParams {
    /// Neighbors for kNN models, latent rank for SVD and factor models.
    pub k: usize,
    /// kNN similarity.
    pub metric: Metric,
    /// `None` uses the metric's default.
    pub min_overlap: Option<usize>,
    /// Factor-model hyperparameters (`train.k` is replaced by `k`).
    pub train: TrainConfig,
    pub normalize: bool,
    /// EMF explainability threshold.
    pub theta: f64,
    /// EMF neighborhood size.
    pub neighbor_k: usize,
    pub style: ExplanationStyle,
}

impl Default for FitParams {
    fn default() -> Self {
        FitParams {
            k: 10,
            metric: Metric::Cosine,
            min_overlap: None,
            train: TrainConfig::default(),
            normalize: false,
            theta: 0.01,
            neighbor_k: 50,
            style: ExplanationStyle::UserBased,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Fitted {
    Knn(SimilarityModel),
    Svd(SvdModel),
    Factor(FactorModel),
}

/// A fitted model together with the training ratings it was fitted on.
#[derive(Debug, Clone)]
pub struct Recommender {
    pub kind: ModelKind,
    pub train: RatingsMatrix,
    pub fitted: Fitted,
}

pub fn fit(kind: ModelKind, train: &RatingsMatrix, params: &FitParams) -> Result<Recommender> {
    let min_overlap = params.min_overlap.unwrap_or(params.metric.default_min_overlap());
    let cfg = TrainConfig {
        k: params.k,
        ..params.train.clone()
    };
    let fitted = match kind {
        ModelKind::UserKnn => Fitted::Knn(build_similarity_model(
            train,
            Orientation::UserUser,
            params.metric,
            params.k,
            min_overlap,
        )?),
        ModelKind::ItemKnn => Fitted::Knn(build_similarity_model(
            train,
            Orientation::ItemItem,
            params.metric,
            params.k,
            min_overlap,
        )?),
        ModelKind::Svd => Fitted::Svd(svd_fit(train, params.k)?),
        ModelKind::Mf => Fitted::Factor(train_mf(train, &cfg, params.normalize)?),
        ModelKind::Nmf => {
            if params.normalize {
                return Err(Error::domain("nmf cannot be trained on normalized ratings"));
            }
            Fitted::Factor(train_nmf(train, &cfg)?)
        }
        ModelKind::Emf => {
            let orientation = match params.style {
                ExplanationStyle::UserBased => Orientation::UserUser,
                ExplanationStyle::ItemBased => Orientation::ItemItem,
            };
            let neighbor_k = params.neighbor_k.max(1);
            let sims = build_similarity_model(train, orientation, Metric::Cosine, neighbor_k, 1)?;
            let w = explainability_scores(train, &sims, params.style, params.theta, neighbor_k)?;
            Fitted::Factor(train_emf(train, &cfg, &w, params.normalize)?)
        }
    };
    Ok(Recommender {
        kind,
        train: train.clone(),
        fitted,
    })
}

impl Recommender {
    /// Neighbors for kNN, rank otherwise.
    pub fn k(&self) -> usize {
        match &self.fitted {
            Fitted::Knn(s) => s.k(),
            Fitted::Svd(m) => m.k(),
            Fitted::Factor(m) => m.k(),
        }
    }

    pub fn normalization(&self) -> NormalizationKind {
        match &self.fitted {
            Fitted::Knn(_) => NormalizationKind::None,
            Fitted::Svd(m) => m.normalization.kind,
            Fitted::Factor(m) => m.normalization.kind,
        }
    }

    pub fn describe(&self) -> String {
        match &self.fitted {
            Fitted::Knn(s) => format!("{} metric={} k={}", self.kind, s.metric(), s.k()),
            _ => format!("{} k={} normalization={}", self.kind, self.k(), self.normalization()),
        }
    }

    /// Clamped rating prediction for dense indices.
    pub fn predict(&self, u: usize, i: usize) -> Result<f64> {
        match &self.fitted {
            Fitted::Knn(s) if self.kind == ModelKind::UserKnn => Ok(predict_user_based(&self.train, s, u, i)?.score),
            Fitted::Knn(s) => Ok(predict_item_based(&self.train, s, u, i)?.score),
            Fitted::Svd(m) => svd_predict(m, u, i),
            Fitted::Factor(m) => predict_factor(m, u, i),
        }
    }

    /// Top-`n` unrated items. Latent models rank every unrated item by its
    /// unclamped score and report that score.
    pub fn recommend(&self, u: usize, n: usize) -> Result<RecommendationList> {
        let latent = |score: &dyn Fn(usize) -> f64| -> Result<RecommendationList> {
            crate::neighborhood::check_list_size(n)?;
            self.train.check_user(u)?;
            let mut scored: Vec<(usize, f64)> = (0..self.train.n_items())
                .filter(|&i| !self.train.has_rated(u, i))
                .map(|i| (i, score(i)))
                .collect();
            scored.sort_by(rank_scored);
            scored.truncate(n);
            Ok(RecommendationList { user: u, items: scored })
        };
        match &self.fitted {
            Fitted::Knn(s) if self.kind == ModelKind::UserKnn => topn_user_based(&self.train, s, u, n),
            Fitted::Knn(s) => topn_item_based(&self.train, s, u, n),
            Fitted::Svd(m) => latent(&|i| m.reconstruct(u, i)),
            Fitted::Factor(m) => latent(&|i| m.predict_raw(u, i)),
        }
    }

    /// `(predicted, actual)` pairs grouped by user.
    pub fn prediction_pairs(&self, test: &[(usize, usize, f64)]) -> Result<Vec<Vec<(f64, f64)>>> {
        let mut per_user = vec![Vec::new(); self.train.n_users()];
        for &(u, i, r) in test {
            per_user
                .get_mut(u)
                .ok_or_else(|| Error::domain(format!("test user index {u} out of range")))?
                .push((self.predict(u, i)?, r));
        }
        Ok(per_user)
    }
}

/// Full report: accuracy on every test pair, then set, rank and novelty
/// metrics on top-N lists for every user with held-out ratings. Coverage
/// is reported for user-kNN models only.
pub fn evaluate(
    rec: &Recommender,
    test: &[(usize, usize, f64)],
    cfg: &EvalConfig,
    split_seed: u64,
    split_ratio: f64,
) -> Result<EvaluationReport> {
    cfg.validate()?;
    let mut report = EvaluationReport::new(rec.describe(), split_seed, split_ratio, cfg.clone());
    let pairs = rec.prediction_pairs(test)?;
    report.record("mae", metrics::mae(&pairs)?)?;
    report.record("rmse", metrics::rmse(&pairs)?)?;

    let held = HeldOut::new(rec.train.n_users(), test)?;
    let users: Vec<usize> = held.users().collect();
    if let (ModelKind::UserKnn, Fitted::Knn(s)) = (rec.kind, &rec.fitted) {
        report.record("coverage", metrics::coverage(&rec.train, s, &users)?)?;
    }
    let lists = users
        .iter()
        .map(|&u| rec.recommend(u, cfg.list_size))
        .collect::<Result<Vec<_>>>()?;
    if lists.iter().any(|l| !l.items.is_empty()) {
        let q = metrics::precision_recall_f1(&lists, &held, cfg)?;
        report.record("precision", q.precision)?;
        report.record("recall", q.recall)?;
        report.record_value("f1", q.f1)?;
    }
    report.record("map", metrics::mean_average_precision(&lists, &held, cfg)?)?;
    report.notes.push("map is the mean of standard AP@n".into());
    report.record("half_life", metrics::half_life(&lists, &held, cfg)?)?;
    report.record("dcg", metrics::dcg(&lists, &held, cfg)?)?;
    let item_sims = build_similarity_model(&rec.train, Orientation::ItemItem, Metric::Cosine, 1, 1)?;
    let (novelty, diversity) = metrics::novelty_diversity(&lists, |a, b| item_sims.weight(a, b));
    report.record("novelty", novelty)?;
    report.record("diversity", diversity)?;
    Ok(report)
}
