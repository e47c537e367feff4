//! Gradient-trained latent factor models.
//!
//! * MF (regularized SVD). Independent `lambda_p` / `lambda_q` give the
//!   PMF parameterization; equal values are the single-λ objective.
//! * NMF with multiplicative updates, trained on raw ratings only.
//! * EMF: MF plus a penalty pulling `P_u` toward `Q_i` in proportion to the
//!   neighborhood explainability weight `W_{u,i}`.
//!
//! All objectives use the penalty (plus) form of the regularizers and the
//! signed error `e = R - P_u·Q_i`.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ratings::{center_by_user, clamp_rating, NormalizationState, RatingsMatrix};
use crate::similarity::{Orientation, SimilarityModel};

/// Added to NMF denominators.
pub const NMF_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorKind {
    Mf,
    Nmf,
    Emf,
}

impl FactorKind {
    pub fn name(self) -> &'static str {
        match self {
            FactorKind::Mf => "mf",
            FactorKind::Nmf => "nmf",
            FactorKind::Emf => "emf",
        }
    }
}

impl FromStr for FactorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mf" => Ok(FactorKind::Mf),
            "nmf" => Ok(FactorKind::Nmf),
            "emf" => Ok(FactorKind::Emf),
            other => Err(Error::domain(format!("unknown factor model kind {other:?}"))),
        }
    }
}

impl fmt::Display for FactorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Hyperparameters shared by the factor models.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Latent dimension.
    pub k: usize,
    pub alpha: f64,
    pub lambda_p: f64,
    pub lambda_q: f64,
    /// EMF L2 coefficient (replaces `lambda_p`/`lambda_q` there).
    pub beta: f64,
    /// EMF explainability coefficient.
    pub lambda_expl: f64,
    pub epochs: usize,
    pub seed: u64,
    /// MF/EMF factors start uniform in `[0, init_scale)`.
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 10,
            alpha: 0.01,
            lambda_p: 0.02,
            lambda_q: 0.02,
            beta: 0.02,
            lambda_expl: 0.1,
            epochs: 10,
            seed: 1,
            init_scale: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let checks: [(&str, f64, bool); 6] = [
            ("alpha", self.alpha, self.alpha >= 0.0),
            ("lambda_p", self.lambda_p, self.lambda_p >= 0.0),
            ("lambda_q", self.lambda_q, self.lambda_q >= 0.0),
            ("beta", self.beta, self.beta >= 0.0),
            ("lambda_expl", self.lambda_expl, self.lambda_expl >= 0.0),
            ("init_scale", self.init_scale, self.init_scale >= 0.0),
        ];
        for (name, value, ok) in checks {
            if !value.is_finite() || !ok {
                return Err(Error::domain(format!("{name} = {value} is invalid")));
            }
        }
        if self.k == 0 {
            return Err(Error::domain("k must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::domain("epochs must be at least 1"));
        }
        Ok(())
    }
}

/// Dense row-major `rows × k` factor matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Factors {
    rows: usize,
    k: usize,
    data: Vec<f64>,
}

impl Factors {
    pub fn zeros(rows: usize, k: usize) -> Self {
        Factors {
            rows,
            k,
            data: vec![0.0; rows * k],
        }
    }

    pub fn from_vec(rows: usize, k: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * k {
            return Err(Error::domain(format!(
                "factor data length {} does not match {rows}×{k}",
                data.len()
            )));
        }
        Ok(Factors { rows, k, data })
    }

    fn random(rows: usize, k: usize, rng: &mut ChaCha8Rng, sample: impl Fn(&mut ChaCha8Rng) -> f64) -> Self {
        let data = (0..rows * k).map(|_| sample(rng)).collect();
        Factors { rows, k, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.k..(r + 1) * self.k]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.k..(r + 1) * self.k]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Trained user factors `P` (`m × k`) and item factors `Q` (`n × k`).
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    pub p: Factors,
    pub q: Factors,
    pub normalization: NormalizationState,
    pub kind: FactorKind,
}

impl FactorModel {
    pub fn k(&self) -> usize {
        self.p.k()
    }

    pub fn n_users(&self) -> usize {
        self.p.rows()
    }

    pub fn n_items(&self) -> usize {
        self.q.rows()
    }

    /// `Q_i·P_u` plus the normalization offset, unclamped.
    pub fn predict_raw(&self, u: usize, i: usize) -> f64 {
        self.normalization.invert(u, dot(self.p.row(u), self.q.row(i)))
    }
}

/// Clamped `Q_i·P_u` (+ user mean when trained on centered ratings).
pub fn predict_factor(model: &FactorModel, u: usize, i: usize) -> Result<f64> {
    if u >= model.n_users() || i >= model.n_items() {
        return Err(Error::domain(format!(
            "index ({u}, {i}) outside {}×{} model",
            model.n_users(),
            model.n_items()
        )));
    }
    Ok(clamp_rating(model.predict_raw(u, i)))
}

/// One simultaneous SGD update of `P_u` and `Q_i` on a single rating.
///
/// `pull` is `λ_expl · W_{u,i}` (zero for plain MF); with it the update
/// follows the per-example gradient of
/// `½e² + ½λp‖P_u‖² + ½λq‖Q_i‖² + ½·pull·‖P_u − Q_i‖²`.
/// Returns the error before the update.
pub fn sgd_step(p_u: &mut [f64], q_i: &mut [f64], rating: f64, alpha: f64, lambda_p: f64, lambda_q: f64, pull: f64) -> f64 {
    let e = rating - dot(p_u, q_i);
    if pull == 0.0 {
        for (p, q) in p_u.iter_mut().zip(q_i.iter_mut()) {
            let (pu, qi) = (*p, *q);
            *q = qi + alpha * (e * pu - lambda_q * qi);
            *p = pu + alpha * (e * qi - lambda_p * pu);
        }
    } else {
        for (p, q) in p_u.iter_mut().zip(q_i.iter_mut()) {
            let (pu, qi) = (*p, *q);
            let gap = pull * (pu - qi);
            *q = qi + alpha * (e * pu - lambda_q * qi + gap);
            *p = pu + alpha * (e * qi - lambda_p * pu - gap);
        }
    }
    e
}

fn training_set(train: &RatingsMatrix, normalize: bool) -> Result<(RatingsMatrix, NormalizationState)> {
    if normalize {
        center_by_user(train)
    } else {
        Ok((train.clone(), NormalizationState::none(train.n_users())))
    }
}

fn init_uniform(train: &RatingsMatrix, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> (Factors, Factors) {
    let scale = cfg.init_scale;
    let draw = |r: &mut ChaCha8Rng| r.gen::<f64>() * scale;
    let p = Factors::random(train.n_users(), cfg.k, rng, draw);
    let q = Factors::random(train.n_items(), cfg.k, rng, draw);
    (p, q)
}

/// Called after every epoch with the 1-based epoch number.
pub type EpochObserver<'a> = &'a mut dyn FnMut(usize, &FactorModel);

fn sgd_train(
    train: &RatingsMatrix,
    cfg: &TrainConfig,
    normalize: bool,
    kind: FactorKind,
    weights: Option<&ExplainabilityWeights>,
    observer: Option<EpochObserver<'_>>,
) -> Result<FactorModel> {
    cfg.validate()?;
    let (data, normalization) = training_set(train, normalize)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (p, q) = init_uniform(&data, cfg, &mut rng);
    let mut model = FactorModel {
        p,
        q,
        normalization,
        kind,
    };
    let (lambda_p, lambda_q) = match kind {
        FactorKind::Emf => (cfg.beta, cfg.beta),
        _ => (cfg.lambda_p, cfg.lambda_q),
    };
    let mut order: Vec<(usize, usize, f64)> = data.triples().collect();
    let mut observer = observer;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for &(u, i, r) in &order {
            let pull = match weights {
                Some(w) => cfg.lambda_expl * w.get(u, i),
                None => 0.0,
            };
            sgd_step(model.p.row_mut(u), model.q.row_mut(i), r, cfg.alpha, lambda_p, lambda_q, pull);
        }
        if !model.p.all_finite() || !model.q.all_finite() {
            return Err(Error::Diverged { epoch });
        }
        if let Some(obs) = observer.as_mut() {
            obs(epoch, &model);
        }
    }
    Ok(model)
}

/// Regularized MF by SGD over a seeded shuffle of the training ratings.
pub fn train_mf(train: &RatingsMatrix, cfg: &TrainConfig, normalize: bool) -> Result<FactorModel> {
    sgd_train(train, cfg, normalize, FactorKind::Mf, None, None)
}

/// [`train_mf`] with a per-epoch callback.
pub fn train_mf_observed(
    train: &RatingsMatrix,
    cfg: &TrainConfig,
    normalize: bool,
    observer: EpochObserver<'_>,
) -> Result<FactorModel> {
    sgd_train(train, cfg, normalize, FactorKind::Mf, None, Some(observer))
}

/// Explainable MF: SGD with the explainability pull toward `Q_i`.
pub fn train_emf(
    train: &RatingsMatrix,
    cfg: &TrainConfig,
    weights: &ExplainabilityWeights,
    normalize: bool,
) -> Result<FactorModel> {
    train_emf_observed(train, cfg, weights, normalize, &mut |_, _| {})
}

pub fn train_emf_observed(
    train: &RatingsMatrix,
    cfg: &TrainConfig,
    weights: &ExplainabilityWeights,
    normalize: bool,
    observer: EpochObserver<'_>,
) -> Result<FactorModel> {
    if weights.n_users() != train.n_users() {
        return Err(Error::domain("explainability weights built on a different matrix"));
    }
    sgd_train(train, cfg, normalize, FactorKind::Emf, Some(weights), Some(observer))
}

/// NMF with multiplicative updates on raw ratings.
pub fn train_nmf(train: &RatingsMatrix, cfg: &TrainConfig) -> Result<FactorModel> {
    train_nmf_observed(train, cfg, &mut |_, _| {})
}

pub fn train_nmf_observed(train: &RatingsMatrix, cfg: &TrainConfig, observer: EpochObserver<'_>) -> Result<FactorModel> {
    cfg.validate()?;
    if train.triples().any(|(_, _, r)| r < 0.0) {
        return Err(Error::domain("NMF requires non-negative ratings"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // uniform on (ε, 1]
    let draw = |r: &mut ChaCha8Rng| NMF_EPSILON + (1.0 - NMF_EPSILON) * (1.0 - r.gen::<f64>());
    let p = Factors::random(train.n_users(), cfg.k, &mut rng, draw);
    let q = Factors::random(train.n_items(), cfg.k, &mut rng, draw);
    let mut model = FactorModel {
        p,
        q,
        normalization: NormalizationState::none(train.n_users()),
        kind: FactorKind::Nmf,
    };
    let k = cfg.k;
    let mut num = vec![0.0; k];
    let mut den = vec![0.0; k];
    for epoch in 1..=cfg.epochs {
        for u in 0..train.n_users() {
            let row = train.user_row(u);
            num.fill(0.0);
            den.fill(0.0);
            for &(i, r) in row {
                let q_i = model.q.row(i);
                let pred = dot(model.p.row(u), q_i);
                for l in 0..k {
                    num[l] += q_i[l] * r;
                    den[l] += q_i[l] * pred;
                }
            }
            let reg = cfg.lambda_p * row.len() as f64;
            let p_u = model.p.row_mut(u);
            for l in 0..k {
                p_u[l] *= num[l] / (den[l] + reg * p_u[l] + NMF_EPSILON);
            }
        }
        for i in 0..train.n_items() {
            let col = train.item_col(i);
            num.fill(0.0);
            den.fill(0.0);
            for &(u, r) in col {
                let p_u = model.p.row(u);
                let pred = dot(p_u, model.q.row(i));
                for l in 0..k {
                    num[l] += p_u[l] * r;
                    den[l] += p_u[l] * pred;
                }
            }
            let reg = cfg.lambda_q * col.len() as f64;
            let q_i = model.q.row_mut(i);
            for l in 0..k {
                q_i[l] *= num[l] / (den[l] + reg * q_i[l] + NMF_EPSILON);
            }
        }
        if !model.p.all_finite() || !model.q.all_finite() {
            return Err(Error::Diverged { epoch });
        }
        observer(epoch, &model);
    }
    Ok(model)
}

/// Regularized squared-error objective (penalty form) over the stored
/// ratings of `data`.
pub fn objective(data: &RatingsMatrix, model: &FactorModel, lambda_p: f64, lambda_q: f64) -> f64 {
    let sse: f64 = data
        .triples()
        .map(|(u, i, r)| (r - dot(model.p.row(u), model.q.row(i))).powi(2))
        .sum();
    let np: f64 = model.p.as_slice().iter().map(|x| x * x).sum();
    let nq: f64 = model.q.as_slice().iter().map(|x| x * x).sum();
    0.5 * sse + 0.5 * lambda_p * np + 0.5 * lambda_q * nq
}

/// Neighborhood style used for explainability.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExplanationStyle {
    UserBased,
    ItemBased,
}

impl ExplanationStyle {
    pub fn name(self) -> &'static str {
        match self {
            ExplanationStyle::UserBased => "user_based",
            ExplanationStyle::ItemBased => "item_based",
        }
    }
}

impl FromStr for ExplanationStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "user_based" | "user" => Ok(ExplanationStyle::UserBased),
            "item_based" | "item" => Ok(ExplanationStyle::ItemBased),
            other => Err(Error::domain(format!("unknown explanation style {other:?}"))),
        }
    }
}

/// Sparse `W_{u,i}`: expected neighborhood rating, kept only above `theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplainabilityWeights {
    rows: Vec<Vec<(usize, f64)>>,
    pub theta: f64,
    pub neighbor_k: usize,
    pub style: ExplanationStyle,
}

impl ExplainabilityWeights {
    /// No explainable pairs at all.
    pub fn zeros(n_users: usize) -> Self {
        ExplainabilityWeights {
            rows: vec![Vec::new(); n_users],
            theta: 0.0,
            neighbor_k: 0,
            style: ExplanationStyle::UserBased,
        }
    }

    pub fn n_users(&self) -> usize {
        self.rows.len()
    }

    /// Stored weight, zero when unstored.
    pub fn get(&self, u: usize, i: usize) -> f64 {
        let row = &self.rows[u];
        row.binary_search_by_key(&i, |e| e.0).map_or(0.0, |p| row[p].1)
    }

    pub fn row(&self, u: usize) -> &[(usize, f64)] {
        &self.rows[u]
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }
}

/// Explainability of every `(u, i)` pair: the mean rating the neighborhood
/// gives, with absent neighbors counting as zero mass. User style uses the
/// first `neighbor_k` of `knn[u]` and their ratings of `i`; item style uses
/// the first `neighbor_k` of `knn[i]` and `u`'s ratings of those items.
pub fn explainability_scores(
    train: &RatingsMatrix,
    sims: &SimilarityModel,
    style: ExplanationStyle,
    theta: f64,
    neighbor_k: usize,
) -> Result<ExplainabilityWeights> {
    if theta.is_nan() || theta < 0.0 {
        return Err(Error::domain(format!("theta = {theta} must be non-negative")));
    }
    let want = match style {
        ExplanationStyle::UserBased => Orientation::UserUser,
        ExplanationStyle::ItemBased => Orientation::ItemItem,
    };
    if sims.orientation() != want {
        return Err(Error::domain(format!(
            "{} explanations need a {want} similarity model",
            style.name()
        )));
    }
    let m = train.n_users();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
    match style {
        ExplanationStyle::UserBased => {
            let mut acc = vec![0.0; train.n_items()];
            let mut touched = Vec::new();
            for (u, row) in rows.iter_mut().enumerate() {
                let hood = &sims.neighbors(u)[..sims.neighbors(u).len().min(neighbor_k)];
                if hood.is_empty() {
                    continue;
                }
                for &(v, _) in hood {
                    for &(i, r) in train.user_row(v) {
                        if acc[i] == 0.0 {
                            touched.push(i);
                        }
                        acc[i] += r;
                    }
                }
                touched.sort_unstable();
                for &i in &touched {
                    let expl = acc[i] / hood.len() as f64;
                    if expl > theta {
                        row.push((i, expl));
                    }
                    acc[i] = 0.0;
                }
                touched.clear();
            }
        }
        ExplanationStyle::ItemBased => {
            for i in 0..train.n_items() {
                let hood = &sims.neighbors(i)[..sims.neighbors(i).len().min(neighbor_k)];
                if hood.is_empty() {
                    continue;
                }
                let mut acc: std::collections::BTreeMap<usize, f64> = Default::default();
                for &(j, _) in hood {
                    for &(u, r) in train.item_col(j) {
                        *acc.entry(u).or_insert(0.0) += r;
                    }
                }
                for (u, sum) in acc {
                    let expl = sum / hood.len() as f64;
                    if expl > theta {
                        rows[u].push((i, expl));
                    }
                }
            }
        }
    }
    Ok(ExplainabilityWeights {
        rows,
        theta,
        neighbor_k,
        style,
    })
}
