//! Seeded property checks with naive reference implementations. Shared by
//! the proptest suites and the acceptance run.

#![allow(dead_code, clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

use cfkit::factorization::{
    sgd_step, train_emf, train_mf, train_nmf_observed, ExplainabilityWeights, TrainConfig,
};
use cfkit::fixtures::from_cells;
use cfkit::metrics::{self, EvalConfig, HeldOut};
use cfkit::neighborhood::{predict_item_based, predict_user_based, RecommendationList};
use cfkit::persist::{read_model, write_model};
use cfkit::ratings::{split_holdout, RatingsMatrix};
use cfkit::recommender::{fit, FitParams, ModelKind};
use cfkit::similarity::{build_similarity_model, similarity, Metric, Orientation, SimilarityModel};
use cfkit::svd::truncated_svd;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `m × n` matrix with integer ratings 1..=5 at the given density.
pub fn random_matrix(r: &mut ChaCha8Rng, m: usize, n: usize, density: f64) -> RatingsMatrix {
    let mut cells = Vec::new();
    for u in 0..m {
        for i in 0..n {
            if r.gen::<f64>() < density {
                cells.push((u, i, r.gen_range(1..=5) as f64));
            }
        }
    }
    from_cells(m, n, &cells)
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn opt_close(a: Option<f64>, b: Option<f64>, tol: f64) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(x), Some(y)) => close(x, y, tol),
        _ => false,
    }
}

// ---------- similarity ----------

/// `vectors[e][c]`: rating of entity `e` at coordinate `c`.
fn dense_vectors(m: &RatingsMatrix, orientation: Orientation) -> Vec<Vec<Option<f64>>> {
    let (rows, cols) = (m.n_users(), m.n_items());
    let grid: Vec<Vec<Option<f64>>> = (0..rows).map(|u| (0..cols).map(|i| m.rating(u, i)).collect()).collect();
    match orientation {
        Orientation::UserUser => grid,
        Orientation::ItemItem => (0..cols).map(|i| (0..rows).map(|u| grid[u][i]).collect()).collect(),
    }
}

fn naive_similarity(
    m: &RatingsMatrix,
    orientation: Orientation,
    metric: Metric,
    a: usize,
    b: usize,
    min_overlap: usize,
) -> Option<f64> {
    let vecs = dense_vectors(m, orientation);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut coords = Vec::new();
    for c in 0..vecs[a].len() {
        if let (Some(x), Some(y)) = (vecs[a][c], vecs[b][c]) {
            xs.push(x);
            ys.push(y);
            coords.push(c);
        }
    }
    if xs.is_empty() || xs.len() < min_overlap {
        return None;
    }
    let cos = |x: &[f64], y: &[f64]| -> Option<f64> {
        let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
        let nx: f64 = x.iter().map(|v| v * v).sum();
        let ny: f64 = y.iter().map(|v| v * v).sum();
        if nx < 1e-9 || ny < 1e-9 {
            None
        } else {
            Some((dot / (nx.sqrt() * ny.sqrt())).clamp(-1.0, 1.0))
        }
    };
    match metric {
        Metric::Euclidean => {
            let d: f64 = xs.iter().zip(&ys).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
            Some(1.0 / (1.0 + d))
        }
        Metric::Cosine => cos(&xs, &ys),
        Metric::Pearson => {
            let mx = xs.iter().sum::<f64>() / xs.len() as f64;
            let my = ys.iter().sum::<f64>() / ys.len() as f64;
            let dx: Vec<f64> = xs.iter().map(|v| v - mx).collect();
            let dy: Vec<f64> = ys.iter().map(|v| v - my).collect();
            cos(&dx, &dy)
        }
        Metric::AdjustedCosine => {
            let users = dense_vectors(m, Orientation::UserUser);
            let mean = |u: usize| {
                let r: Vec<f64> = users[u].iter().flatten().copied().collect();
                r.iter().sum::<f64>() / r.len() as f64
            };
            let dx: Vec<f64> = xs.iter().zip(&coords).map(|(v, &u)| v - mean(u)).collect();
            let dy: Vec<f64> = ys.iter().zip(&coords).map(|(v, &u)| v - mean(u)).collect();
            cos(&dx, &dy)
        }
    }
}

const METRICS: [(Orientation, Metric); 7] = [
    (Orientation::UserUser, Metric::Pearson),
    (Orientation::UserUser, Metric::Cosine),
    (Orientation::UserUser, Metric::Euclidean),
    (Orientation::ItemItem, Metric::Pearson),
    (Orientation::ItemItem, Metric::Cosine),
    (Orientation::ItemItem, Metric::Euclidean),
    (Orientation::ItemItem, Metric::AdjustedCosine),
];

/// Symmetry, range and oracle agreement on a random 6×6 half-dense matrix,
/// plus the shift and scale invariances.
pub fn check_similarity(seed: u64) -> Check {
    let mut r = rng(seed);
    let m = random_matrix(&mut r, 6, 6, 0.5);
    for (orientation, metric) in METRICS {
        let min_overlap = metric.default_min_overlap();
        let model = build_similarity_model(&m, orientation, metric, 3, min_overlap).map_err(|e| e.to_string())?;
        let len = model.n_entities();
        for a in 0..len {
            for b in 0..len {
                if a == b {
                    continue;
                }
                let got = similarity(&m, orientation, metric, a, b, min_overlap).map_err(|e| e.to_string())?;
                let want = naive_similarity(&m, orientation, metric, a, b, min_overlap);
                ensure!(opt_close(got, want, 1e-10), "{orientation} {metric} ({a},{b}): {got:?} vs oracle {want:?}");
                ensure!(opt_close(model.weight(a, b), got, 0.0), "{metric} model weight differs from pairwise value");
                let back = similarity(&m, orientation, metric, b, a, min_overlap).map_err(|e| e.to_string())?;
                ensure!(opt_close(got, back, 1e-12), "{metric} not symmetric at ({a},{b})");
                if let Some(w) = got {
                    let ok = match metric {
                        Metric::Euclidean => w > 0.0 && w <= 1.0,
                        _ => (-1.0 - 1e-12..=1.0 + 1e-12).contains(&w),
                    };
                    ensure!(ok, "{metric} weight {w} out of range");
                }
            }
        }
    }
    // pearson ignores a shift of one user's ratings; cosine ignores scaling
    let target = r.gen_range(0..6);
    let shift = r.gen_range(-2.0..2.0);
    let factor = r.gen_range(0.1..3.0);
    let shifted = m.map_ratings(|u, _, x| if u == target { x + shift } else { x }).unwrap();
    let scaled = m.map_ratings(|u, _, x| if u == target { x * factor } else { x }).unwrap();
    for other in (0..6).filter(|&o| o != target) {
        let p0 = similarity(&m, Orientation::UserUser, Metric::Pearson, target, other, 2).unwrap();
        let p1 = similarity(&shifted, Orientation::UserUser, Metric::Pearson, target, other, 2).unwrap();
        ensure!(opt_close(p0, p1, 1e-10), "pearson changed under shift: {p0:?} vs {p1:?}");
        let c0 = similarity(&m, Orientation::UserUser, Metric::Cosine, target, other, 1).unwrap();
        let c1 = similarity(&scaled, Orientation::UserUser, Metric::Cosine, target, other, 1).unwrap();
        ensure!(opt_close(c0, c1, 1e-10), "cosine changed under scaling: {c0:?} vs {c1:?}");
    }
    Ok(())
}

// ---------- neighborhood ----------

fn naive_knn(model: &SimilarityModel, e: usize, k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = (0..model.n_entities())
        .filter(|&o| o != e)
        .filter_map(|o| model.weight(e, o).map(|w| (o, w)))
        .collect();
    all.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
    all.truncate(k);
    all
}

fn naive_user_prediction(m: &RatingsMatrix, sims: &SimilarityModel, k: usize, u: usize, i: usize) -> f64 {
    let row = |x: usize| -> Vec<(usize, f64)> { (0..m.n_items()).filter_map(|j| m.rating(x, j).map(|r| (j, r))).collect() };
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let own = row(u);
    let user_mean = if own.is_empty() { m.global_mean() } else { mean(&own.iter().map(|e| e.1).collect::<Vec<_>>()) };
    let (mut num, mut den, mut support) = (0.0, 0.0, 0);
    for (v, w) in naive_knn(sims, u, k) {
        if let Some(rvi) = m.rating(v, i) {
            let shared: Vec<f64> = row(v).iter().filter(|e| m.rating(u, e.0).is_some()).map(|e| e.1).collect();
            let mv = if shared.is_empty() {
                mean(&row(v).iter().map(|e| e.1).collect::<Vec<_>>())
            } else {
                mean(&shared)
            };
            num += (rvi - mv) * w;
            den += w.abs();
            support += 1;
        }
    }
    let raw = if support == 0 || den == 0.0 {
        if !own.is_empty() {
            user_mean
        } else if (0..m.n_users()).any(|x| m.rating(x, i).is_some()) {
            m.item_mean(i)
        } else {
            m.global_mean()
        }
    } else {
        user_mean + num / den
    };
    raw.clamp(1.0, 5.0)
}

fn naive_item_prediction(m: &RatingsMatrix, sims: &SimilarityModel, k: usize, u: usize, i: usize) -> f64 {
    let (mut num, mut den, mut support) = (0.0, 0.0, 0);
    for (j, w) in naive_knn(sims, i, k) {
        if let Some(r) = m.rating(u, j) {
            num += r * w;
            den += w.abs();
            support += 1;
        }
    }
    let raw = if support == 0 || den == 0.0 {
        let col: Vec<f64> = (0..m.n_users()).filter_map(|x| m.rating(x, i)).collect();
        if col.is_empty() {
            m.global_mean()
        } else {
            col.iter().sum::<f64>() / col.len() as f64
        }
    } else {
        num / den
    };
    raw.clamp(1.0, 5.0)
}

fn ordering(list: &RecommendationList) -> Vec<usize> {
    list.item_ids()
}

/// Oracle agreement on random 8×8 matrices, no re-recommendation, ranking
/// invariance under positive weight scaling, and the non-negative
/// agreement bound.
pub fn check_neighborhood(seed: u64) -> Check {
    let mut r = rng(seed);
    let m = random_matrix(&mut r, 8, 8, 0.45);
    let k = r.gen_range(1..=7);
    let metric = [Metric::Pearson, Metric::Cosine, Metric::Euclidean][r.gen_range(0..3)];
    let us = build_similarity_model(&m, Orientation::UserUser, metric, k, metric.default_min_overlap()).unwrap();
    let is = build_similarity_model(&m, Orientation::ItemItem, metric, k, metric.default_min_overlap()).unwrap();
    for u in 0..8 {
        for i in 0..8 {
            let pu = predict_user_based(&m, &us, u, i).unwrap();
            let want = naive_user_prediction(&m, &us, k, u, i);
            ensure!(close(pu.score, want, 1e-10), "user-based ({u},{i}) k={k} {metric}: {} vs oracle {want}", pu.score);
            ensure!(pu.fallback_used || pu.support >= 1, "support 0 without fallback");
            let pi = predict_item_based(&m, &is, u, i).unwrap();
            let want = naive_item_prediction(&m, &is, k, u, i);
            ensure!(close(pi.score, want, 1e-10), "item-based ({u},{i}) k={k} {metric}: {} vs oracle {want}", pi.score);

            let contributing: Vec<(usize, f64)> = us.neighbors(u).iter().copied().filter(|&(v, _)| m.has_rated(v, i)).collect();
            let all_up = contributing.iter().all(|&(v, w)| {
                w >= 0.0 && m.rating(v, i).unwrap() >= cfkit::neighborhood::co_rated_mean(&m, v, u)
            });
            if !pu.fallback_used && all_up {
                ensure!(pu.raw >= m.user_mean(u) - 1e-12, "agreement bound violated at ({u},{i})");
            }
        }
    }
    for u in 0..8 {
        for (sims, user_based) in [(&us, true), (&is, false)] {
            let top = |s: &SimilarityModel| {
                if user_based {
                    cfkit::neighborhood::topn_user_based(&m, s, u, 5).unwrap()
                } else {
                    cfkit::neighborhood::topn_item_based(&m, s, u, 5).unwrap()
                }
            };
            let list = top(sims);
            ensure!(list.items.iter().all(|e| !m.has_rated(u, e.0)), "re-recommended a rated item to {u}");
            ensure!(
                list.items.windows(2).all(|w| w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0)),
                "list for {u} not ordered"
            );
            // powers of two scale every weight exactly
            for factor in [2.0, 0.25] {
                ensure!(ordering(&top(&sims.scaled(factor))) == ordering(&list), "ranking changed under scaling by {factor}");
            }
        }
    }
    Ok(())
}

// ---------- svd ----------

fn random_dense(r: &mut ChaCha8Rng, m: usize, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, n, |_, _| r.gen_range(-3.0..3.0))
}

/// Orthonormal factors, singular values against an independent SVD,
/// Eckart–Young dominance over 20 random rank-k competitors, and
/// non-increasing error as the rank grows.
pub fn check_svd(seed: u64) -> Check {
    let mut r = rng(seed);
    let (m, n) = (r.gen_range(3..10), r.gen_range(3..10));
    let a = random_dense(&mut r, m, n);
    let full = m.min(n);
    let oracle = nalgebra::linalg::SVD::new(a.clone(), false, false);
    let mut sigma: Vec<f64> = oracle.singular_values.iter().copied().collect();
    sigma.sort_by(|x, y| y.partial_cmp(x).unwrap());
    let mut previous = f64::INFINITY;
    for k in 1..=full {
        let model = truncated_svd(&a, k).map_err(|e| e.to_string())?;
        let ptp = model.left.transpose() * &model.left;
        let qtq = model.right.transpose() * &model.right;
        let eye = DMatrix::<f64>::identity(k, k);
        ensure!((ptp - &eye).amax() < 1e-8, "left factors not orthonormal (k={k})");
        ensure!((qtq - &eye).amax() < 1e-8, "right factors not orthonormal (k={k})");
        for (j, s) in model.singular_values.iter().enumerate() {
            ensure!(close(*s, sigma[j], 1e-8 * sigma[0].max(1.0)), "σ_{j} = {s} vs oracle {}", sigma[j]);
        }
        let err = (&a - model.low_rank()).norm();
        let tail: f64 = sigma[k..].iter().map(|s| s * s).sum::<f64>().sqrt();
        ensure!(close(err, tail, 1e-8 * sigma[0].max(1.0)), "rank-{k} error {err} vs tail {tail}");
        ensure!(err <= previous + 1e-10, "error grew from {previous} to {err} at k={k}");
        previous = err;
        if k < full {
            for _ in 0..20 {
                let b = random_dense(&mut r, m, k) * random_dense(&mut r, k, n);
                let scale = r.gen_range(0.01..1.0);
                let competitor = (&a - b * scale).norm();
                ensure!(err <= competitor + 1e-10, "rank-{k} competitor beat truncation: {competitor} < {err}");
            }
        }
    }
    Ok(())
}

// ---------- factorization ----------

fn per_example_objective(p: &[f64], q: &[f64], rating: f64, lp: f64, lq: f64, pull: f64) -> f64 {
    let dot: f64 = p.iter().zip(q).map(|(a, b)| a * b).sum();
    let e = rating - dot;
    let np: f64 = p.iter().map(|x| x * x).sum();
    let nq: f64 = q.iter().map(|x| x * x).sum();
    let gap: f64 = p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
    0.5 * e * e + 0.5 * lp * np + 0.5 * lq * nq + 0.5 * pull * gap
}

/// The SGD step's implied gradient (step with alpha = 1) against central
/// finite differences, for MF (`pull = 0`) and EMF.
pub fn check_gradients(seed: u64) -> Check {
    let mut r = rng(seed);
    let k = 3;
    for pull in [0.0, r.gen_range(0.01..2.0)] {
        let p: Vec<f64> = (0..k).map(|_| r.gen_range(-1.0..1.0)).collect();
        let q: Vec<f64> = (0..k).map(|_| r.gen_range(-1.0..1.0)).collect();
        let rating = r.gen_range(1..=5) as f64;
        let (lp, lq) = (r.gen_range(0.0..0.5), r.gen_range(0.0..0.5));
        let (mut p1, mut q1) = (p.clone(), q.clone());
        sgd_step(&mut p1, &mut q1, rating, 1.0, lp, lq, pull);
        let analytic: Vec<f64> = p.iter().zip(&p1).chain(q.iter().zip(&q1)).map(|(a, b)| a - b).collect();
        let h = 1e-6;
        let mut numeric = Vec::new();
        for idx in 0..2 * k {
            let mut plus = [p.clone(), q.clone()];
            let mut minus = [p.clone(), q.clone()];
            plus[idx / k][idx % k] += h;
            minus[idx / k][idx % k] -= h;
            let fp = per_example_objective(&plus[0], &plus[1], rating, lp, lq, pull);
            let fm = per_example_objective(&minus[0], &minus[1], rating, lp, lq, pull);
            numeric.push((fp - fm) / (2.0 * h));
        }
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = numeric.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-6);
        ensure!(diff / norm < 1e-5, "pull={pull}: analytic {analytic:?} vs numeric {numeric:?}");
    }
    Ok(())
}

/// NMF on a 3×3 non-negative matrix (k=2, no regularization): factors stay
/// non-negative after every epoch and the objective never increases.
pub fn check_nmf(seed: u64) -> Check {
    let mut r = rng(seed);
    let cells: Vec<(usize, usize, f64)> = (0..9).map(|c| (c / 3, c % 3, r.gen_range(0.0..5.0))).collect();
    let m = from_cells(3, 3, &cells);
    let cfg = TrainConfig {
        k: 2,
        lambda_p: 0.0,
        lambda_q: 0.0,
        epochs: 50,
        seed,
        ..TrainConfig::default()
    };
    let mut history = Vec::new();
    let mut negative = None;
    train_nmf_observed(&m, &cfg, &mut |epoch, model| {
        if model.p.min() < 0.0 || model.q.min() < 0.0 {
            negative.get_or_insert(epoch);
        }
        let loss: f64 = cells
            .iter()
            .map(|&(u, i, x)| {
                let dot: f64 = (0..2).map(|l| model.p.row(u)[l] * model.q.row(i)[l]).sum();
                0.5 * (x - dot).powi(2)
            })
            .sum();
        history.push(loss);
    })
    .map_err(|e| e.to_string())?;
    ensure!(negative.is_none(), "negative factor after epoch {negative:?}");
    for (t, w) in history.windows(2).enumerate() {
        ensure!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-14, "objective rose at epoch {}: {} -> {}", t + 2, w[0], w[1]);
    }
    Ok(())
}

/// Same seed, same factors; EMF with no explainable pairs is MF.
pub fn check_factor_determinism(seed: u64) -> Check {
    let mut r = rng(seed);
    let m = random_matrix(&mut r, 7, 6, 0.5);
    let lambda = r.gen_range(0.0..0.1);
    let cfg = TrainConfig {
        k: 3,
        epochs: 5,
        seed,
        lambda_p: lambda,
        lambda_q: lambda,
        beta: lambda,
        ..TrainConfig::default()
    };
    let normalize = r.gen_bool(0.5);
    let a = train_mf(&m, &cfg, normalize).unwrap();
    let b = train_mf(&m, &cfg, normalize).unwrap();
    ensure!(a == b, "same seed gave different factors");
    let e = train_emf(&m, &cfg, &ExplainabilityWeights::zeros(7), normalize).unwrap();
    ensure!(a.p == e.p && a.q == e.q, "EMF with zero weights diverged from MF");
    Ok(())
}

// ---------- metrics ----------

struct Fixture {
    test: Vec<(usize, usize, f64)>,
    predictions: Vec<Vec<(f64, f64)>>,
    lists: Vec<RecommendationList>,
    sim: Vec<Vec<f64>>,
}

fn metric_fixture(r: &mut ChaCha8Rng, n_items: usize, list_size: usize) -> Fixture {
    let mut test = Vec::new();
    let mut predictions = vec![Vec::new(); 10];
    let mut lists = Vec::new();
    for u in 0..10 {
        let mut items: Vec<usize> = (0..n_items).collect();
        items.shuffle(r);
        let held = r.gen_range(0..6);
        for &i in &items[..held] {
            let actual = r.gen_range(1..=5) as f64;
            test.push((u, i, actual));
            predictions[u].push((r.gen_range(1.0..5.0), actual));
        }
        items.shuffle(r);
        let len = r.gen_range(0..=list_size);
        lists.push(RecommendationList {
            user: u,
            items: items[..len].iter().map(|&i| (i, 0.0)).collect(),
        });
    }
    let mut sim = vec![vec![0.0; n_items]; n_items];
    for a in 0..n_items {
        for b in a + 1..n_items {
            let s = r.gen_range(0.0..1.0);
            sim[a][b] = s;
            sim[b][a] = s;
        }
    }
    Fixture {
        test,
        predictions,
        lists,
        sim,
    }
}

fn test_rating(test: &[(usize, usize, f64)], u: usize, i: usize) -> Option<f64> {
    test.iter().find(|t| t.0 == u && t.1 == i).map(|t| t.2)
}

fn naive_mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Every metric against set-enumeration references on random 10-user
/// fixtures, plus bounds and the diversity/novelty identity.
pub fn check_metrics(seed: u64) -> Check {
    let mut r = rng(seed);
    let n_items = 12;
    let cfg = EvalConfig {
        list_size: r.gen_range(1..=6),
        halflife_alpha: r.gen_range(2.0..6.0),
        halflife_d: r.gen_range(0.0..3.0),
        dcg_k: r.gen_range(1..=6),
        relevance_theta: [3.0, 4.0, 5.0][r.gen_range(0..3)],
    };
    let fx = metric_fixture(&mut r, n_items, cfg.list_size);
    let held = HeldOut::new(10, &fx.test).unwrap();
    let tol = 1e-10;

    let users: Vec<&Vec<(f64, f64)>> = fx.predictions.iter().filter(|p| !p.is_empty()).collect();
    if !users.is_empty() {
        let mae_ref = naive_mean(&users.iter().map(|p| naive_mean(&p.iter().map(|(a, b)| (a - b).abs()).collect::<Vec<_>>())).collect::<Vec<_>>());
        let rmse_ref = naive_mean(&users.iter().map(|p| naive_mean(&p.iter().map(|(a, b)| (a - b).powi(2)).collect::<Vec<_>>()).sqrt()).collect::<Vec<_>>());
        let got_mae = metrics::mae(&fx.predictions).unwrap();
        let got_rmse = metrics::rmse(&fx.predictions).unwrap();
        ensure!(close(got_mae.value, mae_ref, tol), "mae {} vs {mae_ref}", got_mae.value);
        ensure!(close(got_rmse.value, rmse_ref, tol), "rmse {} vs {rmse_ref}", got_rmse.value);
        ensure!(got_mae.skipped == 10 - users.len(), "mae skip count");
        for p in &users {
            let one = vec![(*p).clone()];
            let (a, b) = (metrics::mae(&one).unwrap().value, metrics::rmse(&one).unwrap().value);
            ensure!(b >= a - 1e-12 && a >= 0.0, "per-user rmse {b} < mae {a}");
        }
    }

    // set and rank metrics
    let relevant = |u: usize| -> Vec<usize> {
        fx.test.iter().filter(|t| t.0 == u && t.2 >= cfg.relevance_theta).map(|t| t.1).collect()
    };
    let mut precisions = Vec::new();
    let mut recalls = Vec::new();
    let mut aps = Vec::new();
    let mut halflives = Vec::new();
    let mut dcgs = Vec::new();
    for list in &fx.lists {
        let rel = relevant(list.user);
        let ids: Vec<usize> = list.item_ids();
        let top: Vec<usize> = ids.iter().copied().take(cfg.list_size).collect();
        let hits = top.iter().filter(|i| rel.contains(i)).count() as f64;
        if !ids.is_empty() {
            precisions.push(hits / cfg.list_size as f64);
            let mut hl = 0.0;
            let mut dcg = 0.0;
            for (pos, &i) in ids.iter().take(cfg.dcg_k).enumerate() {
                let rank = pos + 1;
                let x = test_rating(&fx.test, list.user, i);
                hl += (x.unwrap_or(cfg.halflife_d) - cfg.halflife_d).max(0.0)
                    / 2f64.powf((rank as f64 - 1.0) / (cfg.halflife_alpha - 1.0));
                let g = x.unwrap_or(0.0);
                dcg += if rank == 1 { g } else { g / (rank as f64).log2() };
            }
            halflives.push(hl);
            dcgs.push(dcg);
        }
        if !rel.is_empty() {
            recalls.push(hits / rel.len() as f64);
            let mut found = 0.0;
            let mut sum = 0.0;
            for (pos, i) in top.iter().enumerate() {
                if rel.contains(i) {
                    found += 1.0;
                    sum += found / (pos + 1) as f64;
                }
            }
            aps.push(sum / rel.len().min(cfg.list_size) as f64);
        }
    }
    match metrics::precision_recall_f1(&fx.lists, &held, &cfg) {
        Ok(q) => {
            let (p, rc) = (naive_mean(&precisions), naive_mean(&recalls));
            let f1 = if p + rc > 0.0 { 2.0 * p * rc / (p + rc) } else { 0.0 };
            ensure!(close(q.precision.value, p, tol), "precision {} vs {p}", q.precision.value);
            ensure!(close(q.recall.value, rc, tol), "recall {} vs {rc}", q.recall.value);
            ensure!(close(q.f1, f1, tol), "f1 {} vs {f1}", q.f1);
            for v in [q.precision.value, q.recall.value, q.f1] {
                ensure!((0.0..=1.0).contains(&v), "set metric {v} outside [0,1]");
            }
        }
        Err(_) => ensure!(precisions.is_empty(), "precision undefined with recommendations present"),
    }
    let map = metrics::mean_average_precision(&fx.lists, &held, &cfg).unwrap().value;
    ensure!(close(map, naive_mean(&aps), tol), "map {map} vs {}", naive_mean(&aps));
    let hl = metrics::half_life(&fx.lists, &held, &cfg).unwrap().value;
    ensure!(close(hl, naive_mean(&halflives), tol), "half-life {hl} vs {}", naive_mean(&halflives));
    let dcg = metrics::dcg(&fx.lists, &held, &cfg).unwrap().value;
    ensure!(close(dcg, naive_mean(&dcgs), tol), "dcg {dcg} vs {}", naive_mean(&dcgs));

    // novelty / diversity
    let sim = |a: usize, b: usize| Some(fx.sim[a][b]);
    for list in &fx.lists {
        let ids = list.item_ids();
        let nov = metrics::novelty(&ids, sim);
        let div = metrics::diversity(&ids, sim);
        if ids.len() < 2 {
            ensure!(nov.is_none() && div.is_none(), "short list should be undefined");
            continue;
        }
        let nov = nov.unwrap();
        let div = div.unwrap();
        let n = ids.len() as f64;
        let mut total = 0.0;
        for (a, &i) in ids.iter().enumerate() {
            let mut s = 0.0;
            for (b, &j) in ids.iter().enumerate() {
                if a != b {
                    s += 1.0 - fx.sim[i][j];
                }
            }
            total += s;
            ensure!(close(nov[a], s / (n - 1.0), tol), "novelty of {i}");
            ensure!((0.0..=1.0).contains(&nov[a]), "novelty outside [0,1]");
        }
        ensure!(close(div, total / (n * (n - 1.0)), tol), "diversity {div}");
        ensure!(close(div, naive_mean(&nov), 1e-12), "diversity {div} is not mean novelty");
        ensure!((0.0..=1.0).contains(&div), "diversity outside [0,1]");
    }

    // coverage against brute force on a random train matrix
    let train = random_matrix(&mut r, 10, n_items, 0.3);
    let k = r.gen_range(1..5);
    let sims = build_similarity_model(&train, Orientation::UserUser, Metric::Cosine, k, 1).unwrap();
    let all: Vec<usize> = (0..10).collect();
    let cov = metrics::coverage(&train, &sims, &all).unwrap();
    let mut per_user = Vec::new();
    for u in 0..10 {
        let d: Vec<usize> = (0..n_items).filter(|&i| train.rating(u, i).is_none()).collect();
        if d.is_empty() {
            continue;
        }
        let c = d
            .iter()
            .filter(|&&i| sims.neighbors(u).iter().any(|&(v, _)| train.rating(v, i).is_some()))
            .count();
        per_user.push(100.0 * c as f64 / d.len() as f64);
    }
    ensure!(close(cov.value, naive_mean(&per_user), tol), "coverage {} vs {}", cov.value, naive_mean(&per_user));
    Ok(())
}

// ---------- persistence and split ----------

/// Save/load reproduces predictions bitwise on 100 random probe pairs.
pub fn check_persistence(seed: u64) -> Check {
    let mut r = rng(seed);
    let m = random_matrix(&mut r, 7, 8, 0.6);
    let kind = ModelKind::ALL[r.gen_range(0..ModelKind::ALL.len())];
    let params = FitParams {
        k: r.gen_range(1..=3),
        metric: [Metric::Pearson, Metric::Cosine, Metric::Euclidean][r.gen_range(0..3)],
        normalize: kind != ModelKind::Nmf && r.gen_bool(0.5),
        neighbor_k: 3,
        train: TrainConfig {
            epochs: 3,
            seed,
            ..TrainConfig::default()
        },
        ..FitParams::default()
    };
    let rec = fit(kind, &m, &params).map_err(|e| format!("{kind}: {e}"))?;
    let mut buf = Vec::new();
    write_model(&rec, &mut buf).unwrap();
    let back = read_model(buf.as_slice()).map_err(|e| format!("{kind}: {e}"))?;
    for _ in 0..100 {
        let (u, i) = (r.gen_range(0..7), r.gen_range(0..8));
        let (a, b) = (rec.predict(u, i).unwrap(), back.predict(u, i).unwrap());
        ensure!(a.to_bits() == b.to_bits(), "{kind} ({u},{i}): {a} vs {b} after reload");
    }
    Ok(())
}

/// Train and test partition the ratings, every rated user and item keeps
/// a training rating, and the same seed gives the same split.
pub fn check_split(seed: u64) -> Check {
    let mut r = rng(seed);
    let (rows, cols, density) = (r.gen_range(2..15), r.gen_range(2..15), r.gen_range(0.1..0.9));
    let m = random_matrix(&mut r, rows, cols, density);
    if m.nnz() == 0 {
        return Ok(());
    }
    let ratio = r.gen_range(0.05..0.95);
    let s = split_holdout(&m, ratio, seed).map_err(|e| e.to_string())?;
    let again = split_holdout(&m, ratio, seed).unwrap();
    ensure!(s.test == again.test, "split not deterministic");
    let mut entries: Vec<(usize, usize, u64)> = s.train.triples().map(|(u, i, x)| (u, i, x.to_bits())).collect();
    for (u, i, x) in s.test_indexed() {
        ensure!(s.train.rating(u, i).is_none(), "({u},{i}) in both train and test");
        entries.push((u, i, x.to_bits()));
    }
    entries.sort_unstable();
    let mut original: Vec<(usize, usize, u64)> = m.triples().map(|(u, i, x)| (u, i, x.to_bits())).collect();
    original.sort_unstable();
    ensure!(entries == original, "train ∪ test differs from the input");
    for u in 0..m.n_users() {
        ensure!(m.user_row(u).is_empty() || !s.train.user_row(u).is_empty(), "user {u} lost every training rating");
    }
    for i in 0..m.n_items() {
        ensure!(m.item_col(i).is_empty() || !s.train.item_col(i).is_empty(), "item {i} lost every training rating");
    }
    Ok(())
}
