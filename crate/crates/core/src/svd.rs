//! Truncated SVD recommender: center by user mean, fill the holes with
//! (centered) item means, factor, keep the top `k` singular triplets.
//!
//! Small or nearly-full decompositions use one-sided Jacobi rotations.
//! When `k` is small relative to the matrix, a fixed-seed block subspace
//! iteration isolates the leading subspace first and Jacobi finishes on the
//! projected problem. Both paths are deterministic.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ratings::{center_by_user, clamp_rating, impute_item_means, NormalizationState, RatingsMatrix};

const MAX_SWEEPS: usize = 80;
const SUBSPACE_SEED: u64 = 0x5eed_5eed;
const OVERSAMPLE: usize = 10;
const MAX_SUBSPACE_ITERS: usize = 300;

/// Thin decomposition `A = U diag(s) Vᵀ`, singular values descending.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub v: DMatrix<f64>,
}

/// Full thin SVD by one-sided Jacobi.
pub fn jacobi_svd(a: &DMatrix<f64>) -> ThinSvd {
    if a.nrows() >= a.ncols() {
        jacobi_tall(a)
    } else {
        let t = jacobi_tall(&a.transpose());
        ThinSvd { u: t.v, s: t.s, v: t.u }
    }
}

fn jacobi_tall(a: &DMatrix<f64>) -> ThinSvd {
    let m = a.nrows();
    let n = a.ncols();
    let mut w = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let mut norms: Vec<f64> = (0..n).map(|j| w.column(j).norm_squared()).collect();
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = norms[p];
                let beta = norms[q];
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let gamma = w.column(p).dot(&w.column(q));
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(w.as_mut_slice(), m, p, q, c, s);
                rotate(v.as_mut_slice(), n, p, q, c, s);
                norms[p] = w.column(p).norm_squared();
                norms[q] = w.column(q).norm_squared();
            }
        }
        if !rotated {
            break;
        }
    }
    let sigma: Vec<f64> = (0..n).map(|j| w.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| sigma[y].total_cmp(&sigma[x]).then(x.cmp(&y)));
    let smax = order.first().map_or(0.0, |&j| sigma[j]);
    let cutoff = smax * 1e-13 * (m.max(n) as f64);

    let mut u = DMatrix::<f64>::zeros(m, n);
    let mut vs = DMatrix::<f64>::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    let mut deficient = Vec::new();
    for (dst, &src) in order.iter().enumerate() {
        vs.set_column(dst, &v.column(src));
        if sigma[src] > cutoff && sigma[src] > 0.0 {
            u.set_column(dst, &(w.column(src) / sigma[src]));
            s.push(sigma[src]);
        } else {
            s.push(0.0);
            deficient.push(dst);
        }
    }
    complete_basis(&mut u, &deficient);
    let mut out = ThinSvd { u, s, v: vs };
    fix_signs(&mut out);
    out
}

// Apply the plane rotation to columns p and q of a column-major buffer.
fn rotate(data: &mut [f64], rows: usize, p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = data.split_at_mut(q * rows);
    let cp = &mut left[p * rows..(p + 1) * rows];
    let cq = &mut right[..rows];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Fill the listed columns with unit vectors orthogonal to every other
/// column (Gram–Schmidt against the standard basis).
fn complete_basis(u: &mut DMatrix<f64>, columns: &[usize]) {
    let m = u.nrows();
    let mut filled: Vec<bool> = vec![true; u.ncols()];
    for &c in columns {
        filled[c] = false;
    }
    let mut next_basis = 0;
    for &c in columns {
        loop {
            assert!(next_basis < m, "cannot complete an orthonormal basis");
            let mut cand = DMatrix::<f64>::zeros(m, 1);
            cand[(next_basis, 0)] = 1.0;
            next_basis += 1;
            for _ in 0..2 {
                for j in (0..u.ncols()).filter(|&j| filled[j]) {
                    let proj = u.column(j).dot(&cand.column(0));
                    cand.column_mut(0).axpy(-proj, &u.column(j), 1.0);
                }
            }
            let norm = cand.norm();
            if norm > 0.5 {
                u.set_column(c, &(cand.column(0) / norm));
                filled[c] = true;
                break;
            }
        }
    }
}

/// Orthonormalize columns in place (modified Gram–Schmidt, two passes);
/// columns that collapse are replaced by completion vectors.
fn orthonormalize(y: &mut DMatrix<f64>) {
    let cols = y.ncols();
    let mut collapsed = Vec::new();
    for j in 0..cols {
        let before = y.column(j).norm();
        for _ in 0..2 {
            for i in 0..j {
                if collapsed.contains(&i) {
                    continue;
                }
                let proj = y.column(i).dot(&y.column(j));
                let col_i = y.column(i).clone_owned();
                y.column_mut(j).axpy(-proj, &col_i, 1.0);
            }
        }
        let norm = y.column(j).norm();
        if norm > 1e-12 * before.max(f64::MIN_POSITIVE) && norm > 0.0 {
            y.column_mut(j).unscale_mut(norm);
        } else {
            collapsed.push(j);
        }
    }
    complete_basis(y, &collapsed);
}

// Largest-magnitude entry of each left vector is made positive.
fn fix_signs(svd: &mut ThinSvd) {
    for j in 0..svd.u.ncols() {
        let col = svd.u.column(j);
        let mut best = 0usize;
        for r in 0..col.len() {
            if col[r].abs() > col[best].abs() {
                best = r;
            }
        }
        if !col.is_empty() && col[best] < 0.0 {
            svd.u.column_mut(j).neg_mut();
            svd.v.column_mut(j).neg_mut();
        }
    }
}

/// Leading `k` singular triplets of `a`.
pub fn top_k_svd(a: &DMatrix<f64>, k: usize) -> Result<ThinSvd> {
    let r = a.nrows().min(a.ncols());
    if k == 0 || k > r {
        return Err(Error::domain(format!("k = {k} must be in 1..={r}")));
    }
    let full = if k + OVERSAMPLE >= r / 2 {
        jacobi_svd(a)
    } else {
        subspace_svd(a, k)
    };
    Ok(ThinSvd {
        u: full.u.columns(0, k).into_owned(),
        s: full.s[..k].to_vec(),
        v: full.v.columns(0, k).into_owned(),
    })
}

fn subspace_svd(a: &DMatrix<f64>, k: usize) -> ThinSvd {
    let l = (k + OVERSAMPLE).min(a.nrows().min(a.ncols()));
    let mut rng = ChaCha8Rng::seed_from_u64(SUBSPACE_SEED);
    let omega = DMatrix::<f64>::from_fn(a.ncols(), l, |_, _| rng.gen_range(-1.0..1.0));
    let mut q = a * omega;
    orthonormalize(&mut q);
    let at = a.transpose();
    let mut previous: Option<Vec<f64>> = None;
    let mut stable = 0;
    let mut projected = jacobi_svd(&(q.transpose() * a));
    for _ in 0..MAX_SUBSPACE_ITERS {
        let mut z = &at * &q;
        orthonormalize(&mut z);
        q = a * z;
        orthonormalize(&mut q);
        projected = jacobi_svd(&(q.transpose() * a));
        let current = projected.s[..k].to_vec();
        if let Some(prev) = &previous {
            let top = current[0].max(f64::MIN_POSITIVE);
            let change = current
                .iter()
                .zip(prev)
                .map(|(c, p)| (c - p).abs() / top)
                .fold(0.0, f64::max);
            stable = if change < 1e-14 { stable + 1 } else { 0 };
            if stable >= 3 {
                break;
            }
        }
        previous = Some(current);
    }
    let mut out = ThinSvd {
        u: &q * &projected.u,
        s: projected.s,
        v: projected.v,
    };
    fix_signs(&mut out);
    out
}

/// Rank-`k` factor model of a densified rating matrix.
#[derive(Debug, Clone)]
pub struct SvdModel {
    /// `P_k`, `m × k`, orthonormal columns.
    pub left: DMatrix<f64>,
    /// `Q_k`, `n × k`, orthonormal columns.
    pub right: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    /// `P_k · √Σ_k`
    pub user_factors: DMatrix<f64>,
    /// `√Σ_k · Q_kᵀ`
    pub item_factors: DMatrix<f64>,
    pub normalization: NormalizationState,
}

impl SvdModel {
    fn from_parts(svd: ThinSvd, normalization: NormalizationState) -> Self {
        let root: Vec<f64> = svd.s.iter().map(|s| s.sqrt()).collect();
        let mut user_factors = svd.u.clone();
        let mut item_factors = svd.v.transpose();
        for (j, r) in root.iter().enumerate() {
            user_factors.column_mut(j).scale_mut(*r);
            item_factors.row_mut(j).scale_mut(*r);
        }
        SvdModel {
            left: svd.u,
            right: svd.v,
            singular_values: svd.s,
            user_factors,
            item_factors,
            normalization,
        }
    }

    /// Rebuild from stored factor products (used when loading a model).
    pub fn from_factors(
        user_factors: DMatrix<f64>,
        item_factors: DMatrix<f64>,
        singular_values: Vec<f64>,
        normalization: NormalizationState,
    ) -> Self {
        let mut left = user_factors.clone();
        let mut right = item_factors.transpose();
        for (j, s) in singular_values.iter().enumerate() {
            let r = s.sqrt();
            if r > 0.0 {
                left.column_mut(j).unscale_mut(r);
                right.column_mut(j).unscale_mut(r);
            }
        }
        SvdModel {
            left,
            right,
            singular_values,
            user_factors,
            item_factors,
            normalization,
        }
    }

    pub fn k(&self) -> usize {
        self.singular_values.len()
    }

    pub fn n_users(&self) -> usize {
        self.user_factors.nrows()
    }

    pub fn n_items(&self) -> usize {
        self.item_factors.ncols()
    }

    /// Row-`u` · column-`i` product plus the normalization offset, unclamped.
    pub fn reconstruct(&self, u: usize, i: usize) -> f64 {
        let dot = self.user_factors.row(u).transpose().dot(&self.item_factors.column(i));
        self.normalization.invert(u, dot)
    }

    /// `P_k Σ_k Q_kᵀ` as a dense matrix (no offsets).
    pub fn low_rank(&self) -> DMatrix<f64> {
        &self.user_factors * &self.item_factors
    }
}

/// Decompose an already dense matrix without any normalization.
pub fn truncated_svd(dense: &DMatrix<f64>, k: usize) -> Result<SvdModel> {
    let svd = top_k_svd(dense, k)?;
    Ok(SvdModel::from_parts(svd, NormalizationState::none(dense.nrows())))
}

/// Center, impute with centered item means, factor, truncate.
pub fn svd_fit(train: &RatingsMatrix, k: usize) -> Result<SvdModel> {
    let (centered, state) = center_by_user(train)?;
    let dense = impute_item_means(&centered);
    let svd = top_k_svd(&dense, k)?;
    Ok(SvdModel::from_parts(svd, state))
}

/// Clamped prediction for `(u, i)`.
pub fn svd_predict(model: &SvdModel, u: usize, i: usize) -> Result<f64> {
    if u >= model.n_users() || i >= model.n_items() {
        return Err(Error::domain(format!(
            "index ({u}, {i}) outside {}×{} model",
            model.n_users(),
            model.n_items()
        )));
    }
    Ok(clamp_rating(model.reconstruct(u, i)))
}
