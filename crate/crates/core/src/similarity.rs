//! Pairwise user–user / item–item similarity and k-nearest-neighbor lists.
//!
//! Every metric is evaluated over the coordinates both vectors share
//! (co-rated items for users, co-rating users for items). A pair whose
//! overlap is below `min_overlap`, or whose metric divides by a zero norm,
//! has no weight at all; that is distinct from a weight of `0.0`.

use std::cmp::Ordering;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ratings::RatingsMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    UserUser,
    ItemItem,
}

impl Orientation {
    pub fn name(self) -> &'static str {
        match self {
            Orientation::UserUser => "user_user",
            Orientation::ItemItem => "item_item",
        }
    }

    fn len(self, matrix: &RatingsMatrix) -> usize {
        match self {
            Orientation::UserUser => matrix.n_users(),
            Orientation::ItemItem => matrix.n_items(),
        }
    }

    fn vector(self, matrix: &RatingsMatrix, e: usize) -> &[(usize, f64)] {
        match self {
            Orientation::UserUser => matrix.user_row(e),
            Orientation::ItemItem => matrix.item_col(e),
        }
    }
}

impl FromStr for Orientation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "user_user" => Ok(Orientation::UserUser),
            "item_item" => Ok(Orientation::ItemItem),
            other => Err(Error::domain(format!("unknown orientation {other:?}"))),
        }
    }
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Pearson,
    Cosine,
    AdjustedCosine,
    Euclidean,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Pearson => "pearson",
            Metric::Cosine => "cosine",
            Metric::AdjustedCosine => "adjusted_cosine",
            Metric::Euclidean => "euclidean",
        }
    }

    /// A correlation needs at least two points; the other metrics one.
    pub fn default_min_overlap(self) -> usize {
        match self {
            Metric::Pearson => 2,
            _ => 1,
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pearson" => Ok(Metric::Pearson),
            "cosine" => Ok(Metric::Cosine),
            "adjusted_cosine" | "adjusted-cosine" => Ok(Metric::AdjustedCosine),
            "euclidean" => Ok(Metric::Euclidean),
            other => Err(Error::domain(format!("unknown similarity metric {other:?}"))),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Walk two index-sorted sparse vectors and call `f(coord, x, y)` on every
/// shared coordinate.
pub(crate) fn for_each_common(
    a: &[(usize, f64)],
    b: &[(usize, f64)],
    mut f: impl FnMut(usize, f64, f64),
) {
    let (mut p, mut q) = (0, 0);
    while p < a.len() && q < b.len() {
        match a[p].0.cmp(&b[q].0) {
            Ordering::Less => p += 1,
            Ordering::Greater => q += 1,
            Ordering::Equal => {
                f(a[p].0, a[p].1, b[q].1);
                p += 1;
                q += 1;
            }
        }
    }
}

fn common(a: &[(usize, f64)], b: &[(usize, f64)]) -> Vec<(usize, f64, f64)> {
    let mut out = Vec::new();
    for_each_common(a, b, |c, x, y| out.push((c, x, y)));
    out
}

// A sum of squares this small relative to the data is a zero norm.
fn negligible(sum_sq: f64, scale: f64) -> bool {
    sum_sq <= 1e-24 * scale.max(1.0)
}

fn correlation(pairs: &[(f64, f64)]) -> Option<f64> {
    let mut num = 0.0;
    let mut sa = 0.0;
    let mut sb = 0.0;
    let mut scale = 0.0;
    for &(x, y) in pairs {
        num += x * y;
        sa += x * x;
        sb += y * y;
        scale += x.abs() + y.abs();
    }
    let scale = scale * scale;
    if negligible(sa, scale) || negligible(sb, scale) {
        return None;
    }
    Some((num / (sa.sqrt() * sb.sqrt())).clamp(-1.0, 1.0))
}

fn check_pair(matrix: &RatingsMatrix, orientation: Orientation, a: usize, b: usize) -> Result<()> {
    let len = orientation.len(matrix);
    if a >= len || b >= len {
        return Err(Error::domain(format!(
            "{orientation} index out of range ({a}, {b}) with {len} entities"
        )));
    }
    if a == b {
        return Err(Error::domain(format!("similarity of {orientation} entity {a} with itself")));
    }
    Ok(())
}

fn overlap(
    matrix: &RatingsMatrix,
    orientation: Orientation,
    a: usize,
    b: usize,
    min_overlap: usize,
) -> Result<Option<Vec<(usize, f64, f64)>>> {
    check_pair(matrix, orientation, a, b)?;
    let shared = common(orientation.vector(matrix, a), orientation.vector(matrix, b));
    if shared.is_empty() || shared.len() < min_overlap {
        Ok(None)
    } else {
        Ok(Some(shared))
    }
}

/// Pearson correlation over the shared coordinates, with both means taken
/// over those shared coordinates only.
pub fn pearson(
    matrix: &RatingsMatrix,
    orientation: Orientation,
    a: usize,
    b: usize,
    min_overlap: usize,
) -> Result<Option<f64>> {
    let Some(shared) = overlap(matrix, orientation, a, b, min_overlap)? else {
        return Ok(None);
    };
    let n = shared.len() as f64;
    let mean_a = shared.iter().map(|s| s.1).sum::<f64>() / n;
    let mean_b = shared.iter().map(|s| s.2).sum::<f64>() / n;
    let devs: Vec<(f64, f64)> = shared.iter().map(|s| (s.1 - mean_a, s.2 - mean_b)).collect();
    Ok(correlation(&devs))
}

/// Cosine of the two vectors restricted to their shared coordinates.
pub fn cosine(
    matrix: &RatingsMatrix,
    orientation: Orientation,
    a: usize,
    b: usize,
    min_overlap: usize,
) -> Result<Option<f64>> {
    let Some(shared) = overlap(matrix, orientation, a, b, min_overlap)? else {
        return Ok(None);
    };
    let pairs: Vec<(f64, f64)> = shared.iter().map(|s| (s.1, s.2)).collect();
    Ok(correlation(&pairs))
}

/// Item–item cosine after subtracting each co-rating user's full-row mean.
pub fn adjusted_cosine(matrix: &RatingsMatrix, i: usize, j: usize, min_overlap: usize) -> Result<Option<f64>> {
    let Some(shared) = overlap(matrix, Orientation::ItemItem, i, j, min_overlap)? else {
        return Ok(None);
    };
    let devs: Vec<(f64, f64)> = shared
        .iter()
        .map(|&(u, x, y)| {
            let mean = matrix.user_mean(u);
            (x - mean, y - mean)
        })
        .collect();
    Ok(correlation(&devs))
}

/// `1 / (1 + d)` where `d` is the Euclidean distance over shared coordinates.
pub fn euclidean_similarity(
    matrix: &RatingsMatrix,
    orientation: Orientation,
    a: usize,
    b: usize,
    min_overlap: usize,
) -> Result<Option<f64>> {
    let Some(shared) = overlap(matrix, orientation, a, b, min_overlap)? else {
        return Ok(None);
    };
    let d = shared.iter().map(|s| (s.1 - s.2).powi(2)).sum::<f64>().sqrt();
    Ok(Some(1.0 / (1.0 + d)))
}

/// Dispatch to the metric's pairwise function.
pub fn similarity(
    matrix: &RatingsMatrix,
    orientation: Orientation,
    metric: Metric,
    a: usize,
    b: usize,
    min_overlap: usize,
) -> Result<Option<f64>> {
    match metric {
        Metric::Pearson => pearson(matrix, orientation, a, b, min_overlap),
        Metric::Cosine => cosine(matrix, orientation, a, b, min_overlap),
        Metric::Euclidean => euclidean_similarity(matrix, orientation, a, b, min_overlap),
        Metric::AdjustedCosine => {
            if orientation != Orientation::ItemItem {
                return Err(Error::domain("adjusted cosine is defined for item_item only"));
            }
            adjusted_cosine(matrix, a, b, min_overlap)
        }
    }
}

/// Stored pairwise weights plus each entity's k nearest neighbors.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityModel {
    orientation: Orientation,
    metric: Metric,
    k: usize,
    min_overlap: usize,
    // per entity: every defined (neighbor, weight), sorted by neighbor index
    weights: Vec<Vec<(usize, f64)>>,
    // per entity: up to k neighbors, weight descending then index ascending
    knn: Vec<Vec<(usize, f64)>>,
}

fn rank_neighbors(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Compute every defined pairwise weight and the per-entity kNN lists.
/// Rows are computed in parallel; results do not depend on thread count.
pub fn build_similarity_model(
    matrix: &RatingsMatrix,
    orientation: Orientation,
    metric: Metric,
    k: usize,
    min_overlap: usize,
) -> Result<SimilarityModel> {
    if k == 0 {
        return Err(Error::domain("k must be at least 1"));
    }
    if metric == Metric::AdjustedCosine && orientation != Orientation::ItemItem {
        return Err(Error::domain("adjusted cosine is defined for item_item only"));
    }
    let n = orientation.len(matrix);
    let upper: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|a| {
            ((a + 1)..n)
                .filter_map(|b| {
                    similarity(matrix, orientation, metric, a, b, min_overlap)
                        .expect("indices in range")
                        .map(|w| (b, w))
                })
                .collect()
        })
        .collect();
    Ok(SimilarityModel::from_upper(orientation, metric, k, min_overlap, upper))
}

impl SimilarityModel {
    fn from_upper(
        orientation: Orientation,
        metric: Metric,
        k: usize,
        min_overlap: usize,
        upper: Vec<Vec<(usize, f64)>>,
    ) -> Self {
        let n = upper.len();
        let mut weights: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (a, row) in upper.iter().enumerate() {
            for &(b, w) in row {
                weights[b].push((a, w));
            }
        }
        // lower-triangle entries were pushed in ascending `a`, so appending
        // the upper row keeps each list sorted
        for (a, row) in upper.into_iter().enumerate() {
            weights[a].extend(row);
        }
        let knn = select_knn(&weights, k);
        SimilarityModel {
            orientation,
            metric,
            k,
            min_overlap,
            weights,
            knn,
        }
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn min_overlap(&self) -> usize {
        self.min_overlap
    }

    pub fn n_entities(&self) -> usize {
        self.weights.len()
    }

    /// Weight of the pair, `None` when undefined (or `a == b`).
    pub fn weight(&self, a: usize, b: usize) -> Option<f64> {
        let row = self.weights.get(a)?;
        row.binary_search_by_key(&b, |e| e.0).ok().map(|p| row[p].1)
    }

    /// All defined weights of `a`, sorted by neighbor index.
    pub fn weights_of(&self, a: usize) -> &[(usize, f64)] {
        &self.weights[a]
    }

    /// Nearest neighbors of `a`, best first.
    pub fn neighbors(&self, a: usize) -> &[(usize, f64)] {
        &self.knn[a]
    }

    /// Same weights with kNN lists re-selected for a different `k`.
    pub fn with_k(&self, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::domain("k must be at least 1"));
        }
        Ok(SimilarityModel {
            k,
            knn: select_knn(&self.weights, k),
            ..self.clone()
        })
    }

    /// Every weight multiplied by `factor`; kNN lists re-selected.
    pub fn scaled(&self, factor: f64) -> Self {
        let weights: Vec<Vec<(usize, f64)>> = self
            .weights
            .iter()
            .map(|row| row.iter().map(|&(b, w)| (b, w * factor)).collect())
            .collect();
        SimilarityModel {
            knn: select_knn(&weights, self.k),
            weights,
            ..self.clone()
        }
    }

    /// Write the `simmodel v1` text form: a header, then `a b weight` for
    /// every stored pair with `a < b`.
    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "simmodel v1 {} {} {}", self.orientation, self.metric, self.k)?;
        writeln!(out, "entities {}", self.n_entities())?;
        for (a, row) in self.weights.iter().enumerate() {
            for &(b, w) in row.iter().filter(|e| e.0 > a) {
                writeln!(out, "{a} {b} {w:.16e}")?;
            }
        }
        Ok(())
    }

    /// Parse the `simmodel v1` text form. `min_overlap` is not persisted and
    /// is restored as the metric default.
    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let mut offset = 0usize;
        let mut next = |offset: &mut usize| -> Result<Option<String>> {
            match lines.next() {
                None => Ok(None),
                Some(line) => {
                    let line = line.map_err(|e| Error::io("reading similarity model", e))?;
                    *offset += line.len() + 1;
                    Ok(Some(line))
                }
            }
        };
        let corrupt = |offset: usize, reason: &str| Error::Corrupt {
            offset,
            reason: reason.to_string(),
        };
        let header = next(&mut offset)?.ok_or_else(|| corrupt(0, "missing header"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 5 || fields[0] != "simmodel" {
            return Err(corrupt(0, "bad simmodel header"));
        }
        if fields[1] != "v1" {
            return Err(Error::Version {
                found: fields[1].to_string(),
                expected: "v1".to_string(),
            });
        }
        let orientation: Orientation = fields[2].parse()?;
        let metric: Metric = fields[3].parse()?;
        let k: usize = fields[4].parse().map_err(|_| corrupt(0, "bad k"))?;
        let at = offset;
        let count_line = next(&mut offset)?.ok_or_else(|| corrupt(at, "missing entity count"))?;
        let n: usize = count_line
            .strip_prefix("entities ")
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| corrupt(at, "bad entity count"))?;
        let mut upper: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        loop {
            let at = offset;
            let Some(line) = next(&mut offset)? else { break };
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let parsed = (|| {
                let a: usize = parts.next()?.parse().ok()?;
                let b: usize = parts.next()?.parse().ok()?;
                let w: f64 = parts.next()?.parse().ok()?;
                parts.next().is_none().then_some((a, b, w))
            })();
            let (a, b, w) = parsed.ok_or_else(|| corrupt(at, "bad weight line"))?;
            if a >= b || b >= n || !w.is_finite() {
                return Err(corrupt(at, "weight line out of range"));
            }
            if upper[a].last().is_some_and(|e| e.0 >= b) {
                return Err(corrupt(at, "weight lines out of order"));
            }
            upper[a].push((b, w));
        }
        if k == 0 {
            return Err(corrupt(0, "k must be at least 1"));
        }
        Ok(Self::from_upper(orientation, metric, k, metric.default_min_overlap(), upper))
    }
}

fn select_knn(weights: &[Vec<(usize, f64)>], k: usize) -> Vec<Vec<(usize, f64)>> {
    weights
        .par_iter()
        .map(|row| {
            let mut ranked = row.clone();
            if ranked.len() > k {
                ranked.select_nth_unstable_by(k - 1, rank_neighbors);
                ranked.truncate(k);
            }
            ranked.sort_by(rank_neighbors);
            ranked
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{from_cells, toy_ratings};
    use approx::assert_abs_diff_eq;

    const UU: Orientation = Orientation::UserUser;

    #[test]
    fn pearson_toy_weights() {
        let m = toy_ratings();
        assert_abs_diff_eq!(pearson(&m, UU, 0, 1, 2).unwrap().unwrap(), -0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(pearson(&m, UU, 0, 2, 2).unwrap().unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pearson(&m, UU, 0, 3, 2).unwrap().unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn pearson_constant_vector_undefined() {
        let m = from_cells(2, 3, &[(0, 0, 4.0), (0, 1, 4.0), (0, 2, 4.0), (1, 0, 1.0), (1, 1, 3.0), (1, 2, 5.0)]);
        assert_eq!(pearson(&m, UU, 0, 1, 2).unwrap(), None);
    }

    #[test]
    fn cosine_toy_and_identity() {
        let m = toy_ratings();
        assert_abs_diff_eq!(cosine(&m, UU, 0, 1, 1).unwrap().unwrap(), 28.0 / 46.0, epsilon = 1e-12);
        let same = from_cells(2, 2, &[(0, 0, 2.0), (0, 1, 3.0), (1, 0, 2.0), (1, 1, 3.0)]);
        assert_abs_diff_eq!(cosine(&same, UU, 0, 1, 1).unwrap().unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn cosine_orthogonal_is_zero() {
        // restricted vectors (1, 0) and (0, 1)
        let m = from_cells(2, 2, &[(0, 0, 1.0), (0, 1, 0.0), (1, 0, 0.0), (1, 1, 1.0)]);
        assert_abs_diff_eq!(cosine(&m, UU, 0, 1, 1).unwrap().unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn adjusted_cosine_toy() {
        let m = toy_ratings();
        // full-row user means (3, 2.8, 3.5, 3)
        let expected = -6.71 / (8.69f64.sqrt() * 5.89f64.sqrt());
        let w = adjusted_cosine(&m, 0, 1, 1).unwrap().unwrap();
        assert_abs_diff_eq!(w, expected, epsilon = 1e-12);
        assert_abs_diff_eq!(w, -0.938, epsilon = 5e-4);
        assert!(matches!(adjusted_cosine(&m, 2, 2, 1), Err(Error::Domain(_))));
    }

    #[test]
    fn adjusted_cosine_all_zero_deviations() {
        // both users rate both items at their own mean
        let m = from_cells(2, 2, &[(0, 0, 3.0), (0, 1, 3.0), (1, 0, 5.0), (1, 1, 5.0)]);
        assert_eq!(adjusted_cosine(&m, 0, 1, 1).unwrap(), None);
    }

    #[test]
    fn euclidean_toy() {
        let m = toy_ratings();
        assert_abs_diff_eq!(
            euclidean_similarity(&m, UU, 0, 1, 1).unwrap().unwrap(),
            1.0 / 7.0,
            epsilon = 1e-12
        );
        assert_eq!(euclidean_similarity(&m, UU, 0, 2, 3).unwrap(), None);
    }

    #[test]
    fn out_of_range_index_is_error() {
        let m = toy_ratings();
        assert!(pearson(&m, UU, 0, 9, 2).is_err());
        assert!(cosine(&m, Orientation::ItemItem, 0, 6, 1).is_err());
    }

    #[test]
    fn knn_toy_pearson() {
        let model = build_similarity_model(&toy_ratings(), UU, Metric::Pearson, 2, 2).unwrap();
        let nn = model.neighbors(0);
        assert_eq!(nn.len(), 2);
        assert_eq!(nn[0].0, 2);
        assert_abs_diff_eq!(nn[0].1, 1.0, epsilon = 1e-12);
        assert_eq!(nn[1].0, 3);
        assert_abs_diff_eq!(nn[1].1, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn knn_shorter_than_k_and_disjoint_users() {
        let model = build_similarity_model(&toy_ratings(), UU, Metric::Cosine, 50, 1).unwrap();
        assert_eq!(model.neighbors(0).len(), 3);
        let disjoint = from_cells(2, 2, &[(0, 0, 4.0), (1, 1, 3.0)]);
        let model = build_similarity_model(&disjoint, UU, Metric::Cosine, 5, 1).unwrap();
        assert!(model.neighbors(0).is_empty() && model.neighbors(1).is_empty());
        assert_eq!(model.weight(0, 1), None);
    }

    #[test]
    fn knn_tie_break_by_index() {
        // users 1..3 identical to user 0 on one item
        let m = from_cells(4, 1, &[(0, 0, 3.0), (1, 0, 3.0), (2, 0, 3.0), (3, 0, 3.0)]);
        let model = build_similarity_model(&m, UU, Metric::Euclidean, 2, 1).unwrap();
        assert_eq!(model.neighbors(0), &[(1, 1.0), (2, 1.0)]);
        assert_eq!(model.neighbors(3), &[(0, 1.0), (1, 1.0)]);
    }

    #[test]
    fn simmodel_text_round_trip() {
        let model = build_similarity_model(&toy_ratings(), Orientation::ItemItem, Metric::Cosine, 3, 1).unwrap();
        let mut buf = Vec::new();
        model.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("simmodel v1 item_item cosine 3\n"));
        let back = SimilarityModel::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn simmodel_version_checked() {
        let err = SimilarityModel::read_from("simmodel v9 user_user cosine 3\nentities 0\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Version { .. }));
    }
}
