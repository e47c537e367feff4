//! Rating ingestion, the sparse user×item matrix, holdout splitting and
//! the user-mean / item-mean transforms used by the factor models.

use std::collections::HashMap;
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const MIN_RATING: f64 = 1.0;
pub const MAX_RATING: f64 = 5.0;

/// Clamp a score onto the rating scale.
pub fn clamp_rating(score: f64) -> f64 {
    score.clamp(MIN_RATING, MAX_RATING)
}

/// One observed rating as it appears in a dataset file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interaction {
    pub user: u64,
    pub item: u64,
    pub rating: f64,
    pub timestamp: i64,
}

impl Interaction {
    pub fn new(user: u64, item: u64, rating: f64, timestamp: i64) -> Self {
        Interaction {
            user,
            item,
            rating,
            timestamp,
        }
    }
}

/// On-disk layout of a MovieLens ratings file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    /// `user<TAB>item<TAB>rating<TAB>timestamp`
    Ml100k,
    /// `UserID::MovieID::Rating::Timestamp`
    Ml1m,
}

impl DatasetFormat {
    pub fn name(self) -> &'static str {
        match self {
            DatasetFormat::Ml100k => "ml100k",
            DatasetFormat::Ml1m => "ml1m",
        }
    }

    fn split_fields(self, line: &str) -> Vec<&str> {
        match self {
            DatasetFormat::Ml100k => line.split('\t').collect(),
            DatasetFormat::Ml1m => line.split("::").collect(),
        }
    }
}

impl FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ml100k" | "ml-100k" => Ok(DatasetFormat::Ml100k),
            "ml1m" | "ml-1m" => Ok(DatasetFormat::Ml1m),
            other => Err(Error::domain(format!("unknown dataset format {other:?}"))),
        }
    }
}

impl fmt::Display for DatasetFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parse a ratings file. Blank lines are skipped, CRLF endings accepted.
pub fn parse_interactions<R: BufRead>(reader: R, format: DatasetFormat) -> Result<Vec<Interaction>> {
    let mut out = Vec::new();
    let mut seen: HashMap<(u64, u64), usize> = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(format!("reading line {line_no}"), e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields = format.split_fields(line);
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: line_no,
                reason: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let parse_err = |what: &str, raw: &str| Error::Parse {
            line: line_no,
            reason: format!("invalid {what} {raw:?}"),
        };
        let user: u64 = fields[0].trim().parse().map_err(|_| parse_err("user id", fields[0]))?;
        let item: u64 = fields[1].trim().parse().map_err(|_| parse_err("item id", fields[1]))?;
        let rating: f64 = fields[2].trim().parse().map_err(|_| parse_err("rating", fields[2]))?;
        let timestamp: i64 = fields[3]
            .trim()
            .parse()
            .map_err(|_| parse_err("timestamp", fields[3]))?;
        if !(MIN_RATING..=MAX_RATING).contains(&rating) {
            return Err(Error::domain(format!(
                "line {line_no}: rating {rating} outside [{MIN_RATING}, {MAX_RATING}]"
            )));
        }
        if seen.insert((user, item), line_no).is_some() {
            return Err(Error::Duplicate {
                line: line_no,
                user,
                item,
            });
        }
        out.push(Interaction::new(user, item, rating, timestamp));
    }
    Ok(out)
}

/// Bijection between external identifiers and dense indices `0..len`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdMap {
    raw: Vec<u64>,
    index: HashMap<u64, usize>,
}

impl IdMap {
    pub fn from_raw(raw: Vec<u64>) -> Result<Self> {
        let mut index = HashMap::with_capacity(raw.len());
        for (i, &id) in raw.iter().enumerate() {
            if index.insert(id, i).is_some() {
                return Err(Error::domain(format!("id {id} appears twice in id map")));
            }
        }
        Ok(IdMap { raw, index })
    }

    fn intern(&mut self, id: u64) -> usize {
        let next = self.raw.len();
        *self.index.entry(id).or_insert_with(|| {
            self.raw.push(id);
            next
        })
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn raw(&self, index: usize) -> u64 {
        self.raw[index]
    }

    pub fn raw_ids(&self) -> &[u64] {
        &self.raw
    }
}

/// Sparse ratings matrix with both row (per-user) and column (per-item)
/// access. Rows are sorted by item index, columns by user index.
#[derive(Debug, Clone)]
pub struct RatingsMatrix {
    users: IdMap,
    items: IdMap,
    rows: Vec<Vec<(usize, f64)>>,
    row_timestamps: Vec<Vec<i64>>,
    cols: Vec<Vec<(usize, f64)>>,
    user_means: Vec<f64>,
    item_means: Vec<f64>,
    global_mean: f64,
    nnz: usize,
}

/// Build the matrix from parsed interactions. Dense indices follow first
/// appearance in `interactions`.
pub fn build_matrix(interactions: &[Interaction]) -> Result<RatingsMatrix> {
    if interactions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut users = IdMap::default();
    let mut items = IdMap::default();
    let mut triples = Vec::with_capacity(interactions.len());
    for it in interactions {
        let u = users.intern(it.user);
        let i = items.intern(it.item);
        triples.push((u, i, it.rating, it.timestamp));
    }
    RatingsMatrix::assemble(users, items, triples)
}

impl RatingsMatrix {
    /// Assemble from dense-indexed `(user, item, rating, timestamp)` triples
    /// over existing id maps. Entities without entries are allowed.
    pub fn from_indexed(
        users: IdMap,
        items: IdMap,
        triples: impl IntoIterator<Item = (usize, usize, f64, i64)>,
    ) -> Result<Self> {
        let triples: Vec<_> = triples.into_iter().collect();
        for &(u, i, r, _) in &triples {
            if u >= users.len() || i >= items.len() {
                return Err(Error::domain(format!("entry ({u}, {i}) outside matrix shape")));
            }
            if !r.is_finite() {
                return Err(Error::domain(format!("non-finite rating at ({u}, {i})")));
            }
        }
        Self::assemble(users, items, triples)
    }

    fn assemble(users: IdMap, items: IdMap, triples: Vec<(usize, usize, f64, i64)>) -> Result<Self> {
        let m = users.len();
        let n = items.len();
        let mut rows: Vec<Vec<(usize, f64, i64)>> = vec![Vec::new(); m];
        for &(u, i, r, t) in &triples {
            rows[u].push((i, r, t));
        }
        for (u, row) in rows.iter_mut().enumerate() {
            row.sort_by_key(|e| e.0);
            if let Some(w) = row.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(Error::Duplicate {
                    line: 0,
                    user: users.raw(u),
                    item: items.raw(w[0].0),
                });
            }
        }
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (u, row) in rows.iter().enumerate() {
            for &(i, r, _) in row {
                cols[i].push((u, r));
            }
        }
        let row_timestamps = rows.iter().map(|row| row.iter().map(|e| e.2).collect()).collect();
        let rows: Vec<Vec<(usize, f64)>> = rows
            .into_iter()
            .map(|row| row.into_iter().map(|(i, r, _)| (i, r)).collect())
            .collect();

        let nnz = triples.len();
        let global_mean = if nnz == 0 {
            0.0
        } else {
            rows.iter().flatten().map(|e| e.1).sum::<f64>() / nnz as f64
        };
        let mean_or = |v: &[(usize, f64)]| {
            if v.is_empty() {
                global_mean
            } else {
                v.iter().map(|e| e.1).sum::<f64>() / v.len() as f64
            }
        };
        let user_means = rows.iter().map(|r| mean_or(r)).collect();
        let item_means = cols.iter().map(|c| mean_or(c)).collect();
        Ok(RatingsMatrix {
            users,
            items,
            rows,
            row_timestamps,
            cols,
            user_means,
            item_means,
            global_mean,
            nnz,
        })
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    /// Number of stored ratings.
    pub fn nnz(&self) -> usize {
        self.nnz
    }

    pub fn users(&self) -> &IdMap {
        &self.users
    }

    pub fn items(&self) -> &IdMap {
        &self.items
    }

    /// Items rated by `u` with their ratings, sorted by item index.
    pub fn user_row(&self, u: usize) -> &[(usize, f64)] {
        &self.rows[u]
    }

    /// Users who rated `i` with their ratings, sorted by user index.
    pub fn item_col(&self, i: usize) -> &[(usize, f64)] {
        &self.cols[i]
    }

    /// Mean of the user's stored ratings (global mean when the row is empty).
    pub fn user_mean(&self, u: usize) -> f64 {
        self.user_means[u]
    }

    /// Mean of the item's stored ratings (global mean when the column is empty).
    pub fn item_mean(&self, i: usize) -> f64 {
        self.item_means[i]
    }

    pub fn user_means(&self) -> &[f64] {
        &self.user_means
    }

    pub fn item_means(&self) -> &[f64] {
        &self.item_means
    }

    pub fn global_mean(&self) -> f64 {
        self.global_mean
    }

    pub fn rating(&self, u: usize, i: usize) -> Option<f64> {
        let row = &self.rows[u];
        row.binary_search_by_key(&i, |e| e.0).ok().map(|p| row[p].1)
    }

    pub fn has_rated(&self, u: usize, i: usize) -> bool {
        self.rows[u].binary_search_by_key(&i, |e| e.0).is_ok()
    }

    pub fn user_index(&self, raw: u64) -> Result<usize> {
        self.users.get(raw).ok_or(Error::UnknownId { kind: "user", id: raw })
    }

    pub fn item_index(&self, raw: u64) -> Result<usize> {
        self.items.get(raw).ok_or(Error::UnknownId { kind: "item", id: raw })
    }

    pub(crate) fn check_user(&self, u: usize) -> Result<()> {
        if u < self.n_users() {
            Ok(())
        } else {
            Err(Error::domain(format!("user index {u} out of range 0..{}", self.n_users())))
        }
    }

    pub(crate) fn check_item(&self, i: usize) -> Result<()> {
        if i < self.n_items() {
            Ok(())
        } else {
            Err(Error::domain(format!("item index {i} out of range 0..{}", self.n_items())))
        }
    }

    /// All entries in row-major order as `(user, item, rating)`.
    pub fn triples(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(u, row)| row.iter().map(move |&(i, r)| (u, i, r)))
    }

    /// Entries as interactions with external ids, row-major order.
    pub fn interactions(&self) -> Vec<Interaction> {
        let mut out = Vec::with_capacity(self.nnz);
        for (u, row) in self.rows.iter().enumerate() {
            for (k, &(i, r)) in row.iter().enumerate() {
                out.push(Interaction::new(
                    self.users.raw(u),
                    self.items.raw(i),
                    r,
                    self.row_timestamps[u][k],
                ));
            }
        }
        out
    }

    /// Same id maps and entry set with every rating passed through `f(u, i, r)`.
    pub fn map_ratings(&self, f: impl Fn(usize, usize, f64) -> f64) -> Result<Self> {
        let triples = self.rows.iter().enumerate().flat_map(|(u, row)| {
            let ts = &self.row_timestamps[u];
            let f = &f;
            row.iter()
                .zip(ts)
                .map(move |(&(i, r), &t)| (u, i, f(u, i, r), t))
        });
        Self::from_indexed(self.users.clone(), self.items.clone(), triples)
    }

    /// Dense `m×n` copy with missing cells set to `fill`.
    pub fn to_dense(&self, fill: f64) -> DMatrix<f64> {
        let mut dense = DMatrix::from_element(self.n_users(), self.n_items(), fill);
        for (u, i, r) in self.triples() {
            dense[(u, i)] = r;
        }
        dense
    }
}

/// A train matrix plus the held-out test ratings.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: RatingsMatrix,
    pub test: Vec<Interaction>,
    pub ratio: f64,
    pub seed: u64,
}

impl Split {
    /// Test ratings as dense `(user, item, rating)` against the train id maps.
    pub fn test_indexed(&self) -> Vec<(usize, usize, f64)> {
        self.test
            .iter()
            .map(|t| {
                let u = self.train.users().get(t.user).expect("test user present in train id map");
                let i = self.train.items().get(t.item).expect("test item present in train id map");
                (u, i, t.rating)
            })
            .collect()
    }
}

/// Seeded uniform per-entry holdout. Each entry goes to test with
/// probability `ratio`; entries are then returned to train so that every
/// user and every item keeps at least one training rating.
///
/// The train matrix keeps the full id maps of `matrix`, so test ids always
/// resolve.
pub fn split_holdout(matrix: &RatingsMatrix, ratio: f64, seed: u64) -> Result<Split> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::domain(format!("split ratio {ratio} not in (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries: Vec<(usize, usize, f64, i64)> = matrix
        .rows
        .iter()
        .enumerate()
        .flat_map(|(u, row)| {
            row.iter()
                .zip(&matrix.row_timestamps[u])
                .map(move |(&(i, r), &t)| (u, i, r, t))
        })
        .collect();
    let mut to_test: Vec<bool> = entries.iter().map(|_| rng.gen::<f64>() < ratio).collect();

    let mut user_train = vec![0usize; matrix.n_users()];
    let mut item_train = vec![0usize; matrix.n_items()];
    for (e, &t) in entries.iter().zip(&to_test) {
        if !t {
            user_train[e.0] += 1;
            item_train[e.1] += 1;
        }
    }
    // keep-one guard: first entry (row-major) of an emptied user, then item
    for (k, e) in entries.iter().enumerate() {
        if to_test[k] && user_train[e.0] == 0 {
            to_test[k] = false;
            user_train[e.0] += 1;
            item_train[e.1] += 1;
        }
    }
    for (k, e) in entries.iter().enumerate() {
        if to_test[k] && item_train[e.1] == 0 {
            to_test[k] = false;
            user_train[e.0] += 1;
            item_train[e.1] += 1;
        }
    }

    let mut train = Vec::with_capacity(entries.len());
    let mut test = Vec::new();
    for (e, t) in entries.into_iter().zip(to_test) {
        if t {
            test.push(Interaction::new(matrix.users.raw(e.0), matrix.items.raw(e.1), e.2, e.3));
        } else {
            train.push(e);
        }
    }
    let train = RatingsMatrix::from_indexed(matrix.users.clone(), matrix.items.clone(), train)?;
    Ok(Split {
        train,
        test,
        ratio,
        seed,
    })
}

/// Which preprocessing a model was trained under.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalizationKind {
    None,
    UserMeanCenter,
}

impl NormalizationKind {
    pub fn name(self) -> &'static str {
        match self {
            NormalizationKind::None => "none",
            NormalizationKind::UserMeanCenter => "user_mean_center",
        }
    }
}

impl fmt::Display for NormalizationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NormalizationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(NormalizationKind::None),
            "user_mean_center" => Ok(NormalizationKind::UserMeanCenter),
            other => Err(Error::domain(format!("unknown normalization {other:?}"))),
        }
    }
}

/// Per-user offsets captured when a matrix was centered.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationState {
    pub kind: NormalizationKind,
    pub user_means: Vec<f64>,
}

impl NormalizationState {
    pub fn none(n_users: usize) -> Self {
        NormalizationState {
            kind: NormalizationKind::None,
            user_means: vec![0.0; n_users],
        }
    }

    /// Offset added back at prediction time.
    pub fn offset(&self, u: usize) -> f64 {
        match self.kind {
            NormalizationKind::None => 0.0,
            NormalizationKind::UserMeanCenter => self.user_means[u],
        }
    }

    pub fn apply(&self, u: usize, rating: f64) -> f64 {
        rating - self.offset(u)
    }

    pub fn invert(&self, u: usize, value: f64) -> f64 {
        value + self.offset(u)
    }
}

/// Subtract each user's mean from that user's ratings.
pub fn center_by_user(matrix: &RatingsMatrix) -> Result<(RatingsMatrix, NormalizationState)> {
    let state = NormalizationState {
        kind: NormalizationKind::UserMeanCenter,
        user_means: matrix.user_means.clone(),
    };
    let centered = matrix.map_ratings(|u, _, r| state.apply(u, r))?;
    Ok((centered, state))
}

/// Dense copy with each missing cell set to its item's mean; items with no
/// ratings fall back to the global mean.
pub fn impute_item_means(matrix: &RatingsMatrix) -> DMatrix<f64> {
    let m = matrix.n_users();
    let n = matrix.n_items();
    DMatrix::from_fn(m, n, |u, i| {
        matrix.rating(u, i).unwrap_or_else(|| {
            if matrix.cols[i].is_empty() {
                matrix.global_mean
            } else {
                matrix.item_means[i]
            }
        })
    })
}
