//! Text model files.
//!
//! ```text
//! cfmodel v1 <kind> <k> <m> <n> <normalization>
//! users <raw id> ...
//! items <raw id> ...
//! ratings <count>
//! <u> <i> <rating> <timestamp>        (dense indices)
//! means <m>
//! <user mean>                          (one per line)
//! P <m> <k> / Q <n> <k> rows           (factor and SVD models)
//! singular <k> values                  (SVD only, before P)
//! similarity <lines> + simmodel block  (kNN models)
//! end
//! ```
//!
//! Floats are written with 17 significant digits, so a load reproduces
//! every value bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::factorization::{FactorKind, FactorModel, Factors};
use crate::ratings::{IdMap, NormalizationKind, NormalizationState, RatingsMatrix};
use crate::recommender::{Fitted, ModelKind, Recommender};
use crate::similarity::SimilarityModel;
use crate::svd::SvdModel;

const MAGIC: &str = "cfmodel";
const VERSION: &str = "v1";

fn f(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_rows<W: Write>(out: &mut W, tag: &str, rows: usize, k: usize, value: impl Fn(usize, usize) -> f64) -> std::io::Result<()> {
    writeln!(out, "{tag} {rows} {k}")?;
    for r in 0..rows {
        let line: Vec<String> = (0..k).map(|c| f(value(r, c))).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

fn join_ids(ids: &[u64]) -> String {
    ids.iter().map(u64::to_string).collect::<Vec<_>>().join(" ")
}

/// Serialize a model to any writer.
pub fn write_model<W: Write>(rec: &Recommender, out: W) -> Result<()> {
    write_inner(rec, out).map_err(|e| Error::io("writing model", e))
}

fn write_inner<W: Write>(rec: &Recommender, mut out: W) -> std::io::Result<()> {
    let t = &rec.train;
    let (m, n) = (t.n_users(), t.n_items());
    writeln!(out, "{MAGIC} {VERSION} {} {} {m} {n} {}", rec.kind, rec.k(), rec.normalization())?;
    writeln!(out, "users {}", join_ids(t.users().raw_ids()))?;
    writeln!(out, "items {}", join_ids(t.items().raw_ids()))?;
    let interactions = t.interactions();
    writeln!(out, "ratings {}", interactions.len())?;
    for x in &interactions {
        let u = t.users().get(x.user).expect("own id");
        let i = t.items().get(x.item).expect("own id");
        writeln!(out, "{u} {i} {} {}", f(x.rating), x.timestamp)?;
    }
    let means: &[f64] = match &rec.fitted {
        Fitted::Knn(_) => t.user_means(),
        Fitted::Svd(s) => &s.normalization.user_means,
        Fitted::Factor(fm) => &fm.normalization.user_means,
    };
    writeln!(out, "means {}", means.len())?;
    for v in means {
        writeln!(out, "{}", f(*v))?;
    }
    match &rec.fitted {
        Fitted::Knn(s) => {
            let mut block = Vec::new();
            s.write_to(&mut block)?;
            let lines = block.iter().filter(|&&b| b == b'\n').count();
            writeln!(out, "similarity {lines}")?;
            out.write_all(&block)?;
        }
        Fitted::Svd(s) => {
            let vals: Vec<String> = s.singular_values.iter().map(|v| f(*v)).collect();
            writeln!(out, "singular {} {}", vals.len(), vals.join(" "))?;
            write_rows(&mut out, "P", m, s.k(), |r, c| s.user_factors[(r, c)])?;
            write_rows(&mut out, "Q", n, s.k(), |r, c| s.item_factors[(c, r)])?;
        }
        Fitted::Factor(fm) => {
            write_rows(&mut out, "P", m, fm.k(), |r, c| fm.p.row(r)[c])?;
            write_rows(&mut out, "Q", n, fm.k(), |r, c| fm.q.row(r)[c])?;
        }
    }
    writeln!(out, "end")?;
    out.flush()
}

pub fn save_model(rec: &Recommender, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    write_model(rec, BufWriter::new(file))
}

pub fn load_model(path: &Path) -> Result<Recommender> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    read_model(BufReader::new(file))
}

struct Lines<R> {
    inner: R,
    offset: usize,
}

impl<R: BufRead> Lines<R> {
    /// Next line and the byte offset where it starts; EOF is corruption.
    fn next(&mut self, what: &str) -> Result<(usize, String)> {
        let start = self.offset;
        let mut buf = String::new();
        let read = self
            .inner
            .read_line(&mut buf)
            .map_err(|e| Error::io("reading model", e))?;
        if read == 0 {
            return Err(corrupt(start, format!("unexpected end of file, expected {what}")));
        }
        self.offset += read;
        if !buf.ends_with('\n') {
            return Err(corrupt(start, format!("truncated line, expected {what}")));
        }
        buf.pop();
        if buf.ends_with('\r') {
            buf.pop();
        }
        Ok((start, buf))
    }

    fn tagged(&mut self, tag: &str) -> Result<(usize, Vec<String>)> {
        let (at, line) = self.next(tag)?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(tag) {
            return Err(corrupt(at, format!("expected `{tag}` block")));
        }
        Ok((at, parts.map(str::to_string).collect()))
    }

    fn floats(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        let (at, line) = self.next(what)?;
        let vals = parse_all::<f64>(&line, at, what)?;
        if vals.len() != count || vals.iter().any(|v| !v.is_finite()) {
            return Err(corrupt(at, format!("expected {count} finite values in {what}")));
        }
        Ok(vals)
    }

    fn matrix(&mut self, tag: &str, rows: usize, k: usize) -> Result<Vec<f64>> {
        let (at, dims) = self.tagged(tag)?;
        if parse_all::<usize>(&dims.join(" "), at, tag)? != [rows, k] {
            return Err(corrupt(at, format!("{tag} block has the wrong shape")));
        }
        let mut data = Vec::with_capacity(rows * k);
        for _ in 0..rows {
            data.extend(self.floats(k, tag)?);
        }
        Ok(data)
    }
}

fn corrupt(offset: usize, reason: impl Into<String>) -> Error {
    Error::Corrupt {
        offset,
        reason: reason.into(),
    }
}

fn parse_all<T: std::str::FromStr>(line: &str, at: usize, what: &str) -> Result<Vec<T>> {
    line.split_whitespace()
        .map(|s| s.parse::<T>().map_err(|_| corrupt(at, format!("bad number {s:?} in {what}"))))
        .collect()
}

fn one<T: std::str::FromStr>(fields: &[String], at: usize, what: &str) -> Result<T> {
    match fields {
        [v] => v.parse().map_err(|_| corrupt(at, format!("bad {what}"))),
        _ => Err(corrupt(at, format!("bad {what}"))),
    }
}

/// Parse a model written by [`write_model`].
pub fn read_model<R: BufRead>(input: R) -> Result<Recommender> {
    let mut lines = Lines { inner: input, offset: 0 };
    let (_, header) = lines.next("header")?;
    let h: Vec<&str> = header.split_whitespace().collect();
    if h.first() != Some(&MAGIC) || h.len() < 2 {
        return Err(corrupt(0, "not a cfmodel file"));
    }
    if h[1] != VERSION {
        return Err(Error::Version {
            found: h[1].to_string(),
            expected: VERSION.to_string(),
        });
    }
    if h.len() != 7 {
        return Err(corrupt(0, "malformed header"));
    }
    let kind: ModelKind = h[2].parse().map_err(|_| corrupt(0, "unknown model kind"))?;
    let nums = parse_all::<usize>(&h[3..6].join(" "), 0, "header")?;
    let (k, m, n) = (nums[0], nums[1], nums[2]);
    let norm: NormalizationKind = h[6].parse().map_err(|_| corrupt(0, "unknown normalization"))?;

    let (at, users) = lines.tagged("users")?;
    let users = IdMap::from_raw(parse_all(&users.join(" "), at, "users")?).map_err(|_| corrupt(at, "duplicate user id"))?;
    let (at, items) = lines.tagged("items")?;
    let items = IdMap::from_raw(parse_all(&items.join(" "), at, "items")?).map_err(|_| corrupt(at, "duplicate item id"))?;
    if users.len() != m || items.len() != n {
        return Err(corrupt(at, "id maps disagree with header"));
    }
    let (at, count) = lines.tagged("ratings")?;
    let count: usize = one(&count, at, "rating count")?;
    let mut triples = Vec::with_capacity(count);
    for _ in 0..count {
        let (at, line) = lines.next("rating")?;
        let p: Vec<&str> = line.split_whitespace().collect();
        let parsed = (|| {
            if p.len() != 4 {
                return None;
            }
            Some((p[0].parse().ok()?, p[1].parse().ok()?, p[2].parse().ok()?, p[3].parse().ok()?))
        })();
        let (u, i, r, t): (usize, usize, f64, i64) = parsed.ok_or_else(|| corrupt(at, "bad rating line"))?;
        if u >= m || i >= n {
            return Err(corrupt(at, "rating index out of range"));
        }
        triples.push((u, i, r, t));
    }
    let train = RatingsMatrix::from_indexed(users, items, triples).map_err(|e| corrupt(at, e.to_string()))?;
    let (at, mcount) = lines.tagged("means")?;
    if one::<usize>(&mcount, at, "mean count")? != m {
        return Err(corrupt(at, "mean count disagrees with header"));
    }
    let mut means = Vec::with_capacity(m);
    for _ in 0..m {
        means.push(lines.floats(1, "user mean")?[0]);
    }
    let normalization = NormalizationState {
        kind: norm,
        user_means: means,
    };

    let fitted = match kind {
        ModelKind::UserKnn | ModelKind::ItemKnn => {
            let (at, count) = lines.tagged("similarity")?;
            let count: usize = one(&count, at, "similarity line count")?;
            let base = lines.offset;
            let mut block = Vec::new();
            for _ in 0..count {
                let (_, line) = lines.next("similarity line")?;
                block.extend_from_slice(line.as_bytes());
                block.push(b'\n');
            }
            let sims = SimilarityModel::read_from(block.as_slice()).map_err(|e| match e {
                Error::Corrupt { offset, reason } => corrupt(base + offset, reason),
                other => other,
            })?;
            Fitted::Knn(sims)
        }
        ModelKind::Svd => {
            let (at, fields) = lines.tagged("singular")?;
            let vals = parse_all::<f64>(&fields.join(" "), at, "singular values")?;
            if vals.first().map(|c| *c as usize) != Some(k) || vals.len() != k + 1 {
                return Err(corrupt(at, "singular value count disagrees with header"));
            }
            let p = lines.matrix("P", m, k)?;
            let q = lines.matrix("Q", n, k)?;
            let user_factors = DMatrix::from_row_slice(m, k, &p);
            let item_factors = DMatrix::from_row_slice(n, k, &q).transpose();
            Fitted::Svd(SvdModel::from_factors(user_factors, item_factors, vals[1..].to_vec(), normalization))
        }
        ModelKind::Mf | ModelKind::Nmf | ModelKind::Emf => {
            let p = Factors::from_vec(m, k, lines.matrix("P", m, k)?)?;
            let q = Factors::from_vec(n, k, lines.matrix("Q", n, k)?)?;
            let fk = match kind {
                ModelKind::Mf => FactorKind::Mf,
                ModelKind::Nmf => FactorKind::Nmf,
                _ => FactorKind::Emf,
            };
            Fitted::Factor(FactorModel {
                p,
                q,
                normalization,
                kind: fk,
            })
        }
    };
    let (at, _) = lines.tagged("end")?;
    let mut rest = Vec::new();
    lines
        .inner
        .read_to_end(&mut rest)
        .map_err(|e| Error::io("reading model", e))?;
    if rest.iter().any(|b| !b.is_ascii_whitespace()) {
        return Err(corrupt(at, "trailing data after end"));
    }
    Ok(Recommender { kind, train, fitted })
}
