//! Reproducible MovieLens experiments: memory-based and factor-model MAE
//! grids over seeded repeats, a pooled two-sample t-test, and report
//! emitters.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::factorization::{ExplanationStyle, TrainConfig};
use crate::metrics::mae;
use crate::ratings::{build_matrix, parse_interactions, split_holdout, DatasetFormat, RatingsMatrix, Split};
use crate::recommender::{fit, FitParams, ModelKind};
use crate::similarity::Metric;

/// Where to find MovieLens if a dataset file is missing.
pub const DOWNLOAD_HINT: &str = "download https://files.grouplens.org/datasets/movielens/ml-100k.zip (or ml-1m.zip), \
     unzip it and point --data at u.data (ratings.dat for ml-1m); scripts/fetch-ml100k.sh does this for ml-100k";

/// Read and index a dataset file.
pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<RatingsMatrix> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {} ({DOWNLOAD_HINT})", path.display()), e))?;
    build_matrix(&parse_interactions(BufReader::new(file), format)?)
}

/// How the markdown emitter lays out the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// Approach rows × similarity columns.
    Memory,
    /// Preprocessing rows × model columns.
    Factor,
    /// One row per arm.
    Flat,
}

/// One configured model in a plan.
#[derive(Debug, Clone, PartialEq)]
pub struct Arm {
    pub name: String,
    pub kind: ModelKind,
    pub params: FitParams,
    /// Reference MAE and the tolerance around it.
    pub target: Option<(f64, f64)>,
}

impl Arm {
    pub fn new(name: &str, kind: ModelKind, params: FitParams) -> Self {
        Arm {
            name: name.to_string(),
            kind,
            params,
            target: None,
        }
    }

    fn is_memory(&self) -> bool {
        matches!(self.kind, ModelKind::UserKnn | ModelKind::ItemKnn)
    }

    fn not_applicable(&self) -> bool {
        self.kind == ModelKind::Nmf && self.params.normalize
    }

    /// Short description of the arm's metric or preprocessing setup.
    pub fn config_label(&self) -> String {
        let p = &self.params;
        if self.is_memory() {
            let k = if p.k == usize::MAX { "all".to_string() } else { p.k.to_string() };
            return format!("{} k={k}", p.metric);
        }
        let norm = if p.normalize { "normalized" } else { "raw" };
        let t = &p.train;
        match self.kind {
            ModelKind::Svd => format!("user-centered k={}", p.k),
            ModelKind::Nmf => format!("{norm} k={} epochs={} lambda={}", p.k, t.epochs, t.lambda_p),
            ModelKind::Emf => format!(
                "{norm} k={} epochs={} alpha={} beta={} lambda_expl={} theta={} neighbors={}",
                p.k, t.epochs, t.alpha, t.beta, t.lambda_expl, p.theta, p.neighbor_k
            ),
            _ => format!(
                "{norm} k={} epochs={} alpha={} lambda_p={} lambda_q={}",
                p.k, t.epochs, t.alpha, t.lambda_p, t.lambda_q
            ),
        }
    }
}

/// Dataset, split protocol and arms of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkPlan {
    pub dataset: DatasetFormat,
    pub data_path: PathBuf,
    pub arms: Vec<Arm>,
    /// Fraction of ratings held out for testing.
    pub split_ratio: f64,
    /// Repeat `r` uses seed `base_seed + r` for both split and training.
    pub base_seed: u64,
    pub repeats: usize,
    /// Arm names to compare with a two-sample t-test.
    pub ttest: Option<(String, String)>,
    pub layout: Layout,
}

fn reference_memory(dataset: DatasetFormat, kind: ModelKind, metric: Metric) -> Option<(f64, f64)> {
    let v = match (dataset, kind, metric) {
        (DatasetFormat::Ml100k, ModelKind::UserKnn, Metric::Euclidean) => 0.81,
        (DatasetFormat::Ml100k, ModelKind::UserKnn, Metric::Cosine) => 0.75,
        (DatasetFormat::Ml100k, ModelKind::ItemKnn, Metric::Euclidean) => 0.83,
        (DatasetFormat::Ml100k, ModelKind::ItemKnn, Metric::Cosine) => 0.51,
        (DatasetFormat::Ml1m, ModelKind::UserKnn, Metric::Euclidean) => 0.81,
        (DatasetFormat::Ml1m, ModelKind::UserKnn, Metric::Cosine) => 0.73,
        (DatasetFormat::Ml1m, ModelKind::ItemKnn, Metric::Euclidean) => 0.82,
        (DatasetFormat::Ml1m, ModelKind::ItemKnn, Metric::Cosine) => 0.42,
        _ => return None,
    };
    let tol = if kind == ModelKind::ItemKnn && metric == Metric::Cosine { 0.15 } else { 0.05 };
    Some((v, tol))
}

fn reference_factor(dataset: DatasetFormat, kind: ModelKind, normalize: bool) -> Option<(f64, f64)> {
    if dataset != DatasetFormat::Ml100k {
        return None;
    }
    match (kind, normalize) {
        (ModelKind::Mf, false) => Some((1.497, 0.15)),
        (ModelKind::Mf, true) => Some((0.828, 0.08)),
        (ModelKind::Nmf, false) => Some((0.951, 0.10)),
        (ModelKind::Emf, false) => Some((0.797, 0.08)),
        (ModelKind::Emf, true) => Some((0.783, 0.08)),
        _ => None,
    }
}

impl BenchmarkPlan {
    fn empty(dataset: DatasetFormat, data_path: PathBuf, layout: Layout) -> Self {
        BenchmarkPlan {
            dataset,
            data_path,
            arms: Vec::new(),
            split_ratio: 0.2,
            base_seed: 1,
            repeats: 1,
            ttest: None,
            layout,
        }
    }

    /// User/item kNN × Euclidean/cosine, each neighborhood spanning every
    /// entity with a defined similarity.
    pub fn memory_preset(dataset: DatasetFormat, data_path: PathBuf) -> Self {
        let mut plan = Self::empty(dataset, data_path, Layout::Memory);
        for (side, kind) in [("user", ModelKind::UserKnn), ("item", ModelKind::ItemKnn)] {
            for metric in [Metric::Euclidean, Metric::Cosine] {
                let params = FitParams {
                    k: usize::MAX,
                    metric,
                    ..FitParams::default()
                };
                let mut arm = Arm::new(&format!("{side}-{metric}"), kind, params);
                arm.target = reference_memory(dataset, kind, metric);
                plan.arms.push(arm);
            }
        }
        plan
    }

    /// MF/NMF/EMF × raw/normalized at k=10, 10 epochs, with the per-model
    /// hyperparameters documented in the README.
    pub fn factor_preset(dataset: DatasetFormat, data_path: PathBuf) -> Self {
        let mut plan = Self::empty(dataset, data_path, Layout::Factor);
        let base = TrainConfig::default();
        for kind in [ModelKind::Mf, ModelKind::Nmf, ModelKind::Emf] {
            let train = match kind {
                ModelKind::Mf => TrainConfig { alpha: 0.001, ..base.clone() },
                ModelKind::Nmf => TrainConfig {
                    lambda_p: 0.5,
                    lambda_q: 0.5,
                    ..base.clone()
                },
                _ => base.clone(),
            };
            for normalize in [false, true] {
                let params = FitParams {
                    k: 10,
                    train: train.clone(),
                    normalize,
                    ..FitParams::default()
                };
                let suffix = if normalize { "normalized" } else { "raw" };
                let mut arm = Arm::new(&format!("{kind}-{suffix}"), kind, params);
                arm.target = reference_factor(dataset, kind, normalize);
                plan.arms.push(arm);
            }
        }
        plan
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = BTreeSet::new();
        for arm in &self.arms {
            if !names.insert(arm.name.as_str()) {
                return Err(Error::domain(format!("duplicate arm name {:?}", arm.name)));
            }
        }
        if self.repeats == 0 {
            return Err(Error::domain("repeats must be at least 1"));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::domain(format!("split ratio {} not in (0, 1)", self.split_ratio)));
        }
        if let Some((a, b)) = &self.ttest {
            if self.repeats < 2 {
                return Err(Error::domain("a t-test needs repeats >= 2"));
            }
            for name in [a, b] {
                if !names.contains(name.as_str()) {
                    return Err(Error::domain(format!("t-test arm {name:?} is not in the plan")));
                }
            }
        }
        Ok(())
    }

    /// Parse a `key = value` plan file. Relative data paths resolve against
    /// `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        parse_plan(text, base_dir)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading plan {}", path.display()), e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }
}

fn config_err(line: usize, reason: impl Into<String>) -> Error {
    Error::Config {
        line,
        reason: reason.into(),
    }
}

fn value<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| config_err(line, format!("invalid value {v:?} for {key}")))
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(config_err(line, format!("invalid boolean {v:?} for {key}"))),
    }
}

fn parse_plan(text: &str, base_dir: &Path) -> Result<BenchmarkPlan> {
    let mut entries: Vec<(usize, String, String)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (k, v) = content
            .split_once('=')
            .ok_or_else(|| config_err(line, "expected `key = value`"))?;
        entries.push((line, k.trim().to_string(), v.trim().to_string()));
    }

    let find = |key: &str| entries.iter().find(|e| e.1 == key);
    let dataset: DatasetFormat = match find("dataset") {
        Some((l, k, v)) => value(*l, k, v)?,
        None => DatasetFormat::Ml100k,
    };
    let data_path = match find("data") {
        Some((_, _, v)) => base_dir.join(v),
        None => return Err(config_err(0, "missing required key `data`")),
    };
    let mut plan = match find("preset") {
        Some((_, _, v)) if v == "memory" => BenchmarkPlan::memory_preset(dataset, data_path),
        Some((_, _, v)) if v == "factor" => BenchmarkPlan::factor_preset(dataset, data_path),
        Some((_, _, v)) if v == "none" => BenchmarkPlan::empty(dataset, data_path, Layout::Flat),
        Some((l, _, v)) => return Err(config_err(*l, format!("unknown preset {v:?} (memory, factor, none)"))),
        None => BenchmarkPlan::empty(dataset, data_path, Layout::Flat),
    };

    for (line, key, v) in &entries {
        let line = *line;
        match key.as_str() {
            "dataset" | "data" | "preset" => {}
            "split_ratio" => plan.split_ratio = value(line, key, v)?,
            "seed" => plan.base_seed = value(line, key, v)?,
            "repeats" => plan.repeats = value(line, key, v)?,
            "ttest" => {
                let (a, b) = v
                    .split_once(',')
                    .ok_or_else(|| config_err(line, "ttest expects `arm_a, arm_b`"))?;
                plan.ttest = Some((a.trim().to_string(), b.trim().to_string()));
            }
            "arms" => {
                let keep: Vec<&str> = v.split(',').map(str::trim).collect();
                if let Some(missing) = keep.iter().find(|n| !plan.arms.iter().any(|a| a.name == **n)) {
                    return Err(config_err(line, format!("unknown arm {missing:?}")));
                }
                plan.arms.retain(|a| keep.contains(&a.name.as_str()));
            }
            other => {
                let Some(rest) = other.strip_prefix("arm.") else {
                    return Err(config_err(line, format!("unknown key {other:?}")));
                };
                let (name, field) = rest
                    .split_once('.')
                    .ok_or_else(|| config_err(line, format!("expected arm.<name>.<field>, got {other:?}")))?;
                set_arm_field(&mut plan, line, name, field, v)?;
            }
        }
    }
    plan.validate().map_err(|e| config_err(0, e.to_string()))?;
    Ok(plan)
}

fn set_arm_field(plan: &mut BenchmarkPlan, line: usize, name: &str, field: &str, v: &str) -> Result<()> {
    if !plan.arms.iter().any(|a| a.name == name) {
        if field != "model" {
            return Err(config_err(line, format!("arm {name:?} must set `model` first")));
        }
        let kind: ModelKind = value(line, field, v)?;
        plan.arms.push(Arm::new(name, kind, FitParams::default()));
        return Ok(());
    }
    let arm = plan.arms.iter_mut().find(|a| a.name == name).expect("checked above");
    let p = &mut arm.params;
    match field {
        "model" => arm.kind = value(line, field, v)?,
        "metric" => p.metric = value(line, field, v)?,
        "k" if v == "all" => p.k = usize::MAX,
        "k" => p.k = value(line, field, v)?,
        "min_overlap" => p.min_overlap = Some(value(line, field, v)?),
        "normalize" => p.normalize = parse_bool(line, field, v)?,
        "alpha" => p.train.alpha = value(line, field, v)?,
        "lambda" => {
            p.train.lambda_p = value(line, field, v)?;
            p.train.lambda_q = p.train.lambda_p;
        }
        "lambda_p" => p.train.lambda_p = value(line, field, v)?,
        "lambda_q" => p.train.lambda_q = value(line, field, v)?,
        "beta" => p.train.beta = value(line, field, v)?,
        "lambda_expl" => p.train.lambda_expl = value(line, field, v)?,
        "epochs" => p.train.epochs = value(line, field, v)?,
        "init_scale" => p.train.init_scale = value(line, field, v)?,
        "theta" => p.theta = value(line, field, v)?,
        "neighbor_k" => p.neighbor_k = value(line, field, v)?,
        "style" => p.style = value::<ExplanationStyle>(line, field, v)?,
        "target" => {
            let tol = arm.target.map_or(0.05, |t| t.1);
            arm.target = Some((value(line, field, v)?, tol));
        }
        "tolerance" => {
            let target = arm
                .target
                .ok_or_else(|| config_err(line, "set `target` before `tolerance`"))?;
            arm.target = Some((target.0, value(line, field, v)?));
        }
        other => return Err(config_err(line, format!("unknown arm field {other:?}"))),
    }
    Ok(())
}

/// Outcome of one arm across all repeats.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmResult {
    pub name: String,
    pub kind: ModelKind,
    pub config: String,
    pub normalized: bool,
    pub metric: Option<Metric>,
    /// MAE per repeat; empty for a not-applicable arm.
    pub samples: Vec<f64>,
    pub seeds: Vec<u64>,
    pub target: Option<(f64, f64)>,
    pub not_applicable: bool,
    /// Total fitting and scoring time in seconds.
    pub elapsed_secs: f64,
}

impl ArmResult {
    pub fn mean(&self) -> Option<f64> {
        (!self.samples.is_empty()).then(|| self.samples.iter().sum::<f64>() / self.samples.len() as f64)
    }

    pub fn std_dev(&self) -> Option<f64> {
        let n = self.samples.len();
        if n < 2 {
            return None;
        }
        let m = self.mean()?;
        Some((self.samples.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt())
    }

    /// True when the mean falls outside the reference tolerance.
    pub fn deviates(&self) -> bool {
        match (self.mean(), self.target) {
            (Some(m), Some((t, tol))) => (m - t).abs() > tol,
            _ => false,
        }
    }
}

/// Pooled two-sample Student t-test.
#[derive(Debug, Clone, PartialEq)]
pub struct TTest {
    pub a: String,
    pub b: String,
    pub t: f64,
    pub dof: usize,
    pub p: f64,
    /// Both samples had zero variance.
    pub degenerate: bool,
}

/// `(t, dof, two-sided p)` for the pooled-variance two-sample t-test.
pub fn two_sample_ttest(a: &[f64], b: &[f64]) -> Result<(f64, usize, f64, bool)> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::domain("each sample needs at least two values"));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let ma = a.iter().sum::<f64>() / na;
    let mb = b.iter().sum::<f64>() / nb;
    let ss = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() + b.iter().map(|x| (x - mb).powi(2)).sum::<f64>();
    let dof = a.len() + b.len() - 2;
    let pooled = ss / dof as f64;
    let se = (pooled * (1.0 / na + 1.0 / nb)).sqrt();
    if se == 0.0 {
        return Ok(if ma == mb {
            (0.0, dof, 1.0, true)
        } else {
            ((ma - mb).signum() * f64::INFINITY, dof, 0.0, true)
        });
    }
    let t = (ma - mb) / se;
    let dist = StudentsT::new(0.0, 1.0, dof as f64).map_err(|e| Error::domain(e.to_string()))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok((t, dof, p, false))
}

/// Results of a plan run, rows in plan order.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkTable {
    pub dataset: DatasetFormat,
    pub layout: Layout,
    pub split_ratio: f64,
    pub rows: Vec<ArmResult>,
    pub ttest: Option<TTest>,
}

impl BenchmarkTable {
    pub fn row(&self, name: &str) -> Option<&ArmResult> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// One line per arm that missed its reference value.
    pub fn deviation_notes(&self) -> Vec<String> {
        self.rows
            .iter()
            .filter(|r| r.deviates())
            .map(|r| {
                let (t, tol) = r.target.expect("deviates implies a target");
                let mut note = format!(
                    "{}: MAE {:.4} deviates from reference {t} (tolerance {tol})",
                    r.name,
                    r.mean().expect("deviates implies samples")
                );
                if r.kind == ModelKind::ItemKnn {
                    note.push_str(
                        "; the reference protocol for item-based MAE is unstated (it may score already-rated \
                         pairs or use a different neighborhood regime), so this is recorded as a deviation",
                    );
                }
                note
            })
            .collect()
    }
}

fn run_arms(plan: &BenchmarkPlan, arms: Vec<Arm>, layout: Layout) -> Result<BenchmarkTable> {
    plan.validate()?;
    let seeds: Vec<u64> = (0..plan.repeats as u64).map(|r| plan.base_seed + r).collect();
    let splits: Vec<Split> = if arms.iter().all(Arm::not_applicable) {
        Vec::new()
    } else {
        let matrix = load_dataset(&plan.data_path, plan.dataset)?;
        seeds
            .iter()
            .map(|&s| split_holdout(&matrix, plan.split_ratio, s))
            .collect::<Result<_>>()?
    };
    let jobs: Vec<(usize, usize)> = arms
        .iter()
        .enumerate()
        .filter(|(_, a)| !a.not_applicable())
        .flat_map(|(a, _)| (0..seeds.len()).map(move |r| (a, r)))
        .collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(a, r)| {
            let start = std::time::Instant::now();
            let arm = &arms[a];
            let split = &splits[r];
            let params = FitParams {
                train: TrainConfig {
                    seed: seeds[r],
                    ..arm.params.train.clone()
                },
                ..arm.params.clone()
            };
            let rec = fit(arm.kind, &split.train, &params)?;
            let value = mae(&rec.prediction_pairs(&split.test_indexed())?)?.value;
            Ok((value, start.elapsed().as_secs_f64()))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;

    let mut rows: Vec<ArmResult> = arms
        .iter()
        .map(|arm| ArmResult {
            name: arm.name.clone(),
            kind: arm.kind,
            config: arm.config_label(),
            normalized: arm.params.normalize || arm.kind == ModelKind::Svd,
            metric: arm.is_memory().then_some(arm.params.metric),
            samples: Vec::new(),
            seeds: if arm.not_applicable() { Vec::new() } else { seeds.clone() },
            target: arm.target,
            not_applicable: arm.not_applicable(),
            elapsed_secs: 0.0,
        })
        .collect();
    for (&(a, _), (value, secs)) in jobs.iter().zip(outcomes) {
        rows[a].samples.push(value);
        rows[a].elapsed_secs += secs;
    }

    let ttest = match &plan.ttest {
        Some((a, b)) => {
            let (ra, rb) = (rows.iter().find(|r| &r.name == a), rows.iter().find(|r| &r.name == b));
            match (ra, rb) {
                (Some(ra), Some(rb)) => {
                    let (t, dof, p, degenerate) = two_sample_ttest(&ra.samples, &rb.samples)?;
                    Some(TTest {
                        a: a.clone(),
                        b: b.clone(),
                        t,
                        dof,
                        p,
                        degenerate,
                    })
                }
                _ => None,
            }
        }
        None => None,
    };
    Ok(BenchmarkTable {
        dataset: plan.dataset,
        layout,
        split_ratio: plan.split_ratio,
        rows,
        ttest,
    })
}

/// Every arm of the plan.
pub fn run_benchmark(plan: &BenchmarkPlan) -> Result<BenchmarkTable> {
    run_arms(plan, plan.arms.clone(), plan.layout)
}

/// The plan's user/item kNN arms.
pub fn run_memory_benchmark(plan: &BenchmarkPlan) -> Result<BenchmarkTable> {
    let arms = plan.arms.iter().filter(|a| a.is_memory()).cloned().collect();
    run_arms(plan, arms, Layout::Memory)
}

/// The plan's MF/NMF/EMF arms; NMF on normalized ratings is marked not
/// applicable instead of being trained.
pub fn run_factor_benchmark(plan: &BenchmarkPlan) -> Result<BenchmarkTable> {
    let arms = plan
        .arms
        .iter()
        .filter(|a| matches!(a.kind, ModelKind::Mf | ModelKind::Nmf | ModelKind::Emf))
        .cloned()
        .collect();
    run_arms(plan, arms, Layout::Factor)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(Error::domain(format!("unknown report format {other:?}"))),
        }
    }
}

/// Marker for a cell that cannot be computed.
pub const NOT_APPLICABLE: &str = "---";

/// Render a table. Output depends only on the results, so an identical
/// plan produces identical bytes; `timing` adds the elapsed-seconds
/// column, which does not have that property.
pub fn emit_report(table: &BenchmarkTable, format: ReportFormat, timing: bool) -> Result<Vec<u8>> {
    match format {
        ReportFormat::Csv => emit_csv(table, timing),
        ReportFormat::Text => Ok(emit_text(table, timing).into_bytes()),
        ReportFormat::Markdown => Ok(emit_markdown(table, timing).into_bytes()),
    }
}

fn emit_csv(table: &BenchmarkTable, timing: bool) -> Result<Vec<u8>> {
    let csv_err = |e: csv::Error| Error::domain(e.to_string());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["dataset", "model", "metric_config", "value", "seed"];
    if timing {
        header.push("elapsed_secs");
    }
    w.write_record(&header).map_err(csv_err)?;
    for row in &table.rows {
        let model = format!("{} ({})", row.name, row.kind);
        let mut records: Vec<Vec<String>> = Vec::new();
        if row.not_applicable {
            records.push(vec![
                table.dataset.to_string(),
                model.clone(),
                row.config.clone(),
                NOT_APPLICABLE.to_string(),
                String::new(),
            ]);
        }
        for (v, s) in row.samples.iter().zip(&row.seeds) {
            records.push(vec![
                table.dataset.to_string(),
                model.clone(),
                row.config.clone(),
                format!("{v:.6}"),
                s.to_string(),
            ]);
        }
        for mut rec in records {
            if timing {
                rec.push(format!("{:.3}", row.elapsed_secs));
            }
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    w.into_inner().map_err(|e| Error::domain(e.to_string()))
}

fn summary(row: &ArmResult) -> String {
    match row.mean() {
        None => NOT_APPLICABLE.to_string(),
        Some(m) => match row.std_dev() {
            Some(sd) => format!("{m:.4} ± {sd:.4}"),
            None => format!("{m:.4}"),
        },
    }
}

fn footer(table: &BenchmarkTable, out: &mut String, bullet: &str) {
    if let Some(t) = &table.ttest {
        let _ = writeln!(
            out,
            "{bullet}t-test {} vs {}: t={:.4} dof={} p={:.3e}{}",
            t.a,
            t.b,
            t.t,
            t.dof,
            t.p,
            if t.degenerate { " (zero variance)" } else { "" }
        );
    }
    for note in table.deviation_notes() {
        let _ = writeln!(out, "{bullet}deviation: {note}");
    }
}

fn emit_text(table: &BenchmarkTable, timing: bool) -> String {
    let mut out = String::new();
    for row in &table.rows {
        let _ = write!(
            out,
            "arm={} dataset={} model={} config=\"{}\" mae={} repeats={}",
            row.name,
            table.dataset,
            row.kind,
            row.config,
            summary(row),
            row.samples.len()
        );
        if let Some((t, tol)) = row.target {
            let status = if row.not_applicable {
                "n/a"
            } else if row.deviates() {
                "deviation"
            } else {
                "ok"
            };
            let _ = write!(out, " reference={t} tolerance={tol} status={status}");
        }
        if timing {
            let _ = write!(out, " elapsed_secs={:.3}", row.elapsed_secs);
        }
        out.push('\n');
    }
    footer(table, &mut out, "");
    out
}

fn cell(row: Option<&ArmResult>) -> String {
    let Some(row) = row else {
        return String::new();
    };
    let mut s = summary(row);
    if let (Some((t, _)), false) = (row.target, row.not_applicable) {
        let _ = write!(s, " (ref {t})");
    }
    if row.deviates() {
        s.push_str(" **deviation**");
    }
    s
}

fn emit_markdown(table: &BenchmarkTable, timing: bool) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "### {} (test ratio {})\n", table.dataset, table.split_ratio);
    match table.layout {
        Layout::Memory => {
            let metrics: Vec<Metric> = {
                let mut seen = Vec::new();
                for m in table.rows.iter().filter_map(|r| r.metric) {
                    if !seen.contains(&m) {
                        seen.push(m);
                    }
                }
                seen
            };
            let _ = writeln!(
                out,
                "| Approach | {} |",
                metrics.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(" | ")
            );
            let _ = writeln!(out, "|---|{}", "---|".repeat(metrics.len()));
            for (label, kind) in [("User-based", ModelKind::UserKnn), ("Item-based", ModelKind::ItemKnn)] {
                if !table.rows.iter().any(|r| r.kind == kind) {
                    continue;
                }
                let cells: Vec<String> = metrics
                    .iter()
                    .map(|&m| cell(table.rows.iter().find(|r| r.kind == kind && r.metric == Some(m))))
                    .collect();
                let _ = writeln!(out, "| {label} | {} |", cells.join(" | "));
            }
        }
        Layout::Factor => {
            let models = [ModelKind::Mf, ModelKind::Nmf, ModelKind::Emf];
            let _ = writeln!(out, "| Ratings | MF | NMF | EMF |");
            let _ = writeln!(out, "|---|---|---|---|");
            for (label, normalized) in [("Raw", false), ("Normalized", true)] {
                let cells: Vec<String> = models
                    .iter()
                    .map(|&k| cell(table.rows.iter().find(|r| r.kind == k && r.normalized == normalized)))
                    .collect();
                let _ = writeln!(out, "| {label} | {} |", cells.join(" | "));
            }
        }
        Layout::Flat => {
            let _ = writeln!(out, "| Arm | Model | Config | MAE |");
            let _ = writeln!(out, "|---|---|---|---|");
            for row in &table.rows {
                let _ = writeln!(out, "| {} | {} | {} | {} |", row.name, row.kind, row.config, cell(Some(row)));
            }
        }
    }
    out.push('\n');
    if table.layout != Layout::Flat {
        for row in &table.rows {
            let _ = writeln!(out, "- {}: {}", row.name, row.config);
        }
    }
    if timing {
        for row in &table.rows {
            let _ = writeln!(out, "- {} elapsed: {:.3}s", row.name, row.elapsed_secs);
        }
    }
    footer(table, &mut out, "- ");
    out
}
