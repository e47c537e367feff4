use std::fs;
use std::io::{self, Cursor, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cfkit::bench::{emit_report, load_dataset, run_benchmark, BenchmarkPlan, ReportFormat};
use cfkit::factorization::{ExplanationStyle, TrainConfig};
use cfkit::metrics::{self, EvalConfig};
use cfkit::persist::{load_model, save_model};
use cfkit::ratings::{parse_interactions, split_holdout, DatasetFormat, Interaction, RatingsMatrix};
use cfkit::recommender::{evaluate, fit, FitParams, ModelKind, Recommender};
use cfkit::similarity::Metric;
use cfkit::{Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Neighborhood and latent-factor collaborative filtering.
#[derive(Parser)]
#[command(name = "cfkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a ratings file and print a summary.
    Ingest(DataArgs),
    /// Fit a model and save it.
    Train(TrainArgs),
    /// Score a saved model on a held-out file written by `train --test-out`.
    Evaluate(EvaluateArgs),
    /// Print top-N recommendations for raw user ids.
    Recommend(RecommendArgs),
    /// Run a benchmark plan (key = value file).
    Benchmark(BenchmarkArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Ratings file.
    #[arg(long)]
    data: PathBuf,
    /// Ratings file layout: ml100k (tab separated) or ml1m (`::` separated).
    #[arg(long, default_value = "ml100k")]
    format: DatasetFormat,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Model family.
    #[arg(long, value_parser = parse_kind)]
    model: ModelKind,
    /// kNN similarity: pearson, cosine, adjusted-cosine, euclidean.
    #[arg(long, default_value = "cosine")]
    metric: Metric,
    /// Neighbors (kNN, `all` for every neighbor) or latent rank.
    #[arg(long, default_value = "10", value_parser = parse_k)]
    k: usize,
    /// Minimum co-rated entries for a kNN weight [default: 2 for pearson and adjusted-cosine, 1 otherwise].
    #[arg(long)]
    min_overlap: Option<usize>,
    /// Training epochs.
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    /// SGD learning rate.
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
    /// L2 penalty on user and item factors.
    #[arg(long, default_value_t = 0.02)]
    lambda: f64,
    /// EMF regularization weight.
    #[arg(long, default_value_t = 0.02)]
    beta: f64,
    /// EMF explainability weight.
    #[arg(long, default_value_t = 0.1)]
    lambda_expl: f64,
    /// EMF explainability threshold.
    #[arg(long, default_value_t = 0.01)]
    theta: f64,
    /// EMF neighborhood size.
    #[arg(long, default_value_t = 50)]
    neighbor_k: usize,
    /// EMF explanation style: user or item.
    #[arg(long, default_value = "user")]
    style: ExplanationStyle,
    /// MF/EMF factors start uniform in [0, init-scale).
    #[arg(long, default_value_t = 0.1)]
    init_scale: f64,
    /// Center ratings by user mean before training MF or EMF; SVD always centers [default: off].
    #[arg(long)]
    normalize: bool,
    /// Seed for initialization, shuffling and the holdout split.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Fraction of ratings held out before training (0 trains on everything).
    #[arg(long, default_value_t = 0.0)]
    holdout: f64,
    /// Where to write the held-out ratings [default: not written].
    #[arg(long)]
    test_out: Option<PathBuf>,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Saved model.
    #[arg(long)]
    model: PathBuf,
    /// Held-out ratings written by `train --test-out`.
    #[arg(long)]
    test: PathBuf,
    /// Ratings at or above this count as relevant.
    #[arg(long, default_value_t = 4.0)]
    relevance: f64,
    /// Top-N list length.
    #[arg(long, default_value_t = 10)]
    list_size: usize,
    /// Half-life rank (position with a 50% chance of being viewed).
    #[arg(long, default_value_t = 5.0)]
    halflife_alpha: f64,
    /// Neutral rating for half-life utility.
    #[arg(long, default_value_t = 0.0)]
    halflife_d: f64,
    /// Rank cutoff for half-life and DCG.
    #[arg(long, default_value_t = 10)]
    dcg_k: usize,
    /// Report layout.
    #[arg(long, value_enum, default_value_t = EvalOutput::Text)]
    output: EvalOutput,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalOutput {
    Text,
    Csv,
}

#[derive(Args)]
struct RecommendArgs {
    /// Saved model.
    #[arg(long)]
    model: PathBuf,
    /// Raw user id; repeat or comma-separate for several users.
    #[arg(long, required = true, value_delimiter = ',')]
    user: Vec<u64>,
    /// List length.
    #[arg(long, default_value_t = 10)]
    n: usize,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Plan file.
    #[arg(long)]
    plan: PathBuf,
    /// Report layout: markdown, csv or text.
    #[arg(long, default_value = "markdown")]
    format: ReportFormat,
    /// Add wall-clock seconds per arm (makes output run-dependent) [default: off].
    #[arg(long)]
    timing: bool,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_kind(s: &str) -> std::result::Result<ModelKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_k(s: &str) -> std::result::Result<usize, String> {
    if s == "all" {
        Ok(usize::MAX)
    } else {
        s.parse().map_err(|_| format!("expected a positive integer or `all`, got {s:?}"))
    }
}

fn ingest(args: &DataArgs) -> Result<()> {
    let m = load_dataset(&args.data, args.format)?;
    let cells = m.n_users() as f64 * m.n_items() as f64;
    let (lo, hi) = m
        .triples()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, _, r)| (lo.min(r), hi.max(r)));
    println!("dataset    {}", args.data.display());
    println!("format     {}", args.format);
    println!("users      {}", m.n_users());
    println!("items      {}", m.n_items());
    println!("ratings    {}", m.nnz());
    println!("density    {:.6}", m.nnz() as f64 / cells);
    println!("mean       {:.4}", m.global_mean());
    println!("range      {lo} .. {hi}");
    Ok(())
}

fn write_test_file(path: &Path, test: &[Interaction], seed: u64, ratio: f64) -> Result<()> {
    let mut text = format!("# seed={seed} ratio={ratio}\n");
    for t in test {
        text.push_str(&format!("{}\t{}\t{}\t{}\n", t.user, t.item, t.rating, t.timestamp));
    }
    fs::write(path, text).map_err(|e| Error::Io {
        context: format!("writing {}", path.display()),
        source: e,
    })
}

fn train_mae(rec: &Recommender, train: &RatingsMatrix) -> Result<f64> {
    let triples: Vec<(usize, usize, f64)> = train.triples().collect();
    Ok(metrics::mae(&rec.prediction_pairs(&triples)?)?.value)
}

fn train(args: &TrainArgs) -> Result<()> {
    let matrix = load_dataset(&args.data.data, args.data.format)?;
    let train = if args.holdout > 0.0 {
        let split = split_holdout(&matrix, args.holdout, args.seed)?;
        if let Some(path) = &args.test_out {
            write_test_file(path, &split.test, args.seed, args.holdout)?;
        }
        split.train
    } else {
        if args.test_out.is_some() {
            return Err(Error::Domain("--test-out needs --holdout > 0".into()));
        }
        matrix
    };
    let params = FitParams {
        k: args.k,
        metric: args.metric,
        min_overlap: args.min_overlap,
        train: TrainConfig {
            k: args.k,
            alpha: args.alpha,
            lambda_p: args.lambda,
            lambda_q: args.lambda,
            beta: args.beta,
            lambda_expl: args.lambda_expl,
            epochs: args.epochs,
            seed: args.seed,
            init_scale: args.init_scale,
        },
        normalize: args.normalize,
        theta: args.theta,
        neighbor_k: args.neighbor_k,
        style: args.style,
    };
    let rec = fit(args.model, &train, &params)?;
    save_model(&rec, &args.out)?;
    println!(
        "trained {} on {} ratings ({} users, {} items): final train MAE {:.4}, saved {}",
        rec.describe(),
        train.nnz(),
        train.n_users(),
        train.n_items(),
        train_mae(&rec, &train)?,
        args.out.display()
    );
    Ok(())
}

/// Held-out triples in dense indices, plus the split seed and ratio from the header.
type HeldOutFile = (Vec<(usize, usize, f64)>, u64, f64);

fn read_test_file(path: &Path, rec: &Recommender) -> Result<HeldOutFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        context: format!("reading {}", path.display()),
        source: e,
    })?;
    let (mut seed, mut ratio) = (0, 0.0);
    if let Some(header) = text.lines().next().and_then(|l| l.strip_prefix('#')) {
        for field in header.split_whitespace() {
            match field.split_once('=') {
                Some(("seed", v)) => seed = v.parse().unwrap_or(0),
                Some(("ratio", v)) => ratio = v.parse().unwrap_or(0.0),
                _ => {}
            }
        }
    }
    // blank the comment line so reported line numbers stay correct
    let body: String = text
        .lines()
        .map(|l| if l.starts_with('#') { "" } else { l })
        .collect::<Vec<_>>()
        .join("\n");
    let mut test = Vec::new();
    for t in parse_interactions(Cursor::new(body), DatasetFormat::Ml100k)? {
        let u = rec.train.user_index(t.user)?;
        let i = rec.train.item_index(t.item)?;
        test.push((u, i, t.rating));
    }
    Ok((test, seed, ratio))
}

fn evaluate_cmd(args: &EvaluateArgs) -> Result<()> {
    let rec = load_model(&args.model)?;
    let (test, seed, ratio) = read_test_file(&args.test, &rec)?;
    let cfg = EvalConfig {
        relevance_theta: args.relevance,
        list_size: args.list_size,
        halflife_alpha: args.halflife_alpha,
        halflife_d: args.halflife_d,
        dcg_k: args.dcg_k,
    };
    let report = evaluate(&rec, &test, &cfg, seed, ratio)?;
    match args.output {
        EvalOutput::Text => print!("{}", report.to_text()),
        EvalOutput::Csv => print!("{}", report.to_csv()?),
    }
    Ok(())
}

fn recommend(args: &RecommendArgs) -> Result<()> {
    let rec = load_model(&args.model)?;
    let mut out = String::new();
    for &raw in &args.user {
        let u = rec.train.user_index(raw)?;
        let list = rec.recommend(u, args.n)?;
        if args.user.len() > 1 {
            out.push_str(&format!("# user {raw}\n"));
        }
        for (rank, (i, score)) in list.items.iter().enumerate() {
            out.push_str(&format!("{} {} {:.4}\n", rank + 1, rec.train.items().raw(*i), score));
        }
    }
    print!("{out}");
    Ok(())
}

fn benchmark(args: &BenchmarkArgs) -> Result<()> {
    let plan = BenchmarkPlan::from_file(&args.plan)?;
    let table = run_benchmark(&plan)?;
    let bytes = emit_report(&table, args.format, args.timing)?;
    match &args.out {
        Some(path) => fs::write(path, &bytes).map_err(|e| Error::Io {
            context: format!("writing {}", path.display()),
            source: e,
        }),
        None => io::stdout().write_all(&bytes).map_err(|e| Error::Io {
            context: "writing report".into(),
            source: e,
        }),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let result = match &cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Recommend(a) => recommend(a),
        Command::Benchmark(a) => benchmark(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
