//! `spcat`: train catalyzers, encode vectors, search and evaluate.
//!
//! Exit codes: 0 success, 1 usage, 2 data or I/O, 3 numeric failure.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use spcat::binarycodes::{binarize_all, hamming_search, pca_fit, BinaryCodes, ProjectionBasis};
use spcat::lattice::{LatticeCodeFile, LatticeCodebook};
use spcat::nn::CatalyzerModel;
use spcat::searcheval::{
    angular_histogram, histogram, neighbor_distances, recall_at_k, results_at_recall, scan_lattice, uniformity_overlap,
    uniformity_overlap_queries, EpsilonPoint, EvalReport, UniformityStats,
};
use spcat::synthetic::{benchmark, MixtureSpec};
use spcat::trainer::{default_lambda, train, EpochStats, TrainConfig};
use spcat::vecio::{brute_force_knn, l2_normalize, read_vecs, write_fvecs, GroundTruth, VecFormat, VectorSet};
use spcat::Error;

#[derive(Parser, Debug)]
#[command(name = "spcat", version, about = "Catalyzer training, lattice and binary codes, exhaustive search")]
struct Cli {
    /// Worker threads for mining, transforms and search.
    #[arg(long, global = true, env = "SPCAT_THREADS")]
    threads: Option<usize>,
    /// Run on a single thread so identical inputs give byte-identical outputs.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a catalyzer and write a checkpoint plus a TSV training log.
    Train(TrainArgs),
    /// Map vectors through a checkpoint (or PCA) and write the features as fvecs.
    Transform(TransformArgs),
    /// Encode base vectors into lattice or binary codes.
    Encode(EncodeArgs),
    /// Exhaustive search of a code file; writes top-k ids as ivecs.
    Search(SearchArgs),
    /// Recall 1@k of a code file against exact ground truth.
    Eval(EvalArgs),
    /// Uniformity, epsilon-search and angular-histogram data for a feature space.
    Analyze(AnalyzeArgs),
    /// Brute-force exact nearest neighbors.
    Gt(GtArgs),
    /// Write a seeded Gaussian-mixture dataset (train, base, queries, ground truth).
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Training log, defaults to `<out>.log.tsv`.
    #[arg(long)]
    log: Option<PathBuf>,
    /// JSON file with any of the hyperparameter fields below; flags win over it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dout: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    /// Defaults to the tabulated value for the nearest output dimension.
    #[arg(long, allow_negative_numbers = true)]
    lambda: Option<f64>,
    #[arg(long)]
    kpos: Option<usize>,
    #[arg(long)]
    kneg: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Train through a straight-through lattice quantizer.
    #[arg(long)]
    end2end: bool,
    /// Lattice radius for --end2end; its square must be an integer.
    #[arg(long, requires = "end2end", conflicts_with = "r2")]
    radius: Option<f64>,
    /// Squared lattice radius for --end2end.
    #[arg(long, requires = "end2end")]
    r2: Option<u32>,
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct TrainFile {
    dout: Option<usize>,
    hidden: Option<usize>,
    lambda: Option<f64>,
    kpos: Option<usize>,
    kneg: Option<usize>,
    epochs: Option<usize>,
    batch: Option<usize>,
    momentum: Option<f64>,
    seed: Option<u64>,
    r2: Option<u32>,
}

/// How raw vectors become features before encoding or searching.
#[derive(Args, Debug, Clone)]
struct FeatureArgs {
    /// Catalyzer checkpoint.
    #[arg(long, conflicts_with_all = ["pca", "lsh"])]
    model: Option<PathBuf>,
    /// PCA fitted on --train, then ℓ2-normalized.
    #[arg(long, requires_all = ["train", "dout"], conflicts_with = "lsh")]
    pca: bool,
    /// Signs of --bits Gaussian random projections (binary codes only).
    #[arg(long, requires = "bits")]
    lsh: bool,
    /// Training vectors for --pca.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Output dimension for --pca; checked against the checkpoint with --model.
    #[arg(long)]
    dout: Option<usize>,
    #[arg(long)]
    bits: Option<usize>,
    /// Seed for --lsh projections.
    #[arg(long, default_value_t = 0)]
    lsh_seed: u64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Codec {
    Lattice,
    Binary,
}

#[derive(Args, Debug)]
struct TransformArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    features: FeatureArgs,
}

#[derive(Args, Debug)]
struct EncodeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Codec::Lattice)]
    codec: Codec,
    /// Same as --codec binary.
    #[arg(long, conflicts_with_all = ["r2", "radius"])]
    binary: bool,
    /// Squared lattice radius.
    #[arg(long, conflicts_with = "radius")]
    r2: Option<u32>,
    /// Lattice radius; its square must be an integer.
    #[arg(long)]
    radius: Option<f64>,
    #[command(flatten)]
    features: FeatureArgs,
}

#[derive(Args, Debug)]
struct SearchArgs {
    #[arg(long)]
    codes: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    k: usize,
    #[command(flatten)]
    features: FeatureArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    codes: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    /// Exact neighbors of the queries in input space (ivecs).
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Comma-separated list of k for recall 1@k.
    #[arg(long, value_delimiter = ',', default_value = "1,10,100")]
    k: Vec<usize>,
    /// TSV report; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json: Option<PathBuf>,
    /// Recorded in the report.
    #[arg(long)]
    lambda: Option<f64>,
    #[command(flatten)]
    features: FeatureArgs,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[arg(long)]
    base: PathBuf,
    /// With --gt, enables epsilon-search curves; also used as the query side of the uniformity statistic.
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long, requires = "queries")]
    gt: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 8)]
    planes: usize,
    #[arg(long, default_value_t = 64)]
    bins: usize,
    #[arg(long, default_value_t = 100)]
    k_far: usize,
    #[arg(long, default_value_t = 100_000)]
    pairs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    features: FeatureArgs,
}

#[derive(Args, Debug)]
struct GtArgs {
    #[arg(long)]
    base: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, default_value_t = 100)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = MixtureSpec::desk().dim)]
    dim: usize,
    #[arg(long, default_value_t = MixtureSpec::desk().components)]
    components: usize,
    /// Rank of each component's covariance, 0 for full rank.
    #[arg(long, default_value_t = MixtureSpec::desk().intrinsic_dim)]
    rank: usize,
    #[arg(long, default_value_t = MixtureSpec::desk().spread)]
    spread: f64,
    #[arg(long, default_value_t = MixtureSpec::desk().noise)]
    noise: f64,
    #[arg(long, default_value_t = 2_000)]
    n_train: usize,
    #[arg(long, default_value_t = 20_000)]
    n_base: usize,
    #[arg(long, default_value_t = 500)]
    n_queries: usize,
    /// Ground-truth depth, 0 to skip.
    #[arg(long, default_value_t = 100)]
    gt_k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure { code: 1, message: message.into() }
    }

    fn data(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Argument(_) => 1,
            Error::Numeric(_) => 3,
            _ => 2,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::data(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> CliResult {
    let threads = if cli.deterministic { Some(1) } else { cli.threads };
    if let Some(n) = threads {
        if n == 0 {
            return Err(Failure::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Failure::usage(e.to_string()))?;
    }
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Transform(a) => cmd_transform(a),
        Command::Encode(a) => cmd_encode(a),
        Command::Search(a) => cmd_search(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Gt(a) => cmd_gt(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn require_file(path: &Path) -> CliResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::data(format!("{}: no such file", path.display())))
    }
}

fn require_parent(path: &Path) -> CliResult {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => {
            Err(Failure::data(format!("{}: output directory does not exist", dir.display())))
        }
        _ => Ok(()),
    }
}

fn read_input(path: &Path) -> CliResult<VectorSet> {
    require_file(path)?;
    let format = VecFormat::from_path(path).unwrap_or(VecFormat::Fvecs);
    Ok(read_vecs(path, format)?)
}

fn radius_to_r2(radius: f64) -> CliResult<u32> {
    let sq = radius * radius;
    let r2 = sq.round();
    if !(radius > 0.0) || (sq - r2).abs() > 1e-6 || r2 > f64::from(u32::MAX) {
        return Err(Failure::usage(format!("radius {radius} does not have an integer square")));
    }
    Ok(r2 as u32)
}

fn cmd_train(a: TrainArgs) -> CliResult {
    let file: TrainFile = match &a.config {
        Some(path) => {
            require_file(path)?;
            serde_json::from_str(&fs::read_to_string(path)?)
                .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?
        }
        None => TrainFile::default(),
    };
    let d_out = a.dout.or(file.dout).ok_or_else(|| Failure::usage("--dout is required (flag or config file)"))?;
    let mut config = TrainConfig::new(d_out);
    config.lambda = a.lambda.or(file.lambda).unwrap_or_else(|| default_lambda(d_out));
    config.d_hidden = a.hidden.or(file.hidden).unwrap_or(config.d_hidden);
    config.k_pos = a.kpos.or(file.kpos).unwrap_or(config.k_pos);
    config.k_neg = a.kneg.or(file.kneg).unwrap_or(config.k_neg);
    config.epochs = a.epochs.or(file.epochs).unwrap_or(config.epochs);
    config.batch_size = a.batch.or(file.batch).unwrap_or(config.batch_size);
    config.momentum = a.momentum.or(file.momentum).unwrap_or(config.momentum);
    config.seed = a.seed.or(file.seed).unwrap_or(config.seed);
    if a.end2end {
        let r2 = match (a.radius, a.r2.or(file.r2)) {
            (Some(r), _) => radius_to_r2(r)?,
            (None, Some(r2)) => r2,
            (None, None) => return Err(Failure::usage("--end2end needs --radius or --r2")),
        };
        LatticeCodebook::new(d_out, r2)?;
        config.end_to_end_r2 = Some(r2);
    }
    config.validate(usize::MAX)?;

    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".log.tsv");
        PathBuf::from(p)
    });
    require_parent(&a.out)?;
    require_parent(&log_path)?;
    let input = read_input(&a.input)?;
    config.validate(input.len())?;

    let mut log = fs::File::create(&log_path)?;
    writeln!(log, "{}", EpochStats::TSV_HEADER)?;
    eprintln!("{}", EpochStats::TSV_HEADER);
    let mut log_err = None;
    let (model, _) = train(&input, &config, |stats| {
        eprintln!("{stats}");
        if let Err(e) = writeln!(log, "{stats}") {
            log_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_err {
        return Err(e.into());
    }
    model.save(&a.out)?;
    Ok(())
}

enum Features {
    Model(Box<CatalyzerModel>),
    Pca(ProjectionBasis),
    Lsh(ProjectionBasis),
    Raw,
}

impl Features {
    fn load(args: &FeatureArgs, d_in: usize) -> CliResult<Features> {
        if let Some(path) = &args.model {
            require_file(path)?;
            let model = CatalyzerModel::load(path)?;
            if model.d_in != d_in {
                return Err(Failure::data(format!(
                    "checkpoint expects {}-dimensional input, data has {d_in}",
                    model.d_in
                )));
            }
            if args.dout.is_some_and(|d| d != model.d_out) {
                return Err(Failure::usage(format!("--dout disagrees with checkpoint d_out {}", model.d_out)));
            }
            return Ok(Features::Model(Box::new(model)));
        }
        if args.pca {
            let train = read_input(args.train.as_deref().expect("clap enforces --train"))?;
            if train.dim() != d_in {
                return Err(Failure::data(format!("PCA training data has dimension {}, expected {d_in}", train.dim())));
            }
            return Ok(Features::Pca(pca_fit(&train, args.dout.expect("clap enforces --dout"))?));
        }
        if args.lsh {
            let bits = args.bits.expect("clap enforces --bits");
            if bits == 0 {
                return Err(Failure::usage("--bits must be positive"));
            }
            return Ok(Features::Lsh(ProjectionBasis::lsh(d_in, bits, args.lsh_seed)));
        }
        Ok(Features::Raw)
    }

    fn describe(&self) -> &'static str {
        match self {
            Features::Model(_) => "catalyzer",
            Features::Pca(_) => "pca",
            Features::Lsh(_) => "lsh",
            Features::Raw => "raw",
        }
    }

    /// Real-valued features for lattice coding and float-space analysis.
    fn dense(&self, x: &VectorSet) -> CliResult<VectorSet> {
        Ok(match self {
            Features::Model(m) => m.transform(x)?,
            Features::Pca(basis) => l2_normalize(&basis.project(x)?)?,
            Features::Raw => x.clone(),
            Features::Lsh(_) => return Err(Failure::usage("--lsh only produces binary codes")),
        })
    }

    fn binary(&self, x: &VectorSet) -> CliResult<BinaryCodes> {
        Ok(match self {
            Features::Model(m) => binarize_all(&m.transform(x)?, &ProjectionBasis::identity(m.d_out))?,
            Features::Pca(basis) | Features::Lsh(basis) => binarize_all(x, basis)?,
            Features::Raw => binarize_all(x, &ProjectionBasis::identity(x.dim()))?,
        })
    }
}

fn cmd_transform(a: TransformArgs) -> CliResult {
    require_parent(&a.out)?;
    let input = read_input(&a.input)?;
    let features = Features::load(&a.features, input.dim())?;
    write_fvecs(&a.out, &features.dense(&input)?)?;
    Ok(())
}

fn cmd_encode(a: EncodeArgs) -> CliResult {
    let codec = if a.binary { Codec::Binary } else { a.codec };
    let r2 = match (a.radius, a.r2) {
        (Some(r), _) => Some(radius_to_r2(r)?),
        (None, r2) => r2,
    };
    match (codec, r2) {
        (Codec::Binary, Some(_)) => return Err(Failure::usage("--r2/--radius only apply to lattice codes")),
        (Codec::Lattice, None) => return Err(Failure::usage("lattice codes need --r2 or --radius")),
        _ => {}
    }
    if codec == Codec::Lattice && a.features.lsh {
        return Err(Failure::usage("--lsh only produces binary codes"));
    }
    require_parent(&a.out)?;
    let input = read_input(&a.input)?;
    let features = Features::load(&a.features, input.dim())?;

    let start = Instant::now();
    let (bytes, bits) = match codec {
        Codec::Lattice => {
            let x = features.dense(&input)?;
            let codebook = LatticeCodebook::new(x.dim(), r2.expect("checked above"))?;
            let codes = codebook.encode_all(&x)?;
            (LatticeCodeFile::new(&codebook, codes).to_bytes(), codebook.bits() as usize)
        }
        Codec::Binary => {
            let codes = features.binary(&input)?;
            (codes.to_bytes(), codes.bits())
        }
    };
    let seconds = start.elapsed().as_secs_f64();
    fs::write(&a.out, bytes)?;
    println!("bits_per_vector\t{bits}");
    println!("vectors\t{}", input.len());
    eprintln!(
        "encoded {} vectors in {seconds:.3} s ({:.0} vectors/s)",
        input.len(),
        input.len() as f64 / seconds.max(1e-9)
    );
    Ok(())
}

enum Codes {
    Lattice(LatticeCodeFile),
    Binary(BinaryCodes),
}

impl Codes {
    fn read(path: &Path) -> CliResult<Codes> {
        require_file(path)?;
        let bytes = fs::read(path)?;
        if bytes.starts_with(b"SPLAT") {
            Ok(Codes::Lattice(LatticeCodeFile::from_bytes(&bytes)?))
        } else if bytes.starts_with(b"SPBIN") {
            Ok(Codes::Binary(BinaryCodes::from_bytes(&bytes)?))
        } else {
            Err(Failure::data(format!("{}: not a lattice or binary code file", path.display())))
        }
    }

    fn len(&self) -> usize {
        match self {
            Codes::Lattice(f) => f.codes.len(),
            Codes::Binary(b) => b.len(),
        }
    }

    fn describe(&self) -> String {
        match self {
            Codes::Lattice(f) => format!("lattice d={} r2={}", f.d, f.r2),
            Codes::Binary(b) => format!("binary m={}", b.bits()),
        }
    }

    fn bits(&self) -> u32 {
        match self {
            Codes::Lattice(f) => u32::from(f.bits),
            Codes::Binary(b) => b.bits() as u32,
        }
    }

    fn search(&self, features: &Features, queries: &VectorSet, k: usize) -> CliResult<Vec<Vec<usize>>> {
        if k == 0 || k > self.len() {
            return Err(Failure::usage(format!("k={k} must be in 1..={}", self.len())));
        }
        match self {
            Codes::Lattice(file) => {
                let q = features.dense(queries)?;
                if q.dim() != file.d as usize {
                    return Err(Failure::data(format!(
                        "query features have dimension {}, codes have {}",
                        q.dim(),
                        file.d
                    )));
                }
                Ok(scan_lattice(&q, &file.codes, &file.codebook()?, k)?)
            }
            Codes::Binary(base) => {
                let q = features.binary(queries)?;
                if q.bits() != base.bits() {
                    return Err(Failure::data(format!("query codes have {} bits, base has {}", q.bits(), base.bits())));
                }
                Ok(hamming_search(&q, base, k)?)
            }
        }
    }
}

fn cmd_search(a: SearchArgs) -> CliResult {
    require_parent(&a.out)?;
    let codes = Codes::read(&a.codes)?;
    let queries = read_input(&a.queries)?;
    let features = Features::load(&a.features, queries.dim())?;
    let start = Instant::now();
    let results = codes.search(&features, &queries, a.k)?;
    eprintln!("searched {} queries in {:.3} s", queries.len(), start.elapsed().as_secs_f64());
    GroundTruth::new(a.k, results.concat())?.write(&a.out)?;
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> CliResult {
    let gt_path = a.gt.as_deref().ok_or_else(|| Failure::data("recall needs ground truth (--gt)"))?;
    if a.k.is_empty() || a.k.contains(&0) {
        return Err(Failure::usage("--k needs positive values"));
    }
    for out in a.out.iter().chain(&a.json) {
        require_parent(out)?;
    }
    let codes = Codes::read(&a.codes)?;
    let queries = read_input(&a.queries)?;
    require_file(gt_path)?;
    let gt = GroundTruth::read(gt_path)?;
    if gt.num_queries() != queries.len() {
        return Err(Failure::data(format!(
            "ground truth covers {} queries, query file has {}",
            gt.num_queries(),
            queries.len()
        )));
    }
    let features = Features::load(&a.features, queries.dim())?;
    let max_k = *a.k.iter().max().expect("not empty");
    let start = Instant::now();
    let results = codes.search(&features, &queries, max_k)?;
    let report = EvalReport {
        recall: a.k.iter().map(|&k| (k, recall_at_k(&results, &gt, k))).collect(),
        d_out: match &codes {
            Codes::Lattice(f) => f.d as usize,
            Codes::Binary(b) => b.bits(),
        },
        lambda: a.lambda,
        codec: format!("{} {}", features.describe(), codes.describe()),
        bits_per_vector: codes.bits(),
        encode_seconds: None,
        scan_seconds: Some(start.elapsed().as_secs_f64()),
    };
    let tsv = report.to_tsv();
    match &a.out {
        Some(path) => fs::write(path, &tsv)?,
        None => print!("{tsv}"),
    }
    if let Some(path) = &a.json {
        let json = serde_json::to_string_pretty(&report).map_err(|e| Failure::data(e.to_string()))?;
        fs::write(path, json + "\n")?;
    }
    if let Some(s) = report.scan_seconds {
        eprintln!("scan took {s:.3} s");
    }
    Ok(())
}

#[derive(Serialize)]
struct AnalysisSummary {
    features: String,
    n_base: usize,
    dim: usize,
    uniformity: UniformitySummary,
    epsilon_at_80: Option<EpsilonPoint>,
}

#[derive(Serialize)]
struct UniformitySummary {
    probability: f64,
    pairs: usize,
    k_far: usize,
}

impl From<&UniformityStats> for UniformitySummary {
    fn from(u: &UniformityStats) -> Self {
        UniformitySummary { probability: u.probability, pairs: u.pairs, k_far: u.k_far }
    }
}

fn cmd_analyze(a: AnalyzeArgs) -> CliResult {
    if !a.out_dir.is_dir() {
        return Err(Failure::data(format!("{}: output directory does not exist", a.out_dir.display())));
    }
    let base_raw = read_input(&a.base)?;
    let features = Features::load(&a.features, base_raw.dim())?;
    let base = features.dense(&base_raw)?;
    let queries = match &a.queries {
        Some(path) => {
            let q = read_input(path)?;
            if q.dim() != base_raw.dim() {
                return Err(Failure::data("queries and base have different dimensions"));
            }
            Some(features.dense(&q)?)
        }
        None => None,
    };

    let planes = angular_histogram(&base, a.planes, a.bins, a.seed)?;
    let mut tsv = String::from("plane\tbin\tcount\n");
    for (p, counts) in planes.iter().enumerate() {
        for (b, c) in counts.iter().enumerate() {
            writeln!(tsv, "{p}\t{b}\t{c}").unwrap();
        }
    }
    fs::write(a.out_dir.join("angular_histogram.tsv"), tsv)?;

    let uniformity = match &queries {
        Some(q) => uniformity_overlap_queries(q, &base, a.k_far, a.pairs, a.seed)?,
        None => uniformity_overlap(&base, a.k_far, a.pairs, a.seed)?,
    };
    let (nn1, nn_far) = match &queries {
        Some(q) => neighbor_distances(q, &base, a.k_far, false)?,
        None => neighbor_distances(&base, &base, a.k_far, true)?,
    };
    let hi = nn_far.iter().chain(&nn1).copied().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let (h1, hk) = (histogram(&nn1, 50, 0.0, hi), histogram(&nn_far, 50, 0.0, hi));
    let mut tsv = format!("bin_start\tnn1\tnn{}\n", a.k_far);
    for b in 0..50 {
        writeln!(tsv, "{:.6}\t{}\t{}", hi * b as f64 / 50.0, h1[b], hk[b]).unwrap();
    }
    fs::write(a.out_dir.join("neighbor_distances.tsv"), tsv)?;

    let mut epsilon_at_80 = None;
    if let (Some(q), Some(gt_path)) = (&queries, &a.gt) {
        require_file(gt_path)?;
        let gt = GroundTruth::read(gt_path)?;
        let mut tsv = String::from("target_recall\tepsilon\tmean_count\trecall\n");
        for step in 1..=20 {
            let target = step as f64 / 20.0;
            let p = results_at_recall(q, &base, &gt, target)?;
            writeln!(tsv, "{target:.2}\t{:.6}\t{:.3}\t{:.4}", p.epsilon, p.mean_count, p.recall).unwrap();
            if step == 16 {
                epsilon_at_80 = Some(p);
            }
        }
        fs::write(a.out_dir.join("epsilon_curve.tsv"), tsv)?;
    }

    let summary = AnalysisSummary {
        features: features.describe().to_string(),
        n_base: base.len(),
        dim: base.dim(),
        uniformity: (&uniformity).into(),
        epsilon_at_80,
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Failure::data(e.to_string()))?;
    fs::write(a.out_dir.join("summary.json"), json + "\n")?;
    println!("uniformity_overlap\t{:.6}", uniformity.probability);
    if let Some(p) = epsilon_at_80 {
        println!("epsilon_at_80\t{:.6}\tmean_count\t{:.3}", p.epsilon, p.mean_count);
    }
    Ok(())
}

fn cmd_gt(a: GtArgs) -> CliResult {
    require_parent(&a.out)?;
    let base = read_input(&a.base)?;
    let queries = read_input(&a.queries)?;
    if base.dim() != queries.dim() {
        return Err(Failure::data(format!("base has dimension {}, queries have {}", base.dim(), queries.dim())));
    }
    brute_force_knn(&base, &queries, a.k)?.write(&a.out)?;
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> CliResult {
    if !a.out_dir.is_dir() {
        return Err(Failure::data(format!("{}: output directory does not exist", a.out_dir.display())));
    }
    let spec = MixtureSpec {
        dim: a.dim,
        components: a.components,
        spread: a.spread,
        intrinsic_dim: a.rank,
        noise: a.noise,
        normalize: true,
    };
    let b = benchmark(spec, a.n_train, a.n_base, a.n_queries, a.seed)?;
    write_fvecs(a.out_dir.join("train.fvecs"), &b.train)?;
    write_fvecs(a.out_dir.join("base.fvecs"), &b.base)?;
    write_fvecs(a.out_dir.join("queries.fvecs"), &b.queries)?;
    if a.gt_k > 0 {
        brute_force_knn(&b.base, &b.queries, a.gt_k.min(b.base.len()))?.write(a.out_dir.join("gt.ivecs"))?;
    }
    Ok(())
}
