use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use edgepart::data::{load_ratings, save_edge_list, SyntheticSpec, DEFAULT_RATING_THRESHOLD};
use edgepart::experiment::{mean_and_se, run_experiment, ExperimentConfig};
use edgepart::options::InjectedFault;
use edgepart::oracle::{run_suite, write_report_csv, write_report_text, Suite, SuiteOptions};

/// Default output directory for `run` and `oracle`.
const OUTPUT_DIR_ENV: &str = "EDGEPART_OUTPUT_DIR";

#[derive(Parser)]
#[command(
    name = "edgepart",
    version,
    about = "Edge partition models for binary matrices"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cross-validated runs of one model over one or more truncation levels.
    Run(RunArgs),
    /// Verification suites; exits non-zero if any check fails.
    Oracle(OracleArgs),
    /// Writes a synthetic block matrix as an edge list plus its metadata.
    Gen(GenArgs),
    /// Converts `user item rating` lines into a binary edge list.
    Convert(ConvertArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Edge-list file to model.
    dataset: Option<PathBuf>,
    /// Synthetic data instead of a file, e.g. `five-blocks;seed=2` or
    /// `40x40;0-20:0-20;15-40:10-40;noise=0.01`.
    #[arg(long, conflicts_with = "dataset")]
    synthetic: Option<String>,
    /// `key = value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    /// Truncation levels, comma separated.
    #[arg(long = "T", value_name = "T")]
    truncations: Option<String>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    retain: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
    /// Extra `key=value` settings, as in the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    DoubledC0Rate,
    HypersLast,
}

impl From<FaultArg> for InjectedFault {
    fn from(f: FaultArg) -> Self {
        match f {
            FaultArg::DoubledC0Rate => InjectedFault::DoubledC0Rate,
            FaultArg::HypersLast => InjectedFault::HypersLast,
        }
    }
}

#[derive(Args)]
struct OracleArgs {
    /// Suites to run: expectations, marginals, moments, geweke. All by
    /// default.
    suites: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Monte Carlo draws for the expectation, marginal and moment checks.
    #[arg(long)]
    draws: Option<u64>,
    #[arg(long)]
    geweke_rounds: Option<usize>,
    /// Corrupts the samplers on purpose; the geweke suite should then fail.
    #[arg(long, value_enum)]
    fault: Option<FaultArg>,
}

#[derive(Args)]
struct GenArgs {
    /// Block layout, e.g. `five-blocks;seed=3`.
    #[arg(long, default_value = "five-blocks")]
    synthetic: String,
    /// Edge-list output file.
    #[arg(long)]
    out: PathBuf,
    /// Metadata output file; defaults to the edge list path plus `.meta`.
    #[arg(long)]
    meta: Option<PathBuf>,
}

#[derive(Args)]
struct ConvertArgs {
    /// Ratings file with `user item rating` lines.
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Ratings strictly above this value become ones.
    #[arg(long, default_value_t = DEFAULT_RATING_THRESHOLD)]
    threshold: f64,
}

fn default_out(flag: Option<PathBuf>, fallback: &str) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(fallback))
}

fn build_config(args: RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
        cfg.out_dir = PathBuf::from(dir);
    }
    if let Some(path) = &args.config {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        cfg.apply_text(&text)
            .with_context(|| format!("in {}", path.display()))?;
    }
    let mut set = |key: &str, value: String| cfg.apply(key, &value);
    if let Some(p) = args.dataset {
        set("dataset", p.display().to_string())?;
    }
    if let Some(s) = args.synthetic {
        set("synthetic", s)?;
    }
    if let Some(v) = args.model {
        set("model", v)?;
    }
    if let Some(v) = args.truncations {
        set("T", v)?;
    }
    if let Some(v) = args.iters {
        set("iterations", v.to_string())?;
    }
    if let Some(v) = args.retain {
        set("retain", v.to_string())?;
    }
    if let Some(v) = args.folds {
        set("folds", v.to_string())?;
    }
    if let Some(v) = args.seed {
        set("seed", v.to_string())?;
    }
    if let Some(v) = args.out {
        set("out", v.display().to_string())?;
    }
    if let Some(v) = args.jobs {
        set("jobs", v.to_string())?;
    }
    for kv in args.sets {
        let (key, value) = kv
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
        set(key, value.to_string())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: RunArgs) -> Result<ExitCode> {
    let cfg = build_config(args)?;
    let outcome = run_experiment(&cfg)?;
    for t in cfg.levels() {
        let reports: Vec<_> = outcome.runs_at(t).map(|r| &r.report).collect();
        let stat = |f: fn(&edgepart::eval::EvalReport) -> f64| {
            mean_and_se(&reports.iter().map(|r| f(r)).collect::<Vec<_>>())
        };
        let (k, k_se) = stat(|r| r.mean_active_atoms);
        let (tdll, tdll_se) = stat(|r| r.tdll);
        let (auc, auc_se) = stat(|r| r.tdauc_pr);
        let level = t.map_or(String::new(), |t| format!(" T={t}"));
        println!(
            "{}{level}: K {k:.2} ({k_se:.2})  TDLL {tdll:.4} ({tdll_se:.4})  TDAUC-PR {auc:.4} ({auc_se:.4})",
            cfg.model
        );
    }
    println!("wrote {}", cfg.out_dir.display());
    Ok(ExitCode::SUCCESS)
}

fn oracle(args: OracleArgs) -> Result<ExitCode> {
    let suites: Vec<Suite> = if args.suites.is_empty() {
        Suite::ALL.to_vec()
    } else {
        args.suites
            .iter()
            .map(|s| s.parse::<Suite>())
            .collect::<edgepart::Result<_>>()?
    };
    let mut opts = SuiteOptions {
        seed: args.seed,
        fault: args.fault.map(Into::into),
        ..SuiteOptions::default()
    };
    if let Some(n) = args.draws {
        opts.expectation_draws = n;
        opts.marginal_draws = n;
        opts.moment_draws = n;
    }
    if let Some(r) = args.geweke_rounds {
        opts.geweke_rounds = r;
    }
    let mut lines = Vec::new();
    for suite in suites {
        eprintln!("running {}", suite.name());
        lines.extend(run_suite(suite, &opts)?);
    }
    let out = default_out(args.out, "edgepart-oracle");
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut csv = BufWriter::new(File::create(out.join("oracle_report.csv"))?);
    write_report_csv(&lines, &mut csv)?;
    csv.flush()?;
    let mut text = BufWriter::new(File::create(out.join("oracle_report.txt"))?);
    write_report_text(&lines, &mut text)?;
    text.flush()?;
    write_report_text(&lines, io::stdout().lock())?;
    if lines.iter().all(|l| l.passed) {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::FAILURE)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn gen(args: GenArgs) -> Result<ExitCode> {
    let spec: SyntheticSpec = args.synthetic.parse()?;
    let data = spec.generate()?;
    let mut edges = create(&args.out)?;
    save_edge_list(&data.matrix, &mut edges)?;
    edges.flush()?;
    let meta_path = args.meta.unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".meta");
        PathBuf::from(p)
    });
    let mut meta = create(&meta_path)?;
    writeln!(meta, "spec={spec}")?;
    data.write_metadata(&mut meta)?;
    meta.flush()?;
    println!(
        "{}x{} matrix, {} ones, {} blocks",
        data.matrix.n_rows(),
        data.matrix.n_cols(),
        data.matrix.n_ones(),
        data.n_classes()
    );
    Ok(ExitCode::SUCCESS)
}

fn convert(args: ConvertArgs) -> Result<ExitCode> {
    if !args.threshold.is_finite() {
        bail!("threshold must be finite");
    }
    let file =
        File::open(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let matrix = load_ratings(BufReader::new(file), args.threshold)?;
    let mut out = create(&args.out)?;
    save_edge_list(&matrix, &mut out)?;
    out.flush()?;
    println!(
        "{}x{} matrix, {} ones",
        matrix.n_rows(),
        matrix.n_cols(),
        matrix.n_ones()
    );
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Oracle(a) => oracle(a),
        Command::Gen(a) => gen(a),
        Command::Convert(a) => convert(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
