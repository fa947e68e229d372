//! Cross-validated experiment runs: model by truncation sweeps, per-fold
//! chains, traces and summaries.
//!
//! A config is a flat `key = value` file. Blank lines and text after `#`
//! are ignored. Keys:
//!
//! ```text
//! dataset = path/to/edges.txt     # or: synthetic = five-blocks;seed=3
//! model = depm                    # epm, cepm, depm or idepm
//! T = 2,4,8                       # ignored for idepm
//! iterations = 600
//! retain = 100
//! folds = 10
//! seed = 1
//! e0 = 0.01
//! f0 = 0.01
//! C1 = 90                         # cepm only
//! C2 = 90                         # cepm only
//! jobs = 1
//! tdll_mode = mean-prob
//! count_step = birth-death        # idepm only
//! out = results
//! ```

use std::collections::VecDeque;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::data::{
    load_edge_list, make_cv_folds, HoldoutSplit, SparseBinaryMatrix, SyntheticSpec, TestEntry,
};
use crate::distributions::RngHandle;
use crate::error::{Error, Result};
use crate::eval::{
    mean_log_likelihood, pr_auc, tdll_with_mode, EvalReport, PredictiveEnsemble, TdllMode,
    TraceRow, TRACE_HEADER,
};
use crate::idepm::{CollapsedState, CountStep, IdepmHypers};
use crate::truncated::{
    FactorPrior, Hyperparameters, TruncatedState, TruncatedVariant, DEFAULT_E0, DEFAULT_F0,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Epm,
    Cepm,
    Depm,
    Idepm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Epm,
        ModelKind::Cepm,
        ModelKind::Depm,
        ModelKind::Idepm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Epm => "epm",
            ModelKind::Cepm => "cepm",
            ModelKind::Depm => "depm",
            ModelKind::Idepm => "idepm",
        }
    }

    /// The truncated variant, or `None` for the IDEPM.
    pub fn truncated_variant(self) -> Option<TruncatedVariant> {
        match self {
            ModelKind::Epm => Some(TruncatedVariant::Epm),
            ModelKind::Cepm => Some(TruncatedVariant::Cepm),
            ModelKind::Depm => Some(TruncatedVariant::Depm),
            ModelKind::Idepm => None,
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown model `{s}`")))
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSource {
    /// Edge-list file.
    Path(PathBuf),
    Synthetic(SyntheticSpec),
}

impl DatasetSource {
    pub fn load(&self) -> Result<SparseBinaryMatrix> {
        match self {
            DatasetSource::Path(path) => {
                let file = File::open(path).map_err(|e| {
                    Error::Config(format!("cannot read dataset {}: {e}", path.display()))
                })?;
                load_edge_list(BufReader::new(file))
            }
            DatasetSource::Synthetic(spec) => Ok(spec.generate()?.matrix),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub model: ModelKind,
    pub truncations: Vec<usize>,
    pub iterations: usize,
    pub retained: usize,
    pub folds: usize,
    pub seed: u64,
    pub e0: f64,
    pub f0: f64,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub jobs: usize,
    pub tdll_mode: TdllMode,
    pub count_step: CountStep,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSource::Synthetic(SyntheticSpec::five_blocks(1)),
            model: ModelKind::Idepm,
            truncations: vec![128],
            iterations: 600,
            retained: 100,
            folds: 10,
            seed: 1,
            e0: DEFAULT_E0,
            f0: DEFAULT_F0,
            c1: None,
            c2: None,
            jobs: 1,
            tdll_mode: TdllMode::default(),
            count_step: CountStep::default(),
            out_dir: PathBuf::from("edgepart-out"),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key} = {value:?}: {e}")))
}

impl ExperimentConfig {
    /// Sets one key. Shared by the file parser and command-line overrides.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "dataset" => self.dataset = DatasetSource::Path(PathBuf::from(value)),
            "synthetic" => self.dataset = DatasetSource::Synthetic(value.parse()?),
            "model" => self.model = value.parse()?,
            "T" => {
                self.truncations = value
                    .split(',')
                    .map(|t| parse_value("T", t.trim()))
                    .collect::<Result<_>>()?
            }
            "iterations" => self.iterations = parse_value(key, value)?,
            "retain" => self.retained = parse_value(key, value)?,
            "folds" => self.folds = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "e0" => self.e0 = parse_value(key, value)?,
            "f0" => self.f0 = parse_value(key, value)?,
            "C1" => self.c1 = Some(parse_value(key, value)?),
            "C2" => self.c2 = Some(parse_value(key, value)?),
            "jobs" => self.jobs = parse_value(key, value)?,
            "tdll_mode" => self.tdll_mode = value.parse()?,
            "count_step" => self.count_step = value.parse()?,
            "out" => self.out_dir = PathBuf::from(value),
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines on top of the defaults and validates.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: n + 1,
                message: format!("expected `key = value`, got {line:?}"),
            })?;
            self.apply(key, value)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.iterations == 0 {
            return fail("iterations must be positive".into());
        }
        if self.retained == 0 || self.retained > self.iterations {
            return fail(format!(
                "retain must lie in 1..={}, got {}",
                self.iterations, self.retained
            ));
        }
        if self.folds < 2 {
            return fail(format!("need at least 2 folds, got {}", self.folds));
        }
        if self.jobs == 0 {
            return fail("jobs must be positive".into());
        }
        if self.model != ModelKind::Idepm
            && (self.truncations.is_empty() || self.truncations.contains(&0))
        {
            return fail("truncation levels must be positive".into());
        }
        for (name, v) in [("e0", self.e0), ("f0", self.f0)] {
            if !(v.is_finite() && v > 0.0) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [("C1", self.c1), ("C2", self.c2)] {
            match v {
                Some(_) if self.model != ModelKind::Cepm => {
                    return fail(format!("{name} only applies to cepm"));
                }
                Some(c) if !(c.is_finite() && c > 0.0) => {
                    return fail(format!("{name} must be positive, got {c}"));
                }
                _ => {}
            }
        }
        if let DatasetSource::Synthetic(spec) = &self.dataset {
            spec.validate()?;
        }
        Ok(())
    }

    /// The truncation levels this config runs; a single `None` for the
    /// IDEPM.
    pub fn levels(&self) -> Vec<Option<usize>> {
        if self.model == ModelKind::Idepm {
            vec![None]
        } else {
            self.truncations.iter().copied().map(Some).collect()
        }
    }

    /// Starting hyperparameters for a truncated chain on an `I x J` matrix.
    pub fn truncated_hypers(
        &self,
        variant: TruncatedVariant,
        n_rows: usize,
        n_cols: usize,
    ) -> Hyperparameters {
        let mut hypers = Hyperparameters::for_variant(variant, n_rows, n_cols);
        hypers.e0 = self.e0;
        hypers.f0 = self.f0;
        if let FactorPrior::Constrained { c1, c2, .. } = &mut hypers.factors {
            *c1 = self.c1.unwrap_or(*c1);
            *c2 = self.c2.unwrap_or(*c2);
        }
        hypers
    }

    pub fn idepm_hypers(&self) -> IdepmHypers {
        IdepmHypers {
            e0: self.e0,
            f0: self.f0,
            ..IdepmHypers::default()
        }
    }
}

/// Canonical form: every key in a fixed order, optional keys only when set.
impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.dataset {
            DatasetSource::Path(p) => writeln!(f, "dataset = {}", p.display())?,
            DatasetSource::Synthetic(spec) => writeln!(f, "synthetic = {spec}")?,
        }
        writeln!(f, "model = {}", self.model)?;
        let ts: Vec<String> = self.truncations.iter().map(|t| t.to_string()).collect();
        writeln!(f, "T = {}", ts.join(","))?;
        writeln!(f, "iterations = {}", self.iterations)?;
        writeln!(f, "retain = {}", self.retained)?;
        writeln!(f, "folds = {}", self.folds)?;
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "e0 = {}", self.e0)?;
        writeln!(f, "f0 = {}", self.f0)?;
        if let Some(c) = self.c1 {
            writeln!(f, "C1 = {c}")?;
        }
        if let Some(c) = self.c2 {
            writeln!(f, "C2 = {c}")?;
        }
        writeln!(f, "jobs = {}", self.jobs)?;
        writeln!(f, "tdll_mode = {}", self.tdll_mode.name())?;
        writeln!(f, "count_step = {}", self.count_step.name())?;
        writeln!(f, "out = {}", self.out_dir.display())
    }
}

/// One chain of any model family.
#[derive(Clone, Debug)]
pub enum Chain {
    Truncated(TruncatedState),
    Collapsed(CollapsedState),
}

impl Chain {
    /// Starts a chain for `cfg.model` at truncation `truncation` (ignored
    /// for the IDEPM).
    pub fn start(
        cfg: &ExperimentConfig,
        truncation: Option<usize>,
        x: &SparseBinaryMatrix,
        rng: RngHandle,
    ) -> Result<Self> {
        match cfg.model.truncated_variant() {
            Some(variant) => {
                let t = truncation.ok_or_else(|| {
                    Error::Config(format!("{} needs a truncation level", cfg.model))
                })?;
                let hypers = cfg.truncated_hypers(variant, x.n_rows(), x.n_cols());
                Ok(Chain::Truncated(TruncatedState::init(x, t, hypers, rng)?))
            }
            None => Ok(Chain::Collapsed(
                CollapsedState::init(x, cfg.idepm_hypers(), rng)?.with_count_step(cfg.count_step),
            )),
        }
    }

    pub fn sweep(&mut self, x: &SparseBinaryMatrix) -> Result<()> {
        match self {
            Chain::Truncated(s) => s.gibbs_sweep(x),
            Chain::Collapsed(s) => s.collapsed_sweep(x),
        }
    }

    /// Atoms with at least one latent count.
    pub fn active_atoms(&self) -> usize {
        match self {
            Chain::Truncated(s) => s.count_active_atoms(),
            Chain::Collapsed(s) => s.n_active(),
        }
    }

    pub fn link_probability(&self, row: usize, col: usize) -> f64 {
        match self {
            Chain::Truncated(s) => s.link_probability(row, col),
            Chain::Collapsed(s) => s.link_probability(row, col),
        }
    }
}

/// Runs one chain on `train` for `cfg.iterations` sweeps. With test
/// entries, every iteration records its own TDLL and that of the ensemble
/// of the last `cfg.retained` samples; the final TDLL and TDAUC-PR come from
/// the last `cfg.retained` samples. Without test entries these are NaN.
/// Elapsed time counts sweeps only.
pub fn run_chain(
    cfg: &ExperimentConfig,
    truncation: Option<usize>,
    train: &SparseBinaryMatrix,
    test: &[TestEntry],
    rng: RngHandle,
) -> Result<EvalReport> {
    let mut chain = Chain::start(cfg, truncation, train, rng)?;
    let cells: Vec<(usize, usize)> = test.iter().map(|e| (e.row, e.col)).collect();
    let labels: Vec<bool> = test.iter().map(|e| e.value).collect();
    let burn_in = cfg.iterations - cfg.retained;

    let mut window: VecDeque<(Vec<f64>, f64)> = VecDeque::with_capacity(cfg.retained + 1);
    let mut window_sum = vec![0.0; cells.len()];
    let mut window_tdll = 0.0;
    let mut mean_probs = vec![0.0; cells.len()];
    let mut ensemble = PredictiveEnsemble::new(cells.clone());
    let mut k_total = 0usize;
    let mut elapsed = 0.0;
    let mut trace = Vec::with_capacity(cfg.iterations);

    for it in 0..cfg.iterations {
        let start = Instant::now();
        chain.sweep(train)?;
        elapsed += start.elapsed().as_secs_f64();
        let k = chain.active_atoms();
        let (tdll, tdll_running) = if cells.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let probs: Vec<f64> = cells
                .iter()
                .map(|&(i, j)| chain.link_probability(i, j))
                .collect();
            let own = mean_log_likelihood(&probs, &labels);
            for (s, p) in window_sum.iter_mut().zip(&probs) {
                *s += p;
            }
            window_tdll += own;
            if it >= burn_in {
                ensemble.push_probabilities(probs.clone())?;
            }
            window.push_back((probs, own));
            if window.len() > cfg.retained {
                let (old, old_tdll) = window.pop_front().expect("non-empty window");
                for (s, p) in window_sum.iter_mut().zip(&old) {
                    *s -= p;
                }
                window_tdll -= old_tdll;
            }
            let n = window.len() as f64;
            let running = match cfg.tdll_mode {
                TdllMode::MeanProbability => {
                    for (m, s) in mean_probs.iter_mut().zip(&window_sum) {
                        *m = (s / n).clamp(0.0, 1.0);
                    }
                    mean_log_likelihood(&mean_probs, &labels)
                }
                TdllMode::MeanLog => window_tdll / n,
            };
            (own, running)
        };
        if it >= burn_in {
            k_total += k;
        }
        trace.push(TraceRow {
            iteration: it + 1,
            elapsed_s: elapsed,
            active_atoms: k,
            tdll,
            tdll_running,
        });
    }

    let (tdll, tdauc_pr) = if cells.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let tdll = tdll_with_mode(&ensemble, &labels, cfg.tdll_mode)?;
        let auc = if labels.contains(&true) {
            pr_auc(&ensemble.mean_probabilities(), &labels)?
        } else {
            f64::NAN
        };
        (tdll, auc)
    };
    Ok(EvalReport {
        mean_active_atoms: k_total as f64 / cfg.retained as f64,
        tdll,
        tdauc_pr,
        trace,
    })
}

/// RNG stream of the chain for truncation `t` on fold `fold`. Keyed by the
/// truncation value so a level gives the same chain whatever else is swept.
pub fn chain_stream(truncation: Option<usize>, fold: usize) -> u64 {
    ((truncation.unwrap_or(0) as u64 + 1) << 32) | fold as u64
}

#[derive(Clone, Debug)]
pub struct FoldRun {
    pub truncation: Option<usize>,
    pub fold: usize,
    pub report: EvalReport,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    /// Ordered by truncation level, then fold.
    pub runs: Vec<FoldRun>,
}

impl ExperimentOutcome {
    pub fn runs_at(&self, truncation: Option<usize>) -> impl Iterator<Item = &FoldRun> {
        self.runs.iter().filter(move |r| r.truncation == truncation)
    }
}

/// Splits the data into folds and runs one chain per truncation level and
/// fold, at most `cfg.jobs` at a time. Results are in level-then-fold order
/// regardless of scheduling.
pub fn run_folds(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let matrix = cfg.dataset.load()?;
    let folds = make_cv_folds(&matrix, cfg.folds, &mut RngHandle::with_stream(cfg.seed, 0))?;
    let tasks: Vec<(Option<usize>, usize)> = cfg
        .levels()
        .into_iter()
        .flat_map(|t| (0..folds.len()).map(move |f| (t, f)))
        .collect();
    let run = |&(t, f): &(Option<usize>, usize)| -> Result<FoldRun> {
        let split: &HoldoutSplit = &folds[f];
        let rng = RngHandle::with_stream(cfg.seed, chain_stream(t, f));
        let report = run_chain(cfg, t, &split.train_view, &split.test_entries, rng)?;
        Ok(FoldRun {
            truncation: t,
            fold: f,
            report,
        })
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let runs = pool.install(|| tasks.par_iter().map(run).collect::<Result<Vec<_>>>())?;
    Ok(ExperimentOutcome {
        config: cfg.clone(),
        runs,
    })
}

/// Runs the experiment and writes its outputs under `cfg.out_dir`:
///
/// - `config.txt`, the canonical config;
/// - `trace_T{T}.csv` (or `trace_idepm.csv`), the fold-averaged trace;
/// - `folds/trace_T{T}_fold{f}.csv`, the per-fold traces;
/// - `summary.csv`, one row per level and fold plus mean and standard error
///   rows per level.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let outcome = run_folds(cfg)?;
    write_outputs(&outcome, &cfg.out_dir)?;
    Ok(outcome)
}

fn level_tag(truncation: Option<usize>) -> String {
    match truncation {
        Some(t) => format!("T{t}"),
        None => "idepm".into(),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

pub const SUMMARY_HEADER: &str = "model,T,fold,mean_k,tdll,tdauc_pr,elapsed_s";

pub fn write_outputs(outcome: &ExperimentOutcome, dir: &Path) -> Result<()> {
    let cfg = &outcome.config;
    fs::create_dir_all(dir.join("folds"))?;
    fs::write(dir.join("config.txt"), cfg.to_string())?;
    let mut summary = create(&dir.join("summary.csv"))?;
    writeln!(summary, "{SUMMARY_HEADER}")?;
    for t in cfg.levels() {
        let tag = level_tag(t);
        let t_field = t.map_or(String::new(), |t| t.to_string());
        let runs: Vec<&FoldRun> = outcome.runs_at(t).collect();
        for run in &runs {
            let mut sink = create(
                &dir.join("folds")
                    .join(format!("trace_{tag}_fold{}.csv", run.fold)),
            )?;
            run.report.write_trace_csv(&mut sink)?;
            sink.flush()?;
            let r = &run.report;
            let elapsed = r.trace.last().map_or(0.0, |row| row.elapsed_s);
            writeln!(
                summary,
                "{},{t_field},{},{},{},{},{elapsed:.6}",
                cfg.model, run.fold, r.mean_active_atoms, r.tdll, r.tdauc_pr
            )?;
        }
        let reports: Vec<&EvalReport> = runs.iter().map(|r| &r.report).collect();
        let mut sink = create(&dir.join(format!("trace_{tag}.csv")))?;
        write_mean_trace(&reports, &mut sink)?;
        sink.flush()?;
        let column =
            |f: fn(&EvalReport) -> f64| -> Vec<f64> { reports.iter().map(|r| f(r)).collect() };
        let k = mean_and_se(&column(|r| r.mean_active_atoms));
        let tdll = mean_and_se(&column(|r| r.tdll));
        let auc = mean_and_se(&column(|r| r.tdauc_pr));
        let time = mean_and_se(&column(|r| r.trace.last().map_or(0.0, |row| row.elapsed_s)));
        writeln!(
            summary,
            "{},{t_field},mean,{},{},{},{:.6}",
            cfg.model, k.0, tdll.0, auc.0, time.0
        )?;
        writeln!(
            summary,
            "{},{t_field},se,{},{},{},{:.6}",
            cfg.model, k.1, tdll.1, auc.1, time.1
        )?;
    }
    summary.flush()?;
    Ok(())
}

/// Sample mean and its standard error.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Element-wise mean of equally long traces, in the per-fold trace layout.
pub fn write_mean_trace(reports: &[&EvalReport], mut sink: impl Write) -> Result<()> {
    writeln!(sink, "{TRACE_HEADER}")?;
    let len = reports.first().map_or(0, |r| r.trace.len());
    if reports.iter().any(|r| r.trace.len() != len) {
        return Err(Error::Inconsistent("traces differ in length".into()));
    }
    let n = reports.len() as f64;
    for it in 0..len {
        let mean =
            |f: fn(&TraceRow) -> f64| reports.iter().map(|r| f(&r.trace[it])).sum::<f64>() / n;
        writeln!(
            sink,
            "{},{:.6},{},{},{}",
            it + 1,
            mean(|r| r.elapsed_s),
            mean(|r| r.active_atoms as f64),
            mean(|r| r.tdll),
            mean(|r| r.tdll_running)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text(
            "synthetic = 12x10;0-6:0-5;5-12:4-10;seed=2\nmodel = depm\nT = 2,4\niterations = 8\nretain = 3\nfolds = 3\n",
        )
        .unwrap();
        cfg
    }

    #[test]
    fn config_round_trips() {
        let mut cfg = tiny();
        cfg.c1 = None;
        let text = cfg.to_string();
        let back = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_string(), text);

        let mut cepm = cfg.clone();
        cepm.model = ModelKind::Cepm;
        cepm.c1 = Some(3.5);
        assert_eq!(ExperimentConfig::parse(&cepm.to_string()).unwrap(), cepm);
    }

    #[test]
    fn config_rejects_bad_values() {
        assert!(ExperimentConfig::parse("retain = 700").is_err());
        assert!(ExperimentConfig::parse("folds = 1").is_err());
        assert!(ExperimentConfig::parse("model = depm\nT = 0").is_err());
        assert!(ExperimentConfig::parse("model = depm\nC1 = 2").is_err());
        assert!(ExperimentConfig::parse("colour = red").is_err());
        assert!(ExperimentConfig::parse("iterations").is_err());
        let cfg = ExperimentConfig::parse("# comment\n\nmodel = epm # trailing\n").unwrap();
        assert_eq!(cfg.model, ModelKind::Epm);
    }

    #[test]
    fn chain_traces_have_one_row_per_iteration() {
        let cfg = tiny();
        let outcome = run_folds(&cfg).unwrap();
        assert_eq!(outcome.runs.len(), 6);
        for (n, run) in outcome.runs.iter().enumerate() {
            assert_eq!(run.truncation, Some(cfg.truncations[n / 3]));
            assert_eq!(run.fold, n % 3);
            let trace = &run.report.trace;
            assert_eq!(trace.len(), cfg.iterations);
            assert!(trace.windows(2).all(|w| w[1].elapsed_s >= w[0].elapsed_s));
            assert!(run.report.tdll.is_finite() && run.report.tdll <= 0.0);
            assert!((0.0..=1.0).contains(&run.report.tdauc_pr));
        }
    }

    #[test]
    fn last_running_tdll_matches_final_ensemble() {
        let cfg = tiny();
        let matrix = cfg.dataset.load().unwrap();
        let folds = make_cv_folds(&matrix, 3, &mut RngHandle::new(5)).unwrap();
        let report = run_chain(
            &cfg,
            Some(4),
            &folds[0].train_view,
            &folds[0].test_entries,
            RngHandle::new(9),
        )
        .unwrap();
        let last = report.trace.last().unwrap();
        assert!((last.tdll_running - report.tdll).abs() < 1e-12);
    }

    #[test]
    fn full_data_chain_reports_atoms_only() {
        let mut cfg = tiny();
        cfg.model = ModelKind::Idepm;
        let matrix = cfg.dataset.load().unwrap();
        let report = run_chain(&cfg, None, &matrix, &[], RngHandle::new(3)).unwrap();
        assert!(report.tdll.is_nan() && report.tdauc_pr.is_nan());
        assert!(report.mean_active_atoms >= 1.0);
        assert_eq!(report.trace.len(), cfg.iterations);
    }

    #[test]
    fn mean_and_se_small_cases() {
        assert_eq!(mean_and_se(&[1.0, 3.0]), (2.0, 1.0));
        assert!(mean_and_se(&[]).0.is_nan());
    }
}
