//! Held-out evaluation: active-atom traces, test-data log-likelihood and
//! area under the precision-recall curve.

use std::io::Write;

use crate::data::{HoldoutSplit, TestEntry};
use crate::error::{Error, Result};
use crate::idepm::CollapsedState;
use crate::truncated::TruncatedState;

/// Probabilities are kept inside `[EPS, 1 - EPS]` before taking logs.
pub const PROBABILITY_CLAMP: f64 = 1e-12;

/// Anything that assigns a link probability to a cell.
pub trait LinkPredictor {
    fn link_probability(&self, row: usize, col: usize) -> f64;
}

impl LinkPredictor for TruncatedState {
    fn link_probability(&self, row: usize, col: usize) -> f64 {
        TruncatedState::link_probability(self, row, col)
    }
}

impl LinkPredictor for CollapsedState {
    fn link_probability(&self, row: usize, col: usize) -> f64 {
        CollapsedState::link_probability(self, row, col)
    }
}

impl<P: LinkPredictor + ?Sized> LinkPredictor for &P {
    fn link_probability(&self, row: usize, col: usize) -> f64 {
        (**self).link_probability(row, col)
    }
}

/// Link probabilities for a fixed list of cells, one row per posterior
/// sample.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveEnsemble {
    cells: Vec<(usize, usize)>,
    samples: Vec<Vec<f64>>,
}

impl PredictiveEnsemble {
    pub fn new(cells: Vec<(usize, usize)>) -> Self {
        PredictiveEnsemble {
            cells,
            samples: Vec::new(),
        }
    }

    pub fn cells(&self) -> &[(usize, usize)] {
        &self.cells
    }

    pub fn n_samples(&self) -> usize {
        self.samples.len()
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn push(&mut self, model: &impl LinkPredictor) {
        let probs = self
            .cells
            .iter()
            .map(|&(i, j)| model.link_probability(i, j))
            .collect();
        self.samples.push(probs);
    }

    /// Adds a precomputed sample; every value must lie in `[0, 1]`.
    pub fn push_probabilities(&mut self, probs: Vec<f64>) -> Result<()> {
        if probs.len() != self.cells.len() {
            return Err(Error::Inconsistent(format!(
                "{} probabilities for {} cells",
                probs.len(),
                self.cells.len()
            )));
        }
        if let Some(&bad) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::param("link probability", bad));
        }
        self.samples.push(probs);
        Ok(())
    }

    /// Per-cell mean over samples.
    pub fn mean_probabilities(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.cells.len()];
        for sample in &self.samples {
            for (m, p) in mean.iter_mut().zip(sample) {
                *m += p;
            }
        }
        let n = self.samples.len().max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }
}

/// Evaluates each model on `cells`; one ensemble row per model.
pub fn posterior_predictive<P: LinkPredictor>(
    states: &[P],
    cells: &[(usize, usize)],
) -> PredictiveEnsemble {
    let mut ensemble = PredictiveEnsemble::new(cells.to_vec());
    for state in states {
        ensemble.push(state);
    }
    ensemble
}

/// How per-sample probabilities are combined into a test log-likelihood.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TdllMode {
    /// Average the probability over samples, then take the log.
    #[default]
    MeanProbability,
    /// Average the per-sample log probabilities.
    MeanLog,
}

impl TdllMode {
    pub fn name(self) -> &'static str {
        match self {
            TdllMode::MeanProbability => "mean-prob",
            TdllMode::MeanLog => "mean-log",
        }
    }
}

impl std::str::FromStr for TdllMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean-prob" | "mean-probability" => Ok(TdllMode::MeanProbability),
            "mean-log" => Ok(TdllMode::MeanLog),
            other => Err(Error::Config(format!("unknown TDLL mode `{other}`"))),
        }
    }
}

fn clamp(p: f64) -> f64 {
    p.clamp(PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP)
}

fn likelihood(p: f64, label: bool) -> f64 {
    if label {
        p
    } else {
        1.0 - p
    }
}

/// Mean log-likelihood of `labels` under a single vector of link
/// probabilities.
pub fn mean_log_likelihood(probs: &[f64], labels: &[bool]) -> f64 {
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &x)| likelihood(clamp(p), x).ln())
        .sum();
    total / labels.len() as f64
}

/// Test-data log-likelihood of `ensemble` on the held-out entries of
/// `split`, which must list the same cells in the same order.
pub fn tdll(ensemble: &PredictiveEnsemble, split: &HoldoutSplit) -> Result<f64> {
    check_alignment(ensemble, &split.test_entries)?;
    tdll_with_mode(ensemble, &split.test_labels(), TdllMode::default())
}

fn check_alignment(ensemble: &PredictiveEnsemble, entries: &[TestEntry]) -> Result<()> {
    let aligned = ensemble.cells.len() == entries.len()
        && ensemble
            .cells
            .iter()
            .zip(entries)
            .all(|(&(i, j), e)| i == e.row && j == e.col);
    if aligned {
        Ok(())
    } else {
        Err(Error::Inconsistent(
            "ensemble cells do not match the held-out entries".into(),
        ))
    }
}

pub fn tdll_with_mode(
    ensemble: &PredictiveEnsemble,
    labels: &[bool],
    mode: TdllMode,
) -> Result<f64> {
    if ensemble.samples.is_empty() {
        return Err(Error::Inconsistent("empty predictive ensemble".into()));
    }
    if labels.len() != ensemble.cells.len() || labels.is_empty() {
        return Err(Error::Inconsistent(format!(
            "{} labels for {} cells",
            labels.len(),
            ensemble.cells.len()
        )));
    }
    let n_samples = ensemble.samples.len() as f64;
    let total: f64 = match mode {
        TdllMode::MeanProbability => ensemble
            .mean_probabilities()
            .iter()
            .zip(labels)
            .map(|(&p, &x)| likelihood(clamp(p), x).ln())
            .sum(),
        TdllMode::MeanLog => {
            ensemble
                .samples
                .iter()
                .map(|sample| {
                    sample
                        .iter()
                        .zip(labels)
                        .map(|(&p, &x)| likelihood(clamp(p), x).ln())
                        .sum::<f64>()
                })
                .sum::<f64>()
                / n_samples
        }
    };
    Ok(total / labels.len() as f64)
}

/// Area under the precision-recall curve. Cells are swept by descending
/// score with tied scores entering together; the curve starts at recall
/// zero with the precision of the first threshold and is integrated by
/// trapezoids in recall.
pub fn pr_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Inconsistent(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::param("score", bad));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::Inconsistent(
            "precision-recall needs a positive label".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev: Option<(f64, f64)> = None;
    let mut area = 0.0;
    let mut idx = 0;
    while idx < order.len() {
        let threshold = scores[order[idx]];
        while idx < order.len() && scores[order[idx]] == threshold {
            if labels[order[idx]] {
                tp += 1;
            } else {
                fp += 1;
            }
            idx += 1;
        }
        let recall = tp as f64 / positives as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        let (r0, p0) = prev.unwrap_or((0.0, precision));
        area += (recall - r0) * (precision + p0) / 2.0;
        prev = Some((recall, precision));
    }
    Ok(area)
}

/// One row of a per-iteration trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub elapsed_s: f64,
    pub active_atoms: usize,
    /// Test log-likelihood of this iteration's sample alone.
    pub tdll: f64,
    /// Test log-likelihood of the ensemble of the most recent samples, up
    /// to the retention window.
    pub tdll_running: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub mean_active_atoms: f64,
    pub tdll: f64,
    pub tdauc_pr: f64,
    pub trace: Vec<TraceRow>,
}

pub const TRACE_HEADER: &str = "iteration,elapsed_s,k,tdll,tdll_running";

impl EvalReport {
    /// Writes the per-iteration trace: a header and one row per iteration.
    pub fn write_trace_csv(&self, mut sink: impl Write) -> Result<()> {
        writeln!(sink, "{TRACE_HEADER}")?;
        for row in &self.trace {
            writeln!(
                sink,
                "{},{:.6},{},{},{}",
                row.iteration, row.elapsed_s, row.active_atoms, row.tdll, row.tdll_running
            )?;
        }
        Ok(())
    }

    /// Wall-clock seconds until the running TDLL settles; see
    /// [`settling_time`].
    pub fn settling_time(&self, tolerance: f64) -> Option<f64> {
        settling_time(&self.trace, tolerance)
    }
}

/// The elapsed time of the first iteration from which the running TDLL
/// stays within `tolerance` of its final value. `None` for an empty trace
/// or one without held-out entries.
pub fn settling_time(trace: &[TraceRow], tolerance: f64) -> Option<f64> {
    let target = trace.last()?.tdll_running;
    if target.is_nan() {
        return None;
    }
    let settled = trace
        .iter()
        .rposition(|r| (r.tdll_running - target).abs() > tolerance || r.tdll_running.is_nan())
        .map_or(0, |t| t + 1);
    trace.get(settled).map(|r| r.elapsed_s)
}
