//! Independent checks of the models' analytic properties: Monte Carlo
//! expectations of the intensity, closed-form marginal likelihoods against
//! prior integration, the partition limit of the truncated marginal, sampler
//! moments, and joint-distribution (Geweke) tests of the Gibbs samplers.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand_distr::{Beta, Binomial, Distribution, Gamma};

use crate::counts::LatentCounts;
use crate::data::SparseBinaryMatrix;
use crate::distributions::{
    antoniak_unchecked, dirichlet_unchecked, gamma_unchecked, ztp_unchecked, GammaParams, RngHandle,
};
use crate::error::{Error, Result};
use crate::idepm::{
    log_marginal_infinite, log_marginal_truncated, CollapsedState, CountStep, IdepmHypers,
};
use crate::options::{InjectedFault, SweepOptions};
use crate::truncated::{
    cepm_grid_points, FactorPrior, Hyperparameters, Side, TruncatedState, TruncatedVariant,
};

/// Monte Carlo checks pass when the estimate is within this many standard
/// errors of the analytic value.
pub const CHECK_SE_BOUND: f64 = 3.0;
pub const GEWEKE_Z_BOUND: f64 = 4.0;
pub const PARTITION_LIMIT_TOLERANCE: f64 = 1e-6;
pub const PARTITION_LADDER: [u64; 5] = [100, 1_000, 10_000, 100_000, 1_000_000];
pub const DEFAULT_MC_TRUNCATION: usize = 1000;

/// Atoms whose weight `lambda = G U^(1/s) / c0` (with `G ~ Gamma(1 + s)`,
/// `U` uniform, `s = gamma0 / T`) has `U^(1/s) < e^-L` are not drawn. They
/// carry exactly a fraction `e^(-L (1 + s))` of `E[sum lambda]`, and since
/// the factors are independent of the weights, dividing by
/// `1 - e^(-L (1 + s))` keeps the intensity estimate unbiased.
const NEGLIGIBLE_LOG_WEIGHT: f64 = 16.0;

/// Running mean and variance (Welford).
#[derive(Clone, Copy, Debug, Default)]
struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn variance(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        self.m2 / (self.n - 1) as f64
    }

    fn se(&self) -> f64 {
        (self.variance() / self.n as f64).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExpectationCheck {
    pub name: String,
    pub analytic: f64,
    pub estimate: f64,
    pub se: f64,
    pub n_samples: u64,
}

impl ExpectationCheck {
    fn from_moments(name: String, analytic: f64, m: &Moments) -> Self {
        ExpectationCheck {
            name,
            analytic,
            estimate: m.mean,
            se: m.se(),
            n_samples: m.n,
        }
    }

    pub fn z(&self) -> f64 {
        z_score(self.estimate - self.analytic, self.se)
    }

    pub fn passed(&self) -> bool {
        (self.analytic - self.estimate).abs() <= CHECK_SE_BOUND * self.se
    }
}

impl fmt::Display for ExpectationCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: analytic {:.6e}, estimate {:.6e} (se {:.2e}, n {}), z {:.2}",
            self.name,
            self.analytic,
            self.estimate,
            self.se,
            self.n_samples,
            self.z()
        )
    }
}

/// A deterministic value compared against its exact target.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactCheck {
    pub name: String,
    pub expected: f64,
    pub value: f64,
    pub tolerance: f64,
}

impl ExactCheck {
    pub fn passed(&self) -> bool {
        (self.value - self.expected).abs() <= self.tolerance
    }
}

fn z_score(diff: f64, se: f64) -> f64 {
    if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpmPrior {
    pub a1: f64,
    pub b1: f64,
    pub a2: f64,
    pub b2: f64,
    pub gamma0: f64,
    pub c0: f64,
}

impl EpmPrior {
    /// `E[sum_k U(i,k) V(j,k) lambda_k]`.
    pub fn expected_intensity(&self) -> f64 {
        (self.a1 / self.b1) * (self.a2 / self.b2) * (self.gamma0 / self.c0)
    }

    fn validate(&self) -> Result<()> {
        let values = [
            ("a1", self.a1),
            ("b1", self.b1),
            ("a2", self.a2),
            ("b2", self.b2),
            ("gamma0", self.gamma0),
            ("c0", self.c0),
        ];
        validate_positive(&values)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepmPrior {
    pub n_rows: usize,
    pub n_cols: usize,
    pub alpha1: f64,
    pub alpha2: f64,
    pub gamma0: f64,
    pub c0: f64,
}

impl DepmPrior {
    /// `E[sum_k phi(i,k) psi(j,k) lambda_k] = gamma0 / (I J c0)`, whatever
    /// the concentrations.
    pub fn expected_intensity(&self) -> f64 {
        self.gamma0 / (self.n_rows as f64 * self.n_cols as f64 * self.c0)
    }

    fn validate(&self) -> Result<()> {
        if self.n_rows == 0 || self.n_cols == 0 {
            return Err(Error::Config("DEPM check needs I, J >= 1".into()));
        }
        let values = [
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("gamma0", self.gamma0),
            ("c0", self.c0),
        ];
        validate_positive(&values)
    }
}

fn validate_positive(values: &[(&'static str, f64)]) -> Result<()> {
    for &(name, value) in values {
        if !(value.is_finite() && value > 0.0) {
            return Err(Error::InvalidParameter { name, value });
        }
    }
    Ok(())
}

fn check_sizes(truncation: usize, n: u64) -> Result<()> {
    if truncation == 0 {
        return Err(Error::Config("truncation level must be at least 1".into()));
    }
    if n < 2 {
        return Err(Error::Config("need at least two Monte Carlo draws".into()));
    }
    Ok(())
}

/// Visits the weights of `T` independent `Gamma(gamma0 / T, c0)` atoms,
/// skipping the negligible ones. Returns the factor that restores the
/// mean of anything linear in the weights.
fn for_each_atom_weight(
    rng: &mut RngHandle,
    truncation: usize,
    gamma0: f64,
    c0: f64,
    mut visit: impl FnMut(&mut RngHandle, f64),
) -> f64 {
    let s = gamma0 / truncation as f64;
    let keep = -(-NEGLIGIBLE_LOG_WEIGHT * s).exp_m1();
    if keep > 0.5 {
        for _ in 0..truncation {
            let l = gamma_unchecked(rng, s, c0);
            visit(rng, l);
        }
        return 1.0;
    }
    let kept = Binomial::new(truncation as u64, keep)
        .expect("keep probability lies in (0, 1)")
        .sample(rng);
    let g = Gamma::new(1.0 + s, 1.0 / c0).expect("valid gamma parameters");
    for _ in 0..kept {
        // U uniform on (e^(-L s), 1)
        let ln_u = (-keep * rng.uniform()).ln_1p();
        let l = g.sample(rng) * (ln_u / s).exp();
        visit(rng, l);
    }
    1.0 / -(-NEGLIGIBLE_LOG_WEIGHT * (1.0 + s)).exp_m1()
}

fn gamma_dist(shape: f64, rate: f64) -> Result<Gamma<f64>> {
    Gamma::new(shape, 1.0 / rate).map_err(|_| Error::param("gamma shape", shape))
}

/// Draws `(U, V, lambda)` from the truncated EPM prior `n` times and
/// averages the intensity `sum_k U(1,k) V(1,k) lambda_k`.
pub fn mc_intensity_expectation_epm(
    prior: &EpmPrior,
    truncation: usize,
    n: u64,
    rng: &mut RngHandle,
) -> Result<ExpectationCheck> {
    prior.validate()?;
    check_sizes(truncation, n)?;
    let (u_dist, v_dist) = (
        gamma_dist(prior.a1, prior.b1)?,
        gamma_dist(prior.a2, prior.b2)?,
    );
    let mut m = Moments::default();
    for _ in 0..n {
        let mut sum = 0.0;
        let scale = for_each_atom_weight(rng, truncation, prior.gamma0, prior.c0, |rng, l| {
            sum += u_dist.sample(rng) * v_dist.sample(rng) * l;
        });
        m.push(sum * scale);
    }
    let name = format!(
        "epm intensity a1={:.4} b1={:.4} a2={:.4} b2={:.4} gamma0={:.4} c0={:.4} T={truncation}",
        prior.a1, prior.b1, prior.a2, prior.b2, prior.gamma0, prior.c0
    );
    Ok(ExpectationCheck::from_moments(
        name,
        prior.expected_intensity(),
        &m,
    ))
}

/// One coordinate of a symmetric `Dirichlet(alpha)` vector of length `n`
/// is `Beta(alpha, (n - 1) alpha)`; degenerate at 1 when `n = 1`.
fn simplex_coordinate(alpha: f64, n: usize) -> Result<Option<Beta<f64>>> {
    if n == 1 {
        return Ok(None);
    }
    Beta::new(alpha, (n - 1) as f64 * alpha)
        .map(Some)
        .map_err(|_| Error::param("concentration", alpha))
}

/// As [`mc_intensity_expectation_epm`] for the DEPM, whose factor columns
/// are symmetric Dirichlet vectors.
pub fn mc_intensity_expectation_depm(
    prior: &DepmPrior,
    truncation: usize,
    n: u64,
    rng: &mut RngHandle,
) -> Result<ExpectationCheck> {
    prior.validate()?;
    check_sizes(truncation, n)?;
    let phi_dist = simplex_coordinate(prior.alpha1, prior.n_rows)?;
    let psi_dist = simplex_coordinate(prior.alpha2, prior.n_cols)?;
    let draw =
        |d: &Option<Beta<f64>>, rng: &mut RngHandle| d.as_ref().map_or(1.0, |d| d.sample(rng));
    let mut m = Moments::default();
    for _ in 0..n {
        let mut sum = 0.0;
        let scale = for_each_atom_weight(rng, truncation, prior.gamma0, prior.c0, |rng, l| {
            sum += draw(&phi_dist, rng) * draw(&psi_dist, rng) * l;
        });
        m.push(sum * scale);
    }
    let name = format!(
        "depm intensity I={} J={} alpha1={:.4} alpha2={:.4} gamma0={:.4} c0={:.4} T={truncation}",
        prior.n_rows, prior.n_cols, prior.alpha1, prior.alpha2, prior.gamma0, prior.c0
    );
    Ok(ExpectationCheck::from_moments(
        name,
        prior.expected_intensity(),
        &m,
    ))
}

pub const MAX_ORACLE_CUSTOMERS: u64 = 6;
pub const MAX_ORACLE_CELLS: usize = 4;
pub const MAX_ORACLE_TRUNCATION: usize = 3;

/// Averages the fully factorized likelihood of labelled counts,
///
/// ```text
/// prod_ij 1 / m(i,j,.)!  prod_k  prod_i phi(i,k)^m(i,.,k)  prod_j psi(j,k)^m(.,j,k)  lambda_k^m(.,.,k) e^-lambda_k
/// ```
///
/// over `n` draws of `(phi, psi, lambda)` from the truncated DEPM prior with
/// `T = counts.n_atoms()`, and compares it with the closed-form marginal.
pub fn verify_marginal_by_prior_mc(
    name: &str,
    counts: &LatentCounts,
    hypers: &IdepmHypers,
    n: u64,
    rng: &mut RngHandle,
) -> Result<ExpectationCheck> {
    hypers.validate()?;
    let (i_dim, j_dim, t) = (counts.n_rows(), counts.n_cols(), counts.n_atoms());
    check_sizes(t, n)?;
    if counts.total() > MAX_ORACLE_CUSTOMERS
        || i_dim * j_dim > MAX_ORACLE_CELLS
        || t > MAX_ORACLE_TRUNCATION
    {
        return Err(Error::Config(format!(
            "prior integration needs M <= {MAX_ORACLE_CUSTOMERS}, I*J <= {MAX_ORACLE_CELLS}, \
             T <= {MAX_ORACLE_TRUNCATION}"
        )));
    }
    let analytic = log_marginal_truncated(counts, t as u64, hypers, false)?.exp();
    let front: f64 = -(0..counts.edges().len())
        .map(|e| crate::distributions::ln_factorial(counts.edge_total(e)))
        .sum::<f64>();
    let shape = hypers.gamma0 / t as f64;
    let (row_alphas, col_alphas) = (vec![hypers.alpha1; i_dim], vec![hypers.alpha2; j_dim]);
    let (mut phi, mut psi) = (vec![0.0; i_dim], vec![0.0; j_dim]);
    let mut m = Moments::default();
    for _ in 0..n {
        let mut log_l = front;
        for k in 0..t {
            dirichlet_unchecked(rng, &row_alphas, &mut phi);
            dirichlet_unchecked(rng, &col_alphas, &mut psi);
            let lambda = gamma_unchecked(rng, shape, hypers.c0);
            log_l -= lambda;
            let mk = counts.atom(k);
            if mk == 0 {
                continue;
            }
            log_l += mk as f64 * lambda.ln();
            for (i, p) in phi.iter().enumerate() {
                let r = counts.row(i, k);
                if r > 0 {
                    log_l += r as f64 * p.ln();
                }
            }
            for (j, p) in psi.iter().enumerate() {
                let c = counts.col(j, k);
                if c > 0 {
                    log_l += c as f64 * p.ln();
                }
            }
        }
        m.push(log_l.exp());
    }
    Ok(ExpectationCheck::from_moments(
        format!("marginal {name}"),
        analytic,
        &m,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PartitionLimitRow {
    pub truncation: u64,
    pub log_p: f64,
    pub abs_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionLimitReport {
    pub name: String,
    pub log_p_infinite: f64,
    pub rows: Vec<PartitionLimitRow>,
    pub tolerance: f64,
}

impl PartitionLimitReport {
    /// Rounding slack when comparing successive errors.
    fn slack(&self) -> f64 {
        1e-13 * self.log_p_infinite.abs().max(1.0)
    }

    /// The error never grows along the ladder (up to rounding).
    pub fn monotone(&self) -> bool {
        let slack = self.slack();
        self.rows
            .windows(2)
            .all(|w| w[1].abs_error <= w[0].abs_error + slack)
    }

    pub fn final_error(&self) -> f64 {
        self.rows.last().map_or(f64::INFINITY, |r| r.abs_error)
    }

    pub fn passed(&self) -> bool {
        self.monotone() && self.final_error() < self.tolerance
    }
}

/// Evaluates the truncated partition marginal `T!/(T-K)! P_T(m, z)` along a
/// ladder of truncation levels and its distance from the infinite-model
/// marginal.
pub fn verify_partition_limit(
    name: &str,
    counts: &LatentCounts,
    hypers: &IdepmHypers,
    ladder: &[u64],
) -> Result<PartitionLimitReport> {
    if ladder.is_empty() {
        return Err(Error::Config("empty truncation ladder".into()));
    }
    let log_p_infinite = log_marginal_infinite(counts, hypers)?;
    let rows = ladder
        .iter()
        .map(|&t| {
            let log_p = log_marginal_truncated(counts, t, hypers, true)?;
            Ok(PartitionLimitRow {
                truncation: t,
                log_p,
                abs_error: (log_p - log_p_infinite).abs(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PartitionLimitReport {
        name: name.to_string(),
        log_p_infinite,
        rows,
        tolerance: PARTITION_LIMIT_TOLERANCE,
    })
}

/// Empirical mean of zero-truncated Poisson draws against
/// `lambda / (1 - e^-lambda)`.
pub fn mc_ztp_mean(lambda: f64, n: u64, rng: &mut RngHandle) -> Result<ExpectationCheck> {
    validate_positive(&[("lambda", lambda)])?;
    check_sizes(1, n)?;
    let mut m = Moments::default();
    for _ in 0..n {
        m.push(ztp_unchecked(rng, lambda) as f64);
    }
    let analytic = lambda / -(-lambda).exp_m1();
    Ok(ExpectationCheck::from_moments(
        format!("ztp mean lambda={lambda}"),
        analytic,
        &m,
    ))
}

/// Empirical mean of the number of tables against `sum_p a / (a + p - 1)`.
pub fn mc_antoniak_mean(
    customers: u64,
    a: f64,
    n: u64,
    rng: &mut RngHandle,
) -> Result<ExpectationCheck> {
    validate_positive(&[("concentration", a)])?;
    check_sizes(1, n)?;
    let mut m = Moments::default();
    for _ in 0..n {
        m.push(antoniak_unchecked(rng, customers, a) as f64);
    }
    let analytic = (1..=customers).map(|p| a / (a + (p - 1) as f64)).sum();
    Ok(ExpectationCheck::from_moments(
        format!("antoniak mean n={customers} a={a}"),
        analytic,
        &m,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GewekeModel {
    Epm,
    Cepm,
    Depm,
    Idepm,
}

impl GewekeModel {
    pub const ALL: [GewekeModel; 4] = [
        GewekeModel::Epm,
        GewekeModel::Cepm,
        GewekeModel::Depm,
        GewekeModel::Idepm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GewekeModel::Epm => "epm",
            GewekeModel::Cepm => "cepm",
            GewekeModel::Depm => "depm",
            GewekeModel::Idepm => "idepm",
        }
    }

    fn truncated_variant(self) -> Option<TruncatedVariant> {
        match self {
            GewekeModel::Epm => Some(TruncatedVariant::Epm),
            GewekeModel::Cepm => Some(TruncatedVariant::Cepm),
            GewekeModel::Depm => Some(TruncatedVariant::Depm),
            GewekeModel::Idepm => None,
        }
    }
}

impl FromStr for GewekeModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GewekeModel::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown model '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GewekeConfig {
    pub model: GewekeModel,
    pub n_rows: usize,
    pub n_cols: usize,
    /// Ignored for the IDEPM.
    pub truncation: usize,
    pub rounds: usize,
    /// Batches for the batch-means standard error of the chain.
    pub batches: usize,
    /// Hyperprior used for the test. `Gamma(0.01, 0.01)` has moments too
    /// heavy-tailed for a moment test, so the default is `Gamma(5, 5)`.
    pub e0: f64,
    pub f0: f64,
    pub fault: Option<InjectedFault>,
    /// Hold every hyperparameter at 1 in both simulators and test only the
    /// parameter and count updates.
    pub freeze_hypers: bool,
    /// IDEPM count step.
    pub count_step: CountStep,
}

impl GewekeConfig {
    pub fn new(model: GewekeModel, rounds: usize) -> Self {
        GewekeConfig {
            model,
            n_rows: 3,
            n_cols: 3,
            truncation: 2,
            rounds,
            batches: 100,
            e0: 5.0,
            f0: 5.0,
            fault: None,
            freeze_hypers: false,
            count_step: CountStep::default(),
        }
    }

    pub fn with_fault(mut self, fault: Option<InjectedFault>) -> Self {
        self.fault = fault;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n_rows == 0 || self.n_rows > 3 || self.n_cols == 0 || self.n_cols > 3 {
            return Err(Error::Config("joint tests run on shapes up to 3x3".into()));
        }
        if self.truncation == 0 || self.truncation > 2 {
            return Err(Error::Config("joint tests run with T <= 2".into()));
        }
        if self.batches < 2 || self.rounds < 2 * self.batches {
            return Err(Error::Config(
                "need at least two batches of two rounds each".into(),
            ));
        }
        validate_positive(&[("e0", self.e0), ("f0", self.f0)])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GewekeMoment {
    pub statistic: &'static str,
    /// 1 for `E[g]`, 2 for `E[g^2]`.
    pub power: u32,
    pub prior_mean: f64,
    pub prior_se: f64,
    pub chain_mean: f64,
    pub chain_se: f64,
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GewekeReport {
    pub config: GewekeConfig,
    pub moments: Vec<GewekeMoment>,
}

impl GewekeReport {
    pub fn max_abs_z(&self) -> f64 {
        self.moments.iter().map(|m| m.z.abs()).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_abs_z() <= GEWEKE_Z_BOUND
    }
}

enum GewekeChain {
    Truncated {
        state: Box<TruncatedState>,
        x: SparseBinaryMatrix,
    },
    Collapsed {
        state: Box<CollapsedState>,
        x: SparseBinaryMatrix,
    },
}

fn bounded(x: f64) -> f64 {
    x / (1.0 + x)
}

impl GewekeChain {
    fn new(cfg: &GewekeConfig, rng: RngHandle) -> Result<Self> {
        let options = SweepOptions {
            freeze_hypers: cfg.freeze_hypers,
            fault: cfg.fault,
        };
        let x = SparseBinaryMatrix::zeros(cfg.n_rows, cfg.n_cols)?;
        let mut chain = match cfg.model.truncated_variant() {
            Some(variant) => {
                let mut hypers = Hyperparameters::for_variant(variant, cfg.n_rows, cfg.n_cols);
                hypers.e0 = cfg.e0;
                hypers.f0 = cfg.f0;
                let state =
                    TruncatedState::init(&x, cfg.truncation, hypers, rng)?.with_options(options);
                GewekeChain::Truncated {
                    state: Box::new(state),
                    x,
                }
            }
            None => {
                let hypers = IdepmHypers {
                    e0: cfg.e0,
                    f0: cfg.f0,
                    ..IdepmHypers::default()
                };
                let state = CollapsedState::init(&x, hypers, rng)?
                    .with_options(options)
                    .with_count_step(cfg.count_step);
                GewekeChain::Collapsed {
                    state: Box::new(state),
                    x,
                }
            }
        };
        chain.draw_joint()?;
        Ok(chain)
    }

    fn statistic_names(model: GewekeModel) -> Vec<&'static str> {
        let tail = ["total_count", "active_atoms"];
        let head: &[&'static str] = match model {
            GewekeModel::Epm => &[
                "a1", "b1", "a2", "b2", "gamma0", "c0", "u11", "v11", "lambda1",
            ],
            GewekeModel::Cepm => &["a1", "a2", "gamma0", "c0", "u11", "v11", "lambda1"],
            GewekeModel::Depm => &[
                "alpha1", "alpha2", "gamma0", "c0", "phi11", "psi11", "lambda1",
            ],
            GewekeModel::Idepm => &[
                "alpha1",
                "alpha2",
                "gamma0",
                "c0",
                "lambda_sum",
                "lambda_rest",
            ],
        };
        head.iter().chain(tail.iter()).copied().collect()
    }

    /// Hyperparameters from the hyperprior (unless frozen), then everything
    /// else from the model given them.
    fn draw_joint(&mut self) -> Result<()> {
        match self {
            GewekeChain::Truncated { state, x } if state.options().freeze_hypers => {
                state.draw_from_prior();
                *x = state.regenerate_data()?;
            }
            GewekeChain::Collapsed { state, x } if state.options().freeze_hypers => {
                *x = state.regenerate_from_prior()?;
            }
            GewekeChain::Truncated { state, x } => {
                let mut hypers = state.hypers().clone();
                let (e0, f0) = (hypers.e0, hypers.f0);
                let rng = state.rng_mut();
                match &mut hypers.factors {
                    FactorPrior::Gamma { a1, b1, a2, b2 } => {
                        for h in [a1, b1, a2, b2] {
                            *h = gamma_unchecked(rng, e0, f0);
                        }
                    }
                    FactorPrior::Constrained { a1, a2, .. } => {
                        let prior = GammaParams::new(e0, f0)?;
                        *a1 = draw_grid_prior(rng, &prior);
                        *a2 = draw_grid_prior(rng, &prior);
                    }
                    FactorPrior::Dirichlet { alpha1, alpha2 } => {
                        *alpha1 = gamma_unchecked(rng, e0, f0);
                        *alpha2 = gamma_unchecked(rng, e0, f0);
                    }
                }
                hypers.gamma0 = gamma_unchecked(rng, e0, f0);
                hypers.c0 = gamma_unchecked(rng, e0, f0);
                *state.hypers_mut() = hypers;
                state.draw_from_prior();
                *x = state.regenerate_data()?;
            }
            GewekeChain::Collapsed { state, x } => {
                let (e0, f0) = (state.hypers().e0, state.hypers().f0);
                let rng = state.rng_mut();
                let hypers = IdepmHypers {
                    alpha1: gamma_unchecked(rng, e0, f0),
                    alpha2: gamma_unchecked(rng, e0, f0),
                    gamma0: gamma_unchecked(rng, e0, f0),
                    c0: gamma_unchecked(rng, e0, f0),
                    e0,
                    f0,
                };
                *state.hypers_mut() = hypers;
                *x = state.regenerate_from_prior()?;
            }
        }
        Ok(())
    }

    fn sweep(&mut self) -> Result<()> {
        match self {
            GewekeChain::Truncated { state, x } => state.gibbs_sweep(x),
            GewekeChain::Collapsed { state, x } => state.collapsed_sweep(x),
        }
    }

    fn regenerate(&mut self) -> Result<()> {
        match self {
            GewekeChain::Truncated { state, x } => *x = state.regenerate_data()?,
            GewekeChain::Collapsed { state, x } => *x = state.regenerate_from_prior()?,
        }
        Ok(())
    }

    fn statistics(&self, out: &mut Vec<f64>) {
        out.clear();
        match self {
            GewekeChain::Truncated { state, .. } => {
                let h = state.hypers();
                out.extend(
                    h.named_values()
                        .into_iter()
                        .filter(|(name, _)| !matches!(*name, "e0" | "f0" | "c1" | "c2"))
                        .map(|(_, v)| v),
                );
                out.push(bounded(state.factors(Side::Rows)[0]));
                out.push(bounded(state.factors(Side::Cols)[0]));
                out.push(bounded(state.lambda()[0]));
                out.push(bounded(state.counts().total() as f64));
                out.push(state.counts().active_atoms() as f64);
            }
            GewekeChain::Collapsed { state, .. } => {
                let h = state.hypers();
                out.extend([h.alpha1, h.alpha2, h.gamma0, h.c0]);
                let lambda_sum: f64 = state
                    .atoms()
                    .iter()
                    .filter_map(|a| a.params())
                    .map(|p| p.lambda)
                    .sum();
                out.push(bounded(lambda_sum));
                out.push(bounded(state.lambda_rest()));
                out.push(bounded(state.total_customers() as f64));
                out.push(state.n_active() as f64);
            }
        }
    }
}

/// A CEPM shape drawn from the hyperprior restricted to the sampler's grid.
fn draw_grid_prior(rng: &mut RngHandle, prior: &GammaParams) -> f64 {
    let grid = cepm_grid_points();
    let log_w: Vec<f64> = grid.iter().map(|&a| prior.ln_pdf(a)).collect();
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_w.iter().map(|w| (w - max).exp()).collect();
    let target = rng.uniform() * weights.iter().sum::<f64>();
    let mut acc = 0.0;
    for (a, w) in grid.iter().zip(&weights) {
        acc += w;
        if target < acc {
            return *a;
        }
    }
    grid[grid.len() - 1]
}

/// Compares the marginal-conditional simulator (independent joint draws)
/// with the successive-conditional one (a Gibbs sweep given the data, then
/// fresh data given the parameters) on the first two moments of every
/// hyperparameter and a few parameter summaries. For a correct sampler both
/// sample the same joint distribution.
pub fn geweke_joint_test(cfg: &GewekeConfig, rng: &RngHandle) -> Result<GewekeReport> {
    cfg.validate()?;
    let names = GewekeChain::statistic_names(cfg.model);
    let n_stats = names.len();
    let mut stats = Vec::with_capacity(n_stats);

    let mut forward = GewekeChain::new(cfg, rng.fork(rng.stream().wrapping_add(1)))?;
    let mut prior = vec![[Moments::default(); 2]; n_stats];
    for _ in 0..cfg.rounds {
        forward.draw_joint()?;
        forward.statistics(&mut stats);
        for (acc, &g) in prior.iter_mut().zip(&stats) {
            acc[0].push(g);
            acc[1].push(g * g);
        }
    }

    let mut chain = GewekeChain::new(cfg, rng.fork(rng.stream().wrapping_add(2)))?;
    let batch = cfg.rounds / cfg.batches;
    let mut batch_sums = vec![[0.0; 2]; n_stats];
    let mut batch_means = vec![[Moments::default(); 2]; n_stats];
    for round in 0..batch * cfg.batches {
        chain.sweep()?;
        chain.statistics(&mut stats);
        for (sum, &g) in batch_sums.iter_mut().zip(&stats) {
            sum[0] += g;
            sum[1] += g * g;
        }
        if (round + 1) % batch == 0 {
            for (acc, sum) in batch_means.iter_mut().zip(batch_sums.iter_mut()) {
                acc[0].push(sum[0] / batch as f64);
                acc[1].push(sum[1] / batch as f64);
                *sum = [0.0; 2];
            }
        }
        chain.regenerate()?;
    }

    let mut moments = Vec::with_capacity(2 * n_stats);
    for (s, name) in names.iter().enumerate() {
        for p in 0..2 {
            let (pm, cm) = (&prior[s][p], &batch_means[s][p]);
            let se = (pm.se().powi(2) + cm.se().powi(2)).sqrt();
            moments.push(GewekeMoment {
                statistic: name,
                power: p as u32 + 1,
                prior_mean: pm.mean,
                prior_se: pm.se(),
                chain_mean: cm.mean,
                chain_se: cm.se(),
                z: z_score(cm.mean - pm.mean, se),
            });
        }
    }
    Ok(GewekeReport {
        config: cfg.clone(),
        moments,
    })
}

/// One line of an oracle report.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportLine {
    pub suite: &'static str,
    pub check: String,
    pub reference: f64,
    pub estimate: f64,
    pub se: f64,
    /// `|z|` for statistical checks, absolute error otherwise.
    pub score: f64,
    pub bound: f64,
    pub passed: bool,
}

pub const REPORT_HEADER: &str = "suite,check,reference,estimate,se,score,bound,passed";

impl ExpectationCheck {
    pub fn report_line(&self, suite: &'static str) -> ReportLine {
        ReportLine {
            suite,
            check: self.name.clone(),
            reference: self.analytic,
            estimate: self.estimate,
            se: self.se,
            score: self.z().abs(),
            bound: CHECK_SE_BOUND,
            passed: self.passed(),
        }
    }
}

impl ExactCheck {
    pub fn report_line(&self, suite: &'static str) -> ReportLine {
        ReportLine {
            suite,
            check: self.name.clone(),
            reference: self.expected,
            estimate: self.value,
            se: 0.0,
            score: (self.value - self.expected).abs(),
            bound: self.tolerance,
            passed: self.passed(),
        }
    }
}

impl PartitionLimitReport {
    /// One line per truncation level; each error is bounded by the previous
    /// one, and the last also by the tolerance.
    pub fn report_lines(&self, suite: &'static str) -> Vec<ReportLine> {
        let slack = self.slack();
        let mut previous = f64::INFINITY;
        let last = self.rows.len().saturating_sub(1);
        self.rows
            .iter()
            .enumerate()
            .map(|(idx, row)| {
                let mut bound = previous + slack;
                if idx == last {
                    bound = bound.min(self.tolerance);
                }
                previous = row.abs_error;
                ReportLine {
                    suite,
                    check: format!("partition limit {} T={}", self.name, row.truncation),
                    reference: self.log_p_infinite,
                    estimate: row.log_p,
                    se: 0.0,
                    score: row.abs_error,
                    bound,
                    passed: row.abs_error <= bound,
                }
            })
            .collect()
    }
}

impl GewekeReport {
    pub fn report_lines(&self, suite: &'static str) -> Vec<ReportLine> {
        let tag = match self.config.fault {
            Some(fault) => format!("{} [fault {fault:?}]", self.config.model.name()),
            None => self.config.model.name().to_string(),
        };
        self.moments
            .iter()
            .map(|m| ReportLine {
                suite,
                check: format!("geweke {tag} {} E[g^{}]", m.statistic, m.power),
                reference: m.prior_mean,
                estimate: m.chain_mean,
                se: (m.prior_se.powi(2) + m.chain_se.powi(2)).sqrt(),
                score: m.z.abs(),
                bound: GEWEKE_Z_BOUND,
                passed: m.z.abs() <= GEWEKE_Z_BOUND,
            })
            .collect()
    }
}

pub fn write_report_csv(lines: &[ReportLine], mut sink: impl Write) -> Result<()> {
    writeln!(sink, "{REPORT_HEADER}")?;
    for l in lines {
        writeln!(
            sink,
            "{},\"{}\",{:e},{:e},{:e},{:e},{:e},{}",
            l.suite,
            l.check.replace('"', "'"),
            l.reference,
            l.estimate,
            l.se,
            l.score,
            l.bound,
            l.passed
        )?;
    }
    Ok(())
}

pub fn write_report_text(lines: &[ReportLine], mut sink: impl Write) -> Result<()> {
    for l in lines {
        writeln!(
            sink,
            "{} [{}] {}: reference {:.6e}, estimate {:.6e}, se {:.2e}, score {:.3e} (bound {:.1e})",
            if l.passed { "PASS" } else { "FAIL" },
            l.suite,
            l.check,
            l.reference,
            l.estimate,
            l.se,
            l.score,
            l.bound
        )?;
    }
    let failed = lines.iter().filter(|l| !l.passed).count();
    writeln!(sink, "{} checks, {failed} failed", lines.len())?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Suite {
    Expectations,
    Marginals,
    Moments,
    Geweke,
}

impl Suite {
    pub const ALL: [Suite; 4] = [
        Suite::Expectations,
        Suite::Marginals,
        Suite::Moments,
        Suite::Geweke,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Expectations => "expectations",
            Suite::Marginals => "marginals",
            Suite::Moments => "moments",
            Suite::Geweke => "geweke",
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown oracle suite '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteOptions {
    pub seed: u64,
    pub settings: usize,
    pub expectation_draws: u64,
    pub marginal_draws: u64,
    pub moment_draws: u64,
    pub geweke_rounds: usize,
    pub fault: Option<InjectedFault>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            seed: 1,
            settings: 5,
            expectation_draws: 1_000_000,
            marginal_draws: 10_000_000,
            moment_draws: 1_000_000,
            geweke_rounds: 100_000,
            fault: None,
        }
    }
}

fn uniform_in(rng: &mut RngHandle, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.uniform()
}

/// Randomized intensity-expectation checks: `settings` EPM priors and
/// `settings` DEPM priors.
pub fn expectation_suite(opts: &SuiteOptions) -> Result<Vec<ExpectationCheck>> {
    let mut setup = RngHandle::with_stream(opts.seed, 100);
    let mut checks = Vec::new();
    for s in 0..opts.settings {
        let prior = EpmPrior {
            a1: uniform_in(&mut setup, 0.5, 3.0),
            b1: uniform_in(&mut setup, 0.5, 3.0),
            a2: uniform_in(&mut setup, 0.5, 3.0),
            b2: uniform_in(&mut setup, 0.5, 3.0),
            gamma0: uniform_in(&mut setup, 0.5, 3.0),
            c0: uniform_in(&mut setup, 0.5, 3.0),
        };
        let mut rng = RngHandle::with_stream(opts.seed, 101 + s as u64);
        checks.push(mc_intensity_expectation_epm(
            &prior,
            DEFAULT_MC_TRUNCATION,
            opts.expectation_draws,
            &mut rng,
        )?);
    }
    for s in 0..opts.settings {
        let prior = DepmPrior {
            n_rows: 1 + (setup.uniform() * 12.0) as usize,
            n_cols: 1 + (setup.uniform() * 12.0) as usize,
            alpha1: uniform_in(&mut setup, 0.2, 3.0),
            alpha2: uniform_in(&mut setup, 0.2, 3.0),
            gamma0: uniform_in(&mut setup, 0.5, 3.0),
            c0: uniform_in(&mut setup, 0.5, 3.0),
        };
        let mut rng = RngHandle::with_stream(opts.seed, 201 + s as u64);
        checks.push(mc_intensity_expectation_depm(
            &prior,
            DEFAULT_MC_TRUNCATION,
            opts.expectation_draws,
            &mut rng,
        )?);
    }
    Ok(checks)
}

/// Labelled counts for the prior-integration and partition-limit checks.
pub fn marginal_instances() -> Vec<(&'static str, LatentCounts, IdepmHypers)> {
    let unit = IdepmHypers::default();
    let counts = |i, j, t, entries: Vec<((usize, usize), Vec<u64>)>| {
        LatentCounts::from_edges(i, j, t, entries).expect("fixed instance is consistent")
    };
    vec![
        (
            "single customer 1x1 T=1",
            counts(1, 1, 1, vec![((0, 0), vec![1])]),
            unit.clone(),
        ),
        (
            "2x2 M=3 T=2",
            counts(2, 2, 2, vec![((0, 0), vec![2, 0]), ((1, 1), vec![0, 1])]),
            unit.clone(),
        ),
        (
            "2x2 M=5 T=3",
            counts(
                2,
                2,
                3,
                vec![
                    ((0, 0), vec![2, 0, 0]),
                    ((0, 1), vec![0, 1, 1]),
                    ((1, 1), vec![1, 0, 0]),
                ],
            ),
            IdepmHypers {
                alpha1: 0.5,
                alpha2: 2.0,
                gamma0: 2.0,
                c0: 0.5,
                ..unit
            },
        ),
    ]
}

/// Partitions for the partition-limit ladder.
pub fn partition_instances() -> Vec<(&'static str, LatentCounts, IdepmHypers)> {
    let unit = IdepmHypers::default();
    let counts = |i, j, t, entries: Vec<((usize, usize), Vec<u64>)>| {
        LatentCounts::from_edges(i, j, t, entries).expect("fixed instance is consistent")
    };
    vec![
        ("empty", LatentCounts::empty(2, 2, 1), unit.clone()),
        (
            "K=1 M=1",
            counts(1, 1, 1, vec![((0, 0), vec![1])]),
            unit.clone(),
        ),
        (
            "K=2 M=4",
            counts(2, 2, 2, vec![((0, 0), vec![2, 0]), ((1, 1), vec![1, 1])]),
            unit,
        ),
    ]
}

/// The hand-evaluated case `I = J = K = 1`, `m = 1`, unit hyperparameters:
/// `P(m, z) = 1/4`.
pub fn hand_case_check() -> Result<ExactCheck> {
    let counts = LatentCounts::from_edges(1, 1, 1, [((0, 0), vec![1])])?;
    Ok(ExactCheck {
        name: "hand case I=J=K=1 m=1".into(),
        expected: 0.25f64.ln(),
        value: log_marginal_infinite(&counts, &IdepmHypers::default())?,
        tolerance: 1e-12,
    })
}

pub fn run_suite(suite: Suite, opts: &SuiteOptions) -> Result<Vec<ReportLine>> {
    let name = suite.name();
    let mut lines = Vec::new();
    match suite {
        Suite::Expectations => {
            lines.extend(expectation_suite(opts)?.iter().map(|c| c.report_line(name)));
        }
        Suite::Marginals => {
            lines.push(hand_case_check()?.report_line(name));
            for (s, (label, counts, hypers)) in marginal_instances().into_iter().enumerate() {
                let mut rng = RngHandle::with_stream(opts.seed, 300 + s as u64);
                let check = verify_marginal_by_prior_mc(
                    label,
                    &counts,
                    &hypers,
                    opts.marginal_draws,
                    &mut rng,
                )?;
                lines.push(check.report_line(name));
            }
            for (label, counts, hypers) in partition_instances() {
                let report = verify_partition_limit(label, &counts, &hypers, &PARTITION_LADDER)?;
                lines.extend(report.report_lines(name));
            }
        }
        Suite::Moments => {
            let mut rng = RngHandle::with_stream(opts.seed, 400);
            for lambda in [0.3, 2.5, 40.0] {
                lines.push(mc_ztp_mean(lambda, opts.moment_draws, &mut rng)?.report_line(name));
            }
            for (customers, a) in [(5, 0.3), (40, 2.0), (150, 15.0)] {
                let check = mc_antoniak_mean(customers, a, opts.moment_draws, &mut rng)?;
                lines.push(check.report_line(name));
            }
        }
        Suite::Geweke => {
            for (s, model) in GewekeModel::ALL.into_iter().enumerate() {
                let cfg = GewekeConfig::new(model, opts.geweke_rounds).with_fault(opts.fault);
                let rng = RngHandle::with_stream(opts.seed, 500 + 10 * s as u64);
                lines.extend(geweke_joint_test(&cfg, &rng)?.report_lines(name));
            }
        }
    }
    Ok(lines)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_match_two_pass() {
        let xs = [1.0, 4.0, 2.5, -3.0, 0.25];
        let mut m = Moments::default();
        xs.iter().for_each(|&x| m.push(x));
        let mean = xs.iter().sum::<f64>() / 5.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
        assert!((m.mean - mean).abs() < 1e-14);
        assert!((m.variance() - var).abs() < 1e-13);
    }

    #[test]
    fn skipped_weights_keep_the_mean() {
        // E[sum lambda] = gamma0 / c0 at any truncation.
        let mut rng = RngHandle::new(3);
        let mut m = Moments::default();
        for _ in 0..100_000 {
            let mut sum = 0.0;
            let scale = for_each_atom_weight(&mut rng, 1000, 2.0, 0.5, |_, l| sum += l);
            m.push(sum * scale);
        }
        assert!(
            (m.mean - 4.0).abs() < 3.0 * m.se(),
            "{} vs 4 (se {})",
            m.mean,
            m.se()
        );
    }

    #[test]
    fn large_shapes_use_every_atom() {
        let mut rng = RngHandle::new(4);
        let mut visited = 0;
        for_each_atom_weight(&mut rng, 10, 5.0, 1.0, |_, _| visited += 1);
        assert_eq!(visited, 10);
    }

    #[test]
    fn grid_prior_draws_are_grid_points() {
        let mut rng = RngHandle::new(5);
        let prior = GammaParams::new(5.0, 5.0).unwrap();
        let grid = cepm_grid_points();
        for _ in 0..100 {
            let a = draw_grid_prior(&mut rng, &prior);
            assert!(grid.contains(&a));
        }
    }

    #[test]
    fn z_score_edge_cases() {
        assert_eq!(z_score(0.0, 0.0), 0.0);
        assert_eq!(z_score(1.0, 0.0), f64::INFINITY);
        assert_eq!(z_score(-2.0, 1.0), -2.0);
    }

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("everything".parse::<Suite>().is_err());
        assert_eq!("IDEPM".parse::<GewekeModel>().unwrap(), GewekeModel::Idepm);
    }
}
