//! Gibbs samplers for the truncated edge partition models.
//!
//! All three variants share the count model
//! `m(i,j,.) ~ Poisson(sum_k R(i,k) C(j,k) lambda_k)` with `x(i,j) = 1(m(i,j,.) >= 1)`
//! and a truncated gamma process `lambda_k ~ Gamma(gamma0 / T, c0)`. They
//! differ in the factor priors:
//!
//! * EPM: `R(i,k) ~ Gamma(a1, b1)`, `C(j,k) ~ Gamma(a2, b2)`, every
//!   hyperparameter under a `Gamma(e0, f0)` prior;
//! * CEPM: as EPM with the rates pinned to `b1 = C1 a1`, `b2 = C2 a2`;
//! * DEPM: each factor column lies on the simplex,
//!   `R(.,k) ~ Dirichlet(alpha1, ..., alpha1)`, likewise for `C`.
//!
//! A sweep resamples the counts, then for each side the factor
//! hyperparameter (with the factors integrated out) immediately followed by
//! the factors themselves, then `gamma0` (with `lambda` integrated out)
//! followed by `lambda`, and finally the conjugate rate hyperparameters.
//! Pairing each collapsed hyperparameter draw with a fresh draw of the
//! variables it was collapsed over keeps the sweep a valid blocked Gibbs
//! scan.

use crate::augment::{sample_concentration, sample_shape, AuxiliaryDraws};
use crate::counts::LatentCounts;
use crate::data::SparseBinaryMatrix;
use crate::distributions::{
    dirichlet_unchecked, gamma_unchecked, ln_gamma, log_sum_exp, multinomial_unchecked,
    ztp_unchecked, GammaParams, RngHandle,
};
use crate::error::{Error, Result};
use crate::options::{InjectedFault, SweepOptions};

pub const DEFAULT_E0: f64 = 0.01;
pub const DEFAULT_F0: f64 = 0.01;

/// Rates below this are raised to it before a zero-truncated Poisson draw.
pub const INTENSITY_FLOOR: f64 = 1e-300;

/// Grid size for the CEPM shape update: `1 / (1 + a) = 0.01, 0.02, ..., 0.99`.
pub const CEPM_GRID_POINTS: usize = 99;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TruncatedVariant {
    Epm,
    Cepm,
    Depm,
}

impl TruncatedVariant {
    pub fn name(self) -> &'static str {
        match self {
            TruncatedVariant::Epm => "epm",
            TruncatedVariant::Cepm => "cepm",
            TruncatedVariant::Depm => "depm",
        }
    }
}

impl std::str::FromStr for TruncatedVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "epm" => Ok(TruncatedVariant::Epm),
            "cepm" => Ok(TruncatedVariant::Cepm),
            "depm" => Ok(TruncatedVariant::Depm),
            other => Err(Error::Config(format!("unknown truncated model '{other}'"))),
        }
    }
}

/// Which factor matrix: rows (`U` or `phi`) or columns (`V` or `psi`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Rows,
    Cols,
}

#[derive(Clone, Debug, PartialEq)]
pub enum FactorPrior {
    /// `U ~ Gamma(a1, b1)`, `V ~ Gamma(a2, b2)`.
    Gamma { a1: f64, b1: f64, a2: f64, b2: f64 },
    /// Gamma factors with `b1 = c1 * a1` and `b2 = c2 * a2`.
    Constrained { a1: f64, a2: f64, c1: f64, c2: f64 },
    /// Simplex-constrained columns with symmetric Dirichlet priors.
    Dirichlet { alpha1: f64, alpha2: f64 },
}

impl FactorPrior {
    pub fn variant(&self) -> TruncatedVariant {
        match self {
            FactorPrior::Gamma { .. } => TruncatedVariant::Epm,
            FactorPrior::Constrained { .. } => TruncatedVariant::Cepm,
            FactorPrior::Dirichlet { .. } => TruncatedVariant::Depm,
        }
    }

    /// Shape (gamma variants) or concentration (Dirichlet) for a side.
    pub fn shape(&self, side: Side) -> f64 {
        match (self, side) {
            (FactorPrior::Gamma { a1, .. }, Side::Rows)
            | (FactorPrior::Constrained { a1, .. }, Side::Rows) => *a1,
            (FactorPrior::Gamma { a2, .. }, Side::Cols)
            | (FactorPrior::Constrained { a2, .. }, Side::Cols) => *a2,
            (FactorPrior::Dirichlet { alpha1, .. }, Side::Rows) => *alpha1,
            (FactorPrior::Dirichlet { alpha2, .. }, Side::Cols) => *alpha2,
        }
    }

    /// Gamma rate for a side; `None` for the Dirichlet prior.
    pub fn rate(&self, side: Side) -> Option<f64> {
        match (self, side) {
            (FactorPrior::Gamma { b1, .. }, Side::Rows) => Some(*b1),
            (FactorPrior::Gamma { b2, .. }, Side::Cols) => Some(*b2),
            (FactorPrior::Constrained { a1, c1, .. }, Side::Rows) => Some(c1 * a1),
            (FactorPrior::Constrained { a2, c2, .. }, Side::Cols) => Some(c2 * a2),
            (FactorPrior::Dirichlet { .. }, _) => None,
        }
    }

    fn set_shape(&mut self, side: Side, value: f64) {
        let slot = match (self, side) {
            (FactorPrior::Gamma { a1, .. }, Side::Rows)
            | (FactorPrior::Constrained { a1, .. }, Side::Rows) => a1,
            (FactorPrior::Gamma { a2, .. }, Side::Cols)
            | (FactorPrior::Constrained { a2, .. }, Side::Cols) => a2,
            (FactorPrior::Dirichlet { alpha1, .. }, Side::Rows) => alpha1,
            (FactorPrior::Dirichlet { alpha2, .. }, Side::Cols) => alpha2,
        };
        *slot = value;
    }

    fn values(&self) -> Vec<(&'static str, f64)> {
        match *self {
            FactorPrior::Gamma { a1, b1, a2, b2 } => {
                vec![("a1", a1), ("b1", b1), ("a2", a2), ("b2", b2)]
            }
            FactorPrior::Constrained { a1, a2, c1, c2 } => {
                vec![("a1", a1), ("a2", a2), ("c1", c1), ("c2", c2)]
            }
            FactorPrior::Dirichlet { alpha1, alpha2 } => {
                vec![("alpha1", alpha1), ("alpha2", alpha2)]
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hyperparameters {
    pub factors: FactorPrior,
    pub gamma0: f64,
    pub c0: f64,
    pub e0: f64,
    pub f0: f64,
}

impl Hyperparameters {
    /// EPM starting point: every hyperparameter at the hyperprior mean
    /// `e0 / f0 = 1`.
    pub fn epm() -> Self {
        Self::with_factors(FactorPrior::Gamma {
            a1: 1.0,
            b1: 1.0,
            a2: 1.0,
            b2: 1.0,
        })
    }

    /// CEPM with `C1 = I` and `C2 = J`.
    pub fn cepm(n_rows: usize, n_cols: usize) -> Self {
        Self::with_factors(FactorPrior::Constrained {
            a1: 1.0,
            a2: 1.0,
            c1: n_rows as f64,
            c2: n_cols as f64,
        })
    }

    pub fn depm() -> Self {
        Self::with_factors(FactorPrior::Dirichlet {
            alpha1: 1.0,
            alpha2: 1.0,
        })
    }

    pub fn for_variant(variant: TruncatedVariant, n_rows: usize, n_cols: usize) -> Self {
        match variant {
            TruncatedVariant::Epm => Self::epm(),
            TruncatedVariant::Cepm => Self::cepm(n_rows, n_cols),
            TruncatedVariant::Depm => Self::depm(),
        }
    }

    fn with_factors(factors: FactorPrior) -> Self {
        Hyperparameters {
            factors,
            gamma0: 1.0,
            c0: 1.0,
            e0: DEFAULT_E0,
            f0: DEFAULT_F0,
        }
    }

    pub fn variant(&self) -> TruncatedVariant {
        self.factors.variant()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in self.named_values() {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidParameter { name, value });
            }
        }
        Ok(())
    }

    /// Every hyperparameter with its conventional name.
    pub fn named_values(&self) -> Vec<(&'static str, f64)> {
        let mut values = self.factors.values();
        values.extend([
            ("gamma0", self.gamma0),
            ("c0", self.c0),
            ("e0", self.e0),
            ("f0", self.f0),
        ]);
        values
    }

    fn hyperprior(&self) -> GammaParams {
        GammaParams::new(self.e0, self.f0).expect("validated hyperprior")
    }
}

/// Full state of one truncated chain.
#[derive(Clone, Debug)]
pub struct TruncatedState {
    pub(crate) n_rows: usize,
    pub(crate) n_cols: usize,
    pub(crate) truncation: usize,
    /// `n_rows x T`, row-major: `U` or `phi`.
    pub(crate) row_factors: Vec<f64>,
    /// `n_cols x T`, row-major: `V` or `psi`.
    pub(crate) col_factors: Vec<f64>,
    pub(crate) lambda: Vec<f64>,
    pub(crate) counts: LatentCounts,
    pub(crate) hypers: Hyperparameters,
    pub(crate) rng: RngHandle,
    pub(crate) options: SweepOptions,
}

impl TruncatedState {
    /// Draws factors and atom weights from their priors, then runs one
    /// count-sampling pass against `x`.
    pub fn init(
        x: &SparseBinaryMatrix,
        truncation: usize,
        hypers: Hyperparameters,
        rng: RngHandle,
    ) -> Result<Self> {
        if truncation == 0 {
            return Err(Error::Config("truncation level must be at least 1".into()));
        }
        hypers.validate()?;
        let (n_rows, n_cols) = (x.n_rows(), x.n_cols());
        let mut state = TruncatedState {
            n_rows,
            n_cols,
            truncation,
            row_factors: vec![0.0; n_rows * truncation],
            col_factors: vec![0.0; n_cols * truncation],
            lambda: vec![0.0; truncation],
            counts: LatentCounts::empty(n_rows, n_cols, truncation),
            hypers,
            rng,
            options: SweepOptions::default(),
        };
        state.draw_from_prior();
        state.sample_latent_counts(x)?;
        Ok(state)
    }

    /// Reassembles a state from its parts, e.g. from a checkpoint.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        n_rows: usize,
        n_cols: usize,
        truncation: usize,
        row_factors: Vec<f64>,
        col_factors: Vec<f64>,
        lambda: Vec<f64>,
        counts: LatentCounts,
        hypers: Hyperparameters,
        rng: RngHandle,
    ) -> Result<Self> {
        hypers.validate()?;
        if truncation == 0
            || row_factors.len() != n_rows * truncation
            || col_factors.len() != n_cols * truncation
            || lambda.len() != truncation
            || counts.n_rows() != n_rows
            || counts.n_cols() != n_cols
            || counts.n_atoms() != truncation
        {
            return Err(Error::Inconsistent(
                "state parts have mismatched sizes".into(),
            ));
        }
        Ok(TruncatedState {
            n_rows,
            n_cols,
            truncation,
            row_factors,
            col_factors,
            lambda,
            counts,
            hypers,
            rng,
            options: SweepOptions::default(),
        })
    }

    /// Redraws factors and atom weights from the prior given the current
    /// hyperparameters. Counts are left untouched.
    pub fn draw_from_prior(&mut self) {
        let t = self.truncation;
        for side in [Side::Rows, Side::Cols] {
            let n = self.side_len(side);
            let shape = self.hypers.factors.shape(side);
            let factors = match side {
                Side::Rows => &mut self.row_factors,
                Side::Cols => &mut self.col_factors,
            };
            match self.hypers.factors.rate(side) {
                Some(rate) => {
                    for f in factors.iter_mut() {
                        *f = gamma_unchecked(&mut self.rng, shape, rate);
                    }
                }
                None => {
                    let alphas = vec![shape; n];
                    dirichlet_columns(&mut self.rng, factors, n, t, &alphas);
                }
            }
        }
        let shape = self.hypers.gamma0 / t as f64;
        for l in self.lambda.iter_mut() {
            *l = gamma_unchecked(&mut self.rng, shape, self.hypers.c0);
        }
    }

    pub fn with_options(mut self, options: SweepOptions) -> Self {
        self.options = options;
        self
    }

    pub fn set_options(&mut self, options: SweepOptions) {
        self.options = options;
    }

    pub fn options(&self) -> SweepOptions {
        self.options
    }

    pub fn variant(&self) -> TruncatedVariant {
        self.hypers.variant()
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn truncation(&self) -> usize {
        self.truncation
    }

    pub fn hypers(&self) -> &Hyperparameters {
        &self.hypers
    }

    pub fn hypers_mut(&mut self) -> &mut Hyperparameters {
        &mut self.hypers
    }

    pub fn counts(&self) -> &LatentCounts {
        &self.counts
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn lambda_mut(&mut self) -> &mut [f64] {
        &mut self.lambda
    }

    pub fn rng(&self) -> &RngHandle {
        &self.rng
    }

    pub fn rng_mut(&mut self) -> &mut RngHandle {
        &mut self.rng
    }

    /// Factor matrix for a side, `n x T` row-major.
    pub fn factors(&self, side: Side) -> &[f64] {
        match side {
            Side::Rows => &self.row_factors,
            Side::Cols => &self.col_factors,
        }
    }

    pub fn factors_mut(&mut self, side: Side) -> &mut [f64] {
        match side {
            Side::Rows => &mut self.row_factors,
            Side::Cols => &mut self.col_factors,
        }
    }

    pub fn row_factor(&self, i: usize, k: usize) -> f64 {
        self.row_factors[i * self.truncation + k]
    }

    pub fn col_factor(&self, j: usize, k: usize) -> f64 {
        self.col_factors[j * self.truncation + k]
    }

    fn side_len(&self, side: Side) -> usize {
        match side {
            Side::Rows => self.n_rows,
            Side::Cols => self.n_cols,
        }
    }

    /// `sum_k R(i,k) C(j,k) lambda_k`
    pub fn intensity(&self, i: usize, j: usize) -> f64 {
        let t = self.truncation;
        let r = &self.row_factors[i * t..(i + 1) * t];
        let c = &self.col_factors[j * t..(j + 1) * t];
        r.iter()
            .zip(c)
            .zip(&self.lambda)
            .map(|((r, c), l)| r * c * l)
            .sum()
    }

    /// Noisy-OR link probability `1 - exp(-intensity)`.
    pub fn link_probability(&self, i: usize, j: usize) -> f64 {
        -(-self.intensity(i, j)).exp_m1()
    }

    pub fn count_active_atoms(&self) -> usize {
        self.counts.active_atoms()
    }

    /// Column sums of a factor matrix, one per atom.
    pub fn factor_column_sums(&self, side: Side) -> Vec<f64> {
        column_sums(self.factors(side), self.truncation)
    }

    /// Redraws `m(i,j,.)` from the zero-truncated Poisson at every one-entry
    /// and splits it across atoms by a multinomial; zero entries get no
    /// counts. Marginals are rebuilt.
    pub fn sample_latent_counts(&mut self, x: &SparseBinaryMatrix) -> Result<()> {
        if x.n_rows() != self.n_rows || x.n_cols() != self.n_cols {
            return Err(Error::Config(format!(
                "data is {}x{} but the state is {}x{}",
                x.n_rows(),
                x.n_cols(),
                self.n_rows,
                self.n_cols
            )));
        }
        let t = self.truncation;
        self.counts.reset_edges(x.ones());
        let mut weights = vec![0.0; t];
        for (e, &(i, j)) in x.ones().iter().enumerate() {
            let r = &self.row_factors[i * t..(i + 1) * t];
            let c = &self.col_factors[j * t..(j + 1) * t];
            let mut total = 0.0;
            for k in 0..t {
                weights[k] = r[k] * c[k] * self.lambda[k];
                total += weights[k];
            }
            let n = ztp_unchecked(&mut self.rng, total.max(INTENSITY_FLOOR));
            if !(total > 0.0 && total.is_finite()) {
                total = log_space_weights(r, c, &self.lambda, &mut weights);
            }
            self.counts.edge_total[e] = n;
            let out = &mut self.counts.edge_atom[e * t..(e + 1) * t];
            multinomial_unchecked(&mut self.rng, n, &weights, total, out);
        }
        self.counts.recompute_marginals();
        Ok(())
    }

    /// Gamma-conjugate update of `U` then `V` (EPM and CEPM).
    pub fn sample_factors_epm(&mut self) -> Result<()> {
        if self.variant() == TruncatedVariant::Depm {
            return Err(Error::Config("gamma factor update on a DEPM state".into()));
        }
        self.update_factors(Side::Rows);
        self.update_factors(Side::Cols);
        Ok(())
    }

    /// Dirichlet-conjugate update of `phi` then `psi` (DEPM).
    pub fn sample_factors_depm(&mut self) -> Result<()> {
        if self.variant() != TruncatedVariant::Depm {
            return Err(Error::Config(
                "Dirichlet factor update on a gamma-factor state".into(),
            ));
        }
        self.update_factors(Side::Rows);
        self.update_factors(Side::Cols);
        Ok(())
    }

    fn update_factors(&mut self, side: Side) {
        let t = self.truncation;
        let n = self.side_len(side);
        let shape = self.hypers.factors.shape(side);
        let rate = self.hypers.factors.rate(side);
        let (factors, other, stats) = match side {
            Side::Rows => (
                &mut self.row_factors,
                &self.col_factors,
                &self.counts.row_atom,
            ),
            Side::Cols => (
                &mut self.col_factors,
                &self.row_factors,
                &self.counts.col_atom,
            ),
        };
        match rate {
            Some(prior_rate) => {
                let other_sums = column_sums(other, t);
                for k in 0..t {
                    let rate = prior_rate + other_sums[k] * self.lambda[k];
                    for i in 0..n {
                        let m = stats[i * t + k] as f64;
                        factors[i * t + k] = gamma_unchecked(&mut self.rng, shape + m, rate);
                    }
                }
            }
            None => {
                let alphas: Vec<f64> = stats.iter().map(|&m| shape + m as f64).collect();
                dirichlet_columns(&mut self.rng, factors, n, t, &alphas);
            }
        }
    }

    /// `lambda_k ~ Gamma(gamma0 / T + m(.,.,k), c0 + (sum_i R(i,k)) (sum_j C(j,k)))`;
    /// for the DEPM the column sums are one.
    pub fn sample_lambda(&mut self) {
        let t = self.truncation;
        let shape = self.hypers.gamma0 / t as f64;
        let exposure = self.atom_exposure();
        for k in 0..t {
            let m = self.counts.atom_total[k] as f64;
            self.lambda[k] =
                gamma_unchecked(&mut self.rng, shape + m, self.hypers.c0 + exposure[k]);
        }
    }

    /// `(sum_i R(i,k)) (sum_j C(j,k))` per atom.
    fn atom_exposure(&self) -> Vec<f64> {
        if self.variant() == TruncatedVariant::Depm {
            return vec![1.0; self.truncation];
        }
        let rows = column_sums(&self.row_factors, self.truncation);
        let cols = column_sums(&self.col_factors, self.truncation);
        rows.iter().zip(&cols).map(|(r, c)| r * c).collect()
    }

    /// Conjugate updates of `b1`, `b2` (EPM only) and `c0` (all variants).
    pub fn sample_hyper_rates(&mut self) {
        let t = self.truncation as f64;
        let (e0, f0) = (self.hypers.e0, self.hypers.f0);
        if let FactorPrior::Gamma { a1, b1, a2, b2 } = &mut self.hypers.factors {
            let u_total: f64 = self.row_factors.iter().sum();
            let v_total: f64 = self.col_factors.iter().sum();
            *b1 = gamma_unchecked(
                &mut self.rng,
                e0 + self.n_rows as f64 * t * *a1,
                f0 + u_total,
            );
            *b2 = gamma_unchecked(
                &mut self.rng,
                e0 + self.n_cols as f64 * t * *a2,
                f0 + v_total,
            );
        }
        let lambda_total: f64 = self.lambda.iter().sum();
        let rate = (f0 + lambda_total) * self.options.c0_rate_factor();
        self.hypers.c0 = gamma_unchecked(&mut self.rng, e0 + self.hypers.gamma0, rate);
    }

    /// Augmented updates of `a1` then `a2` (EPM), with the factors of the
    /// same side integrated out.
    pub fn sample_hyper_shapes_epm(&mut self) -> Result<[AuxiliaryDraws; 2]> {
        if self.variant() != TruncatedVariant::Epm {
            return Err(Error::Config(
                "closed-form shape update needs an EPM state".into(),
            ));
        }
        Ok([
            self.update_gamma_shape(Side::Rows),
            self.update_gamma_shape(Side::Cols),
        ])
    }

    fn update_gamma_shape(&mut self, side: Side) -> AuxiliaryDraws {
        let t = self.truncation;
        let n = self.side_len(side) as f64;
        let shape = self.hypers.factors.shape(side);
        let rate = self.hypers.factors.rate(side).expect("gamma factors");
        let (other, stats) = match side {
            Side::Rows => (&self.col_factors, &self.counts.row_atom),
            Side::Cols => (&self.row_factors, &self.counts.col_atom),
        };
        let other_sums = column_sums(other, t);
        // -ln(b / (b + s lambda)) = ln(1 + s lambda / b) >= 0
        let log_rate: f64 = n * other_sums
            .iter()
            .zip(&self.lambda)
            .map(|(s, l)| (s * l / rate).ln_1p())
            .sum::<f64>();
        let (value, aux) = sample_shape(
            &mut self.rng,
            shape,
            stats.iter().copied(),
            log_rate,
            self.hypers.e0,
            self.hypers.f0,
        );
        self.hypers.factors.set_shape(side, value);
        aux
    }

    /// Grid Gibbs updates of `a1` then `a2` (CEPM); the rates follow from
    /// the constraints.
    pub fn sample_hyper_shapes_cepm(&mut self) -> Result<()> {
        if self.variant() != TruncatedVariant::Cepm {
            return Err(Error::Config("grid shape update needs a CEPM state".into()));
        }
        self.update_grid_shape(Side::Rows)?;
        self.update_grid_shape(Side::Cols)
    }

    fn update_grid_shape(&mut self, side: Side) -> Result<()> {
        let grid = self.cepm_grid_log_weights(side)?;
        let log_weights: Vec<f64> = grid.iter().map(|&(_, w)| w).collect();
        let norm = log_sum_exp(&log_weights);
        if !norm.is_finite() {
            return Err(Error::Inconsistent(format!(
                "grid log-weights for {side:?} do not normalize ({norm})"
            )));
        }
        let target = self.rng.uniform();
        let mut acc = 0.0;
        let mut chosen = grid.len() - 1;
        for (idx, w) in log_weights.iter().enumerate() {
            acc += (w - norm).exp();
            if target < acc {
                chosen = idx;
                break;
            }
        }
        self.hypers.factors.set_shape(side, grid[chosen].0);
        Ok(())
    }

    /// The 99 grid points `a` with `1 / (1 + a) = 0.01, ..., 0.99` and their
    /// unnormalized log posterior weights: the likelihood of the side's
    /// count marginals with its factors integrated out, times the
    /// `Gamma(e0, f0)` density at `a`. Since the rate is `C a`, the factor
    /// `(b + sum V lambda)^(-m(.,.,k))` of the integrated likelihood depends
    /// on `a` and is kept.
    pub fn cepm_grid_log_weights(&self, side: Side) -> Result<Vec<(f64, f64)>> {
        let FactorPrior::Constrained { c1, c2, .. } = self.hypers.factors else {
            return Err(Error::Config("grid weights need a CEPM state".into()));
        };
        let constant = match side {
            Side::Rows => c1,
            Side::Cols => c2,
        };
        let t = self.truncation;
        let n = self.side_len(side) as f64;
        let (other, stats) = match side {
            Side::Rows => (&self.col_factors, &self.counts.row_atom),
            Side::Cols => (&self.row_factors, &self.counts.col_atom),
        };
        let exposure: Vec<f64> = column_sums(other, t)
            .iter()
            .zip(&self.lambda)
            .map(|(s, l)| s * l)
            .collect();
        let prior = self.hypers.hyperprior();
        let occupied: Vec<u64> = stats.iter().copied().filter(|&m| m > 0).collect();
        Ok(cepm_grid_points()
            .into_iter()
            .map(|a| {
                let b = constant * a;
                let mut log_w = prior.ln_pdf(a);
                for (s, &m) in exposure.iter().zip(&self.counts.atom_total) {
                    log_w -= n * a * (s / b).ln_1p() + m as f64 * (b + s).ln();
                }
                let ln_gamma_a = ln_gamma(a);
                for &m in &occupied {
                    log_w += ln_gamma(a + m as f64) - ln_gamma_a;
                }
                (a, log_w)
            })
            .collect())
    }

    /// Beta/Antoniak augmented updates of `alpha1` then `alpha2` (DEPM).
    pub fn sample_hyper_alphas_depm(&mut self) -> Result<[AuxiliaryDraws; 2]> {
        if self.variant() != TruncatedVariant::Depm {
            return Err(Error::Config(
                "concentration update needs a DEPM state".into(),
            ));
        }
        Ok([
            self.update_concentration(Side::Rows),
            self.update_concentration(Side::Cols),
        ])
    }

    fn update_concentration(&mut self, side: Side) -> AuxiliaryDraws {
        let n = self.side_len(side);
        let alpha = self.hypers.factors.shape(side);
        let stats = match side {
            Side::Rows => &self.counts.row_atom,
            Side::Cols => &self.counts.col_atom,
        };
        let (value, aux) = sample_concentration(
            &mut self.rng,
            alpha,
            n,
            self.counts.atom_total.iter().copied(),
            stats.iter().copied(),
            self.hypers.e0,
            self.hypers.f0,
        );
        self.hypers.factors.set_shape(side, value);
        aux
    }

    /// Augmented update of `gamma0` with `lambda` integrated out.
    pub fn sample_gamma0_truncated(&mut self) -> AuxiliaryDraws {
        let t = self.truncation as f64;
        let c0 = self.hypers.c0;
        let log_rate = self
            .atom_exposure()
            .iter()
            .map(|e| (e / c0).ln_1p())
            .sum::<f64>()
            / t;
        let (value, aux) = sample_shape(
            &mut self.rng,
            self.hypers.gamma0 / t,
            self.counts.atom_total.iter().copied(),
            log_rate,
            self.hypers.e0,
            self.hypers.f0,
        );
        self.hypers.gamma0 = value;
        aux
    }

    fn update_factor_hyper(&mut self, side: Side) -> Result<()> {
        match self.variant() {
            TruncatedVariant::Epm => {
                self.update_gamma_shape(side);
            }
            TruncatedVariant::Cepm => self.update_grid_shape(side)?,
            TruncatedVariant::Depm => {
                self.update_concentration(side);
            }
        }
        Ok(())
    }

    /// One full scan: counts; for rows then columns, the factor
    /// hyperparameter and then the factors; `gamma0` then `lambda`; the rate
    /// hyperparameters.
    pub fn gibbs_sweep(&mut self, x: &SparseBinaryMatrix) -> Result<()> {
        self.sample_latent_counts(x)?;
        let hypers = !self.options.freeze_hypers;
        if self.options.fault == Some(InjectedFault::HypersLast) {
            self.update_factors(Side::Rows);
            self.update_factors(Side::Cols);
            self.sample_lambda();
            if hypers {
                self.update_factor_hyper(Side::Rows)?;
                self.update_factor_hyper(Side::Cols)?;
                self.sample_gamma0_truncated();
                self.sample_hyper_rates();
            }
            return Ok(());
        }
        for side in [Side::Rows, Side::Cols] {
            if hypers {
                self.update_factor_hyper(side)?;
            }
            self.update_factors(side);
        }
        if hypers {
            self.sample_gamma0_truncated();
        }
        self.sample_lambda();
        if hypers {
            self.sample_hyper_rates();
        }
        Ok(())
    }

    /// Column-sum check for the DEPM simplex constraint.
    pub fn max_simplex_error(&self) -> f64 {
        if self.variant() != TruncatedVariant::Depm {
            return 0.0;
        }
        [Side::Rows, Side::Cols]
            .iter()
            .flat_map(|&side| self.factor_column_sums(side))
            .map(|s| (s - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Draws a fresh count array for every cell (zeros included) from the
    /// Poisson model at the current parameters, and returns the binary
    /// matrix it induces. The counts are stored in the state.
    pub fn regenerate_data(&mut self) -> Result<SparseBinaryMatrix> {
        use rand_distr::{Distribution, Poisson};
        let t = self.truncation;
        let mut entries = Vec::new();
        let mut per_atom = vec![0u64; t];
        for i in 0..self.n_rows {
            for j in 0..self.n_cols {
                let mut any = false;
                for k in 0..t {
                    let rate = self.row_factor(i, k) * self.col_factor(j, k) * self.lambda[k];
                    per_atom[k] = if rate > 0.0 && rate.is_finite() {
                        Poisson::new(rate)
                            .map_err(|_| Error::param("poisson rate", rate))?
                            .sample(&mut self.rng) as u64
                    } else {
                        0
                    };
                    any |= per_atom[k] > 0;
                }
                if any {
                    entries.push(((i, j), per_atom.clone()));
                }
            }
        }
        let x = SparseBinaryMatrix::new(self.n_rows, self.n_cols, entries.iter().map(|e| e.0))?;
        self.counts = LatentCounts::from_edges(self.n_rows, self.n_cols, t, entries)?;
        Ok(x)
    }
}

/// The CEPM shape grid: `a` with `1 / (1 + a) = 0.01, 0.02, ..., 0.99`,
/// in decreasing order.
pub fn cepm_grid_points() -> Vec<f64> {
    (1..=CEPM_GRID_POINTS)
        .map(|g| {
            let p = g as f64 / 100.0;
            (1.0 - p) / p
        })
        .collect()
}

fn column_sums(factors: &[f64], t: usize) -> Vec<f64> {
    let mut sums = vec![0.0; t];
    for row in factors.chunks_exact(t) {
        for (s, f) in sums.iter_mut().zip(row) {
            *s += f;
        }
    }
    sums
}

/// Fills each column `k` of the `n x t` matrix with a Dirichlet draw whose
/// concentrations are `alphas[i * t + k]` (or `alphas[i]` when
/// `alphas.len() == n`).
fn dirichlet_columns(rng: &mut RngHandle, factors: &mut [f64], n: usize, t: usize, alphas: &[f64]) {
    let mut column_alphas = vec![0.0; n];
    let mut draw = vec![0.0; n];
    for k in 0..t {
        for i in 0..n {
            column_alphas[i] = if alphas.len() == n {
                alphas[i]
            } else {
                alphas[i * t + k]
            };
        }
        dirichlet_unchecked(rng, &column_alphas, &mut draw);
        for i in 0..n {
            factors[i * t + k] = draw[i];
        }
    }
}

/// Recomputes partition weights in log space when the linear products
/// underflow; returns their (positive) total.
fn log_space_weights(r: &[f64], c: &[f64], lambda: &[f64], weights: &mut [f64]) -> f64 {
    let logs: Vec<f64> = (0..weights.len())
        .map(|k| r[k].ln() + c[k].ln() + lambda[k].ln())
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (w, l) in weights.iter_mut().zip(&logs) {
        *w = if max.is_finite() {
            (l - max).exp()
        } else {
            1.0
        };
        total += *w;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_matrix() -> SparseBinaryMatrix {
        SparseBinaryMatrix::new(3, 4, [(0, 0), (0, 2), (1, 1), (2, 3), (2, 0)]).unwrap()
    }

    fn state(variant: TruncatedVariant, t: usize, seed: u64) -> TruncatedState {
        let x = small_matrix();
        TruncatedState::init(
            &x,
            t,
            Hyperparameters::for_variant(variant, 3, 4),
            RngHandle::new(seed),
        )
        .unwrap()
    }

    fn mean_se(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    }

    #[test]
    fn init_respects_structure() {
        let x = small_matrix();
        for variant in [
            TruncatedVariant::Epm,
            TruncatedVariant::Cepm,
            TruncatedVariant::Depm,
        ] {
            let s = state(variant, 5, 1);
            assert!(s.max_simplex_error() < 1e-9);
            s.counts().audit().unwrap();
            assert_eq!(s.counts().edges(), x.ones());
            for e in 0..x.n_ones() {
                assert!(s.counts().edge_total(e) >= 1);
            }
            let again = state(variant, 5, 1);
            assert_eq!(s.row_factors, again.row_factors);
            assert_eq!(s.lambda, again.lambda);
            assert_eq!(s.counts, again.counts);
        }
        assert!(TruncatedState::init(&x, 0, Hyperparameters::epm(), RngHandle::new(0)).is_err());
        let mut bad = Hyperparameters::epm();
        bad.c0 = -1.0;
        assert!(TruncatedState::init(&x, 2, bad, RngHandle::new(0)).is_err());
    }

    #[test]
    fn intensity_and_link_probability() {
        let mut s = state(TruncatedVariant::Epm, 1, 2);
        s.row_factors[0] = 2.0;
        s.col_factors[0] = 3.0;
        s.lambda[0] = 0.5;
        assert_eq!(s.intensity(0, 0), 3.0);
        s.lambda[0] = std::f64::consts::LN_2 / 6.0;
        assert!((s.link_probability(0, 0) - 0.5).abs() < 1e-15);
        s.lambda[0] = 1.5 / 6.0;
        assert!((s.link_probability(0, 0) - 0.776869839851570).abs() < 1e-12);
        s.lambda[0] = 0.0;
        assert_eq!(s.link_probability(0, 0), 0.0);

        let s = state(TruncatedVariant::Depm, 7, 3);
        for i in 0..3 {
            for j in 0..4 {
                let mut brute = 0.0;
                for k in 0..7 {
                    brute += s.row_factor(i, k) * s.col_factor(j, k) * s.lambda()[k];
                }
                assert!((s.intensity(i, j) - brute).abs() <= 1e-12 * brute.max(1e-300));
            }
        }
    }

    #[test]
    fn counts_follow_the_data() {
        let x = small_matrix();
        let mut s = state(TruncatedVariant::Epm, 1, 4);
        s.sample_latent_counts(&x).unwrap();
        for e in 0..x.n_ones() {
            assert_eq!(s.counts().edge_counts(e)[0], s.counts().edge_total(e));
        }
        let mut s = state(TruncatedVariant::Epm, 2, 5);
        s.lambda[1] = 0.0;
        s.sample_latent_counts(&x).unwrap();
        assert_eq!(s.counts().atom(1), 0);
        let wrong = SparseBinaryMatrix::zeros(2, 2).unwrap();
        assert!(s.sample_latent_counts(&wrong).is_err());
    }

    #[test]
    fn underflowing_intensity_still_partitions() {
        let x = small_matrix();
        let mut s = state(TruncatedVariant::Depm, 3, 6);
        for f in s.row_factors.iter_mut() {
            *f = 1e-200;
        }
        for f in s.col_factors.iter_mut() {
            *f = 1e-200;
        }
        s.sample_latent_counts(&x).unwrap();
        s.counts().audit().unwrap();
        assert_eq!(s.counts().total(), x.n_ones() as u64);
    }

    #[test]
    fn epm_factor_conditional_mean() {
        let mut s = state(TruncatedVariant::Epm, 2, 7);
        let frozen = s.clone();
        let colsum = frozen.factor_column_sums(Side::Cols);
        let (a1, b1) = (1.0, 1.0);
        let m = frozen.counts().row(0, 1) as f64;
        let expected = (a1 + m) / (b1 + colsum[1] * frozen.lambda[1]);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| {
                s.row_factors.copy_from_slice(&frozen.row_factors);
                s.col_factors.copy_from_slice(&frozen.col_factors);
                s.update_factors(Side::Rows);
                s.row_factor(0, 1)
            })
            .collect();
        let (mean, se) = mean_se(&draws);
        assert!((mean - expected).abs() < 3.0 * se, "{mean} vs {expected}");
    }

    #[test]
    fn epm_factor_prior_limit() {
        let x = SparseBinaryMatrix::zeros(3, 3).unwrap();
        let mut hypers = Hyperparameters::epm();
        hypers.factors = FactorPrior::Gamma {
            a1: 1.0,
            b1: 1e6,
            a2: 1.0,
            b2: 1.0,
        };
        let mut s = TruncatedState::init(&x, 2, hypers, RngHandle::new(8)).unwrap();
        s.sample_factors_epm().unwrap();
        assert!(s.row_factors.iter().all(|&u| u < 1e-3));
        assert!(s.sample_factors_depm().is_err());
    }

    #[test]
    fn depm_factor_conditional_mean_and_simplex() {
        let mut s = state(TruncatedVariant::Depm, 2, 9);
        let alpha1 = s.hypers().factors.shape(Side::Rows);
        let m_i = s.counts().row(2, 0) as f64;
        let m_k = s.counts().atom(0) as f64;
        let expected = (alpha1 + m_i) / (3.0 * alpha1 + m_k);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| {
                s.sample_factors_depm().unwrap();
                assert!(s.max_simplex_error() < 1e-9);
                s.row_factor(2, 0)
            })
            .collect();
        let (mean, se) = mean_se(&draws);
        assert!((mean - expected).abs() < 3.0 * se, "{mean} vs {expected}");
        assert!(s.sample_factors_epm().is_err());
    }

    #[test]
    fn depm_empty_data_gives_symmetric_columns() {
        let x = SparseBinaryMatrix::zeros(4, 2).unwrap();
        let mut s =
            TruncatedState::init(&x, 3, Hyperparameters::depm(), RngHandle::new(10)).unwrap();
        let mut acc = 0.0;
        let n = 50_000;
        for _ in 0..n {
            s.sample_factors_depm().unwrap();
            acc += s.row_factor(1, 2);
        }
        assert!((acc / n as f64 - 0.25).abs() < 0.005);
    }

    #[test]
    fn lambda_conditional_moments() {
        let mut s = state(TruncatedVariant::Depm, 4, 11);
        s.counts.atom_total = vec![0, 5, 0, 0];
        s.hypers.c0 = 1.0;
        s.hypers.gamma0 = 2.0;
        let n = 100_000;
        let mut empty = Vec::with_capacity(n);
        let mut loaded = Vec::with_capacity(n);
        for _ in 0..n {
            s.sample_lambda();
            empty.push(s.lambda[0]);
            loaded.push(s.lambda[1]);
        }
        let (mean, se) = mean_se(&loaded);
        let expected = (0.5 + 5.0) / 2.0;
        assert!((mean - expected).abs() < 3.0 * se, "{mean}");
        let (mean, se) = mean_se(&empty);
        let expected = 2.0 / (4.0 * 2.0);
        assert!((mean - expected).abs() < 3.0 * se, "{mean}");

        let mut s = state(TruncatedVariant::Epm, 3, 12);
        let exposure = s.atom_exposure();
        let expected = (1.0 / 3.0 + s.counts().atom(2) as f64) / (1.0 + exposure[2]);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| {
                s.sample_lambda();
                s.lambda[2]
            })
            .collect();
        let (mean, se) = mean_se(&draws);
        assert!((mean - expected).abs() < 3.0 * se, "{mean} vs {expected}");
    }

    #[test]
    fn c0_conditional_moment() {
        let mut s = state(TruncatedVariant::Depm, 3, 13);
        s.hypers.gamma0 = 2.0;
        let lambda_total: f64 = s.lambda.iter().sum();
        let expected = (s.hypers.e0 + 2.0) / (s.hypers.f0 + lambda_total);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| {
                s.sample_hyper_rates();
                s.hypers.c0
            })
            .collect();
        let (mean, se) = mean_se(&draws);
        assert!((mean - expected).abs() < 3.0 * se);
        assert_eq!(Hyperparameters::depm().e0, 0.01);
        assert_eq!(Hyperparameters::depm().f0, 0.01);
    }

    #[test]
    fn c0_shrinks_with_large_lambda_mass() {
        let mut s = state(TruncatedVariant::Depm, 3, 14);
        s.lambda = vec![1e6; 3];
        s.sample_hyper_rates();
        assert!(s.hypers.c0 < 1e-3);
    }

    #[test]
    fn epm_shape_update_without_data() {
        let x = SparseBinaryMatrix::zeros(3, 3).unwrap();
        let mut s =
            TruncatedState::init(&x, 2, Hyperparameters::epm(), RngHandle::new(15)).unwrap();
        let [rows, cols] = s.sample_hyper_shapes_epm().unwrap();
        assert_eq!(rows.total_tables(), 0);
        assert_eq!(cols.total_tables(), 0);
        assert!(s.sample_hyper_alphas_depm().is_err());
    }

    #[test]
    fn epm_single_customer_opens_one_table() {
        let x = SparseBinaryMatrix::new(2, 2, [(1, 0)]).unwrap();
        let mut s =
            TruncatedState::init(&x, 1, Hyperparameters::epm(), RngHandle::new(16)).unwrap();
        s.counts = LatentCounts::from_edges(2, 2, 1, [((1, 0), vec![1])]).unwrap();
        let [rows, _] = s.sample_hyper_shapes_epm().unwrap();
        assert_eq!(rows.tables, vec![(1, 1)]);
    }

    #[test]
    fn aux_draws_respect_bounds() {
        let mut s = state(TruncatedVariant::Depm, 4, 17);
        for _ in 0..50 {
            s.gibbs_sweep(&small_matrix()).unwrap();
            let [rows, cols] = s.sample_hyper_alphas_depm().unwrap();
            for aux in [rows, cols] {
                assert!(aux.tables.iter().all(|&(m, w)| w >= 1 && w <= m));
                assert!(aux.log_betas.iter().all(|&l| l < 0.0));
                assert_eq!(aux.log_betas.len(), s.count_active_atoms());
            }
            let gamma_aux = s.sample_gamma0_truncated();
            assert!(gamma_aux.tables.iter().all(|&(m, w)| w >= 1 && w <= m));
        }
    }

    #[test]
    fn depm_alphas_without_data_follow_the_hyperprior() {
        let x = SparseBinaryMatrix::zeros(3, 3).unwrap();
        let mut hypers = Hyperparameters::depm();
        hypers.e0 = 2.0;
        hypers.f0 = 4.0;
        let mut s = TruncatedState::init(&x, 2, hypers, RngHandle::new(18)).unwrap();
        let draws: Vec<f64> = (0..100_000)
            .map(|_| {
                let [rows, _] = s.sample_hyper_alphas_depm().unwrap();
                assert!(rows.log_betas.is_empty() && rows.tables.is_empty());
                s.hypers.factors.shape(Side::Rows)
            })
            .collect();
        let (mean, se) = mean_se(&draws);
        assert!((mean - 0.5).abs() < 3.0 * se);
    }

    #[test]
    fn gamma0_rates_by_variant() {
        // Without counts the DEPM draw is Gamma(e0, f0 - ln(c0 / (c0 + 1))).
        let x = SparseBinaryMatrix::zeros(3, 3).unwrap();
        let mut hypers = Hyperparameters::depm();
        hypers.e0 = 3.0;
        hypers.c0 = 0.5;
        let mut s = TruncatedState::init(&x, 4, hypers, RngHandle::new(19)).unwrap();
        s.sample_latent_counts(&x).unwrap();
        let rate = 0.01 - (0.5f64 / 1.5).ln();
        let draws: Vec<f64> = (0..100_000)
            .map(|_| {
                s.sample_gamma0_truncated();
                s.hypers.gamma0
            })
            .collect();
        let (mean, se) = mean_se(&draws);
        assert!((mean - 3.0 / rate).abs() < 3.0 * se, "{mean}");

        // EPM with counts: frozen-state gamma moment of the augmented draw.
        let mut s = state(TruncatedVariant::Epm, 2, 20);
        s.hypers.gamma0 = 2.0;
        let frozen = s.clone();
        let c0 = frozen.hypers.c0;
        let log_rate: f64 = frozen
            .atom_exposure()
            .iter()
            .map(|e| (e / c0).ln_1p())
            .sum::<f64>()
            / 2.0;
        let mut draws = Vec::new();
        let mut tables = Vec::new();
        for _ in 0..100_000 {
            s.hypers.gamma0 = 2.0;
            let aux = s.sample_gamma0_truncated();
            tables.push(aux.total_tables() as f64);
            draws.push(s.hypers.gamma0);
        }
        let mean_tables = tables.iter().sum::<f64>() / tables.len() as f64;
        let expected = (frozen.hypers.e0 + mean_tables) / (frozen.hypers.f0 + log_rate);
        let (mean, se) = mean_se(&draws);
        assert!((mean - expected).abs() < 3.0 * se, "{mean} vs {expected}");
    }

    #[test]
    fn cepm_grid_has_99_points_and_matches_prior_without_data() {
        let x = SparseBinaryMatrix::zeros(3, 3).unwrap();
        let mut s =
            TruncatedState::init(&x, 2, Hyperparameters::cepm(3, 3), RngHandle::new(21)).unwrap();
        for l in s.lambda.iter_mut() {
            *l = 0.0;
        }
        let grid = s.cepm_grid_log_weights(Side::Rows).unwrap();
        assert_eq!(grid.len(), CEPM_GRID_POINTS);
        assert!((grid[0].0 - 99.0).abs() < 1e-12);
        assert!((grid[98].0 - 1.0 / 99.0).abs() < 1e-12);
        let prior = GammaParams::new(0.01, 0.01).unwrap();
        for (a, w) in grid {
            assert!((w - prior.ln_pdf(a)).abs() < 1e-12);
        }
    }

    #[test]
    fn cepm_grid_matches_direct_marginal() {
        let x = small_matrix();
        let mut s = state(TruncatedVariant::Cepm, 3, 25);
        for _ in 0..5 {
            s.gibbs_sweep(&x).unwrap();
        }
        let grid = s.cepm_grid_log_weights(Side::Rows).unwrap();
        // Integrate each U(i,k) against its gamma prior directly.
        let direct: Vec<f64> = grid
            .iter()
            .map(|&(a, _)| {
                let b = 3.0 * a;
                let mut total = GammaParams::new(0.01, 0.01).unwrap().ln_pdf(a);
                for k in 0..3 {
                    let s_k: f64 = (0..4).map(|j| s.col_factor(j, k)).sum::<f64>() * s.lambda[k];
                    for i in 0..3 {
                        let m = s.counts().row(i, k) as f64;
                        total +=
                            a * b.ln() + ln_gamma(a + m) - ln_gamma(a) - (a + m) * (b + s_k).ln();
                    }
                }
                total
            })
            .collect();
        let normalize = |w: Vec<f64>| {
            let z = log_sum_exp(&w);
            w.into_iter().map(move |v| v - z).collect::<Vec<_>>()
        };
        let ours = normalize(grid.iter().map(|g| g.1).collect());
        for (a, b) in ours.iter().zip(normalize(direct)) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn cepm_constraint_holds_after_updates() {
        let x = small_matrix();
        let mut s = state(TruncatedVariant::Cepm, 3, 22);
        for _ in 0..20 {
            s.gibbs_sweep(&x).unwrap();
            let FactorPrior::Constrained { a1, a2, c1, c2 } = s.hypers.factors else {
                panic!()
            };
            assert_eq!(s.hypers.factors.rate(Side::Rows), Some(c1 * a1));
            assert_eq!(s.hypers.factors.rate(Side::Cols), Some(c2 * a2));
            assert_eq!((c1, c2), (3.0, 4.0));
        }
        assert!(s.sample_hyper_shapes_epm().is_err());
    }

    #[test]
    fn sweep_on_empty_matrix_keeps_counts_zero() {
        let x = SparseBinaryMatrix::zeros(5, 5).unwrap();
        for variant in [TruncatedVariant::Epm, TruncatedVariant::Depm] {
            let mut s = TruncatedState::init(
                &x,
                4,
                Hyperparameters::for_variant(variant, 5, 5),
                RngHandle::new(23),
            )
            .unwrap();
            for _ in 0..10 {
                s.gibbs_sweep(&x).unwrap();
                assert_eq!(s.counts().total(), 0);
                assert_eq!(s.count_active_atoms(), 0);
            }
        }
    }

    #[test]
    fn active_atoms_match_recount() {
        let mut s = state(TruncatedVariant::Depm, 6, 24);
        for _ in 0..10 {
            s.gibbs_sweep(&small_matrix()).unwrap();
            let brute = (0..6).filter(|&k| s.counts().atom(k) > 0).count();
            assert_eq!(s.count_active_atoms(), brute);
        }
        s.counts = LatentCounts::from_edges(3, 4, 6, [((0, 0), vec![0, 0, 2, 0, 0, 0])]).unwrap();
        assert_eq!(s.count_active_atoms(), 1);
    }
}
