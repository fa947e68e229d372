//! Auxiliary-variable updates for shape and concentration hyperparameters.
//!
//! Ratios `Gamma(u + n) / Gamma(u)` are expanded with Chinese-restaurant
//! table counts (Antoniak draws), and `Gamma(u) / Gamma(u + n)` with a beta
//! auxiliary. Conditional on the auxiliaries the hyperparameter is gamma
//! distributed under a `Gamma(e0, f0)` prior.

use crate::distributions::{antoniak_unchecked, gamma_unchecked, sample_ln_beta, RngHandle};

/// Transient draws made inside one hyperparameter update.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AuxiliaryDraws {
    /// `(customers, tables)` for every restaurant with at least one customer.
    pub tables: Vec<(u64, u64)>,
    /// `ln v` for every atom with a positive total count.
    pub log_betas: Vec<f64>,
}

impl AuxiliaryDraws {
    pub fn total_tables(&self) -> u64 {
        self.tables.iter().map(|&(_, t)| t).sum()
    }

    pub fn log_beta_sum(&self) -> f64 {
        self.log_betas.iter().sum()
    }

    pub(crate) fn seat(&mut self, rng: &mut RngHandle, customers: u64, concentration: f64) {
        if customers > 0 {
            let tables = antoniak_unchecked(rng, customers, concentration);
            self.tables.push((customers, tables));
        }
    }
}

/// Update for a parameter `a` whose likelihood is
/// `prod (Gamma(s + m) / Gamma(s)) * exp(-a * log_rate)` with `s = a / scale`,
/// where `m` ranges over `customer_counts` and `log_rate >= 0`.
/// `seating` is the current value of `s`.
pub(crate) fn sample_shape(
    rng: &mut RngHandle,
    seating: f64,
    customer_counts: impl IntoIterator<Item = u64>,
    log_rate: f64,
    e0: f64,
    f0: f64,
) -> (f64, AuxiliaryDraws) {
    let mut aux = AuxiliaryDraws::default();
    for m in customer_counts {
        aux.seat(rng, m, seating);
    }
    debug_assert!(log_rate >= 0.0);
    let draw = gamma_unchecked(rng, e0 + aux.total_tables() as f64, f0 + log_rate);
    (draw, aux)
}

/// Update for a symmetric Dirichlet concentration `alpha` over `dim`
/// coordinates, given per-atom totals and the per-coordinate counts of every
/// atom. An atom with total zero contributes `ln v = 0`, the limit of
/// `Beta(dim * alpha, 0)`.
pub(crate) fn sample_concentration(
    rng: &mut RngHandle,
    alpha: f64,
    dim: usize,
    atom_totals: impl IntoIterator<Item = u64>,
    coordinate_counts: impl IntoIterator<Item = u64>,
    e0: f64,
    f0: f64,
) -> (f64, AuxiliaryDraws) {
    let mut aux = AuxiliaryDraws::default();
    for m in atom_totals {
        if m > 0 {
            aux.log_betas
                .push(sample_ln_beta(rng, dim as f64 * alpha, m as f64));
        }
    }
    for m in coordinate_counts {
        aux.seat(rng, m, alpha);
    }
    let rate = f0 - dim as f64 * aux.log_beta_sum();
    let draw = gamma_unchecked(rng, e0 + aux.total_tables() as f64, rate);
    (draw, aux)
}
