//! Seeded random variates and special functions used by the samplers.
//!
//! Every sampler takes an explicit [`RngHandle`]. Handles are built on
//! ChaCha8, which is counter based: a handle is identified by a seed and a
//! stream id, and distinct streams of one seed never overlap. Chains that run
//! concurrently (cross-validation folds, truncation sweeps) each get their own
//! stream through [`RngHandle::fork`].

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson};

use crate::error::{check_positive, Error, Result};

/// Below this rate the zero-truncated Poisson is drawn by inversion.
const ZTP_INVERSION_LIMIT: f64 = 10.0;

#[derive(Clone, Debug)]
pub struct RngHandle {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngHandle {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        RngHandle { seed, inner }
    }

    /// A fresh handle on another stream of the same seed.
    pub fn fork(&self, stream: u64) -> Self {
        Self::with_stream(self.seed, stream)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.inner.get_stream()
    }

    pub fn word_pos(&self) -> u128 {
        self.inner.get_word_pos()
    }

    /// Rebuilds a handle at an exact position, e.g. from a checkpoint.
    pub fn from_position(seed: u64, stream: u64, word_pos: u128) -> Self {
        let mut handle = Self::with_stream(seed, stream);
        handle.inner.set_word_pos(word_pos);
        handle
    }

    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }
}

impl RngCore for RngHandle {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Gamma distribution in the shape/rate convention, density proportional to
/// `x^(shape-1) exp(-rate x)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GammaParams {
    shape: f64,
    rate: f64,
}

impl GammaParams {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        Ok(GammaParams {
            shape: check_positive("gamma shape", shape)?,
            rate: check_positive("gamma rate", rate)?,
        })
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    pub fn variance(&self) -> f64 {
        self.shape / (self.rate * self.rate)
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        self.shape * self.rate.ln() - ln_gamma(self.shape) + (self.shape - 1.0) * x.ln()
            - self.rate * x
    }
}

/// Draws from `Gamma(shape, rate)`.
///
/// Draws that underflow are returned as the smallest positive normal double so
/// that downstream logarithms and divisions stay finite.
pub fn sample_gamma(rng: &mut RngHandle, p: GammaParams) -> f64 {
    gamma_unchecked(rng, p.shape, p.rate)
}

#[inline]
pub(crate) fn gamma_unchecked(rng: &mut RngHandle, shape: f64, rate: f64) -> f64 {
    debug_assert!(shape > 0.0 && rate > 0.0, "gamma({shape}, {rate})");
    let draw = Gamma::new(shape, 1.0 / rate)
        .expect("gamma parameters validated by caller")
        .sample(rng);
    draw.max(f64::MIN_POSITIVE)
}

/// Natural log of a `Gamma(shape, 1)` draw, computed without underflow for
/// small shapes via `G(shape) = G(shape + 1) * U^(1/shape)`.
#[inline]
pub(crate) fn sample_ln_gamma_unit(rng: &mut RngHandle, shape: f64) -> f64 {
    if shape >= 1.0 {
        Gamma::new(shape, 1.0)
            .expect("positive shape")
            .sample(rng)
            .ln()
    } else {
        let boosted = Gamma::new(shape + 1.0, 1.0)
            .expect("positive shape")
            .sample(rng);
        // 1 - U lies in (0, 1], so its log is finite.
        let u = 1.0 - rng.uniform();
        boosted.ln() + u.ln() / shape
    }
}

/// Draws a point of the probability simplex from `Dirichlet(alphas)`.
pub fn sample_dirichlet(rng: &mut RngHandle, alphas: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; alphas.len()];
    sample_dirichlet_into(rng, alphas, &mut out)?;
    Ok(out)
}

pub fn sample_dirichlet_into(rng: &mut RngHandle, alphas: &[f64], out: &mut [f64]) -> Result<()> {
    if alphas.is_empty() {
        return Err(Error::param("dirichlet dimension", 0.0));
    }
    for &a in alphas {
        check_positive("dirichlet concentration", a)?;
    }
    dirichlet_unchecked(rng, alphas, out);
    Ok(())
}

/// Normalizes log-gamma draws with a max shift; coordinates that would
/// underflow are floored at the smallest normal double.
pub(crate) fn dirichlet_unchecked(rng: &mut RngHandle, alphas: &[f64], out: &mut [f64]) {
    debug_assert_eq!(alphas.len(), out.len());
    if alphas.len() == 1 {
        out[0] = 1.0;
        return;
    }
    let mut max = f64::NEG_INFINITY;
    for (o, &a) in out.iter_mut().zip(alphas) {
        *o = sample_ln_gamma_unit(rng, a);
        max = max.max(*o);
    }
    let mut total = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o = (*o / total).max(f64::MIN_POSITIVE);
    }
}

/// Log of a `Beta(a, b)` draw.
pub(crate) fn sample_ln_beta(rng: &mut RngHandle, a: f64, b: f64) -> f64 {
    let x = sample_ln_gamma_unit(rng, a);
    let y = sample_ln_gamma_unit(rng, b);
    x - log_add_exp(x, y)
}

/// Draws from `Beta(a, b)`; the result lies strictly inside (0, 1).
pub fn sample_beta(rng: &mut RngHandle, a: f64, b: f64) -> Result<f64> {
    check_positive("beta a", a)?;
    check_positive("beta b", b)?;
    let v = sample_ln_beta(rng, a, b).exp();
    Ok(v.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0))
}

/// Splits `n` draws across categories with probabilities proportional to
/// `weights`.
pub fn sample_multinomial(rng: &mut RngHandle, n: u64, weights: &[f64]) -> Result<Vec<u64>> {
    let mut out = vec![0; weights.len()];
    sample_multinomial_into(rng, n, weights, &mut out)?;
    Ok(out)
}

pub fn sample_multinomial_into(
    rng: &mut RngHandle,
    n: u64,
    weights: &[f64],
    out: &mut [u64],
) -> Result<()> {
    out.iter_mut().for_each(|o| *o = 0);
    let mut total = 0.0;
    for &w in weights {
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::param("multinomial weight", w));
        }
        total += w;
    }
    if n == 0 {
        return Ok(());
    }
    if total <= 0.0 || !total.is_finite() {
        return Err(Error::DegenerateWeights { draws: n });
    }
    multinomial_unchecked(rng, n, weights, total, out);
    Ok(())
}

/// `weights` must be finite, non-negative and sum to `total > 0`.
pub(crate) fn multinomial_unchecked(
    rng: &mut RngHandle,
    n: u64,
    weights: &[f64],
    total: f64,
    out: &mut [u64],
) {
    let k = weights.len();
    if (n as usize) <= 2 * k {
        // Few draws: one categorical draw per trial by linear search.
        let last_positive = weights.iter().rposition(|&w| w > 0.0).unwrap_or(k - 1);
        for _ in 0..n {
            let target = rng.uniform() * total;
            let mut acc = 0.0;
            let mut chosen = last_positive;
            for (idx, &w) in weights.iter().enumerate() {
                acc += w;
                if target < acc {
                    chosen = idx;
                    break;
                }
            }
            out[chosen] += 1;
        }
        return;
    }
    // Many draws: sequential conditional binomials.
    let mut remaining = n;
    let mut mass = total;
    for (idx, &w) in weights.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if w <= 0.0 {
            continue;
        }
        let p = (w / mass).min(1.0);
        let draw = if p >= 1.0 {
            remaining
        } else {
            Binomial::new(remaining, p)
                .expect("probability in [0, 1]")
                .sample(rng)
        };
        out[idx] += draw;
        remaining -= draw;
        mass -= w;
        if mass <= 0.0 {
            // Rounding left no mass for the tail; the rest goes here.
            out[idx] += remaining;
            remaining = 0;
        }
    }
    if remaining > 0 {
        let last = weights.iter().rposition(|&w| w > 0.0).unwrap_or(k - 1);
        out[last] += remaining;
    }
}

/// Draws from the Poisson distribution conditioned on a value of at least one.
pub fn sample_ztp(rng: &mut RngHandle, lambda: f64) -> Result<u64> {
    check_positive("zero-truncated Poisson rate", lambda)?;
    Ok(ztp_unchecked(rng, lambda))
}

pub(crate) fn ztp_unchecked(rng: &mut RngHandle, lambda: f64) -> u64 {
    if lambda < ZTP_INVERSION_LIMIT {
        // Inverse CDF of the truncated pmf p(k) = lambda^k e^-lambda / (k! (1 - e^-lambda)).
        let u = rng.uniform();
        let mut k = 1u64;
        let mut p = lambda * (-lambda).exp() / -(-lambda).exp_m1();
        let mut cdf = p;
        while u >= cdf {
            k += 1;
            p *= lambda / k as f64;
            if p <= 0.0 {
                break;
            }
            cdf += p;
        }
        k
    } else {
        let poisson = Poisson::new(lambda).expect("finite positive rate");
        loop {
            let draw = poisson.sample(rng) as u64;
            if draw >= 1 {
                return draw;
            }
        }
    }
}

/// Number of occupied tables after seating `n` customers in a Chinese
/// restaurant with concentration `a`, drawn as a sum of independent
/// `Bernoulli(a / (a + p - 1))` for `p = 1..=n`.
pub fn sample_antoniak(rng: &mut RngHandle, n: u64, a: f64) -> Result<u64> {
    check_positive("antoniak concentration", a)?;
    Ok(antoniak_unchecked(rng, n, a))
}

#[inline]
pub(crate) fn antoniak_unchecked(rng: &mut RngHandle, n: u64, a: f64) -> u64 {
    if n == 0 {
        return 0;
    }
    let mut tables = 1;
    for p in 2..=n {
        if rng.uniform() * (a + (p - 1) as f64) < a {
            tables += 1;
        }
    }
    tables
}

/// Natural log of the gamma function for `x > 0`.
pub fn log_gamma_fn(x: f64) -> Result<f64> {
    check_positive("log-gamma argument", x)?;
    Ok(ln_gamma(x))
}

#[inline]
pub(crate) fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

#[inline]
pub(crate) fn ln_factorial(n: u64) -> f64 {
    ln_gamma(n as f64 + 1.0)
}

#[inline]
pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    let max = a.max(b);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + ((a - max).exp() + (b - max).exp()).ln()
}

/// Log-sum-exp over a slice; `-inf` for an empty slice.
pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
