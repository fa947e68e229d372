/// Knobs that change what a sweep updates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SweepOptions {
    /// Keep hyperparameters fixed at their current values.
    pub freeze_hypers: bool,
    /// Deliberate sampler corruption, used as a negative control for the
    /// sampler-correctness tests. Never set in normal use.
    #[doc(hidden)]
    pub fault: Option<InjectedFault>,
}

#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InjectedFault {
    /// The rate of the `c0` conditional is doubled.
    DoubledC0Rate,
    /// Truncated sweeps run counts, factors, lambda, then every
    /// hyperparameter, so collapsed hyperparameter draws are never followed
    /// by a redraw of what they were collapsed over.
    HypersLast,
}

impl SweepOptions {
    pub(crate) fn c0_rate_factor(&self) -> f64 {
        match self.fault {
            Some(InjectedFault::DoubledC0Rate) => 2.0,
            _ => 1.0,
        }
    }
}
