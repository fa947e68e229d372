//! The infinite DEPM: collapsed Gibbs sampling over latent counts and
//! customer-to-atom assignments, with atoms created and deleted on the fly.
//!
//! With the factors and the gamma process integrated out, every unit of
//! latent count (a "customer") at an edge `(i,j)` is seated at an atom with
//! probability proportional to
//!
//! ```text
//! existing k:  m_k (alpha1 + m(i,.,k)) / (I alpha1 + m_k) * (alpha2 + m(.,j,k)) / (J alpha2 + m_k)
//! new atom:    gamma0 / (I J)
//! ```
//!
//! where every statistic excludes the customer being moved.

use std::collections::HashMap;

use rand_distr::{Distribution, Poisson};

use crate::augment::{sample_concentration, AuxiliaryDraws};
use crate::counts::LatentCounts;
use crate::data::SparseBinaryMatrix;
use crate::distributions::{
    dirichlet_unchecked, gamma_unchecked, ln_factorial, ln_gamma, multinomial_unchecked,
    ztp_unchecked, RngHandle,
};
use crate::error::{Error, Result};
use crate::options::SweepOptions;
use crate::truncated::{DEFAULT_E0, DEFAULT_F0, INTENSITY_FLOOR};

#[derive(Clone, Debug, PartialEq)]
pub struct IdepmHypers {
    pub alpha1: f64,
    pub alpha2: f64,
    pub gamma0: f64,
    pub c0: f64,
    pub e0: f64,
    pub f0: f64,
}

impl Default for IdepmHypers {
    fn default() -> Self {
        IdepmHypers {
            alpha1: 1.0,
            alpha2: 1.0,
            gamma0: 1.0,
            c0: 1.0,
            e0: DEFAULT_E0,
            f0: DEFAULT_F0,
        }
    }
}

impl IdepmHypers {
    pub fn named_values(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("gamma0", self.gamma0),
            ("c0", self.c0),
            ("e0", self.e0),
            ("f0", self.f0),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in self.named_values() {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidParameter { name, value });
            }
        }
        Ok(())
    }

    /// `-ln(c0 / (c0 + 1))`, the rate contributed by the gamma process.
    fn log_rate(&self) -> f64 {
        (1.0 / self.c0).ln_1p()
    }
}

/// Instantiated parameters of one atom.
#[derive(Clone, Debug, PartialEq)]
pub struct AtomParams {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Atom {
    pub(crate) id: u64,
    pub(crate) total: u64,
    pub(crate) rows: Vec<u64>,
    pub(crate) cols: Vec<u64>,
    pub(crate) params: Option<AtomParams>,
}

impl Atom {
    fn new(id: u64, n_rows: usize, n_cols: usize) -> Self {
        Atom {
            id,
            total: 0,
            rows: vec![0; n_rows],
            cols: vec![0; n_cols],
            params: None,
        }
    }

    /// Stable identifier, unchanged when other atoms are deleted.
    pub fn id(&self) -> u64 {
        self.id
    }

    /// `m(.,.,k)`
    pub fn total(&self) -> u64 {
        self.total
    }

    /// `m(i,.,k)` for every row.
    pub fn rows(&self) -> &[u64] {
        &self.rows
    }

    /// `m(.,j,k)` for every column.
    pub fn cols(&self) -> &[u64] {
        &self.cols
    }

    pub fn params(&self) -> Option<&AtomParams> {
        self.params.as_ref()
    }
}

#[derive(Clone, Debug)]
pub struct CollapsedState {
    pub(crate) n_rows: usize,
    pub(crate) n_cols: usize,
    pub(crate) edges: Vec<(usize, usize)>,
    /// Atom id of every customer, grouped by edge.
    pub(crate) labels: Vec<Vec<u64>>,
    pub(crate) atoms: Vec<Atom>,
    pub(crate) slot_of: HashMap<u64, usize>,
    pub(crate) next_id: u64,
    pub(crate) lambda_rest: f64,
    /// Running `sum ln m(i,j,.)!`.
    pub(crate) log_factorials: f64,
    pub(crate) hypers: IdepmHypers,
    pub(crate) rng: RngHandle,
    pub(crate) options: SweepOptions,
    pub(crate) count_step: CountStep,
}

/// How a sweep resamples the latent counts of the one-entries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CountStep {
    /// Metropolis-Hastings birth and death of single customers at each
    /// edge, with every parameter integrated out. Customers may open new
    /// atoms.
    #[default]
    BirthDeath,
    /// Zero-truncated Poisson totals from the instantiated intensity, split
    /// multinomially over the active atoms. No customer can reach an unused
    /// atom, so this step does not leave the infinite-model posterior
    /// invariant.
    InstantiatedZtp,
}

impl CountStep {
    pub fn name(self) -> &'static str {
        match self {
            CountStep::BirthDeath => "birth-death",
            CountStep::InstantiatedZtp => "instantiated-ztp",
        }
    }
}

impl std::str::FromStr for CountStep {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "birth-death" => Ok(CountStep::BirthDeath),
            "instantiated-ztp" => Ok(CountStep::InstantiatedZtp),
            other => Err(Error::Config(format!("unknown count step '{other}'"))),
        }
    }
}

/// Birth-death proposals per edge and sweep.
pub const BIRTH_DEATH_MOVES: usize = 2;

impl CollapsedState {
    /// Gives every one-entry a single customer, seats the customers one at a
    /// time by the assignment rule, and instantiates parameters.
    pub fn init(x: &SparseBinaryMatrix, hypers: IdepmHypers, rng: RngHandle) -> Result<Self> {
        hypers.validate()?;
        let mut state = CollapsedState {
            n_rows: x.n_rows(),
            n_cols: x.n_cols(),
            edges: x.ones().to_vec(),
            labels: vec![Vec::new(); x.n_ones()],
            atoms: Vec::new(),
            slot_of: HashMap::new(),
            next_id: 0,
            lambda_rest: 0.0,
            log_factorials: 0.0,
            hypers,
            rng,
            options: SweepOptions::default(),
            count_step: CountStep::default(),
        };
        let mut weights = Vec::new();
        for e in 0..state.edges.len() {
            let (i, j) = state.edges[e];
            let id = state.choose_atom(i, j, &mut weights);
            state.labels[e].push(id);
            state.add_customer(i, j, id)?;
        }
        state.instantiate_parameters();
        Ok(state)
    }

    /// Builds a state from explicit customer labels per edge. Labels are
    /// arbitrary ids; edges must be distinct and carry at least one
    /// customer.
    pub fn from_labels(
        n_rows: usize,
        n_cols: usize,
        entries: impl IntoIterator<Item = ((usize, usize), Vec<u64>)>,
        hypers: IdepmHypers,
        rng: RngHandle,
    ) -> Result<Self> {
        hypers.validate()?;
        let mut entries: Vec<_> = entries.into_iter().collect();
        entries.sort_by_key(|e| e.0);
        let mut state = CollapsedState {
            n_rows,
            n_cols,
            edges: Vec::with_capacity(entries.len()),
            labels: Vec::with_capacity(entries.len()),
            atoms: Vec::new(),
            slot_of: HashMap::new(),
            next_id: 0,
            lambda_rest: 0.0,
            log_factorials: 0.0,
            hypers,
            rng,
            options: SweepOptions::default(),
            count_step: CountStep::default(),
        };
        for ((i, j), ids) in entries {
            if i >= n_rows || j >= n_cols {
                return Err(Error::IndexOutOfRange {
                    row: i,
                    col: j,
                    n_rows,
                    n_cols,
                });
            }
            if ids.is_empty() {
                return Err(Error::Inconsistent(format!(
                    "edge ({i}, {j}) has no customers"
                )));
            }
            if state.edges.last() == Some(&(i, j)) {
                return Err(Error::Inconsistent(format!("edge ({i}, {j}) listed twice")));
            }
            state.edges.push((i, j));
            state.labels.push(ids);
        }
        state.rebuild_statistics();
        state.next_id = state.atoms.iter().map(|a| a.id + 1).max().unwrap_or(0);
        Ok(state)
    }

    /// Rebuilds a state with atoms in the given slot order. Statistics are
    /// recomputed from the labels; every label must name a listed atom and
    /// every listed atom must have a customer.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        n_rows: usize,
        n_cols: usize,
        edges: Vec<(usize, usize)>,
        labels: Vec<Vec<u64>>,
        atoms: Vec<(u64, Option<AtomParams>)>,
        next_id: u64,
        lambda_rest: f64,
        hypers: IdepmHypers,
        rng: RngHandle,
    ) -> Result<Self> {
        hypers.validate()?;
        if edges.len() != labels.len() {
            return Err(Error::Inconsistent(
                "one label list per edge required".into(),
            ));
        }
        let mut state = CollapsedState {
            n_rows,
            n_cols,
            edges,
            labels,
            atoms: Vec::with_capacity(atoms.len()),
            slot_of: HashMap::new(),
            next_id,
            lambda_rest,
            log_factorials: 0.0,
            hypers,
            rng,
            options: SweepOptions::default(),
            count_step: CountStep::default(),
        };
        for (id, params) in atoms {
            if let Some(p) = &params {
                if p.phi.len() != n_rows || p.psi.len() != n_cols {
                    return Err(Error::Inconsistent(format!(
                        "atom {id} has misshapen parameters"
                    )));
                }
            }
            if state.slot_of.insert(id, state.atoms.len()).is_some() {
                return Err(Error::Inconsistent(format!("atom {id} listed twice")));
            }
            if id >= next_id {
                return Err(Error::Inconsistent(format!(
                    "atom id {id} not below next id {next_id}"
                )));
            }
            let mut atom = Atom::new(id, n_rows, n_cols);
            atom.params = params;
            state.atoms.push(atom);
        }
        for e in 0..state.edges.len() {
            let (i, j) = state.edges[e];
            if i >= n_rows || j >= n_cols {
                return Err(Error::IndexOutOfRange {
                    row: i,
                    col: j,
                    n_rows,
                    n_cols,
                });
            }
            if e > 0 && state.edges[e - 1] >= (i, j) {
                return Err(Error::Inconsistent(
                    "edges must be sorted and distinct".into(),
                ));
            }
            if state.labels[e].is_empty() {
                return Err(Error::Inconsistent(format!(
                    "edge ({i}, {j}) has no customers"
                )));
            }
            state.log_factorials += ln_factorial(state.labels[e].len() as u64);
            for s in 0..state.labels[e].len() {
                let id = state.labels[e][s];
                let &slot = state
                    .slot_of
                    .get(&id)
                    .ok_or_else(|| Error::Inconsistent(format!("label {id} names no atom")))?;
                let atom = &mut state.atoms[slot];
                atom.total += 1;
                atom.rows[i] += 1;
                atom.cols[j] += 1;
            }
        }
        if let Some(a) = state.atoms.iter().find(|a| a.total == 0) {
            return Err(Error::Inconsistent(format!(
                "atom {} has no customers",
                a.id
            )));
        }
        Ok(state)
    }

    /// Draws `(m, z)` and the binary matrix they induce from the marginal
    /// model at the given hyperparameters: total mass `G ~ Gamma(gamma0, c0)`,
    /// `M ~ Poisson(G)` customers seated by a Chinese restaurant process with
    /// concentration `gamma0`, and each customer's row and column drawn from
    /// Polya urns over its atom with concentrations `alpha1` and `alpha2`.
    pub fn sample_prior(
        n_rows: usize,
        n_cols: usize,
        hypers: IdepmHypers,
        mut rng: RngHandle,
    ) -> Result<(Self, SparseBinaryMatrix)> {
        hypers.validate()?;
        let mass = gamma_unchecked(&mut rng, hypers.gamma0, hypers.c0);
        let n_customers = Poisson::new(mass)
            .map_err(|_| Error::param("total mass", mass))?
            .sample(&mut rng) as u64;
        let mut table_sizes: Vec<u64> = Vec::new();
        for n in 0..n_customers {
            let u = rng.uniform() * (n as f64 + hypers.gamma0);
            let mut acc = 0.0;
            let mut seat = table_sizes.len();
            for (t, &size) in table_sizes.iter().enumerate() {
                acc += size as f64;
                if u < acc {
                    seat = t;
                    break;
                }
            }
            if seat == table_sizes.len() {
                table_sizes.push(1);
            } else {
                table_sizes[seat] += 1;
            }
        }
        let mut cells: HashMap<(usize, usize), Vec<u64>> = HashMap::new();
        for (id, &size) in table_sizes.iter().enumerate() {
            let rows = polya_urn(&mut rng, size, n_rows, hypers.alpha1);
            let cols = polya_urn(&mut rng, size, n_cols, hypers.alpha2);
            for (i, j) in rows.into_iter().zip(cols) {
                cells.entry((i, j)).or_default().push(id as u64);
            }
        }
        let x = SparseBinaryMatrix::new(n_rows, n_cols, cells.keys().copied())?;
        let mut state = Self::from_labels(n_rows, n_cols, cells, hypers, rng)?;
        state.instantiate_parameters();
        Ok((state, x))
    }

    /// Replaces counts, assignments and parameters with a fresh draw from
    /// the marginal model at the current hyperparameters and returns the
    /// matching data. Options and the random stream carry over.
    pub fn regenerate_from_prior(&mut self) -> Result<SparseBinaryMatrix> {
        let rng = std::mem::replace(&mut self.rng, RngHandle::new(0));
        let (fresh, x) = Self::sample_prior(self.n_rows, self.n_cols, self.hypers.clone(), rng)?;
        let (options, count_step) = (self.options, self.count_step);
        *self = fresh.with_options(options).with_count_step(count_step);
        Ok(x)
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

    pub fn with_count_step(mut self, step: CountStep) -> Self {
        self.count_step = step;
        self
    }

    pub fn count_step(&self) -> CountStep {
        self.count_step
    }

    pub fn set_count_step(&mut self, step: CountStep) {
        self.count_step = step;
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn hypers(&self) -> &IdepmHypers {
        &self.hypers
    }

    pub fn hypers_mut(&mut self) -> &mut IdepmHypers {
        &mut self.hypers
    }

    pub fn rng(&self) -> &RngHandle {
        &self.rng
    }

    pub fn rng_mut(&mut self) -> &mut RngHandle {
        &mut self.rng
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Atom ids of the customers at the `e`-th edge.
    pub fn labels(&self, e: usize) -> &[u64] {
        &self.labels[e]
    }

    /// `K_+`
    pub fn n_active(&self) -> usize {
        self.atoms.len()
    }

    /// `M`
    pub fn total_customers(&self) -> u64 {
        self.atoms.iter().map(|a| a.total).sum()
    }

    pub fn lambda_rest(&self) -> f64 {
        self.lambda_rest
    }

    /// Sum over instantiated atoms of `phi(i,k) psi(j,k) lambda_k`.
    pub fn intensity(&self, i: usize, j: usize) -> f64 {
        self.atoms
            .iter()
            .filter_map(|a| a.params.as_ref())
            .map(|p| p.phi[i] * p.psi[j] * p.lambda)
            .sum()
    }

    pub fn link_probability(&self, i: usize, j: usize) -> f64 {
        -(-self.intensity(i, j)).exp_m1()
    }

    /// Per-edge, per-atom counts with atoms in storage order.
    pub fn to_counts(&self) -> LatentCounts {
        let k = self.atoms.len();
        let entries = self.edges.iter().zip(&self.labels).map(|(&edge, ids)| {
            let mut per_atom = vec![0u64; k];
            for id in ids {
                per_atom[self.slot_of[id]] += 1;
            }
            (edge, per_atom)
        });
        LatentCounts::from_edges(self.n_rows, self.n_cols, k, entries).expect("edges are in range")
    }

    /// Unnormalized seating weights for a customer at `(i, j)` against the
    /// current statistics: one per active atom, then the new-atom weight.
    pub fn assignment_weights(&self, i: usize, j: usize) -> Vec<f64> {
        let mut weights = Vec::with_capacity(self.atoms.len() + 1);
        self.fill_weights(i, j, &mut weights);
        weights
    }

    fn fill_weights(&self, i: usize, j: usize, weights: &mut Vec<f64>) {
        let h = &self.hypers;
        let row_mass = self.n_rows as f64 * h.alpha1;
        let col_mass = self.n_cols as f64 * h.alpha2;
        weights.clear();
        for atom in &self.atoms {
            let m = atom.total as f64;
            weights.push(
                m * (h.alpha1 + atom.rows[i] as f64) / (row_mass + m)
                    * (h.alpha2 + atom.cols[j] as f64)
                    / (col_mass + m),
            );
        }
        weights.push(h.gamma0 / (self.n_rows as f64 * self.n_cols as f64));
    }

    /// Picks an atom id for a new customer at `(i, j)`; a fresh id when the
    /// new-atom branch is chosen.
    fn choose_atom(&mut self, i: usize, j: usize, weights: &mut Vec<f64>) -> u64 {
        self.fill_weights(i, j, weights);
        let total: f64 = weights.iter().sum();
        let mut u = self.rng.uniform() * total;
        let mut chosen = weights.len() - 1;
        for (k, &w) in weights.iter().enumerate() {
            if u < w {
                chosen = k;
                break;
            }
            u -= w;
        }
        if chosen < self.atoms.len() {
            self.atoms[chosen].id
        } else {
            let id = self.next_id;
            self.next_id += 1;
            id
        }
    }

    fn add_customer(&mut self, i: usize, j: usize, id: u64) -> Result<()> {
        let slot = match self.slot_of.get(&id) {
            Some(&slot) => slot,
            None => {
                self.atoms.push(Atom::new(id, self.n_rows, self.n_cols));
                self.slot_of.insert(id, self.atoms.len() - 1);
                self.next_id = self.next_id.max(id + 1);
                self.atoms.len() - 1
            }
        };
        let atom = &mut self.atoms[slot];
        atom.total += 1;
        atom.rows[i] += 1;
        atom.cols[j] += 1;
        Ok(())
    }

    fn remove_customer(&mut self, i: usize, j: usize, id: u64) -> Result<()> {
        let &slot = self
            .slot_of
            .get(&id)
            .ok_or_else(|| Error::Inconsistent(format!("customer seated at unknown atom {id}")))?;
        let atom = &mut self.atoms[slot];
        if atom.total == 0 || atom.rows[i] == 0 || atom.cols[j] == 0 {
            return Err(Error::Inconsistent(format!(
                "removing a customer at ({i}, {j}) drives atom {id} below zero"
            )));
        }
        atom.total -= 1;
        atom.rows[i] -= 1;
        atom.cols[j] -= 1;
        if atom.total == 0 {
            self.delete_slot(slot);
        }
        Ok(())
    }

    fn delete_slot(&mut self, slot: usize) {
        let removed = self.atoms.swap_remove(slot);
        self.slot_of.remove(&removed.id);
        if let Some(moved) = self.atoms.get(slot) {
            self.slot_of.insert(moved.id, slot);
        }
    }

    /// Removes customer `s` of edge `e` and seats it again.
    pub fn resample_customer(&mut self, e: usize, s: usize) -> Result<()> {
        let mut weights = Vec::with_capacity(self.atoms.len() + 1);
        self.resample_customer_with(e, s, &mut weights)
    }

    fn resample_customer_with(&mut self, e: usize, s: usize, weights: &mut Vec<f64>) -> Result<()> {
        let (i, j) = self.edges[e];
        let old = self.labels[e][s];
        self.remove_customer(i, j, old)?;
        let id = self.choose_atom(i, j, weights);
        self.labels[e][s] = id;
        self.add_customer(i, j, id)
    }

    /// Reseats every customer in edge order, then customer order. New atoms
    /// carry no parameters until the next instantiation.
    pub fn sample_assignments(&mut self) -> Result<()> {
        let mut weights = Vec::with_capacity(self.atoms.len() + 8);
        for e in 0..self.edges.len() {
            for s in 0..self.labels[e].len() {
                self.resample_customer_with(e, s, &mut weights)?;
            }
        }
        Ok(())
    }

    /// `phi(.,k) ~ Dirichlet(alpha1 + m(.,.,k) by row)`, likewise `psi`,
    /// `lambda_k ~ Gamma(m(.,.,k), c0 + 1)`, and the mass of all unused atoms
    /// `lambda_rest ~ Gamma(gamma0, c0 + 1)`.
    pub fn instantiate_parameters(&mut self) {
        let h = self.hypers.clone();
        let mut alphas_rows = vec![0.0; self.n_rows];
        let mut alphas_cols = vec![0.0; self.n_cols];
        for atom in self.atoms.iter_mut() {
            for (a, &m) in alphas_rows.iter_mut().zip(&atom.rows) {
                *a = h.alpha1 + m as f64;
            }
            for (a, &m) in alphas_cols.iter_mut().zip(&atom.cols) {
                *a = h.alpha2 + m as f64;
            }
            let params = atom.params.get_or_insert_with(|| AtomParams {
                phi: vec![0.0; alphas_rows.len()],
                psi: vec![0.0; alphas_cols.len()],
                lambda: 0.0,
            });
            dirichlet_unchecked(&mut self.rng, &alphas_rows, &mut params.phi);
            dirichlet_unchecked(&mut self.rng, &alphas_cols, &mut params.psi);
            params.lambda = gamma_unchecked(&mut self.rng, atom.total as f64, h.c0 + 1.0);
        }
        self.lambda_rest = gamma_unchecked(&mut self.rng, h.gamma0, h.c0 + 1.0);
    }

    fn instantiate_weights(&mut self) {
        let rate = self.hypers.c0 + 1.0;
        for atom in self.atoms.iter_mut() {
            if let Some(p) = atom.params.as_mut() {
                p.lambda = gamma_unchecked(&mut self.rng, atom.total as f64, rate);
            }
        }
        self.lambda_rest = gamma_unchecked(&mut self.rng, self.hypers.gamma0, rate);
    }

    /// Redraws `m(i,j,.)` at every edge from the zero-truncated Poisson over
    /// the active atoms' intensity, splits it across those atoms, and
    /// deletes atoms left empty.
    /// Resamples the latent counts given `x` with the configured step.
    pub fn sample_counts(&mut self, x: &SparseBinaryMatrix) -> Result<()> {
        match self.count_step {
            CountStep::BirthDeath => self.sample_counts_birth_death(x),
            CountStep::InstantiatedZtp => self.sample_counts_ztp(x),
        }
    }

    fn check_edges(&self, x: &SparseBinaryMatrix) -> Result<()> {
        if x.n_rows() != self.n_rows || x.n_cols() != self.n_cols || x.ones() != self.edges {
            return Err(Error::Inconsistent(
                "data does not match the edges the state was built on".into(),
            ));
        }
        Ok(())
    }

    /// For every edge, [`BIRTH_DEATH_MOVES`] proposals that either seat one
    /// more customer (atom chosen by the seating weights, accepted with
    /// probability `min(1, S / ((c0 + 1)(n + 1)))`, `S` the total seating
    /// weight and `n` the edge's customer count) or remove a uniformly
    /// chosen one (accepted with the reciprocal ratio). Edges never drop
    /// below one customer. Parameters are left stale.
    pub fn sample_counts_birth_death(&mut self, x: &SparseBinaryMatrix) -> Result<()> {
        self.check_edges(x)?;
        let mut weights = Vec::with_capacity(self.atoms.len() + 8);
        for e in 0..self.edges.len() {
            for _ in 0..BIRTH_DEATH_MOVES {
                self.birth_death_move(e, &mut weights)?;
            }
        }
        Ok(())
    }

    fn birth_death_move(&mut self, e: usize, weights: &mut Vec<f64>) -> Result<()> {
        let (i, j) = self.edges[e];
        let n = self.labels[e].len();
        let rate = self.hypers.c0 + 1.0;
        if self.rng.uniform() < 0.5 {
            self.fill_weights(i, j, weights);
            let total: f64 = weights.iter().sum();
            if self.rng.uniform() * rate * ((n + 1) as f64) < total {
                let id = self.choose_atom(i, j, weights);
                self.add_customer(i, j, id)?;
                self.labels[e].push(id);
                self.log_factorials += ((n + 1) as f64).ln();
            }
        } else if n > 1 {
            let s = ((self.rng.uniform() * n as f64) as usize).min(n - 1);
            let id = self.labels[e][s];
            self.remove_customer(i, j, id)?;
            self.fill_weights(i, j, weights);
            let total: f64 = weights.iter().sum();
            if self.rng.uniform() * total < rate * n as f64 {
                self.labels[e].swap_remove(s);
                self.log_factorials -= (n as f64).ln();
            } else {
                self.add_customer(i, j, id)?;
            }
        }
        Ok(())
    }

    /// Zero-truncated Poisson totals from the instantiated intensity, split
    /// over the active atoms. Needs instantiated parameters.
    pub fn sample_counts_ztp(&mut self, x: &SparseBinaryMatrix) -> Result<()> {
        self.check_edges(x)?;
        if self.atoms.iter().any(|a| a.params.is_none()) {
            return Err(Error::Inconsistent(
                "count step before instantiation".into(),
            ));
        }
        let k_max = self.atoms.len();
        let mut weights = vec![0.0; k_max];
        let mut split = vec![0u64; k_max];
        for e in 0..self.edges.len() {
            let (i, j) = self.edges[e];
            let mut total = 0.0;
            for (w, atom) in weights.iter_mut().zip(&self.atoms) {
                let p = atom.params.as_ref().expect("checked above");
                *w = p.phi[i] * p.psi[j] * p.lambda;
                total += *w;
            }
            let n = ztp_unchecked(&mut self.rng, total.max(INTENSITY_FLOOR));
            if !(total > 0.0 && total.is_finite()) {
                for w in weights.iter_mut() {
                    *w = 1.0;
                }
                total = k_max as f64;
            }
            split.iter_mut().for_each(|c| *c = 0);
            multinomial_unchecked(&mut self.rng, n, &weights, total, &mut split);
            let labels = &mut self.labels[e];
            labels.clear();
            for (atom, &c) in self.atoms.iter().zip(&split) {
                labels.extend(std::iter::repeat_n(atom.id, c as usize));
            }
        }
        self.rebuild_statistics();
        Ok(())
    }

    /// Recomputes every atom's statistics and the log-factorial sum from the
    /// labels, dropping atoms that no customer uses. Parameters of
    /// surviving atoms are kept.
    fn rebuild_statistics(&mut self) {
        let mut old: HashMap<u64, Option<AtomParams>> =
            self.atoms.drain(..).map(|a| (a.id, a.params)).collect();
        self.slot_of.clear();
        self.log_factorials = 0.0;
        for e in 0..self.edges.len() {
            let (i, j) = self.edges[e];
            self.log_factorials += ln_factorial(self.labels[e].len() as u64);
            for s in 0..self.labels[e].len() {
                let id = self.labels[e][s];
                let slot = *self.slot_of.entry(id).or_insert_with(|| {
                    let mut atom = Atom::new(id, self.n_rows, self.n_cols);
                    atom.params = old.remove(&id).flatten();
                    self.atoms.push(atom);
                    self.atoms.len() - 1
                });
                let atom = &mut self.atoms[slot];
                atom.total += 1;
                atom.rows[i] += 1;
                atom.cols[j] += 1;
            }
        }
    }

    /// `alpha1`, `alpha2` and `gamma0` given the partition (parameters
    /// integrated out); then fresh parameters; then `c0` given the atom
    /// weights.
    pub fn sample_hypers(&mut self) -> [AuxiliaryDraws; 2] {
        let aux = [
            self.update_concentration(true),
            self.update_concentration(false),
        ];
        self.sample_gamma0();
        self.instantiate_parameters();
        self.sample_c0();
        aux
    }

    /// `gamma0 ~ Gamma(e0 + K_+, f0 - ln(c0 / (c0 + 1)))`.
    pub fn sample_gamma0(&mut self) {
        let h = &self.hypers;
        let shape = h.e0 + self.atoms.len() as f64;
        let rate = h.f0 + h.log_rate();
        self.hypers.gamma0 = gamma_unchecked(&mut self.rng, shape, rate);
    }

    /// `c0 ~ Gamma(e0 + gamma0, f0 + lambda_rest + sum_k lambda_k)`; needs
    /// instantiated weights.
    pub fn sample_c0(&mut self) {
        let h = &self.hypers;
        let mass: f64 = self.lambda_rest
            + self
                .atoms
                .iter()
                .filter_map(|a| a.params.as_ref())
                .map(|p| p.lambda)
                .sum::<f64>();
        let rate = (h.f0 + mass) * self.options.c0_rate_factor();
        self.hypers.c0 = gamma_unchecked(&mut self.rng, h.e0 + h.gamma0, rate);
    }

    fn update_concentration(&mut self, rows: bool) -> AuxiliaryDraws {
        let (alpha, dim) = if rows {
            (self.hypers.alpha1, self.n_rows)
        } else {
            (self.hypers.alpha2, self.n_cols)
        };
        let atoms = &self.atoms;
        let coordinates = atoms
            .iter()
            .flat_map(|a| if rows { &a.rows } else { &a.cols }.iter().copied());
        let (value, aux) = sample_concentration(
            &mut self.rng,
            alpha,
            dim,
            atoms.iter().map(|a| a.total),
            coordinates,
            self.hypers.e0,
            self.hypers.f0,
        );
        if rows {
            self.hypers.alpha1 = value;
        } else {
            self.hypers.alpha2 = value;
        }
        aux
    }

    /// One scan: assignments; counts then parameters (birth-death) or
    /// parameters then counts (ZTP); hyperparameters.
    pub fn collapsed_sweep(&mut self, x: &SparseBinaryMatrix) -> Result<()> {
        self.sample_assignments()?;
        match self.count_step {
            CountStep::BirthDeath => {
                self.sample_counts_birth_death(x)?;
                self.instantiate_parameters();
            }
            CountStep::InstantiatedZtp => {
                self.instantiate_parameters();
                self.sample_counts_ztp(x)?;
                if self.options.freeze_hypers {
                    self.instantiate_weights();
                }
            }
        }
        if !self.options.freeze_hypers {
            self.sample_hypers();
        }
        Ok(())
    }

    /// Log marginal likelihood of the current `(m, z)` with every parameter
    /// integrated out.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let terms: Vec<f64> = self
            .atoms
            .iter()
            .map(|a| atom_log_term(&a.rows, &a.cols, a.total, &self.hypers))
            .collect();
        log_marginal_from_terms(-self.log_factorials, terms, &self.hypers)
    }

    /// Checks statistics, the atom index and the log-factorial cache
    /// against a rebuild from the labels.
    pub fn audit(&self) -> Result<()> {
        let mut rebuilt = self.clone();
        rebuilt.rebuild_statistics();
        let key = |atoms: &[Atom]| {
            let mut v: Vec<(u64, u64, Vec<u64>, Vec<u64>)> = atoms
                .iter()
                .map(|a| (a.id, a.total, a.rows.clone(), a.cols.clone()))
                .collect();
            v.sort();
            v
        };
        if key(&rebuilt.atoms) != key(&self.atoms) {
            return Err(Error::Inconsistent(
                "atom statistics disagree with a recount".into(),
            ));
        }
        if self.atoms.iter().any(|a| a.total == 0) {
            return Err(Error::Inconsistent(
                "an active atom has no customers".into(),
            ));
        }
        for (slot, atom) in self.atoms.iter().enumerate() {
            if self.slot_of.get(&atom.id) != Some(&slot) {
                return Err(Error::Inconsistent(format!(
                    "atom {} is mis-indexed",
                    atom.id
                )));
            }
        }
        if self.slot_of.len() != self.atoms.len() {
            return Err(Error::Inconsistent("atom index has stale entries".into()));
        }
        if self.labels.iter().any(|l| l.is_empty()) {
            return Err(Error::Inconsistent("an edge has no customers".into()));
        }
        let diff = (rebuilt.log_factorials - self.log_factorials).abs();
        if diff > 1e-9 * self.log_factorials.abs().max(1.0) {
            return Err(Error::Inconsistent("log-factorial cache is stale".into()));
        }
        Ok(())
    }

    /// Largest deviation of any instantiated `phi` or `psi` column from a
    /// unit sum.
    pub fn max_simplex_error(&self) -> f64 {
        self.atoms
            .iter()
            .filter_map(|a| a.params.as_ref())
            .flat_map(|p| [p.phi.iter().sum::<f64>(), p.psi.iter().sum::<f64>()])
            .map(|s| (s - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Reorders atom storage; for exchangeability checks.
    pub fn permute_atoms(&mut self, order: &[usize]) -> Result<()> {
        let mut sorted = order.to_vec();
        sorted.sort_unstable();
        if sorted != (0..self.atoms.len()).collect::<Vec<_>>() {
            return Err(Error::Config(
                "not a permutation of the active atoms".into(),
            ));
        }
        let atoms: Vec<Atom> = order.iter().map(|&k| self.atoms[k].clone()).collect();
        self.atoms = atoms;
        for (slot, atom) in self.atoms.iter().enumerate() {
            self.slot_of.insert(atom.id, slot);
        }
        Ok(())
    }
}

/// Draws which of `dim` coordinates each of `n` customers lands on under a
/// symmetric Dirichlet(`alpha`)-multinomial, by sequential urn draws.
fn polya_urn(rng: &mut RngHandle, n: u64, dim: usize, alpha: f64) -> Vec<usize> {
    let mut counts = vec![0u64; dim];
    let mut out = Vec::with_capacity(n as usize);
    for s in 0..n {
        let mut u = rng.uniform() * (dim as f64 * alpha + s as f64);
        let mut chosen = dim - 1;
        for (d, &c) in counts.iter().enumerate() {
            let w = alpha + c as f64;
            if u < w {
                chosen = d;
                break;
            }
            u -= w;
        }
        counts[chosen] += 1;
        out.push(chosen);
    }
    out
}

/// Per-atom part of the log marginal that does not involve the gamma
/// process: both Dirichlet-multinomial factors.
fn dirichlet_log_term(rows: &[u64], total: u64, alpha: f64) -> f64 {
    let n = rows.len() as f64;
    let ln_gamma_alpha = ln_gamma(alpha);
    let mut term = ln_gamma(n * alpha) - ln_gamma(n * alpha + total as f64);
    for &r in rows.iter().filter(|&&r| r > 0) {
        term += ln_gamma(alpha + r as f64) - ln_gamma_alpha;
    }
    term
}

fn atom_log_term(rows: &[u64], cols: &[u64], total: u64, h: &IdepmHypers) -> f64 {
    let m = total as f64;
    dirichlet_log_term(rows, total, h.alpha1)
        + dirichlet_log_term(cols, total, h.alpha2)
        + ln_gamma(m)
        - m * (h.c0 + 1.0).ln()
}

/// Sums per-atom terms in sorted order so that relabelling atoms cannot
/// change a single bit of the result.
fn log_marginal_from_terms(front: f64, mut terms: Vec<f64>, h: &IdepmHypers) -> f64 {
    terms.sort_by(f64::total_cmp);
    let k = terms.len() as f64;
    front + terms.iter().sum::<f64>() + k * h.gamma0.ln() - h.gamma0 * h.log_rate()
}

fn count_table_parts(counts: &LatentCounts) -> (f64, Vec<(Vec<u64>, Vec<u64>, u64)>) {
    let front = -(0..counts.edges().len())
        .map(|e| ln_factorial(counts.edge_total(e)))
        .sum::<f64>();
    let atoms = (0..counts.n_atoms())
        .filter(|&k| counts.atom(k) > 0)
        .map(|k| {
            (
                (0..counts.n_rows()).map(|i| counts.row(i, k)).collect(),
                (0..counts.n_cols()).map(|j| counts.col(j, k)).collect(),
                counts.atom(k),
            )
        })
        .collect();
    (front, atoms)
}

/// Log marginal likelihood of labelled counts under the infinite model;
/// columns of `counts` with zero total are ignored.
pub fn log_marginal_infinite(counts: &LatentCounts, hypers: &IdepmHypers) -> Result<f64> {
    hypers.validate()?;
    let (front, atoms) = count_table_parts(counts);
    let terms = atoms
        .iter()
        .map(|(r, c, m)| atom_log_term(r, c, *m, hypers))
        .collect();
    Ok(log_marginal_from_terms(front, terms, hypers))
}

/// Log marginal likelihood of labelled counts under the DEPM truncated at
/// `truncation` atoms, each atom weight `Gamma(gamma0 / T, c0)`. The counts
/// occupy the first atoms; the rest are empty. With `partition` set the
/// result is for the unlabelled partition, i.e. it includes
/// `ln(T! / (T - K_+)!)`.
pub fn log_marginal_truncated(
    counts: &LatentCounts,
    truncation: u64,
    hypers: &IdepmHypers,
    partition: bool,
) -> Result<f64> {
    hypers.validate()?;
    let (front, atoms) = count_table_parts(counts);
    let k = atoms.len() as u64;
    if k > truncation {
        return Err(Error::Config(format!(
            "{k} occupied atoms exceed the truncation level {truncation}"
        )));
    }
    let h = hypers;
    let g = h.gamma0 / truncation as f64;
    // ln Gamma(g) via ln Gamma(1 + g) - ln g keeps precision for tiny g.
    let ln_gamma_g = ln_gamma(1.0 + g) - g.ln();
    let ln_ratio = -h.log_rate();
    let mut terms: Vec<f64> = atoms
        .iter()
        .map(|(r, c, total)| {
            let m = *total as f64;
            dirichlet_log_term(r, *total, h.alpha1)
                + dirichlet_log_term(c, *total, h.alpha2)
                + ln_gamma(g + m)
                - ln_gamma_g
                - m * (h.c0 + 1.0).ln()
        })
        .collect();
    terms.sort_by(f64::total_cmp);
    // Every atom, occupied or not, carries (c0 / (c0 + 1))^g; together they
    // give (c0 / (c0 + 1))^gamma0.
    let mut total = front + terms.iter().sum::<f64>() + h.gamma0 * ln_ratio;
    if partition {
        total += (0..k).map(|t| ((truncation - t) as f64).ln()).sum::<f64>();
    }
    Ok(total)
}
