use crate::error::{Error, Result};

/// Latent Poisson counts `m(i,j,k)` for the one-entries of a binary matrix,
/// with cached marginals over rows, columns and atoms.
///
/// Zero entries carry no storage; their counts are identically zero.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCounts {
    n_rows: usize,
    n_cols: usize,
    n_atoms: usize,
    pub(crate) edges: Vec<(usize, usize)>,
    /// `edges.len() x n_atoms`, row-major.
    pub(crate) edge_atom: Vec<u64>,
    pub(crate) edge_total: Vec<u64>,
    /// `n_rows x n_atoms`
    pub(crate) row_atom: Vec<u64>,
    /// `n_cols x n_atoms`
    pub(crate) col_atom: Vec<u64>,
    pub(crate) atom_total: Vec<u64>,
}

impl LatentCounts {
    pub fn empty(n_rows: usize, n_cols: usize, n_atoms: usize) -> Self {
        LatentCounts {
            n_rows,
            n_cols,
            n_atoms,
            edges: Vec::new(),
            edge_atom: Vec::new(),
            edge_total: Vec::new(),
            row_atom: vec![0; n_rows * n_atoms],
            col_atom: vec![0; n_cols * n_atoms],
            atom_total: vec![0; n_atoms],
        }
    }

    /// Builds counts from per-edge atom vectors; marginals are derived.
    pub fn from_edges(
        n_rows: usize,
        n_cols: usize,
        n_atoms: usize,
        entries: impl IntoIterator<Item = ((usize, usize), Vec<u64>)>,
    ) -> Result<Self> {
        let mut counts = Self::empty(n_rows, n_cols, n_atoms);
        for ((i, j), per_atom) in entries {
            if i >= n_rows || j >= n_cols {
                return Err(Error::IndexOutOfRange {
                    row: i,
                    col: j,
                    n_rows,
                    n_cols,
                });
            }
            if per_atom.len() != n_atoms {
                return Err(Error::Inconsistent(format!(
                    "edge ({i}, {j}) has {} atom counts, expected {n_atoms}",
                    per_atom.len()
                )));
            }
            counts.edges.push((i, j));
            counts.edge_total.push(per_atom.iter().sum());
            counts.edge_atom.extend(per_atom);
        }
        counts.recompute_marginals();
        Ok(counts)
    }

    pub(crate) fn reset_edges(&mut self, edges: &[(usize, usize)]) {
        self.edges.clear();
        self.edges.extend_from_slice(edges);
        self.edge_atom.clear();
        self.edge_atom.resize(edges.len() * self.n_atoms, 0);
        self.edge_total.clear();
        self.edge_total.resize(edges.len(), 0);
    }

    pub(crate) fn recompute_marginals(&mut self) {
        let k_max = self.n_atoms;
        self.row_atom.iter_mut().for_each(|c| *c = 0);
        self.col_atom.iter_mut().for_each(|c| *c = 0);
        self.atom_total.iter_mut().for_each(|c| *c = 0);
        for (e, &(i, j)) in self.edges.iter().enumerate() {
            let per_atom = &self.edge_atom[e * k_max..(e + 1) * k_max];
            for (k, &m) in per_atom.iter().enumerate() {
                if m > 0 {
                    self.row_atom[i * k_max + k] += m;
                    self.col_atom[j * k_max + k] += m;
                    self.atom_total[k] += m;
                }
            }
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// `m(i,j,k)` for the `e`-th edge, over all atoms.
    pub fn edge_counts(&self, e: usize) -> &[u64] {
        &self.edge_atom[e * self.n_atoms..(e + 1) * self.n_atoms]
    }

    /// `m(i,j,.)` for the `e`-th edge.
    pub fn edge_total(&self, e: usize) -> u64 {
        self.edge_total[e]
    }

    /// `m(i,.,k)`
    pub fn row(&self, i: usize, k: usize) -> u64 {
        self.row_atom[i * self.n_atoms + k]
    }

    /// `m(.,j,k)`
    pub fn col(&self, j: usize, k: usize) -> u64 {
        self.col_atom[j * self.n_atoms + k]
    }

    /// `m(.,.,k)`
    pub fn atom(&self, k: usize) -> u64 {
        self.atom_total[k]
    }

    pub fn atom_totals(&self) -> &[u64] {
        &self.atom_total
    }

    pub fn total(&self) -> u64 {
        self.edge_total.iter().sum()
    }

    /// Number of atoms with `m(.,.,k) > 0`.
    pub fn active_atoms(&self) -> usize {
        self.atom_total.iter().filter(|&&m| m > 0).count()
    }

    /// Checks per-edge conservation and every cached marginal against a
    /// recount from the per-edge counts.
    pub fn audit(&self) -> Result<()> {
        let k_max = self.n_atoms;
        let mut row = vec![0u64; self.n_rows * k_max];
        let mut col = vec![0u64; self.n_cols * k_max];
        let mut atom = vec![0u64; k_max];
        for (e, &(i, j)) in self.edges.iter().enumerate() {
            let per_atom = self.edge_counts(e);
            let sum: u64 = per_atom.iter().sum();
            if sum != self.edge_total[e] {
                return Err(Error::Inconsistent(format!(
                    "edge ({i}, {j}): atom counts sum to {sum}, total is {}",
                    self.edge_total[e]
                )));
            }
            for (k, &m) in per_atom.iter().enumerate() {
                row[i * k_max + k] += m;
                col[j * k_max + k] += m;
                atom[k] += m;
            }
        }
        if row != self.row_atom {
            return Err(Error::Inconsistent(
                "row marginals disagree with a recount".into(),
            ));
        }
        if col != self.col_atom {
            return Err(Error::Inconsistent(
                "column marginals disagree with a recount".into(),
            ));
        }
        if atom != self.atom_total {
            return Err(Error::Inconsistent(
                "atom totals disagree with a recount".into(),
            ));
        }
        Ok(())
    }
}
