use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::DoseGrid;
use crate::{Error, Result};

/// `(chemical, gene, dose index)`, all zero-based.
pub type CellKey = (usize, usize, usize);

/// `(chemical, gene)`, zero-based.
pub type PairKey = (usize, usize);

/// Sparse tensor of replicate-level log2-fold responses.
///
/// Cells are kept in a `BTreeMap` so iteration order is the lexicographic
/// order of `(chemical, gene, dose)` regardless of insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    n_chemicals: usize,
    n_genes: usize,
    grid: DoseGrid,
    cells: BTreeMap<CellKey, Vec<f64>>,
}

impl ObservationSet {
    pub fn new(n_chemicals: usize, n_genes: usize, grid: DoseGrid) -> Self {
        Self {
            n_chemicals,
            n_genes,
            grid,
            cells: BTreeMap::new(),
        }
    }

    pub fn n_chemicals(&self) -> usize {
        self.n_chemicals
    }

    pub fn n_genes(&self) -> usize {
        self.n_genes
    }

    pub fn n_doses(&self) -> usize {
        self.grid.len()
    }

    pub fn grid(&self) -> &DoseGrid {
        &self.grid
    }

    fn check_key(&self, (chemical, gene, dose): CellKey) -> Result<()> {
        if chemical >= self.n_chemicals || gene >= self.n_genes || dose >= self.grid.len() {
            return Err(Error::Dimension(format!(
                "cell ({chemical}, {gene}, {dose}) outside {}x{}x{}",
                self.n_chemicals,
                self.n_genes,
                self.grid.len()
            )));
        }
        Ok(())
    }

    /// Append one replicate response to a cell.
    pub fn push(&mut self, chemical: usize, gene: usize, dose: usize, response: f64) -> Result<()> {
        self.check_key((chemical, gene, dose))?;
        if !response.is_finite() {
            return Err(Error::Domain(format!(
                "non-finite response at cell ({chemical}, {gene}, {dose})"
            )));
        }
        self.cells.entry((chemical, gene, dose)).or_default().push(response);
        Ok(())
    }

    /// Replace a cell's replicates wholesale.
    pub fn set_cell(&mut self, key: CellKey, replicates: Vec<f64>) -> Result<()> {
        self.check_key(key)?;
        if replicates.is_empty() {
            return Err(Error::Domain("a stored cell needs at least one replicate".into()));
        }
        if replicates.iter().any(|y| !y.is_finite()) {
            return Err(Error::Domain(format!("non-finite response at cell {key:?}")));
        }
        self.cells.insert(key, replicates);
        Ok(())
    }

    pub fn cells(&self) -> impl Iterator<Item = (&CellKey, &Vec<f64>)> {
        self.cells.iter()
    }

    pub fn get(&self, key: &CellKey) -> Option<&[f64]> {
        self.cells.get(key).map(Vec::as_slice)
    }

    pub fn contains(&self, key: &CellKey) -> bool {
        self.cells.contains_key(key)
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn n_observations(&self) -> usize {
        self.cells.values().map(Vec::len).sum()
    }

    pub fn replicate_mean(&self, key: &CellKey) -> Option<f64> {
        self.cells
            .get(key)
            .map(|ys| ys.iter().sum::<f64>() / ys.len() as f64)
    }

    /// Mean of the grid coordinates of observed cells; the dose centring
    /// constant of the noise model. Falls back to the grid mean when empty.
    pub fn dose_center(&self) -> f64 {
        let coords = self.grid.coords();
        if self.cells.is_empty() {
            return coords.iter().sum::<f64>() / coords.len() as f64;
        }
        let total: f64 = self.cells.keys().map(|&(_, _, d)| coords[d]).sum();
        total / self.cells.len() as f64
    }

    /// Distinct observed `(chemical, gene)` pairs in lexicographic order.
    pub fn observed_pairs(&self) -> Vec<PairKey> {
        let set: BTreeSet<PairKey> = self.cells.keys().map(|&(i, j, _)| (i, j)).collect();
        set.into_iter().collect()
    }

    /// Observed dose indices per pair, ascending.
    pub fn doses_by_pair(&self) -> BTreeMap<PairKey, Vec<usize>> {
        let mut out: BTreeMap<PairKey, Vec<usize>> = BTreeMap::new();
        for &(i, j, d) in self.cells.keys() {
            out.entry((i, j)).or_default().push(d);
        }
        out
    }

    /// Copy without the given cells. Retained replicates are passed through
    /// untouched.
    pub fn without_cells(&self, masked: &BTreeSet<CellKey>) -> Self {
        let cells = self
            .cells
            .iter()
            .filter(|(k, _)| !masked.contains(k))
            .map(|(k, v)| (*k, v.clone()))
            .collect();
        Self {
            cells,
            ..self.empty_like()
        }
    }

    /// Copy without every cell of the given pairs.
    pub fn without_pairs(&self, masked: &BTreeSet<PairKey>) -> Self {
        let cells = self
            .cells
            .iter()
            .filter(|((i, j, _), _)| !masked.contains(&(*i, *j)))
            .map(|(k, v)| (*k, v.clone()))
            .collect();
        Self {
            cells,
            ..self.empty_like()
        }
    }

    /// Cells held out by dose fold `fold` (1-based): the `fold`-th lowest
    /// observed dose of every pair with at least five distinct observed
    /// doses. Pairs with fewer doses, or fewer than `fold`, contribute
    /// nothing.
    pub fn dose_fold_cells(&self, fold: usize) -> Vec<CellKey> {
        if fold == 0 {
            return Vec::new();
        }
        self.doses_by_pair()
            .into_iter()
            .filter(|(_, doses)| doses.len() >= MIN_DOSES_FOR_DOSE_HOLDOUT && fold <= doses.len())
            .map(|((i, j), doses)| (i, j, doses[fold - 1]))
            .collect()
    }

    fn empty_like(&self) -> Self {
        Self::new(self.n_chemicals, self.n_genes, self.grid.clone())
    }
}

/// A pair needs this many distinct doses before one may be held out while
/// leaving enough for a four-dose parametric fit.
pub const MIN_DOSES_FOR_DOSE_HOLDOUT: usize = 5;

/// Partition pairs into `k` near-equal folds after a seeded shuffle.
pub fn partition_pairs(pairs: &[PairKey], k: usize, seed: u64) -> Result<Vec<Vec<PairKey>>> {
    if k < 2 {
        return Err(Error::Domain(format!("pair cross-validation needs k >= 2, got {k}")));
    }
    if pairs.len() < k {
        return Err(Error::InsufficientData(format!(
            "{} pairs cannot be split into {k} folds",
            pairs.len()
        )));
    }
    let mut shuffled = pairs.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let mut folds = vec![Vec::new(); k];
    for (pos, pair) in shuffled.into_iter().enumerate() {
        folds[pos % k].push(pair);
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(folds)
}

/// Chemical structural covariates `W` (N x P) and gene pathway indicators
/// `Z` (M x Q). Either may be absent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CovariateSet {
    pub w: Option<DMatrix<f64>>,
    pub z: Option<DMatrix<f64>>,
}

impl CovariateSet {
    pub fn new(w: Option<DMatrix<f64>>, z: Option<DMatrix<f64>>) -> Result<Self> {
        if let Some(w) = &w {
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain("W contains non-finite entries".into()));
            }
        }
        if let Some(z) = &z {
            if z.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::Domain("Z entries must be 0 or 1".into()));
            }
        }
        Ok(Self { w, z })
    }

    pub fn none() -> Self {
        Self::default()
    }

    pub fn p(&self) -> usize {
        self.w.as_ref().map_or(0, |w| w.ncols())
    }

    pub fn q(&self) -> usize {
        self.z.as_ref().map_or(0, |z| z.ncols())
    }

    pub(crate) fn check(&self, n_chemicals: usize, n_genes: usize) -> Result<()> {
        if let Some(w) = &self.w {
            if w.nrows() != n_chemicals {
                return Err(Error::Dimension(format!(
                    "W has {} rows but there are {n_chemicals} chemicals",
                    w.nrows()
                )));
            }
        }
        if let Some(z) = &self.z {
            if z.nrows() != n_genes {
                return Err(Error::Dimension(format!(
                    "Z has {} rows but there are {n_genes} genes",
                    z.nrows()
                )));
            }
        }
        Ok(())
    }
}
