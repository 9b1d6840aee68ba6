//! Synthetic datasets drawn from the generative model, and the holdout
//! schemes used to score completions.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::model::{
    kernel_matrix, mean_effect_with_kernel, noise_variance, partition_pairs, CellKey, CovariateSet,
    Dims, DoseGrid, Hyperparameters, LatentState, MeanEffect, ObservationSet, PairKey, Tau0Form,
    Variant,
};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub k: usize,
    pub p: usize,
    pub q: usize,
    pub replicates: usize,
    /// Fraction of (chemical, gene, dose) triples to hold out.
    pub pi_miss: f64,
    /// Prevalence of ones in the synthetic pathway matrix.
    pub rho_z: f64,
    pub seed: u64,
    pub variant: Variant,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n: 100,
            m: 100,
            d: 5,
            k: 10,
            p: 5,
            q: 10,
            replicates: 3,
            pi_miss: 0.0,
            rho_z: 0.1,
            seed: 1,
            variant: Variant::Dart,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.d == 0 || self.k == 0 || self.replicates == 0 {
            return Err(Error::Config("simulation sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.pi_miss) {
            return Err(Error::Config(format!("pi_miss {} outside [0, 1)", self.pi_miss)));
        }
        if !(0.0..=1.0).contains(&self.rho_z) {
            return Err(Error::Config(format!("rho_z {} outside [0, 1]", self.rho_z)));
        }
        Ok(())
    }
}

/// What a dataset's holdout removed.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Mask {
    #[default]
    None,
    Triples(BTreeSet<CellKey>),
    Pairs(BTreeSet<PairKey>),
    DoseFold {
        fold: usize,
        cells: BTreeSet<CellKey>,
        /// Pairs with too few doses to lose one; they stay fully in-sample.
        untouched: BTreeSet<PairKey>,
    },
}

impl Mask {
    /// Whether cell `key` is held out.
    pub fn contains(&self, key: &CellKey) -> bool {
        match self {
            Mask::None => false,
            Mask::Triples(cells) | Mask::DoseFold { cells, .. } => cells.contains(key),
            Mask::Pairs(pairs) => pairs.contains(&(key.0, key.1)),
        }
    }

    pub fn held_out_cells(&self, full: &ObservationSet) -> Vec<CellKey> {
        full.cells().map(|(k, _)| *k).filter(|k| self.contains(k)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    /// Every simulated cell.
    pub full: ObservationSet,
    /// Cells remaining after the holdout.
    pub data: ObservationSet,
    pub truth: MeanEffect,
    pub true_state: LatentState,
    pub covariates: CovariateSet,
    pub hyper: Hyperparameters,
    pub mask: Mask,
}

impl SyntheticDataset {
    fn with_mask(&self, data: ObservationSet, mask: Mask) -> Self {
        Self {
            data,
            mask,
            ..self.clone()
        }
    }
}

// Independent random streams per block keep shared blocks identical across
// variants and covariate dimensions.
#[derive(Clone, Copy)]
enum Stream {
    Z = 1,
    Beta,
    LogPhi,
    Delta,
    Tau0,
    Raw,
    Mu,
    Eta,
    Theta,
    MuC,
    WNoise,
    Noise,
    GeneNoise,
    Response,
}

fn stream(seed: u64, s: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s as u64);
    rng
}

fn normals(rng: &mut ChaCha8Rng, len: usize, sd: f64) -> Vec<f64> {
    (0..len)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            sd * z
        })
        .collect()
}

fn gamma_draw(rng: &mut ChaCha8Rng, shape: f64, rate: f64) -> Result<f64> {
    let law = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::Domain(e.to_string()))?;
    Ok(law.sample(rng))
}

/// Draw a latent state, covariates and replicate responses from the prior
/// stack and likelihood. A positive `pi_miss` also applies triple masking.
pub fn simulate_dataset(config: &SimulationConfig, hyper: &Hyperparameters) -> Result<SyntheticDataset> {
    config.validate()?;
    let hyper = Hyperparameters {
        k: config.k,
        ..hyper.clone()
    };
    hyper.validate()?;
    let seed = config.seed;
    let variant = config.variant;
    let (p, q) = match variant {
        Variant::Dart => (config.p, config.q),
        Variant::DartNc => (0, 0),
    };
    let dims = Dims {
        n: config.n,
        m: config.m,
        d: config.d,
        k: config.k,
        p,
        q,
    };
    let Dims { n, m, d, k, .. } = dims;
    let grid = DoseGrid::standard(d)?;
    let kernel = kernel_matrix(&grid, hyper.length_scale, hyper.jitter)?;

    let mut state = LatentState::zeros(dims, variant);
    state.mu = normals(&mut stream(seed, Stream::Mu), m * d, hyper.sigma_mu);
    state.lambda_raw = normals(&mut stream(seed, Stream::Raw), m * k * d, 1.0);
    let eta_sd = match variant {
        Variant::Dart => 1.0,
        Variant::DartNc => hyper.sigma_eta,
    };
    state.eta = normals(&mut stream(seed, Stream::Eta), n * k, eta_sd);
    let mut rng = stream(seed, Stream::Delta);
    state.delta = (0..k)
        .map(|s| {
            let pr = hyper.delta_prior(s);
            gamma_draw(&mut rng, pr.shape, pr.rate)
        })
        .collect::<Result<_>>()?;
    let t = gamma_draw(&mut stream(seed, Stream::Tau0), hyper.tau0.shape, hyper.tau0.rate)?;
    state.tau0 = match hyper.tau0_form {
        Tau0Form::Gamma => t,
        Tau0Form::InverseGamma => 1.0 / t,
    };

    let z = (q > 0).then(|| {
        let mut rng = stream(seed, Stream::Z);
        DMatrix::from_fn(m, q, |_, _| f64::from(rng.random::<f64>() < config.rho_z))
    });
    let mut w = None;
    if variant == Variant::Dart {
        state.beta = normals(&mut stream(seed, Stream::Beta), k * q, hyper.sigma_beta);
        let s = hyper.sigma_phi;
        let eps = normals(&mut stream(seed, Stream::LogPhi), m * k, s);
        for j in 0..m {
            for kk in 0..k {
                let mut loc = -0.5 * s * s;
                if let Some(z) = &z {
                    for qq in 0..q {
                        loc += z[(j, qq)] * state.beta[kk * q + qq];
                    }
                }
                state.phi[j * k + kk] = (loc + eps[j * k + kk]).exp();
            }
        }
        if p > 0 {
            state.theta = normals(&mut stream(seed, Stream::Theta), p * k, hyper.sigma_theta);
            state.mu_c = normals(&mut stream(seed, Stream::MuC), p, hyper.sigma_w);
            let e = normals(&mut stream(seed, Stream::WNoise), n * p, 1.0);
            w = Some(DMatrix::from_fn(n, p, |i, l| {
                let mut v = state.mu_c[l] + e[i * p + l];
                for kk in 0..k {
                    v += state.theta[l * k + kk] * state.eta[i * k + kk];
                }
                v
            }));
        }
    }

    let mut rng = stream(seed, Stream::Noise);
    state.alpha_d = Normal::new(hyper.alpha_d.mean, hyper.alpha_d.sd)
        .map_err(|e| Error::Domain(e.to_string()))?
        .sample(&mut rng);
    state.beta_d = Normal::new(hyper.beta_d.mean, hyper.beta_d.sd)
        .map_err(|e| Error::Domain(e.to_string()))?
        .sample(&mut rng);
    let mut rng = stream(seed, Stream::GeneNoise);
    let tau: f64 = rng.sample::<f64, _>(StandardNormal).abs() * hyper.tau_gamma_scale;
    state.tau_gamma = tau;
    state.gamma_gene = normals(&mut rng, m, tau);
    state.validate()?;

    let truth = mean_effect_with_kernel(&state, &kernel);
    let mut full = ObservationSet::new(n, m, grid.clone());
    let center = grid.coords().iter().sum::<f64>() / d as f64;
    let mut rng = stream(seed, Stream::Response);
    for i in 0..n {
        for j in 0..m {
            for dd in 0..d {
                let sd = noise_variance(state.alpha_d, state.beta_d, state.gamma_gene[j], grid.coords()[dd], center)
                    .sqrt();
                let ys = normals(&mut rng, config.replicates, sd)
                    .into_iter()
                    .map(|e| truth.get(i, j, dd) + e)
                    .collect();
                full.set_cell((i, j, dd), ys)?;
            }
        }
    }
    let dataset = SyntheticDataset {
        data: full.clone(),
        full,
        truth,
        true_state: state,
        covariates: CovariateSet::new(w, z)?,
        hyper,
        mask: Mask::None,
    };
    if config.pi_miss > 0.0 {
        mask_triples(&dataset, config.pi_miss, seed)
    } else {
        Ok(dataset)
    }
}

/// Number of triples masked at rate `pi_miss`, rounding halves up.
pub fn mask_count(pi_miss: f64, total: usize) -> usize {
    (pi_miss * total as f64 + 0.5).floor() as usize
}

/// Hold out `round(pi_miss * D * N * M)` triples, chosen uniformly, with all
/// their replicates.
pub fn mask_triples(dataset: &SyntheticDataset, pi_miss: f64, seed: u64) -> Result<SyntheticDataset> {
    if !(0.0..1.0).contains(&pi_miss) {
        return Err(Error::Domain(format!("pi_miss {pi_miss} outside [0, 1)")));
    }
    let cells: Vec<CellKey> = dataset.full.cells().map(|(k, _)| *k).collect();
    let full = &dataset.full;
    let count = mask_count(pi_miss, full.n_chemicals() * full.n_genes() * full.n_doses());
    if count >= cells.len() && count > 0 {
        return Err(Error::InsufficientData(format!(
            "masking {count} of {} cells leaves nothing to fit",
            cells.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let masked: BTreeSet<CellKey> = sample(&mut rng, cells.len(), count)
        .into_iter()
        .map(|i| cells[i])
        .collect();
    Ok(dataset.with_mask(full.without_cells(&masked), Mask::Triples(masked)))
}

/// Split observed pairs into `k` folds; fold `f` holds out every dose and
/// replicate of its pairs.
pub fn mask_pairs(dataset: &SyntheticDataset, k: usize, seed: u64) -> Result<Vec<SyntheticDataset>> {
    let folds = partition_pairs(&dataset.full.observed_pairs(), k, seed)?;
    Ok(folds
        .into_iter()
        .map(|pairs| {
            let pairs: BTreeSet<PairKey> = pairs.into_iter().collect();
            dataset.with_mask(dataset.full.without_pairs(&pairs), Mask::Pairs(pairs))
        })
        .collect())
}

/// Hold out the `fold`-th lowest observed dose (1-based) of every pair with
/// at least five doses.
pub fn mask_dose_fold(dataset: &SyntheticDataset, fold: usize) -> SyntheticDataset {
    let (cells, untouched) = dose_fold(&dataset.full, fold);
    dataset.with_mask(
        dataset.full.without_cells(&cells),
        Mask::DoseFold { fold, cells, untouched },
    )
}

/// Cells held out by dose fold `fold` and the pairs too sparse to lose one.
pub fn dose_fold(data: &ObservationSet, fold: usize) -> (BTreeSet<CellKey>, BTreeSet<PairKey>) {
    let cells: BTreeSet<CellKey> = data.dose_fold_cells(fold).into_iter().collect();
    let untouched = data
        .doses_by_pair()
        .into_iter()
        .filter(|(_, doses)| doses.len() < crate::model::MIN_DOSES_FOR_DOSE_HOLDOUT)
        .map(|(pair, _)| pair)
        .collect();
    (cells, untouched)
}
