//! Fitting the model with the sampler, posterior summaries, predictive
//! checks and pair-structured cross-validation.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::diagnostics::{
    central_interval, coverage_by_quintile, crps_samples, psis_loo, rmse_r2_split, scalar_diagnostics, waic,
    MetricReport,
};
use crate::model::{
    partition_pairs, CellKey, CovariateSet, DartModel, Hyperparameters, LatentState, MeanEffect, ObservationSet,
    PairKey, Variant,
};
use crate::sampler::{run_chains, PosteriorDraws, SamplerConfig};
use crate::simulate::{Mask, SyntheticDataset};
use crate::{Error, Result};

/// A fitted model: the density it was fitted with and its posterior draws.
#[derive(Debug, Clone)]
pub struct Fit {
    pub model: DartModel,
    pub draws: PosteriorDraws<LatentState>,
}

/// Sample the posterior of `variant` given `data` and `covariates`.
pub fn fit_model(
    variant: Variant,
    data: &ObservationSet,
    covariates: &CovariateSet,
    hyper: &Hyperparameters,
    sampler: &SamplerConfig,
    parallel_genes: bool,
) -> Result<Fit> {
    let model = DartModel::new(variant, data, covariates, hyper)?.with_parallel_genes(parallel_genes);
    let raw = run_chains(&model, sampler)?;
    let layout = *model.layout();
    let draws = raw.try_map(|x| LatentState::from_unconstrained(&layout, &x))?;
    Ok(Fit { model, draws })
}

/// Deterministic standard-normal quantiles from a golden-ratio sequence, used
/// for posterior-predictive noise so summaries need no random stream.
pub fn weyl_normal_quantiles(n: usize) -> Vec<f64> {
    const GOLDEN: f64 = 0.618_033_988_749_894_9;
    let normal = Normal::standard();
    (0..n)
        .map(|s| normal.inverse_cdf((0.5 + s as f64 * GOLDEN).fract()))
        .collect()
}

impl Fit {
    pub fn mean_effect_draws(&self) -> Vec<MeanEffect> {
        self.draws.draws.iter().map(|s| self.model.mean_effect(s)).collect()
    }

    pub fn posterior_mean_effect(&self) -> MeanEffect {
        let draws = self.mean_effect_draws();
        let (d, n, m) = draws[0].shape();
        let mut out = MeanEffect::zeros(n, m, d);
        let scale = 1.0 / draws.len() as f64;
        for s in &draws {
            for (o, v) in out.values_mut().iter_mut().zip(s.values()) {
                *o += v * scale;
            }
        }
        out
    }

    /// Draws × observations matrix of replicate log densities for every
    /// replicate in `data`, cell order then replicate order.
    pub fn log_likelihood_matrix(&self, data: &ObservationSet) -> DMatrix<f64> {
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        let n_obs = data.n_observations();
        let mut out = DMatrix::zeros(self.draws.len(), n_obs);
        for (s, state) in self.draws.draws.iter().enumerate() {
            let effect = self.model.mean_effect(state);
            let mut col = 0;
            for (&(i, j, d), ys) in data.cells() {
                let var = self.model.noise_variance(state, j, d);
                let mean = effect.get(i, j, d);
                for &y in ys {
                    out[(s, col)] = -0.5 * (ln_2pi + var.ln()) - 0.5 * (y - mean).powi(2) / var;
                    col += 1;
                }
            }
        }
        out
    }

    /// Posterior-predictive draws of the mean of `replicates` new replicates
    /// at `cell`, one per posterior draw.
    pub fn predictive_mean_draws(&self, cell: CellKey, replicates: usize, effects: &[MeanEffect]) -> Vec<f64> {
        let (i, j, d) = cell;
        let z = weyl_normal_quantiles(effects.len());
        self.draws
            .draws
            .iter()
            .zip(effects)
            .zip(z)
            .map(|((state, effect), z)| {
                let sd = (self.model.noise_variance(state, j, d) / replicates as f64).sqrt();
                effect.get(i, j, d) + sd * z
            })
            .collect()
    }

    /// Metrics against `full`, with cells for which `held_out` is true scored
    /// as out-of-sample. Coverage and CRPS use every cell of `full`.
    pub fn evaluate(&self, full: &ObservationSet, held_out: impl Fn(&CellKey) -> bool) -> Result<MetricReport> {
        let effects = self.mean_effect_draws();
        let mean = self.posterior_mean_effect();
        let mut pred = Vec::new();
        let mut obs = Vec::new();
        let mut mask = Vec::new();
        let mut intervals = Vec::new();
        let mut crps = 0.0;
        for (key, ys) in full.cells() {
            let ybar = ys.iter().sum::<f64>() / ys.len() as f64;
            let draws = self.predictive_mean_draws(*key, ys.len(), &effects);
            intervals.push(central_interval(&draws, 0.95)?);
            crps += crps_samples(&draws, ybar)?;
            pred.push(mean.get(key.0, key.1, key.2));
            obs.push(ybar);
            mask.push(held_out(key));
        }
        let (in_sample, out_of_sample) = rmse_r2_split(&pred, &obs, &mask)?;
        let ll = self.log_likelihood_matrix(self.model.data());
        let (waic, loo) = if self.draws.len() > 1 {
            (Some(waic(&ll)?), Some(psis_loo(&ll)?))
        } else {
            (None, None)
        };
        Ok(MetricReport {
            scalars: self.convergence()?,
            waic,
            loo,
            mean_crps: crps / obs.len() as f64,
            coverage: Some(coverage_by_quintile(&intervals, &obs)?),
            in_sample,
            out_of_sample,
        })
    }

    /// R̂ and ESS for the log posterior, the noise parameters and every
    /// observed cell's mean effect. Factor coordinates are omitted since they
    /// are identified only up to rotation.
    pub fn convergence(&self) -> Result<Vec<(String, crate::diagnostics::ScalarDiagnostics)>> {
        if self.draws.len() / self.draws.chain_ids().len().max(1) < 4 {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        let lp = {
            let ids = self.draws.chain_ids();
            ids.iter()
                .map(|c| {
                    self.draws
                        .log_posterior
                        .iter()
                        .zip(&self.draws.chain)
                        .filter(|(_, ch)| *ch == c)
                        .map(|(v, _)| *v)
                        .collect::<Vec<f64>>()
                })
                .collect::<Vec<_>>()
        };
        out.push(("lp".to_string(), scalar_diagnostics(&lp)?));
        out.push(("alpha_d".into(), scalar_diagnostics(&self.draws.by_chain(|s| s.alpha_d))?));
        out.push(("beta_d".into(), scalar_diagnostics(&self.draws.by_chain(|s| s.beta_d))?));
        out.push(("tau_gamma".into(), scalar_diagnostics(&self.draws.by_chain(|s| s.tau_gamma))?));
        let effects = self.mean_effect_draws();
        let mut idx = 0;
        let effect_chains = self.draws.by_chain(|_| {
            idx += 1;
            (idx - 1) as f64
        });
        for (i, j, d) in self.model.data().cells().map(|(k, _)| *k) {
            let chains: Vec<Vec<f64>> = effect_chains
                .iter()
                .map(|c| c.iter().map(|&s| effects[s as usize].get(i, j, d)).collect())
                .collect();
            out.push((format!("S[{i},{j},{d}]"), scalar_diagnostics(&chains)?));
        }
        Ok(out)
    }
}

/// Per-fold result of pair-structured cross-validation.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldMetrics {
    pub fold: usize,
    pub in_sample: (f64, f64),
    pub out_of_sample: (f64, f64),
    pub divergent: usize,
}

/// Hold out `1/k` of the chemical–gene pairs per fold, fit on the rest and
/// score replicate means of the held-out pairs.
pub fn pair_crossval(
    variant: Variant,
    dataset: &SyntheticDataset,
    k: usize,
    fold_seed: u64,
    sampler: &SamplerConfig,
    parallel_genes: bool,
) -> Result<Vec<FoldMetrics>> {
    pair_crossval_observed(
        variant,
        &dataset.full,
        &dataset.covariates,
        &dataset.hyper,
        k,
        fold_seed,
        sampler,
        parallel_genes,
    )
}

/// [`pair_crossval`] on an observation set rather than a synthetic dataset.
#[allow(clippy::too_many_arguments)]
pub fn pair_crossval_observed(
    variant: Variant,
    data: &ObservationSet,
    covariates: &CovariateSet,
    hyper: &Hyperparameters,
    k: usize,
    fold_seed: u64,
    sampler: &SamplerConfig,
    parallel_genes: bool,
) -> Result<Vec<FoldMetrics>> {
    partition_pairs(&data.observed_pairs(), k, fold_seed)?
        .into_iter()
        .enumerate()
        .map(|(fold, pairs)| {
            let held: BTreeSet<PairKey> = pairs.into_iter().collect();
            let train = data.without_pairs(&held);
            let fit = fit_model(variant, &train, covariates, hyper, sampler, parallel_genes)?;
            let mean = fit.posterior_mean_effect();
            let mut pred = Vec::new();
            let mut obs = Vec::new();
            let mut mask = Vec::new();
            for (key, _) in data.cells() {
                pred.push(mean.get(key.0, key.1, key.2));
                obs.push(data.replicate_mean(key).expect("cell present"));
                mask.push(held.contains(&(key.0, key.1)));
            }
            let (in_sample, out_of_sample) = rmse_r2_split(&pred, &obs, &mask)?;
            Ok(FoldMetrics {
                fold: fold + 1,
                in_sample,
                out_of_sample,
                divergent: fit.draws.n_divergent(),
            })
        })
        .collect()
}

/// WAIC at each candidate kernel length scale; the best is the smallest.
pub fn length_scale_search(
    variant: Variant,
    data: &ObservationSet,
    covariates: &CovariateSet,
    hyper: &Hyperparameters,
    sampler: &SamplerConfig,
    candidates: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if candidates.is_empty() {
        return Err(Error::Config("no length-scale candidates".into()));
    }
    candidates
        .iter()
        .map(|&l| {
            let h = Hyperparameters {
                length_scale: l,
                ..hyper.clone()
            };
            let fit = fit_model(variant, data, covariates, &h, sampler, false)?;
            Ok((l, waic(&fit.log_likelihood_matrix(data))?.waic))
        })
        .collect()
}

/// Correlation between posterior-mean and true mean effects over the cells
/// selected by `select` (keys of `dataset.full`).
pub fn recovery_correlation(
    estimate: &MeanEffect,
    dataset: &SyntheticDataset,
    select: impl Fn(&CellKey) -> bool,
) -> f64 {
    let (a, b): (Vec<f64>, Vec<f64>) = dataset
        .full
        .cells()
        .map(|(k, _)| *k)
        .filter(|k| select(k))
        .map(|(i, j, d)| (estimate.get(i, j, d), dataset.truth.get(i, j, d)))
        .unzip();
    pearson(&a, &b)
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// True for masked cells of a dataset; convenience for [`Fit::evaluate`].
pub fn held_out_by(mask: &Mask) -> impl Fn(&CellKey) -> bool + '_ {
    move |k| mask.contains(k)
}
