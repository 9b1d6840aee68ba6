//! No-U-turn Hamiltonian Monte Carlo with warmup adaptation.

mod adapt;
mod nuts;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};
use adapt::{DualAveraging, MetricWindows};
pub use nuts::{leapfrog, PhasePoint, TransitionInfo, MAX_ENERGY_ERROR};
use nuts::Nuts;

/// A differentiable log density on an unconstrained space. Errors signal a
/// point where the density or gradient is not finite.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;
    fn log_density_and_gradient(&self, position: &[f64], gradient: &mut [f64]) -> Result<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup: usize,
    pub samples: usize,
    /// Keep every `thin`-th post-warmup draw.
    pub thin: usize,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    pub seed: u64,
    /// Initial coordinates are drawn from Uniform(-init_scale, init_scale).
    pub init_scale: f64,
    /// Adapt the diagonal metric during warmup (the step size is always adapted).
    pub adapt_metric: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            warmup: 1000,
            samples: 1000,
            thin: 1,
            target_accept: 0.8,
            max_tree_depth: 10,
            seed: 1,
            init_scale: 0.1,
            adapt_metric: true,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 || self.samples == 0 || self.thin == 0 || self.max_tree_depth == 0 {
            return Err(Error::Config(
                "chains, samples, thin and max_tree_depth must be positive".into(),
            ));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Config(format!(
                "target_accept must lie in (0, 1), got {}",
                self.target_accept
            )));
        }
        if !(self.init_scale.is_finite() && self.init_scale > 0.0) {
            return Err(Error::Config("init_scale must be positive".into()));
        }
        Ok(())
    }
}

/// Per-chain adaptation results and summary statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainStats {
    pub chain: usize,
    pub step_size: f64,
    pub inv_metric: Vec<f64>,
    pub mean_accept_stat: f64,
    pub mean_tree_depth: f64,
    pub n_leapfrog: usize,
    pub n_divergent: usize,
    /// Set when more than 10% of retained iterations diverged.
    pub warning: Option<String>,
}

/// Post-warmup draws from one or more chains, each tagged with its chain.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws<S> {
    pub draws: Vec<S>,
    pub log_posterior: Vec<f64>,
    pub divergent: Vec<bool>,
    pub chain: Vec<usize>,
    pub iteration: Vec<usize>,
    pub stats: Vec<ChainStats>,
}

impl<S> Default for PosteriorDraws<S> {
    fn default() -> Self {
        Self {
            draws: Vec::new(),
            log_posterior: Vec::new(),
            divergent: Vec::new(),
            chain: Vec::new(),
            iteration: Vec::new(),
            stats: Vec::new(),
        }
    }
}

impl<S> PosteriorDraws<S> {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// Distinct chain labels in order of first appearance.
    pub fn chain_ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = Vec::new();
        for &c in &self.chain {
            if !ids.contains(&c) {
                ids.push(c);
            }
        }
        ids
    }

    /// A scalar functional of every draw, grouped by chain.
    pub fn by_chain(&self, mut f: impl FnMut(&S) -> f64) -> Vec<Vec<f64>> {
        let ids = self.chain_ids();
        let mut out = vec![Vec::new(); ids.len()];
        for (s, c) in self.draws.iter().zip(&self.chain) {
            let slot = ids.iter().position(|x| x == c).expect("label present");
            out[slot].push(f(s));
        }
        out
    }

    pub fn n_divergent(&self) -> usize {
        self.divergent.iter().filter(|&&d| d).count()
    }

    pub fn warnings(&self) -> Vec<String> {
        self.stats.iter().filter_map(|s| s.warning.clone()).collect()
    }

    pub fn try_map<T>(self, mut f: impl FnMut(S) -> Result<T>) -> Result<PosteriorDraws<T>> {
        Ok(PosteriorDraws {
            draws: self.draws.into_iter().map(&mut f).collect::<Result<_>>()?,
            log_posterior: self.log_posterior,
            divergent: self.divergent,
            chain: self.chain,
            iteration: self.iteration,
            stats: self.stats,
        })
    }

    /// Concatenate chains in the given order.
    pub fn merge(parts: Vec<Self>) -> Self {
        let mut out = Self::default();
        for p in parts {
            out.draws.extend(p.draws);
            out.log_posterior.extend(p.log_posterior);
            out.divergent.extend(p.divergent);
            out.chain.extend(p.chain);
            out.iteration.extend(p.iteration);
            out.stats.extend(p.stats);
        }
        out
    }
}

fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

fn initial_point<T: LogDensity + ?Sized>(
    target: &T,
    config: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<PhasePoint> {
    let mut last = String::new();
    for _ in 0..100 {
        let x: Vec<f64> = (0..target.dim())
            .map(|_| rng.random_range(-config.init_scale..=config.init_scale))
            .collect();
        match PhasePoint::new(target, x) {
            Ok(z) if z.log_density.is_finite() => return Ok(z),
            Ok(_) => last = "non-finite log density".into(),
            Err(e) => last = e.to_string(),
        }
    }
    Err(Error::Sampler(format!(
        "no finite initial point after 100 attempts ({last})"
    )))
}

/// Run one chain with label `chain`; its random stream depends only on
/// `(config.seed, chain)`.
pub fn run_chain<T: LogDensity + ?Sized>(
    target: &T,
    config: &SamplerConfig,
    chain: usize,
) -> Result<PosteriorDraws<Vec<f64>>> {
    config.validate()?;
    let dim = target.dim();
    let mut rng = chain_rng(config.seed, chain);
    let mut z = initial_point(target, config, &mut rng)?;
    let mut nuts = Nuts {
        target,
        inv_metric: vec![1.0; dim],
        step_size: 1.0,
        max_depth: config.max_tree_depth,
    };
    nuts.init_step_size(&z, &mut rng)?;
    let mut dual = DualAveraging::new(config.target_accept, nuts.step_size);
    let mut windows = MetricWindows::new(dim, config.warmup, config.adapt_metric);

    for _ in 0..config.warmup {
        let (next, info) = nuts.transition(&z, &mut rng);
        z = next;
        nuts.step_size = dual.learn(info.accept_stat);
        if let Some(inv_metric) = windows.observe(&z.position) {
            nuts.inv_metric = inv_metric;
            nuts.init_step_size(&z, &mut rng)?;
            dual.restart(nuts.step_size);
        }
    }
    if config.warmup > 0 {
        nuts.step_size = dual.final_step_size();
    }

    let mut out = PosteriorDraws::default();
    let (mut accept, mut depth, mut leapfrogs) = (0.0, 0.0, 0);
    for it in 0..config.samples {
        let (next, info) = nuts.transition(&z, &mut rng);
        z = next;
        accept += info.accept_stat;
        depth += info.tree_depth as f64;
        leapfrogs += info.n_leapfrog;
        if it % config.thin == 0 {
            out.draws.push(z.position.clone());
            out.log_posterior.push(z.log_density);
            out.divergent.push(info.divergent);
            out.chain.push(chain);
            out.iteration.push(it);
        }
    }
    let n_divergent = out.n_divergent();
    let kept = out.len();
    let n = config.samples as f64;
    out.stats.push(ChainStats {
        chain,
        step_size: nuts.step_size,
        inv_metric: nuts.inv_metric,
        mean_accept_stat: accept / n,
        mean_tree_depth: depth / n,
        n_leapfrog: leapfrogs,
        n_divergent,
        warning: (n_divergent * 10 > kept).then(|| {
            format!("chain {chain}: {n_divergent} of {kept} retained iterations diverged")
        }),
    });
    Ok(out)
}

/// Run `config.chains` independent chains (concurrently on the current rayon
/// pool) and merge them in chain order. If any chain fails, the completed
/// chains are returned inside [`Error::ChainsFailed`].
pub fn run_chains<T: LogDensity + ?Sized>(
    target: &T,
    config: &SamplerConfig,
) -> Result<PosteriorDraws<Vec<f64>>> {
    config.validate()?;
    let results: Vec<Result<PosteriorDraws<Vec<f64>>>> = (0..config.chains)
        .into_par_iter()
        .map(|c| run_chain(target, config, c))
        .collect();
    let mut done = Vec::new();
    let mut failures = Vec::new();
    for (c, r) in results.into_iter().enumerate() {
        match r {
            Ok(d) => done.push(d),
            Err(e) => failures.push((c, e.to_string())),
        }
    }
    let merged = PosteriorDraws::merge(done);
    if failures.is_empty() {
        Ok(merged)
    } else {
        Err(Error::ChainsFailed {
            completed: Box::new(merged),
            failures,
        })
    }
}

#[cfg(test)]
mod tests;
