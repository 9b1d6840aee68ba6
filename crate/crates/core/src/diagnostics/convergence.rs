//! Rank-normalized split-R̂ and effective sample size.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::{Error, Result};

fn check_chains(chains: &[Vec<f64>]) -> Result<usize> {
    let n = chains.first().map_or(0, Vec::len);
    if chains.is_empty() || n < 4 {
        return Err(Error::InsufficientData(
            "need at least one chain with four or more draws".into(),
        ));
    }
    if chains.iter().any(|c| c.len() != n) {
        return Err(Error::Dimension("chains have different lengths".into()));
    }
    if chains.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(n)
}

/// Split each chain into halves, dropping the middle draw of odd chains.
fn split(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let half = c.len() / 2;
        out.push(c[..half].to_vec());
        out.push(c[c.len() - half..].to_vec());
    }
    out
}

fn is_constant(chains: &[Vec<f64>]) -> bool {
    let first = chains[0][0];
    chains.iter().flatten().all(|&v| v == first)
}

/// Average ranks (1-based) with ties sharing their mean rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let flat: Vec<f64> = chains.iter().flatten().copied().collect();
    let s = flat.len() as f64;
    let normal = Normal::standard();
    let z: Vec<f64> = average_ranks(&flat)
        .into_iter()
        .map(|r| normal.inverse_cdf((r - 0.375) / (s + 0.25)))
        .collect();
    let n = chains[0].len();
    z.chunks(n).map(<[f64]>::to_vec).collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

fn rhat_basic(chains: &[Vec<f64>]) -> f64 {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let b = n * sample_var(&means);
    let w = mean(&chains.iter().map(|c| sample_var(c)).collect::<Vec<_>>());
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

/// Type-7 sample quantile.
pub(crate) fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted_flat(chains: &[Vec<f64>]) -> Vec<f64> {
    let mut v: Vec<f64> = chains.iter().flatten().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Rank-normalized split-R̂: the larger of the bulk and folded statistics.
/// Returns NaN when the draws are constant.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<f64> {
    check_chains(chains)?;
    if is_constant(chains) {
        return Ok(f64::NAN);
    }
    let halves = split(chains);
    let bulk = rhat_basic(&rank_normalize(&halves));
    let med = quantile(&sorted_flat(&halves), 0.5);
    let folded: Vec<Vec<f64>> = halves
        .iter()
        .map(|c| c.iter().map(|x| (x - med).abs()).collect())
        .collect();
    let tail = if is_constant(&folded) {
        f64::NAN
    } else {
        rhat_basic(&rank_normalize(&folded))
    };
    Ok(if tail.is_nan() { bulk } else { bulk.max(tail) })
}

fn autocov(c: &[f64], m: f64, lag: usize) -> f64 {
    let n = c.len();
    (0..n - lag).map(|i| (c[i] - m) * (c[i + lag] - m)).sum::<f64>() / n as f64
}

/// Multi-chain effective sample size by Geyer's initial monotone sequence,
/// capped at the number of draws.
fn ess_raw(chains: &[Vec<f64>]) -> f64 {
    if is_constant(chains) {
        return f64::NAN;
    }
    let m = chains.len();
    let n = chains[0].len();
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let acov_mean = |lag: usize| {
        chains
            .iter()
            .zip(&means)
            .map(|(c, &mu)| autocov(c, mu, lag))
            .sum::<f64>()
            / m as f64
    };
    let nf = n as f64;
    let mean_var = acov_mean(0) * nf / (nf - 1.0);
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += sample_var(&means);
    }
    let rho = |lag: usize| 1.0 - (mean_var - acov_mean(lag)) / var_plus;

    let mut rho_hat = vec![0.0; n + 1];
    rho_hat[0] = 1.0;
    let mut even = 1.0;
    let mut odd = rho(1);
    rho_hat[1] = odd;
    let mut s = 1;
    while s + 4 < n && even + odd > 0.0 {
        even = rho(s + 1);
        odd = rho(s + 2);
        if even + odd >= 0.0 {
            rho_hat[s + 1] = even;
            rho_hat[s + 2] = odd;
        }
        s += 2;
    }
    let max_s = s;
    if even > 0.0 {
        rho_hat[max_s + 1] = even;
    }
    let mut t = 1;
    while t + 3 <= max_s {
        if rho_hat[t + 1] + rho_hat[t + 2] > rho_hat[t - 1] + rho_hat[t] {
            rho_hat[t + 1] = (rho_hat[t - 1] + rho_hat[t]) / 2.0;
            rho_hat[t + 2] = rho_hat[t + 1];
        }
        t += 2;
    }
    let total = (m * n) as f64;
    let tau = -1.0 + 2.0 * rho_hat[..max_s].iter().sum::<f64>() + rho_hat[max_s + 1];
    (total / tau.max(1.0 / total.log10())).min(total)
}

/// Bulk and tail effective sample sizes. Either is NaN when undefined,
/// e.g. for constant draws.
pub fn ess(chains: &[Vec<f64>]) -> Result<(f64, f64)> {
    check_chains(chains)?;
    if is_constant(chains) {
        return Ok((f64::NAN, f64::NAN));
    }
    let halves = split(chains);
    let bulk = ess_raw(&rank_normalize(&halves));
    let sorted = sorted_flat(&halves);
    let indicator = |q: f64| -> Vec<Vec<f64>> {
        halves
            .iter()
            .map(|c| c.iter().map(|&x| f64::from(x <= q)).collect())
            .collect()
    };
    let lo = ess_raw(&indicator(quantile(&sorted, 0.05)));
    let hi = ess_raw(&indicator(quantile(&sorted, 0.95)));
    Ok((bulk, lo.min(hi)))
}

/// Convergence summary for one scalar quantity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarDiagnostics {
    pub rhat: f64,
    pub ess_bulk: f64,
    pub ess_tail: f64,
    /// True when any of the statistics is undefined (constant draws).
    pub undefined: bool,
}

pub fn scalar_diagnostics(chains: &[Vec<f64>]) -> Result<ScalarDiagnostics> {
    let rhat = split_rhat(chains)?;
    let (ess_bulk, ess_tail) = ess(chains)?;
    Ok(ScalarDiagnostics {
        rhat,
        ess_bulk,
        ess_tail,
        undefined: rhat.is_nan() || ess_bulk.is_nan() || ess_tail.is_nan(),
    })
}
