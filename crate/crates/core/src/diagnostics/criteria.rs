//! Information criteria from a draws × observations log-likelihood matrix.

use nalgebra::DMatrix;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Waic {
    pub waic: f64,
    pub se: f64,
    pub p_waic: f64,
    pub elpd_waic: f64,
    pub pointwise: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Loo {
    pub elpd_loo: f64,
    pub se: f64,
    pub p_loo: f64,
    pub pareto_k: Vec<f64>,
    pub pointwise: Vec<f64>,
}

impl Loo {
    /// Observations whose Pareto shape exceeds 0.7.
    pub fn high_k(&self) -> Vec<usize> {
        self.pareto_k
            .iter()
            .enumerate()
            .filter(|(_, &k)| k > 0.7)
            .map(|(i, _)| i)
            .collect()
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn check(loglik: &DMatrix<f64>) -> Result<()> {
    if loglik.nrows() == 0 || loglik.ncols() == 0 {
        return Err(Error::InsufficientData("empty log-likelihood matrix".into()));
    }
    if loglik.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(())
}

fn total_and_se(pointwise: &[f64]) -> (f64, f64) {
    let n = pointwise.len() as f64;
    let total: f64 = pointwise.iter().sum();
    if pointwise.len() < 2 {
        return (total, 0.0);
    }
    let m = total / n;
    let var = pointwise.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (total, (n * var).sqrt())
}

fn column(loglik: &DMatrix<f64>, c: usize) -> Vec<f64> {
    loglik.column(c).iter().copied().collect()
}

/// WAIC on the deviance scale, `-2 (lppd - p_waic)`.
pub fn waic(loglik: &DMatrix<f64>) -> Result<Waic> {
    check(loglik)?;
    let s = loglik.nrows() as f64;
    let mut elpd = Vec::with_capacity(loglik.ncols());
    let mut p_total = 0.0;
    for c in 0..loglik.ncols() {
        let col = column(loglik, c);
        let lppd = log_sum_exp(&col) - s.ln();
        let p = if col.len() > 1 {
            let m = col.iter().sum::<f64>() / s;
            col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (s - 1.0)
        } else {
            0.0
        };
        p_total += p;
        elpd.push(lppd - p);
    }
    let pointwise: Vec<f64> = elpd.iter().map(|e| -2.0 * e).collect();
    let (waic, se) = total_and_se(&pointwise);
    Ok(Waic {
        waic,
        se,
        p_waic: p_total,
        elpd_waic: -0.5 * waic,
        pointwise,
    })
}

/// Generalized Pareto fit by the Zhang–Stephens profile estimator with a weak
/// prior shrinking the shape toward 0.5. `x` must be sorted ascending and
/// positive at the top. Returns `(k, sigma)`.
pub fn gpd_fit(x: &[f64]) -> (f64, f64) {
    let n = x.len();
    let nf = n as f64;
    let prior = 3.0;
    let m = 30 + (nf.sqrt().floor() as usize);
    let xstar = x[((nf / 4.0 + 0.5).floor() as usize).max(1) - 1];
    let x_max = x[n - 1];
    let theta: Vec<f64> = (1..=m)
        .map(|j| 1.0 / x_max + (1.0 - (m as f64 / (j as f64 - 0.5)).sqrt()) / prior / xstar)
        .collect();
    let profile: Vec<f64> = theta
        .iter()
        .map(|&t| {
            let k = x.iter().map(|&v| (-t * v).ln_1p()).sum::<f64>() / nf;
            nf * ((t / -k).ln() - k - 1.0)
        })
        .collect();
    let norm = log_sum_exp(&profile);
    let theta_hat: f64 = theta
        .iter()
        .zip(&profile)
        .map(|(t, l)| t * (l - norm).exp())
        .sum();
    let k = x.iter().map(|&v| (-theta_hat * v).ln_1p()).sum::<f64>() / nf;
    let sigma = -k / theta_hat;
    let k = (k * nf + 10.0 * 0.5) / (nf + 10.0);
    (k, sigma)
}

fn gpd_quantile(p: f64, k: f64, sigma: f64) -> f64 {
    if k.abs() < 1e-12 {
        -sigma * (-p).ln_1p()
    } else {
        sigma * (-k * (-p).ln_1p()).exp_m1() / k
    }
}

/// Pareto-smoothed log importance weights for one observation, normalized
/// to sum to one. Returns the weights and the fitted shape.
pub fn psis_smooth(log_ratios: &[f64]) -> (Vec<f64>, f64) {
    let s = log_ratios.len();
    let max = log_ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut lw: Vec<f64> = log_ratios.iter().map(|r| r - max).collect();
    let tail_len = (0.2 * s as f64).min(3.0 * (s as f64).sqrt()).ceil() as usize;
    let mut k = 0.0;
    if tail_len >= 5 && tail_len < s {
        let mut order: Vec<usize> = (0..s).collect();
        order.sort_by(|&a, &b| lw[a].total_cmp(&lw[b]));
        let tail = &order[s - tail_len..];
        let cutoff = lw[order[s - tail_len - 1]];
        let lo = lw[tail[0]];
        let hi = lw[tail[tail_len - 1]];
        if hi - lo > f64::EPSILON / 100.0 {
            let exp_cut = cutoff.exp();
            let x: Vec<f64> = tail.iter().map(|&i| lw[i].exp() - exp_cut).collect();
            let (kk, sigma) = gpd_fit(&x);
            k = kk;
            if kk.is_finite() {
                for (rank, &i) in tail.iter().enumerate() {
                    let p = (rank as f64 + 0.5) / tail_len as f64;
                    lw[i] = (gpd_quantile(p, kk, sigma) + exp_cut).ln().min(0.0);
                }
            }
        }
    }
    let norm = log_sum_exp(&lw);
    lw.iter_mut().for_each(|v| *v -= norm);
    (lw, k)
}

/// Pareto-smoothed importance-sampling leave-one-out cross-validation.
pub fn psis_loo(loglik: &DMatrix<f64>) -> Result<Loo> {
    check(loglik)?;
    let s = loglik.nrows() as f64;
    let mut pointwise = Vec::with_capacity(loglik.ncols());
    let mut pareto_k = Vec::with_capacity(loglik.ncols());
    let mut p_loo = 0.0;
    for c in 0..loglik.ncols() {
        let col = column(loglik, c);
        let ratios: Vec<f64> = col.iter().map(|v| -v).collect();
        let (lw, k) = psis_smooth(&ratios);
        let terms: Vec<f64> = lw.iter().zip(&col).map(|(w, l)| w + l).collect();
        let elpd = log_sum_exp(&terms);
        p_loo += log_sum_exp(&col) - s.ln() - elpd;
        pointwise.push(elpd);
        pareto_k.push(k);
    }
    let (elpd_loo, se) = total_and_se(&pointwise);
    Ok(Loo {
        elpd_loo,
        se,
        p_loo,
        pareto_k,
        pointwise,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-3.0..-0.5))
    }

    #[test]
    fn waic_matches_direct_formula() {
        let ll = random_matrix(5, 4, 1);
        let got = waic(&ll).unwrap();
        let mut lppd = 0.0;
        let mut pw = 0.0;
        for c in 0..4 {
            let mut mean_lik = 0.0;
            let mut mean_ll = 0.0;
            for s in 0..5 {
                mean_lik += ll[(s, c)].exp() / 5.0;
                mean_ll += ll[(s, c)] / 5.0;
            }
            lppd += mean_lik.ln();
            let mut v = 0.0;
            for s in 0..5 {
                v += (ll[(s, c)] - mean_ll).powi(2);
            }
            pw += v / 4.0;
        }
        assert!((got.waic - (-2.0 * (lppd - pw))).abs() < 1e-10);
        assert!((got.p_waic - pw).abs() < 1e-10);
    }

    #[test]
    fn single_draw_waic() {
        let ll = DMatrix::from_row_slice(1, 3, &[-1.0, -2.0, -0.5]);
        let w = waic(&ll).unwrap();
        assert_eq!(w.p_waic, 0.0);
        assert!((w.waic - 7.0).abs() < 1e-12);
    }

    #[test]
    fn duplicated_columns_double_waic() {
        let one = random_matrix(6, 1, 2);
        let two = DMatrix::from_fn(6, 2, |r, _| one[(r, 0)]);
        let a = waic(&one).unwrap();
        let b = waic(&two).unwrap();
        assert!((b.waic - 2.0 * a.waic).abs() < 1e-12);
        assert!((b.p_waic - 2.0 * a.p_waic).abs() < 1e-12);
    }

    #[test]
    fn gpd_fit_recovers_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (k, sigma) = (0.3, 2.0);
        let mut x: Vec<f64> = (0..5000)
            .map(|_| gpd_quantile(rng.random::<f64>(), k, sigma))
            .collect();
        x.sort_by(f64::total_cmp);
        let (kh, sh) = gpd_fit(&x);
        assert!((kh - k).abs() < 0.05, "k {kh}");
        assert!((sh - sigma).abs() < 0.15, "sigma {sh}");
    }

    #[test]
    fn constant_weights_are_unchanged() {
        let (lw, k) = psis_smooth(&[0.7; 100]);
        for w in lw {
            assert!((w - (0.01f64).ln()).abs() < 1e-12);
        }
        assert_eq!(k, 0.0);
    }

    #[test]
    fn smoothing_never_raises_the_largest_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ratios: Vec<f64> = (0..400).map(|_| 3.0 * rng.random::<f64>().powi(3)).collect();
        let (lw, _) = psis_smooth(&ratios);
        let raw_norm = log_sum_exp(&ratios);
        let raw_max = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max) - raw_norm;
        let smooth_max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(smooth_max <= raw_max + 0.5);
        assert!((log_sum_exp(&lw)).abs() < 1e-12);
    }

    #[test]
    fn point_mass_posterior_gives_plain_log_likelihood() {
        let ll = DMatrix::from_fn(200, 3, |_, c| -1.0 - c as f64);
        let loo = psis_loo(&ll).unwrap();
        assert!((loo.elpd_loo - (-6.0)).abs() < 1e-10);
    }

    /// Normal mean with known unit noise and a N(0, 10^2) prior: the exact
    /// leave-one-out predictive is available in closed form.
    #[test]
    fn loo_matches_conjugate_refits() {
        let y = [0.3, -1.2, 0.8, 2.1, -0.4];
        let prior_var: f64 = 100.0;
        let posterior = |ys: &[f64]| {
            let prec = 1.0 / prior_var + ys.len() as f64;
            let mean = ys.iter().sum::<f64>() / prec;
            (mean, 1.0 / prec)
        };
        let (m, v) = posterior(&y);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let law = Normal::new(m, v.sqrt()).unwrap();
        let draws: Vec<f64> = (0..4000).map(|_| law.sample(&mut rng)).collect();
        let ln_n = |x: f64, mu: f64, var: f64| {
            -0.5 * (2.0 * std::f64::consts::PI * var).ln() - (x - mu).powi(2) / (2.0 * var)
        };
        let ll = DMatrix::from_fn(draws.len(), y.len(), |s, c| ln_n(y[c], draws[s], 1.0));
        let loo = psis_loo(&ll).unwrap();
        let mut exact = 0.0;
        for i in 0..y.len() {
            let rest: Vec<f64> = y.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| *v).collect();
            let (mi, vi) = posterior(&rest);
            exact += ln_n(y[i], mi, vi + 1.0);
        }
        assert!((loo.elpd_loo - exact).abs() < 0.05, "{} vs {exact}", loo.elpd_loo);
        assert!(loo.high_k().is_empty());
    }
}
