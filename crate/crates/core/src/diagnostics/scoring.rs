//! Scoring rules, interval coverage and point-prediction error.

use crate::{Error, Result};

/// Sample CRPS, `mean|X - y| - mean|X - X'| / 2`, in O(n log n).
pub fn crps_samples(samples: &[f64], y: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("no samples".into()));
    }
    if !y.is_finite() || samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let n = samples.len() as f64;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let abs_err = sorted.iter().map(|x| (x - y).abs()).sum::<f64>() / n;
    // sum_{i,j} |x_i - x_j| = 2 sum_i (2i - n - 1) x_(i), i 1-based
    let spread: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| (2.0 * (i as f64 + 1.0) - n - 1.0) * x)
        .sum::<f64>()
        * 2.0
        / (n * n);
    Ok((abs_err - 0.5 * spread).max(0.0))
}

/// Equal-tailed central interval of `level` mass (type-7 quantiles).
pub fn central_interval(samples: &[f64], level: f64) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("no samples".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!("interval level {level} outside (0, 1)")));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let a = 0.5 * (1.0 - level);
    Ok((
        super::convergence::quantile(&sorted, a),
        super::convergence::quantile(&sorted, 1.0 - a),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Coverage {
    /// Coverage in each quintile of |observation|, smallest first.
    pub bins: [f64; 5],
    pub counts: [usize; 5],
    pub overall: f64,
}

/// Fraction of observations inside their intervals, overall and by quintile
/// of absolute observed value. Ties in |obs| keep input order.
pub fn coverage_by_quintile(intervals: &[(f64, f64)], observations: &[f64]) -> Result<Coverage> {
    if intervals.len() != observations.len() {
        return Err(Error::Dimension(format!(
            "{} intervals for {} observations",
            intervals.len(),
            observations.len()
        )));
    }
    if observations.is_empty() {
        return Err(Error::InsufficientData("no observations".into()));
    }
    let n = observations.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| observations[a].abs().total_cmp(&observations[b].abs()));
    let mut hits = [0usize; 5];
    let mut counts = [0usize; 5];
    for (rank, &i) in order.iter().enumerate() {
        let bin = 5 * rank / n;
        counts[bin] += 1;
        let (lo, hi) = intervals[i];
        if lo <= observations[i] && observations[i] <= hi {
            hits[bin] += 1;
        }
    }
    let mut bins = [f64::NAN; 5];
    for b in 0..5 {
        if counts[b] > 0 {
            bins[b] = hits[b] as f64 / counts[b] as f64;
        }
    }
    Ok(Coverage {
        bins,
        counts,
        overall: hits.iter().sum::<usize>() as f64 / n as f64,
    })
}

/// Root mean squared error and `1 - SSE/SST`, SST taken about the mean of
/// the observations.
pub fn rmse_r2(pred: &[f64], obs: &[f64]) -> Result<(f64, f64)> {
    if pred.len() != obs.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} observations",
            pred.len(),
            obs.len()
        )));
    }
    if obs.is_empty() {
        return Err(Error::InsufficientData("no observations".into()));
    }
    let n = obs.len() as f64;
    let mean = obs.iter().sum::<f64>() / n;
    let sse: f64 = pred.iter().zip(obs).map(|(p, o)| (p - o) * (p - o)).sum();
    let sst: f64 = obs.iter().map(|o| (o - mean) * (o - mean)).sum();
    Ok(((sse / n).sqrt(), 1.0 - sse / sst))
}

/// In-sample and out-of-sample `(rmse, r2)`, selected by `held_out`.
/// A side with no cells yields NaNs.
pub fn rmse_r2_split(pred: &[f64], obs: &[f64], held_out: &[bool]) -> Result<((f64, f64), (f64, f64))> {
    if held_out.len() != obs.len() {
        return Err(Error::Dimension("mask length differs from observations".into()));
    }
    let pick = |flag: bool| -> Result<(f64, f64)> {
        let (p, o): (Vec<f64>, Vec<f64>) = pred
            .iter()
            .zip(obs)
            .zip(held_out)
            .filter(|(_, &h)| h == flag)
            .map(|((p, o), _)| (*p, *o))
            .unzip();
        if o.is_empty() {
            Ok((f64::NAN, f64::NAN))
        } else {
            rmse_r2(&p, &o)
        }
    };
    Ok((pick(false)?, pick(true)?))
}

/// One-sample Kolmogorov–Smirnov test against a continuous CDF, returning
/// the statistic and its asymptotic p-value.
pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("no samples".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i as f64 + 1.0) / n - f);
    }
    let sqrt_n = n.sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    Ok((d, kolmogorov_q(lambda)))
}

fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let j = j as f64;
        let term = 2.0 * (-1f64).powf(j - 1.0) * (-2.0 * j * j * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn crps_brute(xs: &[f64], y: f64) -> f64 {
        let n = xs.len() as f64;
        let a = xs.iter().map(|x| (x - y).abs()).sum::<f64>() / n;
        let mut b = 0.0;
        for x in xs {
            for z in xs {
                b += (x - z).abs();
            }
        }
        a - 0.5 * b / (n * n)
    }

    #[test]
    fn crps_examples() {
        assert_eq!(crps_samples(&[3.0], 1.5).unwrap(), 1.5);
        assert!((crps_samples(&[0.0, 2.0], 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(crps_samples(&[2.0; 7], 2.0).unwrap(), 0.0);
    }

    #[test]
    fn crps_matches_pairwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let xs: Vec<f64> = (0..9).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y = rng.random_range(-3.0..3.0);
            assert!((crps_samples(&xs, y).unwrap() - crps_brute(&xs, y)).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn crps_nonnegative_and_permutation_invariant(
            xs in prop::collection::vec(-5.0f64..5.0, 1..30), y in -6.0f64..6.0, rot in 0usize..30
        ) {
            let a = crps_samples(&xs, y).unwrap();
            prop_assert!(a >= 0.0);
            let mut ys = xs.clone();
            let r = rot % ys.len();
            ys.rotate_left(r);
            ys.reverse();
            prop_assert!((crps_samples(&ys, y).unwrap() - a).abs() < 1e-12);
        }

        #[test]
        fn coverage_overall_is_weighted_bin_mean(
            obs in prop::collection::vec(-3.0f64..3.0, 5..60), width in 0.0f64..2.0
        ) {
            let intervals: Vec<(f64, f64)> = obs.iter().enumerate()
                .map(|(i, o)| { let c = o + (i as f64 * 0.37).sin(); (c - width, c + width) })
                .collect();
            let cov = coverage_by_quintile(&intervals, &obs).unwrap();
            let weighted: f64 = (0..5).map(|b| cov.bins[b] * cov.counts[b] as f64).sum::<f64>()
                / obs.len() as f64;
            prop_assert!((weighted - cov.overall).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&cov.overall));
        }
    }

    #[test]
    fn infinite_intervals_cover_everything() {
        let obs = [0.1, -2.0, 0.5, 3.0, -0.2, 1.1, 0.0, 0.7, -0.9, 2.2];
        let iv = vec![(f64::NEG_INFINITY, f64::INFINITY); obs.len()];
        let cov = coverage_by_quintile(&iv, &obs).unwrap();
        assert_eq!(cov.bins, [1.0; 5]);
        assert_eq!(cov.counts, [2; 5]);
        let wrong: Vec<(f64, f64)> = obs.iter().map(|o| (o + 1.0, o + 1.0)).collect();
        assert_eq!(coverage_by_quintile(&wrong, &obs).unwrap().overall, 0.0);
    }

    #[test]
    fn quintiles_follow_absolute_value() {
        let obs = [-5.0, 1.0, 2.0, -3.0, 4.0];
        // only the observation with |obs| = 4 is covered
        let iv: Vec<(f64, f64)> = obs.iter().map(|&o| if o == 4.0 { (3.0, 5.0) } else { (9.0, 9.0) }).collect();
        let cov = coverage_by_quintile(&iv, &obs).unwrap();
        assert_eq!(cov.bins, [0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn r2_examples() {
        let obs = [1.0, 2.0, 4.0];
        assert_eq!(rmse_r2(&obs, &obs).unwrap(), (0.0, 1.0));
        let mean = 7.0 / 3.0;
        let (_, r2) = rmse_r2(&[mean; 3], &obs).unwrap();
        assert!(r2.abs() < 1e-15);
        // SSE = 0.25 + 0 + 1 = 1.25, SST = 14/3
        let (rmse, r2) = rmse_r2(&[1.5, 2.0, 3.0], &obs).unwrap();
        assert!((rmse - (1.25f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((r2 - (1.0 - 1.25 / (14.0 / 3.0))).abs() < 1e-15);
    }

    #[test]
    fn split_metrics_partition_cells() {
        let obs = [1.0, 2.0, 3.0, 4.0];
        let pred = [1.0, 2.5, 3.0, 3.0];
        let ((ri, _), (ro, _)) = rmse_r2_split(&pred, &obs, &[false, true, false, true]).unwrap();
        assert_eq!(ri, 0.0);
        assert!((ro - (0.625f64).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn central_interval_of_uniform_grid() {
        let xs: Vec<f64> = (0..=100).map(|i| i as f64).collect();
        let (lo, hi) = central_interval(&xs, 0.9).unwrap();
        assert!((lo - 5.0).abs() < 1e-12 && (hi - 95.0).abs() < 1e-12);
    }

    #[test]
    fn ks_accepts_uniform_and_rejects_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs: Vec<f64> = (0..2000).map(|_| rng.random::<f64>()).collect();
        let cdf = |x: f64| x.clamp(0.0, 1.0);
        assert!(ks_test(&xs, cdf).unwrap().1 > 0.01);
        let shifted: Vec<f64> = xs.iter().map(|x| x * 0.8).collect();
        assert!(ks_test(&shifted, cdf).unwrap().1 < 1e-6);
    }
}
