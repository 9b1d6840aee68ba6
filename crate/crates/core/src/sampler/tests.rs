use super::*;
use crate::diagnostics::{ess, split_rhat};
use crate::Error;

/// Independent normals with the given standard deviations.
struct Normals(Vec<f64>);

impl LogDensity for Normals {
    fn dim(&self) -> usize {
        self.0.len()
    }

    fn log_density_and_gradient(&self, x: &[f64], g: &mut [f64]) -> Result<f64> {
        let mut lp = 0.0;
        for ((xi, gi), s) in x.iter().zip(g.iter_mut()).zip(&self.0) {
            lp -= 0.5 * (xi / s).powi(2);
            *gi = -xi / (s * s);
        }
        Ok(lp)
    }
}

/// Bivariate normal with unit variances and correlation `rho`.
struct Correlated(f64);

impl LogDensity for Correlated {
    fn dim(&self) -> usize {
        2
    }

    fn log_density_and_gradient(&self, x: &[f64], g: &mut [f64]) -> Result<f64> {
        let r = self.0;
        let c = 1.0 / (1.0 - r * r);
        g[0] = -c * (x[0] - r * x[1]);
        g[1] = -c * (x[1] - r * x[0]);
        Ok(-0.5 * c * (x[0] * x[0] - 2.0 * r * x[0] * x[1] + x[1] * x[1]))
    }
}

struct Flat(usize);

impl LogDensity for Flat {
    fn dim(&self) -> usize {
        self.0
    }

    fn log_density_and_gradient(&self, _x: &[f64], g: &mut [f64]) -> Result<f64> {
        g.iter_mut().for_each(|v| *v = 0.0);
        Ok(0.0)
    }
}

/// Finite only on the positive half-line.
struct HalfLine;

impl LogDensity for HalfLine {
    fn dim(&self) -> usize {
        1
    }

    fn log_density_and_gradient(&self, x: &[f64], g: &mut [f64]) -> Result<f64> {
        if x[0] <= 0.0 {
            return Err(Error::NonFinite);
        }
        g[0] = 1.0 / x[0] - 1.0;
        Ok(x[0].ln() - x[0])
    }
}

fn config(chains: usize, warmup: usize, samples: usize, seed: u64) -> SamplerConfig {
    SamplerConfig {
        chains,
        warmup,
        samples,
        seed,
        ..SamplerConfig::default()
    }
}

#[test]
fn free_particle_moves_by_scaled_momentum() {
    let target = Flat(3);
    let mut x = vec![1.0, -2.0, 0.5];
    let mut p = vec![0.3, 0.7, -1.1];
    let mut g = vec![0.0; 3];
    let inv_metric = [1.0, 2.0, 0.5];
    leapfrog(&target, &mut x, &mut p, &mut g, 0.1, &inv_metric).unwrap();
    let expected = [1.0 + 0.1 * 0.3, -2.0 + 0.1 * 2.0 * 0.7, 0.5 - 0.1 * 0.5 * 1.1];
    for (a, b) in x.iter().zip(expected) {
        assert!((a - b).abs() < 1e-15);
    }
    assert_eq!(p, vec![0.3, 0.7, -1.1]);
}

#[test]
fn energy_error_is_second_order() {
    let target = Normals(vec![1.0]);
    // largest energy error over a unit-time trajectory
    let errors: Vec<f64> = [0.1f64, 0.05, 0.025]
        .iter()
        .map(|&eps| {
            let mut z = PhasePoint::new(&target, vec![0.8]).unwrap();
            z.momentum = vec![0.6];
            let h0 = z.hamiltonian(&[1.0]);
            let mut worst: f64 = 0.0;
            for _ in 0..(1.0 / eps).round() as usize {
                z.log_density =
                    leapfrog(&target, &mut z.position, &mut z.momentum, &mut z.gradient, eps, &[1.0]).unwrap();
                worst = worst.max((z.hamiltonian(&[1.0]) - h0).abs());
            }
            worst
        })
        .collect();
    // halving the step should divide the error by about four
    for w in errors.windows(2) {
        let ratio = w[0] / w[1];
        assert!((3.0..5.0).contains(&ratio), "ratio {ratio}, errors {errors:?}");
    }
}

#[test]
fn leapfrog_is_reversible() {
    let target = Normals(vec![1.0, 2.0, 0.5]);
    let inv_metric = [1.0, 0.7, 1.3];
    let start = vec![0.4, -1.2, 0.9];
    let mut z = PhasePoint::new(&target, start.clone()).unwrap();
    z.momentum = vec![0.5, 0.1, -0.8];
    let p0 = z.momentum.clone();
    for _ in 0..25 {
        leapfrog(&target, &mut z.position, &mut z.momentum, &mut z.gradient, 0.1, &inv_metric).unwrap();
    }
    z.momentum.iter_mut().for_each(|p| *p = -*p);
    for _ in 0..25 {
        leapfrog(&target, &mut z.position, &mut z.momentum, &mut z.gradient, 0.1, &inv_metric).unwrap();
    }
    for (a, b) in z.position.iter().zip(&start) {
        assert!((a - b).abs() < 1e-10);
    }
    for (a, b) in z.momentum.iter().zip(&p0) {
        assert!((a + b).abs() < 1e-10);
    }
}

#[test]
fn leapfrog_reports_nonfinite_density() {
    let mut x = vec![0.1];
    let mut p = vec![-5.0];
    let mut g = vec![0.0];
    assert!(leapfrog(&HalfLine, &mut x, &mut p, &mut g, 1.0, &[1.0]).is_err());
}

#[test]
fn standard_normal_moments() {
    let target = Normals(vec![1.0; 4]);
    let draws = run_chain(&target, &config(1, 1000, 2000, 11), 0).unwrap();
    for c in 0..4 {
        let xs: Vec<f64> = draws.draws.iter().map(|d| d[c]).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let (bulk, _) = ess(&[xs.clone()]).unwrap();
        let mcse = (var / bulk).sqrt();
        assert!(mean.abs() < 3.0 * mcse, "coord {c}: mean {mean}, mcse {mcse}");
        assert!((var - 1.0).abs() < 0.1, "coord {c}: var {var}");
    }
    // Dual averaging settles on the geometric mean of its iterates, which on
    // low-dimensional Gaussians realizes an acceptance somewhat above target.
    let accept = draws.stats[0].mean_accept_stat;
    assert!((0.75..0.95).contains(&accept), "accept {accept}");
}

#[test]
fn adapted_metric_tracks_scales() {
    let target = Normals(vec![0.1, 1.0, 10.0]);
    let draws = run_chain(&target, &config(1, 1000, 200, 5), 0).unwrap();
    let m = &draws.stats[0].inv_metric;
    assert!(m[0] < 0.05 && m[2] > 30.0, "inverse metric {m:?}");
}

#[test]
fn correlated_normal_recovers_correlation() {
    let target = Correlated(0.9);
    let draws = run_chain(&target, &config(1, 1000, 4000, 3), 0).unwrap();
    let n = draws.len() as f64;
    let mean = |c: usize| draws.draws.iter().map(|d| d[c]).sum::<f64>() / n;
    let (m0, m1) = (mean(0), mean(1));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for d in &draws.draws {
        sxy += (d[0] - m0) * (d[1] - m1);
        sxx += (d[0] - m0).powi(2);
        syy += (d[1] - m1).powi(2);
    }
    let r = sxy / (sxx * syy).sqrt();
    assert!((r - 0.9).abs() < 0.05, "correlation {r}");
}

#[test]
fn same_seed_same_draws() {
    let target = Normals(vec![1.0, 2.0]);
    let a = run_chain(&target, &config(1, 100, 100, 9), 0).unwrap();
    let b = run_chain(&target, &config(1, 100, 100, 9), 0).unwrap();
    assert_eq!(a, b);
}

#[test]
fn single_chain_run_matches_run_chain() {
    let target = Normals(vec![1.0, 2.0]);
    let cfg = config(1, 100, 100, 4);
    assert_eq!(run_chains(&target, &cfg).unwrap(), run_chain(&target, &cfg, 0).unwrap());
}

#[test]
fn chains_differ_and_mix() {
    let target = Normals(vec![1.0]);
    let draws = run_chains(&target, &config(2, 1000, 2000, 21)).unwrap();
    let per_chain = draws.by_chain(|d| d[0]);
    assert_eq!(per_chain.len(), 2);
    assert_ne!(per_chain[0], per_chain[1]);
    let rhat = split_rhat(&per_chain).unwrap();
    assert!(rhat <= 1.01, "rhat {rhat}");
}

#[test]
fn warmup_draws_are_excluded() {
    let target = Normals(vec![1.0]);
    let draws = run_chains(&target, &config(3, 50, 37, 2)).unwrap();
    assert_eq!(draws.len(), 3 * 37);
    for c in 0..3 {
        let its: Vec<usize> = draws
            .iteration
            .iter()
            .zip(&draws.chain)
            .filter(|(_, &ch)| ch == c)
            .map(|(&it, _)| it)
            .collect();
        assert_eq!(its, (0..37).collect::<Vec<_>>());
    }
}

#[test]
fn thinning_keeps_every_kth() {
    let target = Normals(vec![1.0]);
    let cfg = SamplerConfig {
        thin: 4,
        ..config(1, 20, 10, 2)
    };
    let draws = run_chain(&target, &cfg, 0).unwrap();
    assert_eq!(draws.iteration, vec![0, 4, 8]);
}

#[test]
fn divergences_are_flagged_at_boundaries() {
    // Large fixed steps against a hard boundary must register divergences.
    let cfg = SamplerConfig {
        warmup: 0,
        init_scale: 0.5,
        ..config(1, 0, 200, 1)
    };
    let shifted = Shifted;
    let draws = run_chain(&shifted, &cfg, 0).unwrap();
    assert!(draws.n_divergent() > 0);
    assert!(draws.draws.iter().all(|d| d[0] + 1.0 > 0.0));
}

/// Gamma(2, 1) shifted so the initial box lies inside the support.
struct Shifted;

impl LogDensity for Shifted {
    fn dim(&self) -> usize {
        1
    }

    fn log_density_and_gradient(&self, x: &[f64], g: &mut [f64]) -> Result<f64> {
        HalfLine.log_density_and_gradient(&[x[0] + 1.0], g)
    }
}

#[test]
fn failed_initialisation_is_reported() {
    struct Nowhere;
    impl LogDensity for Nowhere {
        fn dim(&self) -> usize {
            1
        }
        fn log_density_and_gradient(&self, _x: &[f64], _g: &mut [f64]) -> Result<f64> {
            Err(Error::NonFinite)
        }
    }
    match run_chains(&Nowhere, &config(2, 10, 10, 1)) {
        Err(Error::ChainsFailed { completed, failures }) => {
            assert!(completed.is_empty());
            assert_eq!(failures.len(), 2);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn config_validation() {
    assert!(SamplerConfig { target_accept: 1.0, ..SamplerConfig::default() }.validate().is_err());
    assert!(SamplerConfig { samples: 0, ..SamplerConfig::default() }.validate().is_err());
    assert!(SamplerConfig::default().validate().is_ok());
}

