//! Leapfrog integration and the multinomial no-U-turn transition.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::LogDensity;
use crate::Result;

/// Energy error above which a trajectory is abandoned as divergent.
pub const MAX_ENERGY_ERROR: f64 = 1000.0;

#[derive(Debug, Clone)]
pub struct PhasePoint {
    pub position: Vec<f64>,
    pub momentum: Vec<f64>,
    pub gradient: Vec<f64>,
    pub log_density: f64,
}

impl PhasePoint {
    pub fn new<T: LogDensity + ?Sized>(target: &T, position: Vec<f64>) -> Result<Self> {
        let mut gradient = vec![0.0; position.len()];
        let log_density = target.log_density_and_gradient(&position, &mut gradient)?;
        Ok(Self {
            momentum: vec![0.0; position.len()],
            position,
            gradient,
            log_density,
        })
    }

    pub fn hamiltonian(&self, inv_metric: &[f64]) -> f64 {
        let kinetic: f64 = self
            .momentum
            .iter()
            .zip(inv_metric)
            .map(|(p, m)| p * p * m)
            .sum();
        -self.log_density + 0.5 * kinetic
    }
}

/// One half-kick / drift / half-kick step of size `step_size`. `gradient`
/// must hold the gradient at `position` on entry and holds the gradient at
/// the new position on exit. Returns the new log density.
pub fn leapfrog<T: LogDensity + ?Sized>(
    target: &T,
    position: &mut [f64],
    momentum: &mut [f64],
    gradient: &mut [f64],
    step_size: f64,
    inv_metric: &[f64],
) -> Result<f64> {
    let half = 0.5 * step_size;
    for (p, g) in momentum.iter_mut().zip(gradient.iter()) {
        *p += half * g;
    }
    for ((x, p), m) in position.iter_mut().zip(momentum.iter()).zip(inv_metric) {
        *x += step_size * m * p;
    }
    let lp = target.log_density_and_gradient(position, gradient)?;
    for (p, g) in momentum.iter_mut().zip(gradient.iter()) {
        *p += half * g;
    }
    Ok(lp)
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn no_u_turn(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    let dot = |a: &[f64]| a.iter().zip(rho).map(|(x, y)| x * y).sum::<f64>();
    dot(p_sharp_plus) > 0.0 && dot(p_sharp_minus) > 0.0
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TransitionInfo {
    pub accept_stat: f64,
    pub tree_depth: usize,
    pub n_leapfrog: usize,
    pub divergent: bool,
    pub energy: f64,
}

pub(crate) struct Nuts<'a, T: ?Sized> {
    pub target: &'a T,
    pub inv_metric: Vec<f64>,
    pub step_size: f64,
    pub max_depth: usize,
}

struct Trajectory<'a, T: ?Sized> {
    target: &'a T,
    inv_metric: &'a [f64],
    step: f64,
    h0: f64,
    n_leapfrog: usize,
    sum_metro_prob: f64,
    divergent: bool,
}

impl<T: LogDensity + ?Sized> Trajectory<'_, T> {
    fn sharp(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(self.inv_metric).map(|(a, m)| a * m).collect()
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        &mut self,
        depth: usize,
        z: &mut PhasePoint,
        z_propose: &mut PhasePoint,
        p_sharp_beg: &mut Vec<f64>,
        p_sharp_end: &mut Vec<f64>,
        rho: &mut [f64],
        p_beg: &mut Vec<f64>,
        p_end: &mut Vec<f64>,
        log_sum_weight: &mut f64,
        rng: &mut ChaCha8Rng,
    ) -> bool {
        if depth == 0 {
            self.n_leapfrog += 1;
            let h = match leapfrog(
                self.target,
                &mut z.position,
                &mut z.momentum,
                &mut z.gradient,
                self.step,
                self.inv_metric,
            ) {
                Ok(lp) => {
                    z.log_density = lp;
                    let h = z.hamiltonian(self.inv_metric);
                    if h.is_nan() {
                        f64::INFINITY
                    } else {
                        h
                    }
                }
                Err(_) => f64::INFINITY,
            };
            if !h.is_finite() || h - self.h0 > MAX_ENERGY_ERROR {
                self.divergent = true;
            }
            let w = self.h0 - h;
            *log_sum_weight = log_sum_exp(*log_sum_weight, w);
            self.sum_metro_prob += if w > 0.0 { 1.0 } else { w.exp() };
            z_propose.clone_from(z);
            *p_sharp_beg = self.sharp(&z.momentum);
            p_sharp_end.clone_from(p_sharp_beg);
            for (r, p) in rho.iter_mut().zip(&z.momentum) {
                *r += p;
            }
            p_beg.clone_from(&z.momentum);
            p_end.clone_from(p_beg);
            return !self.divergent;
        }

        let dim = rho.len();
        let mut rho_left = vec![0.0; dim];
        let mut p_left = Vec::new();
        let mut p_sharp_left = Vec::new();
        let mut lsw_left = f64::NEG_INFINITY;
        if !self.build(
            depth - 1,
            z,
            z_propose,
            p_sharp_beg,
            &mut p_sharp_left,
            &mut rho_left,
            p_beg,
            &mut p_left,
            &mut lsw_left,
            rng,
        ) {
            return false;
        }

        let mut z_propose_right = z.clone();
        let mut rho_right = vec![0.0; dim];
        let mut p_right = Vec::new();
        let mut p_sharp_right = Vec::new();
        let mut lsw_right = f64::NEG_INFINITY;
        if !self.build(
            depth - 1,
            z,
            &mut z_propose_right,
            &mut p_sharp_right,
            p_sharp_end,
            &mut rho_right,
            &mut p_right,
            p_end,
            &mut lsw_right,
            rng,
        ) {
            return false;
        }

        let lsw_subtree = log_sum_exp(lsw_left, lsw_right);
        *log_sum_weight = log_sum_exp(*log_sum_weight, lsw_subtree);
        if lsw_right > lsw_subtree || rng.random::<f64>() < (lsw_right - lsw_subtree).exp() {
            *z_propose = z_propose_right;
        }

        let rho_subtree = add(&rho_left, &rho_right);
        for (r, s) in rho.iter_mut().zip(&rho_subtree) {
            *r += s;
        }
        no_u_turn(p_sharp_beg, p_sharp_end, &rho_subtree)
            && no_u_turn(p_sharp_beg, &p_sharp_right, &add(&rho_left, &p_right))
            && no_u_turn(&p_sharp_left, p_sharp_end, &add(&rho_right, &p_left))
    }
}

impl<'a, T: LogDensity + ?Sized> Nuts<'a, T> {
    pub(crate) fn sample_momentum(&self, z: &mut PhasePoint, rng: &mut ChaCha8Rng) {
        for (p, m) in z.momentum.iter_mut().zip(&self.inv_metric) {
            let n: f64 = rng.sample(StandardNormal);
            *p = n / m.sqrt();
        }
    }

    pub(crate) fn transition(&self, start: &PhasePoint, rng: &mut ChaCha8Rng) -> (PhasePoint, TransitionInfo) {
        let mut z0 = start.clone();
        self.sample_momentum(&mut z0, rng);
        let mut traj = Trajectory {
            target: self.target,
            inv_metric: &self.inv_metric,
            step: self.step_size,
            h0: z0.hamiltonian(&self.inv_metric),
            n_leapfrog: 0,
            sum_metro_prob: 0.0,
            divergent: false,
        };
        let dim = z0.position.len();
        let p_sharp0 = traj.sharp(&z0.momentum);

        let mut z_fwd = z0.clone();
        let mut z_bwd = z0.clone();
        let mut z_sample = z0.clone();
        let mut z_propose = z0.clone();

        let mut p_fwd_fwd = z0.momentum.clone();
        let mut p_sharp_fwd_fwd = p_sharp0.clone();
        let mut p_fwd_bwd = z0.momentum.clone();
        let mut p_sharp_fwd_bwd = p_sharp0.clone();
        let mut p_bwd_fwd = z0.momentum.clone();
        let mut p_sharp_bwd_fwd = p_sharp0.clone();
        let mut p_bwd_bwd = z0.momentum.clone();
        let mut p_sharp_bwd_bwd = p_sharp0;

        let mut rho = z0.momentum.clone();
        let mut log_sum_weight = 0.0;
        let mut depth = 0;

        while depth < self.max_depth {
            let mut rho_fwd = vec![0.0; dim];
            let mut rho_bwd = vec![0.0; dim];
            let mut lsw_subtree = f64::NEG_INFINITY;
            let valid = if rng.random::<f64>() > 0.5 {
                rho_bwd.clone_from(&rho);
                p_bwd_fwd.clone_from(&p_fwd_bwd);
                p_sharp_bwd_fwd.clone_from(&p_sharp_fwd_bwd);
                traj.step = self.step_size;
                traj.build(
                    depth,
                    &mut z_fwd,
                    &mut z_propose,
                    &mut p_sharp_fwd_bwd,
                    &mut p_sharp_fwd_fwd,
                    &mut rho_fwd,
                    &mut p_fwd_bwd,
                    &mut p_fwd_fwd,
                    &mut lsw_subtree,
                    rng,
                )
            } else {
                rho_fwd.clone_from(&rho);
                p_fwd_bwd.clone_from(&p_bwd_fwd);
                p_sharp_fwd_bwd.clone_from(&p_sharp_bwd_fwd);
                traj.step = -self.step_size;
                traj.build(
                    depth,
                    &mut z_bwd,
                    &mut z_propose,
                    &mut p_sharp_bwd_fwd,
                    &mut p_sharp_bwd_bwd,
                    &mut rho_bwd,
                    &mut p_bwd_fwd,
                    &mut p_bwd_bwd,
                    &mut lsw_subtree,
                    rng,
                )
            };
            if !valid {
                break;
            }
            depth += 1;
            if lsw_subtree > log_sum_weight || rng.random::<f64>() < (lsw_subtree - log_sum_weight).exp() {
                z_sample.clone_from(&z_propose);
            }
            log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);

            rho = add(&rho_bwd, &rho_fwd);
            let persist = no_u_turn(&p_sharp_bwd_bwd, &p_sharp_fwd_fwd, &rho)
                && no_u_turn(&p_sharp_bwd_bwd, &p_sharp_fwd_bwd, &add(&rho_bwd, &p_fwd_bwd))
                && no_u_turn(&p_sharp_bwd_fwd, &p_sharp_fwd_fwd, &add(&rho_fwd, &p_bwd_fwd));
            if !persist {
                break;
            }
        }

        let info = TransitionInfo {
            accept_stat: if traj.n_leapfrog > 0 {
                traj.sum_metro_prob / traj.n_leapfrog as f64
            } else {
                0.0
            },
            tree_depth: depth,
            n_leapfrog: traj.n_leapfrog,
            divergent: traj.divergent,
            energy: z_sample.hamiltonian(&self.inv_metric),
        };
        (z_sample, info)
    }

    /// Doubling/halving search for a step size whose one-step acceptance
    /// brackets 0.8.
    pub(crate) fn init_step_size(&mut self, z: &PhasePoint, rng: &mut ChaCha8Rng) -> Result<()> {
        let threshold = 0.8f64.ln();
        let mut direction = 0.0;
        loop {
            let mut trial = z.clone();
            self.sample_momentum(&mut trial, rng);
            let h0 = trial.hamiltonian(&self.inv_metric);
            let h = match leapfrog(
                self.target,
                &mut trial.position,
                &mut trial.momentum,
                &mut trial.gradient,
                self.step_size,
                &self.inv_metric,
            ) {
                Ok(lp) => {
                    trial.log_density = lp;
                    let h = trial.hamiltonian(&self.inv_metric);
                    if h.is_nan() {
                        f64::INFINITY
                    } else {
                        h
                    }
                }
                Err(_) => f64::INFINITY,
            };
            let delta = h0 - h;
            if direction == 0.0 {
                direction = if delta > threshold { 1.0 } else { -1.0 };
            }
            if (direction > 0.0 && !(delta > threshold)) || (direction < 0.0 && !(delta < threshold)) {
                return Ok(());
            }
            self.step_size = if direction > 0.0 {
                2.0 * self.step_size
            } else {
                0.5 * self.step_size
            };
            if self.step_size > 1e7 || self.step_size == 0.0 {
                return Err(crate::Error::Sampler(format!(
                    "step size search diverged (step size {})",
                    self.step_size
                )));
            }
        }
    }
}
