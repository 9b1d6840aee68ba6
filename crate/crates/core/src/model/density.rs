use nalgebra::DMatrix;
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use super::{
    kernel_matrix, CovariateSet, Dims, Hyperparameters, Kernel, LatentState, Layout, MeanEffect,
    ObservationSet, Tau0Form, Variant,
};
use crate::sampler::LogDensity;
use crate::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn ln_normal(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * LN_2PI - sd.ln() - 0.5 * z * z
}

/// Sufficient statistics of one observed cell.
#[derive(Debug, Clone, Copy)]
struct CellStat {
    chemical: usize,
    dose: usize,
    n: f64,
    mean: f64,
    /// Within-cell sum of squared deviations from `mean`.
    ssw: f64,
}

/// Per-gene partial results, reduced in gene order so the total does not
/// depend on how genes were scheduled.
#[derive(Debug, Clone)]
struct GeneTerms {
    ll: f64,
    mu: Vec<f64>,
    raw: Vec<f64>,
    log_scale: Vec<f64>,
    eta: Vec<f64>,
    noise_level: f64,
    noise_slope: f64,
    u: Vec<f64>,
    lam: Vec<f64>,
    g_lam: Vec<f64>,
}

impl GeneTerms {
    fn new(dims: &Dims) -> Self {
        let kd = dims.k * dims.d;
        Self {
            ll: 0.0,
            mu: vec![0.0; dims.d],
            raw: vec![0.0; kd],
            log_scale: vec![0.0; dims.k],
            eta: vec![0.0; dims.n * dims.k],
            noise_level: 0.0,
            noise_slope: 0.0,
            u: vec![0.0; kd],
            lam: vec![0.0; kd],
            g_lam: vec![0.0; kd],
        }
    }
}

/// The joint log density of the model over observed cells, evaluated on the
/// unconstrained parameter vector described by [`Layout`].
#[derive(Debug, Clone)]
pub struct DartModel {
    variant: Variant,
    layout: Layout,
    hyper: Hyperparameters,
    kernel: Kernel,
    coords: Vec<f64>,
    dose_center: f64,
    genes: Vec<Vec<CellStat>>,
    data: ObservationSet,
    w: Option<DMatrix<f64>>,
    z: Option<DMatrix<f64>>,
    parallel: bool,
}

impl DartModel {
    pub fn new(
        variant: Variant,
        data: &ObservationSet,
        covariates: &CovariateSet,
        hyper: &Hyperparameters,
    ) -> Result<Self> {
        hyper.validate()?;
        covariates.check(data.n_chemicals(), data.n_genes())?;
        let (w, z) = match variant {
            Variant::Dart => (covariates.w.clone(), covariates.z.clone()),
            Variant::DartNc => (None, None),
        };
        let dims = Dims {
            n: data.n_chemicals(),
            m: data.n_genes(),
            d: data.n_doses(),
            k: hyper.k,
            p: w.as_ref().map_or(0, |w| w.ncols()),
            q: z.as_ref().map_or(0, |z| z.ncols()),
        };
        let kernel = kernel_matrix(data.grid(), hyper.length_scale, hyper.jitter)?;
        let mut genes = vec![Vec::new(); dims.m];
        for (&(i, j, d), ys) in data.cells() {
            let n = ys.len() as f64;
            let mean = ys.iter().sum::<f64>() / n;
            let ssw = ys.iter().map(|y| (y - mean) * (y - mean)).sum();
            genes[j].push(CellStat {
                chemical: i,
                dose: d,
                n,
                mean,
                ssw,
            });
        }
        Ok(Self {
            variant,
            layout: Layout::new(dims, variant),
            hyper: hyper.clone(),
            kernel,
            coords: data.grid().coords().to_vec(),
            dose_center: data.dose_center(),
            genes,
            data: data.clone(),
            w,
            z,
            parallel: false,
        })
    }

    /// Evaluate the likelihood across genes on the rayon pool. The result is
    /// bit-identical to the serial path.
    pub fn with_parallel_genes(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn dims(&self) -> Dims {
        self.layout.dims
    }

    pub fn hyper(&self) -> &Hyperparameters {
        &self.hyper
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn data(&self) -> &ObservationSet {
        &self.data
    }

    pub fn dose_center(&self) -> f64 {
        self.dose_center
    }

    pub fn mean_effect(&self, state: &LatentState) -> MeanEffect {
        super::mean_effect_with_kernel(state, &self.kernel)
    }

    fn check_state(&self, state: &LatentState) -> Result<Vec<f64>> {
        if state.dims != self.layout.dims || state.variant != self.variant {
            return Err(Error::Dimension(format!(
                "state {:?} ({}) does not match model {:?} ({})",
                state.dims, state.variant, self.layout.dims, self.variant
            )));
        }
        state.to_unconstrained()
    }

    /// Gaussian log-likelihood of every observed replicate.
    pub fn log_likelihood(&self, state: &LatentState) -> Result<f64> {
        let x = self.check_state(state)?;
        Ok(self.likelihood(&x, None))
    }

    /// Log prior density of the unconstrained coordinates, including the
    /// Jacobians of the log transforms and the covariate submodel for `W`.
    pub fn log_prior(&self, state: &LatentState) -> Result<f64> {
        let x = self.check_state(state)?;
        Ok(self.prior(&x, None))
    }

    /// Log posterior (up to the evidence) and its gradient with respect to
    /// the unconstrained coordinates.
    pub fn log_posterior_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        if x.len() != self.layout.len || grad.len() != self.layout.len {
            return Err(Error::Dimension(format!(
                "expected {} coordinates, got {} (gradient buffer {})",
                self.layout.len,
                x.len(),
                grad.len()
            )));
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        let ll = self.likelihood(x, Some(grad));
        let lp = self.prior(x, Some(grad));
        let value = ll + lp;
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(value)
    }

    pub fn log_posterior(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.layout.len {
            return Err(Error::Dimension(format!(
                "expected {} coordinates, got {}",
                self.layout.len,
                x.len()
            )));
        }
        let value = self.likelihood(x, None) + self.prior(x, None);
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::NonFinite)
        }
    }

    /// Noise variance of gene `j` at dose index `d` under `state`.
    pub fn noise_variance(&self, state: &LatentState, j: usize, d: usize) -> f64 {
        super::noise_variance(
            state.alpha_d,
            state.beta_d,
            state.gamma_gene[j],
            self.coords[d],
            self.dose_center,
        )
    }

    /// Log density of each observed replicate, in cell order then replicate
    /// order.
    pub fn pointwise_log_likelihood(&self, state: &LatentState) -> Vec<f64> {
        let s = self.mean_effect(state);
        let mut out = Vec::with_capacity(self.data.n_observations());
        for (&(i, j, d), ys) in self.data.cells() {
            let sd = self.noise_variance(state, j, d).sqrt();
            let mean = s.get(i, j, d);
            out.extend(ys.iter().map(|&y| ln_normal(y, mean, sd)));
        }
        out
    }

    fn log_column_scales(&self, x: &[f64]) -> Vec<f64> {
        let mut acc = 0.0;
        x[self.layout.log_delta..self.layout.log_delta + self.layout.dims.k]
            .iter()
            .map(|u| {
                acc -= u;
                acc
            })
            .collect()
    }

    fn gene_pass(&self, j: usize, x: &[f64], log_gamma: &[f64], with_grad: bool, out: &mut GeneTerms) {
        let l = &self.layout;
        let Dims { k, d, .. } = l.dims;
        let log_tau0 = x[l.log_tau0];
        for kk in 0..k {
            let log_phi = if l.has_local_scales() { x[l.log_phi + j * k + kk] } else { 0.0 };
            let scale = (0.5 * (log_tau0 + log_gamma[kk] + log_phi)).exp();
            let raw_start = l.lambda_raw + (j * k + kk) * d;
            let (u, lam) = (&mut out.u[kk * d..(kk + 1) * d], &mut out.lam[kk * d..(kk + 1) * d]);
            self.kernel.apply_chol(&x[raw_start..raw_start + d], u);
            for (lv, uv) in lam.iter_mut().zip(u.iter()) {
                *lv = scale * uv;
            }
        }
        out.ll = 0.0;
        if with_grad {
            out.mu.iter_mut().for_each(|v| *v = 0.0);
            out.eta.iter_mut().for_each(|v| *v = 0.0);
            out.g_lam.iter_mut().for_each(|v| *v = 0.0);
            out.noise_level = 0.0;
            out.noise_slope = 0.0;
        }
        let alpha = x[l.alpha_d];
        let slope = x[l.beta_d];
        let gamma_j = x[l.gamma_gene + j];
        let mu = &x[l.mu + j * d..l.mu + (j + 1) * d];
        for cell in &self.genes[j] {
            let (i, dd) = (cell.chemical, cell.dose);
            let eta = &x[l.eta + i * k..l.eta + (i + 1) * k];
            let mut s = mu[dd];
            for kk in 0..k {
                s += out.lam[kk * d + dd] * eta[kk];
            }
            let centred = self.coords[dd] - self.dose_center;
            let log_var = alpha + gamma_j + slope * centred;
            let inv_var = (-log_var).exp();
            let resid = cell.mean - s;
            let rss = cell.ssw + cell.n * resid * resid;
            out.ll += -0.5 * cell.n * (LN_2PI + log_var) - 0.5 * rss * inv_var;
            if with_grad {
                let g = cell.n * resid * inv_var;
                let h = -0.5 * cell.n + 0.5 * rss * inv_var;
                out.mu[dd] += g;
                for kk in 0..k {
                    out.g_lam[kk * d + dd] += g * eta[kk];
                    out.eta[i * k + kk] += g * out.lam[kk * d + dd];
                }
                out.noise_level += h;
                out.noise_slope += h * centred;
            }
        }
        if with_grad {
            for kk in 0..k {
                let span = kk * d..(kk + 1) * d;
                let g_lam = &out.g_lam[span.clone()];
                out.log_scale[kk] = g_lam.iter().zip(&out.lam[span.clone()]).map(|(a, b)| a * b).sum();
                let log_phi = if l.has_local_scales() { x[l.log_phi + j * k + kk] } else { 0.0 };
                let scale = (0.5 * (log_tau0 + log_gamma[kk] + log_phi)).exp();
                self.kernel.apply_chol_transpose(g_lam, &mut out.raw[span.clone()]);
                for v in &mut out.raw[span] {
                    *v *= scale;
                }
            }
        }
    }

    fn likelihood(&self, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let l = self.layout;
        let Dims { m, k, d, .. } = l.dims;
        let log_gamma = self.log_column_scales(x);
        let with_grad = grad.is_some();
        let mut ll = 0.0;
        let mut d_log_gamma = vec![0.0; k];
        let mut grad = grad;
        let mut reduce = |j: usize, t: &GeneTerms, grad: &mut Option<&mut [f64]>| {
            ll += t.ll;
            let Some(g) = grad.as_deref_mut() else { return };
            for dd in 0..d {
                g[l.mu + j * d + dd] += t.mu[dd];
            }
            let raw_start = l.lambda_raw + j * k * d;
            for (gv, tv) in g[raw_start..raw_start + k * d].iter_mut().zip(&t.raw) {
                *gv += tv;
            }
            for kk in 0..k {
                let half = 0.5 * t.log_scale[kk];
                g[l.log_tau0] += half;
                d_log_gamma[kk] += half;
                if l.has_local_scales() {
                    g[l.log_phi + j * k + kk] += half;
                }
            }
            for (gv, tv) in g[l.eta..l.eta + t.eta.len()].iter_mut().zip(&t.eta) {
                *gv += tv;
            }
            g[l.alpha_d] += t.noise_level;
            g[l.gamma_gene + j] += t.noise_level;
            g[l.beta_d] += t.noise_slope;
        };
        if self.parallel {
            let terms: Vec<GeneTerms> = (0..m)
                .into_par_iter()
                .map(|j| {
                    let mut t = GeneTerms::new(&l.dims);
                    self.gene_pass(j, x, &log_gamma, with_grad, &mut t);
                    t
                })
                .collect();
            for (j, t) in terms.iter().enumerate() {
                reduce(j, t, &mut grad);
            }
        } else {
            let mut t = GeneTerms::new(&l.dims);
            for j in 0..m {
                self.gene_pass(j, x, &log_gamma, with_grad, &mut t);
                reduce(j, &t, &mut grad);
            }
        }
        if let Some(g) = grad {
            // log gamma_k = -sum_{s<=k} log delta_s
            let mut tail = 0.0;
            for s in (0..k).rev() {
                tail += d_log_gamma[s];
                g[l.log_delta + s] -= tail;
            }
        }
        ll
    }

    fn prior(&self, x: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let l = self.layout;
        let h = &self.hyper;
        let Dims { n, m, d, k, p, q } = l.dims;
        let mut lp = 0.0;

        let mut normal_block = |start: usize, len: usize, sd: f64, grad: &mut Option<&mut [f64]>| {
            let inv_var = 1.0 / (sd * sd);
            for idx in start..start + len {
                lp += ln_normal(x[idx], 0.0, sd);
                if let Some(g) = grad.as_deref_mut() {
                    g[idx] -= x[idx] * inv_var;
                }
            }
        };
        normal_block(l.mu, m * d, h.sigma_mu, &mut grad);
        normal_block(l.lambda_raw, m * k * d, 1.0, &mut grad);
        let eta_sd = match self.variant {
            Variant::Dart => 1.0,
            Variant::DartNc => h.sigma_eta,
        };
        normal_block(l.eta, n * k, eta_sd, &mut grad);
        if self.variant == Variant::Dart {
            normal_block(l.beta, k * q, h.sigma_beta, &mut grad);
            normal_block(l.theta, p * k, h.sigma_theta, &mut grad);
            normal_block(l.mu_c, p, h.sigma_w, &mut grad);
        }

        // Gamma priors on log scale, Jacobian included: a*u - b*e^u + const.
        let mut log_gamma_term = |idx: usize, shape: f64, rate: f64, sign: f64, grad: &mut Option<&mut [f64]>| {
            let u = sign * x[idx];
            lp += shape * rate.ln() - ln_gamma(shape) + shape * u - rate * u.exp();
            if let Some(g) = grad.as_deref_mut() {
                g[idx] += sign * (shape - rate * u.exp());
            }
        };
        for kk in 0..k {
            let prior = h.delta_prior(kk);
            log_gamma_term(l.log_delta + kk, prior.shape, prior.rate, 1.0, &mut grad);
        }
        let tau_sign = match h.tau0_form {
            Tau0Form::Gamma => 1.0,
            Tau0Form::InverseGamma => -1.0,
        };
        log_gamma_term(l.log_tau0, h.tau0.shape, h.tau0.rate, tau_sign, &mut grad);

        if self.variant == Variant::Dart {
            // log phi_jk ~ N(z_j' beta_k - sigma_phi^2 / 2, sigma_phi^2)
            let sd = h.sigma_phi;
            let inv_var = 1.0 / (sd * sd);
            for j in 0..m {
                for kk in 0..k {
                    let mut loc = -0.5 * sd * sd;
                    if let Some(z) = &self.z {
                        for qq in 0..q {
                            loc += z[(j, qq)] * x[l.beta + kk * q + qq];
                        }
                    }
                    let idx = l.log_phi + j * k + kk;
                    lp += ln_normal(x[idx], loc, sd);
                    if let Some(g) = grad.as_deref_mut() {
                        let r = (x[idx] - loc) * inv_var;
                        g[idx] -= r;
                        if let Some(z) = &self.z {
                            for qq in 0..q {
                                g[l.beta + kk * q + qq] += r * z[(j, qq)];
                            }
                        }
                    }
                }
            }
            // w_il = mu^c_l + theta_l' eta_i + e_il, e_il ~ N(0, 1)
            if let Some(w) = &self.w {
                for i in 0..n {
                    for ll in 0..p {
                        let mut fit = x[l.mu_c + ll];
                        for kk in 0..k {
                            fit += x[l.theta + ll * k + kk] * x[l.eta + i * k + kk];
                        }
                        let r = w[(i, ll)] - fit;
                        lp += ln_normal(r, 0.0, 1.0);
                        if let Some(g) = grad.as_deref_mut() {
                            g[l.mu_c + ll] += r;
                            for kk in 0..k {
                                g[l.theta + ll * k + kk] += r * x[l.eta + i * k + kk];
                                g[l.eta + i * k + kk] += r * x[l.theta + ll * k + kk];
                            }
                        }
                    }
                }
            }
        }

        let a = x[l.alpha_d];
        lp += ln_normal(a, h.alpha_d.mean, h.alpha_d.sd);
        let b = x[l.beta_d];
        lp += ln_normal(b, h.beta_d.mean, h.beta_d.sd);

        // gamma_j ~ N(0, tau_gamma^2), tau_gamma ~ N+(0, s), t = log tau_gamma
        let t = x[l.log_tau_gamma];
        let tau = t.exp();
        let s = h.tau_gamma_scale;
        lp += std::f64::consts::LN_2 + ln_normal(tau, 0.0, s) + t;
        let mut d_t = 1.0 - tau * tau / (s * s);
        for j in 0..m {
            let gj = x[l.gamma_gene + j];
            lp += ln_normal(gj, 0.0, tau);
            d_t += -1.0 + gj * gj / (tau * tau);
            if let Some(g) = grad.as_deref_mut() {
                g[l.gamma_gene + j] -= gj / (tau * tau);
            }
        }
        if let Some(g) = grad.as_deref_mut() {
            g[l.alpha_d] -= (a - h.alpha_d.mean) / (h.alpha_d.sd * h.alpha_d.sd);
            g[l.beta_d] -= (b - h.beta_d.mean) / (h.beta_d.sd * h.beta_d.sd);
            g[l.log_tau_gamma] += d_t;
        }
        lp
    }
}

impl LogDensity for DartModel {
    fn dim(&self) -> usize {
        self.layout.len
    }

    fn log_density_and_gradient(&self, position: &[f64], gradient: &mut [f64]) -> Result<f64> {
        self.log_posterior_and_gradient(position, gradient)
    }
}

/// Log-likelihood of `state` given `data`.
pub fn log_likelihood(state: &LatentState, data: &ObservationSet, hyper: &Hyperparameters) -> Result<f64> {
    let hyper = Hyperparameters { k: state.dims.k, ..hyper.clone() };
    let covariates = placeholder_covariates(state, data)?;
    DartModel::new(state.variant, data, &covariates, &hyper)?.log_likelihood(state)
}

/// Log prior of `state` on the unconstrained scale.
pub fn log_prior(
    state: &LatentState,
    data: &ObservationSet,
    covariates: &CovariateSet,
    hyper: &Hyperparameters,
) -> Result<f64> {
    let hyper = Hyperparameters { k: state.dims.k, ..hyper.clone() };
    DartModel::new(state.variant, data, covariates, &hyper)?.log_prior(state)
}

/// Log posterior and gradient at `state`, returned alongside the
/// unconstrained coordinates the gradient refers to.
pub fn log_posterior_and_gradient(
    state: &LatentState,
    data: &ObservationSet,
    covariates: &CovariateSet,
    hyper: &Hyperparameters,
) -> Result<(f64, Vec<f64>)> {
    let hyper = Hyperparameters { k: state.dims.k, ..hyper.clone() };
    let model = DartModel::new(state.variant, data, covariates, &hyper)?;
    let x = model.check_state(state)?;
    let mut grad = vec![0.0; x.len()];
    let value = model.log_posterior_and_gradient(&x, &mut grad)?;
    Ok((value, grad))
}

// The likelihood does not read covariates, but the model dimensions must
// agree with the state's P and Q.
fn placeholder_covariates(state: &LatentState, data: &ObservationSet) -> Result<CovariateSet> {
    let Dims { p, q, .. } = state.dims;
    if state.variant == Variant::DartNc {
        return Ok(CovariateSet::none());
    }
    CovariateSet::new(
        (p > 0).then(|| DMatrix::zeros(data.n_chemicals(), p)),
        (q > 0).then(|| DMatrix::zeros(data.n_genes(), q)),
    )
}
