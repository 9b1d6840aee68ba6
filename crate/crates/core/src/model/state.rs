use serde::{Deserialize, Serialize};

use super::{kernel_matrix, DoseGrid, Hyperparameters, Kernel};
use crate::{Error, Result};

/// Model variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Covariate-informed model: chemical factor regression on `W` and
    /// ontology-informed local shrinkage from `Z`.
    #[default]
    Dart,
    /// Covariate-free baseline: no local scales, no covariate submodels.
    DartNc,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Variant::Dart => f.write_str("dart"),
            Variant::DartNc => f.write_str("dart-nc"),
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dart" => Ok(Variant::Dart),
            "dart-nc" | "dart_nc" | "nc" => Ok(Variant::DartNc),
            other => Err(Error::Config(format!("unknown model variant {other:?}"))),
        }
    }
}

/// Problem dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub k: usize,
    pub p: usize,
    pub q: usize,
}

/// One point in parameter space, on the natural (constrained) scale.
///
/// Flat storage conventions:
/// `mu[j*D + d]`, `lambda_raw[(j*K + k)*D + d]`, `eta[i*K + k]`,
/// `phi[j*K + k]`, `beta[k*Q + q]`, `theta[l*K + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub dims: Dims,
    pub variant: Variant,
    pub mu: Vec<f64>,
    pub lambda_raw: Vec<f64>,
    pub eta: Vec<f64>,
    pub delta: Vec<f64>,
    pub tau0: f64,
    pub phi: Vec<f64>,
    pub beta: Vec<f64>,
    pub theta: Vec<f64>,
    pub mu_c: Vec<f64>,
    pub alpha_d: f64,
    pub beta_d: f64,
    pub gamma_gene: Vec<f64>,
    pub tau_gamma: f64,
}

/// Offsets of each parameter block within the unconstrained vector.
///
/// Order: `mu`, `lambda_raw`, `eta`, `log delta`, `log tau0`, then for the
/// covariate model `log phi`, `beta`, `theta`, `mu_c`, and finally
/// `alpha_d`, `beta_d`, `gamma_gene`, `log tau_gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub dims: Dims,
    pub variant: Variant,
    pub mu: usize,
    pub lambda_raw: usize,
    pub eta: usize,
    pub log_delta: usize,
    pub log_tau0: usize,
    pub log_phi: usize,
    pub beta: usize,
    pub theta: usize,
    pub mu_c: usize,
    pub alpha_d: usize,
    pub beta_d: usize,
    pub gamma_gene: usize,
    pub log_tau_gamma: usize,
    pub len: usize,
}

impl Layout {
    pub fn new(dims: Dims, variant: Variant) -> Self {
        let Dims { n, m, d, k, p, q } = dims;
        let mut at = 0;
        let mut take = |len: usize| {
            let start = at;
            at += len;
            start
        };
        let mu = take(m * d);
        let lambda_raw = take(m * k * d);
        let eta = take(n * k);
        let log_delta = take(k);
        let log_tau0 = take(1);
        let (log_phi, beta, theta, mu_c) = match variant {
            Variant::Dart => (take(m * k), take(k * q), take(p * k), take(p)),
            Variant::DartNc => {
                let here = take(0);
                (here, here, here, here)
            }
        };
        let alpha_d = take(1);
        let beta_d = take(1);
        let gamma_gene = take(m);
        let log_tau_gamma = take(1);
        Self {
            dims,
            variant,
            mu,
            lambda_raw,
            eta,
            log_delta,
            log_tau0,
            log_phi,
            beta,
            theta,
            mu_c,
            alpha_d,
            beta_d,
            gamma_gene,
            log_tau_gamma,
            len: at,
        }
    }

    pub fn has_local_scales(&self) -> bool {
        self.variant == Variant::Dart
    }

    /// Human-readable name of coordinate `idx`, e.g. `eta[3,1]`.
    pub fn coordinate_name(&self, idx: usize) -> String {
        let Dims { d, k, q, .. } = self.dims;
        let blocks: [(&str, usize, usize); 13] = [
            ("mu", self.mu, self.lambda_raw),
            ("lambda_raw", self.lambda_raw, self.eta),
            ("eta", self.eta, self.log_delta),
            ("log_delta", self.log_delta, self.log_tau0),
            ("log_tau0", self.log_tau0, self.log_tau0 + 1),
            ("log_phi", self.log_phi, self.beta),
            ("beta", self.beta, self.theta),
            ("theta", self.theta, self.mu_c),
            ("mu_c", self.mu_c, self.alpha_d),
            ("alpha_d", self.alpha_d, self.beta_d),
            ("beta_d", self.beta_d, self.gamma_gene),
            ("gamma_gene", self.gamma_gene, self.log_tau_gamma),
            ("log_tau_gamma", self.log_tau_gamma, self.len),
        ];
        for (name, start, end) in blocks {
            if idx >= start && idx < end {
                let r = idx - start;
                return match name {
                    "mu" => format!("mu[{},{}]", r / d, r % d),
                    "lambda_raw" => format!("lambda_raw[{},{},{}]", r / (k * d), (r / d) % k, r % d),
                    "eta" | "log_phi" | "theta" => format!("{name}[{},{}]", r / k, r % k),
                    "beta" => format!("beta[{},{}]", r / q.max(1), r % q.max(1)),
                    "log_delta" | "mu_c" | "gamma_gene" => format!("{name}[{r}]"),
                    _ => name.to_string(),
                };
            }
        }
        format!("out_of_range[{idx}]")
    }
}

impl LatentState {
    /// The all-zero point of the unconstrained space.
    pub fn zeros(dims: Dims, variant: Variant) -> Self {
        let layout = Layout::new(dims, variant);
        Self::from_unconstrained(&layout, &vec![0.0; layout.len]).expect("length matches layout")
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self.dims, self.variant)
    }

    pub fn from_unconstrained(layout: &Layout, x: &[f64]) -> Result<Self> {
        if x.len() != layout.len {
            return Err(Error::Dimension(format!(
                "unconstrained vector has length {} but the layout needs {}",
                x.len(),
                layout.len
            )));
        }
        let Dims { n, m, d, k, p, q } = layout.dims;
        let slice = |start: usize, len: usize| x[start..start + len].to_vec();
        let exp_slice = |start: usize, len: usize| x[start..start + len].iter().map(|v| v.exp()).collect();
        let (phi, beta, theta, mu_c) = match layout.variant {
            Variant::Dart => (
                exp_slice(layout.log_phi, m * k),
                slice(layout.beta, k * q),
                slice(layout.theta, p * k),
                slice(layout.mu_c, p),
            ),
            Variant::DartNc => (vec![1.0; m * k], Vec::new(), Vec::new(), Vec::new()),
        };
        Ok(Self {
            dims: layout.dims,
            variant: layout.variant,
            mu: slice(layout.mu, m * d),
            lambda_raw: slice(layout.lambda_raw, m * k * d),
            eta: slice(layout.eta, n * k),
            delta: exp_slice(layout.log_delta, k),
            tau0: x[layout.log_tau0].exp(),
            phi,
            beta,
            theta,
            mu_c,
            alpha_d: x[layout.alpha_d],
            beta_d: x[layout.beta_d],
            gamma_gene: slice(layout.gamma_gene, m),
            tau_gamma: x[layout.log_tau_gamma].exp(),
        })
    }

    pub fn to_unconstrained(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let layout = self.layout();
        let mut x = vec![0.0; layout.len];
        let mut put = |start: usize, vals: &[f64]| x[start..start + vals.len()].copy_from_slice(vals);
        put(layout.mu, &self.mu);
        put(layout.lambda_raw, &self.lambda_raw);
        put(layout.eta, &self.eta);
        put(layout.log_delta, &self.delta.iter().map(|v| v.ln()).collect::<Vec<_>>());
        put(layout.log_tau0, &[self.tau0.ln()]);
        if layout.has_local_scales() {
            put(layout.log_phi, &self.phi.iter().map(|v| v.ln()).collect::<Vec<_>>());
            put(layout.beta, &self.beta);
            put(layout.theta, &self.theta);
            put(layout.mu_c, &self.mu_c);
        }
        put(layout.alpha_d, &[self.alpha_d]);
        put(layout.beta_d, &[self.beta_d]);
        put(layout.gamma_gene, &self.gamma_gene);
        put(layout.log_tau_gamma, &[self.tau_gamma.ln()]);
        Ok(x)
    }

    /// Block sizes and positivity constraints.
    pub fn validate(&self) -> Result<()> {
        let Dims { n, m, d, k, p, q } = self.dims;
        let nc = self.variant == Variant::DartNc;
        let expect = [
            ("mu", self.mu.len(), m * d),
            ("lambda_raw", self.lambda_raw.len(), m * k * d),
            ("eta", self.eta.len(), n * k),
            ("delta", self.delta.len(), k),
            ("phi", self.phi.len(), m * k),
            ("beta", self.beta.len(), if nc { 0 } else { k * q }),
            ("theta", self.theta.len(), if nc { 0 } else { p * k }),
            ("mu_c", self.mu_c.len(), if nc { 0 } else { p }),
            ("gamma_gene", self.gamma_gene.len(), m),
        ];
        for (name, got, want) in expect {
            if got != want {
                return Err(Error::Dimension(format!("{name} has length {got}, expected {want}")));
            }
        }
        let positive = self.delta.iter().chain(&self.phi).chain([&self.tau0, &self.tau_gamma]);
        if positive.into_iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Domain("delta, tau0, phi and tau_gamma must be positive".into()));
        }
        Ok(())
    }

    /// Column scales `gamma_k` of the multiplicative gamma process.
    pub fn column_scales(&self) -> Vec<f64> {
        mgp_column_scales(&self.delta).expect("state deltas validated positive")
    }

    /// Loading curves `lambda_jk` (D values each), laid out like `lambda_raw`.
    pub fn loadings(&self, kernel: &Kernel) -> Vec<f64> {
        let Dims { m, k, d, .. } = self.dims;
        let gamma = self.column_scales();
        let mut out = vec![0.0; m * k * d];
        for j in 0..m {
            for kk in 0..k {
                let scale = (self.tau0 * gamma[kk] * self.phi[j * k + kk]).sqrt();
                let base = (j * k + kk) * d;
                kernel.apply_chol(&self.lambda_raw[base..base + d], &mut out[base..base + d]);
                for v in &mut out[base..base + d] {
                    *v *= scale;
                }
            }
        }
        out
    }
}

/// `gamma_k = prod_{s<=k} 1/delta_s`.
pub fn mgp_column_scales(delta: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = delta.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::Domain(format!("MGP increments must be positive, got {bad}")));
    }
    let mut acc = 0.0;
    Ok(delta
        .iter()
        .map(|v| {
            acc -= v.ln();
            acc.exp()
        })
        .collect())
}

/// Noise variance `exp(alpha_d + gamma_j + beta_d * (x_d - x_bar))`.
pub fn noise_variance(alpha_d: f64, beta_d: f64, gamma_gene: f64, dose: f64, dose_center: f64) -> f64 {
    (alpha_d + gamma_gene + beta_d * (dose - dose_center)).exp()
}

/// De-noised responses `S_ijd = mu_jd + (Lambda_j eta_i)_d`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanEffect {
    n: usize,
    m: usize,
    d: usize,
    values: Vec<f64>,
}

impl MeanEffect {
    pub fn zeros(n: usize, m: usize, d: usize) -> Self {
        Self {
            n,
            m,
            d,
            values: vec![0.0; n * m * d],
        }
    }

    /// Build from baselines, loadings (layout of `lambda_raw`) and factors.
    pub fn from_parts(dims: Dims, mu: &[f64], loadings: &[f64], eta: &[f64]) -> Self {
        let Dims { n, m, d, k, .. } = dims;
        let mut out = Self::zeros(n, m, d);
        for i in 0..n {
            for j in 0..m {
                for dd in 0..d {
                    let mut s = mu[j * d + dd];
                    for kk in 0..k {
                        s += loadings[(j * k + kk) * d + dd] * eta[i * k + kk];
                    }
                    out.values[(i * m + j) * d + dd] = s;
                }
            }
        }
        out
    }

    pub fn get(&self, i: usize, j: usize, d: usize) -> f64 {
        self.values[(i * self.m + j) * self.d + d]
    }

    pub fn set(&mut self, i: usize, j: usize, d: usize, v: f64) {
        self.values[(i * self.m + j) * self.d + d] = v;
    }

    /// Dose curve of one pair.
    pub fn curve(&self, i: usize, j: usize) -> &[f64] {
        let start = (i * self.m + j) * self.d;
        &self.values[start..start + self.d]
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.d, self.n, self.m)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub fn mean_effect(state: &LatentState, hyper: &Hyperparameters, grid: &DoseGrid) -> Result<MeanEffect> {
    state.validate()?;
    if grid.len() != state.dims.d {
        return Err(Error::Dimension(format!(
            "grid has {} doses but the state has {}",
            grid.len(),
            state.dims.d
        )));
    }
    let kernel = kernel_matrix(grid, hyper.length_scale, hyper.jitter)?;
    Ok(mean_effect_with_kernel(state, &kernel))
}

pub fn mean_effect_with_kernel(state: &LatentState, kernel: &Kernel) -> MeanEffect {
    let loadings = state.loadings(kernel);
    MeanEffect::from_parts(state.dims, &state.mu, &loadings, &state.eta)
}
