use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Gamma prior in shape/rate form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

/// Normal prior in mean/standard-deviation form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalPrior {
    pub mean: f64,
    pub sd: f64,
}

/// How the global loading scale `tau0` is given its gamma prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tau0Form {
    /// `tau0 ~ Gamma(shape, rate)`.
    #[default]
    Gamma,
    /// `1 / tau0 ~ Gamma(shape, rate)`.
    InverseGamma,
}

/// Fixed prior constants of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparameters {
    /// Latent dimension (truncation level).
    pub k: usize,
    /// Prior SD of the baseline curves `mu_jd`.
    pub sigma_mu: f64,
    /// Prior SD of the chemical factors in the covariate-free variant.
    pub sigma_eta: f64,
    /// Prior SD of the covariate intercepts `mu^c_l`.
    pub sigma_w: f64,
    /// Prior SD of the covariate loadings `theta_lk`.
    pub sigma_theta: f64,
    /// Prior SD of the ontology coefficients `beta_kq`.
    pub sigma_beta: f64,
    /// SD of the log-normal local scales `phi_jk`.
    pub sigma_phi: f64,
    /// Prior on the first multiplicative gamma increment.
    pub delta_first: GammaPrior,
    /// Prior on the remaining increments.
    pub delta_rest: GammaPrior,
    pub tau0: GammaPrior,
    pub tau0_form: Tau0Form,
    /// Squared-exponential kernel length scale over dose coordinates.
    pub length_scale: f64,
    pub jitter: f64,
    /// Noise-model intercept (log variance).
    pub alpha_d: NormalPrior,
    /// Noise-model dose slope (log variance per dose unit).
    pub beta_d: NormalPrior,
    /// Half-normal scale of the gene-noise heterogeneity `tau_gamma`.
    pub tau_gamma_scale: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            k: 10,
            sigma_mu: 1.0,
            sigma_eta: 1.0,
            sigma_w: 1.0,
            sigma_theta: 1.0,
            sigma_beta: 0.5,
            sigma_phi: 0.25,
            delta_first: GammaPrior { shape: 2.0, rate: 1.0 },
            delta_rest: GammaPrior { shape: 2.0, rate: 1.0 },
            tau0: GammaPrior { shape: 2.0, rate: 1.0 },
            tau0_form: Tau0Form::Gamma,
            length_scale: 1.0,
            jitter: 1e-8,
            alpha_d: NormalPrior {
                mean: 0.15f64.ln(),
                sd: 0.5,
            },
            beta_d: NormalPrior { mean: 0.0, sd: 0.05 },
            tau_gamma_scale: 0.5,
        }
    }
}

impl Hyperparameters {
    /// Defaults with latent dimension `k`.
    pub fn with_k(k: usize) -> Self {
        Self { k, ..Self::default() }
    }

    /// Overrides used for the real-data application: tighter local scales
    /// and stronger multiplicative shrinkage.
    pub fn application() -> Self {
        Self {
            sigma_phi: 0.15,
            delta_first: GammaPrior { shape: 5.0, rate: 2.0 },
            delta_rest: GammaPrior { shape: 5.0, rate: 2.5 },
            tau0: GammaPrior { shape: 3.0, rate: 2.0 },
            ..Self::default()
        }
    }

    pub fn delta_prior(&self, k: usize) -> GammaPrior {
        if k == 0 {
            self.delta_first
        } else {
            self.delta_rest
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("latent dimension k must be at least 1".into()));
        }
        let scales = [
            ("sigma_mu", self.sigma_mu),
            ("sigma_eta", self.sigma_eta),
            ("sigma_w", self.sigma_w),
            ("sigma_theta", self.sigma_theta),
            ("sigma_beta", self.sigma_beta),
            ("sigma_phi", self.sigma_phi),
            ("delta_first.shape", self.delta_first.shape),
            ("delta_first.rate", self.delta_first.rate),
            ("delta_rest.shape", self.delta_rest.shape),
            ("delta_rest.rate", self.delta_rest.rate),
            ("tau0.shape", self.tau0.shape),
            ("tau0.rate", self.tau0.rate),
            ("length_scale", self.length_scale),
            ("jitter", self.jitter),
            ("alpha_d.sd", self.alpha_d.sd),
            ("beta_d.sd", self.beta_d.sd),
            ("tau_gamma_scale", self.tau_gamma_scale),
        ];
        for (name, v) in scales {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !self.alpha_d.mean.is_finite() || !self.beta_d.mean.is_finite() {
            return Err(Error::Config("noise prior means must be finite".into()));
        }
        Ok(())
    }
}
