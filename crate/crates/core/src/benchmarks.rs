//! Hill, exponential-5 and power dose-response curves fitted by
//! Levenberg–Marquardt, and dose-holdout cross-validation against them.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::rmse_r2;
use crate::model::{ObservationSet, PairKey, MIN_DOSES_FOR_DOSE_HOLDOUT};
use crate::{Error, Result};

/// Distinct doses a pair needs before any curve is fitted to it.
pub const MIN_DOSES_FOR_FIT: usize = 4;
const MAX_ITERATIONS: usize = 500;
const STEP_TOLERANCE: f64 = 1e-10;
const TP_BOUND: f64 = 10.0;
const P_MIN: f64 = 1e-8;
const P_MAX: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveKind {
    Hill,
    Exp5,
    Power,
}

impl CurveKind {
    pub const ALL: [CurveKind; 3] = [CurveKind::Hill, CurveKind::Exp5, CurveKind::Power];

    pub fn n_params(self) -> usize {
        match self {
            CurveKind::Hill | CurveKind::Exp5 => 3,
            CurveKind::Power => 2,
        }
    }
}

impl fmt::Display for CurveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CurveKind::Hill => "hill",
            CurveKind::Exp5 => "exp5",
            CurveKind::Power => "power",
        })
    }
}

impl FromStr for CurveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hill" => Ok(CurveKind::Hill),
            "exp5" => Ok(CurveKind::Exp5),
            "power" => Ok(CurveKind::Power),
            other => Err(Error::Config(format!("unknown curve kind `{other}`"))),
        }
    }
}

/// `tp / (1 + (ac50 / x)^p)`.
pub fn hill_eval(x: f64, tp: f64, ac50: f64, p: f64) -> Result<f64> {
    if !(x > 0.0) || !(ac50 > 0.0) {
        return Err(Error::Domain(format!("hill needs x > 0 and AC50 > 0 (x={x}, AC50={ac50})")));
    }
    if x == ac50 {
        return Ok(tp / 2.0);
    }
    Ok(tp / (1.0 + (p * (ac50.ln() - x.ln())).exp()))
}

/// `tp * (1 - 2^(-(x / ac50)^p))`.
pub fn exp5_eval(x: f64, tp: f64, ac50: f64, p: f64) -> Result<f64> {
    if !(x >= 0.0) || !(ac50 > 0.0) {
        return Err(Error::Domain(format!("exp5 needs x >= 0 and AC50 > 0 (x={x}, AC50={ac50})")));
    }
    if x == ac50 {
        return Ok(tp / 2.0);
    }
    Ok(tp * (1.0 - (-(x / ac50).powf(p) * std::f64::consts::LN_2).exp()))
}

/// `a * x^p`.
pub fn power_eval(x: f64, a: f64, p: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::Domain(format!("power needs x >= 0 (x={x})")));
    }
    Ok(a * x.powf(p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParametricFit {
    pub kind: CurveKind,
    /// `(tp, AC50, p)` for Hill and Exp5, `(a, p)` for Power.
    pub params: Vec<f64>,
    pub sse: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl ParametricFit {
    pub fn predict(&self, x: f64) -> Result<f64> {
        let p = &self.params;
        match self.kind {
            CurveKind::Hill => hill_eval(x, p[0], p[1], p[2]),
            CurveKind::Exp5 => exp5_eval(x, p[0], p[1], p[2]),
            CurveKind::Power => power_eval(x, p[0], p[1]),
        }
    }
}

/// Internal coordinates: `(tp, ln AC50, p)` or `(a, p)`.
struct Problem<'a> {
    kind: CurveKind,
    x: &'a [f64],
    y: &'a [f64],
    ln_ac50_bounds: (f64, f64),
}

impl Problem<'_> {
    fn clamp(&self, theta: &mut [f64]) {
        match self.kind {
            CurveKind::Hill | CurveKind::Exp5 => {
                theta[0] = theta[0].clamp(-TP_BOUND, TP_BOUND);
                theta[1] = theta[1].clamp(self.ln_ac50_bounds.0, self.ln_ac50_bounds.1);
                theta[2] = theta[2].clamp(P_MIN, P_MAX);
            }
            CurveKind::Power => theta[1] = theta[1].clamp(P_MIN, P_MAX),
        }
    }

    /// Model values and Jacobian rows at `theta`.
    fn eval(&self, theta: &[f64], f: &mut [f64], jac: &mut DMatrix<f64>) {
        for (r, &x) in self.x.iter().enumerate() {
            let lx = x.ln();
            match self.kind {
                CurveKind::Hill => {
                    let (tp, u, p) = (theta[0], theta[1], theta[2]);
                    let g = 1.0 / (1.0 + (p * (u - lx)).exp());
                    // e / (1 + e)^2 written as g (1 - g) to avoid overflow
                    let eg2 = g * (1.0 - g);
                    f[r] = tp * g;
                    jac[(r, 0)] = g;
                    jac[(r, 1)] = -tp * p * eg2;
                    jac[(r, 2)] = -tp * (u - lx) * eg2;
                }
                CurveKind::Exp5 => {
                    let (tp, u, p) = (theta[0], theta[1], theta[2]);
                    let ratio = (p * (lx - u)).exp();
                    let h = (-ratio * std::f64::consts::LN_2).exp();
                    let df_dr = tp * std::f64::consts::LN_2 * h;
                    f[r] = tp * (1.0 - h);
                    jac[(r, 0)] = 1.0 - h;
                    jac[(r, 1)] = -df_dr * p * ratio;
                    jac[(r, 2)] = df_dr * (lx - u) * ratio;
                }
                CurveKind::Power => {
                    let (a, p) = (theta[0], theta[1]);
                    let xp = x.powf(p);
                    f[r] = a * xp;
                    jac[(r, 0)] = xp;
                    jac[(r, 1)] = a * xp * lx;
                }
            }
        }
    }

    fn sse(&self, theta: &[f64]) -> f64 {
        let mut f = vec![0.0; self.x.len()];
        let mut jac = DMatrix::zeros(self.x.len(), theta.len());
        self.eval(theta, &mut f, &mut jac);
        let s: f64 = f.iter().zip(self.y).map(|(a, b)| (a - b) * (a - b)).sum();
        if s.is_finite() {
            s
        } else {
            f64::INFINITY
        }
    }

    /// Projected Levenberg–Marquardt from `start`; returns the end point,
    /// its SSE, the iteration count and whether a stopping rule was met.
    fn solve(&self, start: &[f64]) -> (Vec<f64>, f64, usize, bool) {
        let np = start.len();
        let mut theta = start.to_vec();
        self.clamp(&mut theta);
        let mut f = vec![0.0; self.x.len()];
        let mut jac = DMatrix::zeros(self.x.len(), np);
        let mut sse = self.sse(&theta);
        let mut lambda = 1e-3;
        for iter in 1..=MAX_ITERATIONS {
            if sse == 0.0 {
                return (theta, sse, iter - 1, true);
            }
            self.eval(&theta, &mut f, &mut jac);
            let resid = DVector::from_iterator(self.y.len(), self.y.iter().zip(&f).map(|(y, v)| y - v));
            let jtj = jac.transpose() * &jac;
            let grad = jac.transpose() * resid;
            loop {
                let mut a = jtj.clone();
                for i in 0..np {
                    a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
                }
                let step = a.lu().solve(&grad);
                let Some(step) = step.filter(|s| s.iter().all(|v| v.is_finite())) else {
                    lambda *= 10.0;
                    if lambda > 1e16 {
                        return (theta, sse, iter, true);
                    }
                    continue;
                };
                let mut trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + s).collect();
                self.clamp(&mut trial);
                let moved = theta
                    .iter()
                    .zip(&trial)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                let trial_sse = self.sse(&trial);
                if trial_sse < sse {
                    theta = trial;
                    sse = trial_sse;
                    lambda = (lambda / 10.0).max(1e-12);
                    if moved < STEP_TOLERANCE {
                        return (theta, sse, iter, true);
                    }
                    break;
                }
                if moved < STEP_TOLERANCE {
                    // no descent left within the bounds
                    return (theta, sse, iter, true);
                }
                lambda *= 10.0;
                if lambda > 1e16 {
                    return (theta, sse, iter, true);
                }
            }
        }
        (theta, sse, MAX_ITERATIONS, false)
    }
}

fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![(lo * hi).sqrt()];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Least-squares fit of `kind` from `restarts` log-spaced starting points,
/// returning the lowest-SSE end point.
pub fn fit_curve(kind: CurveKind, doses: &[f64], responses: &[f64], restarts: usize) -> Result<ParametricFit> {
    if doses.len() != responses.len() {
        return Err(Error::Dimension(format!(
            "{} doses for {} responses",
            doses.len(),
            responses.len()
        )));
    }
    if doses.iter().any(|&x| !(x > 0.0) || !x.is_finite()) || responses.iter().any(|y| !y.is_finite()) {
        return Err(Error::Domain("doses must be positive and responses finite".into()));
    }
    let mut distinct = doses.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let needed = kind.n_params().max(MIN_DOSES_FOR_FIT);
    if distinct.len() < needed {
        return Err(Error::InsufficientData(format!(
            "{kind} needs {needed} distinct doses, got {}",
            distinct.len()
        )));
    }
    let restarts = restarts.max(1);
    let (lo, hi) = (distinct[0], distinct[distinct.len() - 1]);
    let problem = Problem {
        kind,
        x: doses,
        y: responses,
        ln_ac50_bounds: ((lo / 10.0).ln(), (hi * 10.0).ln()),
    };
    let peak = responses
        .iter()
        .copied()
        .fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc })
        .clamp(-TP_BOUND, TP_BOUND);
    let starts: Vec<Vec<f64>> = match kind {
        CurveKind::Hill | CurveKind::Exp5 => log_spaced(lo / 10.0, hi * 10.0, restarts)
            .into_iter()
            .map(|ac50| vec![peak, ac50.ln(), 1.0])
            .collect(),
        CurveKind::Power => {
            let sign = if responses.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
            log_spaced(1e-4, 1e2, restarts)
                .into_iter()
                .map(|a| vec![sign * a, 1.0])
                .collect()
        }
    };
    let mut best: Option<(Vec<f64>, f64, usize, bool)> = None;
    let mut any_converged = false;
    let mut total_iterations = 0;
    for start in &starts {
        let (theta, sse, iters, ok) = problem.solve(start);
        total_iterations += iters;
        any_converged |= ok;
        if best.as_ref().is_none_or(|b| sse < b.1) {
            best = Some((theta, sse, iters, ok));
        }
    }
    let (theta, sse, _, _) = best.expect("at least one restart");
    let params = match kind {
        CurveKind::Hill | CurveKind::Exp5 => vec![theta[0], theta[1].exp(), theta[2]],
        CurveKind::Power => theta,
    };
    Ok(ParametricFit {
        kind,
        params,
        sse,
        converged: any_converged,
        iterations: total_iterations,
    })
}

/// Dose on the natural scale for a grid coordinate (the grid is log-dose).
pub fn dose_from_coord(coord: f64) -> f64 {
    coord.exp()
}

/// One row of the benchmark table. `pair == None` marks the pooled row for a
/// `(kind, fold)` over all scored pairs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkRow {
    pub pair: Option<PairKey>,
    pub kind: CurveKind,
    pub fold: usize,
    pub in_rmse: f64,
    pub out_rmse: f64,
    pub in_r2: f64,
    pub out_r2: f64,
    pub converged: bool,
}

struct PairFold {
    pair: PairKey,
    kind: CurveKind,
    fold: usize,
    in_cells: Vec<(f64, f64)>,
    out_cells: Vec<(f64, f64)>,
    converged: bool,
}

fn metrics(cells: &[(f64, f64)]) -> (f64, f64) {
    if cells.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let (p, o): (Vec<f64>, Vec<f64>) = cells.iter().copied().unzip();
    rmse_r2(&p, &o).unwrap_or((f64::NAN, f64::NAN))
}

/// Dose-holdout cross-validation: in fold `f` every pair with at least five
/// doses loses its `f`-th lowest dose, curves are refitted to the remaining
/// replicate means and scored on the held-out mean. Sparser pairs are fitted
/// to all doses and only contribute in-sample; pairs with fewer than four
/// doses are skipped.
pub fn benchmark_crossval(
    data: &ObservationSet,
    kinds: &[CurveKind],
    k_folds: usize,
    restarts: usize,
) -> Result<Vec<BenchmarkRow>> {
    if k_folds == 0 {
        return Err(Error::Config("need at least one dose fold".into()));
    }
    let coords = data.grid().coords();
    let pairs: Vec<(PairKey, Vec<(usize, f64)>)> = data
        .doses_by_pair()
        .into_iter()
        .filter(|(_, doses)| doses.len() >= MIN_DOSES_FOR_FIT)
        .map(|((i, j), doses)| {
            let means = doses
                .iter()
                .map(|&d| (d, data.replicate_mean(&(i, j, d)).expect("observed cell")))
                .collect();
            ((i, j), means)
        })
        .collect();
    let mut jobs = Vec::new();
    for fold in 1..=k_folds {
        let held: std::collections::BTreeSet<_> = data.dose_fold_cells(fold).into_iter().collect();
        for &kind in kinds {
            for (pair, means) in &pairs {
                jobs.push((fold, kind, *pair, means, held.clone()));
            }
        }
    }
    let fitted: Vec<Result<PairFold>> = jobs
        .par_iter()
        .map(|(fold, kind, pair, means, held)| {
            let (train, test): (Vec<&(usize, f64)>, Vec<&(usize, f64)>) = means
                .iter()
                .partition(|(d, _)| !held.contains(&(pair.0, pair.1, *d)));
            let x: Vec<f64> = train.iter().map(|(d, _)| dose_from_coord(coords[*d])).collect();
            let y: Vec<f64> = train.iter().map(|(_, m)| *m).collect();
            let fit = fit_curve(*kind, &x, &y, restarts)?;
            let score = |cells: &[&(usize, f64)]| -> Result<Vec<(f64, f64)>> {
                cells
                    .iter()
                    .map(|(d, m)| Ok((fit.predict(dose_from_coord(coords[*d]))?, *m)))
                    .collect()
            };
            let scored_out = means.len() >= MIN_DOSES_FOR_DOSE_HOLDOUT;
            Ok(PairFold {
                pair: *pair,
                kind: *kind,
                fold: *fold,
                in_cells: score(&train)?,
                out_cells: if scored_out { score(&test)? } else { Vec::new() },
                converged: fit.converged,
            })
        })
        .collect();
    let fitted: Vec<PairFold> = fitted.into_iter().collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for fold in 1..=k_folds {
        for &kind in kinds {
            let group: Vec<&PairFold> = fitted.iter().filter(|p| p.fold == fold && p.kind == kind).collect();
            let mut all_in = Vec::new();
            let mut all_out = Vec::new();
            for pf in &group {
                let (in_rmse, in_r2) = metrics(&pf.in_cells);
                let (out_rmse, out_r2) = metrics(&pf.out_cells);
                rows.push(BenchmarkRow {
                    pair: Some(pf.pair),
                    kind,
                    fold,
                    in_rmse,
                    out_rmse,
                    in_r2,
                    out_r2,
                    converged: pf.converged,
                });
                all_in.extend_from_slice(&pf.in_cells);
                all_out.extend_from_slice(&pf.out_cells);
            }
            let (in_rmse, in_r2) = metrics(&all_in);
            let (out_rmse, out_r2) = metrics(&all_out);
            rows.push(BenchmarkRow {
                pair: None,
                kind,
                fold,
                in_rmse,
                out_rmse,
                in_r2,
                out_r2,
                converged: group.iter().all(|p| p.converged),
            });
        }
    }
    Ok(rows)
}
