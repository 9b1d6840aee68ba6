//! Identifying the latent factors across draws, and turning posterior mean
//! curves into activity calls and a chemical prioritization table.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::model::{Dims, Kernel, LatentState, MeanEffect, ObservationSet, PairKey};
use crate::{Error, Result};

const VARIMAX_MAX_ITER: usize = 1000;
const VARIMAX_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct Varimax {
    pub rotated: DMatrix<f64>,
    pub rotation: DMatrix<f64>,
    /// Varimax criterion after each iteration.
    pub trace: Vec<f64>,
}

fn varimax_criterion(z: &DMatrix<f64>) -> f64 {
    let p = z.nrows() as f64;
    z.column_iter()
        .map(|c| {
            let m2 = c.iter().map(|v| v * v).sum::<f64>() / p;
            let m4 = c.iter().map(|v| v.powi(4)).sum::<f64>() / p;
            m4 - m2 * m2
        })
        .sum()
}

/// Kaiser-normalized varimax by sweeps of optimal planar rotations.
pub fn varimax(loadings: &DMatrix<f64>) -> Result<Varimax> {
    let (p, k) = loadings.shape();
    if loadings.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    if k < 2 || p == 0 {
        return Ok(Varimax {
            rotated: loadings.clone(),
            rotation: DMatrix::identity(k, k),
            trace: Vec::new(),
        });
    }
    let norms: Vec<f64> = loadings.row_iter().map(|r| r.norm()).collect();
    let mut x = loadings.clone();
    for (mut row, n) in x.row_iter_mut().zip(&norms) {
        if *n > 0.0 {
            row /= *n;
        }
    }
    let mut rotation = DMatrix::identity(k, k);
    let mut trace = vec![varimax_criterion(&x)];
    let pf = p as f64;
    for _ in 0..VARIMAX_MAX_ITER {
        let mut largest = 0.0f64;
        for a in 0..k {
            for b in a + 1..k {
                // optimal planar angle for columns a and b
                let (mut sa, mut sb, mut sc, mut sd) = (0.0, 0.0, 0.0, 0.0);
                for r in 0..p {
                    let (xa, xb) = (x[(r, a)], x[(r, b)]);
                    let u = xa * xa - xb * xb;
                    let v = 2.0 * xa * xb;
                    sa += u;
                    sb += v;
                    sc += u * u - v * v;
                    sd += 2.0 * u * v;
                }
                let num = sd - 2.0 * sa * sb / pf;
                let den = sc - (sa * sa - sb * sb) / pf;
                let angle = 0.25 * num.atan2(den);
                if angle.abs() < VARIMAX_TOL {
                    continue;
                }
                largest = largest.max(angle.abs());
                let (sin, cos) = angle.sin_cos();
                for m in [&mut x, &mut rotation] {
                    for r in 0..m.nrows() {
                        let (ya, yb) = (m[(r, a)], m[(r, b)]);
                        m[(r, a)] = ya * cos + yb * sin;
                        m[(r, b)] = -ya * sin + yb * cos;
                    }
                }
            }
        }
        trace.push(varimax_criterion(&x));
        if largest < VARIMAX_TOL {
            break;
        }
    }
    Ok(Varimax {
        rotated: loadings * &rotation,
        rotation,
        trace,
    })
}

/// Greedy column matching of `draw` to `pivot` by largest absolute inner
/// product. Returns the signed permutation `Q` (`draw * Q` lines up with the
/// pivot) and, per pivot column, the matched draw column.
fn greedy_match(draw: &DMatrix<f64>, pivot: &DMatrix<f64>) -> (DMatrix<f64>, Vec<usize>) {
    let k = pivot.ncols();
    let inner = draw.transpose() * pivot;
    let mut q = DMatrix::zeros(k, k);
    let mut source = vec![usize::MAX; k];
    let mut used_row = vec![false; k];
    let mut used_col = vec![false; k];
    for _ in 0..k {
        let mut best = (0, 0, -1.0);
        for a in (0..k).filter(|a| !used_row[*a]) {
            for b in (0..k).filter(|b| !used_col[*b]) {
                if inner[(a, b)].abs() > best.2 {
                    best = (a, b, inner[(a, b)].abs());
                }
            }
        }
        let (a, b, _) = best;
        used_row[a] = true;
        used_col[b] = true;
        q[(a, b)] = if inner[(a, b)] < 0.0 { -1.0 } else { 1.0 };
        source[b] = a;
    }
    (q, source)
}

/// Orthogonal transforms `T_s` with `varimax(L_s) Q_s = L_s T_s` matched to
/// the (already rotated) `pivot`.
pub fn align_to_pivot(loadings: &[DMatrix<f64>], pivot: &DMatrix<f64>) -> Result<Vec<(DMatrix<f64>, Vec<usize>)>> {
    if let Some(bad) = loadings.iter().find(|l| l.shape() != pivot.shape()) {
        return Err(Error::Dimension(format!(
            "draw loadings are {:?} but the pivot is {:?}",
            bad.shape(),
            pivot.shape()
        )));
    }
    loadings
        .par_iter()
        .map(|l| {
            let v = varimax(l)?;
            let (q, source) = greedy_match(&v.rotated, pivot);
            Ok((v.rotation * q, source))
        })
        .collect()
}

/// Draws expressed in a common factor basis. Loadings are stacked per gene
/// and dose (row `j*D + d`), factors per chemical (row `i`).
#[derive(Debug, Clone)]
pub struct AlignedDraws {
    pub dims: Dims,
    pub pivot: usize,
    pub transforms: Vec<DMatrix<f64>>,
    pub mu: Vec<Vec<f64>>,
    pub loadings: Vec<DMatrix<f64>>,
    pub eta: Vec<DMatrix<f64>>,
    /// `P x K`, empty without a W submodel.
    pub theta: Vec<DMatrix<f64>>,
    /// `K x Q`; the covariate coefficients only follow the column permutation.
    pub beta: Vec<DMatrix<f64>>,
}

impl AlignedDraws {
    pub fn len(&self) -> usize {
        self.loadings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loadings.is_empty()
    }

    pub fn mean_effect(&self, s: usize) -> MeanEffect {
        let Dims { m, d, k, .. } = self.dims;
        let l = &self.loadings[s];
        let mut flat = vec![0.0; m * k * d];
        for j in 0..m {
            for kk in 0..k {
                for dd in 0..d {
                    flat[(j * k + kk) * d + dd] = l[(j * d + dd, kk)];
                }
            }
        }
        let eta: Vec<f64> = self.eta[s].transpose().iter().copied().collect();
        MeanEffect::from_parts(self.dims, &self.mu[s], &flat, &eta)
    }
}

/// Stack `lambda_jk(x_d)` into an `(M*D) x K` matrix.
pub fn stacked_loadings(state: &LatentState, kernel: &Kernel) -> DMatrix<f64> {
    let Dims { m, d, k, .. } = state.dims;
    let flat = state.loadings(kernel);
    DMatrix::from_fn(m * d, k, |r, c| flat[((r / d) * k + c) * d + r % d])
}

/// Index of the draw with the median log posterior (lower median).
pub fn median_pivot(log_posterior: &[f64]) -> Result<usize> {
    if log_posterior.is_empty() {
        return Err(Error::InsufficientData("no draws to align".into()));
    }
    let mut order: Vec<usize> = (0..log_posterior.len()).collect();
    order.sort_by(|a, b| log_posterior[*a].total_cmp(&log_posterior[*b]).then(a.cmp(b)));
    Ok(order[(order.len() - 1) / 2])
}

/// Varimax every draw, then match columns and signs to the varimax-rotated
/// pivot draw. Factors and W coefficients are rotated with the loadings so
/// every draw's mean effect is unchanged.
pub fn match_align(draws: &[LatentState], pivot: usize, kernel: &Kernel) -> Result<AlignedDraws> {
    let first = draws
        .first()
        .ok_or_else(|| Error::InsufficientData("no draws to align".into()))?;
    if pivot >= draws.len() {
        return Err(Error::Dimension(format!("pivot {pivot} out of {} draws", draws.len())));
    }
    let dims = first.dims;
    if let Some(bad) = draws.iter().find(|s| s.dims != dims) {
        return Err(Error::Dimension(format!(
            "draws disagree on dimensions: {:?} vs {:?}",
            bad.dims, dims
        )));
    }
    let Dims { n, k, p, q, .. } = dims;
    let loadings: Vec<DMatrix<f64>> = draws.par_iter().map(|s| stacked_loadings(s, kernel)).collect();
    let reference = varimax(&loadings[pivot])?.rotated;
    let transforms = align_to_pivot(&loadings, &reference)?;

    let mut out = AlignedDraws {
        dims,
        pivot,
        transforms: Vec::with_capacity(draws.len()),
        mu: Vec::with_capacity(draws.len()),
        loadings: Vec::with_capacity(draws.len()),
        eta: Vec::with_capacity(draws.len()),
        theta: Vec::with_capacity(draws.len()),
        beta: Vec::with_capacity(draws.len()),
    };
    for ((state, l), (t, source)) in draws.iter().zip(loadings).zip(transforms) {
        let eta = DMatrix::from_row_slice(n, k, &state.eta);
        let theta = if state.theta.is_empty() {
            DMatrix::zeros(0, k)
        } else {
            DMatrix::from_row_slice(p, k, &state.theta) * &t
        };
        let beta = if state.beta.is_empty() {
            DMatrix::zeros(k, 0)
        } else {
            let raw = DMatrix::from_row_slice(k, q, &state.beta);
            DMatrix::from_fn(k, q, |b, c| raw[(source[b], c)])
        };
        out.mu.push(state.mu.clone());
        out.loadings.push(l * &t);
        out.eta.push(eta * &t);
        out.theta.push(theta);
        out.beta.push(beta);
        out.transforms.push(t);
    }
    Ok(out)
}

/// Reference level that responses are compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum Baseline {
    /// Negative control: a log2-fold response of zero.
    #[default]
    Control,
    /// The response at the lowest dose of the same curve.
    LowestDose,
}

/// Standard activity thresholds on the fold-change scale.
pub const THRESHOLDS: [f64; 3] = [0.25, 0.5, 0.75];
/// Threshold for "active" in the prioritization table.
pub const ACTIVE: f64 = 0.5;
/// Threshold for "highly active".
pub const HIGHLY_ACTIVE: f64 = 0.75;
// absorbs the rounding in 2^(log2 x) - 1
const THRESHOLD_SLACK: f64 = 1e-12;

fn fold_changes(curve: &[f64], baseline: Baseline) -> impl Iterator<Item = f64> + '_ {
    let base = match baseline {
        Baseline::Control => 0.0,
        Baseline::LowestDose => curve.first().copied().unwrap_or(0.0),
    };
    curve.iter().map(move |s| ((s - base).exp2() - 1.0).abs())
}

/// Smallest dose index whose absolute fold change over baseline reaches
/// `threshold`.
pub fn minimum_active_dose(curve: &[f64], baseline: Baseline, threshold: f64) -> Option<usize> {
    fold_changes(curve, baseline).position(|c| c >= threshold - THRESHOLD_SLACK)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActivityCall {
    pub pair: PairKey,
    pub threshold: f64,
    pub minimum_active_dose: Option<usize>,
    /// Whether the observed replicate means already reach the threshold.
    pub observed: bool,
    /// Largest absolute fold change along the predicted curve.
    pub max_fold_change: f64,
}

/// Calls for every pair and threshold from the posterior mean curves; the
/// observed flag uses replicate means at the observed doses.
pub fn activity_calls(
    effect: &MeanEffect,
    data: &ObservationSet,
    baseline: Baseline,
    thresholds: &[f64],
) -> Vec<ActivityCall> {
    let (d, n, m) = effect.shape();
    let mut out = Vec::with_capacity(n * m * thresholds.len());
    for i in 0..n {
        for j in 0..m {
            let curve = effect.curve(i, j);
            let max_fold_change = fold_changes(curve, baseline).fold(0.0, f64::max);
            let observed: Vec<f64> = (0..d).filter_map(|dd| data.replicate_mean(&(i, j, dd))).collect();
            for &t in thresholds {
                out.push(ActivityCall {
                    pair: (i, j),
                    threshold: t,
                    minimum_active_dose: minimum_active_dose(curve, baseline, t),
                    observed: minimum_active_dose(&observed, baseline, t).is_some(),
                    max_fold_change,
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriorityRow {
    pub chemical: usize,
    /// Newly predicted gene with the largest fold change.
    pub max_response_gene: usize,
    pub active: usize,
    pub highly_active: usize,
    pub exposure: Option<f64>,
}

/// Chemicals with genes predicted active where no activity was observed,
/// counted at the active and highly-active thresholds; a pair observed
/// active at the lower of the two is not new at either. With exposure scores
/// the table is sorted by decreasing exposure (unscored chemicals last),
/// otherwise by chemical.
pub fn prioritize(calls: &[ActivityCall], exposure: Option<&BTreeMap<usize, f64>>) -> Vec<PriorityRow> {
    let observed: BTreeSet<PairKey> = calls
        .iter()
        .filter(|c| c.threshold == ACTIVE && c.observed)
        .map(|c| c.pair)
        .collect();
    let mut rows: BTreeMap<usize, PriorityRow> = BTreeMap::new();
    let mut best: BTreeMap<usize, f64> = BTreeMap::new();
    let new = calls.iter().filter(|c| {
        (c.threshold == ACTIVE || c.threshold == HIGHLY_ACTIVE)
            && c.minimum_active_dose.is_some()
            && !observed.contains(&c.pair)
    });
    for call in new {
        let (i, j) = call.pair;
        let row = rows.entry(i).or_insert(PriorityRow {
            chemical: i,
            max_response_gene: j,
            active: 0,
            highly_active: 0,
            exposure: exposure.and_then(|e| e.get(&i).copied()),
        });
        if call.threshold == ACTIVE {
            row.active += 1;
        } else {
            row.highly_active += 1;
        }
        let top = best.entry(i).or_insert(f64::NEG_INFINITY);
        if call.max_fold_change > *top {
            *top = call.max_fold_change;
            row.max_response_gene = j;
        }
    }
    let mut out: Vec<PriorityRow> = rows.into_values().collect();
    if exposure.is_some() {
        out.sort_by(|a, b| match (a.exposure, b.exposure) {
            (Some(x), Some(y)) => y.total_cmp(&x).then(a.chemical.cmp(&b.chemical)),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => a.chemical.cmp(&b.chemical),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{kernel_matrix, DoseGrid, Hyperparameters, Variant};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_orthogonal(k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(k, k, |_, _| rng.sample::<f64, _>(StandardNormal));
        a.qr().q()
    }

    fn sparse_loadings(rows: usize, k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, k, |r, c| {
            if r % k == c {
                1.0 + rng.random::<f64>()
            } else {
                0.05 * rng.sample::<f64, _>(StandardNormal)
            }
        })
    }

    fn signed_permutation(k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let mut perm: Vec<usize> = (0..k).collect();
        for i in (1..k).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        DMatrix::from_fn(k, k, |r, c| {
            if perm[c] == r {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            } else {
                0.0
            }
        })
    }

    #[test]
    fn varimax_rotation_is_orthogonal_and_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for k in [2, 3, 5] {
            let l = sparse_loadings(40, k, &mut rng) * random_orthogonal(k, &mut rng);
            let v = varimax(&l).unwrap();
            let rtr = v.rotation.transpose() * &v.rotation;
            assert!((rtr - DMatrix::identity(k, k)).abs().max() < 1e-10);
            for w in v.trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-12, "{:?}", v.trace);
            }
        }
    }

    #[test]
    fn varimax_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let l = DMatrix::from_fn(12, 3, |r, c| if r % 3 == c { 1.0 + r as f64 / 10.0 } else { 0.0 });
        let v = varimax(&l).unwrap();
        let abs = v.rotation.abs();
        assert!((abs - DMatrix::identity(3, 3)).max() < 1e-8);

        let sparse = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 2.0, 0.0, 0.0, 1.5, 0.0, 0.5]);
        let c = std::f64::consts::FRAC_1_SQRT_2;
        let turn = DMatrix::from_row_slice(2, 2, &[c, -c, c, c]);
        let v = varimax(&(&sparse * turn)).unwrap();
        let (q, _) = greedy_match(&v.rotated, &sparse);
        assert!((v.rotated.clone() * q - &sparse).abs().max() < 1e-10);

        let single = DMatrix::from_fn(5, 1, |_, _| rng.random::<f64>() - 0.5);
        let v = varimax(&single).unwrap();
        assert_eq!(v.rotation, DMatrix::identity(1, 1));
        assert_eq!(v.rotated, single);
    }

    #[test]
    fn recovers_pivot_from_transformed_copies() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k = 4;
        let pivot = varimax(&sparse_loadings(30, k, &mut rng)).unwrap().rotated;
        let draws: Vec<DMatrix<f64>> = (0..25)
            .map(|s| match s % 3 {
                0 => &pivot * signed_permutation(k, &mut rng),
                1 => &pivot * random_orthogonal(k, &mut rng),
                _ => &pivot * random_orthogonal(k, &mut rng) * signed_permutation(k, &mut rng),
            })
            .collect();
        for (l, (t, _)) in draws.iter().zip(align_to_pivot(&draws, &pivot).unwrap()) {
            assert!((l * t - &pivot).abs().max() < 1e-6);
        }
        let same = align_to_pivot(&vec![pivot.clone(); 3], &pivot).unwrap();
        for (t, source) in same {
            assert!((t - DMatrix::identity(k, k)).abs().max() < 1e-8);
            assert_eq!(source, (0..k).collect::<Vec<_>>());
        }
        let wrong = DMatrix::zeros(30, k + 1);
        assert!(matches!(align_to_pivot(&[wrong], &pivot), Err(Error::Dimension(_))));
    }

    fn random_state(dims: Dims, variant: Variant, rng: &mut ChaCha8Rng) -> LatentState {
        let mut s = LatentState::zeros(dims, variant);
        let mut fill = |v: &mut Vec<f64>| v.iter_mut().for_each(|x| *x = rng.sample::<f64, _>(StandardNormal));
        fill(&mut s.mu);
        fill(&mut s.lambda_raw);
        fill(&mut s.eta);
        fill(&mut s.theta);
        fill(&mut s.beta);
        s.tau0 = 0.7;
        s
    }

    #[test]
    fn alignment_preserves_mean_effect() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let dims = Dims { n: 6, m: 5, d: 4, k: 3, p: 2, q: 3 };
        let hyper = Hyperparameters::with_k(3);
        let kernel = kernel_matrix(&DoseGrid::standard(4).unwrap(), hyper.length_scale, hyper.jitter).unwrap();
        let draws: Vec<LatentState> = (0..8).map(|_| random_state(dims, Variant::Dart, &mut rng)).collect();
        let lp: Vec<f64> = (0..8).map(|s| s as f64).collect();
        let pivot = median_pivot(&lp).unwrap();
        assert_eq!(pivot, 3);
        let aligned = match_align(&draws, pivot, &kernel).unwrap();
        for (s, state) in draws.iter().enumerate() {
            let before = crate::model::mean_effect_with_kernel(state, &kernel);
            assert!(aligned.mean_effect(s).max_abs_diff(&before) < 1e-8);
            let w_before = DMatrix::from_row_slice(2, 3, &state.theta) * DMatrix::from_row_slice(6, 3, &state.eta).transpose();
            let w_after = &aligned.theta[s] * aligned.eta[s].transpose();
            assert!((w_before - w_after).abs().max() < 1e-10);
        }
        let mut other = random_state(Dims { k: 2, ..dims }, Variant::Dart, &mut rng);
        other.delta.truncate(2);
        assert!(match_align(&[draws[0].clone(), other], 0, &kernel).is_err());
    }

    #[test]
    fn beta_follows_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dims = Dims { n: 4, m: 6, d: 3, k: 2, p: 0, q: 2 };
        let hyper = Hyperparameters::with_k(2);
        let kernel = kernel_matrix(&DoseGrid::standard(3).unwrap(), hyper.length_scale, hyper.jitter).unwrap();
        let base = random_state(dims, Variant::Dart, &mut rng);
        let mut swapped = base.clone();
        for j in 0..6 {
            for dd in 0..3 {
                swapped.lambda_raw.swap(j * 6 + dd, (j * 2 + 1) * 3 + dd);
            }
        }
        for i in 0..4 {
            swapped.eta.swap(i * 2, i * 2 + 1);
        }
        swapped.beta = vec![base.beta[2], base.beta[3], base.beta[0], base.beta[1]];
        swapped.delta = vec![1.0, 1.0];
        let mut unit = base.clone();
        unit.delta = vec![1.0, 1.0];
        let aligned = match_align(&[unit, swapped], 0, &kernel).unwrap();
        assert!((&aligned.beta[0] - &aligned.beta[1]).abs().max() < 1e-12);
    }

    #[test]
    fn minimum_active_dose_examples() {
        assert_eq!(minimum_active_dose(&[0.0; 5], Baseline::Control, 0.25), None);
        let s = 1.75f64.log2();
        let curve = [0.0, 0.0, s, 0.0, 0.0];
        assert_eq!(minimum_active_dose(&curve, Baseline::Control, 0.75), Some(2));
        let down = [0.0, -0.5, -1.5, (0.2f64).log2()];
        assert_eq!(minimum_active_dose(&down, Baseline::Control, 0.75), Some(3));
        let shifted = [1.0, 1.0, 1.0 + s];
        assert_eq!(minimum_active_dose(&shifted, Baseline::LowestDose, 0.75), Some(2));
        assert_eq!(minimum_active_dose(&shifted, Baseline::Control, 0.75), Some(0));
    }

    proptest! {
        #[test]
        fn thresholds_are_monotone(curve in proptest::collection::vec(-3.0f64..3.0, 1..8)) {
            let doses: Vec<Option<usize>> = THRESHOLDS
                .iter()
                .map(|t| minimum_active_dose(&curve, Baseline::Control, *t))
                .collect();
            for w in doses.windows(2) {
                if let Some(hi) = w[1] {
                    prop_assert!(w[0].is_some_and(|lo| lo <= hi));
                }
            }
        }
    }

    fn fixture() -> (MeanEffect, ObservationSet) {
        let mut effect = MeanEffect::zeros(3, 2, 3);
        effect.set(1, 0, 2, 1.0);
        effect.set(2, 1, 1, 0.7);
        let mut obs = ObservationSet::new(3, 2, DoseGrid::standard(3).unwrap());
        obs.push(2, 1, 1, 0.7).unwrap();
        obs.push(0, 0, 0, 0.0).unwrap();
        (effect, obs)
    }

    #[test]
    fn prioritization_examples() {
        let (effect, obs) = fixture();
        let calls = activity_calls(&effect, &obs, Baseline::Control, &THRESHOLDS);
        assert_eq!(calls.len(), 3 * 2 * 3);
        let rows = prioritize(&calls, None);
        assert_eq!(
            rows,
            vec![PriorityRow { chemical: 1, max_response_gene: 0, active: 1, highly_active: 1, exposure: None }]
        );

        let quiet = MeanEffect::zeros(3, 2, 3);
        assert!(prioritize(&activity_calls(&quiet, &obs, Baseline::Control, &THRESHOLDS), None).is_empty());

        let mut more = effect.clone();
        more.set(0, 1, 0, -3.0);
        let calls = activity_calls(&more, &obs, Baseline::Control, &THRESHOLDS);
        let exposure = BTreeMap::from([(1, 0.5), (0, 2.0)]);
        let order: Vec<usize> = prioritize(&calls, Some(&exposure)).iter().map(|r| r.chemical).collect();
        assert_eq!(order, vec![0, 1]);
        let partial = BTreeMap::from([(1, 0.5)]);
        let order: Vec<usize> = prioritize(&calls, Some(&partial)).iter().map(|r| r.chemical).collect();
        assert_eq!(order, vec![1, 0]);
    }

    #[test]
    fn observed_moderate_activity_is_not_new() {
        let mut effect = MeanEffect::zeros(1, 1, 2);
        effect.set(0, 0, 1, 1.0);
        let mut obs = ObservationSet::new(1, 1, DoseGrid::standard(2).unwrap());
        obs.push(0, 0, 1, 0.7).unwrap();
        let calls = activity_calls(&effect, &obs, Baseline::Control, &THRESHOLDS);
        assert!(calls.iter().any(|c| c.threshold == HIGHLY_ACTIVE && !c.observed));
        assert!(prioritize(&calls, None).is_empty());
    }

    proptest! {
        #[test]
        fn highly_active_never_exceeds_active(values in proptest::collection::vec(-2.0f64..2.0, 12),
                                              seen in proptest::collection::vec(proptest::option::of(-2.0f64..2.0), 12)) {
            let mut effect = MeanEffect::zeros(2, 2, 3);
            let mut obs = ObservationSet::new(2, 2, DoseGrid::standard(3).unwrap());
            for (idx, (v, o)) in values.iter().zip(&seen).enumerate() {
                let (i, j, d) = (idx / 6, (idx / 3) % 2, idx % 3);
                effect.set(i, j, d, *v);
                if let Some(y) = o {
                    obs.push(i, j, d, *y).unwrap();
                }
            }
            for row in prioritize(&activity_calls(&effect, &obs, Baseline::Control, &THRESHOLDS), None) {
                prop_assert!(row.highly_active <= row.active);
                prop_assert!(row.active > 0);
            }
        }
    }
}
