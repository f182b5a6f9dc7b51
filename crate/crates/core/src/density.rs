//! Multivariate Gaussians and Gaussian mixtures, weighted maximum-likelihood
//! fits and weighted EM. Densities are evaluated in log space throughout.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum DensityError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("covariance is not positive definite")]
    NotPositiveDefinite,
    #[error("all sample weights are zero")]
    ZeroWeights,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("invalid mixture: {0}")]
    InvalidMixture(String),
}

/// `log(sum(exp(v)))`, returning `-inf` for an empty or all `-inf` slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Normalized linear-domain weights from log weights via max-shift.
/// Returns `None` when every weight is zero (all `-inf`).
pub fn normalize_log_weights(log_w: &[f64]) -> Option<Vec<f64>> {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    Some(w.into_iter().map(|v| v / total).collect())
}

/// `sigma + floor * I`.
pub fn regularize(sigma: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let n = sigma.nrows();
    sigma + DMatrix::identity(n, n) * floor
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GaussianRepr {
    mean: Vec<f64>,
    /// Row-major.
    covariance: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "GaussianRepr", into = "GaussianRepr")]
pub struct Gaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: DMatrix<f64>,
    log_norm: f64,
}

impl PartialEq for Gaussian {
    fn eq(&self, other: &Self) -> bool {
        self.mean == other.mean && self.cov == other.cov
    }
}

impl TryFrom<GaussianRepr> for Gaussian {
    type Error = DensityError;

    fn try_from(r: GaussianRepr) -> Result<Self, Self::Error> {
        let d = r.mean.len();
        if r.covariance.len() != d || r.covariance.iter().any(|row| row.len() != d) {
            return Err(DensityError::DimensionMismatch {
                expected: d,
                got: r.covariance.len(),
            });
        }
        let cov = DMatrix::from_fn(d, d, |i, j| r.covariance[i][j]);
        Gaussian::new(DVector::from_vec(r.mean), cov)
    }
}

impl From<Gaussian> for GaussianRepr {
    fn from(g: Gaussian) -> Self {
        let d = g.dim();
        GaussianRepr {
            mean: g.mean.iter().copied().collect(),
            covariance: (0..d).map(|i| (0..d).map(|j| g.cov[(i, j)]).collect()).collect(),
        }
    }
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self, DensityError> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(DensityError::DimensionMismatch {
                expected: d,
                got: cov.nrows(),
            });
        }
        // Symmetrize away round-off before factoring.
        let cov = (&cov + cov.transpose()) * 0.5;
        let chol = cov
            .clone()
            .cholesky()
            .ok_or(DensityError::NotPositiveDefinite)?
            .l();
        let log_det: f64 = 2.0 * chol.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self {
            log_norm: -0.5 * (d as f64 * TAU.ln() + log_det),
            mean,
            cov,
            chol,
        })
    }

    pub fn from_vecs(mean: Vec<f64>, cov_rows: Vec<Vec<f64>>) -> Result<Self, DensityError> {
        GaussianRepr {
            mean,
            covariance: cov_rows,
        }
        .try_into()
    }

    pub fn standard(d: usize) -> Self {
        Self::new(DVector::zeros(d), DMatrix::identity(d, d)).expect("identity is PD")
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn log_pdf(&self, x: &[f64]) -> Result<f64, DensityError> {
        if x.len() != self.dim() {
            return Err(DensityError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(self.log_pdf_unchecked(x))
    }

    fn log_pdf_unchecked(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let mut y = vec![0.0; d];
        let mut quad = 0.0;
        for i in 0..d {
            let mut acc = x[i] - self.mean[i];
            for (j, yj) in y.iter().enumerate().take(i) {
                acc -= self.chol[(i, j)] * yj;
            }
            y[i] = acc / self.chol[(i, i)];
            quad += y[i] * y[i];
        }
        self.log_norm - 0.5 * quad
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z: DVector<f64> = DVector::from_fn(self.dim(), |_, _| rng.sample(StandardNormal));
        (&self.mean + &self.chol * z).iter().copied().collect()
    }

    /// `(1 - alpha) * self + alpha * target`, applied to mean and covariance.
    pub fn blend(&self, target: &Gaussian, alpha: f64) -> Result<Gaussian, DensityError> {
        Gaussian::new(
            &self.mean * (1.0 - alpha) + &target.mean * alpha,
            &self.cov * (1.0 - alpha) + &target.cov * alpha,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub gaussian: Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GmmRepr", into = "GmmRepr")]
pub struct Gmm {
    components: Vec<Component>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GmmRepr {
    dimension: usize,
    components: Vec<Component>,
}

impl TryFrom<GmmRepr> for Gmm {
    type Error = DensityError;

    fn try_from(r: GmmRepr) -> Result<Self, Self::Error> {
        let g = Gmm::new(r.components)?;
        if g.dim() != r.dimension {
            return Err(DensityError::DimensionMismatch {
                expected: r.dimension,
                got: g.dim(),
            });
        }
        Ok(g)
    }
}

impl From<Gmm> for GmmRepr {
    fn from(g: Gmm) -> Self {
        GmmRepr {
            dimension: g.dim(),
            components: g.components,
        }
    }
}

impl Gmm {
    pub fn new(components: Vec<Component>) -> Result<Self, DensityError> {
        let Some(first) = components.first() else {
            return Err(DensityError::InvalidMixture("no components".into()));
        };
        let d = first.gaussian.dim();
        if let Some(c) = components.iter().find(|c| c.gaussian.dim() != d) {
            return Err(DensityError::DimensionMismatch {
                expected: d,
                got: c.gaussian.dim(),
            });
        }
        if components.iter().any(|c| !(c.weight > 0.0)) {
            return Err(DensityError::InvalidMixture("weights must be positive".into()));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        let components = components
            .into_iter()
            .map(|c| Component {
                weight: c.weight / total,
                gaussian: c.gaussian,
            })
            .collect();
        Ok(Self { components })
    }

    pub fn single(g: Gaussian) -> Self {
        Self {
            components: vec![Component {
                weight: 1.0,
                gaussian: g,
            }],
        }
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.components[0].gaussian.dim()
    }

    pub fn log_pdf(&self, x: &[f64]) -> Result<f64, DensityError> {
        if x.len() != self.dim() {
            return Err(DensityError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(self.log_pdf_unchecked(x))
    }

    pub(crate) fn log_pdf_unchecked(&self, x: &[f64]) -> f64 {
        if self.components.len() == 1 {
            return self.components[0].gaussian.log_pdf_unchecked(x);
        }
        let terms: Vec<f64> = self
            .components
            .iter()
            .map(|c| c.weight.ln() + c.gaussian.log_pdf_unchecked(x))
            .collect();
        log_sum_exp(&terms)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for c in &self.components {
            acc += c.weight;
            if u < acc {
                return c.gaussian.sample(rng);
            }
        }
        self.components.last().expect("non-empty").gaussian.sample(rng)
    }

    /// Weighted mean log-likelihood `sum_j zbar_j log p(x_j)`.
    pub fn weighted_log_likelihood(&self, ws: &WeightedSamples) -> f64 {
        ws.samples
            .iter()
            .zip(ws.normalized())
            .filter(|(_, w)| **w > 0.0)
            .map(|(x, w)| w * self.log_pdf_unchecked(x))
            .sum()
    }
}

/// Samples with unnormalized nonnegative weights, stored as log weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSamples {
    pub samples: Vec<Vec<f64>>,
    log_weights: Vec<f64>,
    normalized: Vec<f64>,
}

impl WeightedSamples {
    pub fn uniform(samples: Vec<Vec<f64>>) -> Self {
        let n = samples.len();
        Self {
            samples,
            log_weights: vec![0.0; n],
            normalized: vec![1.0 / n as f64; n],
        }
    }

    pub fn from_weights(samples: Vec<Vec<f64>>, weights: &[f64]) -> Result<Self, DensityError> {
        let logs: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(DensityError::InvalidMixture("negative sample weight".into()));
        }
        Self::from_log_weights(samples, logs)
    }

    pub fn from_log_weights(samples: Vec<Vec<f64>>, log_weights: Vec<f64>) -> Result<Self, DensityError> {
        if samples.len() != log_weights.len() {
            return Err(DensityError::DimensionMismatch {
                expected: samples.len(),
                got: log_weights.len(),
            });
        }
        let normalized = normalize_log_weights(&log_weights).ok_or(DensityError::ZeroWeights)?;
        Ok(Self {
            samples,
            log_weights,
            normalized,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// `zbar_j = z_j / sum z`.
    pub fn normalized(&self) -> &[f64] {
        &self.normalized
    }

    /// Kish effective sample size of the normalized weights.
    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.normalized.iter().map(|w| w * w).sum::<f64>()
    }

    fn dim(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }
}

/// Weighted mean and biased covariance with per-sample weights `w` (need not sum to one).
fn weighted_moments(samples: &[Vec<f64>], w: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>) {
    let d = samples[0].len();
    let total: f64 = w.iter().sum();
    let mut mean = DVector::zeros(d);
    for (x, wj) in samples.iter().zip(w) {
        if *wj == 0.0 {
            continue;
        }
        for i in 0..d {
            mean[i] += wj * x[i];
        }
    }
    mean /= total;
    let mut cov = DMatrix::zeros(d, d);
    for (x, wj) in samples.iter().zip(w) {
        if *wj == 0.0 {
            continue;
        }
        for i in 0..d {
            let di = mean[i] - x[i];
            for j in 0..=i {
                cov[(i, j)] += wj * di * (mean[j] - x[j]);
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            cov[(j, i)] = cov[(i, j)];
        }
    }
    cov /= total;
    (total, mean, cov)
}

/// Closed-form weighted fit: `mu = sum zbar_j x_j`,
/// `Sigma = sum zbar_j (mu - x_j)(mu - x_j)^T`, then `+ floor * I`.
pub fn fit_gaussian_weighted(ws: &WeightedSamples, floor: f64) -> Result<Gaussian, DensityError> {
    if ws.is_empty() {
        return Err(DensityError::TooFewSamples { needed: 1, got: 0 });
    }
    check_dims(ws)?;
    let (_, mean, cov) = weighted_moments(&ws.samples, ws.normalized());
    Gaussian::new(mean, regularize(&cov, floor))
}

fn check_dims(ws: &WeightedSamples) -> Result<(), DensityError> {
    let d = ws.dim();
    match ws.samples.iter().find(|s| s.len() != d) {
        Some(s) => Err(DensityError::DimensionMismatch {
            expected: d,
            got: s.len(),
        }),
        None => Ok(()),
    }
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub gmm: Gmm,
    /// Weighted log-likelihood of the initial model followed by one entry per iteration.
    pub log_likelihood: Vec<f64>,
    pub reseeded: usize,
}

const EM_TOL: f64 = 1e-8;
const EMPTY_COMPONENT: f64 = 1e-10;

/// Weighted EM: responsibilities are multiplied by the normalized sample
/// weights in the M-step; each component covariance is regularized.
pub fn fit_gmm_weighted(
    ws: &WeightedSamples,
    k: usize,
    init: &Gmm,
    iters: usize,
    floor: f64,
) -> Result<EmFit, DensityError> {
    if k == 0 || ws.len() < k {
        return Err(DensityError::TooFewSamples {
            needed: k.max(1),
            got: ws.len(),
        });
    }
    check_dims(ws)?;
    if init.len() != k {
        return Err(DensityError::InvalidMixture(format!(
            "initial mixture has {} components, expected {k}",
            init.len()
        )));
    }
    if init.dim() != ws.dim() {
        return Err(DensityError::DimensionMismatch {
            expected: ws.dim(),
            got: init.dim(),
        });
    }
    let zbar = ws.normalized();
    let n = ws.len();
    let mut gmm = init.clone();
    let mut history = vec![gmm.weighted_log_likelihood(ws)];
    let mut reseeded = 0;
    let mut resp = vec![vec![0.0; k]; n];
    for _ in 0..iters {
        // E-step.
        for (j, x) in ws.samples.iter().enumerate() {
            let logs: Vec<f64> = gmm
                .components
                .iter()
                .map(|c| c.weight.ln() + c.gaussian.log_pdf_unchecked(x))
                .collect();
            let norm = log_sum_exp(&logs);
            for (r, l) in resp[j].iter_mut().zip(&logs) {
                *r = (l - norm).exp();
            }
        }
        // M-step.
        let mut comps = Vec::with_capacity(k);
        for c in 0..k {
            let w: Vec<f64> = (0..n).map(|j| zbar[j] * resp[j][c]).collect();
            let mass: f64 = w.iter().sum();
            if mass < EMPTY_COMPONENT {
                reseeded += 1;
                comps.push(reseed(ws, &comps, floor)?);
                continue;
            }
            let (_, mean, cov) = weighted_moments(&ws.samples, &w);
            comps.push(Component {
                weight: mass,
                gaussian: Gaussian::new(mean, regularize(&cov, floor))?,
            });
        }
        gmm = Gmm::new(comps)?;
        let ll = gmm.weighted_log_likelihood(ws);
        let prev = *history.last().expect("non-empty");
        history.push(ll);
        if (ll - prev).abs() < EM_TOL {
            break;
        }
    }
    Ok(EmFit {
        gmm,
        log_likelihood: history,
        reseeded,
    })
}

/// New component at the highest-weight sample not already used as a mean.
fn reseed(ws: &WeightedSamples, existing: &[Component], floor: f64) -> Result<Component, DensityError> {
    let used = |x: &Vec<f64>| {
        existing
            .iter()
            .any(|c| c.gaussian.mean().iter().zip(x).all(|(a, b)| a == b))
    };
    let mut order: Vec<usize> = (0..ws.len()).collect();
    order.sort_by(|&a, &b| ws.normalized()[b].total_cmp(&ws.normalized()[a]).then(a.cmp(&b)));
    let pick = order
        .iter()
        .copied()
        .find(|&j| !used(&ws.samples[j]))
        .unwrap_or(order[0]);
    let (_, _, cov) = weighted_moments(&ws.samples, ws.normalized());
    Ok(Component {
        weight: ws.normalized()[pick].max(EMPTY_COMPONENT),
        gaussian: Gaussian::new(DVector::from_column_slice(&ws.samples[pick]), regularize(&cov, floor))?,
    })
}

/// k-means++ seeding followed by a few Lloyd iterations; covariances come
/// from the resulting hard clusters.
pub fn kmeans_init<R: Rng + ?Sized>(
    ws: &WeightedSamples,
    k: usize,
    floor: f64,
    rng: &mut R,
) -> Result<Gmm, DensityError> {
    if k == 0 || ws.len() < k {
        return Err(DensityError::TooFewSamples {
            needed: k.max(1),
            got: ws.len(),
        });
    }
    check_dims(ws)?;
    let w = ws.normalized();
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let pick = |scores: &[f64], rng: &mut R| -> usize {
        let total: f64 = scores.iter().sum();
        if !(total > 0.0) {
            return 0;
        }
        let mut u = rng.random::<f64>() * total;
        for (i, s) in scores.iter().enumerate() {
            u -= s;
            if u <= 0.0 && *s > 0.0 {
                return i;
            }
        }
        scores.iter().rposition(|s| *s > 0.0).unwrap_or(0)
    };
    let mut centers: Vec<Vec<f64>> = vec![ws.samples[pick(w, rng)].clone()];
    while centers.len() < k {
        let scores: Vec<f64> = ws
            .samples
            .iter()
            .zip(w)
            .map(|(x, wj)| wj * centers.iter().map(|c| dist2(x, c)).fold(f64::INFINITY, f64::min))
            .collect();
        centers.push(ws.samples[pick(&scores, rng)].clone());
    }
    let mut assign = vec![0usize; ws.len()];
    for _ in 0..10 {
        for (a, x) in assign.iter_mut().zip(&ws.samples) {
            *a = (0..k)
                .min_by(|&p, &q| dist2(x, &centers[p]).total_cmp(&dist2(x, &centers[q])))
                .expect("k > 0");
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<usize> = (0..ws.len()).filter(|&j| assign[j] == c && w[j] > 0.0).collect();
            if members.is_empty() {
                continue;
            }
            let total: f64 = members.iter().map(|&j| w[j]).sum();
            for (i, v) in center.iter_mut().enumerate() {
                *v = members.iter().map(|&j| w[j] * ws.samples[j][i]).sum::<f64>() / total;
            }
        }
    }
    let (_, _, global) = weighted_moments(&ws.samples, w);
    let mut comps = Vec::with_capacity(k);
    for (c, center) in centers.into_iter().enumerate() {
        let cw: Vec<f64> = (0..ws.len()).map(|j| if assign[j] == c { w[j] } else { 0.0 }).collect();
        let mass: f64 = cw.iter().sum();
        let cov = if mass > EMPTY_COMPONENT && cw.iter().filter(|v| **v > 0.0).count() > 1 {
            weighted_moments(&ws.samples, &cw).2
        } else {
            global.clone()
        };
        comps.push(Component {
            weight: mass.max(1.0 / ws.len() as f64),
            gaussian: Gaussian::new(DVector::from_vec(center), regularize(&cov, floor))?,
        });
    }
    Gmm::new(comps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn standard_normal_at_mean() {
        let g = Gaussian::standard(2);
        assert_abs_diff_eq!(g.log_pdf(&[0.0, 0.0]).unwrap(), -(TAU.ln()), epsilon = 1e-14);
    }

    #[test]
    fn identical_components_collapse() {
        let g = Gaussian::from_vecs(vec![1.0, -1.0], vec![vec![2.0, 0.3], vec![0.3, 1.0]]).unwrap();
        let m = Gmm::new(vec![
            Component {
                weight: 0.3,
                gaussian: g.clone(),
            },
            Component {
                weight: 0.7,
                gaussian: g.clone(),
            },
        ])
        .unwrap();
        let x = [0.2, 0.5];
        assert_abs_diff_eq!(m.log_pdf(&x).unwrap(), g.log_pdf(&x).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn log_pdf_dimension_mismatch() {
        assert_eq!(
            Gaussian::standard(3).log_pdf(&[0.0]),
            Err(DensityError::DimensionMismatch { expected: 3, got: 1 })
        );
    }

    #[test]
    fn log_pdf_matches_dense_quadratic_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let cov = &a * a.transpose() + DMatrix::identity(3, 3) * 0.5;
        let mean = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let g = Gaussian::new(mean.clone(), cov.clone()).unwrap();
        let x = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
        let diff = &x - &mean;
        let quad = (diff.transpose() * cov.clone().try_inverse().unwrap() * &diff)[(0, 0)];
        let expected = -0.5 * (quad + 3.0 * TAU.ln() + cov.determinant().ln());
        assert_abs_diff_eq!(g.log_pdf(x.as_slice()).unwrap(), expected, epsilon = 1e-10);
    }

    #[test]
    fn uniform_weights_give_sample_moments() {
        let xs = vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, -1.0]];
        let g = fit_gaussian_weighted(&WeightedSamples::uniform(xs), 0.0).unwrap();
        assert_abs_diff_eq!(g.mean()[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g.mean()[1], 1.0, epsilon = 1e-12);
        // Biased covariance: divide by n.
        assert_abs_diff_eq!(g.covariance()[(0, 0)], 8.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g.covariance()[(0, 1)], -4.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn single_weighted_sample_gives_floor() {
        let xs = vec![vec![1.0, 2.0], vec![5.0, 5.0], vec![-3.0, 0.0]];
        let ws = WeightedSamples::from_weights(xs, &[1.0, 0.0, 0.0]).unwrap();
        let g = fit_gaussian_weighted(&ws, 1e-6).unwrap();
        assert_eq!(g.mean().as_slice(), &[1.0, 2.0]);
        assert_abs_diff_eq!(g.covariance()[(0, 0)], 1e-6, epsilon = 1e-18);
        assert_abs_diff_eq!(g.covariance()[(0, 1)], 0.0, epsilon = 1e-18);
    }

    #[test]
    fn weights_one_two_one() {
        // Hand arithmetic: mean = (0 + 2*1 + 4)/4 = 1.5,
        // var = (1*2.25 + 2*0.25 + 1*6.25)/4 = 2.25.
        let xs = vec![vec![0.0], vec![1.0], vec![4.0]];
        let ws = WeightedSamples::from_weights(xs, &[1.0, 2.0, 1.0]).unwrap();
        let g = fit_gaussian_weighted(&ws, 0.0).unwrap();
        assert_abs_diff_eq!(g.mean()[0], 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(g.covariance()[(0, 0)], 2.25, epsilon = 1e-12);
    }

    #[test]
    fn all_zero_weights_rejected() {
        let err = WeightedSamples::from_weights(vec![vec![1.0]], &[0.0]).unwrap_err();
        assert_eq!(err, DensityError::ZeroWeights);
    }

    #[test]
    fn regularize_shifts_spectrum() {
        let z = regularize(&DMatrix::zeros(3, 3), 1e-6);
        assert_eq!(z, DMatrix::identity(3, 3) * 1e-6);
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let before = a.clone().symmetric_eigen().eigenvalues;
        let after = regularize(&a, 0.25).symmetric_eigen().eigenvalues;
        let mut b: Vec<f64> = before.iter().copied().collect();
        let mut c: Vec<f64> = after.iter().copied().collect();
        b.sort_by(f64::total_cmp);
        c.sort_by(f64::total_cmp);
        for (x, y) in b.iter().zip(&c) {
            assert_abs_diff_eq!(y - x, 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn rank_one_covariance_becomes_pd() {
        let xs = vec![vec![0.0, 0.0, 0.0], vec![1.0, 2.0, 3.0]];
        let g = fit_gaussian_weighted(&WeightedSamples::uniform(xs), 1e-6);
        assert!(g.is_ok());
    }

    #[test]
    fn em_single_component_is_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xs: Vec<Vec<f64>> = (0..40)
            .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(0.0..2.0)])
            .collect();
        let w: Vec<f64> = (0..40).map(|_| rng.random_range(0.1..1.0)).collect();
        let ws = WeightedSamples::from_weights(xs, &w).unwrap();
        let direct = fit_gaussian_weighted(&ws, 1e-6).unwrap();
        let fit = fit_gmm_weighted(&ws, 1, &Gmm::single(Gaussian::standard(2)), 5, 1e-6).unwrap();
        let g = &fit.gmm.components()[0].gaussian;
        for i in 0..2 {
            assert_abs_diff_eq!(g.mean()[i], direct.mean()[i], epsilon = 1e-12);
            for j in 0..2 {
                assert_abs_diff_eq!(g.covariance()[(i, j)], direct.covariance()[(i, j)], epsilon = 1e-12);
            }
        }
    }

    fn two_clusters(rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, [f64; 2], [f64; 2]) {
        let a = [0.0, 0.0];
        let b = [5.0, 5.0];
        let mut xs = Vec::new();
        for c in [a, b] {
            for _ in 0..60 {
                let n: Vec<f64> = (0..2).map(|_| rng.sample::<f64, _>(StandardNormal) * 0.3).collect();
                xs.push(vec![c[0] + n[0], c[1] + n[1]]);
            }
        }
        (xs, a, b)
    }

    #[test]
    fn em_recovers_separated_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (xs, _, _) = two_clusters(&mut rng);
        let centroid = |r: std::ops::Range<usize>| -> Vec<f64> {
            (0..2)
                .map(|i| r.clone().map(|j| xs[j][i]).sum::<f64>() / r.len() as f64)
                .collect()
        };
        let ca = centroid(0..60);
        let cb = centroid(60..120);
        let ws = WeightedSamples::uniform(xs.clone());
        let init = kmeans_init(&ws, 2, 1e-6, &mut rng).unwrap();
        let fit = fit_gmm_weighted(&ws, 2, &init, 100, 1e-6).unwrap();
        for target in [ca, cb] {
            let best = fit
                .gmm
                .components()
                .iter()
                .map(|c| (c.gaussian.mean()[0] - target[0]).hypot(c.gaussian.mean()[1] - target[1]))
                .fold(f64::INFINITY, f64::min);
            assert!(best < 0.05, "nearest mean {best} away from centroid");
        }
    }

    #[test]
    fn em_ignores_zero_weight_cluster() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (xs, _, _) = two_clusters(&mut rng);
        let w: Vec<f64> = (0..120).map(|j| if j < 60 { 1.0 } else { 0.0 }).collect();
        let ws = WeightedSamples::from_weights(xs.clone(), &w).unwrap();
        let init = kmeans_init(&ws, 2, 1e-6, &mut rng).unwrap();
        let fit = fit_gmm_weighted(&ws, 2, &init, 200, 1e-6).unwrap();
        for c in fit.gmm.components() {
            assert!(c.gaussian.mean()[0] < 2.0 && c.gaussian.mean()[1] < 2.0);
        }
        let single = fit_gaussian_weighted(&WeightedSamples::uniform(xs[..60].to_vec()), 1e-6).unwrap();
        let k1 = Gmm::single(single).weighted_log_likelihood(&ws);
        assert!(fit.gmm.weighted_log_likelihood(&ws) >= k1 - 1e-9);
    }

    #[test]
    fn serde_round_trip() {
        let g = Gaussian::from_vecs(vec![1.0, 2.0], vec![vec![1.0, 0.2], vec![0.2, 0.5]]).unwrap();
        let m = Gmm::single(g);
        let text = serde_json::to_string(&m).unwrap();
        assert!(text.contains("\"dimension\":2"));
        let back: Gmm = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
    }
}
