//! 1-D Gaussian mixtures fit by expectation-maximization.
//!
//! The model is `f(x) = sum_i w_i N(x; mu_i, var_i)` with `sum w_i = 1`.
//! Fitting alternates the E step (posterior responsibilities, computed in
//! log space with the log-sum-exp trick) and the M step (responsibility
//! weighted moments, variances floored at [`VARIANCE_FLOOR`]), stopping
//! when the largest absolute change across the concatenated parameter
//! vector (weights, means, standard deviations) drops to `epsilon` or
//! `max_iter` is hit.
//!
//! Initialization is seeded k-means over the distinct data values with
//! k-means++ style spreading, so a fit is a pure function of the data and
//! the config. 8-bit data can be fit through its 256-bin histogram
//! ([`fit_em_histogram`]), which matches the per-point path to within
//! about 1e-9; the two differ only in floating-point summation order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::Serialize;
use std::f64::consts::TAU;
use thiserror::Error;

/// Lower bound applied to every variance estimate.
pub const VARIANCE_FLOOR: f64 = 1e-3;

/// A component is declared empty when its responsibility mass falls below
/// this fraction of the effective sample count.
const EMPTY_MASS_FACTOR: f64 = 1e-12;

const KMEANS_MAX_ITER: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

/// A fitted mixture in canonical (ascending mean) order.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    pub components: Vec<GaussianComponent>,
    /// Log-likelihood of the initial parameters, then after every
    /// iteration's update. Non-decreasing up to rounding unless a
    /// component was re-seeded mid-fit.
    pub loglik_trace: Vec<f64>,
    /// Number of EM updates performed.
    pub iterations: usize,
    /// False when the fit stopped at `max_iter` instead of the stop rule.
    pub converged: bool,
    /// Components re-seeded by the empty-component rule (at most once each).
    pub reseeded: Vec<usize>,
}

impl GaussianMixture {
    /// Wraps bare components (no fit history); sorts into canonical order.
    pub fn from_components(mut components: Vec<GaussianComponent>) -> Self {
        sort_canonical(&mut components);
        Self {
            components,
            loglik_trace: Vec::new(),
            iterations: 0,
            converged: false,
            reseeded: Vec::new(),
        }
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    /// Final log-likelihood (NaN for a hand-built mixture with no trace).
    pub fn loglik(&self) -> f64 {
        self.loglik_trace.last().copied().unwrap_or(f64::NAN)
    }

    /// JSON document: `{k, components, loglik, iterations, converged}`.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Doc<'a> {
            k: usize,
            components: &'a [GaussianComponent],
            loglik: f64,
            iterations: usize,
            converged: bool,
        }
        serde_json::to_string_pretty(&Doc {
            k: self.k(),
            components: &self.components,
            loglik: self.loglik(),
            iterations: self.iterations,
            converged: self.converged,
        })
        .expect("mixture serialization cannot fail")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitVariance {
    /// Within-cluster population variance of the k-means clusters.
    #[default]
    WithinCluster,
    /// Unit variance for every component.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    pub k: usize,
    pub epsilon: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub init_variance: InitVariance,
}

impl EmConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            epsilon: 1e-3,
            max_iter: 200,
            seed: 0,
            init_variance: InitVariance::WithinCluster,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum GmmError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("cannot fit a mixture to empty data")]
    EmptyData,
    #[error("need at least {k} distinct values, found {distinct}")]
    TooFewDistinct { k: usize, distinct: usize },
    #[error("component {component} lost all responsibility mass")]
    EmptyComponent { component: usize },
}

/// Normal density. Panics on non-positive variance.
pub fn gaussian_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    assert!(variance > 0.0, "variance must be positive, got {variance}");
    let d = x - mean;
    (-d * d / (2.0 * variance)).exp() / (TAU * variance).sqrt()
}

/// Mixture density `sum_i w_i N(x; mu_i, var_i)`.
pub fn mixture_density(x: f64, m: &GaussianMixture) -> f64 {
    m.components
        .iter()
        .map(|c| c.weight * gaussian_pdf(x, c.mean, c.variance))
        .sum()
}

/// Total log-likelihood `sum_j ln f(x_j)`, evaluated point by point in log
/// space so that far-out points do not underflow to `ln 0`.
pub fn log_likelihood(data: &[f64], m: &GaussianMixture) -> f64 {
    let terms = LogTerms::new(&m.components);
    data.iter().map(|&x| terms.log_density(x)).sum()
}

/// Posterior responsibility table, `n` rows of `k` entries summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    n: usize,
    k: usize,
    values: Vec<f64>,
}

impl Responsibilities {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.values[j * self.k..(j + 1) * self.k]
    }

    pub fn get(&self, j: usize, i: usize) -> f64 {
        self.values[j * self.k + i]
    }
}

/// Per-component log-density terms, hoisted out of the per-point loops.
struct LogTerms {
    ln_weight: Vec<f64>,
    mean: Vec<f64>,
    inv_two_var: Vec<f64>,
    ln_norm: Vec<f64>,
}

impl LogTerms {
    fn new(components: &[GaussianComponent]) -> Self {
        let mut t = Self {
            ln_weight: Vec::with_capacity(components.len()),
            mean: Vec::with_capacity(components.len()),
            inv_two_var: Vec::with_capacity(components.len()),
            ln_norm: Vec::with_capacity(components.len()),
        };
        for c in components {
            assert!(c.variance > 0.0, "variance must be positive");
            t.ln_weight.push(c.weight.ln());
            t.mean.push(c.mean);
            t.inv_two_var.push(1.0 / (2.0 * c.variance));
            t.ln_norm.push(-0.5 * (TAU * c.variance).ln());
        }
        t
    }

    fn k(&self) -> usize {
        self.mean.len()
    }

    /// Writes the responsibilities of `x` into `row`; returns `ln f(x)`.
    #[inline]
    fn responsibilities(&self, x: f64, row: &mut [f64]) -> f64 {
        let mut max = f64::NEG_INFINITY;
        for i in 0..self.k() {
            let d = x - self.mean[i];
            let l = self.ln_weight[i] + self.ln_norm[i] - d * d * self.inv_two_var[i];
            row[i] = l;
            if l > max {
                max = l;
            }
        }
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
        max + sum.ln()
    }

    fn log_density(&self, x: f64) -> f64 {
        let mut max = f64::NEG_INFINITY;
        let mut ls = [0.0f64; 8];
        let mut spill;
        let row: &mut [f64] = if self.k() <= 8 {
            &mut ls[..self.k()]
        } else {
            spill = vec![0.0; self.k()];
            &mut spill
        };
        for i in 0..self.k() {
            let d = x - self.mean[i];
            let l = self.ln_weight[i] + self.ln_norm[i] - d * d * self.inv_two_var[i];
            row[i] = l;
            if l > max {
                max = l;
            }
        }
        let sum: f64 = row.iter().map(|&l| (l - max).exp()).sum();
        max + sum.ln()
    }
}

/// E step: posterior responsibilities of every data point under `m`.
pub fn e_step(data: &[f64], m: &GaussianMixture) -> Responsibilities {
    let terms = LogTerms::new(&m.components);
    let k = terms.k();
    let mut values = vec![0.0; data.len() * k];
    for (j, &x) in data.iter().enumerate() {
        terms.responsibilities(x, &mut values[j * k..(j + 1) * k]);
        debug_assert!(
            (values[j * k..(j + 1) * k].iter().sum::<f64>() - 1.0).abs() < 1e-12,
            "responsibility row must sum to 1"
        );
    }
    Responsibilities {
        n: data.len(),
        k,
        values,
    }
}

/// M step: responsibility-weighted weights, means, and variances.
///
/// `weight_i = mass_i / n`, `mean_i = sum_j r_ij x_j / mass_i`,
/// `var_i = sum_j r_ij (x_j - mean_i)^2 / mass_i` floored at
/// [`VARIANCE_FLOOR`]. A component whose mass is vanishing triggers the
/// empty-component error so the caller can apply its re-seeding rule.
pub fn m_step(data: &[f64], resp: &Responsibilities) -> Result<GaussianMixture, GmmError> {
    assert_eq!(data.len(), resp.n, "responsibility rows must match data");
    let n = data.len() as f64;
    let mut components = Vec::with_capacity(resp.k);
    for i in 0..resp.k {
        let mut mass = 0.0;
        let mut sum = 0.0;
        for (j, &x) in data.iter().enumerate() {
            let r = resp.get(j, i);
            mass += r;
            sum += r * x;
        }
        if mass < EMPTY_MASS_FACTOR * n {
            return Err(GmmError::EmptyComponent { component: i });
        }
        let mean = sum / mass;
        let mut ss = 0.0;
        for (j, &x) in data.iter().enumerate() {
            let d = x - mean;
            ss += resp.get(j, i) * d * d;
        }
        components.push(GaussianComponent {
            weight: mass / n,
            mean,
            variance: (ss / mass).max(VARIANCE_FLOOR),
        });
    }
    Ok(GaussianMixture {
        components,
        loglik_trace: Vec::new(),
        iterations: 0,
        converged: false,
        reseeded: Vec::new(),
    })
}

/// Fits a K-component mixture to raw data.
///
/// Deterministic: the same data and config give a bit-identical mixture.
/// The result is sorted by ascending mean. `converged == false` flags a
/// fit that stopped at `max_iter`.
pub fn fit_em(data: &[f64], cfg: &EmConfig) -> Result<GaussianMixture, GmmError> {
    let weights = vec![1.0; data.len()];
    fit_weighted(data, &weights, cfg)
}

/// Fits a mixture to 8-bit data through its gray-level histogram.
///
/// Equivalent to [`fit_em`] on the expanded pixel list up to summation
/// order (differences around 1e-9 or below), at a fraction of the cost.
pub fn fit_em_histogram(hist: &[u64; 256], cfg: &EmConfig) -> Result<GaussianMixture, GmmError> {
    let mut values = Vec::new();
    let mut weights = Vec::new();
    for (v, &c) in hist.iter().enumerate() {
        if c > 0 {
            values.push(v as f64);
            weights.push(c as f64);
        }
    }
    fit_weighted(&values, &weights, cfg)
}

/// Bayesian information criterion of a fitted mixture on its data:
/// `-2 loglik + v_K ln n` with `v_K = 3K - 1` free parameters in 1-D.
pub fn bic(data: &[f64], m: &GaussianMixture) -> f64 {
    bic_value(log_likelihood(data, m), m.k(), data.len())
}

/// BIC from an already-computed log-likelihood.
pub fn bic_value(loglik: f64, k: usize, n: usize) -> f64 {
    let v_k = (3 * k - 1) as f64;
    -2.0 * loglik + v_k * (n as f64).ln()
}

/// One fit attempt inside [`select_k`].
#[derive(Debug, Clone)]
pub struct KCandidate {
    pub k: usize,
    /// The fitted mixture and its BIC, or why the fit failed.
    pub result: Result<(GaussianMixture, f64), GmmError>,
}

#[derive(Debug, Clone)]
pub struct KSelection {
    pub best_k: usize,
    pub candidates: Vec<KCandidate>,
}

/// Fits every K in `1..=k_max` and picks the BIC minimizer, ties going to
/// the smaller K. A K whose fit fails is skipped but kept in the report.
pub fn select_k(data: &[f64], k_max: usize, cfg: &EmConfig) -> Result<KSelection, GmmError> {
    if k_max == 0 {
        return Err(GmmError::ZeroK);
    }
    let mut candidates = Vec::with_capacity(k_max);
    let mut best: Option<(usize, f64)> = None;
    for k in 1..=k_max {
        let cfg_k = EmConfig { k, ..*cfg };
        let result = fit_em(data, &cfg_k).map(|m| {
            let b = bic(data, &m);
            (m, b)
        });
        if let Ok((_, b)) = &result {
            if best.map_or(true, |(_, bb)| *b < bb) {
                best = Some((k, *b));
            }
        }
        candidates.push(KCandidate { k, result });
    }
    match best {
        Some((best_k, _)) => Ok(KSelection { best_k, candidates }),
        None => Err(candidates
            .into_iter()
            .find_map(|c| c.result.err())
            .expect("no successful fit implies at least one error")),
    }
}

fn sort_canonical(components: &mut [GaussianComponent]) {
    components.sort_by(|a, b| {
        a.mean
            .total_cmp(&b.mean)
            .then(a.weight.total_cmp(&b.weight))
            .then(a.variance.total_cmp(&b.variance))
    });
}

/// Weighted EM core shared by the per-point and histogram paths. Unit
/// weights reproduce the per-point formulation exactly (multiplying a
/// summand by 1.0 is exact).
fn fit_weighted(values: &[f64], weights: &[f64], cfg: &EmConfig) -> Result<GaussianMixture, GmmError> {
    if cfg.k == 0 {
        return Err(GmmError::ZeroK);
    }
    if values.is_empty() {
        return Err(GmmError::EmptyData);
    }
    debug_assert!(values.iter().all(|v| v.is_finite()), "data must be finite");
    let n_eff: f64 = weights.iter().sum();

    let pairs = canonical_pairs(values, weights);
    if pairs.len() < cfg.k {
        return Err(GmmError::TooFewDistinct {
            k: cfg.k,
            distinct: pairs.len(),
        });
    }

    let mut components = kmeans_init(&pairs, cfg);
    sort_canonical(&mut components);

    let k = cfg.k;
    let mut resp = vec![0.0f64; values.len() * k];
    let mut reseeded = vec![false; k];
    let mut reseed_order = Vec::new();
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    'fit: while iterations < cfg.max_iter {
        // E step; also yields the log-likelihood of the current parameters.
        let terms = LogTerms::new(&components);
        let mut ll = 0.0;
        for (j, &x) in values.iter().enumerate() {
            let lp = terms.responsibilities(x, &mut resp[j * k..(j + 1) * k]);
            ll += weights[j] * lp;
        }
        if iterations == 0 {
            trace.push(ll);
        }

        // Empty-component rule: a component with vanishing responsibility
        // mass is re-seeded once at the worst-covered value.
        for i in 0..k {
            let mass: f64 = values
                .iter()
                .enumerate()
                .map(|(j, _)| weights[j] * resp[j * k + i])
                .sum();
            if mass < EMPTY_MASS_FACTOR * n_eff {
                if reseeded[i] {
                    return Err(GmmError::EmptyComponent { component: i });
                }
                reseeded[i] = true;
                reseed_order.push(i);
                let mix = GaussianMixture::from_components(components.clone());
                let worst = values
                    .iter()
                    .enumerate()
                    .min_by(|(_, a), (_, b)| {
                        mixture_density(**a, &mix).total_cmp(&mixture_density(**b, &mix))
                    })
                    .map(|(j, _)| j)
                    .expect("data is non-empty");
                components[i] = GaussianComponent {
                    weight: 1.0 / n_eff,
                    mean: values[worst],
                    variance: 1.0,
                };
                let total: f64 = components.iter().map(|c| c.weight).sum();
                for c in &mut components {
                    c.weight /= total;
                }
                continue 'fit;
            }
        }

        // M step on the weighted points.
        let mut next = Vec::with_capacity(k);
        for i in 0..k {
            let mut mass = 0.0;
            let mut sum = 0.0;
            for (j, &x) in values.iter().enumerate() {
                let r = weights[j] * resp[j * k + i];
                mass += r;
                sum += r * x;
            }
            let mean = sum / mass;
            let mut ss = 0.0;
            for (j, &x) in values.iter().enumerate() {
                let d = x - mean;
                ss += weights[j] * resp[j * k + i] * d * d;
            }
            next.push(GaussianComponent {
                weight: mass / n_eff,
                mean,
                variance: (ss / mass).max(VARIANCE_FLOOR),
            });
        }

        let mut delta = 0.0f64;
        for (old, new) in components.iter().zip(&next) {
            delta = delta
                .max((new.weight - old.weight).abs())
                .max((new.mean - old.mean).abs())
                .max((new.variance.sqrt() - old.variance.sqrt()).abs());
        }
        components = next;
        iterations += 1;

        let terms = LogTerms::new(&components);
        let ll_new: f64 = values
            .iter()
            .enumerate()
            .map(|(j, &x)| weights[j] * terms.log_density(x))
            .sum();
        trace.push(ll_new);

        if delta <= cfg.epsilon {
            converged = true;
            break;
        }
    }

    sort_canonical(&mut components);
    Ok(GaussianMixture {
        components,
        loglik_trace: trace,
        iterations,
        converged,
        reseeded: reseed_order,
    })
}

/// Collapses a weighted sample into sorted distinct (value, weight) pairs.
/// Both fit paths initialize from this form, so they draw identical
/// k-means seeds for the same data multiset.
fn canonical_pairs(values: &[f64], weights: &[f64]) -> Vec<(f64, f64)> {
    assert_eq!(values.len(), weights.len());
    let mut pairs: Vec<(f64, f64)> = values.iter().copied().zip(weights.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(pairs.len());
    for (v, w) in pairs {
        match merged.last_mut() {
            Some(last) if last.0 == v => last.1 += w,
            _ => merged.push((v, w)),
        }
    }
    merged
}

/// Seeded k-means over distinct weighted values: k-means++ spreading,
/// then Lloyd iterations. Component weights are cluster mass fractions;
/// variances are within-cluster population variances (or 1.0 under
/// [`InitVariance::Identity`]), floored.
fn kmeans_init(pairs: &[(f64, f64)], cfg: &EmConfig) -> Vec<GaussianComponent> {
    let k = cfg.k;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let total_mass: f64 = pairs.iter().map(|p| p.1).sum();

    // k-means++ seeding: first center mass-weighted, the rest by weighted
    // squared distance to the nearest chosen center.
    let mut centers = Vec::with_capacity(k);
    centers.push(pairs[weighted_pick(&mut rng, pairs.iter().map(|p| p.1), total_mass)].0);
    let mut d2: Vec<f64> = pairs
        .iter()
        .map(|&(v, _)| (v - centers[0]) * (v - centers[0]))
        .collect();
    while centers.len() < k {
        let total: f64 = pairs.iter().zip(&d2).map(|(p, d)| p.1 * d).sum();
        let idx = weighted_pick(&mut rng, pairs.iter().zip(&d2).map(|(p, d)| p.1 * d), total);
        let c = pairs[idx].0;
        centers.push(c);
        for (i, &(v, _)) in pairs.iter().enumerate() {
            d2[i] = d2[i].min((v - c) * (v - c));
        }
    }

    // Lloyd iterations with nearest-center assignment, ties to the lower
    // center index. An emptied cluster is re-seeded at the farthest value.
    let mut assign = vec![0usize; pairs.len()];
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (j, &(v, _)) in pairs.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (i, &c) in centers.iter().enumerate() {
                let d = (v - c) * (v - c);
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            if assign[j] != best {
                assign[j] = best;
                changed = true;
            }
        }
        for i in 0..k {
            let mut mass = 0.0;
            let mut sum = 0.0;
            for (j, &(v, w)) in pairs.iter().enumerate() {
                if assign[j] == i {
                    mass += w;
                    sum += w * v;
                }
            }
            if mass > 0.0 {
                centers[i] = sum / mass;
            } else {
                let far = pairs
                    .iter()
                    .enumerate()
                    .max_by(|(ja, (va, _)), (jb, (vb, _))| {
                        let da = (va - centers[assign[*ja]]).abs();
                        let db = (vb - centers[assign[*jb]]).abs();
                        da.total_cmp(&db)
                    })
                    .map(|(j, _)| j)
                    .expect("pairs are non-empty");
                centers[i] = pairs[far].0;
                assign[far] = i;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut components = Vec::with_capacity(k);
    for i in 0..k {
        let mut mass = 0.0;
        let mut sum = 0.0;
        for (j, &(v, w)) in pairs.iter().enumerate() {
            if assign[j] == i {
                mass += w;
                sum += w * v;
            }
        }
        let mean = if mass > 0.0 { sum / mass } else { centers[i] };
        let variance = match cfg.init_variance {
            InitVariance::Identity => 1.0,
            InitVariance::WithinCluster => {
                let mut ss = 0.0;
                for (j, &(v, w)) in pairs.iter().enumerate() {
                    if assign[j] == i {
                        let d = v - mean;
                        ss += w * d * d;
                    }
                }
                if mass > 0.0 {
                    (ss / mass).max(VARIANCE_FLOOR)
                } else {
                    1.0
                }
            }
        };
        components.push(GaussianComponent {
            weight: (mass / total_mass).max(f64::MIN_POSITIVE),
            mean,
            variance,
        });
    }
    components
}

/// Index of a mass-weighted draw; `masses` must be non-negative with the
/// given positive total.
fn weighted_pick(
    rng: &mut ChaCha12Rng,
    masses: impl Iterator<Item = f64> + Clone,
    total: f64,
) -> usize {
    debug_assert!(total > 0.0);
    let u = rng.random::<f64>() * total;
    let mut cum = 0.0;
    let mut last = 0;
    for (i, m) in masses.clone().enumerate() {
        cum += m;
        last = i;
        if u < cum && m > 0.0 {
            return i;
        }
    }
    // Rounding pushed the cumulative sum below `u`: take the last
    // positive-mass index.
    for (i, m) in masses.enumerate().take(last + 1) {
        if m > 0.0 {
            last = i;
        }
    }
    last
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn two_bump(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let a = Normal::new(50.0, 10.0).unwrap();
        let b = Normal::new(180.0, 12.0).unwrap();
        (0..n)
            .map(|i| {
                if i % 10 < 4 {
                    a.sample(&mut rng)
                } else {
                    b.sample(&mut rng)
                }
            })
            .collect()
    }

    #[test]
    fn pdf_reference_values() {
        assert_abs_diff_eq!(gaussian_pdf(0.0, 0.0, 1.0), 0.3989422804014327, epsilon = 1e-15);
        assert_abs_diff_eq!(gaussian_pdf(1.0, 0.0, 1.0), 0.24197072451914337, epsilon = 1e-15);
        assert_abs_diff_eq!(
            gaussian_pdf(5.0, 5.0, 4.0),
            0.3989422804014327 / 2.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn pdf_is_symmetric() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        for _ in 0..100 {
            let mu: f64 = rng.random::<f64>() * 100.0;
            let d: f64 = rng.random::<f64>() * 30.0;
            let v: f64 = 0.5 + rng.random::<f64>() * 50.0;
            assert_relative_eq!(
                gaussian_pdf(mu + d, mu, v),
                gaussian_pdf(mu - d, mu, v),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    #[should_panic(expected = "variance must be positive")]
    fn pdf_rejects_nonpositive_variance() {
        gaussian_pdf(0.0, 0.0, 0.0);
    }

    #[test]
    fn density_of_identical_components_collapses() {
        let c = GaussianComponent {
            weight: 0.5,
            mean: 10.0,
            variance: 4.0,
        };
        let m = GaussianMixture::from_components(vec![c, c]);
        assert_eq!(mixture_density(7.0, &m), gaussian_pdf(7.0, 10.0, 4.0));
    }

    #[test]
    fn loglik_reference_and_oracle() {
        let m = GaussianMixture::from_components(vec![GaussianComponent {
            weight: 1.0,
            mean: 0.0,
            variance: 1.0,
        }]);
        assert_abs_diff_eq!(
            log_likelihood(&[0.0], &m),
            -0.9189385332046727,
            epsilon = 1e-15
        );

        let m = GaussianMixture::from_components(vec![
            GaussianComponent {
                weight: 0.3,
                mean: 20.0,
                variance: 25.0,
            },
            GaussianComponent {
                weight: 0.7,
                mean: 60.0,
                variance: 100.0,
            },
        ]);
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..100).map(|_| rng.random::<f64>() * 90.0).collect();
        let brute: f64 = data.iter().map(|&x| mixture_density(x, &m).ln()).sum();
        assert_relative_eq!(log_likelihood(&data, &m), brute, max_relative = 1e-12);
    }

    #[test]
    fn e_step_equidistant_splits_evenly() {
        let m = GaussianMixture::from_components(vec![
            GaussianComponent {
                weight: 0.5,
                mean: 0.0,
                variance: 9.0,
            },
            GaussianComponent {
                weight: 0.5,
                mean: 10.0,
                variance: 9.0,
            },
        ]);
        let r = e_step(&[5.0], &m);
        assert_abs_diff_eq!(r.get(0, 0), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(r.get(0, 1), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn e_step_matches_direct_density_oracle() {
        let m = GaussianMixture::from_components(vec![
            GaussianComponent {
                weight: 0.2,
                mean: 10.0,
                variance: 16.0,
            },
            GaussianComponent {
                weight: 0.5,
                mean: 40.0,
                variance: 49.0,
            },
            GaussianComponent {
                weight: 0.3,
                mean: 80.0,
                variance: 9.0,
            },
        ]);
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let data: Vec<f64> = (0..50).map(|_| rng.random::<f64>() * 100.0).collect();
        let r = e_step(&data, &m);
        for (j, &x) in data.iter().enumerate() {
            let dens: Vec<f64> = m
                .components
                .iter()
                .map(|c| c.weight * gaussian_pdf(x, c.mean, c.variance))
                .collect();
            let total: f64 = dens.iter().sum();
            for i in 0..3 {
                assert_relative_eq!(r.get(j, i), dens[i] / total, max_relative = 1e-12);
            }
            assert_abs_diff_eq!(r.row(j).iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn m_step_hard_split_reference() {
        let m = GaussianMixture::from_components(vec![
            GaussianComponent {
                weight: 0.5,
                mean: 1.0,
                variance: 1.0,
            },
            GaussianComponent {
                weight: 0.5,
                mean: 9.0,
                variance: 1.0,
            },
        ]);
        let data = [0.0, 10.0];
        let r = e_step(&data, &m);
        let out = m_step(&data, &r).unwrap();
        assert_abs_diff_eq!(out.components[0].mean, 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(out.components[1].mean, 10.0, epsilon = 1e-6);
        assert_abs_diff_eq!(out.components[0].weight, 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(out.components[1].weight, 0.5, epsilon = 1e-9);
        assert_eq!(out.components[0].variance, VARIANCE_FLOOR);
        assert_eq!(out.components[1].variance, VARIANCE_FLOOR);
    }

    #[test]
    fn m_step_matches_double_loop_oracle() {
        let m = GaussianMixture::from_components(vec![
            GaussianComponent {
                weight: 0.4,
                mean: 30.0,
                variance: 100.0,
            },
            GaussianComponent {
                weight: 0.6,
                mean: 70.0,
                variance: 64.0,
            },
        ]);
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let data: Vec<f64> = (0..50).map(|_| rng.random::<f64>() * 100.0).collect();
        let r = e_step(&data, &m);
        let out = m_step(&data, &r).unwrap();
        for i in 0..2 {
            let mut mass = 0.0;
            let mut sum = 0.0;
            for (j, &x) in data.iter().enumerate() {
                mass += r.get(j, i);
                sum += r.get(j, i) * x;
            }
            let mean = sum / mass;
            let mut ss = 0.0;
            for (j, &x) in data.iter().enumerate() {
                ss += r.get(j, i) * (x - mean) * (x - mean);
            }
            assert_relative_eq!(out.components[i].weight, mass / 50.0, max_relative = 1e-12);
            assert_relative_eq!(out.components[i].mean, mean, max_relative = 1e-12);
            assert_relative_eq!(
                out.components[i].variance,
                (ss / mass).max(VARIANCE_FLOOR),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn m_step_flags_empty_component() {
        let data = [1.0, 2.0, 3.0];
        let resp = Responsibilities {
            n: 3,
            k: 2,
            values: vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0],
        };
        assert_eq!(
            m_step(&data, &resp).unwrap_err(),
            GmmError::EmptyComponent { component: 1 }
        );
    }

    #[test]
    fn fit_recovers_point_masses() {
        let mut data = vec![50.0; 10];
        data.extend(vec![200.0; 10]);
        let m = fit_em(&data, &EmConfig::new(2)).unwrap();
        assert_abs_diff_eq!(m.components[0].mean, 50.0, epsilon = 1e-6);
        assert_abs_diff_eq!(m.components[1].mean, 200.0, epsilon = 1e-6);
        assert_eq!(m.components[0].variance, VARIANCE_FLOOR);
        assert_eq!(m.components[1].variance, VARIANCE_FLOOR);
        assert_abs_diff_eq!(m.components[0].weight, 0.5, epsilon = 1e-12);
        assert!(m.converged);
    }

    #[test]
    fn fit_k1_is_closed_form() {
        let data = [1.0, 2.0, 3.0, 4.0];
        let m = fit_em(&data, &EmConfig::new(1)).unwrap();
        assert_abs_diff_eq!(m.components[0].mean, 2.5, epsilon = 1e-12);
        assert_abs_diff_eq!(m.components[0].variance, 1.25, epsilon = 1e-12);
        assert_eq!(m.components[0].weight, 1.0);
        assert_eq!(m.iterations, 1);
        assert!(m.converged);
    }

    #[test]
    fn fit_requires_k_distinct_values() {
        let data = vec![5.0; 100];
        assert_eq!(
            fit_em(&data, &EmConfig::new(2)).unwrap_err(),
            GmmError::TooFewDistinct { k: 2, distinct: 1 }
        );
        assert_eq!(fit_em(&[], &EmConfig::new(1)).unwrap_err(), GmmError::EmptyData);
        assert_eq!(fit_em(&[1.0], &EmConfig::new(0)).unwrap_err(), GmmError::ZeroK);
    }

    #[test]
    fn fit_is_deterministic_and_canonically_ordered() {
        let data = two_bump(4, 2000);
        let cfg = EmConfig::new(2).with_seed(9);
        let a = fit_em(&data, &cfg).unwrap();
        let b = fit_em(&data, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.components[0].mean < a.components[1].mean);
    }

    #[test]
    fn loglik_trace_ascends() {
        let data = two_bump(2, 3000);
        let m = fit_em(&data, &EmConfig::new(2)).unwrap();
        assert!(m.converged);
        assert_eq!(m.loglik_trace.len(), m.iterations + 1);
        for w in m.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "trace dipped: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn identity_init_changes_start_not_recovery() {
        let data = two_bump(6, 3000);
        let mut cfg = EmConfig::new(2);
        cfg.init_variance = InitVariance::Identity;
        let m = fit_em(&data, &cfg).unwrap();
        assert_abs_diff_eq!(m.components[0].mean, 50.0, epsilon = 2.0);
        assert_abs_diff_eq!(m.components[1].mean, 180.0, epsilon = 2.0);
    }

    #[test]
    fn histogram_path_tracks_per_point_path() {
        for seed in 0..8u64 {
            let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0xabcd);
            let pixels: Vec<u8> = (0..400)
                .map(|i| {
                    if i % 2 == 0 {
                        (60.0 + 15.0 * rng.random::<f64>()) as u8
                    } else {
                        (170.0 + 20.0 * rng.random::<f64>()) as u8
                    }
                })
                .collect();
            let mut hist = [0u64; 256];
            for &p in &pixels {
                hist[p as usize] += 1;
            }
            let data: Vec<f64> = pixels.iter().map(|&p| f64::from(p)).collect();
            let cfg = EmConfig::new(2).with_seed(seed);
            let a = fit_em(&data, &cfg).unwrap();
            let b = fit_em_histogram(&hist, &cfg).unwrap();
            for (ca, cb) in a.components.iter().zip(&b.components) {
                assert_abs_diff_eq!(ca.weight, cb.weight, epsilon = 1e-9);
                assert_abs_diff_eq!(ca.mean, cb.mean, epsilon = 1e-9);
                assert_abs_diff_eq!(ca.variance, cb.variance, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn bic_reference_value() {
        assert_abs_diff_eq!(bic_value(-100.0, 2, 100), 223.02585092994046, epsilon = 1e-10);
        assert_abs_diff_eq!(bic_value(-50.0, 1, 10), 100.0 + 2.0 * 10f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn select_k_records_failures_and_prefers_small_k() {
        let mut data = vec![10.0; 50];
        data.extend(vec![90.0; 50]);
        let sel = select_k(&data, 4, &EmConfig::new(1)).unwrap();
        assert_eq!(sel.best_k, 2);
        assert_eq!(sel.candidates.len(), 4);
        assert!(sel.candidates[2].result.is_err());
        assert!(sel.candidates[3].result.is_err());

        let mut rng = ChaCha12Rng::seed_from_u64(15);
        let n = Normal::new(100.0, 15.0).unwrap();
        let single: Vec<f64> = (0..4000).map(|_| n.sample(&mut rng)).collect();
        let sel = select_k(&single, 3, &EmConfig::new(1)).unwrap();
        assert_eq!(sel.best_k, 1);
    }

    #[test]
    fn mixture_json_shape() {
        let data = two_bump(1, 1000);
        let m = fit_em(&data, &EmConfig::new(2)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        assert_eq!(v["k"], 2);
        assert_eq!(v["components"].as_array().unwrap().len(), 2);
        assert!(v["components"][0]["weight"].is_f64());
        assert!(v["components"][0]["mean"].is_f64());
        assert!(v["components"][0]["variance"].is_f64());
        assert!(v["loglik"].is_f64());
        assert!(v["iterations"].is_u64());
        assert!(v["converged"].is_boolean());
    }
}
