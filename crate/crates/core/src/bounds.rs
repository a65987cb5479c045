//! Sample-complexity and model-distance calculators.
//!
//! Order-level expressions (the known-tuple schedule and the simulation
//! constants) are evaluated with every hidden constant set to 1. They are
//! configuration guidance, not guarantees.

use std::f64::consts::PI;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{CorlError, Result};
use crate::types::{DynamicsParams, Gaussian};

/// Denominator used by the variance sample bound.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaDenominator {
    /// `eps - eps^2`, as published.
    #[default]
    AsPrinted,
    /// `eps^2`, the dimensionally consistent reading.
    Squared,
}

/// Inputs to the sample-complexity calculators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PacConfig {
    pub epsilon: f64,
    pub delta: f64,
    pub n_dim: usize,
    pub b_beta: f64,
    pub b_sigma: f64,
    pub sigma_min: f64,
    /// Good-sample radius `B`.
    pub b_good: f64,
    pub gamma: f64,
    #[serde(default)]
    pub sigma_denominator: SigmaDenominator,
}

impl Default for PacConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            delta: 0.1,
            n_dim: 2,
            b_beta: 1.0,
            b_sigma: 0.5,
            sigma_min: 0.05,
            b_good: 6.0,
            gamma: 0.99,
            sigma_denominator: SigmaDenominator::AsPrinted,
        }
    }
}

impl PacConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CorlError::Config(m.to_string()));
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("delta must lie in (0, 1)");
        }
        if self.n_dim == 0 {
            return bad("n_dim must be positive");
        }
        if !(self.b_beta > 0.0 && self.b_sigma > 0.0 && self.sigma_min > 0.0) {
            return bad("b_beta, b_sigma and sigma_min must be positive");
        }
        if self.sigma_min > self.b_sigma {
            return bad("sigma_min must not exceed b_sigma");
        }
        if !(self.b_good > self.b_beta) {
            return Err(CorlError::RadiusTooSmall {
                b: self.b_good,
                min_radius: min_good_radius(self),
            });
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Rounds a sample count up, treating values within 1e-9 (relative) of an
/// integer as that integer so `ceil(2.0000000000000004)` stays 2.
pub fn ceil_count(x: f64) -> u64 {
    if !x.is_finite() {
        return u64::MAX;
    }
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.abs().max(1.0) {
        r.max(0.0) as u64
    } else {
        x.ceil().max(0.0) as u64
    }
}

/// Upper bound on the variational distance between two diagonal Gaussians
/// with offsets `beta_1`, `beta_2`:
///
/// `1 - (prod_i min(s1_i^2, s2_i^2) / s2_i^2)^0.5 + |beta_2 - beta_1|_2 / (sqrt(2 pi) sigma_min)`
///
/// where the pair is ordered so that `|Sigma_1| <= |Sigma_2|`. The result is
/// not capped at 1.
pub fn dvar_bound(p1: &DynamicsParams, p2: &DynamicsParams, sigma_min: f64) -> Result<f64> {
    if p1.dim() != p2.dim() {
        return Err(CorlError::DimensionMismatch {
            expected: p1.dim(),
            got: p2.dim(),
        });
    }
    if !p1.is_diagonal() || !p2.is_diagonal() {
        return Err(CorlError::UnsupportedCovariance(
            "the distance bound needs diagonal covariances".into(),
        ));
    }
    if !(sigma_min > 0.0) {
        return Err(CorlError::Config("sigma_min must be positive".into()));
    }
    let (v1, v2) = (p1.variances(), p2.variances());
    if v1.iter().chain(&v2).any(|&v| !(v > 0.0)) {
        return Err(CorlError::InvalidCovariance("zero variance".into()));
    }
    let log_det1: f64 = v1.iter().map(|v| v.ln()).sum();
    let log_det2: f64 = v2.iter().map(|v| v.ln()).sum();
    let (small, large) = if log_det1 <= log_det2 { (&v1, &v2) } else { (&v2, &v1) };
    let w_int: f64 = small
        .iter()
        .zip(large.iter())
        .map(|(a, b)| a.min(*b) / b)
        .product::<f64>()
        .sqrt();
    let shift = (&p2.beta - &p1.beta).norm();
    let bound = 1.0 - w_int + shift / ((2.0 * PI).sqrt() * sigma_min);
    Ok(bound.max(0.0))
}

/// Numerically integrated variational distance `1/2 * int |N_1 - N_2|`.
///
/// One dimension uses adaptive Simpson quadrature over a window of eight
/// standard deviations around both means; two and three dimensions use a
/// Halton quasi-Monte-Carlo estimate of `E_p[(1 - q/p)^+]`, averaged over
/// both orderings.
pub fn dvar_numeric(p1: &DynamicsParams, p2: &DynamicsParams) -> Result<f64> {
    let n = p1.dim();
    if p2.dim() != n {
        return Err(CorlError::DimensionMismatch {
            expected: n,
            got: p2.dim(),
        });
    }
    match n {
        1 => Ok(dvar_quadrature_1d(p1, p2)),
        2 | 3 => {
            let g1 = Gaussian::new(&p1.sigma)?;
            let g2 = Gaussian::new(&p2.sigma)?;
            let a = qmc_positive_part(p1, &g1, p2, &g2, 1 << 16)?;
            let b = qmc_positive_part(p2, &g2, p1, &g1, 1 << 16)?;
            Ok((0.5 * (a + b)).clamp(0.0, 1.0))
        }
        _ => Err(CorlError::UnsupportedDimension(n)),
    }
}

fn normal_1d(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean) * (x - mean) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
}

fn dvar_quadrature_1d(p1: &DynamicsParams, p2: &DynamicsParams) -> f64 {
    let (m1, v1) = (p1.beta[0], p1.sigma[(0, 0)]);
    let (m2, v2) = (p2.beta[0], p2.sigma[(0, 0)]);
    let lo = (m1 - 8.0 * v1.sqrt()).min(m2 - 8.0 * v2.sqrt());
    let hi = (m1 + 8.0 * v1.sqrt()).max(m2 + 8.0 * v2.sqrt());
    let f = |x: f64| 0.5 * (normal_1d(x, m1, v1) - normal_1d(x, m2, v2)).abs();
    // split into panels so narrow features are not skipped by the first estimate
    let panels = 64;
    let h = (hi - lo) / panels as f64;
    (0..panels)
        .map(|k| {
            let a = lo + k as f64 * h;
            adaptive_simpson(&f, a, a + h, 1e-10, 40)
        })
        .sum::<f64>()
        .clamp(0.0, 1.0)
}

fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let c = 0.5 * (a + b);
    let (fa, fb, fc) = (f(a), f(b), f(c));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fc + fb);
    simpson_step(f, a, b, fa, fb, fc, whole, tol, depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
    fc: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let c = 0.5 * (a + b);
    let (d, e) = (0.5 * (a + c), 0.5 * (c + b));
    let (fd, fe) = (f(d), f(e));
    let left = (c - a) / 6.0 * (fa + 4.0 * fd + fc);
    let right = (b - c) / 6.0 * (fc + 4.0 * fe + fb);
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * tol {
        return left + right + diff / 15.0;
    }
    simpson_step(f, a, c, fa, fc, fd, left, 0.5 * tol, depth - 1)
        + simpson_step(f, c, b, fc, fb, fe, right, 0.5 * tol, depth - 1)
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

const HALTON_BASES: [u64; 3] = [2, 3, 5];

fn qmc_positive_part(
    p: &DynamicsParams,
    gp: &Gaussian,
    q: &DynamicsParams,
    gq: &Gaussian,
    points: u64,
) -> Result<f64> {
    let n = p.dim();
    let l = p
        .sigma
        .clone()
        .cholesky()
        .ok_or_else(|| CorlError::InvalidCovariance("covariance is singular".into()))?
        .l();
    let std = Normal::standard();
    let mut acc = 0.0;
    let mut z = DVector::zeros(n);
    let mut dp = vec![0.0; n];
    let mut dq = vec![0.0; n];
    for i in 1..=points {
        for (k, base) in HALTON_BASES.iter().take(n).enumerate() {
            z[k] = std.inverse_cdf(radical_inverse(i, *base));
        }
        let x = &p.beta + &l * &z;
        for k in 0..n {
            dp[k] = x[k] - p.beta[k];
            dq[k] = x[k] - q.beta[k];
        }
        let log_ratio = gq.log_density_of_diff(&dq) - gp.log_density_of_diff(&dp);
        acc += (1.0 - log_ratio.exp()).max(0.0);
    }
    Ok(acc / points as f64)
}

/// Good samples needed for the offset estimate:
/// `ceil(2 n B^2 / eps^2 * ln(6 n / delta))`.
pub fn t_beta(cfg: &PacConfig) -> Result<u64> {
    check_positive(cfg)?;
    let n = cfg.n_dim as f64;
    let b = cfg.b_good;
    Ok(ceil_count(
        2.0 * n * b * b / (cfg.epsilon * cfg.epsilon) * (6.0 * n / cfg.delta).ln(),
    ))
}

/// Good samples needed for the variance estimate:
/// `ceil(8 B^4 / (eps - eps^2) * ln(6 n / delta))` (or `eps^2` in the
/// denominator with [`SigmaDenominator::Squared`]).
pub fn t_sigma(cfg: &PacConfig) -> Result<u64> {
    check_positive(cfg)?;
    let eps = cfg.epsilon;
    let denom = match cfg.sigma_denominator {
        SigmaDenominator::AsPrinted => {
            if eps >= 1.0 {
                return Err(CorlError::InvalidEpsilon(eps));
            }
            eps - eps * eps
        }
        SigmaDenominator::Squared => eps * eps,
    };
    let n = cfg.n_dim as f64;
    Ok(ceil_count(
        8.0 * cfg.b_good.powi(4) / denom * (6.0 * n / cfg.delta).ln(),
    ))
}

fn check_positive(cfg: &PacConfig) -> Result<()> {
    if !(cfg.epsilon > 0.0 && cfg.delta > 0.0 && cfg.b_good > 0.0 && cfg.n_dim > 0) {
        return Err(CorlError::Config(
            "epsilon, delta, B and n_dim must be positive".into(),
        ));
    }
    Ok(())
}

/// Per-coordinate bad-sample probability bound
/// `p0 = sqrt(8/pi) * B_sigma^3 / (B - B_beta)^3`.
pub fn bad_sample_probability(cfg: &PacConfig) -> Result<f64> {
    if !(cfg.b_good > cfg.b_beta) {
        return Err(CorlError::RadiusTooSmall {
            b: cfg.b_good,
            min_radius: min_good_radius(cfg),
        });
    }
    Ok((8.0 / PI).sqrt() * cfg.b_sigma.powi(3) / (cfg.b_good - cfg.b_beta).powi(3))
}

/// Samples to observe before `t0` good ones arrive:
/// `ceil(delta * t0 / (delta - 3 n p0))`.
pub fn total_samples_from(t0: u64, delta: f64, n_dim: usize, p0: f64) -> Option<u64> {
    let slack = delta - 3.0 * n_dim as f64 * p0;
    if !(slack > 0.0) {
        return None;
    }
    Some(ceil_count(delta * t0 as f64 / slack))
}

/// Total samples for one tuple with `T0 = max(T_beta, T_sigma)`.
pub fn total_samples(cfg: &PacConfig) -> Result<u64> {
    let p0 = bad_sample_probability(cfg)?;
    let t0 = t_beta(cfg)?.max(t_sigma(cfg)?);
    total_samples_from(t0, cfg.delta, cfg.n_dim, p0).ok_or(CorlError::RadiusTooSmall {
        b: cfg.b_good,
        min_radius: min_good_radius(cfg),
    })
}

/// Smallest good-sample radius for which `delta > 3 n p0`:
/// `B_beta + (72 n^2 / (pi delta^2))^(1/6) * B_sigma`.
pub fn min_good_radius(cfg: &PacConfig) -> f64 {
    let n = cfg.n_dim as f64;
    cfg.b_beta + (72.0 * n * n / (PI * cfg.delta * cfg.delta)).powf(1.0 / 6.0) * cfg.b_sigma
}

/// Known-tuple threshold `N_dim^3 B^4 gamma^2 / (sigma_min^4 (1-gamma)^4 eps^2)`
/// with unit constant, never below 2.
pub fn n_at_schedule(cfg: &PacConfig) -> Result<u64> {
    check_positive(cfg)?;
    if !(0.0..1.0).contains(&cfg.gamma) || !(cfg.sigma_min > 0.0) {
        return Err(CorlError::Config(
            "schedule needs gamma in [0, 1) and sigma_min > 0".into(),
        ));
    }
    let n = cfg.n_dim as f64;
    let g = cfg.gamma;
    let raw = n.powi(3) * cfg.b_good.powi(4) * g * g
        / (cfg.sigma_min.powi(4) * (1.0 - g).powi(4) * cfg.epsilon * cfg.epsilon);
    Ok(ceil_count(raw).max(2))
}

/// Tolerances for model and planning error, unit constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationConstants {
    /// Offset tolerance, `(1-gamma)^2 eps / gamma`.
    pub f1: f64,
    /// Covariance-determinant tolerance, `eps (1-gamma)^2 / gamma`.
    pub f2: f64,
    /// Planning tolerance, `eps (1-gamma) / gamma`.
    pub f3: f64,
}

pub fn simulation_lemma_constants(epsilon: f64, gamma: f64) -> Result<SimulationConstants> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(CorlError::Config(format!(
            "gamma must lie in (0, 1), got {gamma}"
        )));
    }
    let om = 1.0 - gamma;
    Ok(SimulationConstants {
        f1: om * om * epsilon / gamma,
        f2: epsilon * om * om / gamma,
        f3: epsilon * om / gamma,
    })
}

/// Keeps offsets whose max-norm is strictly below `b`.
pub fn good_sample_filter(samples: &[Vec<f64>], b: f64) -> Vec<Vec<f64>> {
    samples
        .iter()
        .filter(|d| d.iter().all(|x| x.abs() < b))
        .cloned()
        .collect()
}

/// Fraction of `draws` offsets from `params` with max-norm above `b`.
pub fn empirical_bad_fraction(params: &DynamicsParams, b: f64, draws: usize, seed: u64) -> Result<f64> {
    let n = params.dim();
    let l = params
        .sigma
        .clone()
        .cholesky()
        .ok_or_else(|| CorlError::InvalidCovariance("covariance is singular".into()))?
        .l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0usize;
    let mut z = DVector::zeros(n);
    for _ in 0..draws {
        for k in 0..n {
            z[k] = StandardNormal.sample(&mut rng);
        }
        let d = &params.beta + &l * &z;
        if d.iter().any(|x| x.abs() > b) {
            bad += 1;
        }
    }
    Ok(bad as f64 / draws.max(1) as f64)
}

/// All calculator outputs for one configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub config: PacConfig,
    pub t_beta: u64,
    pub t_sigma: u64,
    pub p0: f64,
    pub min_good_radius: f64,
    pub total_samples: u64,
    pub n_at: u64,
    pub constants: SimulationConstants,
}

pub fn bounds_report(cfg: &PacConfig) -> Result<BoundsReport> {
    cfg.validate()?;
    Ok(BoundsReport {
        config: cfg.clone(),
        t_beta: t_beta(cfg)?,
        t_sigma: t_sigma(cfg)?,
        p0: bad_sample_probability(cfg)?,
        min_good_radius: min_good_radius(cfg),
        total_samples: total_samples(cfg)?,
        n_at: n_at_schedule(cfg)?,
        constants: simulation_lemma_constants(cfg.epsilon, cfg.gamma)?,
    })
}

/// One evaluated parameter pair of a bound-validation sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairCheck {
    pub dims: usize,
    pub beta1: Vec<f64>,
    pub var1: Vec<f64>,
    pub beta2: Vec<f64>,
    pub var2: Vec<f64>,
    pub numeric: f64,
    pub bound: f64,
}

impl PairCheck {
    pub fn violates(&self, tol: f64) -> bool {
        self.numeric > self.bound + tol
    }
}

/// Outcome of checking the distance bound against quadrature.
#[derive(Clone, Debug, Default, Serialize)]
pub struct BoundValidation {
    pub checked: usize,
    /// Pairs with bound 0, where the ratio is undefined.
    pub skipped_degenerate: usize,
    pub max_ratio: f64,
    pub max_excess: f64,
    pub violations: Vec<PairCheck>,
}

impl BoundValidation {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Random diagonal pair with variances in `[0.25, 4]` and offset gap at most 1.
pub fn random_diagonal_pair(dims: usize, rng: &mut impl Rng) -> (DynamicsParams, DynamicsParams) {
    let var = |rng: &mut dyn rand::RngCore| -> Vec<f64> {
        (0..dims).map(|_| rng.random_range(0.25..=4.0)).collect()
    };
    let beta1: Vec<f64> = (0..dims).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let mut dir: Vec<f64> = (0..dims).map(|_| StandardNormal.sample(rng)).collect();
    let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    let radius: f64 = rng.random_range(0.0..=1.0);
    for x in &mut dir {
        *x *= radius / norm;
    }
    let beta2: Vec<f64> = beta1.iter().zip(&dir).map(|(a, d)| a + d).collect();
    let v1 = var(rng);
    let v2 = var(rng);
    (
        DynamicsParams::diagonal(beta1, &v1).expect("positive variances"),
        DynamicsParams::diagonal(beta2, &v2).expect("positive variances"),
    )
}

/// Evaluates one pair with `sigma_min` taken as the smallest standard
/// deviation of either covariance.
pub fn check_pair(p1: &DynamicsParams, p2: &DynamicsParams) -> Result<PairCheck> {
    let sigma_min = p1
        .variances()
        .into_iter()
        .chain(p2.variances())
        .fold(f64::INFINITY, f64::min)
        .sqrt();
    Ok(PairCheck {
        dims: p1.dim(),
        beta1: p1.beta.iter().copied().collect(),
        var1: p1.variances(),
        beta2: p2.beta.iter().copied().collect(),
        var2: p2.variances(),
        numeric: dvar_numeric(p1, p2)?,
        bound: dvar_bound(p1, p2, sigma_min)?,
    })
}

/// Checks `dvar_numeric <= dvar_bound + tol` on `trials` random pairs per
/// dimension plus any `extra` pairs.
pub fn validate_bound(
    dims: &[usize],
    trials: usize,
    seed: u64,
    tol: f64,
    extra: &[(DynamicsParams, DynamicsParams)],
) -> Result<BoundValidation> {
    let mut pairs = Vec::new();
    for &n in dims {
        if n == 0 || n > 3 {
            return Err(CorlError::UnsupportedDimension(n));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        for _ in 0..trials {
            pairs.push(random_diagonal_pair(n, &mut rng));
        }
    }
    pairs.extend_from_slice(extra);
    let checks: Vec<Result<PairCheck>> = {
        use rayon::prelude::*;
        pairs.par_iter().map(|(a, b)| check_pair(a, b)).collect()
    };
    let mut out = BoundValidation::default();
    for c in checks {
        let c = c?;
        out.checked += 1;
        if c.bound == 0.0 {
            out.skipped_degenerate += 1;
            if c.numeric > tol {
                out.violations.push(c);
            }
            continue;
        }
        out.max_ratio = out.max_ratio.max(c.numeric / c.bound);
        out.max_excess = out.max_excess.max(c.numeric - c.bound);
        if c.violates(tol) {
            out.violations.push(c);
        }
    }
    Ok(out)
}

/// Exact variational distance for equal-variance 1-D Gaussians, `2 Phi(d/2) - 1`
/// with `d` the standardized gap.
pub fn dvar_equal_variance_1d(mean_gap: f64, sigma: f64) -> f64 {
    2.0 * Normal::standard().cdf(mean_gap.abs() / (2.0 * sigma)) - 1.0
}
