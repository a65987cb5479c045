//! Value types shared by every module: states, actions, terrain types,
//! Gaussian offset dynamics and the MDP description.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CorlError, Result};

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(x: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut y = (x + PI).rem_euclid(two_pi) - PI;
    // rem_euclid can return exactly two_pi for tiny negative inputs
    if y >= PI {
        y -= two_pi;
    }
    y
}

/// Difference `a - b` with angular coordinates wrapped into `[-pi, pi)`.
pub fn wrapped_diff(a: &[f64], b: &[f64], angular_dims: &[usize]) -> Vec<f64> {
    let mut d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    for &i in angular_dims {
        d[i] = wrap_angle(d[i]);
    }
    d
}

/// A point of the continuous state space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct State {
    coords: Vec<f64>,
}

impl State {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if let Some(bad) = coords.iter().find(|c| !c.is_finite()) {
            return Err(CorlError::Config(format!("non-finite state component {bad}")));
        }
        Ok(Self { coords })
    }

    pub fn from_slice(coords: &[f64]) -> Result<Self> {
        Self::new(coords.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.coords
    }
}

impl std::ops::Index<usize> for State {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.coords[i]
    }
}

/// Index of a discrete action.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionId(pub usize);

/// Index of an observable terrain type.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TypeId(pub usize);

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for TypeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Axis-aligned box `[lo, hi]` (inclusive on both ends).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxRegion {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxRegion {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(CorlError::DimensionMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        for (i, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if !(l.is_finite() && h.is_finite()) || l > h {
                return Err(CorlError::Config(format!(
                    "bad bounds on dimension {i}: [{l}, {h}]"
                )));
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    /// Grows every non-angular axis by `margin` on both sides.
    pub fn expanded(&self, margin: f64, angular_dims: &[usize]) -> Self {
        let mut out = self.clone();
        for i in 0..self.dim() {
            if !angular_dims.contains(&i) {
                out.lo[i] -= margin;
                out.hi[i] += margin;
            }
        }
        out
    }
}

/// Offset vector and noise covariance for one (type, action) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsParams {
    pub beta: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

impl DynamicsParams {
    pub fn new(beta: Vec<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let n = beta.len();
        if sigma.nrows() != n || sigma.ncols() != n {
            return Err(CorlError::DimensionMismatch {
                expected: n,
                got: sigma.nrows(),
            });
        }
        check_symmetric(&sigma)?;
        let params = Self {
            beta: DVector::from_vec(beta),
            sigma,
        };
        if !params.is_psd() {
            return Err(CorlError::InvalidCovariance(
                "covariance is not positive semi-definite".into(),
            ));
        }
        Ok(params)
    }

    pub fn diagonal(beta: Vec<f64>, variances: &[f64]) -> Result<Self> {
        Self::new(beta, DMatrix::from_diagonal(&DVector::from_column_slice(variances)))
    }

    pub fn dim(&self) -> usize {
        self.beta.len()
    }

    pub fn is_diagonal(&self) -> bool {
        is_diagonal(&self.sigma)
    }

    /// Diagonal of the covariance.
    pub fn variances(&self) -> Vec<f64> {
        self.sigma.diagonal().iter().copied().collect()
    }

    pub fn is_psd(&self) -> bool {
        let scale = self.sigma.amax().max(1.0);
        self.sigma
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .all(|&l| l >= -1e-12 * scale)
    }

    /// Checks the `|beta_i| <= b_beta` and `sigma_min^2 <= sigma_ii <= b_sigma^2` bounds.
    pub fn within_bounds(&self, b_beta: f64, sigma_min: f64, b_sigma: f64) -> bool {
        self.beta.iter().all(|b| b.abs() <= b_beta)
            && self
                .sigma
                .diagonal()
                .iter()
                .all(|&v| v >= sigma_min * sigma_min && v <= b_sigma * b_sigma)
    }
}

fn is_diagonal(m: &DMatrix<f64>) -> bool {
    (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| i == j || m[(i, j)] == 0.0))
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(CorlError::InvalidCovariance(format!(
            "covariance is {}x{}, not square",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(CorlError::InvalidCovariance("non-finite entry".into()));
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-10 * scale {
                return Err(CorlError::InvalidCovariance(format!(
                    "covariance is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

/// Multivariate normal density with a precomputed precision matrix.
///
/// Evaluation works on difference vectors so callers can wrap angular
/// coordinates before evaluating.
#[derive(Clone, Debug)]
pub struct Gaussian {
    dim: usize,
    // row-major precision; only the diagonal is used on the fast path
    precision: Vec<f64>,
    diagonal: bool,
    log_norm: f64,
}

impl Gaussian {
    pub fn new(cov: &DMatrix<f64>) -> Result<Self> {
        check_symmetric(cov)?;
        let n = cov.nrows();
        if is_diagonal(cov) {
            let mut precision = vec![0.0; n * n];
            let mut log_det = 0.0;
            for i in 0..n {
                let v = cov[(i, i)];
                if v <= 0.0 {
                    return Err(CorlError::InvalidCovariance(
                        "covariance is singular".into(),
                    ));
                }
                precision[i * n + i] = 1.0 / v;
                log_det += v.ln();
            }
            return Ok(Self {
                dim: n,
                precision,
                diagonal: true,
                log_norm: -0.5 * (n as f64 * (2.0 * PI).ln() + log_det),
            });
        }
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| CorlError::InvalidCovariance("covariance is singular".into()))?;
        let l = chol.l();
        let log_det = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        if !log_det.is_finite() {
            return Err(CorlError::InvalidCovariance("covariance is singular".into()));
        }
        let inv = chol.inverse();
        let mut precision = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                precision[i * n + j] = 0.5 * (inv[(i, j)] + inv[(j, i)]);
            }
        }
        Ok(Self {
            dim: n,
            precision,
            diagonal: false,
            log_norm: -0.5 * (n as f64 * (2.0 * PI).ln() + log_det),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Squared Mahalanobis length of `d`.
    pub fn mahalanobis_sq(&self, d: &[f64]) -> f64 {
        let n = self.dim;
        if self.diagonal {
            return (0..n).map(|i| d[i] * d[i] * self.precision[i * n + i]).sum();
        }
        let mut acc = 0.0;
        for i in 0..n {
            let row = &self.precision[i * n..(i + 1) * n];
            let mut s = 0.0;
            for j in 0..n {
                s += row[j] * d[j];
            }
            acc += d[i] * s;
        }
        acc
    }

    pub fn log_density_of_diff(&self, d: &[f64]) -> f64 {
        self.log_norm - 0.5 * self.mahalanobis_sq(d)
    }

    /// Density at `mean + d`.
    pub fn density_of_diff(&self, d: &[f64]) -> f64 {
        self.log_density_of_diff(d).exp()
    }
}

/// Multivariate normal density `N(x; mean, cov)`.
pub fn gaussian_pdf(x: &State, mean: &State, cov: &DMatrix<f64>) -> Result<f64> {
    if x.dim() != mean.dim() {
        return Err(CorlError::DimensionMismatch {
            expected: mean.dim(),
            got: x.dim(),
        });
    }
    if cov.nrows() != mean.dim() {
        return Err(CorlError::DimensionMismatch {
            expected: mean.dim(),
            got: cov.nrows(),
        });
    }
    let g = Gaussian::new(cov)?;
    let d: Vec<f64> = x
        .as_slice()
        .iter()
        .zip(mean.as_slice())
        .map(|(a, b)| a - b)
        .collect();
    Ok(g.density_of_diff(&d))
}

/// Axis-aligned grid of type labels over a box.
///
/// Labels are stored row-major with the last dimension varying fastest.
/// A state exactly on an interior cell boundary belongs to the cell with
/// the lower index along that axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeGrid {
    region: BoxRegion,
    cells: Vec<usize>,
    labels: Vec<TypeId>,
}

impl TypeGrid {
    pub fn new(region: BoxRegion, cells: Vec<usize>, labels: Vec<TypeId>) -> Result<Self> {
        if cells.len() != region.dim() {
            return Err(CorlError::DimensionMismatch {
                expected: region.dim(),
                got: cells.len(),
            });
        }
        if cells.contains(&0) {
            return Err(CorlError::Config("type grid has an empty axis".into()));
        }
        let total: usize = cells.iter().product();
        if total != labels.len() {
            return Err(CorlError::Config(format!(
                "type grid expects {total} labels, got {}",
                labels.len()
            )));
        }
        Ok(Self {
            region,
            cells,
            labels,
        })
    }

    /// Single-type map covering `region`.
    pub fn uniform(region: BoxRegion, t: TypeId) -> Self {
        let cells = vec![1; region.dim()];
        Self {
            region,
            cells,
            labels: vec![t],
        }
    }

    pub fn region(&self) -> &BoxRegion {
        &self.region
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn labels(&self) -> &[TypeId] {
        &self.labels
    }

    pub fn n_types(&self) -> usize {
        self.labels.iter().map(|t| t.0 + 1).max().unwrap_or(0)
    }

    pub fn type_of(&self, s: &[f64]) -> Result<TypeId> {
        if !self.region.contains(s) {
            return Err(CorlError::OutOfRegion { state: s.to_vec() });
        }
        let mut flat = 0;
        for (i, &n) in self.cells.iter().enumerate() {
            let (lo, hi) = (self.region.lo[i], self.region.hi[i]);
            let idx = if hi > lo {
                let pos = (s[i] - lo) / (hi - lo) * n as f64;
                // boundaries resolve to the lower cell
                (pos.ceil() as isize - 1).clamp(0, n as isize - 1) as usize
            } else {
                0
            };
            flat = flat * n + idx;
        }
        Ok(self.labels[flat])
    }
}

/// Known reward structure of a task.
///
/// `reward` is the per-step reward for acting in `s`; `terminal_value` is the
/// extra reward collected when a transition lands in `s`, which also ends
/// the episode.
pub trait RewardModel: Send + Sync {
    fn reward(&self, s: &[f64], a: ActionId) -> f64;

    fn terminal_value(&self, _s: &[f64]) -> Option<f64> {
        None
    }

    /// Bounds `(min, max)` on the total reward of a single step.
    fn range(&self) -> (f64, f64);
}

/// Reward given by a closure of state and action, with no terminal regions.
pub struct FnReward<F> {
    f: F,
    range: (f64, f64),
}

impl<F> FnReward<F>
where
    F: Fn(&[f64], ActionId) -> f64 + Send + Sync,
{
    pub fn new(f: F, range: (f64, f64)) -> Self {
        Self { f, range }
    }
}

impl<F> RewardModel for FnReward<F>
where
    F: Fn(&[f64], ActionId) -> f64 + Send + Sync,
{
    fn reward(&self, s: &[f64], a: ActionId) -> f64 {
        (self.f)(s, a)
    }

    fn range(&self) -> (f64, f64) {
        self.range
    }
}

/// Description of a typed continuous-state MDP with a known reward.
#[derive(Clone)]
pub struct MdpSpec {
    pub n_dim: usize,
    pub n_actions: usize,
    pub n_types: usize,
    pub gamma: f64,
    pub reward: Arc<dyn RewardModel>,
    pub type_map: TypeGrid,
    pub sigma_min: f64,
    pub b_beta: f64,
    pub b_sigma: f64,
    pub bounds: BoxRegion,
    /// Dimensions holding angles with period 2*pi.
    pub angular_dims: Vec<usize>,
}

impl fmt::Debug for MdpSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MdpSpec")
            .field("n_dim", &self.n_dim)
            .field("n_actions", &self.n_actions)
            .field("n_types", &self.n_types)
            .field("gamma", &self.gamma)
            .field("reward_range", &self.reward.range())
            .field("sigma_min", &self.sigma_min)
            .field("b_beta", &self.b_beta)
            .field("b_sigma", &self.b_sigma)
            .field("bounds", &self.bounds)
            .field("angular_dims", &self.angular_dims)
            .finish()
    }
}

impl MdpSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(CorlError::Config(format!(
                "discount must lie in [0, 1), got {}",
                self.gamma
            )));
        }
        if self.n_dim == 0 || self.n_actions == 0 || self.n_types == 0 {
            return Err(CorlError::Config(
                "dimension, action and type counts must be positive".into(),
            ));
        }
        if self.bounds.dim() != self.n_dim || self.type_map.region().dim() != self.n_dim {
            return Err(CorlError::DimensionMismatch {
                expected: self.n_dim,
                got: self.bounds.dim(),
            });
        }
        if self.type_map.labels().iter().any(|t| t.0 >= self.n_types) {
            return Err(CorlError::Config("type map uses an undeclared type".into()));
        }
        if self.angular_dims.iter().any(|&i| i >= self.n_dim) {
            return Err(CorlError::Config("angular dimension out of range".into()));
        }
        if !(self.sigma_min > 0.0 && self.b_beta > 0.0 && self.b_sigma > 0.0) {
            return Err(CorlError::Config(
                "sigma_min, b_beta and b_sigma must be positive".into(),
            ));
        }
        let (lo, hi) = self.reward.range();
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(CorlError::Config(format!("bad reward range [{lo}, {hi}]")));
        }
        Ok(())
    }

    /// Largest attainable discounted return, `R_max / (1 - gamma)`.
    pub fn v_max(&self) -> f64 {
        self.reward.range().1 / (1.0 - self.gamma)
    }

    /// Smallest attainable discounted return, `R_min / (1 - gamma)`.
    pub fn v_min(&self) -> f64 {
        self.reward.range().0 / (1.0 - self.gamma)
    }

    pub fn type_of(&self, s: &[f64]) -> Result<TypeId> {
        if s.len() != self.n_dim {
            return Err(CorlError::DimensionMismatch {
                expected: self.n_dim,
                got: s.len(),
            });
        }
        self.type_map.type_of(s)
    }

    /// Floor applied to estimated variances: `max(sigma_min^2, 1e-6)`.
    pub fn sigma_floor_sq(&self) -> f64 {
        (self.sigma_min * self.sigma_min).max(1e-6)
    }

    pub fn tuple_index(&self, t: TypeId, a: ActionId) -> usize {
        t.0 * self.n_actions + a.0
    }

    pub fn n_tuples(&self) -> usize {
        self.n_types * self.n_actions
    }
}

/// Type of `s` under a type map.
pub fn type_of_state(s: &State, map: &TypeGrid) -> Result<TypeId> {
    map.type_of(s.as_slice())
}
