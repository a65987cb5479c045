use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{CorlError, Result};
use crate::types::{wrap_angle, BoxRegion};

/// How the interpolation kernel measures distance along angular axes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleEncoding {
    /// Gaussian in the wrapped angle difference.
    #[default]
    Wrapped,
    /// Isotropic Gaussian over the embedded point `(cos t, sin t)`.
    CosSin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridOptions {
    pub angular_dims: Vec<usize>,
    pub angle_encoding: AngleEncoding,
    /// Refuse to build grids with more points than this.
    pub max_points: usize,
    /// Probe points per lattice step used when calibrating weights.
    pub probe_density: usize,
    /// Kernel support, in standard deviations, when summing over neighbours.
    pub cutoff: f64,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            angular_dims: Vec::new(),
            angle_encoding: AngleEncoding::Wrapped,
            max_points: 2_000_000,
            probe_density: 4,
            cutoff: 6.0,
        }
    }
}

/// One lattice axis: `count` points `start + k * step`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub start: f64,
    pub step: f64,
    pub count: usize,
    pub periodic: bool,
}

impl Axis {
    pub fn coord(&self, k: usize) -> f64 {
        self.start + k as f64 * self.step
    }

    fn diff(&self, x: f64, k: usize) -> f64 {
        let d = x - self.coord(k);
        if self.periodic {
            wrap_angle(d)
        } else {
            d
        }
    }

    /// Lattice indices within `radius` of `x`, with the difference `x - mu_k`.
    pub fn neighbours(&self, x: f64, radius: f64, out: &mut Vec<(usize, f64)>) {
        out.clear();
        if self.periodic || self.count == 1 {
            for k in 0..self.count {
                let d = self.diff(x, k);
                if d.abs() <= radius {
                    out.push((k, d));
                }
            }
            return;
        }
        let lo = ((x - radius - self.start) / self.step).ceil().max(0.0);
        let hi = ((x + radius - self.start) / self.step)
            .floor()
            .min((self.count - 1) as f64);
        if lo > hi {
            return;
        }
        for k in lo as usize..=hi as usize {
            out.push((k, x - self.coord(k)));
        }
    }
}

/// Uniform lattice of Gaussian basis functions with calibrated weights.
///
/// Every basis function shares the diagonal kernel covariance
/// `diag(kernel_sigma^2)`. Weights are calibrated so that
/// `sum_f w_f N(s; mu_f, Sigma_f) <= 1` over the probed region, which makes
/// the interpolator an averager.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelGrid {
    bounds: BoxRegion,
    axes: Vec<Axis>,
    kernel_sigma: Vec<f64>,
    angular_dims: Vec<usize>,
    encoding: AngleEncoding,
    cutoff: f64,
    weights: Vec<f64>,
}

impl KernelGrid {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn bounds(&self) -> &BoxRegion {
        &self.bounds
    }

    pub fn kernel_sigma(&self) -> &[f64] {
        &self.kernel_sigma
    }

    pub fn angular_dims(&self) -> &[usize] {
        &self.angular_dims
    }

    pub fn encoding(&self) -> AngleEncoding {
        self.encoding
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn spacing(&self) -> Vec<f64> {
        self.axes.iter().map(|a| a.step).collect()
    }

    /// Flat index from per-axis indices (last axis fastest).
    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.axes)
            .fold(0, |acc, (&k, ax)| acc * ax.count + k)
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.axes.len()];
        for (i, ax) in self.axes.iter().enumerate().rev() {
            idx[i] = flat % ax.count;
            flat /= ax.count;
        }
        idx
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .iter()
            .zip(&self.axes)
            .map(|(&k, ax)| ax.coord(k))
            .collect()
    }

    pub fn points(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.len()).map(|f| self.point(f))
    }

    fn uses_embedding(&self, axis: usize) -> bool {
        self.encoding == AngleEncoding::CosSin && self.axes[axis].periodic
    }

    /// One-dimensional kernel factor along `axis` at difference `d`.
    pub fn axis_kernel(&self, axis: usize, d: f64) -> f64 {
        let s = self.kernel_sigma[axis];
        if self.uses_embedding(axis) {
            // |(cos a, sin a) - (cos b, sin b)|^2 = 2 - 2 cos(a - b)
            (-(1.0 - d.cos()) / (s * s)).exp() / (2.0 * PI * s * s)
        } else {
            (-0.5 * d * d / (s * s)).exp() / ((2.0 * PI).sqrt() * s)
        }
    }

    fn axis_radius(&self, axis: usize) -> f64 {
        self.cutoff * self.kernel_sigma[axis]
    }

    /// Whether `s` lies in the grid's box (angular axes accept any angle).
    pub fn contains(&self, s: &[f64]) -> bool {
        s.len() == self.dim()
            && s.iter().enumerate().all(|(i, &x)| {
                self.axes[i].periodic || (self.bounds.lo[i] <= x && x <= self.bounds.hi[i])
            })
    }

    /// Calls `visit(f, w_f N(s; mu_f, Sigma_f))` for every basis function
    /// within the kernel cutoff of `s`.
    pub fn for_each_kernel<F: FnMut(usize, f64)>(&self, s: &[f64], mut visit: F) {
        let lists: Vec<Vec<(usize, f64)>> = (0..self.dim())
            .map(|i| {
                let mut v = Vec::new();
                self.axes[i].neighbours(s[i], self.axis_radius(i), &mut v);
                v.into_iter()
                    .map(|(k, d)| (k, self.axis_kernel(i, d)))
                    .collect()
            })
            .collect();
        for_each_product(&lists, |idx, factors| {
            let f = self.flat_index(idx);
            visit(f, self.weights[f] * factors.iter().product::<f64>());
        });
    }

    /// `sum_f w_f N(s; mu_f, Sigma_f)`.
    pub fn kernel_sum(&self, s: &[f64]) -> f64 {
        let mut acc = 0.0;
        self.for_each_kernel(s, |_, k| acc += k);
        acc
    }

    /// Kernel-weighted sum of per-point values.
    pub fn interpolate(&self, s: &[f64], values: &[f64]) -> f64 {
        let mut acc = 0.0;
        self.for_each_kernel(s, |f, k| acc += k * values[f]);
        acc
    }
}

/// Iterates the cartesian product of per-axis `(index, value)` lists.
pub(crate) fn for_each_product<T: Copy, F: FnMut(&[usize], &[T])>(lists: &[Vec<(usize, T)>], mut visit: F) {
    if lists.iter().any(|l| l.is_empty()) {
        return;
    }
    let n = lists.len();
    let mut pos = vec![0usize; n];
    let mut idx: Vec<usize> = lists.iter().map(|l| l[0].0).collect();
    let mut vals: Vec<T> = lists.iter().map(|l| l[0].1).collect();
    loop {
        visit(&idx, &vals);
        let mut axis = n;
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            pos[axis] += 1;
            if pos[axis] < lists[axis].len() {
                idx[axis] = lists[axis][pos[axis]].0;
                vals[axis] = lists[axis][pos[axis]].1;
                break;
            }
            pos[axis] = 0;
            idx[axis] = lists[axis][0].0;
            vals[axis] = lists[axis][0].1;
        }
    }
}

/// Builds a uniform lattice over `bounds` and calibrates its weights.
///
/// Non-angular axes get points `lo, lo + h, ...` up to the first point at or
/// beyond `hi`. Angular axes always cover the full circle `[-pi, pi)` with
/// the step adjusted to divide `2 pi` evenly.
///
/// Weights start from the Riemann normaliser `prod_i h_i / (sqrt(2 pi) sigma_i)`
/// and are divided by the largest kernel sum found on a probe lattice
/// `probe_density` times denser than the grid. The kernel sum factorises
/// over axes, so the maximum over the product probe lattice is the product
/// of per-axis maxima.
pub fn build_grid(
    bounds: &BoxRegion,
    spacing: &[f64],
    kernel_sigma: &[f64],
    opts: &GridOptions,
) -> Result<KernelGrid> {
    let n = bounds.dim();
    if spacing.len() != n || kernel_sigma.len() != n {
        return Err(CorlError::DimensionMismatch {
            expected: n,
            got: spacing.len().min(kernel_sigma.len()),
        });
    }
    if spacing.iter().chain(kernel_sigma).any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(CorlError::Config(
            "grid spacing and kernel widths must be positive".into(),
        ));
    }
    if opts.angular_dims.iter().any(|&i| i >= n) {
        return Err(CorlError::Config("angular dimension out of range".into()));
    }
    if opts.probe_density == 0 || !(opts.cutoff > 0.0) {
        return Err(CorlError::Config(
            "probe density and kernel cutoff must be positive".into(),
        ));
    }
    let mut axes = Vec::with_capacity(n);
    for (i, &h) in spacing.iter().enumerate().take(n) {
        if opts.angular_dims.contains(&i) {
            let count = ((2.0 * PI / h).round() as usize).max(1);
            axes.push(Axis {
                start: -PI,
                step: 2.0 * PI / count as f64,
                count,
                periodic: true,
            });
        } else {
            let span = bounds.hi[i] - bounds.lo[i];
            let steps = span / h;
            let rounded = steps.round();
            let steps = if (steps - rounded).abs() < 1e-9 * rounded.max(1.0) {
                rounded
            } else {
                steps.ceil()
            };
            axes.push(Axis {
                start: bounds.lo[i],
                step: h,
                count: steps as usize + 1,
                periodic: false,
            });
        }
    }
    let total = axes
        .iter()
        .try_fold(1usize, |acc, a| acc.checked_mul(a.count))
        .unwrap_or(usize::MAX);
    if total > opts.max_points {
        return Err(CorlError::GridTooLarge {
            points: total,
            limit: opts.max_points,
        });
    }
    let mut grid = KernelGrid {
        bounds: bounds.clone(),
        axes,
        kernel_sigma: kernel_sigma.to_vec(),
        angular_dims: opts.angular_dims.clone(),
        encoding: opts.angle_encoding,
        cutoff: opts.cutoff,
        weights: Vec::new(),
    };
    let riemann: f64 = (0..n)
        .map(|i| grid.axes[i].step / ((2.0 * PI).sqrt() * kernel_sigma[i]))
        .product();
    let peak: f64 = (0..n)
        .map(|i| axis_sum_max(&grid, i, opts.probe_density))
        .product::<f64>()
        * riemann;
    let w = riemann / peak;
    grid.weights = vec![w; total];
    Ok(grid)
}

/// Largest value of `sum_k k_i(x - mu_k)` over probe points along one axis.
fn axis_sum_max(grid: &KernelGrid, axis: usize, density: usize) -> f64 {
    let ax = &grid.axes[axis];
    let probe_step = ax.step / density as f64;
    let probes = if ax.periodic {
        ax.count * density
    } else {
        (ax.count - 1) * density + 1
    };
    (0..probes)
        .map(|p| {
            let x = ax.start + p as f64 * probe_step;
            (0..ax.count)
                .map(|k| grid.axis_kernel(axis, ax.diff(x, k)))
                .sum::<f64>()
        })
        .fold(0.0, f64::max)
}

/// Lipschitz-type constants of the continuous problem, supplied by the user.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzConstants {
    pub k: f64,
    pub k1: f64,
    pub k2: f64,
}

/// Largest grid step satisfying `h <= (1-gamma)^2 eps / (K1 + 2 K K2)` and
/// `h <= 1 / (2 K)`.
pub fn max_grid_spacing(epsilon: f64, gamma: f64, c: &LipschitzConstants) -> f64 {
    let a = (1.0 - gamma).powi(2) * epsilon / (c.k1 + 2.0 * c.k * c.k2);
    let b = 1.0 / (2.0 * c.k);
    a.min(b)
}
