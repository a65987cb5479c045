//! Independent oracles shared by integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use corl::planner::{build_grid, GridOptions, KnownMdpModel, Planner};
use corl::types::{ActionId, BoxRegion, DynamicsParams, FnReward, MdpSpec, TypeGrid, TypeId};

/// Lattice moves of the aligned test world.
pub const MOVES: [(i64, i64); 3] = [(1, 0), (0, 1), (-1, -1)];

pub fn lattice_reward(x: f64, y: f64, a: usize) -> f64 {
    (0.5 + 0.4 * (0.7 * x).sin() * (0.9 * y + a as f64).cos()).clamp(0.0, 1.0)
}

/// Value iteration on the integer lattice `[0, nx) x [0, ny)` where moving
/// off the lattice ends the episode with no further reward. Values are
/// indexed `x * ny + y`.
pub fn tabular_oracle(nx: i64, ny: i64, gamma: f64, tol: f64) -> Vec<f64> {
    let idx = |x: i64, y: i64| (x * ny + y) as usize;
    let mut v = vec![0.0; (nx * ny) as usize];
    loop {
        let mut next = v.clone();
        let mut r = 0.0f64;
        for x in 0..nx {
            for y in 0..ny {
                let mut best = f64::NEG_INFINITY;
                for (a, &(dx, dy)) in MOVES.iter().enumerate() {
                    let (tx, ty) = (x + dx, y + dy);
                    let future = if (0..nx).contains(&tx) && (0..ny).contains(&ty) {
                        v[idx(tx, ty)]
                    } else {
                        0.0
                    };
                    best = best.max(lattice_reward(x as f64, y as f64, a) + gamma * future);
                }
                r = r.max((best - v[idx(x, y)]).abs());
                next[idx(x, y)] = best;
            }
        }
        v = next;
        if r <= tol {
            return v;
        }
    }
}

/// Planner and exact-offset model for the lattice world: unit spacing,
/// narrow kernels and near-zero dynamics noise.
pub fn lattice_planner(nx: i64, ny: i64, gamma: f64) -> (Planner, KnownMdpModel) {
    let region = BoxRegion::new(vec![0.0, 0.0], vec![(nx - 1) as f64, (ny - 1) as f64]).unwrap();
    let spec = Arc::new(MdpSpec {
        n_dim: 2,
        n_actions: 3,
        n_types: 1,
        gamma,
        reward: Arc::new(FnReward::new(
            |s: &[f64], a: ActionId| lattice_reward(s[0], s[1], a.0),
            (0.0, 1.0),
        )),
        type_map: TypeGrid::uniform(region.clone(), TypeId(0)),
        sigma_min: 1e-6,
        b_beta: 2.0,
        b_sigma: 1.0,
        bounds: region.clone(),
        angular_dims: vec![],
    });
    let grid = build_grid(&region, &[1.0, 1.0], &[0.15, 0.15], &GridOptions::default()).unwrap();
    let planner = Planner::new(spec.clone(), grid).unwrap();
    let dyns: Vec<DynamicsParams> = MOVES
        .iter()
        .map(|&(dx, dy)| {
            DynamicsParams::diagonal(vec![dx as f64, dy as f64], &[1e-12, 1e-12]).unwrap()
        })
        .collect();
    let model = KnownMdpModel::from_dynamics(spec, &dyns).unwrap();
    (planner, model)
}

/// Largest deviation between planner values and the tabular oracle.
pub fn lattice_deviation(planner: &Planner, v: &[f64], oracle: &[f64], ny: i64) -> f64 {
    (0..planner.grid().len())
        .map(|f| {
            let p = planner.grid().point(f);
            let o = oracle[(p[0].round() as i64 * ny + p[1].round() as i64) as usize];
            (v[f] - o).abs()
        })
        .fold(0.0, f64::max)
}

/// Kolmogorov-Smirnov statistic of `xs` against `cdf`.
pub fn ks_statistic(xs: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
