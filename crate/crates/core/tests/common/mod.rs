#![allow(dead_code)]

use std::f64::consts::PI;

use cns_floquet::c64;
use cns_floquet::cell_grid::CellGrid;
use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn cheb(d: usize, z: f64) -> f64 {
    (d as f64 * (2.0 * z - 1.0).clamp(-1.0, 1.0).acos()).cos()
}

/// Random smooth point field (`rows × npts`): horizontal modes `|k| ≤ kmax`
/// times Chebyshev polynomials of degree `≤ dmax`.
pub fn smooth_points(grid: &CellGrid, rows: usize, kmax: i64, dmax: usize, rng: &mut ChaCha8Rng) -> Mat<c64> {
    let nd = grid.dim_n() - 1;
    let mut out = Mat::<c64>::zeros(rows, grid.npts());
    for r in 0..rows {
        let terms: Vec<(Vec<i64>, usize, c64)> = (0..12)
            .map(|_| {
                let k: Vec<i64> = (0..nd).map(|_| rng.random_range(-kmax..=kmax)).collect();
                let d = rng.random_range(0..=dmax);
                (k, d, c64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            })
            .collect();
        for p in 0..grid.npts() {
            let (x, z) = grid.point_coords(p);
            let mut s = c64::new(0.0, 0.0);
            for (k, d, c) in &terms {
                let th: f64 = k.iter().zip(&x).zip(grid.alpha()).map(|((k, x), a)| *k as f64 * a * x).sum();
                s += *c * c64::new(th.cos(), th.sin()) * cheb(*d, z);
            }
            out[(r, p)] = s;
        }
    }
    out
}

/// Random smooth packed state: `φ` smooth, `w` smooth and vanishing at the walls.
pub fn smooth_packed(grid: &CellGrid, rows: usize, rng: &mut ChaCha8Rng) -> Mat<c64> {
    let phi = smooth_points(grid, rows, 2, 6, rng);
    let w: Vec<Mat<c64>> = (0..grid.dim_n())
        .map(|_| {
            let f = smooth_points(grid, rows, 2, 6, rng);
            Mat::from_fn(rows, grid.npts(), |r, p| {
                let z = grid.point_coords(p).1;
                f[(r, p)] * (PI * z).sin()
            })
        })
        .collect();
    grid.pack(phi.as_ref(), &w)
}

pub fn max_abs(m: &Mat<c64>) -> f64 {
    let mut s = 0.0f64;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            s = s.max(m[(i, j)].norm());
        }
    }
    s
}

pub fn fro(m: &Mat<c64>) -> f64 {
    let mut s = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            s += m[(i, j)].norm_sqr();
        }
    }
    s.sqrt()
}

pub fn diff(a: &Mat<c64>, b: &Mat<c64>) -> Mat<c64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] - b[(i, j)])
}

/// Real, smooth, time-periodic state of size `amp` that is not a solution;
/// enough for tests that only need variable coefficients.
pub fn synthetic_state(grid: &CellGrid, params: &cns_floquet::config_params::Params, nt: usize, amp: f64, seed: u64) -> cns_floquet::periodic_state::PeriodicState {
    let mut r = rng(seed);
    let base = smooth_packed(grid, 2, &mut r);
    let samples = Mat::from_fn(nt, grid.ndof(), |m, j| {
        let t = 2.0 * PI * m as f64 / nt as f64;
        c64::new(amp * (base[(0, j)].re * t.cos() + base[(1, j)].re * t.sin() + 0.5 * base[(0, j)].im), 0.0)
    });
    cns_floquet::periodic_state::PeriodicState {
        params: params.clone(),
        samples,
        defect_history: vec![0.0],
        periods: 1,
        min_rho: 1.0,
    }
}
