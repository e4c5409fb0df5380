//! Linearized operators about a periodic state, applied matrix-free to
//! batches of packed vectors and assembled densely when needed.
//!
//! Variables are `u = (φ, w)` with `φ` the density perturbation scaled by
//! `γ²` and `w` the velocity perturbation. The operator is
//!
//! ```text
//! L_η u = ( ∇_η·(v φ) + γ² ∇_η·(ρ w),
//!           ∇_η(c φ) + e φ - (ν/ρ) Δ_η w - (ν̃/ρ) ∇_η ∇_η·w + (v·∇_η) w + (w·∇) v )
//! ```
//!
//! with `c = p'(ρ)/ρ` and `e = (νΔv + ν̃∇div v)/(γ²ρ²)`. It is skew in its
//! principal part for the weight `a = c/γ²` on `φ` and `ρ` on `w`.

use faer::{c64, Mat, MatRef};

use crate::cell_grid::{add_mul_coef, add_scaled, mul_coef, CellGrid};
use crate::config_params::Params;
use crate::linalg::{one, pinv, zero};
use crate::{Error, Result};

/// Coefficient fields of the linearization. Every field has either one row
/// (a single time, broadcast over the batch) or one row per batch member
/// (space-time batches, row = time sample).
#[derive(Clone, Debug)]
pub struct Coefficients {
    pub gamma: f64,
    pub nu: f64,
    pub nu_tilde: f64,
    pub v: Vec<Mat<c64>>,
    pub rho: Mat<c64>,
    pub inv_rho: Mat<c64>,
    /// `p'(ρ)/ρ`
    pub c: Mat<c64>,
    /// Weight on `φ`: `p'(ρ)/(γ²ρ)`.
    pub a: Mat<c64>,
    pub e: Vec<Mat<c64>>,
    /// `grad_v[i][k] = ∂_k v_i`
    pub grad_v: Vec<Vec<Mat<c64>>>,
    /// `div(ρ v)`
    pub div_rho_v: Mat<c64>,
    pub trivial: bool,
}

fn map(m: &Mat<c64>, f: impl Fn(c64) -> c64) -> Mat<c64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| f(m[(i, j)]))
}

impl Coefficients {
    /// Coefficients of the rest state `ρ = 1, v = 0`.
    pub fn trivial(grid: &CellGrid, params: &Params) -> Self {
        let n = grid.dim_n();
        let np = grid.npts();
        let z = Mat::<c64>::zeros(1, np);
        let o = Mat::<c64>::from_fn(1, np, |_, _| one());
        let g2 = params.gamma * params.gamma;
        Self {
            gamma: params.gamma,
            nu: params.nu,
            nu_tilde: params.nu_tilde,
            v: vec![z.clone(); n],
            rho: o.clone(),
            inv_rho: o.clone(),
            c: o.clone(),
            a: map(&o, |x| x / g2),
            e: vec![z.clone(); n],
            grad_v: vec![vec![z.clone(); n]; n],
            div_rho_v: z,
            trivial: true,
        }
    }

    /// Coefficients from scaled density `φ` and velocity `w` (rows = times).
    pub fn from_fields(grid: &CellGrid, params: &Params, phi: MatRef<'_, c64>, w: &[Mat<c64>]) -> Result<Self> {
        let n = grid.dim_n();
        let g2 = params.gamma * params.gamma;
        let rho = Mat::<c64>::from_fn(phi.nrows(), phi.ncols(), |i, j| c64::new(1.0 + phi[(i, j)].re / g2, 0.0));
        for j in 0..rho.ncols() {
            for i in 0..rho.nrows() {
                if !(rho[(i, j)].re > 0.0) {
                    return Err(Error::Numerical("nonpositive density sample".into()));
                }
            }
        }
        let law = params.pressure;
        let inv_rho = map(&rho, |r| c64::new(1.0 / r.re, 0.0));
        let c = map(&rho, |r| c64::new(law.dp(r.re) / r.re, 0.0));
        let a = map(&c, |x| x / g2);
        let eta0: [f64; 0] = [];
        let grad_v: Vec<Vec<Mat<c64>>> = w.iter().map(|wi| grid.grad(wi.as_ref(), &eta0)).collect();
        let div = {
            let mut d = Mat::<c64>::zeros(phi.nrows(), phi.ncols());
            for i in 0..n {
                add_scaled(&mut d, grad_v[i][i].as_ref(), one());
            }
            d
        };
        let gdiv = grid.grad(div.as_ref(), &eta0);
        let mut e = Vec::with_capacity(n);
        for i in 0..n {
            let lap = grid.laplace(w[i].as_ref(), &eta0);
            let mut ei = Mat::<c64>::zeros(phi.nrows(), phi.ncols());
            for jj in 0..ei.ncols() {
                for ii in 0..ei.nrows() {
                    let r = rho[(ii, jj)].re;
                    ei[(ii, jj)] = (lap[(ii, jj)] * params.nu + gdiv[i][(ii, jj)] * params.nu_tilde) / (g2 * r * r);
                }
            }
            e.push(ei);
        }
        let rv: Vec<Mat<c64>> = w.iter().map(|wi| mul_coef(wi.as_ref(), rho.as_ref())).collect();
        let div_rho_v = grid.div(&rv, &eta0);
        let trivial = w.iter().all(|m| all_zero(m)) && all_zero(&Mat::from_fn(phi.nrows(), phi.ncols(), |i, j| phi[(i, j)]));
        Ok(Self {
            gamma: params.gamma,
            nu: params.nu,
            nu_tilde: params.nu_tilde,
            v: w.to_vec(),
            rho,
            inv_rho,
            c,
            a,
            e,
            grad_v,
            div_rho_v,
            trivial,
        })
    }

    pub fn rows(&self) -> usize {
        self.rho.nrows()
    }

    /// Single-row coefficients of sample `m`.
    pub fn row(&self, m: usize) -> Self {
        let r = |x: &Mat<c64>| Mat::from_fn(1, x.ncols(), |_, j| x[(m, j)]);
        Self {
            gamma: self.gamma,
            nu: self.nu,
            nu_tilde: self.nu_tilde,
            v: self.v.iter().map(r).collect(),
            rho: r(&self.rho),
            inv_rho: r(&self.inv_rho),
            c: r(&self.c),
            a: r(&self.a),
            e: self.e.iter().map(r).collect(),
            grad_v: self.grad_v.iter().map(|g| g.iter().map(r).collect()).collect(),
            div_rho_v: r(&self.div_rho_v),
            trivial: self.trivial,
        }
    }

    /// `L(coefficients) - L(rest state)`, i.e. the variable-coefficient remainder.
    pub fn minus_trivial(&self) -> Self {
        let g2 = self.gamma * self.gamma;
        Self {
            gamma: self.gamma,
            nu: self.nu,
            nu_tilde: self.nu_tilde,
            v: self.v.clone(),
            rho: map(&self.rho, |x| x - 1.0),
            inv_rho: map(&self.inv_rho, |x| x - 1.0),
            c: map(&self.c, |x| x - 1.0),
            a: map(&self.a, |x| x - 1.0 / g2),
            e: self.e.clone(),
            grad_v: self.grad_v.clone(),
            div_rho_v: self.div_rho_v.clone(),
            trivial: false,
        }
    }

    /// Weights of `⟨·,·⟩_t` as plain vectors (row `m`).
    pub fn weights(&self, m: usize) -> (Vec<f64>, Vec<f64>) {
        (
            (0..self.a.ncols()).map(|j| self.a[(m, j)].re).collect(),
            (0..self.rho.ncols()).map(|j| self.rho[(m, j)].re).collect(),
        )
    }
}

fn all_zero(m: &Mat<c64>) -> bool {
    (0..m.ncols()).all(|j| (0..m.nrows()).all(|i| m[(i, j)] == zero()))
}

/// Damping rate given to the filtered-out wall-normal checkerboard mode of `φ`.
pub const CHECKERBOARD_DAMPING: f64 = 50.0;

/// Collocating `φ` and `w` on the same wall-normal nodes leaves the highest
/// Chebyshev polynomial of `φ` (times any horizontal mode) invisible to the
/// interior gradient. It is a spurious neutral mode. The linear operators act
/// as `P L P + σ (I - P)` where `P` removes that component along a mean-free
/// direction, so `«Pφ» = «φ»`.
fn checkerboard(grid: &CellGrid) -> (Vec<f64>, Vec<f64>) {
    let nz = grid.nz();
    let n = (nz - 1) as f64;
    let sgn = |j: usize| if j % 2 == 0 { 1.0 } else { -1.0 };
    let ell: Vec<f64> = (0..nz)
        .map(|j| sgn(j) / n / if j == 0 || j == nz - 1 { 2.0 } else { 1.0 })
        .collect();
    let wz = grid.wz();
    let m = (0..nz).map(|j| wz[j] * sgn(j)).sum::<f64>() / wz.iter().sum::<f64>();
    let q = (0..nz).map(|j| sgn(j) - m).collect();
    (ell, q)
}

/// `P x`: strips the checkerboard component from `φ`.
pub fn filter_phi(grid: &CellGrid, x: MatRef<'_, c64>) -> Mat<c64> {
    let (ell, q) = checkerboard(grid);
    let nz = grid.nz();
    let mut out = x.to_owned();
    for r in 0..x.nrows() {
        for h in 0..grid.npts() / nz {
            let c: c64 = (0..nz).map(|iz| x[(r, h * nz + iz)] * ell[iz]).sum();
            for iz in 0..nz {
                out[(r, h * nz + iz)] -= c * q[iz];
            }
        }
    }
    out
}

/// `L_η u` for a packed batch.
pub fn apply_l(grid: &CellGrid, k: &Coefficients, eta: &[f64], x: MatRef<'_, c64>) -> Mat<c64> {
    let px = filter_phi(grid, x);
    let mut y = filter_phi(grid, apply_l_raw(grid, k, eta, px.as_ref()).as_ref());
    for j in 0..grid.npts() {
        for r in 0..x.nrows() {
            y[(r, j)] += (x[(r, j)] - px[(r, j)]) * CHECKERBOARD_DAMPING;
        }
    }
    y
}

/// `L_η u` without the checkerboard filter.
pub fn apply_l_unfiltered(grid: &CellGrid, k: &Coefficients, eta: &[f64], x: MatRef<'_, c64>) -> Mat<c64> {
    apply_l_raw(grid, k, eta, x)
}

/// First-order block `B_j^(1) = ∂L_η/∂η_j` (η-independent).
pub fn apply_b1(grid: &CellGrid, k: &Coefficients, j: usize, x: MatRef<'_, c64>) -> Mat<c64> {
    let px = filter_phi(grid, x);
    filter_phi(grid, apply_b1_raw(grid, k, j, px.as_ref()).as_ref())
}

/// Second-order block `B_jk^(2) = (1/ρ)(ν δ_jk I + ν̃ e_j e_kᵀ)` on `w`.
pub fn apply_b2(grid: &CellGrid, k: &Coefficients, j: usize, kk: usize, x: MatRef<'_, c64>) -> Mat<c64> {
    apply_b2_raw(grid, k, j, kk, x)
}

/// Unfiltered `L_η u`.
fn apply_l_raw(grid: &CellGrid, k: &Coefficients, eta: &[f64], x: MatRef<'_, c64>) -> Mat<c64> {
    let n = grid.dim_n();
    let ex = grid.expand(x);
    let (b, np) = (x.nrows(), grid.npts());
    let g2 = k.gamma * k.gamma;
    // mass row: ∇_η·(v φ + γ² ρ w)
    let mut flux = Vec::with_capacity(n);
    for d in 0..n {
        let mut f = mul_coef(ex.phi.as_ref(), k.v[d].as_ref());
        let rw = mul_coef(ex.w[d].as_ref(), k.rho.as_ref());
        add_scaled(&mut f, rw.as_ref(), c64::new(g2, 0.0));
        flux.push(f);
    }
    let out_phi = grid.div(&flux, eta);
    // momentum rows
    let cphi = mul_coef(ex.phi.as_ref(), k.c.as_ref());
    let gw: Vec<Vec<Mat<c64>>> = ex.w.iter().map(|wi| grid.grad(wi.as_ref(), eta)).collect();
    let mut div = Mat::<c64>::zeros(b, np);
    for d in 0..n {
        add_scaled(&mut div, gw[d][d].as_ref(), one());
    }
    let mut out_w = Vec::with_capacity(n);
    for i in 0..n {
        let mut visc = Mat::<c64>::zeros(b, np);
        for d in 0..n {
            let g = grid.deriv(gw[i][d].as_ref(), d, eta);
            add_scaled(&mut visc, g.as_ref(), c64::new(k.nu, 0.0));
        }
        let gd = grid.deriv(div.as_ref(), i, eta);
        add_scaled(&mut visc, gd.as_ref(), c64::new(k.nu_tilde, 0.0));
        let mut r = grid.deriv(cphi.as_ref(), i, eta);
        add_mul_coef(&mut r, ex.phi.as_ref(), k.e[i].as_ref());
        let vr = mul_coef(visc.as_ref(), k.inv_rho.as_ref());
        add_scaled(&mut r, vr.as_ref(), -one());
        for d in 0..n {
            add_mul_coef(&mut r, gw[i][d].as_ref(), k.v[d].as_ref());
            add_mul_coef(&mut r, ex.w[d].as_ref(), k.grad_v[i][d].as_ref());
        }
        out_w.push(r);
    }
    grid.pack(out_phi.as_ref(), &out_w)
}

fn apply_b1_raw(grid: &CellGrid, k: &Coefficients, j: usize, x: MatRef<'_, c64>) -> Mat<c64> {
    let n = grid.dim_n();
    let ex = grid.expand(x);
    let (b, np) = (x.nrows(), grid.npts());
    let g2 = k.gamma * k.gamma;
    let ii = c64::new(0.0, 1.0);
    let eta0: [f64; 0] = [];
    let mut out_phi = mul_coef(ex.phi.as_ref(), k.v[j].as_ref());
    let rw = mul_coef(ex.w[j].as_ref(), k.rho.as_ref());
    add_scaled(&mut out_phi, rw.as_ref(), c64::new(g2, 0.0));
    let out_phi = Mat::from_fn(b, np, |r, c| out_phi[(r, c)] * ii);
    let mut div = Mat::<c64>::zeros(b, np);
    for d in 0..n {
        grid.deriv_into(ex.w[d].as_ref(), div.as_mut(), d, &eta0, faer::Accum::Add);
    }
    let mut out_w = Vec::with_capacity(n);
    for i in 0..n {
        let mut visc = grid.deriv(ex.w[i].as_ref(), j, &eta0);
        visc = Mat::from_fn(b, np, |r, c| visc[(r, c)] * (2.0 * k.nu));
        let dwj = grid.deriv(ex.w[j].as_ref(), i, &eta0);
        add_scaled(&mut visc, dwj.as_ref(), c64::new(k.nu_tilde, 0.0));
        if i == j {
            add_scaled(&mut visc, div.as_ref(), c64::new(k.nu_tilde, 0.0));
        }
        let mut r = mul_coef(visc.as_ref(), k.inv_rho.as_ref());
        r = Mat::from_fn(b, np, |p, q| -r[(p, q)]);
        if i == j {
            add_mul_coef(&mut r, ex.phi.as_ref(), k.c.as_ref());
        }
        add_mul_coef(&mut r, ex.w[i].as_ref(), k.v[j].as_ref());
        out_w.push(Mat::from_fn(b, np, |p, q| r[(p, q)] * ii));
    }
    grid.pack(out_phi.as_ref(), &out_w)
}

fn apply_b2_raw(grid: &CellGrid, k: &Coefficients, j: usize, kk: usize, x: MatRef<'_, c64>) -> Mat<c64> {
    let n = grid.dim_n();
    let ex = grid.expand(x);
    let (b, np) = (x.nrows(), grid.npts());
    let out_phi = Mat::<c64>::zeros(b, np);
    let mut out_w = vec![Mat::<c64>::zeros(b, np); n];
    if j == kk {
        for i in 0..n {
            let t = mul_coef(ex.w[i].as_ref(), k.inv_rho.as_ref());
            add_scaled(&mut out_w[i], t.as_ref(), c64::new(k.nu, 0.0));
        }
    }
    let t = mul_coef(ex.w[kk].as_ref(), k.inv_rho.as_ref());
    add_scaled(&mut out_w[j], t.as_ref(), c64::new(k.nu_tilde, 0.0));
    grid.pack(out_phi.as_ref(), &out_w)
}

/// Adjoint `L*_η` with respect to `⟨·,·⟩_t` (weights `a` on `φ`, `ρ` on `w`).
pub fn apply_l_adjoint(grid: &CellGrid, k: &Coefficients, eta: &[f64], y: MatRef<'_, c64>) -> Mat<c64> {
    let n = grid.dim_n();
    let ey = grid.expand(y);
    let (b, np) = (y.nrows(), grid.npts());
    let g2 = k.gamma * k.gamma;
    let apsi = mul_coef(ey.phi.as_ref(), k.a.as_ref());
    let g_apsi = grid.grad(apsi.as_ref(), eta);
    let inv_a = map(&k.a, |x| 1.0 / x);
    // φ row
    let mut t = Mat::<c64>::zeros(b, np);
    for d in 0..n {
        add_mul_coef(&mut t, g_apsi[d].as_ref(), k.v[d].as_ref());
    }
    let mut out_phi = mul_coef(t.as_ref(), inv_a.as_ref());
    out_phi = Mat::from_fn(b, np, |p, q| -out_phi[(p, q)]);
    let rz: Vec<Mat<c64>> = ey.w.iter().map(|z| mul_coef(z.as_ref(), k.rho.as_ref())).collect();
    let drz = grid.div(&rz, eta);
    add_scaled(&mut out_phi, drz.as_ref(), c64::new(-g2, 0.0));
    let mut ez = Mat::<c64>::zeros(b, np);
    for i in 0..n {
        add_mul_coef(&mut ez, ey.w[i].as_ref(), k.e[i].as_ref());
    }
    let rho_over_a = Mat::from_fn(k.rho.nrows(), np, |p, q| k.rho[(p, q)] * inv_a[(p, q)]);
    add_mul_coef(&mut out_phi, ez.as_ref(), rho_over_a.as_ref());
    // w rows
    let gz: Vec<Vec<Mat<c64>>> = ey.w.iter().map(|z| grid.grad(z.as_ref(), eta)).collect();
    let mut div = Mat::<c64>::zeros(b, np);
    for d in 0..n {
        add_scaled(&mut div, gz[d][d].as_ref(), one());
    }
    let mut out_w = Vec::with_capacity(n);
    for i in 0..n {
        let mut r = Mat::from_fn(b, np, |p, q| g_apsi[i][(p, q)] * (-g2));
        let mut visc = Mat::<c64>::zeros(b, np);
        for d in 0..n {
            let g = grid.deriv(gz[i][d].as_ref(), d, eta);
            add_scaled(&mut visc, g.as_ref(), c64::new(k.nu, 0.0));
        }
        let gd = grid.deriv(div.as_ref(), i, eta);
        add_scaled(&mut visc, gd.as_ref(), c64::new(k.nu_tilde, 0.0));
        let mut inner = visc;
        add_mul_coef(&mut inner, ey.w[i].as_ref(), k.div_rho_v.as_ref());
        let ir = mul_coef(inner.as_ref(), k.inv_rho.as_ref());
        add_scaled(&mut r, ir.as_ref(), -one());
        for d in 0..n {
            let vz = mul_coef(gz[i][d].as_ref(), k.v[d].as_ref());
            add_scaled(&mut r, vz.as_ref(), -one());
            add_mul_coef(&mut r, ey.w[d].as_ref(), k.grad_v[d][i].as_ref());
        }
        out_w.push(r);
    }
    grid.pack(out_phi.as_ref(), &out_w)
}

/// Which operator an [`OperatorMatrix`] holds.
#[derive(Clone, Debug, PartialEq)]
pub enum OperatorKind {
    L,
    B1(usize),
    B2(usize, usize),
    Adjoint,
}

/// Dense matrix on packed DOFs, column `j` = operator applied to unit vector `j`.
#[derive(Clone, Debug)]
pub struct OperatorMatrix {
    pub matrix: Mat<c64>,
    pub eta: Vec<f64>,
    pub time_sample: Option<usize>,
    pub kind: OperatorKind,
}

fn assemble_with(grid: &CellGrid, f: impl Fn(MatRef<'_, c64>) -> Mat<c64>) -> Mat<c64> {
    let n = grid.ndof();
    let id = Mat::<c64>::from_fn(n, n, |i, j| if i == j { one() } else { zero() });
    // row r of the output is (A e_r)ᵀ
    f(id.as_ref()).transpose().to_owned()
}

fn single_row(k: &Coefficients, t: Option<usize>) -> Result<Coefficients> {
    match (k.rows(), t) {
        (1, _) => Ok(k.clone()),
        (_, Some(m)) if m < k.rows() => Ok(k.row(m)),
        _ => Err(Error::InvalidParameter("time sample required for space-time coefficients".into())),
    }
}

pub fn assemble_l(grid: &CellGrid, k: &Coefficients, t: Option<usize>, eta: &[f64]) -> Result<OperatorMatrix> {
    let k1 = single_row(k, t)?;
    Ok(OperatorMatrix {
        matrix: assemble_with(grid, |x| apply_l(grid, &k1, eta, x)),
        eta: eta.to_vec(),
        time_sample: t,
        kind: OperatorKind::L,
    })
}

pub fn assemble_b1(grid: &CellGrid, k: &Coefficients, t: Option<usize>, j: usize) -> Result<OperatorMatrix> {
    if j + 1 >= grid.dim_n() {
        return Err(Error::InvalidParameter(format!("B1 index {j} out of range")));
    }
    let k1 = single_row(k, t)?;
    Ok(OperatorMatrix {
        matrix: assemble_with(grid, |x| apply_b1(grid, &k1, j, x)),
        eta: vec![],
        time_sample: t,
        kind: OperatorKind::B1(j),
    })
}

pub fn assemble_b2(grid: &CellGrid, k: &Coefficients, t: Option<usize>, j: usize, kk: usize) -> Result<OperatorMatrix> {
    if j + 1 >= grid.dim_n() || kk + 1 >= grid.dim_n() {
        return Err(Error::InvalidParameter(format!("B2 index ({j},{kk}) out of range")));
    }
    let k1 = single_row(k, t)?;
    Ok(OperatorMatrix {
        matrix: assemble_with(grid, |x| apply_b2(grid, &k1, j, kk, x)),
        eta: vec![],
        time_sample: t,
        kind: OperatorKind::B2(j, kk),
    })
}

pub fn assemble_adjoint(grid: &CellGrid, k: &Coefficients, t: Option<usize>, eta: &[f64]) -> Result<OperatorMatrix> {
    let k1 = single_row(k, t)?;
    Ok(OperatorMatrix {
        matrix: assemble_with(grid, |x| apply_l_adjoint(grid, &k1, eta, x)),
        eta: eta.to_vec(),
        time_sample: t,
        kind: OperatorKind::Adjoint,
    })
}

/// Per-horizontal-mode blocks of the rest-state operator `L_η`.
///
/// The rest-state operator commutes with horizontal translations, so in
/// horizontal Fourier space it is block diagonal with blocks of size
/// `nz + n (nz - 2)`. Blocks are extracted from the matrix-free operator.
pub fn rest_mode_blocks(grid: &CellGrid, params: &Params, eta: &[f64]) -> Vec<Mat<c64>> {
    rest_blocks_with(grid, params, eta, apply_l)
}

/// Rest blocks of the unfiltered operator (used by the nonlinear solver).
pub fn rest_mode_blocks_unfiltered(grid: &CellGrid, params: &Params, eta: &[f64]) -> Vec<Mat<c64>> {
    rest_blocks_with(grid, params, eta, apply_l_raw)
}

fn rest_blocks_with(
    grid: &CellGrid,
    params: &Params,
    eta: &[f64],
    f: fn(&CellGrid, &Coefficients, &[f64], MatRef<'_, c64>) -> Mat<c64>,
) -> Vec<Mat<c64>> {
    let k = Coefficients::trivial(grid, params);
    let nd = grid.ndof();
    let id = Mat::<c64>::from_fn(nd, nd, |i, j| if i == j { one() } else { zero() });
    // rows are mode-space unit vectors; map them to physical space first
    let phys = grid.packed_to_modes(id.as_ref(), true);
    let out = f(grid, &k, eta, phys.as_ref());
    let modes = grid.packed_to_modes(out.as_ref(), false);
    let bs = grid.block_size();
    (0..grid.nh_total())
        .map(|kappa| {
            let runs = grid.block_runs(kappa);
            let mut rows = Vec::with_capacity(bs);
            for (s, l) in &runs {
                rows.extend(*s..*s + l);
            }
            let g = grid.gather_block(modes.as_ref(), kappa);
            // column `col` of the block is the image of slot `col`
            Mat::from_fn(bs, bs, |r, col| g[(rows[col], r)])
        })
        .collect()
}

/// One matrix per horizontal mode, acting on mode-space packed batches by
/// `x_κ ↦ x_κ Mᵀ` (i.e. `M` applied to each row as a column vector).
#[derive(Clone, Debug)]
pub struct ModeBlocks {
    pub mats: Vec<Mat<c64>>,
}

impl ModeBlocks {
    /// `Σ_t s_t M_t x_t` over mode-space inputs, block by block.
    pub fn combine(grid: &CellGrid, terms: &[(&ModeBlocks, MatRef<'_, c64>, c64)]) -> Mat<c64> {
        let b = terms[0].1.nrows();
        let mut out = Mat::<c64>::zeros(b, grid.ndof());
        let bs = grid.block_size();
        for kappa in 0..grid.nh_total() {
            let mut acc = Mat::<c64>::zeros(b, bs);
            for (m, x, s) in terms {
                let xb = grid.gather_block(*x, kappa);
                faer::linalg::matmul::matmul(
                    acc.as_mut(),
                    faer::Accum::Add,
                    xb.as_ref(),
                    m.mats[kappa].transpose(),
                    *s,
                    crate::linalg::par(),
                );
            }
            grid.scatter_block(&mut out, acc.as_ref(), kappa);
        }
        out
    }

    pub fn map(&self, f: impl Fn(&Mat<c64>) -> Mat<c64>) -> Self {
        Self { mats: self.mats.iter().map(f).collect() }
    }
}

/// Bogovskii-type right inverse of the divergence: velocity of the Stokes
/// saddle problem `-Δv + ∇q = 0, div v = f, v = 0` on the walls, solved per
/// horizontal mode by a pseudo-inverse.
#[derive(Clone, Debug)]
pub struct Bogovskii {
    systems: Vec<Mat<c64>>,
    blocks: Vec<Mat<c64>>,
}

impl Bogovskii {
    pub fn new(grid: &CellGrid) -> Result<Self> {
        let n = grid.dim_n();
        let nz = grid.nz();
        let ni = nz - 2;
        let bs = grid.block_size();
        let dz = grid.dz_matrix();
        let dzz = crate::linalg::mul(dz, dz);
        let mut blocks = Vec::with_capacity(grid.nh_total());
        let mut systems = Vec::with_capacity(grid.nh_total());
        for kappa in 0..grid.nh_total() {
            let s = grid.mode_symbol(kappa, &[]);
            let s2: f64 = s.iter().map(|v| v * v).sum();
            // unknowns: q (nz) then v_i (ni each); equations: div (nz) then momentum (ni each)
            let mut m = Mat::<c64>::zeros(bs, bs);
            for i in 0..n {
                for r in 0..nz {
                    for col in 0..ni {
                        let zc = col + 1;
                        let val = if i + 1 < n {
                            if r == zc {
                                c64::new(0.0, s[i])
                            } else {
                                zero()
                            }
                        } else {
                            dz[(r, zc)]
                        };
                        m[(r, nz + i * ni + col)] = val;
                    }
                }
                for r in 0..ni {
                    let zr = r + 1;
                    for col in 0..ni {
                        let zc = col + 1;
                        let mut val = -dzz[(zr, zc)];
                        if zr == zc {
                            val += s2;
                        }
                        m[(nz + i * ni + r, nz + i * ni + col)] = val;
                    }
                    for col in 0..nz {
                        let val = if i + 1 < n {
                            if col == zr {
                                c64::new(0.0, s[i])
                            } else {
                                zero()
                            }
                        } else {
                            dz[(zr, col)]
                        };
                        m[(nz + i * ni + r, col)] = val;
                    }
                }
            }
            blocks.push(pinv(m.as_ref(), 1e-12)?);
            systems.push(m);
        }
        Ok(Self { systems, blocks })
    }

    /// `B f` for a batch of mean-zero point fields; returns full velocity fields.
    pub fn apply(&self, grid: &CellGrid, f: MatRef<'_, c64>) -> Result<Vec<Mat<c64>>> {
        let n = grid.dim_n();
        let (nz, ni, np) = (grid.nz(), grid.nz() - 2, grid.npts());
        let means = grid.mean(f);
        let scale: Vec<f64> = grid.l2_sq(f).iter().map(|v| v.sqrt() / grid.cell_volume().sqrt()).collect();
        for (m, s) in means.iter().zip(&scale) {
            if m.norm() > 1e-10 * s.max(1e-300) {
                return Err(Error::Incompatible("Bogovskii operator needs mean-zero input".into()));
            }
        }
        let fm = grid.points_to_modes(f, false);
        let b = f.nrows();
        let mut vm = vec![Mat::<c64>::zeros(b, np); n];
        let bs = grid.block_size();
        for (kappa, (p, m)) in self.blocks.iter().zip(&self.systems).enumerate() {
            for r in 0..b {
                let mut rhs = Mat::<c64>::zeros(bs, 1);
                for z in 0..nz {
                    rhs[(z, 0)] = fm[(r, kappa * nz + z)];
                }
                // one step of iterative refinement
                let mut x = crate::linalg::mul(p.as_ref(), rhs.as_ref());
                let res = &rhs - crate::linalg::mul(m.as_ref(), x.as_ref());
                x += crate::linalg::mul(p.as_ref(), res.as_ref());
                for i in 0..n {
                    for zi in 0..ni {
                        vm[i][(r, kappa * nz + zi + 1)] = x[(nz + i * ni + zi, 0)];
                    }
                }
            }
        }
        Ok(vm.iter().map(|m| grid.points_to_modes(m.as_ref(), true)).collect())
    }
}

/// Rest-state weights (`1/γ²` on `φ`, `1` on `w`), the `‖·‖_{L²,γ}` inner product.
pub fn rest_weights(grid: &CellGrid, gamma: f64) -> (Vec<f64>, Vec<f64>) {
    (vec![1.0 / (gamma * gamma); grid.npts()], vec![1.0; grid.npts()])
}

/// Modified inner product `⟨u1,u2⟩_t - δ[(w1, Bφ2) + (Bφ1, w2)]` per batch row.
pub fn inner_bogovskii(
    grid: &CellGrid,
    u1: MatRef<'_, c64>,
    u2: MatRef<'_, c64>,
    delta: f64,
    bog: &Bogovskii,
    weight_phi: &[f64],
    weight_w: &[f64],
) -> Result<Vec<c64>> {
    let base = grid.inner_weighted(u1, u2, weight_phi, weight_w);
    if delta == 0.0 {
        return Ok(base);
    }
    let e1 = grid.expand(u1);
    let e2 = grid.expand(u2);
    let b1 = bog.apply(grid, e1.phi.as_ref())?;
    let b2 = bog.apply(grid, e2.phi.as_ref())?;
    let qw = grid.quad_weights();
    Ok(base
        .into_iter()
        .enumerate()
        .map(|(r, v)| {
            let mut s = zero();
            for i in 0..grid.dim_n() {
                for p in 0..grid.npts() {
                    s += (e1.w[i][(r, p)] * b2[i][(r, p)].conj() + b1[i][(r, p)] * e2.w[i][(r, p)].conj()) * qw[p];
                }
            }
            v - s * delta
        })
        .collect())
}

/// Default `δ = (1/4) min{1/(ν+ν̃), ν/γ², 1/γ}`.
pub fn default_delta(params: &Params) -> f64 {
    let g = params.gamma;
    0.25 * (1.0 / params.nu_sum()).min(params.nu / (g * g)).min(1.0 / g)
}

/// Largest `δ ≤ δ_0` (by halving) for which `½‖u‖² ≤ ((u,u)) ≤ (3/2)‖u‖²`
/// holds on every sample row.
pub fn calibrate_delta(grid: &CellGrid, samples: MatRef<'_, c64>, delta0: f64, gamma: f64, bog: &Bogovskii) -> Result<f64> {
    let (wa, wr) = rest_weights(grid, gamma);
    let mut delta = delta0;
    for _ in 0..60 {
        let m = inner_bogovskii(grid, samples, samples, delta, bog, &wa, &wr)?;
        let base = grid.norm_l2_gamma_sq(samples, gamma);
        if m.iter().zip(&base).all(|(x, b)| x.re >= 0.5 * b && x.re <= 1.5 * b) {
            return Ok(delta);
        }
        delta *= 0.5;
    }
    Err(Error::Numerical("no admissible delta found".into()))
}

/// Closed-form adjoint kernel `u0*(t) = (γ²ρ/(p'(ρ)|Ω|), 0)` as a space-time
/// batch, normalized so that `⟨⟨u, u0*⟩⟩ = «φ»`.
pub fn adjoint_kernel(grid: &CellGrid, k: &Coefficients) -> Mat<c64> {
    let vol = grid.cell_volume();
    let rows = k.rows();
    let mut out = Mat::<c64>::zeros(rows, grid.ndof());
    for r in 0..rows {
        for p in 0..grid.npts() {
            out[(r, p)] = c64::new(1.0 / (k.a[(r, p)].re * vol), 0.0);
        }
    }
    out
}

/// `⟨⟨u, v⟩⟩ = (1/N_t) Σ_m ⟨u(t_m), v(t_m)⟩_{t_m}` for space-time batches.
pub fn pairing(grid: &CellGrid, k: &Coefficients, u: MatRef<'_, c64>, v: MatRef<'_, c64>) -> c64 {
    let nt = u.nrows();
    let mut s = zero();
    for m in 0..nt {
        let (wa, wr) = k.weights(if k.rows() == 1 { 0 } else { m });
        s += grid.inner_weighted(u.subrows(m, 1), v.subrows(m, 1), &wa, &wr)[0];
    }
    s / nt as f64
}

/// Space-time mean `«φ»` of a packed space-time batch.
pub fn double_mean_phi(grid: &CellGrid, u: MatRef<'_, c64>) -> c64 {
    let m = grid.mean(u.subcols(0, grid.npts()));
    m.iter().sum::<c64>() / u.nrows() as f64
}

/// `Π^(0) u = «φ» u^(0)`.
pub fn projection_pi0(grid: &CellGrid, u: MatRef<'_, c64>, u0: MatRef<'_, c64>) -> Mat<c64> {
    let s = double_mean_phi(grid, u);
    Mat::from_fn(u0.nrows(), u0.ncols(), |i, j| u0[(i, j)] * s)
}

/// `Π̃^(0) u = (⟨φ(t)⟩, 0)`.
pub fn projection_mean_mode(grid: &CellGrid, u: MatRef<'_, c64>) -> Mat<c64> {
    let m = grid.mean(u.subcols(0, grid.npts()));
    let mut out = Mat::<c64>::zeros(u.nrows(), u.ncols());
    for r in 0..u.nrows() {
        for p in 0..grid.npts() {
            out[(r, p)] = m[r];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (CellGrid, Params) {
        let p = Params::desk(0.0);
        (CellGrid::new(2, &[5], 9, &p.alpha).unwrap(), p)
    }

    #[test]
    fn rest_operator_kills_constants() {
        let (g, p) = setup();
        let k = Coefficients::trivial(&g, &p);
        let mut x = Mat::<c64>::zeros(1, g.ndof());
        for j in 0..g.npts() {
            x[(0, j)] = one();
        }
        let y = apply_l(&g, &k, &[0.0], x.as_ref());
        for j in 0..g.ndof() {
            assert!(y[(0, j)].norm() < 1e-12);
        }
    }

    #[test]
    fn b1_on_rest_state_is_i_times_real() {
        let (g, p) = setup();
        let k = Coefficients::trivial(&g, &p);
        let m = assemble_b1(&g, &k, None, 0).unwrap().matrix;
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                assert!(m[(i, j)].re.abs() < 1e-13);
            }
        }
    }

    #[test]
    fn rest_blocks_match_symbol() {
        let (g, p) = setup();
        let eta = [0.03];
        let blocks = rest_mode_blocks_unfiltered(&g, &p, &eta);
        // φ-row / w_1-column entry is γ² i s at the matching node
        for (kappa, blk) in blocks.iter().enumerate() {
            let s = g.mode_symbol(kappa, &eta)[0];
            let nz = g.nz();
            let v = blk[(3, nz + 2)];
            assert!((v - c64::new(0.0, p.gamma * p.gamma * s)).norm() < 1e-9 * p.gamma * p.gamma);
        }
    }

    #[test]
    fn filter_is_mean_preserving_projection() {
        let (g, _) = setup();
        let x = Mat::<c64>::from_fn(2, g.ndof(), |i, j| c64::new(((i * 7 + j * 13) % 11) as f64 - 5.0, (j % 3) as f64));
        let px = filter_phi(&g, x.as_ref());
        let ppx = filter_phi(&g, px.as_ref());
        for j in 0..g.ndof() {
            assert!((ppx[(1, j)] - px[(1, j)]).norm() < 1e-12);
        }
        assert!((double_mean_phi(&g, px.as_ref()) - double_mean_phi(&g, x.as_ref())).norm() < 1e-12);
    }

    #[test]
    fn filtered_rest_block_has_one_dimensional_kernel() {
        let (g, p) = setup();
        let a = &rest_mode_blocks(&g, &p, &[0.0])[0];
        let s = a.svd().unwrap();
        let sv = s.S().column_vector();
        let n = sv.nrows();
        assert!(sv[n - 1].re < 1e-10 * sv[0].re);
        assert!(sv[n - 2].re > 1e-8 * sv[0].re);
    }

    #[test]
    fn projection_of_constant() {
        let (g, _) = setup();
        let mut u0 = Mat::<c64>::zeros(4, g.ndof());
        for r in 0..4 {
            for j in 0..g.npts() {
                u0[(r, j)] = one();
            }
        }
        let pu = projection_pi0(&g, u0.as_ref(), u0.as_ref());
        for j in 0..g.ndof() {
            assert!((pu[(2, j)] - u0[(2, j)]).norm() < 1e-13);
        }
    }
}
