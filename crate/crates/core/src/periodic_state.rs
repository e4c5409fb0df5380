//! Space-time periodic base state.
//!
//! The state is marched in the scaled variables `φ = γ²(ρ - 1)`, `w = v`:
//!
//! ```text
//! ∂_t φ + γ² div w = f,                 f = -div(φ w)
//! ∂_t w - νΔw - ν̃∇div w + ∇φ = g,       g = S G - w·∇w + (1/ρ - 1)(νΔw + ν̃∇div w)
//!                                           + (1 - p'(ρ)/ρ) ∇φ
//! ```
//!
//! starting from the stationary Lamé solution and integrating period after
//! period until the state repeats. The linear part is integrated exactly
//! per horizontal mode (exponential Runge-Kutta, fourth order).

use faer::{c64, Mat, MatRef};
use serde::Serialize;

use crate::cell_grid::{add_scaled, mul_coef, CellGrid, TimePeriodicField};
use crate::config_params::{ForceField, Params, SolverSection};
use crate::linalg::{one, phi_functions, zero};
use crate::linear_operators::{rest_mode_blocks, rest_mode_blocks_unfiltered, Coefficients, ModeBlocks};
use crate::{Error, Result};

/// One period of the state, `nt` uniform samples of the packed `(φ, w)`.
#[derive(Clone, Debug)]
pub struct PeriodicState {
    pub params: Params,
    pub samples: Mat<c64>,
    /// `‖u(m) - u(m-1)‖_{L²,γ}` after each marched period.
    pub defect_history: Vec<f64>,
    pub periods: usize,
    pub min_rho: f64,
}

impl PeriodicState {
    pub fn trivial(grid: &CellGrid, params: &Params, nt: usize) -> Self {
        Self {
            params: params.clone(),
            samples: Mat::zeros(nt, grid.ndof()),
            defect_history: vec![0.0],
            periods: 1,
            min_rho: 1.0,
        }
    }

    pub fn nt(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_trivial(&self) -> bool {
        (0..self.samples.ncols()).all(|j| (0..self.samples.nrows()).all(|i| self.samples[(i, j)] == zero()))
    }

    pub fn phi(&self, grid: &CellGrid) -> Mat<c64> {
        self.samples.as_ref().subcols(0, grid.npts()).to_owned()
    }

    pub fn velocity(&self, grid: &CellGrid) -> Vec<Mat<c64>> {
        grid.expand(self.samples.as_ref()).w
    }

    /// `ρ_p = 1 + φ/γ²` per sample.
    pub fn rho(&self, grid: &CellGrid) -> Mat<c64> {
        let g2 = self.params.gamma * self.params.gamma;
        let phi = self.phi(grid);
        Mat::from_fn(phi.nrows(), phi.ncols(), |i, j| c64::new(1.0 + phi[(i, j)].re / g2, 0.0))
    }

    /// Linearization coefficients at every sample (space-time rows).
    pub fn coefficients(&self, grid: &CellGrid) -> Result<Coefficients> {
        if self.is_trivial() {
            let mut k = Coefficients::trivial(grid, &self.params);
            k.trivial = true;
            return Ok(k);
        }
        let ex = grid.expand(self.samples.as_ref());
        Coefficients::from_fields(grid, &self.params, ex.phi.as_ref(), &ex.w)
    }

    /// Linearization coefficients at an arbitrary time (trigonometric interpolation).
    pub fn coefficients_at(&self, grid: &CellGrid, t: f64) -> Result<Coefficients> {
        if self.is_trivial() {
            return Ok(Coefficients::trivial(grid, &self.params));
        }
        let row = TimePeriodicField::new(self.samples.clone()).at(t);
        let ex = grid.expand(row.as_ref());
        Coefficients::from_fields(grid, &self.params, ex.phi.as_ref(), &ex.w)
    }

    /// State samples after a time shift by `s` sample intervals.
    pub fn shifted(&self, s: usize) -> Mat<c64> {
        let nt = self.nt();
        Mat::from_fn(nt, self.samples.ncols(), |i, j| self.samples[((i + s) % nt, j)])
    }
}

fn project_mean(grid: &CellGrid, u: &mut Mat<c64>) {
    let m = grid.mean(u.as_ref().subcols(0, grid.npts()));
    for r in 0..u.nrows() {
        for p in 0..grid.npts() {
            u[(r, p)] -= m[r];
        }
    }
}

/// `(f, g)` of the scaled system as a packed batch (walls dropped).
pub fn nonlinear_terms(grid: &CellGrid, params: &Params, force: &ForceField, u: MatRef<'_, c64>, t: f64) -> Result<Mat<c64>> {
    let n = grid.dim_n();
    let (b, np) = (u.nrows(), grid.npts());
    let g2 = params.gamma * params.gamma;
    let ex = grid.expand(u);
    let eta0: [f64; 0] = [];
    let mut inv_rho_m1 = Mat::<c64>::zeros(b, np);
    let mut press = Mat::<c64>::zeros(b, np);
    for p in 0..np {
        for r in 0..b {
            let den = g2 + ex.phi[(r, p)].re;
            if !(den > 0.0) {
                return Err(Error::Numerical("density positivity lost".into()));
            }
            let rho = den / g2;
            inv_rho_m1[(r, p)] = c64::new(1.0 / rho - 1.0, 0.0);
            press[(r, p)] = c64::new(1.0 - params.pressure.dp(rho) / rho, 0.0);
        }
    }
    let flux: Vec<Mat<c64>> = ex.w.iter().map(|wd| mul_coef(wd.as_ref(), ex.phi.as_ref())).collect();
    let mut f = grid.div(&flux, &eta0);
    for v in f.as_mut().col_iter_mut() {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
    let gw: Vec<Vec<Mat<c64>>> = ex.w.iter().map(|wi| grid.grad(wi.as_ref(), &eta0)).collect();
    let mut div = Mat::<c64>::zeros(b, np);
    for d in 0..n {
        add_scaled(&mut div, gw[d][d].as_ref(), one());
    }
    let gphi = grid.grad(ex.phi.as_ref(), &eta0);
    let force_t = if params.s_force != 0.0 && force.scale != 0.0 {
        Some(force.eval(grid, t))
    } else {
        None
    };
    let mut g = Vec::with_capacity(n);
    for i in 0..n {
        let mut visc = Mat::<c64>::zeros(b, np);
        for d in 0..n {
            let dd = grid.deriv(gw[i][d].as_ref(), d, &eta0);
            add_scaled(&mut visc, dd.as_ref(), c64::new(params.nu, 0.0));
        }
        let gd = grid.deriv(div.as_ref(), i, &eta0);
        add_scaled(&mut visc, gd.as_ref(), c64::new(params.nu_tilde, 0.0));
        let mut gi = mul_coef(visc.as_ref(), inv_rho_m1.as_ref());
        for d in 0..n {
            let adv = mul_coef(gw[i][d].as_ref(), ex.w[d].as_ref());
            add_scaled(&mut gi, adv.as_ref(), -one());
        }
        let pg = mul_coef(gphi[i].as_ref(), press.as_ref());
        add_scaled(&mut gi, pg.as_ref(), one());
        if let Some(ft) = &force_t {
            for r in 0..b {
                for p in 0..np {
                    gi[(r, p)] += ft[i][(0, p)] * params.s_force;
                }
            }
        }
        g.push(gi);
    }
    Ok(grid.pack(f.as_ref(), &g))
}

/// Exponential fourth-order Runge-Kutta stepper (Cox-Matthews) with the
/// rest-state operator as the exactly integrated linear part. The linear
/// part carries the same checkerboard damping as the linearized operator.
#[derive(Clone, Debug)]
pub struct NonlinearStepper {
    pub h: f64,
    e_half: ModeBlocks,
    p1_half: ModeBlocks,
    e_full: ModeBlocks,
    f_u: ModeBlocks,
    f_ab: ModeBlocks,
    f_c: ModeBlocks,
}

impl NonlinearStepper {
    pub fn new(grid: &CellGrid, params: &Params, h: f64) -> Self {
        let blocks = rest_mode_blocks(grid, params, &[]);
        let mut e_half = Vec::new();
        let mut p1_half = Vec::new();
        let mut e_full = Vec::new();
        let mut f_u = Vec::new();
        let mut f_ab = Vec::new();
        let mut f_c = Vec::new();
        for a in &blocks {
            let zh = Mat::from_fn(a.nrows(), a.ncols(), |i, j| -a[(i, j)] * (h / 2.0));
            let ph = phi_functions(zh.as_ref(), 1);
            let z = Mat::from_fn(a.nrows(), a.ncols(), |i, j| -a[(i, j)] * h);
            let pf = phi_functions(z.as_ref(), 3);
            let (p1, p2, p3) = (&pf[1], &pf[2], &pf[3]);
            f_u.push(Mat::from_fn(a.nrows(), a.ncols(), |i, j| {
                (p1[(i, j)] - p2[(i, j)] * 3.0 + p3[(i, j)] * 4.0) * h
            }));
            f_ab.push(Mat::from_fn(a.nrows(), a.ncols(), |i, j| (p2[(i, j)] - p3[(i, j)] * 2.0) * (2.0 * h)));
            f_c.push(Mat::from_fn(a.nrows(), a.ncols(), |i, j| (p3[(i, j)] * 4.0 - p2[(i, j)]) * h));
            e_half.push(ph[0].clone());
            p1_half.push(Mat::from_fn(a.nrows(), a.ncols(), |i, j| ph[1][(i, j)] * (h / 2.0)));
            e_full.push(pf[0].clone());
        }
        Self {
            h,
            e_half: ModeBlocks { mats: e_half },
            p1_half: ModeBlocks { mats: p1_half },
            e_full: ModeBlocks { mats: e_full },
            f_u: ModeBlocks { mats: f_u },
            f_ab: ModeBlocks { mats: f_ab },
            f_c: ModeBlocks { mats: f_c },
        }
    }

    /// Advances `u` (packed batch) from `t` to `t + h`; the mean of `φ` is
    /// projected back to zero.
    pub fn step(&self, grid: &CellGrid, params: &Params, force: &ForceField, u: MatRef<'_, c64>, t: f64) -> Result<Mat<c64>> {
        let h = self.h;
        let modes = |x: MatRef<'_, c64>| grid.packed_to_modes(x, false);
        let phys = |x: MatRef<'_, c64>| grid.packed_to_modes(x, true);
        let o = one();
        let um = modes(u);
        let nu_ = nonlinear_terms(grid, params, force, u, t)?;
        let num = modes(nu_.as_ref());
        let eu = ModeBlocks::combine(grid, &[(&self.e_half, um.as_ref(), o)]);
        let am = ModeBlocks::combine(grid, &[(&self.e_half, um.as_ref(), o), (&self.p1_half, num.as_ref(), o)]);
        let a = phys(am.as_ref());
        let na = modes(nonlinear_terms(grid, params, force, a.as_ref(), t + h / 2.0)?.as_ref());
        let mut bm = eu.clone();
        bm += ModeBlocks::combine(grid, &[(&self.p1_half, na.as_ref(), o)]);
        let b = phys(bm.as_ref());
        let nb = modes(nonlinear_terms(grid, params, force, b.as_ref(), t + h / 2.0)?.as_ref());
        let two_nb_minus_nu = Mat::from_fn(nb.nrows(), nb.ncols(), |i, j| nb[(i, j)] * 2.0 - num[(i, j)]);
        let cm = ModeBlocks::combine(
            grid,
            &[(&self.e_half, am.as_ref(), o), (&self.p1_half, two_nb_minus_nu.as_ref(), o)],
        );
        let c = phys(cm.as_ref());
        let nc = modes(nonlinear_terms(grid, params, force, c.as_ref(), t + h)?.as_ref());
        let nab = Mat::from_fn(na.nrows(), na.ncols(), |i, j| na[(i, j)] + nb[(i, j)]);
        let outm = ModeBlocks::combine(
            grid,
            &[
                (&self.e_full, um.as_ref(), o),
                (&self.f_u, num.as_ref(), o),
                (&self.f_ab, nab.as_ref(), o),
                (&self.f_c, nc.as_ref(), o),
            ],
        );
        let mut out = phys(outm.as_ref());
        // the state is real; drop the rounding-level imaginary parts
        for v in out.as_mut().col_iter_mut() {
            for x in v.iter_mut() {
                *x = c64::new(x.re, 0.0);
            }
        }
        project_mean(grid, &mut out);
        let g2 = params.gamma * params.gamma;
        for r in 0..out.nrows() {
            for p in 0..grid.npts() {
                if !(g2 + out[(r, p)].re > 0.0) {
                    return Err(Error::Numerical("density positivity lost".into()));
                }
            }
        }
        Ok(out)
    }
}

/// One step of size `dt` from time `t`.
pub fn step_nonlinear(grid: &CellGrid, params: &Params, force: &ForceField, u: MatRef<'_, c64>, t: f64, dt: f64) -> Result<Mat<c64>> {
    NonlinearStepper::new(grid, params, dt).step(grid, params, force, u, t)
}

/// Dirichlet Lamé solve `-νΔw - ν̃∇div w = r` per horizontal mode.
pub struct LameSolver {
    blocks: ModeBlocks,
}

impl LameSolver {
    pub fn new(grid: &CellGrid, params: &Params) -> Self {
        let nz = grid.nz();
        let bs = grid.block_size();
        let mats = rest_mode_blocks_unfiltered(grid, params, &[])
            .into_iter()
            .map(|a| {
                let k = bs - nz;
                let sub = a.as_ref().submatrix(nz, nz, k, k).to_owned();
                let id = Mat::<c64>::from_fn(k, k, |i, j| if i == j { one() } else { zero() });
                let inv = crate::linalg::solve(sub.as_ref(), id.as_ref());
                let mut m = Mat::<c64>::zeros(bs, bs);
                m.as_mut().submatrix_mut(nz, nz, k, k).copy_from(inv);
                m
            })
            .collect();
        Self { blocks: ModeBlocks { mats } }
    }

    /// Velocity (full point fields) for right-hand sides given as full point fields.
    pub fn solve(&self, grid: &CellGrid, rhs: &[Mat<c64>]) -> Vec<Mat<c64>> {
        let zero_phi = Mat::<c64>::zeros(rhs[0].nrows(), grid.npts());
        let packed = grid.pack(zero_phi.as_ref(), rhs);
        let m = grid.packed_to_modes(packed.as_ref(), false);
        let s = ModeBlocks::combine(grid, &[(&self.blocks, m.as_ref(), one())]);
        let out = grid.packed_to_modes(s.as_ref(), true);
        grid.expand(out.as_ref()).w
    }
}

/// Stationary starting point `(0, w)` with `-νΔw - ν̃∇div w = S G(0) - w·∇w`
/// solved by Picard iteration.
pub fn stationary_initializer(grid: &CellGrid, params: &Params, force: &ForceField, tol: f64) -> Result<Mat<c64>> {
    let n = grid.dim_n();
    let np = grid.npts();
    let lame = LameSolver::new(grid, params);
    let g0 = if force.scale != 0.0 {
        force.eval(grid, 0.0)
    } else {
        vec![Mat::<c64>::zeros(1, np); n]
    };
    let sg: Vec<Mat<c64>> = g0
        .iter()
        .map(|m| Mat::from_fn(1, np, |_, p| m[(0, p)] * params.s_force))
        .collect();
    let mut w = vec![Mat::<c64>::zeros(1, np); n];
    let mut history = Vec::new();
    let mut growing = 0;
    for _ in 0..500 {
        let mut rhs = sg.clone();
        for i in 0..n {
            for d in 0..n {
                let dw = grid.deriv(w[i].as_ref(), d, &[]);
                let adv = mul_coef(dw.as_ref(), w[d].as_ref());
                add_scaled(&mut rhs[i], adv.as_ref(), -one());
            }
        }
        let next: Vec<Mat<c64>> = lame
            .solve(grid, &rhs)
            .into_iter()
            .map(|m| Mat::from_fn(1, np, |_, p| c64::new(m[(0, p)].re, 0.0)))
            .collect();
        let inc: f64 = next
            .iter()
            .zip(&w)
            .map(|(a, b)| {
                let d = Mat::from_fn(1, np, |_, p| a[(0, p)] - b[(0, p)]);
                grid.l2_sq(d.as_ref())[0]
            })
            .sum::<f64>()
            .sqrt();
        let size: f64 = next.iter().map(|a| grid.l2_sq(a.as_ref())[0]).sum::<f64>().sqrt();
        w = next;
        if let Some(&last) = history.last() {
            if inc > last {
                growing += 1;
            } else {
                growing = 0;
            }
        }
        history.push(inc);
        if inc <= tol * size {
            let phi = Mat::<c64>::zeros(1, np);
            return Ok(grid.pack(phi.as_ref(), &w));
        }
        if growing >= 5 || !inc.is_finite() {
            return Err(Error::NoConvergence {
                message: "force amplitude outside contraction regime".into(),
                history,
            });
        }
    }
    Err(Error::NoConvergence {
        message: "stationary initializer did not converge".into(),
        history,
    })
}

/// Marches the scaled system from the stationary start until the period map
/// is stationary to `solver.state_tol` (relative, `‖·‖_{L²,γ}`).
pub fn solve_periodic_state(grid: &CellGrid, params: &Params, force: &ForceField, nt: usize, solver: &SolverSection) -> Result<PeriodicState> {
    if nt < 4 || nt % 2 != 0 {
        return Err(Error::InvalidParameter("nt must be even and >= 4".into()));
    }
    let sub = solver.state_substeps.max(1);
    let h = 1.0 / (nt * sub) as f64;
    let stepper = NonlinearStepper::new(grid, params, h);
    let mut u = stationary_initializer(grid, params, force, 1e-14)?;
    let mut history = Vec::new();
    let mut samples = Mat::<c64>::zeros(nt, grid.ndof());
    for period in 1..=solver.max_periods {
        let start = u.clone();
        for m in 0..nt {
            samples.as_mut().row_mut(m).copy_from(u.row(0));
            for s in 0..sub {
                let t = (m * sub + s) as f64 * h;
                u = stepper.step(grid, params, force, u.as_ref(), t)?;
            }
        }
        let diff = Mat::from_fn(1, u.ncols(), |_, j| u[(0, j)] - start[(0, j)]);
        let defect = grid.norm_l2_gamma_sq(diff.as_ref(), params.gamma)[0].sqrt();
        let size = grid.norm_l2_gamma_sq(u.as_ref(), params.gamma)[0].sqrt();
        history.push(defect);
        if defect <= solver.state_tol * size {
            let g2 = params.gamma * params.gamma;
            let mut min_rho = f64::INFINITY;
            for m in 0..nt {
                for p in 0..grid.npts() {
                    min_rho = min_rho.min(1.0 + samples[(m, p)].re / g2);
                }
            }
            return Ok(PeriodicState {
                params: params.clone(),
                samples,
                defect_history: history,
                periods: period,
                min_rho,
            });
        }
    }
    Err(Error::NoConvergence {
        message: format!("no periodic state after {} periods", solver.max_periods),
        history,
    })
}

/// Per-period contraction factors `d_m / d_{m-1}` of a defect history.
pub fn contraction_factors(history: &[f64]) -> Vec<f64> {
    history.windows(2).filter(|w| w[0] > 0.0).map(|w| w[1] / w[0]).collect()
}

/// Space-time L² residuals of the original equations on the stored samples.
#[derive(Clone, Debug, Serialize)]
pub struct ResidualReport {
    pub mass: f64,
    pub momentum: f64,
    /// Largest velocity magnitude at the walls.
    pub wall: f64,
    /// Largest `|⟨ρ(t)⟩ - 1|`.
    pub mean: f64,
}

pub fn residual(grid: &CellGrid, state: &PeriodicState, force: &ForceField) -> Result<ResidualReport> {
    let params = &state.params;
    let n = grid.dim_n();
    let nt = state.nt();
    let np = grid.npts();
    let g2 = params.gamma * params.gamma;
    let eta0: [f64; 0] = [];
    let rho = state.rho(grid);
    let v = state.velocity(grid);
    let rho_t = TimePeriodicField::new(rho.clone()).time_derivative(1).data;
    let rv: Vec<Mat<c64>> = v.iter().map(|vi| mul_coef(vi.as_ref(), rho.as_ref())).collect();
    let mut mass = grid.div(&rv, &eta0);
    mass += &rho_t;
    let mass_n = grid.l2_sq(mass.as_ref()).iter().sum::<f64>() / nt as f64;
    let gv: Vec<Vec<Mat<c64>>> = v.iter().map(|vi| grid.grad(vi.as_ref(), &eta0)).collect();
    let mut div = Mat::<c64>::zeros(nt, np);
    for d in 0..n {
        add_scaled(&mut div, gv[d][d].as_ref(), one());
    }
    let p = Mat::from_fn(nt, np, |i, j| c64::new(params.pressure.p(rho[(i, j)].re), 0.0));
    let gp = grid.grad(p.as_ref(), &eta0);
    let mut mom_n = 0.0;
    for i in 0..n {
        let vt = TimePeriodicField::new(v[i].clone()).time_derivative(1).data;
        let mut acc = vt;
        for d in 0..n {
            let a = mul_coef(gv[i][d].as_ref(), v[d].as_ref());
            acc += &a;
        }
        let mut r = mul_coef(acc.as_ref(), rho.as_ref());
        for d in 0..n {
            let dd = grid.deriv(gv[i][d].as_ref(), d, &eta0);
            add_scaled(&mut r, dd.as_ref(), c64::new(-params.nu, 0.0));
        }
        let gd = grid.deriv(div.as_ref(), i, &eta0);
        add_scaled(&mut r, gd.as_ref(), c64::new(-params.nu_tilde, 0.0));
        add_scaled(&mut r, gp[i].as_ref(), c64::new(g2, 0.0));
        if params.s_force != 0.0 {
            for m in 0..nt {
                let f = &force.samples[i].data;
                for q in 0..np {
                    r[(m, q)] -= f[(m, q)] * rho[(m, q)] * params.s_force;
                }
            }
        }
        // rows at the walls carry the boundary condition, not the equation
        for m in 0..nt {
            for h in 0..grid.nh_total() {
                r[(m, h * grid.nz())] = zero();
                r[(m, h * grid.nz() + grid.nz() - 1)] = zero();
            }
        }
        mom_n += grid.l2_sq(r.as_ref()).iter().sum::<f64>() / nt as f64;
    }
    let mut wall = 0.0f64;
    let mut mean = 0.0f64;
    let means = grid.mean(rho.as_ref());
    for m in 0..nt {
        mean = mean.max((means[m] - 1.0).norm());
        for vi in &v {
            for h in 0..grid.nh_total() {
                wall = wall.max(vi[(m, h * grid.nz())].norm()).max(vi[(m, h * grid.nz() + grid.nz() - 1)].norm());
            }
        }
    }
    Ok(ResidualReport {
        mass: mass_n.sqrt(),
        momentum: mom_n.sqrt(),
        wall,
        mean,
    })
}

/// Energy functionals per time sample.
#[derive(Clone, Debug, Serialize)]
pub struct EnergyReport {
    pub times: Vec<f64>,
    pub e2: Vec<f64>,
    pub e4: Vec<f64>,
    pub d2: Vec<f64>,
    pub d4: Vec<f64>,
    /// `γ^{-2}[[φ]]_4²`
    pub phi_4: Vec<f64>,
    /// `[[w]]_4²`
    pub w_4: Vec<f64>,
    /// `ν²/(ν+ν̃) [[w]]_5²`
    pub w_5: Vec<f64>,
    /// `1/(ν+ν̃) [[∇φ]]_3²`
    pub grad_phi_3: Vec<f64>,
    /// `(ν+ν̃)/γ⁴ ‖∂_t² φ‖²`
    pub phi_tt: Vec<f64>,
    /// `max_t E₄ · γ⁴/ν²`
    pub e4_ratio: f64,
    /// `∫ D₄ dt · γ⁴/ν²`
    pub d4_ratio: f64,
}

fn sum_triple(grid: &CellGrid, fields: &[Mat<c64>], m: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; fields[0].nrows()];
    for f in fields {
        let t = grid.triple_norm_sq(&TimePeriodicField::new(f.clone()), m)?;
        for (o, v) in out.iter_mut().zip(t) {
            *o += v;
        }
    }
    Ok(out)
}

/// `E_m = γ^{-2}[[φ]]_m² + [[w]]_m²` and
/// `D_m = ν²/(ν+ν̃)[[w]]_{m+1}² + 1/(ν+ν̃)[[∇φ]]_{m-1}² + (ν+ν̃)/γ⁴‖∂_t^{m/2}φ‖²` for `m = 2, 4`.
pub fn energy_report(grid: &CellGrid, params: &Params, samples: MatRef<'_, c64>) -> Result<EnergyReport> {
    let nt = samples.nrows();
    if nt < 8 {
        return Err(Error::InvalidParameter("energy report needs at least 8 time samples".into()));
    }
    let g2 = params.gamma * params.gamma;
    let ns = params.nu_sum();
    let ex = grid.expand(samples);
    let phi = [ex.phi.clone()];
    let gphi = grid.grad(ex.phi.as_ref(), &[]);
    let parts = |m: usize| -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
        let p = sum_triple(grid, &phi, m)?;
        let w = sum_triple(grid, &ex.w, m)?;
        let w1 = sum_triple(grid, &ex.w, m + 1)?;
        let gp = sum_triple(grid, &gphi, m - 1)?;
        let dt = TimePeriodicField::new(ex.phi.clone()).time_derivative(m / 2);
        let pt = grid.l2_sq(dt.data.as_ref());
        Ok((
            p.iter().map(|v| v / g2).collect(),
            w,
            w1.iter().map(|v| v * params.nu * params.nu / ns).collect(),
            gp.iter().map(|v| v / ns).collect(),
            pt.iter().map(|v| v * ns / (g2 * g2)).collect(),
        ))
    };
    let (p2, w2, w3, gp1, pt1) = parts(2)?;
    let (p4, w4, w5, gp3, pt2) = parts(4)?;
    let add2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + y).collect::<Vec<f64>>();
    let add3 = |a: &[f64], b: &[f64], c: &[f64]| a.iter().zip(b).zip(c).map(|((x, y), z)| x + y + z).collect::<Vec<f64>>();
    let e2 = add2(&p2, &w2);
    let e4 = add2(&p4, &w4);
    let d2 = add3(&w3, &gp1, &pt1);
    let d4 = add3(&w5, &gp3, &pt2);
    let nu2 = params.nu * params.nu;
    let e4_ratio = e4.iter().cloned().fold(0.0, f64::max) * g2 * g2 / nu2;
    let d4_ratio = d4.iter().sum::<f64>() / nt as f64 * g2 * g2 / nu2;
    Ok(EnergyReport {
        times: (0..nt).map(|m| m as f64 / nt as f64).collect(),
        e2,
        e4,
        d2,
        d4,
        phi_4: p4,
        w_4: w4,
        w_5: w5,
        grad_phi_3: gp3,
        phi_tt: pt2,
        e4_ratio,
        d4_ratio,
    })
}
