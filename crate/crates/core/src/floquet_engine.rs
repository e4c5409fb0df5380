//! Linear propagation about the periodic state, monodromy operators and
//! their spectra, and the periodic linear solve `(∂_t + L) u = f`.
//!
//! Propagation splits `L_η(t) = A_η + M_η(t)` with `A_η` the rest-state
//! operator (block diagonal in horizontal modes, integrated exactly) and
//! `M_η(t)` the variable-coefficient remainder (treated explicitly by a
//! second-order exponential Runge-Kutta step).

use std::f64::consts::PI;

use faer::{c64, Mat, MatRef};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cell_grid::{fourier, time_derivative_matrix, time_frequency, CellGrid};
use crate::linalg::{gmres, one, phi_functions, pinv, vnorm, zero, GmresStats};
use crate::linear_operators::{apply_l, double_mean_phi, rest_mode_blocks, Coefficients, ModeBlocks};
use crate::periodic_state::PeriodicState;
use crate::{Error, Result};

/// Fixed-step propagator for `∂_t u + L_η(t) u = 0` over one period.
#[derive(Clone, Debug)]
pub struct Propagator {
    pub eta: Vec<f64>,
    pub steps: usize,
    pub h: f64,
    e: ModeBlocks,
    hp1: ModeBlocks,
    hp2: ModeBlocks,
    /// `e^{-A_η}`, used for whole periods when the state is at rest.
    period: ModeBlocks,
    /// Remainder coefficients at every step time (`None` at rest).
    remainder: Option<Vec<Coefficients>>,
}

impl Propagator {
    /// `substeps` integrator steps per stored state sample.
    pub fn new(grid: &CellGrid, state: &PeriodicState, eta: &[f64], substeps: usize) -> Result<Self> {
        if eta.len() + 1 != grid.dim_n() {
            return Err(Error::InvalidParameter(format!(
                "Bloch parameter has {} entries, expected {}",
                eta.len(),
                grid.dim_n() - 1
            )));
        }
        let sub = substeps.max(1);
        let steps = state.nt() * sub;
        let h = 1.0 / steps as f64;
        let blocks = rest_mode_blocks(grid, &state.params, eta);
        let (mut e, mut hp1, mut hp2, mut period) = (vec![], vec![], vec![], vec![]);
        for a in &blocks {
            let z = Mat::from_fn(a.nrows(), a.ncols(), |i, j| -a[(i, j)] * h);
            let f = phi_functions(z.as_ref(), 2);
            e.push(f[0].clone());
            hp1.push(Mat::from_fn(a.nrows(), a.ncols(), |i, j| f[1][(i, j)] * h));
            hp2.push(Mat::from_fn(a.nrows(), a.ncols(), |i, j| f[2][(i, j)] * h));
            let zp = Mat::from_fn(a.nrows(), a.ncols(), |i, j| -a[(i, j)]);
            period.push(crate::linalg::expm(zp.as_ref()));
        }
        let remainder = if state.is_trivial() {
            None
        } else if sub == 1 {
            let k = state.coefficients(grid)?;
            Some((0..steps).map(|m| k.row(m).minus_trivial()).collect())
        } else {
            Some(
                (0..steps)
                    .map(|s| state.coefficients_at(grid, s as f64 * h).map(|k| k.minus_trivial()))
                    .collect::<Result<Vec<_>>>()?,
            )
        };
        Ok(Self {
            eta: eta.to_vec(),
            steps,
            h,
            e: ModeBlocks { mats: e },
            hp1: ModeBlocks { mats: hp1 },
            hp2: ModeBlocks { mats: hp2 },
            period: ModeBlocks { mats: period },
            remainder,
        })
    }

    pub fn at_rest(&self) -> bool {
        self.remainder.is_none()
    }

    fn remainder_term(&self, grid: &CellGrid, k: usize, x: MatRef<'_, c64>) -> Mat<c64> {
        let r = &self.remainder.as_ref().expect("remainder present")[k % self.steps];
        let mut y = apply_l(grid, r, &self.eta, x);
        for v in y.as_mut().col_iter_mut() {
            for z in v.iter_mut() {
                *z = -*z;
            }
        }
        grid.packed_to_modes(y.as_ref(), false)
    }

    /// One step from step index `k`.
    pub fn step(&self, grid: &CellGrid, x: MatRef<'_, c64>, k: usize) -> Mat<c64> {
        let xm = grid.packed_to_modes(x, false);
        if self.at_rest() {
            let y = ModeBlocks::combine(grid, &[(&self.e, xm.as_ref(), one())]);
            return grid.packed_to_modes(y.as_ref(), true);
        }
        let nu = self.remainder_term(grid, k, x);
        let am = ModeBlocks::combine(grid, &[(&self.e, xm.as_ref(), one()), (&self.hp1, nu.as_ref(), one())]);
        let a = grid.packed_to_modes(am.as_ref(), true);
        let na = self.remainder_term(grid, k + 1, a.as_ref());
        let d = Mat::from_fn(na.nrows(), na.ncols(), |i, j| na[(i, j)] - nu[(i, j)]);
        let mut out = am;
        out += ModeBlocks::combine(grid, &[(&self.hp2, d.as_ref(), one())]);
        grid.packed_to_modes(out.as_ref(), true)
    }

    /// Propagates a batch over `n` steps starting at step index `k0`;
    /// `record` receives the value before every step.
    pub fn run(&self, grid: &CellGrid, x: MatRef<'_, c64>, k0: usize, n: usize, mut record: Option<&mut Vec<Mat<c64>>>) -> Mat<c64> {
        if self.at_rest() && record.is_none() && k0 % self.steps == 0 && n % self.steps == 0 {
            let mut cur = grid.packed_to_modes(x, false);
            for _ in 0..n / self.steps {
                cur = ModeBlocks::combine(grid, &[(&self.period, cur.as_ref(), one())]);
            }
            return grid.packed_to_modes(cur.as_ref(), true);
        }
        let mut cur = x.to_owned();
        for s in 0..n {
            if let Some(r) = record.as_deref_mut() {
                r.push(cur.clone());
            }
            cur = self.step(grid, cur.as_ref(), k0 + s);
        }
        cur
    }

    /// `U_η(t1, t0) x` for times on the step grid.
    pub fn propagate(&self, grid: &CellGrid, x: MatRef<'_, c64>, t0: f64, t1: f64) -> Result<Mat<c64>> {
        let k0 = (t0 / self.h).round();
        let k1 = (t1 / self.h).round();
        if (k0 * self.h - t0).abs() > 1e-9 || (k1 * self.h - t1).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("times must be multiples of the step {}", self.h)));
        }
        if k1 < k0 || k0 < 0.0 {
            return Err(Error::InvalidParameter("propagation runs forward from t0 >= 0".into()));
        }
        Ok(self.run(grid, x, k0 as usize, (k1 - k0) as usize, None))
    }

    /// Applies the monodromy operator to a batch.
    pub fn period_map(&self, grid: &CellGrid, x: MatRef<'_, c64>) -> Mat<c64> {
        self.run(grid, x, 0, self.steps, None)
    }
}

/// Dense monodromy matrix `U_η(1,0)` on packed DOFs.
#[derive(Clone, Debug)]
pub struct Monodromy {
    pub eta: Vec<f64>,
    pub matrix: Mat<c64>,
}

pub fn monodromy(grid: &CellGrid, prop: &Propagator) -> Monodromy {
    let n = grid.ndof();
    let id = Mat::<c64>::from_fn(n, n, |i, j| if i == j { one() } else { zero() });
    let out = prop.period_map(grid, id.as_ref());
    Monodromy {
        eta: prop.eta.clone(),
        matrix: out.transpose().to_owned(),
    }
}

/// Principal logarithm of a multiplier (`-∞` real part for `μ = 0`).
pub fn principal_log(mu: c64) -> c64 {
    if mu == zero() {
        c64::new(f64::NEG_INFINITY, 0.0)
    } else {
        c64::new(mu.norm().ln(), mu.im.atan2(mu.re))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FloquetSpectrum {
    pub eta: Vec<f64>,
    /// Multipliers sorted by decreasing modulus.
    pub multipliers: Vec<c64>,
    pub exponents: Vec<c64>,
    #[serde(skip)]
    pub leading_vector: Vec<c64>,
    /// `|μ_1| / |μ_2|`
    pub simplicity_ratio: f64,
    /// `-4 ln|μ_2|`
    pub gap: f64,
}

fn finish_spectrum(eta: &[f64], mut pairs: Vec<(c64, Vec<c64>)>) -> FloquetSpectrum {
    pairs.sort_by(|a, b| b.0.norm().partial_cmp(&a.0.norm()).unwrap_or(std::cmp::Ordering::Equal));
    let multipliers: Vec<c64> = pairs.iter().map(|p| p.0).collect();
    let exponents = multipliers.iter().map(|&m| principal_log(m)).collect();
    let m2 = multipliers.get(1).map(|m| m.norm()).unwrap_or(0.0);
    let simplicity_ratio = if m2 > 0.0 { multipliers[0].norm() / m2 } else { f64::INFINITY };
    FloquetSpectrum {
        eta: eta.to_vec(),
        leading_vector: pairs.swap_remove(0).1,
        multipliers,
        exponents,
        simplicity_ratio,
        gap: if m2 > 0.0 { -4.0 * m2.ln() } else { f64::INFINITY },
    }
}

/// Full spectrum of a dense monodromy matrix.
pub fn spectrum(m: &Monodromy) -> Result<FloquetSpectrum> {
    let ev = m
        .matrix
        .eigen()
        .map_err(|e| Error::Numerical(format!("eigensolver failed: {e:?}")))?;
    let s = ev.S().column_vector();
    let u = ev.U();
    let pairs = (0..s.nrows())
        .map(|i| (s[i], (0..u.nrows()).map(|r| u[(r, i)]).collect()))
        .collect();
    Ok(finish_spectrum(&m.eta, pairs))
}

/// Dominant part of the monodromy spectrum by restarted Arnoldi on the
/// period map. Ritz pairs are returned sorted by modulus.
#[derive(Clone, Debug, Serialize)]
pub struct LeadingModes {
    pub eta: Vec<f64>,
    pub ritz: Vec<c64>,
    /// Residual bound of the leading Ritz pair relative to `|μ_1|`.
    pub residual: f64,
    #[serde(skip)]
    pub vector: Vec<c64>,
    pub simplicity_ratio: f64,
}

impl LeadingModes {
    pub fn mu(&self) -> c64 {
        self.ritz[0]
    }
    pub fn exponent(&self) -> c64 {
        principal_log(self.ritz[0])
    }
}

/// Arnoldi with `dim` Krylov vectors and explicit restarts on the leading
/// Ritz vector; `start` seeds the first cycle.
pub fn leading_modes(grid: &CellGrid, prop: &Propagator, dim: usize, tol: f64, start: &[c64]) -> Result<LeadingModes> {
    let n = grid.ndof();
    let mut v0: Vec<c64> = start.to_vec();
    let mut last = None;
    for _cycle in 0..8 {
        let nrm = vnorm(&v0);
        if nrm == 0.0 {
            return Err(Error::InvalidParameter("zero start vector".into()));
        }
        let mut basis: Vec<Vec<c64>> = vec![v0.iter().map(|x| x / nrm).collect()];
        let mut hm = Mat::<c64>::zeros(dim + 1, dim);
        let mut m = dim;
        for j in 0..dim {
            let x = Mat::from_fn(1, n, |_, c| basis[j][c]);
            let y = prop.period_map(grid, x.as_ref());
            let mut w: Vec<c64> = (0..n).map(|c| y[(0, c)]).collect();
            for _pass in 0..2 {
                for (i, b) in basis.iter().enumerate() {
                    let hij = crate::linalg::dot(b, &w);
                    hm[(i, j)] += hij;
                    for (wk, bk) in w.iter_mut().zip(b) {
                        *wk -= hij * bk;
                    }
                }
            }
            let hn = vnorm(&w);
            hm[(j + 1, j)] = c64::new(hn, 0.0);
            if hn <= 1e-14 * vnorm(&(0..n).map(|c| y[(0, c)]).collect::<Vec<_>>()).max(1e-300) {
                m = j + 1;
                break;
            }
            basis.push(w.iter().map(|x| x / hn).collect());
        }
        let hsq = hm.as_ref().submatrix(0, 0, m, m).to_owned();
        let ev = hsq
            .eigen()
            .map_err(|e| Error::Numerical(format!("Hessenberg eigensolver failed: {e:?}")))?;
        let s = ev.S().column_vector();
        let u = ev.U();
        let mut idx: Vec<usize> = (0..m).collect();
        idx.sort_by(|&a, &b| s[b].norm().partial_cmp(&s[a].norm()).unwrap_or(std::cmp::Ordering::Equal));
        let lead = idx[0];
        let beta = if m < hm.nrows() { hm[(m, m - 1)].norm() } else { 0.0 };
        let ynorm: f64 = (0..m).map(|r| u[(r, lead)].norm_sqr()).sum::<f64>().sqrt();
        let res = beta * u[(m - 1, lead)].norm() / ynorm / s[lead].norm().max(1e-300);
        let mut vec = vec![zero(); n];
        for r in 0..m {
            let c = u[(r, lead)] / ynorm;
            for (vk, bk) in vec.iter_mut().zip(&basis[r]) {
                *vk += c * bk;
            }
        }
        let ritz: Vec<c64> = idx.iter().map(|&i| s[i]).collect();
        let ratio = if ritz.len() > 1 { ritz[0].norm() / ritz[1].norm() } else { f64::INFINITY };
        let out = LeadingModes {
            eta: prop.eta.clone(),
            ritz,
            residual: res,
            vector: vec.clone(),
            simplicity_ratio: ratio,
        };
        if res <= tol || m < dim {
            return Ok(out);
        }
        v0 = vec;
        last = Some(out);
    }
    let out = last.expect("at least one cycle");
    Err(Error::NoConvergence {
        message: format!("Arnoldi residual {:.3e} above {tol:.1e}", out.residual),
        history: vec![out.residual],
    })
}

/// Start vector `(1, 0)` plus a small seeded perturbation.
pub fn default_start(grid: &CellGrid, seed: u64) -> Vec<c64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..grid.ndof())
        .map(|j| {
            let base = if j < grid.npts() { 1.0 } else { 0.0 };
            c64::new(base + 1e-3 * rng.random_range(-1.0..1.0), 1e-3 * rng.random_range(-1.0..1.0))
        })
        .collect()
}

/// Bloch eigenfunction `u_η(t_m) = e^{-λ t_m} U_η(t_m, 0) v`, normalized
/// to `«φ_η» = 1`, sampled at the state's time samples (rows).
pub fn eigenfunction_u_eta(grid: &CellGrid, prop: &Propagator, nt: usize, lambda: c64, v: &[c64]) -> Result<Mat<c64>> {
    if prop.steps % nt != 0 {
        return Err(Error::InvalidParameter("step grid does not contain the samples".into()));
    }
    let sub = prop.steps / nt;
    let mut cur = Mat::from_fn(1, grid.ndof(), |_, c| v[c]);
    let mut out = Mat::<c64>::zeros(nt, grid.ndof());
    for m in 0..nt {
        let f = (-lambda * (m as f64 / nt as f64)).exp();
        for c in 0..grid.ndof() {
            out[(m, c)] = cur[(0, c)] * f;
        }
        cur = prop.run(grid, cur.as_ref(), m * sub, sub, None);
    }
    let s = double_mean_phi(grid, out.as_ref());
    if s.norm() < 1e-12 {
        return Err(Error::Numerical("eigenfunction has vanishing mean density".into()));
    }
    Ok(Mat::from_fn(nt, grid.ndof(), |i, j| out[(i, j)] / s))
}

/// Decay of homogeneous mean-zero solutions.
#[derive(Clone, Debug, Serialize)]
pub struct DecayFit {
    /// Fitted rate `β` in `‖u(t)‖² ~ e^{-β t}` (median over trials).
    pub rate: f64,
    pub per_trial: Vec<f64>,
    /// `‖u(m)‖²_{L²,γ}` per trial and period.
    pub energies: Vec<Vec<f64>>,
}

pub fn decay_rate(grid: &CellGrid, prop: &Propagator, gamma: f64, trials: usize, periods: usize, seed: u64) -> Result<DecayFit> {
    if periods < 4 {
        return Err(Error::InvalidParameter("decay fit needs at least 4 periods".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = grid.ndof();
    let mut x = Mat::<c64>::from_fn(trials, n, |_, _| c64::new(rng.random_range(-1.0..1.0), 0.0));
    let means = grid.mean(x.as_ref().subcols(0, grid.npts()));
    for r in 0..trials {
        for p in 0..grid.npts() {
            x[(r, p)] -= means[r];
        }
    }
    let mut energies = vec![Vec::with_capacity(periods + 1); trials];
    for (r, e) in grid.norm_l2_gamma_sq(x.as_ref(), gamma).into_iter().enumerate() {
        energies[r].push(e);
    }
    for _ in 0..periods {
        x = prop.period_map(grid, x.as_ref());
        for (r, e) in grid.norm_l2_gamma_sq(x.as_ref(), gamma).into_iter().enumerate() {
            energies[r].push(e);
        }
    }
    // least-squares slope of ln E over the second half of the run
    let per_trial: Vec<f64> = energies
        .iter()
        .map(|es| {
            let pts: Vec<(f64, f64)> = es
                .iter()
                .enumerate()
                .skip(periods / 2)
                .map(|(m, e)| (m as f64, e.ln()))
                .collect();
            let k = pts.len() as f64;
            let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
            let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
            let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
            let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
            -sxy / sxx
        })
        .collect();
    let mut sorted = per_trial.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    Ok(DecayFit {
        rate: sorted[sorted.len() / 2],
        per_trial,
        energies,
    })
}

/// Largest radius `r ≤ α_1/2` (found by scan and bisection along `±e_1`)
/// at which the leading multiplier still dominates by `ratio`.
#[derive(Clone, Debug, Serialize)]
pub struct SimplicityRadius {
    pub r0: f64,
    pub ratio_at_r0: f64,
    pub scanned: Vec<(f64, f64)>,
}

pub fn simplicity_radius(grid: &CellGrid, state: &PeriodicState, substeps: usize, ratio: f64, seed: u64) -> Result<SimplicityRadius> {
    let n1 = grid.dim_n() - 1;
    let alpha = grid.alpha()[0];
    let start = default_start(grid, seed);
    let ratio_at = |r: f64| -> Result<f64> {
        let mut worst = f64::INFINITY;
        for sgn in [1.0, -1.0] {
            let mut eta = vec![0.0; n1];
            eta[0] = sgn * r;
            let prop = Propagator::new(grid, state, &eta, substeps)?;
            let lm = leading_modes(grid, &prop, 30, 1e-10, &start)?;
            worst = worst.min(lm.simplicity_ratio);
            if r == 0.0 {
                break;
            }
        }
        Ok(worst)
    };
    let mut scanned = Vec::new();
    let r0_ratio = ratio_at(0.0)?;
    scanned.push((0.0, r0_ratio));
    if r0_ratio < ratio {
        return Err(Error::NotSimple {
            mu1: 1.0,
            mu2: 1.0 / r0_ratio,
        });
    }
    let mut lo = 0.0;
    let mut hi = None;
    for k in 1..=8 {
        let r = alpha / 2.0 * k as f64 / 8.0;
        let q = ratio_at(r)?;
        scanned.push((r, q));
        if q >= ratio {
            lo = r;
        } else {
            hi = Some(r);
            break;
        }
    }
    if let Some(mut h) = hi {
        for _ in 0..12 {
            let mid = 0.5 * (lo + h);
            let q = ratio_at(mid)?;
            scanned.push((mid, q));
            if q >= ratio {
                lo = mid;
            } else {
                h = mid;
            }
        }
    }
    let q = ratio_at(lo)?;
    Ok(SimplicityRadius {
        r0: lo,
        ratio_at_r0: q,
        scanned,
    })
}

/// Solver for `(∂_t + L_0(t)) u = f` on time-periodic space-time batches,
/// with the side conditions `«φ» = 0` and a vanishing Nyquist component of
/// `⟨φ(t)⟩`. Spectral collocation in time, right-preconditioned GMRES with
/// the exact inverse of the rest-state problem as preconditioner.
pub struct PeriodicSolver<'a> {
    grid: &'a CellGrid,
    coef: Coefficients,
    nt: usize,
    dt: Mat<c64>,
    ft: Mat<c64>,
    gt: Mat<c64>,
    /// `[κ][q]` inverses of `s_q + A_κ`; `None` where the bordered system is used.
    pre: Vec<Vec<Option<Mat<c64>>>>,
    border: Mat<c64>,
    pub tol: f64,
    pub restart: usize,
    pub max_iter: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct PeriodicSolve {
    #[serde(skip)]
    pub u: Mat<c64>,
    pub stats: GmresStats,
    /// Border multipliers (constant and Nyquist-in-time mean modes).
    pub beta: [c64; 2],
}

impl<'a> PeriodicSolver<'a> {
    pub fn new(grid: &'a CellGrid, state: &PeriodicState, tol: f64, restart: usize, max_iter: usize) -> Result<Self> {
        let nt = state.nt();
        let coef = state.coefficients(grid)?;
        let blocks = rest_mode_blocks(grid, &state.params, &[]);
        let bs = grid.block_size();
        let nz = grid.nz();
        let (ft, gt, _) = fourier(nt, 1.0);
        let mut pre = Vec::with_capacity(blocks.len());
        for (kappa, a) in blocks.iter().enumerate() {
            let mut row = Vec::with_capacity(nt);
            for q in 0..nt {
                let nyq = q == nt / 2;
                if kappa == 0 && (q == 0 || nyq) {
                    row.push(None);
                    continue;
                }
                let s = if nyq { 0.0 } else { 2.0 * PI * time_frequency(q, nt) as f64 };
                let m = Mat::from_fn(bs, bs, |i, j| a[(i, j)] + if i == j { c64::new(0.0, s) } else { zero() });
                let id = Mat::<c64>::from_fn(bs, bs, |i, j| if i == j { one() } else { zero() });
                row.push(Some(crate::linalg::solve(m.as_ref(), id.as_ref())));
            }
            pre.push(row);
        }
        // [[A_0, e], [ℓ, 0]] with e the constant density and ℓ the cell mean
        let a0 = &blocks[0];
        let mut bm = Mat::<c64>::zeros(bs + 1, bs + 1);
        bm.as_mut().submatrix_mut(0, 0, bs, bs).copy_from(a0);
        for z in 0..nz {
            bm[(z, bs)] = one();
            bm[(bs, z)] = c64::new(grid.wz()[z], 0.0);
        }
        let border = pinv(bm.as_ref(), 1e-14)?;
        Ok(Self {
            grid,
            coef,
            nt,
            dt: time_derivative_matrix(nt),
            ft,
            gt,
            pre,
            border,
            tol,
            restart,
            max_iter,
        })
    }

    /// `B_0 u = ∂_t u + L_0(t) u` on a space-time batch.
    pub fn apply_b0(&self, u: MatRef<'_, c64>) -> Mat<c64> {
        let mut y = crate::linalg::mul(self.dt.as_ref(), u);
        y += apply_l(self.grid, &self.coef, &[], u);
        y
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    /// Bordered space-time operator on `(U, β_1, β_2)`.
    pub fn apply(&self, x: &[c64]) -> Vec<c64> {
        let g = self.grid;
        let (nt, nd) = (self.nt, g.ndof());
        let u = Mat::from_fn(nt, nd, |i, j| x[i * nd + j]);
        let mut y = crate::linalg::mul(self.dt.as_ref(), u.as_ref());
        y += apply_l(g, &self.coef, &[], u.as_ref());
        let (b1, b2) = (x[nt * nd], x[nt * nd + 1]);
        for m in 0..nt {
            let s = if m % 2 == 0 { b1 + b2 } else { b1 - b2 };
            for p in 0..g.npts() {
                y[(m, p)] += s;
            }
        }
        let means = g.mean(u.as_ref().subcols(0, g.npts()));
        let c1 = means.iter().sum::<c64>() / nt as f64;
        let c2 = means
            .iter()
            .enumerate()
            .map(|(m, v)| if m % 2 == 0 { *v } else { -*v })
            .sum::<c64>()
            / nt as f64;
        let mut out = Vec::with_capacity(nt * nd + 2);
        for i in 0..nt {
            for j in 0..nd {
                out.push(y[(i, j)]);
            }
        }
        out.push(c1);
        out.push(c2);
        out
    }

    /// Exact inverse of the bordered rest-state operator.
    pub fn precondition(&self, x: &[c64]) -> Vec<c64> {
        let g = self.grid;
        let (nt, nd, bs) = (self.nt, g.ndof(), g.block_size());
        let r = Mat::from_fn(nt, nd, |i, j| x[i * nd + j]);
        let rt = crate::linalg::mul(self.ft.as_ref(), r.as_ref());
        let rm = g.packed_to_modes(rt.as_ref(), false);
        let mut ym = Mat::<c64>::zeros(nt, nd);
        let mut beta = [zero(); 2];
        for kappa in 0..g.nh_total() {
            let xb = g.gather_block(rm.as_ref(), kappa);
            let mut yb = Mat::<c64>::zeros(nt, bs);
            for q in 0..nt {
                match &self.pre[kappa][q] {
                    Some(inv) => {
                        for i in 0..bs {
                            let mut s = zero();
                            for j in 0..bs {
                                s += inv[(i, j)] * xb[(q, j)];
                            }
                            yb[(q, i)] = s;
                        }
                    }
                    None => {
                        let slot = if q == 0 { 0 } else { 1 };
                        let mut rhs: Vec<c64> = (0..bs).map(|j| xb[(q, j)]).collect();
                        rhs.push(x[nt * nd + slot]);
                        for i in 0..=bs {
                            let mut s = zero();
                            for (j, rv) in rhs.iter().enumerate() {
                                s += self.border[(i, j)] * rv;
                            }
                            if i < bs {
                                yb[(q, i)] = s;
                            } else {
                                beta[slot] = s;
                            }
                        }
                    }
                }
            }
            g.scatter_block(&mut ym, yb.as_ref(), kappa);
        }
        let yt = g.packed_to_modes(ym.as_ref(), true);
        let y = crate::linalg::mul(self.gt.as_ref(), yt.as_ref());
        let mut out = Vec::with_capacity(nt * nd + 2);
        for i in 0..nt {
            for j in 0..nd {
                out.push(y[(i, j)]);
            }
        }
        out.push(beta[0]);
        out.push(beta[1]);
        out
    }

    /// Solves `(∂_t + L_0) u = f` with `«φ_u» = 0`; `f` must satisfy `«f_φ» = 0`.
    pub fn solve(&self, f: MatRef<'_, c64>) -> Result<PeriodicSolve> {
        let g = self.grid;
        let (nt, nd) = (self.nt, g.ndof());
        if f.nrows() != nt || f.ncols() != nd {
            return Err(Error::InvalidParameter("right-hand side has the wrong shape".into()));
        }
        let fm = double_mean_phi(g, f);
        let fsize = (g.norm_l2_gamma_sq(f, 1.0).iter().sum::<f64>() / nt as f64 / g.cell_volume()).sqrt();
        if fm.norm() > 1e-9 * fsize.max(1e-300) {
            return Err(Error::Incompatible(format!(
                "right-hand side has nonzero space-time mean density {:.3e}",
                fm.norm()
            )));
        }
        let mut b = Vec::with_capacity(nt * nd + 2);
        for i in 0..nt {
            for j in 0..nd {
                b.push(f[(i, j)]);
            }
        }
        b.push(zero());
        b.push(zero());
        let (x, stats) = gmres(
            &|v| self.apply(v),
            &|v| self.precondition(v),
            &b,
            self.restart,
            self.max_iter,
            self.tol,
        );
        if !stats.converged {
            return Err(Error::NoConvergence {
                message: format!("periodic solve stalled at residual {:.3e}", stats.residual),
                history: vec![stats.residual],
            });
        }
        Ok(PeriodicSolve {
            u: Mat::from_fn(nt, nd, |i, j| x[i * nd + j]),
            beta: [x[nt * nd], x[nt * nd + 1]],
            stats,
        })
    }
}

/// Kernel element `u^(0) = (1,0) + ũ` of `∂_t + L_0` with `«φ^(0)» = 1`.
pub fn eigenfunction_u0(solver: &PeriodicSolver<'_>) -> Result<(Mat<c64>, GmresStats)> {
    let g = solver.grid;
    let (nt, nd) = (solver.nt, g.ndof());
    let c = Mat::from_fn(nt, nd, |_, j| if j < g.npts() { one() } else { zero() });
    let lc = apply_l(g, &solver.coef, &[], c.as_ref());
    let f = Mat::from_fn(nt, nd, |i, j| -lc[(i, j)]);
    let sol = solver.solve(f.as_ref())?;
    let mut u = sol.u;
    u += &c;
    Ok((u, sol.stats))
}

/// Exponents `-λ` of the rest-state operator `L_η` from a dense eigensolve,
/// sorted by increasing real part (slowest decay first).
pub fn rest_exponents_dense(grid: &CellGrid, params: &crate::config_params::Params, eta: &[f64]) -> Result<Vec<c64>> {
    let k = Coefficients::trivial(grid, params);
    let m = crate::linear_operators::assemble_l(grid, &k, None, eta)?;
    let mut ev = m
        .matrix
        .eigenvalues()
        .map_err(|e| Error::Numerical(format!("eigensolver failed: {e:?}")))?;
    ev.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap_or(std::cmp::Ordering::Equal));
    Ok(ev)
}
