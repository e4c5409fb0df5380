//! Acceptance run on the desk configuration. Prints one PASS/FAIL line per
//! criterion and exits nonzero if any fails.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use cns_floquet::bloch_transform::{bloch_forward, bloch_inverse, LatticeSampling};
use cns_floquet::c64;
use cns_floquet::cell_grid::CellGrid;
use cns_floquet::config_params::{build_force, Params, RunConfig};
use cns_floquet::dispersion::{
    dispersion_sweep, eigenfunction_continuity, min_eig_sym, perturbation_coefficients, DispersionCoefficients, SweepReport,
};
use cns_floquet::floquet_engine::{
    decay_rate, default_start, monodromy, rest_exponents_dense, simplicity_radius, spectrum, FloquetSpectrum,
    PeriodicSolver, Propagator,
};
use cns_floquet::linear_operators::{assemble_b1, assemble_b2, assemble_l, projection_pi0, Bogovskii};
use cns_floquet::periodic_state::{energy_report, solve_periodic_state, PeriodicState};
use faer::Mat;
use rand::Rng;

use common::{diff, fro, max_abs, rng, smooth_points};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rel(a: f64, b: f64, rtol: f64) -> bool {
    (a - b).abs() <= (rtol * b.abs()).max(1e-6)
}

struct Desk {
    cfg: RunConfig,
    grid: CellGrid,
}

impl Desk {
    fn new(fraction: f64) -> Self {
        let cfg = RunConfig::desk(fraction);
        let grid = cfg.grid().unwrap();
        Self { cfg, grid }
    }

    fn params(&self) -> Params {
        self.cfg.params().unwrap()
    }

    fn solve(&self) -> PeriodicState {
        let f = build_force(&self.cfg.force, &self.grid, self.cfg.grid.nt).unwrap();
        solve_periodic_state(&self.grid, &self.params(), &f, self.cfg.grid.nt, &self.cfg.solver).unwrap()
    }

    fn sweep_etas(&self) -> Vec<Vec<f64>> {
        let half = self.grid.alpha()[0] / 2.0;
        self.cfg.sweep.factors.iter().map(|f| vec![f * half]).collect()
    }
}

struct Pipeline {
    coeffs: DispersionCoefficients,
    u0: Mat<c64>,
    sweep: SweepReport,
}

fn pipeline(desk: &Desk, st: &PeriodicState) -> Pipeline {
    let g = &desk.grid;
    let s = &desk.cfg.solver;
    let solver = PeriodicSolver::new(g, st, s.linear_tol, s.gmres_restart, s.gmres_max_iter).unwrap();
    let (coeffs, u0, _) = perturbation_coefficients(g, st, &solver).unwrap();
    let start = default_start(g, desk.cfg.seed);
    let k0 = coeffs.stokes.kappa0;
    let sweep = dispersion_sweep(g, st, 1, &desk.sweep_etas(), desk.cfg.sweep.simplicity_ratio, &start, Some(&coeffs), Some(k0)).unwrap();
    Pipeline { coeffs, u0, sweep }
}

fn bloch_unitarity() -> Outcome {
    let mut r = rng(1);
    let (nh, tail, alpha) = (17usize, 5usize, 0.2);
    let mut worst = (0.0f64, 0.0f64);
    for m in [2usize, 4] {
        for _ in 0..25 {
            let mut s = LatticeSampling::zeros(&[m], &[nh], &[alpha], tail);
            let kmax = (m * (nh - 1) / 2) as i64;
            let terms: Vec<(i64, Vec<c64>)> = (0..6)
                .map(|_| {
                    let k = r.random_range(-kmax..=kmax);
                    (k, (0..tail).map(|_| c64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))).collect())
                })
                .collect();
            for gi in 0..m * nh {
                let x = s.coord(0, gi);
                for (k, amp) in &terms {
                    let th = alpha * *k as f64 / m as f64 * x;
                    for t in 0..tail {
                        s.data[gi * tail + t] += amp[t] * c64::new(th.cos(), th.sin());
                    }
                }
            }
            let f = bloch_forward(&s).unwrap();
            let n = s.norm_sq();
            worst.0 = worst.0.max((f.norm_sq() - n).abs() / n);
            let back = bloch_inverse(&f);
            let e: f64 = back.data.iter().zip(&s.data).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
            let d: f64 = s.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            worst.1 = worst.1.max(e / d);
        }
    }
    outcome(
        worst.0 < 1e-12 && worst.1 < 1e-12,
        format!("Parseval defect {:.2e}, roundtrip {:.2e} (50 inputs, M = 2, 4)", worst.0, worst.1),
    )
}

fn bogovskii(desk: &Desk) -> Outcome {
    let g = &desk.grid;
    let bog = Bogovskii::new(g).unwrap();
    let mut r = rng(2);
    let mut f = smooth_points(g, 20, 3, g.nz() - 3, &mut r);
    let means = g.mean(f.as_ref());
    for i in 0..20 {
        for p in 0..g.npts() {
            f[(i, p)] -= means[i];
        }
    }
    let v = bog.apply(g, f.as_ref()).unwrap();
    let dv = g.div(&v, &[]);
    let res = g.l2_sq(diff(&dv, &f).as_ref());
    let nf = g.l2_sq(f.as_ref());
    let div_err = res.iter().zip(&nf).map(|(a, b)| (a / b).sqrt()).fold(0.0, f64::max);
    let mut wall = 0.0f64;
    for p in 0..g.npts() {
        let z = g.point_coords(p).1;
        if z == 0.0 || z == 1.0 {
            for c in &v {
                for i in 0..20 {
                    wall = wall.max(c[(i, p)].norm());
                }
            }
        }
    }
    outcome(div_err < 1e-10 && wall < 1e-12, format!("divergence defect {div_err:.2e}, wall max {wall:.2e} (20 inputs)"))
}

fn trivial_oracle(desk: &Desk, st: &PeriodicState) -> (Outcome, FloquetSpectrum) {
    let g = &desk.grid;
    let p = desk.params();
    let rho = st.rho(g);
    let dr = Mat::from_fn(rho.nrows(), rho.ncols(), |i, j| rho[(i, j)] - 1.0);
    let dv = st.velocity(g).iter().map(max_abs).fold(0.0, f64::max);
    let state_err = max_abs(&dr).max(dv);
    let mut worst = 0.0f64;
    let mut sp0 = None;
    for eta in [0.0, 0.1] {
        let lam = rest_exponents_dense(g, &p, &[eta]).unwrap();
        let prop = Propagator::new(g, st, &[eta], 1).unwrap();
        let sp = spectrum(&monodromy(g, &prop)).unwrap();
        for l in lam.iter().take(10) {
            let want = (-*l).exp();
            let got = sp.multipliers.iter().map(|m| (m - want).norm()).fold(f64::INFINITY, f64::min);
            worst = worst.max(got / want.norm());
        }
        if eta == 0.0 {
            sp0 = Some(sp);
        }
    }
    (
        outcome(
            state_err < 1e-12 && worst < 1e-6,
            format!("state deviation {state_err:.2e}, multiplier error {worst:.2e} (10 slowest, eta = 0, 0.1)"),
        ),
        sp0.unwrap(),
    )
}

fn kernel(sp: &FloquetSpectrum) -> Outcome {
    let l = sp.exponents[0].norm();
    outcome(
        l <= 1e-7 && sp.simplicity_ratio >= 1.5,
        format!("|lambda_00| = {l:.2e}, |mu1|/|mu2| = {:.4}", sp.simplicity_ratio),
    )
}

fn expansion(triv: &Pipeline, comp: &Pipeline) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, p, tol) in [("trivial", triv, 0.02), ("computed", comp, 0.05)] {
        let a_ok = p.coeffs.a.iter().zip(&p.sweep.fit_a).all(|(x, y)| rel(*y, *x, tol));
        let m_ok = p
            .coeffs
            .a_matrix
            .iter()
            .zip(&p.sweep.fit_a_matrix)
            .all(|(r, s)| r.iter().zip(s).all(|(x, y)| rel(*y, *x, tol)));
        let slope = p.sweep.remainder_slope.unwrap_or(f64::NAN);
        ok &= a_ok && m_ok && slope >= 2.7;
        parts.push(format!(
            "{name}: A {:.6} vs fit {:.6}, a {:.2e} vs fit {:.2e}, slope {:.2}",
            p.coeffs.a_matrix[0][0], p.sweep.fit_a_matrix[0][0], p.coeffs.a[0], p.sweep.fit_a[0], slope
        ));
    }
    outcome(ok, parts.join("; "))
}

fn definiteness(desk: &Desk, triv: &Pipeline, comp: &Pipeline) -> Outcome {
    let p = desk.params();
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, pl) in [("trivial", triv), ("computed", comp)] {
        let k0 = pl.coeffs.stokes.kappa0;
        let bound = k0 * p.gamma * p.gamma / p.nu;
        let m = min_eig_sym(&pl.coeffs.a_matrix);
        let ratio = pl.sweep.bound_ratio_min.unwrap_or(f64::NAN);
        ok &= k0 > 0.0 && m >= bound * (1.0 - 1e-8) && ratio >= 0.9;
        parts.push(format!("{name}: min eig {m:.6} vs {bound:.6}, sweep ratio {ratio:.3}"));
    }
    outcome(ok, parts.join("; "))
}

fn gap_and_decay(desk: &Desk, triv: &PeriodicState, triv_sp: &FloquetSpectrum, comp: &PeriodicState, comp_sp: &FloquetSpectrum) -> Outcome {
    let g = &desk.grid;
    let p = desk.params();
    let s = &desk.cfg.solver;
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, st, sp) in [("trivial", triv, triv_sp), ("computed", comp, comp_sp)] {
        let prop = Propagator::new(g, st, &[0.0], 1).unwrap();
        let beta = decay_rate(g, &prop, p.gamma, s.decay_trials, s.decay_periods, desk.cfg.seed).unwrap().rate;
        let cap = (-beta / 4.0).exp();
        let worst = sp.multipliers[1..].iter().map(|m| m.norm()).fold(0.0, f64::max);
        ok &= beta > 0.0 && worst <= cap;
        let mut line = format!("{name}: beta {beta:.4}, max |mu| {worst:.4} <= {cap:.4}");
        if name == "trivial" {
            let lam = rest_exponents_dense(g, &p, &[0.0]).unwrap();
            let slow = lam.iter().map(|l| l.re).filter(|r| *r > 1e-8).fold(f64::INFINITY, f64::min);
            let oracle = 2.0 * slow;
            let d = (beta - oracle).abs() / oracle;
            ok &= d <= 0.2;
            line.push_str(&format!(", dense 2 min Re lambda {oracle:.4} ({:.1}%)", 100.0 * d));
        }
        parts.push(line);
    }
    outcome(ok, parts.join("; "))
}

fn projection(desk: &Desk, st: &PeriodicState, u0: &Mat<c64>) -> Outcome {
    let g = &desk.grid;
    let s = &desk.cfg.solver;
    let solver = PeriodicSolver::new(g, st, s.linear_tol, s.gmres_restart, s.gmres_max_iter).unwrap();
    let nt = solver.nt();
    let mut r = rng(8);
    let mut idem = 0.0f64;
    let mut b0 = 0.0f64;
    for _ in 0..10 {
        // smooth in space, a few harmonics in time
        let base = common::smooth_packed(g, 3, &mut r);
        let u = Mat::from_fn(nt, g.ndof(), |m, j| {
            let t = m as f64 / nt as f64;
            (0..3).map(|k| base[(k, j)] * c64::new(0.0, 2.0 * std::f64::consts::PI * k as f64 * t).exp()).sum()
        });
        let pu = projection_pi0(g, u.as_ref(), u0.as_ref());
        let ppu = projection_pi0(g, pu.as_ref(), u0.as_ref());
        idem = idem.max(fro(&diff(&ppu, &pu)) / fro(&pu).max(1e-300));
        let bu = solver.apply_b0(u.as_ref());
        let pbu = projection_pi0(g, bu.as_ref(), u0.as_ref());
        b0 = b0.max(fro(&pbu) / fro(&bu));
    }
    let fix = fro(&diff(&projection_pi0(g, u0.as_ref(), u0.as_ref()), u0)) / fro(u0);
    outcome(
        idem < 1e-10 && fix < 1e-10 && b0 < 1e-7,
        format!("idempotency {idem:.2e}, Pi u0 - u0 {fix:.2e}, Pi B0 u {b0:.2e} (10 inputs)"),
    )
}

fn operator_expansion(desk: &Desk, st: &PeriodicState) -> Outcome {
    let g = &desk.grid;
    let k = st.coefficients(g).unwrap();
    let m = st.nt() / 3;
    let l0 = assemble_l(g, &k, Some(m), &[0.0]).unwrap().matrix;
    let b1 = assemble_b1(g, &k, Some(m), 0).unwrap().matrix;
    let b2 = assemble_b2(g, &k, Some(m), 0, 0).unwrap().matrix;
    let mut r = rng(9);
    let half = g.alpha()[0] / 2.0;
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let eta: f64 = r.random_range(-half..half);
        let le = assemble_l(g, &k, Some(m), &[eta]).unwrap().matrix;
        let model = Mat::from_fn(le.nrows(), le.ncols(), |i, j| l0[(i, j)] + b1[(i, j)] * eta + b2[(i, j)] * (eta * eta));
        worst = worst.max(fro(&diff(&le, &model)) / fro(&le));
    }
    outcome(worst < 1e-10, format!("relative defect {worst:.2e} (10 eta, sample {m})"))
}

fn scaling(desk: &Desk, full: &PeriodicState) -> Outcome {
    let half_desk = Desk::new(desk.cfg.params.s_regime_fraction.unwrap() / 2.0);
    let half = half_desk.solve();
    let e4 = |d: &Desk, s: &PeriodicState| {
        energy_report(&d.grid, &d.params(), s.samples.as_ref()).unwrap().e4.iter().cloned().fold(0.0, f64::max)
    };
    let ratio = e4(desk, full) / e4(&half_desk, &half);
    let mut mean = 0.0f64;
    for s in [full, &half] {
        for m in desk.grid.mean(s.rho(&desk.grid).as_ref()) {
            mean = mean.max((m - 1.0).norm());
        }
    }
    outcome(
        (ratio / 4.0 - 1.0).abs() <= 0.1 && mean <= 1e-10,
        format!("E4(S)/E4(S/2) = {ratio:.4}, max |<rho> - 1| = {mean:.2e}"),
    )
}

fn continuity(desk: &Desk, st: &PeriodicState, u0: &Mat<c64>) -> Outcome {
    let g = &desk.grid;
    let ratio = desk.cfg.sweep.simplicity_ratio;
    let r0 = simplicity_radius(g, st, 1, ratio, desk.cfg.seed).unwrap().r0;
    let radii: Vec<f64> = [0.125, 0.25, 0.5].iter().map(|f| f * r0).collect();
    let start = default_start(g, desk.cfg.seed);
    let rep = eigenfunction_continuity(g, st, 1, u0.as_ref(), &radii, &start).unwrap();
    outcome(
        rep.spread <= 1.5,
        format!("r0 = {r0:.4}, constants {:?}, spread {:.4}", rep.constants.iter().map(|c| format!("{c:.4}")).collect::<Vec<_>>(), rep.spread),
    )
}

fn main() -> ExitCode {
    cns_floquet::init_threads_from_env();
    let mut all = true;
    let mut report = |id: usize, name: &str, t: Instant, o: Outcome| {
        all &= o.pass;
        println!("{} {id:>2} {name}: {} [{:.1}s]", if o.pass { "PASS" } else { "FAIL" }, o.detail, t.elapsed().as_secs_f64());
    };

    let t = Instant::now();
    report(1, "bloch_unitarity", t, bloch_unitarity());

    let rest = Desk::new(0.0);
    let t = Instant::now();
    report(2, "bogovskii_right_inverse", t, bogovskii(&rest));

    let t = Instant::now();
    let triv = rest.solve();
    let (o, triv_sp) = trivial_oracle(&rest, &triv);
    report(3, "trivial_state_oracle", t, o);

    let desk = Desk::new(0.5);
    let t = Instant::now();
    let comp = desk.solve();
    let comp_sp = spectrum(&monodromy(&desk.grid, &Propagator::new(&desk.grid, &comp, &[0.0], 1).unwrap())).unwrap();
    report(4, "kernel_eigenvalue", t, kernel(&comp_sp));

    let t = Instant::now();
    let triv_pl = pipeline(&rest, &PeriodicState::trivial(&rest.grid, &rest.params(), rest.cfg.grid.nt));
    let comp_pl = pipeline(&desk, &comp);
    report(5, "expansion_cross_validation", t, expansion(&triv_pl, &comp_pl));

    let t = Instant::now();
    report(6, "definiteness_bound", t, definiteness(&desk, &triv_pl, &comp_pl));

    let t = Instant::now();
    report(7, "spectral_gap_and_decay", t, gap_and_decay(&desk, &triv, &triv_sp, &comp, &comp_sp));

    let t = Instant::now();
    report(8, "projection_algebra", t, projection(&desk, &comp, &comp_pl.u0));

    let t = Instant::now();
    report(9, "operator_expansion", t, operator_expansion(&desk, &comp));

    let t = Instant::now();
    report(10, "state_size_scaling", t, scaling(&desk, &comp));

    let t = Instant::now();
    report(11, "eigenfunction_continuity", t, continuity(&desk, &comp, &comp_pl.u0));

    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
