mod common;

use std::f64::consts::PI;

use cns_floquet::bloch_transform::{bloch_at, bloch_forward, bloch_inverse, dual_points, LatticeSampling};
use cns_floquet::c64;
use cns_floquet::cell_grid::{clenshaw_curtis, CellGrid, TimePeriodicField};
use cns_floquet::config_params::{build_force, nondimensionalize, ForceSpec, PressureLaw, RunConfig};
use cns_floquet::linear_operators::filter_phi;
use faer::Mat;
use proptest::prelude::*;

fn grid() -> CellGrid {
    CellGrid::new(2, &[9], 11, &[0.2]).unwrap()
}

/// `T_d(2z-1)` and its z-derivative `2 d U_{d-1}(2z-1)`.
fn cheb_and_deriv(d: usize, z: f64) -> (f64, f64) {
    let s = 2.0 * z - 1.0;
    let (mut t0, mut t1) = (1.0, s);
    let (mut u0, mut u1) = (1.0, 2.0 * s);
    if d == 0 {
        return (1.0, 0.0);
    }
    for _ in 1..d {
        (t0, t1) = (t1, 2.0 * s * t1 - t0);
        (u0, u1) = (u1, 2.0 * s * u1 - u0);
    }
    let _ = u1;
    (t1, 2.0 * d as f64 * u0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn derivatives_exact_on_resolved_modes(k in -4i64..=4, d in 0usize..=10, eta in -0.1f64..0.1) {
        let g = grid();
        let mut f = Mat::<c64>::zeros(1, g.npts());
        let mut fx = Mat::<c64>::zeros(1, g.npts());
        let mut fz = Mat::<c64>::zeros(1, g.npts());
        for p in 0..g.npts() {
            let (x, z) = g.point_coords(p);
            let e = c64::new(0.0, k as f64 * 0.2 * x[0]).exp();
            let (t, dt) = cheb_and_deriv(d, z);
            f[(0, p)] = e * t;
            fx[(0, p)] = e * t * c64::new(0.0, k as f64 * 0.2 + eta);
            fz[(0, p)] = e * dt;
        }
        let gx = g.deriv(f.as_ref(), 0, &[eta]);
        let gz = g.deriv(f.as_ref(), 1, &[eta]);
        let scale = 1.0 + 2.0 * (d * d) as f64;
        prop_assert!(common::max_abs(&common::diff(&gx, &fx)) < 1e-11);
        prop_assert!(common::max_abs(&common::diff(&gz, &fz)) < 1e-12 * scale * 10.0);
    }

    #[test]
    fn filter_is_mean_preserving_projection(seed in 0u64..1000) {
        let g = grid();
        let mut r = common::rng(seed);
        let x = common::smooth_packed(&g, 2, &mut r);
        let mut y = x.clone();
        // add a checkerboard in z
        for p in 0..g.npts() {
            y[(0, p)] += c64::new(if p % g.nz() % 2 == 0 { 1.0 } else { -1.0 }, 0.0);
        }
        let py = filter_phi(&g, y.as_ref());
        let ppy = filter_phi(&g, py.as_ref());
        prop_assert!(common::max_abs(&common::diff(&ppy, &py)) < 1e-12);
        let m0 = g.mean(y.as_ref().subcols(0, g.npts()));
        let m1 = g.mean(py.as_ref().subcols(0, g.npts()));
        for (a, b) in m0.iter().zip(&m1) {
            prop_assert!((a - b).norm() < 1e-12);
        }
        // the velocity part is untouched
        for j in g.npts()..g.ndof() {
            prop_assert!((py[(0, j)] - y[(0, j)]).norm() == 0.0);
        }
    }

    #[test]
    fn bloch_roundtrip_and_parseval(seed in 0u64..1000, m in prop::sample::select(vec![1usize, 2, 3, 4])) {
        use rand::Rng;
        let mut r = common::rng(seed);
        let mut s = LatticeSampling::zeros(&[m], &[7], &[0.3], 2);
        for v in s.data.iter_mut() {
            *v = c64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
        }
        let f = bloch_forward(&s).unwrap();
        let n = s.norm_sq();
        prop_assert!((f.norm_sq() - n).abs() < 1e-12 * n);
        let back = bloch_inverse(&f);
        for (a, b) in back.data.iter().zip(&s.data) {
            prop_assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn bloch_cell_functions_are_cell_periodic(k in -3i64..=3, r in 0usize..4) {
        // a plane wave e^{i ξ x} with ξ = η' + kα maps to a single η' with a
        // cell-periodic factor e^{ikαx}
        let (m, nh, alpha) = (4usize, 9usize, 0.4);
        let eta = dual_points(&[m], &[alpha])[r][0];
        let xi = eta + k as f64 * alpha;
        let mut s = LatticeSampling::zeros(&[m], &[nh], &[alpha], 1);
        for gi in 0..m * nh {
            s.data[gi] = c64::new(0.0, xi * s.coord(0, gi)).exp();
        }
        let f = bloch_at(&s, &[eta]).unwrap();
        let c = f[0];
        for (j, v) in f.iter().enumerate() {
            let x = s.coord(0, j);
            let want = c * c64::new(0.0, k as f64 * alpha * x).exp();
            prop_assert!((v - want).norm() < 1e-10);
        }
        prop_assert!((c.norm() - m as f64 / alpha.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn nondimensionalize_is_homogeneous(c in 0.1f64..10.0, mu in 0.5f64..2.0, ratio in 0.0f64..0.9) {
        let a = nondimensionalize(mu, ratio * mu, 1.0, 1.0, 1.0, 100.0, 0.01, 1.0, 2, vec![0.2], PressureLaw::Isothermal).unwrap();
        // scaling density and viscosities together leaves ν, ν̃ unchanged
        let b = nondimensionalize(c * mu, c * ratio * mu, c, 1.0, 1.0, 100.0, 0.01, 1.0, 2, vec![0.2], PressureLaw::Isothermal).unwrap();
        prop_assert!((a.nu - b.nu).abs() < 1e-12 * a.nu);
        prop_assert!((a.nu_tilde - b.nu_tilde).abs() < 1e-12 * a.nu_tilde);
        // viscosities scale linearly
        let d = nondimensionalize(c * mu, c * ratio * mu, 1.0, 1.0, 1.0, 100.0, 0.01, 1.0, 2, vec![0.2], PressureLaw::Isothermal).unwrap();
        prop_assert!((d.nu - c * a.nu).abs() < 1e-12 * d.nu);
        // γ scales with √p'
        let e = nondimensionalize(mu, ratio * mu, 1.0, 1.0, 1.0, 100.0 * c * c, 0.01, 1.0, 2, vec![0.2], PressureLaw::Isothermal).unwrap();
        prop_assert!((e.gamma - c * a.gamma).abs() < 1e-12 * e.gamma);
    }
}

#[test]
fn clenshaw_curtis_integrates_polynomials() {
    let w = clenshaw_curtis(16);
    let g = CellGrid::new(2, &[3], 17, &[0.2]).unwrap();
    for d in 0..=15usize {
        let s: f64 = g.z().iter().zip(&w).map(|(z, w)| w * z.powi(d as i32)).sum();
        assert!((s - 1.0 / (d + 1) as f64).abs() < 1e-13, "degree {d}: {s}");
    }
}

#[test]
fn force_is_periodic_and_normalized() {
    let g = grid();
    let nt = 16;
    let f = build_force(&ForceSpec::desk(), &g, nt).unwrap();
    for (comp, s) in f.samples.iter().enumerate() {
        let a = s.at(0.0);
        let b = s.at(1.0);
        assert!(common::max_abs(&common::diff(&a, &b)) < 1e-12, "component {comp}");
        let raw = ForceSpec::desk().eval_raw(&g, 0.3);
        let at = s.at(0.3);
        for p in 0..g.npts() {
            assert!((at[(0, p)] - raw[comp][(0, p)] * f.scale).norm() < 1e-10);
        }
    }
    let norm = cns_floquet::config_params::force_norm(&g, &f.samples);
    assert!((norm - 1.0).abs() < 1e-10, "normalized force norm {norm}");
}

#[test]
fn time_interpolation_is_exact_for_trigonometric_samples() {
    let nt = 12;
    let data = Mat::<c64>::from_fn(nt, 1, |m, _| {
        let t = m as f64 / nt as f64;
        c64::new((2.0 * PI * t).cos() + 0.5 * (6.0 * PI * t).sin(), 0.0)
    });
    let f = TimePeriodicField::new(data);
    for t in [0.05, 0.37, 0.81] {
        let want = (2.0 * PI * t).cos() + 0.5 * (6.0 * PI * t).sin();
        assert!((f.at(t)[(0, 0)].re - want).abs() < 1e-12);
    }
}

#[test]
fn config_toml_roundtrip() {
    let cfg = RunConfig::desk(0.5);
    let text = cfg.to_toml();
    assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    assert!(RunConfig::from_toml("nonsense = 1").is_err());
    let p = cfg.params().unwrap();
    assert!(p.s_force > 0.0);
    assert_eq!(cfg.grid().unwrap().ndof(), 799);
}
