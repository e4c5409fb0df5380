mod common;

use cns_floquet::c64;
use cns_floquet::cell_grid::CellGrid;
use cns_floquet::config_params::Params;
use cns_floquet::floquet_engine::{rest_exponents_dense, Propagator};
use cns_floquet::linear_operators::{apply_b1, apply_b2, apply_l, assemble_l, Coefficients};
use faer::Mat;
use proptest::prelude::*;

use common::{diff, fro, rng, smooth_packed, synthetic_state};

fn small() -> (Params, CellGrid) {
    let p = Params::desk(0.0);
    let g = CellGrid::new(2, &[5], 9, &p.alpha).unwrap();
    (p, g)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn propagation_is_linear(seed in 0u64..1000, a in -2.0f64..2.0, b in -2.0f64..2.0, eta in -0.1f64..0.1) {
        let (p, g) = small();
        let st = synthetic_state(&g, &p, 8, 0.2, seed);
        let prop = Propagator::new(&g, &st, &[eta], 1).unwrap();
        let mut r = rng(seed + 1);
        let x = smooth_packed(&g, 2, &mut r);
        let y = prop.period_map(&g, x.as_ref());
        let combo = Mat::from_fn(1, g.ndof(), |_, j| x[(0, j)] * a + x[(1, j)] * b);
        let yc = prop.period_map(&g, combo.as_ref());
        let want = Mat::from_fn(1, g.ndof(), |_, j| y[(0, j)] * a + y[(1, j)] * b);
        prop_assert!(fro(&diff(&yc, &want)) <= 1e-11 * fro(&want).max(1.0));
    }

    #[test]
    fn mass_row_has_zero_mean(seed in 0u64..1000) {
        let (p, g) = small();
        let st = synthetic_state(&g, &p, 4, 0.2, seed);
        let k = st.coefficients(&g).unwrap().row(1);
        let mut r = rng(seed + 7);
        let x = smooth_packed(&g, 1, &mut r);
        let y0 = apply_l(&g, &k, &[0.0], x.as_ref());
        let m0 = g.mean(y0.as_ref().subcols(0, g.npts()))[0];
        prop_assert!(m0.norm() < 1e-10 * fro(&y0));
    }
}

#[test]
fn operator_is_quadratic_in_eta_with_cross_terms() {
    // three-dimensional cell so that the mixed second-order blocks matter
    let p = Params::new(10.0, 10.0, 40.0, 0.0, 1.0, 3, vec![0.2, 0.3], cns_floquet::config_params::PressureLaw::Isothermal).unwrap();
    let g = CellGrid::new(3, &[3, 3], 7, &p.alpha).unwrap();
    let st = synthetic_state(&g, &p, 4, 0.2, 3);
    let k: Coefficients = st.coefficients(&g).unwrap().row(2);
    let mut r = rng(11);
    let x = smooth_packed(&g, 2, &mut r);
    for eta in [[0.03, -0.07], [-0.1, 0.15], [0.08, 0.02]] {
        let le = apply_l(&g, &k, &eta, x.as_ref());
        let mut model = apply_l(&g, &k, &[0.0, 0.0], x.as_ref());
        for j in 0..2 {
            let b1 = apply_b1(&g, &k, j, x.as_ref());
            model += Mat::from_fn(2, g.ndof(), |a, b| b1[(a, b)] * eta[j]);
            for kk in 0..2 {
                let b2 = apply_b2(&g, &k, j, kk, x.as_ref());
                model += Mat::from_fn(2, g.ndof(), |a, b| b2[(a, b)] * (eta[j] * eta[kk]));
            }
        }
        let d = fro(&diff(&le, &model)) / fro(&le);
        assert!(d < 1e-12, "eta {eta:?}: {d:e}");
    }
}

#[test]
fn rest_spectrum_has_simple_kernel_and_positive_rates() {
    let (p, g) = small();
    let lam = rest_exponents_dense(&g, &p, &[0.0]).unwrap();
    assert!(lam[0].norm() < 1e-10, "kernel eigenvalue {}", lam[0]);
    assert!(lam[1].re > 0.1, "second eigenvalue {}", lam[1]);
    // Bloch shift removes the kernel
    let lam = rest_exponents_dense(&g, &p, &[0.05]).unwrap();
    assert!(lam[0].re > 0.0);
}

#[test]
fn dense_assembly_matches_matrix_free_application() {
    let (p, g) = small();
    let st = synthetic_state(&g, &p, 4, 0.2, 5);
    let k = st.coefficients(&g).unwrap();
    let m = assemble_l(&g, &k, Some(3), &[0.04]).unwrap();
    let mut r = rng(6);
    let x = smooth_packed(&g, 1, &mut r);
    let y = apply_l(&g, &k.row(3), &[0.04], x.as_ref());
    let ym = Mat::from_fn(1, g.ndof(), |_, i| (0..g.ndof()).map(|j| m.matrix[(i, j)] * x[(0, j)]).sum::<c64>());
    assert!(fro(&diff(&y, &ym)) < 1e-12 * fro(&y));
}

#[test]
fn bogovskii_inverts_divergence_on_desk_grid() {
    use cns_floquet::linear_operators::Bogovskii;
    let g = CellGrid::new(2, &[17], 17, &[0.2]).unwrap();
    let bog = Bogovskii::new(&g).unwrap();
    let mut r = rng(2);
    let mut f = common::smooth_points(&g, 20, 3, g.nz() - 3, &mut r);
    let means = g.mean(f.as_ref());
    for i in 0..20 {
        for p in 0..g.npts() {
            f[(i, p)] -= means[i];
        }
    }
    let v = bog.apply(&g, f.as_ref()).unwrap();
    let res = g.l2_sq(diff(&g.div(&v, &[]), &f).as_ref());
    let nf = g.l2_sq(f.as_ref());
    let worst = res.iter().zip(&nf).map(|(a, b)| (a / b).sqrt()).fold(0.0, f64::max);
    assert!(worst < 1e-10, "divergence defect {worst:e}");
    // non-mean-zero input is refused
    let ones = Mat::from_fn(1, g.npts(), |_, _| c64::new(1.0, 0.0));
    assert!(bog.apply(&g, ones.as_ref()).is_err());
}
