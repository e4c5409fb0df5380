//! Small dense linear-algebra helpers on top of faer: matrix exponential and
//! phi-functions, pseudo-inverse, restarted GMRES.

use faer::linalg::matmul::matmul;
use faer::prelude::*;
use faer::{c64, Accum, Mat, MatRef, Par};

use crate::Error;

pub fn par() -> Par {
    faer::get_global_parallelism()
}

pub fn one() -> c64 {
    c64::new(1.0, 0.0)
}

pub fn zero() -> c64 {
    c64::new(0.0, 0.0)
}

/// `a * b` using the global parallelism setting.
pub fn mul(a: MatRef<'_, c64>, b: MatRef<'_, c64>) -> Mat<c64> {
    let mut out = Mat::<c64>::zeros(a.nrows(), b.ncols());
    matmul(out.as_mut(), Accum::Replace, a, b, one(), par());
    out
}

pub fn norm1(a: MatRef<'_, c64>) -> f64 {
    let mut best = 0.0f64;
    for j in 0..a.ncols() {
        let mut s = 0.0;
        for i in 0..a.nrows() {
            s += a[(i, j)].norm();
        }
        best = best.max(s);
    }
    best
}

pub fn fro(a: MatRef<'_, c64>) -> f64 {
    let mut s = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            s += a[(i, j)].norm_sqr();
        }
    }
    s.sqrt()
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Matrix exponential by scaling and squaring with the degree-13 Padé approximant.
pub fn expm(a: MatRef<'_, c64>) -> Mat<c64> {
    let n = a.nrows();
    let theta13 = 5.371920351148152;
    let nrm = norm1(a);
    let s = if nrm > theta13 {
        (nrm / theta13).log2().ceil() as i32
    } else {
        0
    };
    let scale = c64::new(0.5f64.powi(s), 0.0);
    let a1 = Mat::<c64>::from_fn(n, n, |i, j| a[(i, j)] * scale);
    let a2 = mul(a1.as_ref(), a1.as_ref());
    let a4 = mul(a2.as_ref(), a2.as_ref());
    let a6 = mul(a4.as_ref(), a2.as_ref());
    let b = |k: usize| c64::new(PADE13[k], 0.0);
    let id = |i: usize, j: usize| if i == j { one() } else { zero() };
    let inner_u = Mat::<c64>::from_fn(n, n, |i, j| {
        b(13) * a6[(i, j)] + b(11) * a4[(i, j)] + b(9) * a2[(i, j)]
    });
    let mut tu = mul(a6.as_ref(), inner_u.as_ref());
    for j in 0..n {
        for i in 0..n {
            tu[(i, j)] += b(7) * a6[(i, j)] + b(5) * a4[(i, j)] + b(3) * a2[(i, j)] + b(1) * id(i, j);
        }
    }
    let u = mul(a1.as_ref(), tu.as_ref());
    let inner_v = Mat::<c64>::from_fn(n, n, |i, j| {
        b(12) * a6[(i, j)] + b(10) * a4[(i, j)] + b(8) * a2[(i, j)]
    });
    let mut v = mul(a6.as_ref(), inner_v.as_ref());
    for j in 0..n {
        for i in 0..n {
            v[(i, j)] += b(6) * a6[(i, j)] + b(4) * a4[(i, j)] + b(2) * a2[(i, j)] + b(0) * id(i, j);
        }
    }
    let p = Mat::<c64>::from_fn(n, n, |i, j| v[(i, j)] + u[(i, j)]);
    let q = Mat::<c64>::from_fn(n, n, |i, j| v[(i, j)] - u[(i, j)]);
    let mut r = q.partial_piv_lu().solve(&p);
    for _ in 0..s {
        r = mul(r.as_ref(), r.as_ref());
    }
    r
}

/// Returns `[exp(Z), phi_1(Z), ..., phi_p(Z)]` from one exponential of the
/// block-augmented matrix `[[Z, I, 0..], [0, 0, I, ..], ...]`.
pub fn phi_functions(z: MatRef<'_, c64>, p: usize) -> Vec<Mat<c64>> {
    let m = z.nrows();
    let big = m * (p + 1);
    let mut w = Mat::<c64>::zeros(big, big);
    for j in 0..m {
        for i in 0..m {
            w[(i, j)] = z[(i, j)];
        }
    }
    for blk in 0..p {
        for i in 0..m {
            w[(blk * m + i, (blk + 1) * m + i)] = one();
        }
    }
    let e = expm(w.as_ref());
    (0..=p)
        .map(|blk| Mat::<c64>::from_fn(m, m, |i, j| e[(i, blk * m + j)]))
        .collect()
}

/// Moore-Penrose pseudo-inverse, discarding singular values below `rtol * s_max`.
pub fn pinv(a: MatRef<'_, c64>, rtol: f64) -> Result<Mat<c64>, Error> {
    let svd = a
        .svd()
        .map_err(|e| Error::Numerical(format!("svd failed: {e:?}")))?;
    let s = svd.S().column_vector();
    let u = svd.U();
    let v = svd.V();
    let k = s.nrows();
    let smax = if k > 0 { s[0].re } else { 0.0 };
    let mut vs = Mat::<c64>::zeros(v.nrows(), k);
    for c in 0..k {
        let sv = s[c].re;
        if sv > rtol * smax && sv > 0.0 {
            for r in 0..v.nrows() {
                vs[(r, c)] = v[(r, c)] / sv;
            }
        }
    }
    let uh = u.adjoint().to_owned();
    Ok(mul(vs.as_ref(), uh.as_ref()))
}

/// Solves `a x = b` for square `a` by partial-pivot LU.
pub fn solve(a: MatRef<'_, c64>, b: MatRef<'_, c64>) -> Mat<c64> {
    a.partial_piv_lu().solve(b)
}

pub fn dot(a: &[c64], b: &[c64]) -> c64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn vnorm(a: &[c64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct GmresStats {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Right-preconditioned restarted GMRES for `A x = b`.
///
/// `apply` computes `A v`, `precond` computes `P^{-1} v`. Stops when the true
/// residual is below `tol * |b|`.
pub fn gmres(
    apply: &dyn Fn(&[c64]) -> Vec<c64>,
    precond: &dyn Fn(&[c64]) -> Vec<c64>,
    b: &[c64],
    restart: usize,
    max_iter: usize,
    tol: f64,
) -> (Vec<c64>, GmresStats) {
    let n = b.len();
    let bnorm = vnorm(b);
    let mut x = vec![zero(); n];
    if bnorm == 0.0 {
        return (
            x,
            GmresStats {
                iterations: 0,
                residual: 0.0,
                converged: true,
            },
        );
    }
    let mut total = 0;
    let mut res;
    while total < max_iter {
        let ax = apply(&x);
        let r: Vec<c64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
        res = vnorm(&r);
        if res <= tol * bnorm {
            return (
                x,
                GmresStats {
                    iterations: total,
                    residual: res / bnorm,
                    converged: true,
                },
            );
        }
        let mut basis: Vec<Vec<c64>> = vec![r.iter().map(|v| v / res).collect()];
        let mut h = vec![vec![zero(); restart]; restart + 1];
        let mut cs = vec![zero(); restart];
        let mut sn = vec![zero(); restart];
        let mut g = vec![zero(); restart + 1];
        g[0] = c64::new(res, 0.0);
        let mut zs: Vec<Vec<c64>> = Vec::new();
        let mut used = 0;
        for j in 0..restart {
            let zj = precond(&basis[j]);
            let mut w = apply(&zj);
            zs.push(zj);
            for i in 0..=j {
                let hij = dot(&basis[i], &w);
                h[i][j] = hij;
                for (wk, vk) in w.iter_mut().zip(&basis[i]) {
                    *wk -= hij * vk;
                }
            }
            // one reorthogonalisation pass keeps the basis clean near convergence
            for i in 0..=j {
                let c = dot(&basis[i], &w);
                h[i][j] += c;
                for (wk, vk) in w.iter_mut().zip(&basis[i]) {
                    *wk -= c * vk;
                }
            }
            let hn = vnorm(&w);
            h[j + 1][j] = c64::new(hn, 0.0);
            for i in 0..j {
                let t = cs[i].conj() * h[i][j] + sn[i].conj() * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let a = h[j][j];
            let bb = h[j + 1][j];
            let den = (a.norm_sqr() + bb.norm_sqr()).sqrt();
            if den == 0.0 {
                cs[j] = one();
                sn[j] = zero();
            } else {
                cs[j] = a / den;
                sn[j] = bb / den;
            }
            h[j][j] = cs[j].conj() * a + sn[j].conj() * bb;
            h[j + 1][j] = zero();
            g[j + 1] = -sn[j] * g[j];
            g[j] = cs[j].conj() * g[j];
            used = j + 1;
            total += 1;
            if g[j + 1].norm() <= 0.1 * tol * bnorm || hn == 0.0 || total >= max_iter {
                break;
            }
            basis.push(w.iter().map(|v| v / hn).collect());
        }
        let mut y = vec![zero(); used];
        for i in (0..used).rev() {
            let mut s = g[i];
            for k in i + 1..used {
                s -= h[i][k] * y[k];
            }
            y[i] = s / h[i][i];
        }
        for (k, zk) in zs.iter().enumerate().take(used) {
            for (xi, zi) in x.iter_mut().zip(zk) {
                *xi += y[k] * zi;
            }
        }
    }
    let ax = apply(&x);
    let r: Vec<c64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
    res = vnorm(&r);
    let converged = res <= tol * bnorm;
    (
        x,
        GmresStats {
            iterations: total,
            residual: res / bnorm,
            converged,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expm_of_diagonal() {
        let a = Mat::<c64>::from_fn(3, 3, |i, j| {
            if i == j {
                c64::new(-(i as f64) * 40.0, 0.5)
            } else {
                zero()
            }
        });
        let e = expm(a.as_ref());
        for i in 0..3 {
            let want = (c64::new(-(i as f64) * 40.0, 0.5)).exp();
            assert!((e[(i, i)] - want).norm() < 1e-14 * (1.0 + want.norm()));
        }
    }

    #[test]
    fn expm_nilpotent_is_polynomial() {
        let mut a = Mat::<c64>::zeros(3, 3);
        a[(0, 1)] = c64::new(2.0, 0.0);
        a[(1, 2)] = c64::new(3.0, 0.0);
        let e = expm(a.as_ref());
        assert!((e[(0, 2)] - c64::new(3.0, 0.0)).norm() < 1e-13);
        assert!((e[(0, 1)] - c64::new(2.0, 0.0)).norm() < 1e-13);
    }

    #[test]
    fn phi_functions_scalar() {
        let z = -3.7f64;
        let m = Mat::<c64>::from_fn(1, 1, |_, _| c64::new(z, 0.0));
        let f = phi_functions(m.as_ref(), 3);
        let e = z.exp();
        let p1 = (e - 1.0) / z;
        let p2 = (e - 1.0 - z) / (z * z);
        let p3 = (e - 1.0 - z - z * z / 2.0) / (z * z * z);
        for (got, want) in f.iter().zip([e, p1, p2, p3]) {
            assert!((got[(0, 0)].re - want).abs() < 1e-14);
        }
    }

    #[test]
    fn gmres_solves_small_system() {
        let n = 12;
        let a = Mat::<c64>::from_fn(n, n, |i, j| {
            if i == j {
                c64::new(4.0 + i as f64, 0.0)
            } else {
                c64::new(0.3 / (1.0 + (i + 2 * j) as f64), 0.1)
            }
        });
        let b: Vec<c64> = (0..n).map(|i| c64::new(i as f64, 1.0)).collect();
        let apply = |v: &[c64]| -> Vec<c64> {
            (0..n).map(|i| (0..n).map(|j| a[(i, j)] * v[j]).sum()).collect()
        };
        let id = |v: &[c64]| v.to_vec();
        let (x, st) = gmres(&apply, &id, &b, 5, 200, 1e-13);
        assert!(st.converged);
        let r = apply(&x);
        for i in 0..n {
            assert!((r[i] - b[i]).norm() < 1e-11);
        }
    }
}
