//! Discrete Bloch transform on a finite patch of lattice cells.
//!
//! A patch holds `M_d` copies of the cell in each periodic direction, sampled
//! on the cell's horizontal nodes; an optional trailing axis (e.g. wall-normal
//! nodes) is carried along untouched. The dual cell is sampled at
//! `η_d = α_d r / M_d`, `r = -⌊M_d/2⌋ .. ⌈M_d/2⌉ - 1`, so sums over `η'`
//! carry the weight `|Q*| / Π M_d`.

use std::f64::consts::PI;

use faer::c64;

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LatticeSampling {
    /// Cells per periodic direction.
    pub m: Vec<usize>,
    /// Cell points per periodic direction.
    pub nh: Vec<usize>,
    pub alpha: Vec<f64>,
    /// Length of the trailing non-periodic axis.
    pub tail: usize,
    /// Row-major over `(global index per direction..., tail)`, global index
    /// `g_d = l_d * nh_d + j_d`.
    pub data: Vec<c64>,
}

/// Cell functions for every discrete `η'`, row-major over the `η'` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct BlochFunctions {
    pub m: Vec<usize>,
    pub nh: Vec<usize>,
    pub alpha: Vec<f64>,
    pub tail: usize,
    pub etas: Vec<Vec<f64>>,
    /// One cell function per `η'`, row-major over `(j_d..., tail)`.
    pub cells: Vec<Vec<c64>>,
}

fn unravel(mut idx: usize, dims: &[usize]) -> Vec<usize> {
    let mut out = vec![0; dims.len()];
    for d in (0..dims.len()).rev() {
        out[d] = idx % dims[d];
        idx /= dims[d];
    }
    out
}

impl LatticeSampling {
    pub fn zeros(m: &[usize], nh: &[usize], alpha: &[f64], tail: usize) -> Self {
        let n: usize = m.iter().zip(nh).map(|(a, b)| a * b).product::<usize>() * tail;
        Self {
            m: m.to_vec(),
            nh: nh.to_vec(),
            alpha: alpha.to_vec(),
            tail,
            data: vec![c64::new(0.0, 0.0); n],
        }
    }

    pub fn global_dims(&self) -> Vec<usize> {
        self.m.iter().zip(&self.nh).map(|(a, b)| a * b).collect()
    }

    /// Horizontal coordinate of global index `g` along direction `d`.
    pub fn coord(&self, d: usize, g: usize) -> f64 {
        2.0 * PI / self.alpha[d] * g as f64 / self.nh[d] as f64
    }

    /// Patch L² norm squared (uniform horizontal weights, unit tail weights).
    pub fn norm_sq(&self) -> f64 {
        let h: f64 = self
            .nh
            .iter()
            .zip(&self.alpha)
            .map(|(n, a)| 2.0 * PI / a / *n as f64)
            .product();
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>() * h
    }

    fn check(&self) -> Result<()> {
        let k = self.m.len();
        if self.nh.len() != k || self.alpha.len() != k {
            return Err(Error::InvalidParameter("mismatched cell grids".into()));
        }
        let n: usize = self.global_dims().iter().product::<usize>() * self.tail;
        if self.data.len() != n {
            return Err(Error::InvalidParameter("sample count does not match the patch".into()));
        }
        Ok(())
    }
}

/// Discrete dual-cell points `η_d = α_d r / M_d`.
pub fn dual_points(m: &[usize], alpha: &[f64]) -> Vec<Vec<f64>> {
    let total: usize = m.iter().product();
    (0..total)
        .map(|i| {
            let r = unravel(i, m);
            r.iter()
                .enumerate()
                .map(|(d, &ri)| {
                    let shift = (m[d] / 2) as i64;
                    alpha[d] * (ri as i64 - shift) as f64 / m[d] as f64
                })
                .collect()
        })
        .collect()
}

/// `(Tφ)(x', η') = |Q*|^{-1/2} Σ_l φ(x' + l·L) e^{-iη'·(x' + l·L)}` at an arbitrary `η'`.
pub fn bloch_at(s: &LatticeSampling, eta: &[f64]) -> Result<Vec<c64>> {
    s.check()?;
    let k = s.m.len();
    let qvol: f64 = s.alpha.iter().product();
    let norm = qvol.powf(-0.5);
    let cell_total: usize = s.nh.iter().product();
    let lat_total: usize = s.m.iter().product();
    let gd = s.global_dims();
    let mut out = vec![c64::new(0.0, 0.0); cell_total * s.tail];
    for ci in 0..cell_total {
        let j = unravel(ci, &s.nh);
        for li in 0..lat_total {
            let l = unravel(li, &s.m);
            let mut g = 0usize;
            let mut th = 0.0;
            for d in 0..k {
                let gdx = l[d] * s.nh[d] + j[d];
                g = g * gd[d] + gdx;
                th -= eta[d] * s.coord(d, gdx);
            }
            let ph = c64::new(th.cos(), th.sin()) * norm;
            for t in 0..s.tail {
                out[ci * s.tail + t] += s.data[g * s.tail + t] * ph;
            }
        }
    }
    Ok(out)
}

/// Forward transform on the discrete dual grid.
pub fn bloch_forward(s: &LatticeSampling) -> Result<BlochFunctions> {
    let etas = dual_points(&s.m, &s.alpha);
    let cells = etas.iter().map(|e| bloch_at(s, e)).collect::<Result<Vec<_>>>()?;
    Ok(BlochFunctions {
        m: s.m.clone(),
        nh: s.nh.clone(),
        alpha: s.alpha.clone(),
        tail: s.tail,
        etas,
        cells,
    })
}

/// `φ(x' + l·L) = |Q*|^{-1/2} (|Q*|/ΠM) Σ_η' (Tφ)(x', η') e^{iη'·(x' + l·L)}`.
pub fn bloch_inverse(f: &BlochFunctions) -> LatticeSampling {
    let k = f.m.len();
    let qvol: f64 = f.alpha.iter().product();
    let lat_total: usize = f.m.iter().product();
    let weight = qvol.powf(-0.5) * qvol / lat_total as f64;
    let mut s = LatticeSampling::zeros(&f.m, &f.nh, &f.alpha, f.tail);
    let gd = s.global_dims();
    let cell_total: usize = f.nh.iter().product();
    for (eta, cell) in f.etas.iter().zip(&f.cells) {
        for ci in 0..cell_total {
            let j = unravel(ci, &f.nh);
            for li in 0..lat_total {
                let l = unravel(li, &f.m);
                let mut g = 0usize;
                let mut th = 0.0;
                for d in 0..k {
                    let gdx = l[d] * f.nh[d] + j[d];
                    g = g * gd[d] + gdx;
                    th += eta[d] * s.coord(d, gdx);
                }
                let ph = c64::new(th.cos(), th.sin()) * weight;
                for t in 0..f.tail {
                    s.data[g * f.tail + t] += cell[ci * f.tail + t] * ph;
                }
            }
        }
    }
    s
}

impl BlochFunctions {
    /// `(|Q*|/ΠM) Σ_η' ‖(Tφ)(·,η')‖²` with cell quadrature.
    pub fn norm_sq(&self) -> f64 {
        let qvol: f64 = self.alpha.iter().product();
        let lat_total: usize = self.m.iter().product();
        let h: f64 = self
            .nh
            .iter()
            .zip(&self.alpha)
            .map(|(n, a)| 2.0 * PI / a / *n as f64)
            .product();
        let s: f64 = self
            .cells
            .iter()
            .map(|c| c.iter().map(|v| v.norm_sqr()).sum::<f64>())
            .sum();
        s * h * qvol / lat_total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cell_roundtrip() {
        let mut s = LatticeSampling::zeros(&[1], &[5], &[0.8], 1);
        for (i, v) in s.data.iter_mut().enumerate() {
            *v = c64::new(i as f64, 1.0 - i as f64);
        }
        let f = bloch_forward(&s).unwrap();
        assert_eq!(f.etas, vec![vec![0.0]]);
        let back = bloch_inverse(&f);
        for (a, b) in s.data.iter().zip(&back.data) {
            assert!((a - b).norm() < 1e-13);
        }
    }

    #[test]
    fn plane_wave_concentrates() {
        let (m, n, a) = (4usize, 5usize, 0.6f64);
        let etas = dual_points(&[m], &[a]);
        let e0 = etas[3][0];
        let beta = e0 + 2.0 * a;
        let mut s = LatticeSampling::zeros(&[m], &[n], &[a], 1);
        for g in 0..m * n {
            let x = s.coord(0, g);
            s.data[g] = c64::new((beta * x).cos(), (beta * x).sin());
        }
        let f = bloch_forward(&s).unwrap();
        for (i, c) in f.cells.iter().enumerate() {
            let nrm: f64 = c.iter().map(|v| v.norm()).sum();
            if i == 3 {
                assert!(nrm > 1.0);
            } else {
                assert!(nrm < 1e-11, "leak at {i}: {nrm}");
            }
        }
    }

    #[test]
    fn mismatched_grid_rejected() {
        let mut s = LatticeSampling::zeros(&[2], &[5], &[0.6], 1);
        s.nh = vec![5, 3];
        assert!(bloch_forward(&s).is_err());
    }
}
