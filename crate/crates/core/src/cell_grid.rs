//! Discretization of the periodic cell `Π T_{2π/α_j} × (0,1)`.
//!
//! Horizontal directions use Fourier collocation on an odd number of points,
//! the wall-normal direction uses Chebyshev-Gauss-Lobatto nodes on `[0,1]`.
//! Point fields are stored as `B × npts` matrices (one row per batch member),
//! point index `p = h * nz + iz` with `h` the row-major horizontal index.
//!
//! Packed state vectors hold `φ` at every point followed by each velocity
//! component at interior wall-normal nodes only (Dirichlet elimination).

use std::f64::consts::PI;

use faer::linalg::matmul::matmul;
use faer::{c64, Accum, Mat, MatMut, MatRef};

use crate::linalg::{one, par, zero};
use crate::{Error, Result};

/// Chebyshev-Gauss-Lobatto nodes `z_j = (1 - cos(πj/N))/2` on `[0,1]` and the
/// matching differentiation matrix.
pub fn chebyshev(n: usize) -> (Vec<f64>, Mat<f64>) {
    let x: Vec<f64> = (0..=n).map(|j| (PI * j as f64 / n as f64).cos()).collect();
    let c: Vec<f64> = (0..=n)
        .map(|j| {
            let s = if j == 0 || j == n { 2.0 } else { 1.0 };
            if j % 2 == 0 {
                s
            } else {
                -s
            }
        })
        .collect();
    let mut d = Mat::<f64>::zeros(n + 1, n + 1);
    for i in 0..=n {
        let mut row = 0.0;
        for j in 0..=n {
            if i != j {
                d[(i, j)] = c[i] / c[j] / (x[i] - x[j]);
                row += d[(i, j)];
            }
        }
        d[(i, i)] = -row;
    }
    // z = (1 - x)/2  =>  d/dz = -2 d/dx
    let z = x.iter().map(|v| 0.5 * (1.0 - v)).collect();
    let dz = Mat::<f64>::from_fn(n + 1, n + 1, |i, j| -2.0 * d[(i, j)]);
    (z, dz)
}

/// Clenshaw-Curtis weights on `[0,1]` for the nodes of [`chebyshev`].
pub fn clenshaw_curtis(n: usize) -> Vec<f64> {
    let mut w = vec![0.0; n + 1];
    let nf = n as f64;
    let mut v = vec![1.0; n.saturating_sub(1)];
    if n % 2 == 0 {
        w[0] = 1.0 / (nf * nf - 1.0);
        w[n] = w[0];
        for k in 1..n / 2 {
            for (i, vi) in v.iter_mut().enumerate() {
                let th = PI * (i + 1) as f64 / nf;
                *vi -= 2.0 * (2.0 * k as f64 * th).cos() / (4.0 * (k * k) as f64 - 1.0);
            }
        }
        for (i, vi) in v.iter_mut().enumerate() {
            let th = PI * (i + 1) as f64 / nf;
            *vi -= (nf * th).cos() / (nf * nf - 1.0);
        }
    } else {
        w[0] = 1.0 / (nf * nf);
        w[n] = w[0];
        for k in 1..=(n - 1) / 2 {
            for (i, vi) in v.iter_mut().enumerate() {
                let th = PI * (i + 1) as f64 / nf;
                *vi -= 2.0 * (2.0 * k as f64 * th).cos() / (4.0 * (k * k) as f64 - 1.0);
            }
        }
    }
    for (i, vi) in v.iter().enumerate() {
        w[i + 1] = 2.0 * vi / nf;
    }
    w.iter().map(|x| 0.5 * x).collect()
}

/// Signed wavenumber index of DFT slot `q` for `n` points (FFT ordering).
pub fn wavenumber(q: usize, n: usize) -> i64 {
    let k = (n - 1) / 2;
    if q <= k {
        q as i64
    } else {
        q as i64 - n as i64
    }
}

/// Forward DFT (`n × n`, includes the `1/n`), inverse DFT and the spectral
/// differentiation matrix on a period of length `len`.
pub fn fourier(n: usize, len: f64) -> (Mat<c64>, Mat<c64>, Mat<c64>) {
    let fwd = Mat::<c64>::from_fn(n, n, |q, j| {
        let th = -2.0 * PI * (wavenumber(q, n) * j as i64) as f64 / n as f64;
        c64::new(th.cos(), th.sin()) / n as f64
    });
    let inv = Mat::<c64>::from_fn(n, n, |j, q| {
        let th = 2.0 * PI * (wavenumber(q, n) * j as i64) as f64 / n as f64;
        c64::new(th.cos(), th.sin())
    });
    let mut d = Mat::<c64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut s = zero();
            for q in 0..n {
                let k = 2.0 * PI * wavenumber(q, n) as f64 / len;
                s += inv[(i, q)] * c64::new(0.0, k) * fwd[(q, j)];
            }
            d[(i, j)] = c64::new(s.re, 0.0);
        }
    }
    (fwd, inv, d)
}

/// Spectral time-differentiation matrix on `n` uniform samples of period 1.
/// For even `n` the unpaired Nyquist component is differentiated to zero.
pub fn time_derivative_matrix(n: usize) -> Mat<c64> {
    let mut d = Mat::<c64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut s = zero();
            for q in 0..n {
                let k = time_frequency(q, n);
                if n % 2 == 0 && q == n / 2 {
                    continue;
                }
                let th = 2.0 * PI * k as f64 * (i as f64 - j as f64) / n as f64;
                s += c64::new(0.0, 2.0 * PI * k as f64) * c64::new(th.cos(), th.sin());
            }
            d[(i, j)] = c64::new(s.re / n as f64, 0.0);
        }
    }
    d
}

/// Temporal frequency of DFT slot `q` for `n` samples (Nyquist counted positive).
pub fn time_frequency(q: usize, n: usize) -> i64 {
    if q <= n / 2 {
        q as i64
    } else {
        q as i64 - n as i64
    }
}

/// Applies a 1-D operator along `axis` of a field laid out row-major with
/// shape `dims` in the columns of `x`: every line `v` becomes `v * op_t`.
pub(crate) fn line_apply(
    x: MatRef<'_, c64>,
    y: MatMut<'_, c64>,
    dims: &[usize],
    axis: usize,
    op_t: MatRef<'_, c64>,
    accum: Accum,
) {
    let b = x.nrows();
    let stride: usize = dims[axis + 1..].iter().product();
    let len = dims[axis];
    let total: usize = dims.iter().product();
    assert_eq!(x.ncols(), total);
    assert_eq!(y.ncols(), total);
    if b == 0 || total == 0 {
        return;
    }
    let (xr, xc) = (x.row_stride(), x.col_stride());
    let (yr, yc) = (y.row_stride(), y.col_stride());
    let xp = x.as_ptr();
    let yp = y.as_ptr_mut();
    for start in 0..total {
        if (start / stride) % len != 0 {
            continue;
        }
        // SAFETY: the views stay inside the original matrices (same row range,
        // columns start + k * stride for k < len, all < total), and distinct
        // line starts touch disjoint output columns.
        unsafe {
            let xv = MatRef::from_raw_parts(
                xp.offset(start as isize * xc),
                b,
                len,
                xr,
                xc * stride as isize,
            );
            let yv = MatMut::from_raw_parts_mut(
                yp.offset(start as isize * yc),
                b,
                len,
                yr,
                yc * stride as isize,
            );
            matmul(yv, accum, xv, op_t, one(), par());
        }
    }
}

/// Multiplies point field `x` (`B × npts`) by a coefficient field that is
/// either a single row (broadcast) or one row per batch member.
pub fn mul_coef(x: MatRef<'_, c64>, c: MatRef<'_, c64>) -> Mat<c64> {
    assert_eq!(x.ncols(), c.ncols());
    if c.nrows() == 1 {
        Mat::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] * c[(0, j)])
    } else {
        assert_eq!(x.nrows(), c.nrows());
        Mat::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] * c[(i, j)])
    }
}

/// `y += x * c` with the same broadcasting rule as [`mul_coef`].
pub fn add_mul_coef(y: &mut Mat<c64>, x: MatRef<'_, c64>, c: MatRef<'_, c64>) {
    let bc = c.nrows() == 1;
    for j in 0..x.ncols() {
        for i in 0..x.nrows() {
            let cv = if bc { c[(0, j)] } else { c[(i, j)] };
            y[(i, j)] += x[(i, j)] * cv;
        }
    }
}

pub fn add_scaled(y: &mut Mat<c64>, x: MatRef<'_, c64>, s: c64) {
    for j in 0..x.ncols() {
        for i in 0..x.nrows() {
            y[(i, j)] += x[(i, j)] * s;
        }
    }
}

/// Velocity-pressure style split of a packed batch: `φ` and each velocity
/// component as full point fields (walls included, zero there).
#[derive(Clone, Debug)]
pub struct Expanded {
    pub phi: Mat<c64>,
    pub w: Vec<Mat<c64>>,
}

#[derive(Clone, Debug)]
pub struct CellGrid {
    dim_n: usize,
    nh: Vec<usize>,
    nz: usize,
    alpha: Vec<f64>,
    z: Vec<f64>,
    wz: Vec<f64>,
    dz: Mat<c64>,
    dz_t: Mat<c64>,
    dh: Vec<Mat<c64>>,
    dh_t: Vec<Mat<c64>>,
    fwd_t: Vec<Mat<c64>>,
    inv_t: Vec<Mat<c64>>,
    qw: Vec<f64>,
}

impl CellGrid {
    /// `nh`: points per horizontal direction (odd), `nz`: wall-normal nodes.
    pub fn new(dim_n: usize, nh: &[usize], nz: usize, alpha: &[f64]) -> Result<Self> {
        if !(dim_n == 2 || dim_n == 3) {
            return Err(Error::InvalidParameter(format!("dim_n must be 2 or 3, got {dim_n}")));
        }
        if nh.len() != dim_n - 1 || alpha.len() != dim_n - 1 {
            return Err(Error::InvalidParameter(
                "need one horizontal size and one lattice frequency per periodic direction".into(),
            ));
        }
        if nh.iter().any(|&n| n < 3 || n % 2 == 0) {
            return Err(Error::InvalidParameter(
                "horizontal point counts must be odd and >= 3 (no unpaired Nyquist mode)".into(),
            ));
        }
        if nz < 4 {
            return Err(Error::InvalidParameter("need at least 4 wall-normal nodes".into()));
        }
        if alpha.iter().any(|&a| !(a > 0.0)) {
            return Err(Error::InvalidParameter("lattice frequencies must be positive".into()));
        }
        let (z, dzr) = chebyshev(nz - 1);
        let wz = clenshaw_curtis(nz - 1);
        let dz = Mat::<c64>::from_fn(nz, nz, |i, j| c64::new(dzr[(i, j)], 0.0));
        let dz_t = dz.transpose().to_owned();
        let mut dh = Vec::new();
        let mut fwd_t = Vec::new();
        let mut inv_t = Vec::new();
        for (d, &n) in nh.iter().enumerate() {
            let (f, g, dd) = fourier(n, 2.0 * PI / alpha[d]);
            fwd_t.push(f.transpose().to_owned());
            inv_t.push(g.transpose().to_owned());
            dh.push(dd);
        }
        let dh_t = dh.iter().map(|m| m.transpose().to_owned()).collect();
        let hw: f64 = nh
            .iter()
            .zip(alpha)
            .map(|(&n, &a)| 2.0 * PI / a / n as f64)
            .product();
        let nht: usize = nh.iter().product();
        let mut qw = Vec::with_capacity(nht * nz);
        for _ in 0..nht {
            for &w in &wz {
                qw.push(hw * w);
            }
        }
        Ok(Self {
            dim_n,
            nh: nh.to_vec(),
            nz,
            alpha: alpha.to_vec(),
            z,
            wz,
            dz,
            dz_t,
            dh,
            dh_t,
            fwd_t,
            inv_t,
            qw,
        })
    }

    pub fn dim_n(&self) -> usize {
        self.dim_n
    }
    pub fn nh(&self) -> &[usize] {
        &self.nh
    }
    pub fn nz(&self) -> usize {
        self.nz
    }
    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }
    pub fn z(&self) -> &[f64] {
        &self.z
    }
    pub fn wz(&self) -> &[f64] {
        &self.wz
    }
    pub fn nh_total(&self) -> usize {
        self.nh.iter().product()
    }
    pub fn npts(&self) -> usize {
        self.nh_total() * self.nz
    }
    pub fn nint(&self) -> usize {
        self.nh_total() * (self.nz - 2)
    }
    pub fn ndof(&self) -> usize {
        self.npts() + self.dim_n * self.nint()
    }
    /// Size of one horizontal-mode block of a packed vector.
    pub fn block_size(&self) -> usize {
        self.nz + self.dim_n * (self.nz - 2)
    }
    pub fn cell_volume(&self) -> f64 {
        self.alpha.iter().map(|a| 2.0 * PI / a).product()
    }
    /// Quadrature weight of each point (integral over the cell, not normalized).
    pub fn quad_weights(&self) -> &[f64] {
        &self.qw
    }
    pub fn dz_matrix(&self) -> MatRef<'_, c64> {
        self.dz.as_ref()
    }
    pub fn dh_matrix(&self, d: usize) -> MatRef<'_, c64> {
        self.dh[d].as_ref()
    }

    /// Shape of a point field: horizontal sizes then `nz`.
    pub fn point_dims(&self) -> Vec<usize> {
        let mut d = self.nh.clone();
        d.push(self.nz);
        d
    }
    fn interior_dims(&self) -> Vec<usize> {
        let mut d = self.nh.clone();
        d.push(self.nz - 2);
        d
    }

    /// Horizontal coordinates of flat horizontal index `h`.
    pub fn horizontal_coords(&self, h: usize) -> Vec<f64> {
        let mut rem = h;
        let mut out = vec![0.0; self.nh.len()];
        for d in (0..self.nh.len()).rev() {
            let i = rem % self.nh[d];
            rem /= self.nh[d];
            out[d] = 2.0 * PI / self.alpha[d] * i as f64 / self.nh[d] as f64;
        }
        out
    }

    /// Coordinates `(x', z)` of point `p`.
    pub fn point_coords(&self, p: usize) -> (Vec<f64>, f64) {
        (self.horizontal_coords(p / self.nz), self.z[p % self.nz])
    }

    /// Signed wavenumber indices of flat horizontal mode slot `kappa`.
    pub fn mode_indices(&self, kappa: usize) -> Vec<i64> {
        let mut rem = kappa;
        let mut out = vec![0; self.nh.len()];
        for d in (0..self.nh.len()).rev() {
            let q = rem % self.nh[d];
            rem /= self.nh[d];
            out[d] = wavenumber(q, self.nh[d]);
        }
        out
    }

    /// Bloch-shifted symbol `k_d α_d + η_d` of mode `kappa`.
    pub fn mode_symbol(&self, kappa: usize, eta: &[f64]) -> Vec<f64> {
        self.mode_indices(kappa)
            .iter()
            .enumerate()
            .map(|(d, &k)| k as f64 * self.alpha[d] + eta.get(d).copied().unwrap_or(0.0))
            .collect()
    }

    /// Bloch-shifted derivative `∂_dir + iη_dir` of a point field; `dir = n-1`
    /// is the wall-normal direction (no shift). With a zero shift the result
    /// is exactly the plain derivative.
    pub fn deriv(&self, x: MatRef<'_, c64>, dir: usize, eta: &[f64]) -> Mat<c64> {
        let mut y = Mat::<c64>::zeros(x.nrows(), x.ncols());
        self.deriv_into(x, y.as_mut(), dir, eta, Accum::Replace);
        y
    }

    pub fn deriv_into(&self, x: MatRef<'_, c64>, y: MatMut<'_, c64>, dir: usize, eta: &[f64], accum: Accum) {
        let dims = self.point_dims();
        if dir + 1 < self.dim_n {
            let mut y = y;
            line_apply(x, y.as_mut(), &dims, dir, self.dh_t[dir].as_ref(), accum);
            let s = eta.get(dir).copied().unwrap_or(0.0);
            if s != 0.0 {
                let is = c64::new(0.0, s);
                for j in 0..x.ncols() {
                    for i in 0..x.nrows() {
                        y[(i, j)] += is * x[(i, j)];
                    }
                }
            }
        } else {
            line_apply(x, y, &dims, self.dim_n - 1, self.dz_t.as_ref(), accum);
        }
    }

    /// `∇_η f` as a list of `n` point fields.
    pub fn grad(&self, x: MatRef<'_, c64>, eta: &[f64]) -> Vec<Mat<c64>> {
        (0..self.dim_n).map(|d| self.deriv(x, d, eta)).collect()
    }

    /// `∇_η · w`.
    pub fn div(&self, w: &[Mat<c64>], eta: &[f64]) -> Mat<c64> {
        let mut y = Mat::<c64>::zeros(w[0].nrows(), w[0].ncols());
        for (d, wd) in w.iter().enumerate() {
            self.deriv_into(wd.as_ref(), y.as_mut(), d, eta, Accum::Add);
        }
        y
    }

    /// `Δ_η f = Σ_d (∂_d + iη_d)^2 f`.
    pub fn laplace(&self, x: MatRef<'_, c64>, eta: &[f64]) -> Mat<c64> {
        let mut y = Mat::<c64>::zeros(x.nrows(), x.ncols());
        for d in 0..self.dim_n {
            let g = self.deriv(x, d, eta);
            self.deriv_into(g.as_ref(), y.as_mut(), d, eta, Accum::Add);
        }
        y
    }

    /// `∇_η (∇_η · w)`.
    pub fn grad_div(&self, w: &[Mat<c64>], eta: &[f64]) -> Vec<Mat<c64>> {
        let d = self.div(w, eta);
        self.grad(d.as_ref(), eta)
    }

    /// Packed batch to full point fields (zero velocity at the walls).
    pub fn expand(&self, x: MatRef<'_, c64>) -> Expanded {
        let b = x.nrows();
        let (npts, nint, nz) = (self.npts(), self.nint(), self.nz);
        let phi = x.subcols(0, npts).to_owned();
        let mut w = Vec::with_capacity(self.dim_n);
        for c in 0..self.dim_n {
            let sec = x.subcols(npts + c * nint, nint);
            let mut f = Mat::<c64>::zeros(b, npts);
            for h in 0..self.nh_total() {
                for iz in 1..nz - 1 {
                    f.col_mut(h * nz + iz).copy_from(sec.col(h * (nz - 2) + iz - 1));
                }
            }
            w.push(f);
        }
        Expanded { phi, w }
    }

    /// Full point fields to a packed batch; velocity wall values are dropped.
    pub fn pack(&self, phi: MatRef<'_, c64>, w: &[Mat<c64>]) -> Mat<c64> {
        let b = phi.nrows();
        let (npts, nint, nz) = (self.npts(), self.nint(), self.nz);
        let mut out = Mat::<c64>::zeros(b, self.ndof());
        out.as_mut().subcols_mut(0, npts).copy_from(phi);
        for (c, wc) in w.iter().enumerate() {
            for h in 0..self.nh_total() {
                for iz in 1..nz - 1 {
                    out.col_mut(npts + c * nint + h * (nz - 2) + iz - 1)
                        .copy_from(wc.col(h * nz + iz));
                }
            }
        }
        out
    }

    fn transform_section(&self, x: MatRef<'_, c64>, dims: &[usize], inverse: bool) -> Mat<c64> {
        let mut cur = x.to_owned();
        for d in 0..self.nh.len() {
            let mut next = Mat::<c64>::zeros(cur.nrows(), cur.ncols());
            let op = if inverse { &self.inv_t[d] } else { &self.fwd_t[d] };
            line_apply(cur.as_ref(), next.as_mut(), dims, d, op.as_ref(), Accum::Replace);
            cur = next;
        }
        cur
    }

    /// Horizontal DFT of a point field batch (`B × npts`).
    pub fn points_to_modes(&self, x: MatRef<'_, c64>, inverse: bool) -> Mat<c64> {
        self.transform_section(x, &self.point_dims(), inverse)
    }

    /// Horizontal DFT of a packed batch, section by section.
    pub fn packed_to_modes(&self, x: MatRef<'_, c64>, inverse: bool) -> Mat<c64> {
        let (npts, nint) = (self.npts(), self.nint());
        let mut out = Mat::<c64>::zeros(x.nrows(), x.ncols());
        let pd = self.point_dims();
        let id = self.interior_dims();
        out.as_mut()
            .subcols_mut(0, npts)
            .copy_from(self.transform_section(x.subcols(0, npts), &pd, inverse));
        for c in 0..self.dim_n {
            let off = npts + c * nint;
            out.as_mut()
                .subcols_mut(off, nint)
                .copy_from(self.transform_section(x.subcols(off, nint), &id, inverse));
        }
        out
    }

    /// Column runs `(start, len)` of horizontal mode `kappa` in a packed vector.
    pub fn block_runs(&self, kappa: usize) -> Vec<(usize, usize)> {
        let (npts, nint, nz) = (self.npts(), self.nint(), self.nz);
        let mut runs = vec![(kappa * nz, nz)];
        for c in 0..self.dim_n {
            runs.push((npts + c * nint + kappa * (nz - 2), nz - 2));
        }
        runs
    }

    pub fn gather_block(&self, x: MatRef<'_, c64>, kappa: usize) -> Mat<c64> {
        let mut out = Mat::<c64>::zeros(x.nrows(), self.block_size());
        let mut at = 0;
        for (s, l) in self.block_runs(kappa) {
            out.as_mut().subcols_mut(at, l).copy_from(x.subcols(s, l));
            at += l;
        }
        out
    }

    pub fn scatter_block(&self, y: &mut Mat<c64>, blk: MatRef<'_, c64>, kappa: usize) {
        let mut at = 0;
        for (s, l) in self.block_runs(kappa) {
            y.as_mut().subcols_mut(s, l).copy_from(blk.subcols(at, l));
            at += l;
        }
    }

    /// Cell integral of each row of a point field.
    pub fn integrate(&self, x: MatRef<'_, c64>) -> Vec<c64> {
        (0..x.nrows())
            .map(|i| (0..x.ncols()).map(|p| x[(i, p)] * self.qw[p]).sum())
            .collect()
    }

    /// Normalized cell average `⟨f⟩` of each row.
    pub fn mean(&self, x: MatRef<'_, c64>) -> Vec<c64> {
        let v = self.cell_volume();
        self.integrate(x).into_iter().map(|s| s / v).collect()
    }

    /// Squared L² norm (cell integral) of each row.
    pub fn l2_sq(&self, x: MatRef<'_, c64>) -> Vec<f64> {
        (0..x.nrows())
            .map(|i| (0..x.ncols()).map(|p| x[(i, p)].norm_sqr() * self.qw[p]).sum())
            .collect()
    }

    /// Squared `H^k` norm of each row: sum over all multi-indices `|β| ≤ k`.
    pub fn hk_sq(&self, x: MatRef<'_, c64>, k: usize) -> Vec<f64> {
        let mut total = self.l2_sq(x);
        // level sets of non-decreasing direction sequences, one per multi-index
        let mut level: Vec<(usize, Mat<c64>)> = vec![(0, x.to_owned())];
        for _ in 0..k {
            let mut next = Vec::new();
            for (last, f) in &level {
                for d in *last..self.dim_n {
                    let g = self.deriv(f.as_ref(), d, &[]);
                    for (t, v) in total.iter_mut().zip(self.l2_sq(g.as_ref())) {
                        *t += v;
                    }
                    next.push((d, g));
                }
            }
            level = next;
        }
        total
    }

    /// `[[f(t_s)]]_m^2 = Σ_{j ≤ m/2} ‖∂_t^j f(t_s)‖²_{H^{m-2j}}` at every stored sample.
    pub fn triple_norm_sq(&self, f: &TimePeriodicField, m: usize) -> Result<Vec<f64>> {
        if m > 5 {
            return Err(Error::InvalidParameter(format!("triple norm order {m} exceeds 5")));
        }
        if f.nt() < 2 * (m / 2) + 2 {
            return Err(Error::InvalidParameter("too few time samples for the requested order".into()));
        }
        let mut total = vec![0.0; f.nt()];
        for j in 0..=m / 2 {
            let d = f.time_derivative(j);
            for (t, v) in total.iter_mut().zip(self.hk_sq(d.data.as_ref(), m - 2 * j)) {
                *t += v;
            }
        }
        Ok(total)
    }

    /// Per-row values `Σ_p q_p (a φ1 conj(φ2) + ρ w1·conj(w2))` for packed batches.
    pub fn inner_weighted(
        &self,
        u1: MatRef<'_, c64>,
        u2: MatRef<'_, c64>,
        weight_phi: &[f64],
        weight_w: &[f64],
    ) -> Vec<c64> {
        let (npts, nint, nz) = (self.npts(), self.nint(), self.nz);
        (0..u1.nrows())
            .map(|r| {
                let mut s = zero();
                for p in 0..npts {
                    s += u1[(r, p)] * u2[(r, p)].conj() * (weight_phi[p] * self.qw[p]);
                }
                for c in 0..self.dim_n {
                    for h in 0..self.nh_total() {
                        for iz in 1..nz - 1 {
                            let p = h * nz + iz;
                            let q = npts + c * nint + h * (nz - 2) + iz - 1;
                            s += u1[(r, q)] * u2[(r, q)].conj() * (weight_w[p] * self.qw[p]);
                        }
                    }
                }
                s
            })
            .collect()
    }

    /// `‖u‖²_{L²,γ} = γ^{-2}‖φ‖² + ‖w‖²` of each packed row.
    pub fn norm_l2_gamma_sq(&self, u: MatRef<'_, c64>, gamma: f64) -> Vec<f64> {
        let a = vec![1.0 / (gamma * gamma); self.npts()];
        let r = vec![1.0; self.npts()];
        self.inner_weighted(u, u, &a, &r).into_iter().map(|v| v.re).collect()
    }
}

/// A state `(φ, w)` on the grid; velocity components include wall values.
#[derive(Clone, Debug, PartialEq)]
pub struct StateField {
    pub phi: Vec<c64>,
    pub w: Vec<Vec<c64>>,
}

impl StateField {
    pub fn zeros(grid: &CellGrid) -> Self {
        Self {
            phi: vec![zero(); grid.npts()],
            w: vec![vec![zero(); grid.npts()]; grid.dim_n()],
        }
    }

    pub fn from_packed(grid: &CellGrid, row: &[c64]) -> Self {
        let m = Mat::<c64>::from_fn(1, row.len(), |_, j| row[j]);
        let e = grid.expand(m.as_ref());
        Self {
            phi: (0..grid.npts()).map(|p| e.phi[(0, p)]).collect(),
            w: e.w.iter().map(|f| (0..grid.npts()).map(|p| f[(0, p)]).collect()).collect(),
        }
    }

    pub fn to_packed(&self, grid: &CellGrid) -> Vec<c64> {
        let phi = Mat::<c64>::from_fn(1, grid.npts(), |_, p| self.phi[p]);
        let w: Vec<Mat<c64>> = self
            .w
            .iter()
            .map(|c| Mat::<c64>::from_fn(1, grid.npts(), |_, p| c[p]))
            .collect();
        let m = grid.pack(phi.as_ref(), &w);
        (0..m.ncols()).map(|j| m[(0, j)]).collect()
    }

    /// Largest velocity magnitude on the wall nodes.
    pub fn wall_max(&self, grid: &CellGrid) -> f64 {
        let nz = grid.nz();
        let mut m = 0.0f64;
        for c in &self.w {
            for h in 0..grid.nh_total() {
                m = m.max(c[h * nz].norm()).max(c[h * nz + nz - 1].norm());
            }
        }
        m
    }
}

/// Uniform samples `t_m = m/N_t`, `m = 0..N_t`, of a field over one period;
/// one row per sample. Sample 0 doubles as the value at `t = 1`.
#[derive(Clone, Debug)]
pub struct TimePeriodicField {
    pub data: Mat<c64>,
}

impl TimePeriodicField {
    pub fn new(data: Mat<c64>) -> Self {
        Self { data }
    }
    pub fn nt(&self) -> usize {
        self.data.nrows()
    }
    pub fn times(&self) -> Vec<f64> {
        (0..self.nt()).map(|m| m as f64 / self.nt() as f64).collect()
    }
    /// `order`-th spectral time derivative.
    pub fn time_derivative(&self, order: usize) -> TimePeriodicField {
        let d = time_derivative_matrix(self.nt());
        let mut cur = self.data.clone();
        for _ in 0..order {
            cur = crate::linalg::mul(d.as_ref(), cur.as_ref());
        }
        TimePeriodicField { data: cur }
    }
    /// Trigonometric interpolation at time `t` (any real `t`, period 1).
    pub fn at(&self, t: f64) -> Mat<c64> {
        let n = self.nt();
        let w = interpolation_weights(n, t);
        Mat::from_fn(1, self.data.ncols(), |_, j| {
            (0..n).map(|m| self.data[(m, j)] * w[m]).sum()
        })
    }
}

/// Weights `w_m` with `f(t) = Σ w_m f(t_m)` for band-limited periodic `f`.
pub fn interpolation_weights(n: usize, t: f64) -> Vec<c64> {
    let mut w = vec![zero(); n];
    for (m, wm) in w.iter_mut().enumerate() {
        let mut s = zero();
        for q in 0..n {
            let k = time_frequency(q, n) as f64;
            let fac = if n % 2 == 0 && q == n / 2 {
                // symmetric treatment of the Nyquist term: cos(π n (t - t_m))
                let th = PI * n as f64 * (t - m as f64 / n as f64);
                c64::new(th.cos(), 0.0)
            } else {
                let th = 2.0 * PI * k * (t - m as f64 / n as f64);
                c64::new(th.cos(), th.sin())
            };
            s += fac;
        }
        *wm = s / n as f64;
    }
    w
}

/// Bloch parameter `η'` (one entry per periodic direction).
#[derive(Clone, Debug, PartialEq)]
pub struct BlochParam(pub Vec<f64>);

impl BlochParam {
    pub fn zero(dim_n: usize) -> Self {
        Self(vec![0.0; dim_n - 1])
    }
    /// True when `η'` lies in the dual cell `Π [-α_i/2, α_i/2)`.
    pub fn in_dual_cell(&self, alpha: &[f64]) -> bool {
        self.0
            .iter()
            .zip(alpha)
            .all(|(e, a)| *e >= -a / 2.0 && *e < a / 2.0)
    }
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}
