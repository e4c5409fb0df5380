//! Physical parameters, pressure law, external force and run configuration.

use std::f64::consts::PI;

use faer::{c64, Mat};
use serde::{Deserialize, Serialize};

use crate::cell_grid::{CellGrid, TimePeriodicField};
use crate::{Error, Result};

/// Barotropic pressure law, normalized so that `p'(1) = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "lowercase")]
pub enum PressureLaw {
    /// `p(ρ) = ρ`
    Isothermal,
    /// `p(ρ) = ρ^κ / κ`
    Power { kappa: f64 },
}

// 8-point Gauss-Legendre on [0,1]
const GL_X: [f64; 8] = [
    0.019855071751231856,
    0.10166676129318664,
    0.2372337950418355,
    0.4082826787521751,
    0.5917173212478249,
    0.7627662049581645,
    0.8983332387068134,
    0.9801449282487681,
];
const GL_W: [f64; 8] = [
    0.05061426814518813,
    0.11119051722668724,
    0.15685332293894363,
    0.18134189168918100,
    0.18134189168918100,
    0.15685332293894363,
    0.11119051722668724,
    0.05061426814518813,
];

impl PressureLaw {
    pub fn p(&self, rho: f64) -> f64 {
        match *self {
            PressureLaw::Isothermal => rho,
            PressureLaw::Power { kappa } => rho.powf(kappa) / kappa,
        }
    }
    pub fn dp(&self, rho: f64) -> f64 {
        match *self {
            PressureLaw::Isothermal => 1.0,
            PressureLaw::Power { kappa } => rho.powf(kappa - 1.0),
        }
    }
    pub fn d2p(&self, rho: f64) -> f64 {
        match *self {
            PressureLaw::Isothermal => 0.0,
            PressureLaw::Power { kappa } => (kappa - 1.0) * rho.powf(kappa - 2.0),
        }
    }
    /// `p^(1)(ρ, φ) = ∫_0^1 p'(ρ + θφ) dθ`.
    pub fn p1(&self, rho: f64, phi: f64) -> f64 {
        GL_X.iter()
            .zip(GL_W)
            .map(|(x, w)| w * self.dp(rho + x * phi))
            .sum()
    }
    /// `p^(2)(ρ, φ) = ∫_0^1 (1-θ) p''(ρ + θφ) dθ`.
    pub fn p2(&self, rho: f64, phi: f64) -> f64 {
        GL_X.iter()
            .zip(GL_W)
            .map(|(x, w)| w * (1.0 - x) * self.d2p(rho + x * phi))
            .sum()
    }
    /// Kernel of the pressure remainder in the scaled variables: with
    /// `s = φ/γ²`, `∇(k(s) φ²) = γ²(p'(1+s) - 1)∇φ`. Equals `p^(2)(1, s)`.
    pub fn p_scaled(&self, s: f64) -> f64 {
        self.p2(1.0, s)
    }
    /// Admissible when `p' > 0` on `[lo, 2]`.
    pub fn check_positive(&self, lo: f64) -> bool {
        (0..=100).all(|i| self.dp(lo + (2.0 - lo) * i as f64 / 100.0) > 0.0)
    }
}

/// Non-dimensional parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub nu: f64,
    pub nu_tilde: f64,
    pub gamma: f64,
    pub s_force: f64,
    pub mu_star: f64,
    pub dim_n: usize,
    pub alpha: Vec<f64>,
    pub pressure: PressureLaw,
}

impl Params {
    pub fn new(
        nu: f64,
        nu_tilde: f64,
        gamma: f64,
        s_force: f64,
        mu_star: f64,
        dim_n: usize,
        alpha: Vec<f64>,
        pressure: PressureLaw,
    ) -> Result<Self> {
        let p = Self {
            nu,
            nu_tilde,
            gamma,
            s_force,
            mu_star,
            dim_n,
            alpha,
            pressure,
        };
        p.validate()?;
        Ok(p)
    }

    /// Desk-scale defaults: ν = ν̃ = 10, γ = 40, n = 2, α = 0.2.
    pub fn desk(s_force: f64) -> Self {
        Self {
            nu: 10.0,
            nu_tilde: 10.0,
            gamma: 40.0,
            s_force,
            mu_star: 1.0,
            dim_n: 2,
            alpha: vec![0.2],
            pressure: PressureLaw::Isothermal,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if !(self.nu > 0.0) {
            return bad("nu must be positive");
        }
        if !(self.gamma > 0.0) {
            return bad("gamma must be positive");
        }
        if !(self.s_force >= 0.0) {
            return bad("force amplitude must be nonnegative");
        }
        if !(self.nu_tilde >= 0.0) {
            return bad("nu_tilde must be nonnegative");
        }
        if self.nu + self.nu_tilde > (2.0 + self.mu_star) * self.nu * (1.0 + 1e-14) {
            return bad("nu + nu_tilde exceeds (2 + mu_star) nu");
        }
        if !(self.dim_n == 2 || self.dim_n == 3) {
            return bad("dim_n must be 2 or 3");
        }
        if self.alpha.len() != self.dim_n - 1 || self.alpha.iter().any(|a| !(*a > 0.0)) {
            return bad("alpha needs dim_n - 1 positive entries");
        }
        if (self.pressure.dp(1.0) - 1.0).abs() > 1e-14 {
            return bad("pressure law must satisfy p'(1) = 1");
        }
        Ok(())
    }

    pub fn nu_sum(&self) -> f64 {
        self.nu + self.nu_tilde
    }

    /// Bloch-parameter dual cell measure `|Q*| = Π α_i`.
    pub fn dual_cell_volume(&self) -> f64 {
        self.alpha.iter().product()
    }
}

/// Dimensional inputs mapped to the non-dimensional parameters.
#[allow(clippy::too_many_arguments)]
pub fn nondimensionalize(
    mu: f64,
    mu_prime: f64,
    rho_star: f64,
    d: f64,
    t_period: f64,
    p_tilde_prime_at_rho_star: f64,
    force_scale: f64,
    mu_star: f64,
    dim_n: usize,
    alpha: Vec<f64>,
    pressure: PressureLaw,
) -> Result<Params> {
    if !(mu > 0.0) {
        return Err(Error::InvalidParameter("shear viscosity must be positive".into()));
    }
    if 2.0 / dim_n as f64 * mu + mu_prime < 0.0 {
        return Err(Error::InvalidParameter("bulk viscosity (2/n)mu + mu' is negative".into()));
    }
    if mu_prime / mu > mu_star {
        return Err(Error::InvalidParameter(format!(
            "mu'/mu = {} exceeds mu_star = {mu_star}",
            mu_prime / mu
        )));
    }
    if !(rho_star > 0.0 && d > 0.0 && t_period > 0.0 && p_tilde_prime_at_rho_star > 0.0) {
        return Err(Error::InvalidParameter("rho*, d, T and p'(rho*) must be positive".into()));
    }
    let base = t_period / (rho_star * d * d);
    Params::new(
        mu * base,
        (mu + mu_prime) * base,
        t_period / d * p_tilde_prime_at_rho_star.sqrt(),
        t_period * t_period / d * force_scale,
        mu_star,
        dim_n,
        alpha,
        pressure,
    )
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RegimeThresholds {
    pub nu0: f64,
    pub gamma0: f64,
    pub eps0: f64,
    pub a_rate: f64,
}

impl Default for RegimeThresholds {
    fn default() -> Self {
        Self {
            nu0: 4.0,
            gamma0: 20.0,
            eps0: 0.1,
            a_rate: 1.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RegimeReport {
    pub nu_ratio: f64,
    pub nu_ok: bool,
    pub gamma_ratio: f64,
    pub gamma_ok: bool,
    pub s_threshold: f64,
    pub s_ok: bool,
    pub s_simplified_threshold: f64,
    pub s_simplified_ok: bool,
    pub all_pass: bool,
}

/// Advisory check of the small-Reynolds / small-Mach / small-force regime.
pub fn check_regime(params: &Params, th: &RegimeThresholds) -> RegimeReport {
    let nus = params.nu_sum();
    let nu_ratio = params.nu * params.nu / nus;
    let gamma_ratio = params.gamma * params.gamma / nus;
    let g2 = params.gamma * params.gamma;
    let s_threshold = th.eps0 * params.nu * params.nu / (g2 * nus.sqrt())
        * (1.0 - (-th.a_rate * nus / g2).exp()).sqrt();
    let s_simplified_threshold = th.eps0 * th.a_rate.sqrt() * params.nu * params.nu / (g2 * params.gamma);
    let nu_ok = nu_ratio >= th.nu0;
    let gamma_ok = gamma_ratio >= th.gamma0;
    let s_ok = params.s_force <= s_threshold;
    let s_simplified_ok = params.s_force <= s_simplified_threshold;
    RegimeReport {
        nu_ratio,
        nu_ok,
        gamma_ratio,
        gamma_ok,
        s_threshold,
        s_ok,
        s_simplified_threshold,
        s_simplified_ok,
        all_pass: nu_ok && gamma_ok && s_ok,
    }
}

/// Wall-normal force profiles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    One,
    Sin,
    Cos,
    Bubble,
    Linear,
}

impl Profile {
    pub fn eval(&self, z: f64) -> f64 {
        match self {
            Profile::One => 1.0,
            Profile::Sin => (PI * z).sin(),
            Profile::Cos => (PI * z).cos(),
            Profile::Bubble => z * (1.0 - z),
            Profile::Linear => z,
        }
    }
}

/// One force mode `Re[a · p(z) · e^{i(k·α x' + 2π m t)}]` in velocity component `component`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForceMode {
    pub k: Vec<i64>,
    pub m: i64,
    pub profile: Profile,
    pub component: usize,
    pub amplitude: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForceSpec {
    pub modes: Vec<ForceMode>,
}

impl ForceSpec {
    /// Default forcing: an x-periodic, time-modulated shear in `w_1` plus a
    /// smaller wall-normal component.
    pub fn desk() -> Self {
        Self {
            modes: vec![
                ForceMode { k: vec![1], m: 0, profile: Profile::Sin, component: 0, amplitude: [1.0, 0.0] },
                ForceMode { k: vec![1], m: 1, profile: Profile::Sin, component: 0, amplitude: [0.5, 0.0] },
                ForceMode { k: vec![0], m: 1, profile: Profile::Bubble, component: 0, amplitude: [0.0, 2.0] },
                ForceMode { k: vec![1], m: 0, profile: Profile::Bubble, component: 1, amplitude: [0.0, 1.0] },
            ],
        }
    }

    /// Real-valued force at time `t` (unscaled), one row per component.
    pub fn eval_raw(&self, grid: &CellGrid, t: f64) -> Vec<Mat<c64>> {
        let n = grid.dim_n();
        let mut out = vec![Mat::<c64>::zeros(1, grid.npts()); n];
        for md in &self.modes {
            let a = c64::new(md.amplitude[0], md.amplitude[1]);
            for p in 0..grid.npts() {
                let (x, z) = grid.point_coords(p);
                let mut th = 2.0 * PI * md.m as f64 * t;
                for d in 0..n - 1 {
                    th += md.k[d] as f64 * grid.alpha()[d] * x[d];
                }
                let v = a * c64::new(th.cos(), th.sin()) * md.profile.eval(z);
                out[md.component][(0, p)] += c64::new(v.re, 0.0);
            }
        }
        out
    }

    fn check(&self, grid: &CellGrid, nt: usize) -> Result<()> {
        if self.modes.is_empty() {
            return Err(Error::InvalidParameter("force spec has no modes".into()));
        }
        for md in &self.modes {
            if md.k.len() != grid.dim_n() - 1 || md.component >= grid.dim_n() {
                return Err(Error::InvalidParameter("force mode has wrong dimension".into()));
            }
            for (d, k) in md.k.iter().enumerate() {
                if k.unsigned_abs() as usize > (grid.nh()[d] - 1) / 2 {
                    return Err(Error::InvalidParameter(format!("grid does not resolve force wavenumber {k}")));
                }
            }
            if 2 * md.m.unsigned_abs() as usize >= nt {
                return Err(Error::InvalidParameter(format!(
                    "{nt} time samples do not resolve temporal frequency {}",
                    md.m
                )));
            }
        }
        Ok(())
    }
}

/// Normalized force samples, one time-periodic point field per component.
#[derive(Clone, Debug)]
pub struct ForceField {
    pub spec: ForceSpec,
    /// Factor applied to the raw spec so that `[G]_{3,1} = 1`.
    pub scale: f64,
    pub raw_norm: f64,
    pub samples: Vec<TimePeriodicField>,
}

impl ForceField {
    pub fn eval(&self, grid: &CellGrid, t: f64) -> Vec<Mat<c64>> {
        self.spec
            .eval_raw(grid, t)
            .into_iter()
            .map(|m| Mat::from_fn(1, m.ncols(), |_, j| m[(0, j)] * self.scale))
            .collect()
    }
    pub fn zero(grid: &CellGrid, nt: usize) -> Self {
        Self {
            spec: ForceSpec { modes: vec![] },
            scale: 0.0,
            raw_norm: 0.0,
            samples: vec![TimePeriodicField::new(Mat::zeros(nt, grid.npts())); grid.dim_n()],
        }
    }
}

/// `[G]_{3,1}` of component samples: `Σ_{j≤2} ∫ ‖∂_t^j G‖²_{H^{3-2j}}`, with
/// the `j = 2` term taken in L².
pub fn force_norm(grid: &CellGrid, comps: &[TimePeriodicField]) -> f64 {
    let mut total = 0.0;
    for c in comps {
        let nt = c.nt() as f64;
        for (j, k) in [(0usize, 3usize), (1, 1), (2, 0)] {
            let d = c.time_derivative(j);
            total += grid.hk_sq(d.data.as_ref(), k).iter().sum::<f64>() / nt;
        }
    }
    total.sqrt()
}

/// Samples the force on the space-time grid and rescales it to unit `[G]_{3,1}`.
pub fn build_force(spec: &ForceSpec, grid: &CellGrid, nt: usize) -> Result<ForceField> {
    spec.check(grid, nt)?;
    let mut comps = vec![Mat::<c64>::zeros(nt, grid.npts()); grid.dim_n()];
    for m in 0..nt {
        let g = spec.eval_raw(grid, m as f64 / nt as f64);
        for (c, gc) in g.iter().enumerate() {
            comps[c].as_mut().row_mut(m).copy_from(gc.row(0));
        }
    }
    let raw: Vec<TimePeriodicField> = comps.into_iter().map(TimePeriodicField::new).collect();
    let raw_norm = force_norm(grid, &raw);
    if raw_norm == 0.0 {
        return Err(Error::InvalidParameter("cannot normalize zero field".into()));
    }
    let scale = 1.0 / raw_norm;
    let samples = raw
        .into_iter()
        .map(|f| {
            TimePeriodicField::new(Mat::from_fn(f.nt(), f.data.ncols(), |i, j| f.data[(i, j)] * scale))
        })
        .collect();
    Ok(ForceField {
        spec: spec.clone(),
        scale,
        raw_norm,
        samples,
    })
}

// ---------------------------------------------------------------- run config

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ParamsSection {
    pub nu: Option<f64>,
    pub nu_tilde: Option<f64>,
    pub gamma: Option<f64>,
    pub s_force: Option<f64>,
    /// Alternative to `s_force`: a fraction of the regime threshold.
    pub s_regime_fraction: Option<f64>,
    pub dimensional: Option<DimensionalSection>,
    #[serde(default = "default_mu_star")]
    pub mu_star: f64,
    #[serde(default = "default_dim")]
    pub dim_n: usize,
    pub alpha: Vec<f64>,
    #[serde(default = "default_pressure")]
    pub pressure: PressureLaw,
}

fn default_mu_star() -> f64 {
    1.0
}
fn default_dim() -> usize {
    2
}
fn default_pressure() -> PressureLaw {
    PressureLaw::Isothermal
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DimensionalSection {
    pub mu: f64,
    pub mu_prime: f64,
    pub rho_star: f64,
    pub d: f64,
    pub period: f64,
    pub p_prime: f64,
    pub force_scale: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub nh: Vec<usize>,
    pub nz: usize,
    pub nt: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub state_tol: f64,
    /// Integrator steps per time sample of the periodic state.
    pub state_substeps: usize,
    pub max_periods: usize,
    pub linear_tol: f64,
    pub gmres_restart: usize,
    pub gmres_max_iter: usize,
    pub decay_trials: usize,
    pub decay_periods: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            state_tol: 1e-10,
            state_substeps: 2,
            max_periods: 200,
            linear_tol: 1e-12,
            gmres_restart: 60,
            gmres_max_iter: 600,
            decay_trials: 3,
            decay_periods: 8,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// Sweep points as multiples of `α_1/2` along the first periodic direction.
    pub factors: Vec<f64>,
    /// Radii (as multiples of the simplicity radius) for the eigenfunction check.
    pub eigenfunction_fractions: Vec<f64>,
    pub simplicity_ratio: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            factors: vec![-0.08, -0.04, -0.02, 0.02, 0.04, 0.08],
            eigenfunction_fractions: vec![0.125, 0.25, 0.5],
            simplicity_ratio: 1.5,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub params: ParamsSection,
    pub grid: GridSection,
    pub force: ForceSpec,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub regime: RegimeThresholds,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Desk-scale configuration with `S` at the given fraction of the regime threshold.
    pub fn desk(s_regime_fraction: f64) -> Self {
        Self {
            params: ParamsSection {
                nu: Some(10.0),
                nu_tilde: Some(10.0),
                gamma: Some(40.0),
                s_force: None,
                s_regime_fraction: Some(s_regime_fraction),
                dimensional: None,
                mu_star: 1.0,
                dim_n: 2,
                alpha: vec![0.2],
                pressure: PressureLaw::Isothermal,
            },
            grid: GridSection { nh: vec![17], nz: 17, nt: 64 },
            force: ForceSpec::desk(),
            solver: SolverSection::default(),
            regime: RegimeThresholds::default(),
            sweep: SweepSection::default(),
            seed: 7,
        }
    }

    pub fn params(&self) -> Result<Params> {
        let s = &self.params;
        let mut p = if let Some(dm) = &s.dimensional {
            nondimensionalize(
                dm.mu,
                dm.mu_prime,
                dm.rho_star,
                dm.d,
                dm.period,
                dm.p_prime,
                dm.force_scale,
                s.mu_star,
                s.dim_n,
                s.alpha.clone(),
                s.pressure,
            )?
        } else {
            let need = |v: Option<f64>, name: &str| {
                v.ok_or_else(|| Error::Config(format!("[params] missing `{name}` (or a [params.dimensional] table)")))
            };
            Params {
                nu: need(s.nu, "nu")?,
                nu_tilde: need(s.nu_tilde, "nu_tilde")?,
                gamma: need(s.gamma, "gamma")?,
                s_force: s.s_force.unwrap_or(0.0),
                mu_star: s.mu_star,
                dim_n: s.dim_n,
                alpha: s.alpha.clone(),
                pressure: s.pressure,
            }
        };
        if let Some(f) = s.s_regime_fraction {
            p.s_force = f * check_regime(&p, &self.regime).s_threshold;
        }
        p.validate()?;
        Ok(p)
    }

    pub fn grid(&self) -> Result<CellGrid> {
        let p = self.params()?;
        if self.grid.nt < 4 || self.grid.nt % 2 != 0 {
            return Err(Error::Config("[grid] nt must be even and >= 4".into()));
        }
        CellGrid::new(p.dim_n, &self.grid.nh, self.grid.nz, &p.alpha)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nondimensionalize_examples() {
        let p = nondimensionalize(1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 1.0, 2, vec![1.0], PressureLaw::Isothermal)
            .unwrap();
        assert_eq!((p.nu, p.nu_tilde, p.gamma, p.s_force), (1.0, 1.0, 1.0, 0.0));
        let p = nondimensionalize(2.0, 1.0, 1.0, 1.0, 5.0, 4.0, 0.1, 1.0, 2, vec![1.0], PressureLaw::Isothermal)
            .unwrap();
        assert!((p.nu - 10.0).abs() < 1e-14);
        assert!((p.nu_tilde - 15.0).abs() < 1e-14);
        assert!((p.gamma - 10.0).abs() < 1e-14);
        assert!((p.s_force - 2.5).abs() < 1e-14);
        assert!(nondimensionalize(1.0, 3.0, 1.0, 1.0, 1.0, 1.0, 0.0, 2.0, 2, vec![1.0], PressureLaw::Isothermal)
            .is_err());
        assert!(nondimensionalize(0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 2.0, 2, vec![1.0], PressureLaw::Isothermal)
            .is_err());
        assert!(nondimensionalize(1.0, -1.5, 1.0, 1.0, 1.0, 1.0, 0.0, 2.0, 2, vec![1.0], PressureLaw::Isothermal)
            .is_err());
    }

    #[test]
    fn regime_examples() {
        let th = RegimeThresholds::default();
        let r = check_regime(&Params::desk(0.0), &th);
        assert!(r.all_pass);
        let want = 0.1 * (100.0 / (1600.0 * 20f64.sqrt())) * (1.0 - (-20.0f64 / 1600.0).exp()).sqrt();
        assert!((r.s_threshold - want).abs() < 1e-18);
        let mut p = Params::desk(0.0);
        p.nu = 1.0;
        p.nu_tilde = 1.0;
        let r = check_regime(&p, &th);
        assert!(!r.nu_ok && (r.nu_ratio - 0.5).abs() < 1e-15);
    }

    #[test]
    fn pressure_kernels() {
        for law in [PressureLaw::Isothermal, PressureLaw::Power { kappa: 1.4 }, PressureLaw::Power { kappa: 3.0 }] {
            assert!((law.dp(1.0) - 1.0).abs() < 1e-15);
            assert!((law.p1(1.2, 0.0) - law.dp(1.2)).abs() < 1e-14);
            assert!((law.p2(1.2, 0.0) - law.d2p(1.2) / 2.0).abs() < 1e-14);
            let (r, f) = (0.9, 0.3);
            let p1 = (law.p(r + f) - law.p(r)) / f;
            let p2 = (law.p(r + f) - law.p(r) - law.dp(r) * f) / (f * f);
            assert!((law.p1(r, f) - p1).abs() < 1e-12);
            assert!((law.p2(r, f) - p2).abs() < 1e-12);
        }
    }

    #[test]
    fn force_normalization_and_closed_form() {
        let g = CellGrid::new(2, &[9], 17, &[0.5]).unwrap();
        let spec = ForceSpec {
            modes: vec![ForceMode { k: vec![1], m: 1, profile: Profile::Sin, component: 0, amplitude: [1.0, 0.0] }],
        };
        let f = build_force(&spec, &g, 16).unwrap();
        // cos(αx + 2πt) sin(πz): H^k sums factor as Σ α^{2a} π^{2b} · (L/2)(1/2)
        let (a, l) = (0.5f64, 2.0 * PI / 0.5);
        let hk = |k: i32| -> f64 {
            let mut s = 0.0;
            for i in 0..=k {
                for j in 0..=(k - i) {
                    s += a.powi(2 * i) * PI.powi(2 * j);
                }
            }
            s * l / 4.0
        };
        let w = 2.0 * PI;
        let want = (hk(3) + w * w * hk(1) + w.powi(4) * hk(0)).sqrt();
        assert!((f.raw_norm - want).abs() < 1e-8 * want, "{} vs {}", f.raw_norm, want);
        assert!((force_norm(&g, &f.samples) - 1.0).abs() < 1e-10);
        assert!(build_force(&ForceSpec { modes: vec![] }, &g, 16).is_err());
    }

    #[test]
    fn config_missing_grid_names_section() {
        let text = r#"
[params]
nu = 10.0
nu_tilde = 10.0
gamma = 40.0
alpha = [0.2]
[force]
modes = []
"#;
        let e = RunConfig::from_toml(text).unwrap_err().to_string();
        assert!(e.contains("grid"), "{e}");
    }

    #[test]
    fn config_roundtrip() {
        let c = RunConfig::desk(0.5);
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(c, back);
        let p = back.params().unwrap();
        assert!((p.s_force - 0.5 * check_regime(&p, &back.regime).s_threshold).abs() < 1e-20);
    }
}
