//! Pipeline orchestration and result persistence: CSV tables, JSON reports,
//! SVG plots, binary field and matrix containers, and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use faer::{c64, Mat, MatRef};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cell_grid::CellGrid;
use crate::config_params::{build_force, check_regime, ForceField, Params, RegimeReport, RunConfig};
use crate::dispersion::{dispersion_sweep, eigenfunction_continuity, perturbation_coefficients, ContinuityReport, DispersionCoefficients, SweepReport};
use crate::floquet_engine::{default_start, monodromy, simplicity_radius, spectrum, decay_rate, DecayFit, FloquetSpectrum, PeriodicSolver, Propagator, SimplicityRadius};
use crate::periodic_state::{energy_report, residual, solve_periodic_state, EnergyReport, PeriodicState, ResidualReport};
use crate::{Error, Result};

const FIELD_MAGIC: &[u8; 8] = b"CNSFIELD";
/// Field CSVs are only written below this many rows.
const CSV_FIELD_LIMIT: usize = 200_000;

// ------------------------------------------------------------------ writers

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(value).map_err(|e| Error::Numerical(e.to_string()))?;
    fs::write(path, s + "\n")?;
    Ok(())
}

pub fn read_json(path: &Path) -> Result<serde_json::Value> {
    let s = fs::read_to_string(path)?;
    serde_json::from_str(&s).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Writes a CSV table. Numbers are formatted with full round-trip precision.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for r in rows {
        let line: Vec<String> = r.iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Self-describing binary container: magic, `u32` rank, `u64` dims, then
/// little-endian `(re, im)` pairs in row-major order.
pub fn write_field_bin(path: &Path, shape: &[usize], data: &[c64]) -> Result<()> {
    if shape.iter().product::<usize>() != data.len() {
        return Err(Error::InvalidParameter("shape does not match data length".into()));
    }
    let mut buf = Vec::with_capacity(16 + 8 * shape.len() + 16 * data.len());
    buf.extend_from_slice(FIELD_MAGIC);
    buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for z in data {
        buf.extend_from_slice(&z.re.to_le_bytes());
        buf.extend_from_slice(&z.im.to_le_bytes());
    }
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_field_bin(path: &Path) -> Result<(Vec<usize>, Vec<c64>)> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    let bad = || Error::Config(format!("{} is not a field container", path.display()));
    if buf.len() < 12 || &buf[..8] != FIELD_MAGIC {
        return Err(bad());
    }
    let rank = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    let mut off = 12;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let b = buf.get(off..off + 8).ok_or_else(bad)?;
        shape.push(u64::from_le_bytes(b.try_into().unwrap()) as usize);
        off += 8;
    }
    let n: usize = shape.iter().product();
    if buf.len() != off + 16 * n {
        return Err(bad());
    }
    let data = (0..n)
        .map(|i| {
            let p = off + 16 * i;
            c64::new(
                f64::from_le_bytes(buf[p..p + 8].try_into().unwrap()),
                f64::from_le_bytes(buf[p + 8..p + 16].try_into().unwrap()),
            )
        })
        .collect();
    Ok((shape, data))
}

pub fn write_matrix_bin(path: &Path, m: MatRef<'_, c64>) -> Result<()> {
    let data: Vec<c64> = (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])).collect();
    write_field_bin(path, &[m.nrows(), m.ncols()], &data)
}

pub fn read_matrix_bin(path: &Path) -> Result<Mat<c64>> {
    let (shape, data) = read_field_bin(path)?;
    if shape.len() != 2 {
        return Err(Error::Config(format!("{} does not hold a matrix", path.display())));
    }
    Ok(Mat::from_fn(shape[0], shape[1], |i, j| data[i * shape[1] + j]))
}

/// Point-wise CSV of a space-time packed field: `t, x.., z, φ, w_i` (real and
/// imaginary parts).
pub fn write_field_csv(path: &Path, grid: &CellGrid, samples: MatRef<'_, c64>) -> Result<bool> {
    let nt = samples.nrows();
    if nt * grid.npts() > CSV_FIELD_LIMIT {
        return Ok(false);
    }
    let ex = grid.expand(samples);
    let n = grid.dim_n();
    let mut header: Vec<String> = vec!["t".into()];
    for d in 0..n - 1 {
        header.push(format!("x{}", d + 1));
    }
    header.push("z".into());
    header.push("phi_re".into());
    header.push("phi_im".into());
    for i in 0..n {
        header.push(format!("w{}_re", i + 1));
        header.push(format!("w{}_im", i + 1));
    }
    let mut rows = Vec::with_capacity(nt * grid.npts());
    for m in 0..nt {
        for p in 0..grid.npts() {
            let (x, z) = grid.point_coords(p);
            let mut r = vec![m as f64 / nt as f64];
            r.extend(x);
            r.push(z);
            r.push(ex.phi[(m, p)].re);
            r.push(ex.phi[(m, p)].im);
            for w in &ex.w {
                r.push(w[(m, p)].re);
                r.push(w[(m, p)].im);
            }
            rows.push(r);
        }
    }
    let h: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    write_csv(path, &h, &rows)?;
    Ok(true)
}

/// Scatter plot of `Re λ` against `|η|²` with the reference line `-c|η|²`.
pub fn dispersion_svg(points: &[(f64, f64)], c: f64) -> String {
    let (w, h, m) = (640.0, 420.0, 60.0);
    let xmax = points.iter().map(|p| p.0).fold(0.0, f64::max).max(1e-300) * 1.05;
    let ymin = points
        .iter()
        .map(|p| p.1)
        .chain(std::iter::once(-c * xmax))
        .fold(0.0, f64::min)
        .min(-1e-300)
        * 1.05;
    let sx = |x: f64| m + (w - 2.0 * m) * x / xmax;
    let sy = |y: f64| m + (h - 2.0 * m) * y / ymin;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <line x1=\"{m}\" y1=\"{m}\" x2=\"{}\" y2=\"{m}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{}\" stroke=\"black\"/>\n",
        w - m,
        h - m
    );
    s.push_str(&format!(
        "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#c03030\" stroke-dasharray=\"6 4\"/>\n",
        sx(0.0),
        sy(0.0),
        sx(xmax),
        sy(-c * xmax)
    ));
    for &(x, y) in points {
        s.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"#2050a0\"/>\n",
            sx(x),
            sy(y)
        ));
    }
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\">|eta|^2 (max {:.3e})</text>\n",
        w / 2.0,
        m - 20.0,
        xmax
    ));
    s.push_str(&format!(
        "<text x=\"15\" y=\"{}\" font-size=\"13\" transform=\"rotate(-90 15 {})\" text-anchor=\"middle\">Re lambda (min {:.3e})</text>\n",
        h / 2.0,
        h / 2.0,
        ymin
    ));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"#c03030\" text-anchor=\"end\">-(k0 gamma^2 / 2 nu) |eta|^2</text>\n",
        w - m,
        h - 15.0
    ));
    s.push_str("</svg>\n");
    s
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    d.iter().map(|b| format!("{b:02x}")).collect()
}

// ----------------------------------------------------------------- manifest

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub config: RunConfig,
    pub params: Params,
    pub seed: u64,
    pub versions: BTreeMap<String, String>,
    pub timings: Vec<(String, f64)>,
    pub tolerances: BTreeMap<String, f64>,
    pub files: Vec<FileEntry>,
    pub status: String,
}

impl RunManifest {
    pub fn new(cfg: &RunConfig, params: &Params) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert("cns-floquet".into(), env!("CARGO_PKG_VERSION").into());
        versions.insert("format".into(), "1".into());
        let s = &cfg.solver;
        let tolerances = BTreeMap::from([
            ("state_tol".to_string(), s.state_tol),
            ("linear_tol".to_string(), s.linear_tol),
            ("arnoldi_tol".to_string(), ARNOLDI_TOL),
            ("simplicity_ratio".to_string(), cfg.sweep.simplicity_ratio),
            ("pipeline_rel_trivial".to_string(), 0.02),
            ("pipeline_rel_state".to_string(), 0.05),
            ("pipeline_abs".to_string(), 1e-6),
            ("remainder_slope_min".to_string(), 2.7),
            ("bound_factor".to_string(), 0.9),
            ("kernel_exponent".to_string(), 1e-7),
        ]);
        Self {
            config_hash: config_hash(cfg),
            config: cfg.clone(),
            params: params.clone(),
            seed: cfg.seed,
            versions,
            timings: Vec::new(),
            tolerances,
            files: Vec::new(),
            status: "running".into(),
        }
    }

    /// Records every regular file under `dir` except the manifest itself.
    pub fn inventory(&mut self, dir: &Path) -> Result<()> {
        let mut files = Vec::new();
        collect_files(dir, dir, &mut files)?;
        files.sort_by(|a, b| a.path.cmp(&b.path));
        self.files = files;
        Ok(())
    }
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<FileEntry>) -> Result<()> {
    for e in fs::read_dir(dir)? {
        let p = e?.path();
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else if p.file_name().is_some_and(|n| n != "manifest.json") {
            let bytes = fs::read(&p)?;
            out.push(FileEntry {
                path: p.strip_prefix(root).unwrap_or(&p).to_string_lossy().into_owned(),
                bytes: bytes.len() as u64,
                sha256: sha256_hex(&bytes),
            });
        }
    }
    Ok(())
}

pub fn config_hash(cfg: &RunConfig) -> String {
    sha256_hex(cfg.to_toml().as_bytes())
}

pub const ARNOLDI_TOL: f64 = 1e-12;

// ------------------------------------------------------------------- stages

/// Everything a run computes, built stage by stage.
pub struct Context {
    pub cfg: RunConfig,
    pub params: Params,
    pub grid: CellGrid,
    pub force: ForceField,
    pub out: PathBuf,
    pub manifest: RunManifest,
    pub state: Option<PeriodicState>,
    pub coeffs: Option<(DispersionCoefficients, Mat<c64>)>,
}

/// Failure of a named stage.
#[derive(Debug, Serialize)]
pub struct StageFailure {
    pub stage: String,
    pub message: String,
    pub history: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct StateSummary {
    pub periods: usize,
    pub min_rho: f64,
    pub defect_history: Vec<f64>,
    pub residual: ResidualReport,
    pub regime: RegimeReport,
    /// `max_t |⟨ρ(t)⟩ - 1|`
    pub mean_density_defect: f64,
    pub energy: EnergyReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct FloquetSummary {
    pub spectra: Vec<FloquetSpectrum>,
    pub decay: Option<DecayFit>,
}

#[derive(Clone, Debug, Serialize)]
pub struct DispersionSummary {
    pub sweep: SweepReport,
    pub radius: SimplicityRadius,
    pub continuity: ContinuityReport,
    pub kappa0: f64,
}

impl Context {
    pub fn new(cfg: RunConfig, out: &Path) -> Result<Self> {
        let params = cfg.params()?;
        let grid = cfg.grid()?;
        let force = build_force(&cfg.force, &grid, cfg.grid.nt)?;
        fs::create_dir_all(out)?;
        let manifest = RunManifest::new(&cfg, &params);
        Ok(Self {
            cfg,
            params,
            grid,
            force,
            out: out.to_path_buf(),
            manifest,
            state: None,
            coeffs: None,
        })
    }

    fn timed<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> std::result::Result<T, StageFailure> {
        let t0 = Instant::now();
        let r = f(self);
        self.manifest.timings.push((name.to_string(), t0.elapsed().as_secs_f64()));
        r.map_err(|e| StageFailure {
            stage: name.to_string(),
            history: match &e {
                Error::NoConvergence { history, .. } => history.clone(),
                _ => vec![],
            },
            message: e.to_string(),
        })
    }

    fn ensure_state(&mut self) -> Result<()> {
        if self.state.is_none() {
            let s = solve_periodic_state(&self.grid, &self.params, &self.force, self.cfg.grid.nt, &self.cfg.solver)?;
            self.state = Some(s);
        }
        Ok(())
    }

    pub fn state(&mut self) -> std::result::Result<StateSummary, StageFailure> {
        self.timed("state", |c| {
            c.ensure_state()?;
            let st = c.state.as_ref().unwrap();
            let g = &c.grid;
            let rho = st.rho(g);
            let means = g.mean(rho.as_ref());
            let mean_density_defect = means.iter().map(|m| (m - 1.0).norm()).fold(0.0, f64::max);
            let summary = StateSummary {
                periods: st.periods,
                min_rho: st.min_rho,
                defect_history: st.defect_history.clone(),
                residual: residual(g, st, &c.force)?,
                regime: check_regime(&c.params, &c.cfg.regime),
                mean_density_defect,
                energy: energy_report(g, &c.params, st.samples.as_ref())?,
            };
            let dir = c.out.join("state");
            fs::create_dir_all(&dir)?;
            write_json(&dir.join("summary.json"), &summary)?;
            let data: Vec<c64> = (0..st.nt()).flat_map(|i| (0..g.ndof()).map(move |j| st.samples[(i, j)])).collect();
            write_field_bin(&dir.join("field.bin"), &[st.nt(), g.ndof()], &data)?;
            write_field_csv(&dir.join("field.csv"), g, st.samples.as_ref())?;
            let e = &summary.energy;
            let rows: Vec<Vec<f64>> = (0..e.times.len()).map(|m| vec![e.times[m], e.e2[m], e.e4[m], e.d2[m], e.d4[m]]).collect();
            write_csv(&dir.join("energy.csv"), &["t", "E2", "E4", "D2", "D4"], &rows)?;
            Ok(summary)
        })
    }

    /// Dense monodromy spectra for each `η` plus the decay fit at `η = 0`.
    pub fn floquet(&mut self, etas: &[Vec<f64>], dump_matrix: bool) -> std::result::Result<FloquetSummary, StageFailure> {
        self.timed("floquet", |c| {
            c.ensure_state()?;
            let st = c.state.as_ref().unwrap();
            let g = &c.grid;
            let dir = c.out.join("floquet");
            fs::create_dir_all(&dir)?;
            let mut spectra = Vec::new();
            let mut decay = None;
            for (i, eta) in etas.iter().enumerate() {
                let prop = Propagator::new(g, st, eta, 1)?;
                let m = monodromy(g, &prop);
                if dump_matrix {
                    write_matrix_bin(&dir.join(format!("monodromy_{i}.bin")), m.matrix.as_ref())?;
                }
                let sp = spectrum(&m)?;
                let rows: Vec<Vec<f64>> = sp
                    .multipliers
                    .iter()
                    .zip(&sp.exponents)
                    .map(|(mu, l)| vec![mu.re, mu.im, mu.norm(), l.re, l.im])
                    .collect();
                write_csv(&dir.join(format!("spectrum_{i}.csv")), &["mu_re", "mu_im", "mu_abs", "lambda_re", "lambda_im"], &rows)?;
                if eta.iter().all(|e| *e == 0.0) && decay.is_none() {
                    let s = &c.cfg.solver;
                    decay = Some(decay_rate(g, &prop, c.params.gamma, s.decay_trials, s.decay_periods, c.cfg.seed)?);
                }
                spectra.push(sp);
            }
            let summary = FloquetSummary { spectra, decay };
            write_json(&dir.join("summary.json"), &summary)?;
            Ok(summary)
        })
    }

    pub fn coeffs(&mut self) -> std::result::Result<DispersionCoefficients, StageFailure> {
        self.timed("coeffs", |c| {
            c.ensure_state()?;
            let st = c.state.as_ref().unwrap();
            let s = &c.cfg.solver;
            let solver = PeriodicSolver::new(&c.grid, st, s.linear_tol, s.gmres_restart, s.gmres_max_iter)?;
            let (coef, u0, _) = perturbation_coefficients(&c.grid, st, &solver)?;
            write_json(&c.out.join("coeffs.json"), &coef)?;
            c.coeffs = Some((coef.clone(), u0));
            Ok(coef)
        })
    }

    /// Sweep along `η = f·α_1/2 · e_1` (or explicit points), simplicity
    /// radius and eigenfunction continuity.
    pub fn dispersion(&mut self, etas: Option<Vec<Vec<f64>>>) -> std::result::Result<DispersionSummary, StageFailure> {
        if self.coeffs.is_none() {
            self.coeffs()?;
        }
        self.timed("dispersion", |c| {
            let st = c.state.as_ref().unwrap();
            let g = &c.grid;
            let (coef, u0) = c.coeffs.as_ref().unwrap();
            let d = g.dim_n() - 1;
            let half = g.alpha()[0] / 2.0;
            let etas = etas.unwrap_or_else(|| {
                c.cfg
                    .sweep
                    .factors
                    .iter()
                    .map(|f| {
                        let mut e = vec![0.0; d];
                        e[0] = f * half;
                        e
                    })
                    .collect()
            });
            let start = default_start(g, c.cfg.seed);
            let k0 = coef.stokes.kappa0;
            let ratio = c.cfg.sweep.simplicity_ratio;
            let sweep = dispersion_sweep(g, st, 1, &etas, ratio, &start, Some(coef), Some(k0))?;
            let radius = simplicity_radius(g, st, 1, ratio, c.cfg.seed)?;
            let radii: Vec<f64> = c.cfg.sweep.eigenfunction_fractions.iter().map(|f| f * radius.r0).collect();
            let continuity = eigenfunction_continuity(g, st, 1, u0.as_ref(), &radii, &start)?;
            let rows: Vec<Vec<f64>> = sweep
                .points
                .iter()
                .map(|p| {
                    let mut r = p.eta.clone();
                    let m = p.model.unwrap_or_default();
                    r.extend([p.lambda.re, p.lambda.im, m.re, m.im, p.remainder.unwrap_or(f64::NAN), p.simplicity_ratio, p.simple as u8 as f64]);
                    r
                })
                .collect();
            let mut header: Vec<String> = (0..d).map(|j| format!("eta{}", j + 1)).collect();
            for h in ["re_lambda", "im_lambda", "re_model", "im_model", "remainder", "simplicity_ratio", "simple"] {
                header.push(h.into());
            }
            let h: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
            write_csv(&c.out.join("sweep.csv"), &h, &rows)?;
            let c_ref = k0 * c.params.gamma * c.params.gamma / (2.0 * c.params.nu);
            let pts: Vec<(f64, f64)> = sweep
                .points
                .iter()
                .map(|p| (p.eta.iter().map(|e| e * e).sum(), p.lambda.re))
                .collect();
            fs::write(c.out.join("dispersion.svg"), dispersion_svg(&pts, c_ref))?;
            let summary = DispersionSummary { sweep, radius, continuity, kappa0: k0 };
            write_json(&c.out.join("dispersion.json"), &summary)?;
            Ok(summary)
        })
    }

    pub fn write_manifest(&mut self, status: &str) -> Result<()> {
        self.manifest.status = status.into();
        self.manifest.inventory(&self.out)?;
        write_json(&self.out.join("manifest.json"), &self.manifest)
    }
}

// ------------------------------------------------------------------- verify

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
    pub pass: bool,
}

fn num(v: &serde_json::Value, path: &[&str]) -> Option<f64> {
    let mut cur = v;
    for p in path {
        cur = match p.parse::<usize>() {
            Ok(i) => cur.get(i)?,
            Err(_) => cur.get(*p)?,
        };
    }
    cur.as_f64()
}

/// Re-checks the stored artifacts of a run directory.
pub fn verify(out: &Path) -> Result<VerifyReport> {
    let need = |name: &str| -> Result<serde_json::Value> {
        let p = out.join(name);
        if !p.exists() {
            return Err(Error::Config(format!("missing artifact {name}")));
        }
        read_json(&p)
    };
    let coeffs = need("coeffs.json")?;
    let disp = need("dispersion.json")?;
    let state = need("state/summary.json")?;
    let manifest = need("manifest.json")?;
    let floquet = if out.join("floquet/summary.json").exists() { Some(need("floquet/summary.json")?) } else { None };
    let trivial = num(&manifest, &["params", "s_force"]).unwrap_or(0.0) == 0.0;
    let rel = if trivial { 0.02 } else { 0.05 };
    let mut checks = Vec::new();
    let mut add = |name: &str, pass: bool, detail: String| checks.push(Check { name: name.into(), pass, detail });

    let d = coeffs["a"].as_array().map(|a| a.len()).unwrap_or(0);
    let mut ok_a = d > 0;
    let mut ok_am = d > 0;
    let (mut da, mut dm) = (String::new(), String::new());
    for j in 0..d {
        let (p, f) = (num(&coeffs, &["a", &j.to_string()]), num(&disp, &["sweep", "fit_a", &j.to_string()]));
        let good = matches!((p, f), (Some(p), Some(f)) if (p - f).abs() <= (rel * p.abs()).max(1e-6));
        ok_a &= good;
        da += &format!("a{j}: {p:?} vs {f:?}; ");
        for k in 0..d {
            let (js, ks) = (j.to_string(), k.to_string());
            let p = num(&coeffs, &["a_matrix", &js, &ks]);
            let f = num(&disp, &["sweep", "fit_a_matrix", &js, &ks]);
            let good = matches!((p, f), (Some(p), Some(f)) if (p - f).abs() <= (rel * p.abs()).max(1e-6));
            ok_am &= good;
            dm += &format!("A{j}{k}: {p:?} vs {f:?}; ");
        }
    }
    add("pipeline_a", ok_a, da);
    add("pipeline_A", ok_am, dm);
    let slope = num(&disp, &["sweep", "remainder_slope"]);
    add("remainder_slope", slope.is_some_and(|s| s >= 2.7), format!("{slope:?}"));
    let bound = num(&disp, &["sweep", "bound_ratio_min"]);
    add("definiteness_bound", bound.is_some_and(|b| b >= 0.9), format!("{bound:?}"));
    let k0 = num(&disp, &["kappa0"]);
    let khat = num(&coeffs, &["kappa0_hat"]);
    add(
        "definiteness_min_eig",
        matches!((k0, khat), (Some(a), Some(b)) if a > 0.0 && b >= a * (1.0 - 1e-8)),
        format!("kappa0 {k0:?}, min eig(A) nu/gamma^2 {khat:?}"),
    );
    let spread = num(&disp, &["continuity", "spread"]);
    add("eigenfunction_continuity", spread.is_some_and(|s| s <= 1.5), format!("spread {spread:?}"));
    let md = num(&state, &["mean_density_defect"]);
    add("mean_density", md.is_some_and(|m| m <= 1e-10), format!("{md:?}"));
    if let Some(f) = floquet {
        // complex numbers are stored as `[re, im]`
        let l = num(&f, &["spectra", "0", "exponents", "0", "0"]);
        let li = num(&f, &["spectra", "0", "exponents", "0", "1"]);
        add(
            "kernel_exponent",
            matches!((l, li), (Some(a), Some(b)) if a.abs() <= 1e-7 && b.abs() <= 1e-7),
            format!("{l:?} {li:?}"),
        );
        let r = num(&f, &["spectra", "0", "simplicity_ratio"]);
        add("simplicity", r.is_some_and(|r| r >= 1.5), format!("{r:?}"));
        let beta = num(&f, &["decay", "rate"]);
        let gap = num(&f, &["spectra", "0", "gap"]);
        add(
            "spectral_gap",
            matches!((beta, gap), (Some(b), Some(g)) if b > 0.0 && g >= b),
            format!("beta {beta:?}, -4 ln|mu2| {gap:?}"),
        );
    }
    let pass = checks.iter().all(|c| c.pass);
    let rep = VerifyReport { checks, pass };
    write_json(&out.join("verify.json"), &rep)?;
    Ok(rep)
}

/// Full pipeline: state, floquet at `η = 0`, coefficients, sweep, verify.
/// A failing stage stops the run and leaves `failure.json` next to the
/// partial outputs.
pub fn run_pipeline(cfg: RunConfig, out: &Path, etas: Option<Vec<Vec<f64>>>) -> Result<(RunManifest, VerifyReport)> {
    let mut ctx = Context::new(cfg, out)?;
    let d = ctx.grid.dim_n() - 1;
    let res = (|| -> std::result::Result<(), StageFailure> {
        ctx.state()?;
        ctx.floquet(&[vec![0.0; d]], false)?;
        ctx.coeffs()?;
        ctx.dispersion(etas)?;
        Ok(())
    })();
    if let Err(f) = res {
        write_json(&out.join("failure.json"), &f)?;
        ctx.write_manifest("failed")?;
        return Err(Error::Numerical(format!("stage `{}` failed: {}", f.stage, f.message)));
    }
    ctx.write_manifest("complete")?;
    let rep = verify(out)?;
    ctx.write_manifest(if rep.pass { "verified" } else { "verify-failed" })?;
    Ok((ctx.manifest, rep))
}

/// Parses `--eta` lists: `a,b,c` gives points along `e_1`; `a:b;c:d` gives
/// full vectors for `n = 3`.
pub fn parse_eta_list(s: &str, d: usize) -> Result<Vec<Vec<f64>>> {
    let bad = |t: &str| Error::Config(format!("bad eta entry `{t}`"));
    let groups: Vec<&str> = if s.contains(';') || s.contains(':') { s.split(';').collect() } else { s.split(',').collect() };
    groups
        .iter()
        .filter(|g| !g.trim().is_empty())
        .map(|g| {
            let parts: Vec<f64> = g
                .split(':')
                .map(|t| t.trim().parse::<f64>().map_err(|_| bad(t)))
                .collect::<Result<_>>()?;
            match parts.len() {
                1 => {
                    let mut e = vec![0.0; d];
                    e[0] = parts[0];
                    Ok(e)
                }
                n if n == d => Ok(parts),
                _ => Err(bad(g)),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_container_roundtrip() {
        let dir = std::env::temp_dir().join(format!("cnsf-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let data: Vec<c64> = (0..6).map(|i| c64::new(i as f64, -0.5 * i as f64)).collect();
        let p = dir.join("f.bin");
        write_field_bin(&p, &[2, 3], &data).unwrap();
        let (s, d) = read_field_bin(&p).unwrap();
        assert_eq!(s, vec![2, 3]);
        assert_eq!(d, data);
        fs::write(&p, b"garbage").unwrap();
        assert!(read_field_bin(&p).is_err());
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn eta_lists() {
        assert_eq!(parse_eta_list("0.1,-0.2", 1).unwrap(), vec![vec![0.1], vec![-0.2]]);
        assert_eq!(parse_eta_list("0.1:0.2;0:1", 2).unwrap(), vec![vec![0.1, 0.2], vec![0.0, 1.0]]);
        assert!(parse_eta_list("x", 1).is_err());
    }
}
