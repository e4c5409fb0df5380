use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cns_floquet::cli_io::{self, parse_eta_list, write_json, Context};
use cns_floquet::config_params::RunConfig;

#[derive(Parser)]
#[command(name = "cns-floquet", version, about = "Floquet-Bloch analysis of time-periodic compressible channel flow")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration (defaults to the built-in desk setup)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the seed from the configuration
    #[arg(long)]
    seed: Option<u64>,
    /// Bloch parameters, e.g. `0,0.01,-0.01` (or `a:b;c:d` in 3D)
    #[arg(long)]
    eta: Option<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve for the time-periodic base state
    State(Common),
    /// Monodromy spectra at the given Bloch parameters
    Floquet {
        #[command(flatten)]
        common: Common,
        /// Also write the dense monodromy matrices
        #[arg(long)]
        dump_matrix: bool,
    },
    /// Dispersion coefficients from the cell problems
    Coeffs(Common),
    /// Floquet sweep, fit and eigenfunction continuity
    Dispersion(Common),
    /// Re-check the artifacts in an output directory
    Verify {
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Full pipeline followed by verify
    Run(Common),
    /// Print the default configuration
    DefaultConfig,
}

fn load(c: &Common) -> Result<RunConfig, String> {
    let mut cfg = match &c.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            RunConfig::from_toml(&text).map_err(|e| e.to_string())?
        }
        None => RunConfig::desk(0.5),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn etas(c: &Common, cfg: &RunConfig) -> Result<Option<Vec<Vec<f64>>>, String> {
    let d = cfg.params.dim_n.saturating_sub(1).max(1);
    c.eta.as_deref().map(|s| parse_eta_list(s, d)).transpose().map_err(|e| e.to_string())
}

fn finish(ctx: &mut Context, res: Result<(), cli_io::StageFailure>) -> Result<(), String> {
    match res {
        Ok(()) => {
            ctx.write_manifest("complete").map_err(|e| e.to_string())?;
            Ok(())
        }
        Err(f) => {
            let _ = write_json(&ctx.out.join("failure.json"), &f);
            let _ = ctx.write_manifest("failed");
            Err(format!("stage `{}` failed: {}", f.stage, f.message))
        }
    }
}

fn stage(c: &Common, f: impl FnOnce(&mut Context, Option<Vec<Vec<f64>>>) -> Result<(), cli_io::StageFailure>) -> Result<(), String> {
    let cfg = load(c)?;
    let e = etas(c, &cfg)?;
    let mut ctx = Context::new(cfg, &c.out).map_err(|e| e.to_string())?;
    let r = f(&mut ctx, e);
    finish(&mut ctx, r)
}

fn report_verify(out: &Path) -> Result<(), String> {
    let rep = cli_io::verify(out).map_err(|e| e.to_string())?;
    for c in &rep.checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if rep.pass {
        Ok(())
    } else {
        Err("verification failed".into())
    }
}

fn main() -> ExitCode {
    cns_floquet::init_threads_from_env();
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::State(c) => stage(&c, |ctx, _| ctx.state().map(|s| println!("state: {} periods, min rho {:.6}", s.periods, s.min_rho))),
        Cmd::Floquet { common, dump_matrix } => stage(&common, |ctx, e| {
            let d = ctx.grid.dim_n() - 1;
            let e = e.unwrap_or_else(|| vec![vec![0.0; d]]);
            let s = ctx.floquet(&e, dump_matrix)?;
            for sp in &s.spectra {
                println!("eta {:?}: mu1 = {:.12}, ratio {:.4}", sp.eta, sp.multipliers[0], sp.simplicity_ratio);
            }
            Ok(())
        }),
        Cmd::Coeffs(c) => stage(&c, |ctx, _| {
            let k = ctx.coeffs()?;
            println!("a = {:?}\nA = {:?} ({} convention)", k.a, k.a_matrix, k.convention);
            Ok(())
        }),
        Cmd::Dispersion(c) => stage(&c, |ctx, e| {
            let s = ctx.dispersion(e)?;
            println!("fit a = {:?}, A = {:?}, remainder slope {:?}", s.sweep.fit_a, s.sweep.fit_a_matrix, s.sweep.remainder_slope);
            Ok(())
        }),
        Cmd::Verify { out } => report_verify(&out),
        Cmd::Run(c) => (|| {
            let cfg = load(&c)?;
            let e = etas(&c, &cfg)?;
            cli_io::run_pipeline(cfg, &c.out, e).map_err(|e| e.to_string())?;
            report_verify(&c.out)
        })(),
        Cmd::DefaultConfig => {
            print!("{}", RunConfig::desk(0.5).to_toml());
            Ok(())
        }
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
