//! `multiphase` experiment runner.

mod io;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use multiphase::config::H3Threshold;
use multiphase::exponent::{check_h1, check_hprime};
use multiphase::fem::FeFunction;
use multiphase::modular::{
    check_delta2, check_norm_modular_relations, check_subadditivity, check_uniform_convexity, log_uniform_samples,
};
use multiphase::regularity::{
    caccioppoli_probe, higher_integrability_probe, minimize_dirichlet, poincare_w0_ratio, sobolev_poincare_probe,
    stable_exponent, BallFamily, ProbeReport,
};
use multiphase::solver::{check_h2, check_h3, first_eigenvalue, solve_convection, solve_variational};
use multiphase::{Error, HypothesisReport, QuadratureMeasure, RunConfig, ScalarField, TriMesh, TriangleRule};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::io::{config_hash, fmt, Artifacts, Manifest, Stage};

#[derive(Parser, Debug)]
#[command(name = "multiphase", version, about = "Multi-phase operator experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed (overrides the config seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Evaluate the requested hypotheses and print their margins.
    CheckHypotheses,
    /// Solve the Dirichlet problem on every refinement level.
    Solve,
    /// First eigenvalue of the m-Laplacian.
    Eigen,
    /// Norm/modular relations and pointwise N-function properties.
    VerifyModular,
    /// Inequality probes on a minimizer.
    Probe {
        #[arg(value_enum)]
        which: ProbeKind,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum ProbeKind {
    Caccioppoli,
    SobolevPoincare,
    HigherIntegrability,
    PoincareW0,
}

impl ProbeKind {
    fn name(self) -> &'static str {
        match self {
            ProbeKind::Caccioppoli => "caccioppoli",
            ProbeKind::SobolevPoincare => "sobolev-poincare",
            ProbeKind::HigherIntegrability => "higher-integrability",
            ProbeKind::PoincareW0 => "poincare-w0",
        }
    }
}

/// Problems with the invocation or the configuration.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct Usage(String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(Usage(msg.into()))
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<Usage>().is_some() {
        return 2;
    }
    match e.downcast_ref::<Error>() {
        Some(Error::Config { .. } | Error::Expr { .. } | Error::Contract(_)) => 2,
        _ => 1,
    }
}

struct Run {
    cfg: RunConfig,
    art: Artifacts,
    seed: u64,
    stages: Vec<Stage>,
    hypotheses: Vec<HypothesisReport>,
    notes: Vec<String>,
    command: &'static str,
}

impl Run {
    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let t0 = Instant::now();
        let out = f(self);
        self.stages.push(Stage { name: name.to_string(), seconds: t0.elapsed().as_secs_f64() });
        out
    }

    fn finish(self, success: bool) -> Result<bool> {
        let m = Manifest {
            command: self.command.to_string(),
            config_hash: self.art.hash().to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
            stages: self.stages,
            hypotheses: self.hypotheses,
            outputs: Vec::new(),
            success,
            notes: self.notes,
        };
        self.art.finish(m)?;
        Ok(success)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MULTIPHASE_LOG", "warn")).init();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    if let Some(k) = cli.threads {
        if k == 0 {
            return Err(usage("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(k).build_global().context("configuring the thread pool")?;
    }
    let path = cli.config.clone().ok_or_else(|| usage("--config <path> is required"))?;
    let bytes = fs::read(&path).map_err(|e| usage(format!("reading {}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| usage("config is not UTF-8"))?;
    let cfg = RunConfig::from_json(&text)?;
    let seed = cli.seed.unwrap_or(cfg.seed);
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from(cfg.output_dir.clone().unwrap_or_else(|| "out".into())));
    let art = Artifacts::new(&out, config_hash(&bytes))?;
    let command = match cli.command {
        Command::CheckHypotheses => "check-hypotheses",
        Command::Solve => "solve",
        Command::Eigen => "eigen",
        Command::VerifyModular => "verify-modular",
        Command::Probe { .. } => "probe",
    };
    let mut run = Run { cfg, art, seed, stages: Vec::new(), hypotheses: Vec::new(), notes: Vec::new(), command };
    let ok = match cli.command {
        Command::CheckHypotheses => cmd_check_hypotheses(&mut run)?,
        Command::Solve => cmd_solve(&mut run)?,
        Command::Eigen => cmd_eigen(&mut run)?,
        Command::VerifyModular => cmd_verify_modular(&mut run)?,
        Command::Probe { which } => cmd_probe(&mut run, which)?,
    };
    run.finish(ok)
}

fn cmd_check_hypotheses(run: &mut Run) -> Result<bool> {
    let cfg = run.cfg.clone();
    let tf = cfg.phase()?;
    let samples = cfg.domain()?.default_samples();
    let dim = cfg.hypotheses.dim;
    let mut reports = Vec::new();
    for name in &cfg.hypotheses.check {
        let rep = match name.as_str() {
            "H1" => run.stage("H1", |_| Ok(check_h1(&tf.exp, &tf.w, dim, &samples)?))?,
            "Hprime" | "H'" => run.stage("Hprime", |_| Ok(check_hprime(&tf.exp, cfg.probe.sigma, dim, &samples)?))?,
            "H2" => run.stage("H2", |_| {
                let mesh = cfg.meshes()?.pop().expect("at least one mesh");
                let lam = first_eigenvalue(mesh, tf.exp.p_minus, cfg.eigen.tol)?.lambda;
                Ok(check_h2(&cfg.source()?, lam)?)
            })?,
            "H3" => run.stage("H3", |_| {
                let mesh = cfg.meshes()?.pop().expect("at least one mesh");
                let lam = first_eigenvalue(mesh, 2.0, cfg.eigen.tol)?.lambda;
                let threshold = match cfg.hypotheses.h3_threshold {
                    H3Threshold::One => 1.0,
                    H3Threshold::InfMu1 => tf.w.inf_mu1,
                    H3Threshold::InfMu2 => tf.w.inf_mu2,
                };
                Ok(check_h3(&cfg.source()?, lam, threshold)?)
            })?,
            other => return Err(usage(format!("unknown hypothesis {other:?}; expected H1, H2, H3 or Hprime"))),
        };
        reports.push(rep);
    }
    println!("{:<8} {:>24} {:>6}", "name", "margin", "pass");
    for r in &reports {
        println!("{:<8} {:>24} {:>6}", r.name, fmt(r.margin), r.passed);
    }
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let (x, y) = r.worst_point.map_or((String::new(), String::new()), |p| (fmt(p[0]), fmt(p[1])));
            vec![r.name.clone(), fmt(r.margin), r.passed.to_string(), x, y]
        })
        .collect();
    run.art.csv("hypotheses.csv", &["name", "margin", "passed", "worst_x", "worst_y"], &rows)?;
    let ok = reports.iter().all(|r| r.passed);
    run.hypotheses = reports;
    Ok(ok)
}

fn cmd_solve(run: &mut Run) -> Result<bool> {
    let cfg = run.cfg.clone();
    let exact = cfg.exact()?;
    let mut ok = true;
    let mut errors = Vec::new();
    for mesh in cfg.meshes()? {
        let n = mesh.num_vertices();
        let prob = cfg.problem(mesh.clone())?;
        let rep = run.stage(&format!("solve-{n}"), |_| {
            Ok(if prob.source.is_frozen() {
                solve_variational(&prob, &cfg.solver)?
            } else {
                solve_convection(&prob, &cfg.solver, cfg.max_outer)?
            })
        })?;
        if !rep.converged {
            ok = false;
            run.notes.push(format!("mesh with {n} vertices: {}", rep.message));
        }
        let rows: Vec<Vec<String>> = rep
            .residual_history
            .iter()
            .zip(&rep.energy_history)
            .enumerate()
            .map(|(k, (r, e))| vec![k.to_string(), fmt(*r), fmt(*e)])
            .collect();
        run.art.csv(&format!("convergence_{n}.csv"), &["step", "residual", "energy"], &rows)?;
        let grads = rep.solution.gradients();
        run.art.vtk(&format!("solution_{n}.vtk"), &mesh, &[("u", rep.solution.values())], &[("grad_u", &grads)])?;
        if let Some(ex) = &exact {
            let err = nodal_error(&rep.solution, ex);
            errors.push(vec![mesh.num_vertices().to_string(), fmt(mesh.h_max()), fmt(err)]);
        }
        println!("vertices={n} converged={} iterations={}", rep.converged, rep.iterations);
    }
    if !errors.is_empty() {
        run.art.csv("error.csv", &["vertices", "h_max", "sup_error"], &errors)?;
        for e in &errors {
            println!("h={} sup_error={}", e[1], e[2]);
        }
    }
    Ok(ok)
}

fn nodal_error(u: &FeFunction, exact: &ScalarField) -> f64 {
    u.mesh().vertices().iter().zip(u.values()).map(|(&x, v)| (v - exact.eval(x)).abs()).fold(0.0, f64::max)
}

fn cmd_eigen(run: &mut Run) -> Result<bool> {
    let cfg = run.cfg.clone();
    let m = cfg.eigen.m;
    if !(m > 1.0) {
        return Err(usage(format!("eigen.m must exceed 1, got {m}")));
    }
    let mut rows = Vec::new();
    let mut last = None;
    for mesh in cfg.meshes()? {
        let rep = run.stage(&format!("eigen-{}", mesh.num_vertices()), |_| Ok(first_eigenvalue(mesh.clone(), m, cfg.eigen.tol)?))?;
        println!("h={} lambda={}", fmt(mesh.h_max()), fmt(rep.lambda));
        rows.push(vec![mesh.num_vertices().to_string(), fmt(mesh.h_max()), fmt(rep.lambda), rep.iterations.to_string()]);
        last = Some(rep);
    }
    run.art.csv("eigen.csv", &["vertices", "h_max", "lambda", "iterations"], &rows)?;
    let rep = last.expect("at least one mesh");
    let mesh = rep.eigenfunction.mesh().clone();
    run.art.vtk("eigenfunction.vtk", &mesh, &[("u", rep.eigenfunction.values())], &[])?;
    Ok(true)
}

/// Random interior values in `[−1, 1]`, zero on the boundary.
fn random_function(mesh: &Arc<TriMesh>, rng: &mut ChaCha8Rng, scale: f64) -> FeFunction {
    let values = mesh
        .boundary_flags()
        .iter()
        .map(|&b| if b { 0.0 } else { scale * rng.gen_range(-1.0..=1.0) })
        .collect();
    FeFunction::new(mesh.clone(), values).expect("sizes match")
}

fn cmd_verify_modular(run: &mut Run) -> Result<bool> {
    let cfg = run.cfg.clone();
    let tf = cfg.phase()?;
    let mesh = cfg.meshes()?.swap_remove(0);
    let rule = TriangleRule::default();
    let quad = QuadratureMeasure::on_mesh(&mesh, &rule);
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let mut rows = Vec::new();
    let mut ok = true;
    run.stage("norm-modular", |_| {
        for k in 0..cfg.probe.samples {
            let scale = 10f64.powf(rng.gen_range(-2.0..2.0));
            let u = random_function(&mesh, &mut rng, scale);
            let rep = check_norm_modular_relations(&tf, &u.values_at_quadrature(&rule), &quad)?;
            ok &= rep.passed;
            rows.push(vec![rep.name.clone(), k.to_string(), fmt(rep.worst_slack()), rep.passed.to_string()]);
        }
        Ok(())
    })?;
    run.stage("pointwise", |_| {
        let pts = cfg.domain()?.default_samples();
        let samples = log_uniform_samples(&pts, 10_000, run_seed(&cfg, 1))?;
        let singles: Vec<_> = samples.iter().map(|&(x, t, _)| (x, t)).collect();
        for rep in [
            check_delta2(&tf, &singles)?,
            check_subadditivity(&tf, &samples)?,
            check_uniform_convexity(&tf, 0.5, &samples)?,
        ] {
            ok &= rep.passed;
            rows.push(vec![rep.name.clone(), rep.samples.to_string(), fmt(rep.statistic), rep.passed.to_string()]);
        }
        Ok(())
    })?;
    run.art.csv("modular.csv", &["check", "sample", "statistic", "passed"], &rows)?;
    println!("verify-modular: {}", if ok { "all relations hold" } else { "violations found" });
    Ok(ok)
}

fn run_seed(cfg: &RunConfig, salt: u64) -> u64 {
    cfg.seed.wrapping_add(salt)
}

fn probe_function(cfg: &RunConfig, mesh: &Arc<TriMesh>) -> Result<FeFunction> {
    match &cfg.probe.u {
        Some(u) => {
            let f = ScalarField::expr(u)?;
            Ok(FeFunction::interpolate(|x| f.eval(x), mesh.clone())?)
        }
        None => {
            let g = ScalarField::expr(&cfg.probe.boundary)?;
            Ok(minimize_dirichlet(&cfg.flux_params()?, mesh.clone(), |x| g.eval(x), &cfg.solver)?)
        }
    }
}

fn probe_rows(rep: &ProbeReport) -> Vec<Vec<String>> {
    rep.rows
        .iter()
        .map(|r| {
            vec![
                r.inequality.clone(),
                fmt(r.center_x),
                fmt(r.center_y),
                fmt(r.r1),
                fmt(r.r2),
                fmt(r.param),
                fmt(r.lhs),
                fmt(r.rhs),
                fmt(r.ratio),
            ]
        })
        .collect()
}

const PROBE_HEADER: [&str; 9] = ["inequality", "center_x", "center_y", "R1", "R2", "param", "lhs", "rhs", "ratio"];

fn cmd_probe(run: &mut Run, which: ProbeKind) -> Result<bool> {
    let cfg = run.cfg.clone();
    let meshes = cfg.meshes()?;
    let tf = cfg.phase()?;
    if which == ProbeKind::PoincareW0 {
        let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
        let mut trace = Vec::new();
        let mut rows = Vec::new();
        for mesh in &meshes {
            let mut best = 0.0_f64;
            for k in 0..cfg.probe.samples {
                let u = random_function(mesh, &mut rng, 1.0);
                let r = poincare_w0_ratio(&tf, &u)?;
                best = best.max(r);
                rows.push(vec![mesh.num_vertices().to_string(), k.to_string(), fmt(r)]);
            }
            trace.push(vec![fmt(mesh.h_max()), fmt(best)]);
            println!("h={} empirical_constant={}", fmt(mesh.h_max()), fmt(best));
        }
        run.art.csv("probe_poincare-w0.csv", &["vertices", "sample", "ratio"], &rows)?;
        run.art.csv("trace_poincare-w0.csv", &["h_max", "empirical_constant"], &trace)?;
        return Ok(true);
    }

    let family = cfg.probe.balls.build(run.seed)?;
    let escaping = family.escaping(&meshes[0], 1.0);
    if !escaping.is_empty() {
        for b in &escaping {
            eprintln!("ball escapes the domain: center ({}, {}), radius {}", b.center[0], b.center[1], b.radius);
        }
        return Err(anyhow!(Error::BallEscapes {
            x: escaping[0].center[0],
            y: escaping[0].center[1],
            radius: escaping[0].radius
        }));
    }
    let mut reports: Vec<ProbeReport> = Vec::new();
    for mesh in &meshes {
        let rep = run.stage(&format!("{}-{}", which.name(), mesh.num_vertices()), |_| {
            let u = probe_function(&cfg, mesh)?;
            run_probe(&cfg, which, &tf, &u, &family)
        })?;
        reports.push(rep);
    }
    let mut rows = Vec::new();
    let mut trace = Vec::new();
    for rep in &reports {
        rows.extend(probe_rows(rep));
        for (p, c) in &rep.per_param {
            trace.push(vec![fmt(rep.refinement_trace[0].0), fmt(*p), fmt(*c)]);
        }
        println!("h={} empirical_constant={}", fmt(rep.refinement_trace[0].0), fmt(rep.empirical_constant));
    }
    run.art.csv(&format!("probe_{}.csv", which.name()), &PROBE_HEADER, &rows)?;
    run.art.csv(&format!("trace_{}.csv", which.name()), &["h_max", "param", "empirical_constant"], &trace)?;
    let mut ok = reports.iter().all(|r| r.passed);
    if which == ProbeKind::HigherIntegrability {
        let refs: Vec<&ProbeReport> = reports.iter().collect();
        match stable_exponent(&refs, cfg.probe.stability_factor) {
            Some(m) => println!("stable m0 = {m}"),
            None => {
                println!("no stable m0 in the grid");
                ok = false;
            }
        }
    }
    Ok(ok)
}

fn run_probe(
    cfg: &RunConfig,
    which: ProbeKind,
    tf: &multiphase::PhaseFunction,
    u: &FeFunction,
    family: &BallFamily,
) -> Result<ProbeReport> {
    Ok(match which {
        ProbeKind::Caccioppoli => caccioppoli_probe(tf, u, family)?,
        ProbeKind::SobolevPoincare => sobolev_poincare_probe(tf, u, family, cfg.probe.delta, None)?,
        ProbeKind::HigherIntegrability => higher_integrability_probe(tf, u, family, &cfg.probe.m_grid)?,
        ProbeKind::PoincareW0 => unreachable!("handled separately"),
    })
}
