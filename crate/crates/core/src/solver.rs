//! Newton solvers for the discrete Dirichlet problem, the first eigenvalue of
//! the m-Laplacian, and the existence/uniqueness margins.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exponent::HypothesisReport;
use crate::expr::{Expr, Vars};
use crate::fem::FeFunction;
use crate::field::{Point, ScalarField};
use crate::mesh::TriMesh;
use crate::operator::{FluxParams, MultiPhaseOperator};
use crate::quadrature::TriangleRule;
use crate::sparse::{dot, solve_spd, CsrMatrix, EnvelopeCholesky, LinearSolverKind};
use crate::sum::Neumaier;

/// Seed of the random initial states in uniqueness experiments.
pub const UNIQUENESS_SEED: u64 = 0xC0FFEE;

type SourceFn = Arc<dyn Fn(Point, f64, [f64; 2]) -> f64 + Send + Sync>;

/// Declared growth constants of the right-hand side.
#[derive(Debug, Clone)]
pub struct GrowthConstants {
    /// `k₁ … k₆`.
    pub k: [f64; 6],
    pub m_exponent: ScalarField,
    /// `‖γ₁‖, ‖γ₂‖, ‖γ₃‖`.
    pub gamma: [f64; 3],
}

impl Default for GrowthConstants {
    fn default() -> Self {
        GrowthConstants { k: [0.0; 6], m_exponent: ScalarField::constant(2.0), gamma: [0.0; 3] }
    }
}

/// Right-hand side `f(x, t, z)`.
#[derive(Clone)]
pub struct SourceTerm {
    eval: SourceFn,
    pub solution_dependent: bool,
    pub grad_dependent: bool,
    pub constants: GrowthConstants,
}

impl fmt::Debug for SourceTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SourceTerm")
            .field("solution_dependent", &self.solution_dependent)
            .field("grad_dependent", &self.grad_dependent)
            .field("constants", &self.constants)
            .finish_non_exhaustive()
    }
}

impl SourceTerm {
    pub fn zero() -> Self {
        Self::from_fn(|_, _, _| 0.0, false, false)
    }

    /// `f(x)` only.
    pub fn from_x(f: impl Fn(Point) -> f64 + Send + Sync + 'static) -> Self {
        Self::from_fn(move |x, _, _| f(x), false, false)
    }

    pub fn from_fn(
        f: impl Fn(Point, f64, [f64; 2]) -> f64 + Send + Sync + 'static,
        solution_dependent: bool,
        grad_dependent: bool,
    ) -> Self {
        SourceTerm { eval: Arc::new(f), solution_dependent, grad_dependent, constants: GrowthConstants::default() }
    }

    /// Expression in `x1, x2, t (or u), z1, z2`; dependence flags are read off
    /// the expression.
    pub fn from_expr(e: Expr) -> Self {
        let solution_dependent = e.depends_on_solution();
        let grad_dependent = e.depends_on_gradient();
        let e = Arc::new(e);
        Self::from_fn(move |x, t, z| e.eval(&Vars { x, t, z }), solution_dependent, grad_dependent)
    }

    pub fn with_constants(mut self, constants: GrowthConstants) -> Self {
        self.constants = constants;
        self
    }

    #[inline]
    pub fn eval(&self, x: Point, t: f64, z: [f64; 2]) -> f64 {
        (self.eval)(x, t, z)
    }

    pub fn is_frozen(&self) -> bool {
        !self.solution_dependent && !self.grad_dependent
    }

    /// Spot-checks that a source declared gradient-free ignores `z`.
    pub fn check_declaration(&self, seed: u64) -> Result<()> {
        if self.grad_dependent {
            return Ok(());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..32 {
            let x = [rng.gen::<f64>(), rng.gen::<f64>()];
            let t = rng.gen_range(-2.0..2.0);
            let a = self.eval(x, t, [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)]);
            let b = self.eval(x, t, [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)]);
            if a != b {
                return Err(Error::Contract("source declared gradient-free depends on z".into()));
            }
        }
        Ok(())
    }
}

/// Domain mesh, flux, source and Dirichlet data.
#[derive(Debug, Clone)]
pub struct PhaseProblem {
    pub mesh: Arc<TriMesh>,
    pub fp: FluxParams,
    pub source: SourceTerm,
    /// Nodal values; only boundary entries are used.
    pub dirichlet: Vec<f64>,
}

impl PhaseProblem {
    /// Homogeneous Dirichlet problem.
    pub fn new(mesh: Arc<TriMesh>, fp: FluxParams, source: SourceTerm) -> Self {
        let n = mesh.num_vertices();
        PhaseProblem { mesh, fp, source, dirichlet: vec![0.0; n] }
    }

    pub fn with_dirichlet(mut self, g: impl Fn(Point) -> f64) -> Result<Self> {
        let values: Vec<f64> = self.mesh.vertices().iter().map(|&x| g(x)).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite Dirichlet data".into()));
        }
        self.dirichlet = values;
        Ok(self)
    }

    /// Zero extension of the Dirichlet data.
    pub fn initial_guess(&self) -> FeFunction {
        let values = self
            .mesh
            .boundary_flags()
            .iter()
            .zip(&self.dirichlet)
            .map(|(&b, &g)| if b { g } else { 0.0 })
            .collect();
        FeFunction::new(self.mesh.clone(), values).expect("sizes match")
    }

    fn with_boundary(&self, mut u: FeFunction) -> Result<FeFunction> {
        if u.values().len() != self.mesh.num_vertices() {
            return Err(Error::Contract("initial state lives on a different mesh".into()));
        }
        let flags = self.mesh.boundary_flags().to_vec();
        for (i, v) in u.values_mut().iter_mut().enumerate() {
            if flags[i] {
                *v = self.dirichlet[i];
            }
        }
        Ok(u)
    }
}

/// Newton and continuation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub eps_schedule: Vec<f64>,
    pub linear_solver: LinearSolverKind,
    pub armijo_c1: f64,
    pub max_halvings: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tol: 1e-10,
            max_iter: 50,
            eps_schedule: vec![1e-2, 1e-4, 1e-6, 1e-8],
            linear_solver: LinearSolverKind::Direct,
            armijo_c1: 1e-4,
            max_halvings: 30,
        }
    }
}

/// Outcome of a solve; non-convergence is data, not an error.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub solution: FeFunction,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub energy_history: Vec<f64>,
    pub converged: bool,
    pub eps_schedule: Vec<f64>,
    /// Free-node sup distance between outer iterates (convection solves).
    pub increment_history: Vec<f64>,
    pub message: String,
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// `∫ f(x, u, ∇u) φ_i` for every vertex.
pub fn load_vector(source: &SourceTerm, u: &FeFunction, rule: &TriangleRule) -> Result<Vec<f64>> {
    let mesh = u.mesh();
    let locals: Vec<[f64; 3]> = (0..mesh.num_triangles())
        .into_par_iter()
        .map(|t| {
            let tri = mesh.triangle_points(t);
            let g = u.gradient_on(t);
            let area = mesh.triangle_area(t);
            let mut out = [0.0; 3];
            for (k, l) in rule.bary.iter().enumerate() {
                let x = rule.point(k, &tri);
                let f = source.eval(x, u.value_at_bary(t, *l), g);
                for a in 0..3 {
                    out[a] += area * rule.weights[k] * f * l[a];
                }
            }
            out
        })
        .collect();
    let mut load = vec![0.0; mesh.num_vertices()];
    for (t, l) in locals.iter().enumerate() {
        for (a, &v) in mesh.triangles()[t].iter().enumerate() {
            load[v] += l[a];
        }
    }
    if load.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(load)
}

/// Weak-form residual `⟨A(u), φ_i⟩ − ∫ f(x, u, ∇u) φ_i` over the free nodes.
pub fn weak_residual(op: &MultiPhaseOperator, source: &SourceTerm, u: &FeFunction) -> Result<Vec<f64>> {
    let load = load_vector(source, u, op.rule())?;
    op.residual(u, Some(&load))
}

/// Regularizations used for a problem: none for the Laplacian, otherwise the
/// schedule, closed by an exact stage when `p⁻ ≥ 2`.
fn stages(fp: &FluxParams, settings: &SolverSettings) -> Vec<f64> {
    if fp.is_linear() {
        return vec![0.0];
    }
    let mut s: Vec<f64> = settings.eps_schedule.iter().copied().filter(|&e| e > 0.0).collect();
    if fp.tf.exp.p_minus >= 2.0 {
        s.push(0.0);
    } else if s.is_empty() {
        s.push(crate::operator::DEFAULT_EPS);
    }
    s
}

struct NewtonOutcome {
    u: FeFunction,
    iterations: usize,
    converged: bool,
    message: String,
}

/// Damped Newton for `A_ε(u) = load` on one regularization level.
fn newton(
    op: &MultiPhaseOperator,
    load: &[f64],
    mut u: FeFunction,
    tol: f64,
    settings: &SolverSettings,
    residual_history: &mut Vec<f64>,
    energy_history: &mut Vec<f64>,
) -> Result<NewtonOutcome> {
    let merit = |u: &FeFunction| -> Result<f64> {
        let pairing: f64 = op.free().iter().map(|&i| load[i] * u.values()[i]).sum();
        Ok(op.regularized_energy(u)? - pairing)
    };
    let mut current = merit(&u)?;
    for it in 0..settings.max_iter {
        let sys = assemble_robust(op, &u, load)?;
        let rnorm = sup(&sys.0.residual);
        residual_history.push(rnorm);
        energy_history.push(current);
        if rnorm <= tol {
            return Ok(NewtonOutcome { u, iterations: it, converged: true, message: String::new() });
        }
        let rhs: Vec<f64> = sys.0.residual.iter().map(|r| -r).collect();
        let d = solve_with_retries(&sys.0.jacobian, &rhs, settings.linear_solver, op, &u, load, sys.1)?;
        let slope = dot(&sys.0.residual, &d);
        let x0 = op.gather_free(&u);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=settings.max_halvings {
            let mut trial = u.clone();
            let x: Vec<f64> = x0.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
            op.scatter_free(&mut trial, &x);
            if let Ok(m) = merit(&trial) {
                if m <= current + settings.armijo_c1 * alpha * slope {
                    accepted = Some((trial, m));
                    break;
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((trial, m)) => {
                u = trial;
                current = m;
            }
            None => {
                // merit differences fall below round-off near the solution
                let mut trial = u.clone();
                let x: Vec<f64> = x0.iter().zip(&d).map(|(a, b)| a + b).collect();
                op.scatter_free(&mut trial, &x);
                let r = sup(&op.residual(&trial, Some(load))?);
                if r < rnorm {
                    current = merit(&trial)?;
                    u = trial;
                } else {
                    let message = format!("line search failed at residual {rnorm:e}");
                    return Ok(NewtonOutcome { u, iterations: it + 1, converged: false, message });
                }
            }
        }
    }
    let sys = op.residual(&u, Some(load))?;
    let rnorm = sup(&sys);
    residual_history.push(rnorm);
    energy_history.push(current);
    let converged = rnorm <= tol;
    let message = if converged { String::new() } else { format!("max_iter reached at residual {rnorm:e}") };
    Ok(NewtonOutcome { u, iterations: settings.max_iter, converged, message })
}

/// Assembles the system; with `ε = 0` the Jacobian is regularized when the
/// exact one is degenerate. Returns the Jacobian ε used.
fn assemble_robust(
    op: &MultiPhaseOperator,
    u: &FeFunction,
    load: &[f64],
) -> Result<(crate::operator::AssembledSystem, f64)> {
    let eps = op.eps();
    Ok((op.assemble(u, Some(load))?, eps))
}

fn solve_with_retries(
    jac: &CsrMatrix,
    rhs: &[f64],
    kind: LinearSolverKind,
    op: &MultiPhaseOperator,
    u: &FeFunction,
    load: &[f64],
    jac_eps: f64,
) -> Result<Vec<f64>> {
    if let Ok(d) = solve_spd(jac, rhs, kind) {
        if d.iter().all(|v| v.is_finite()) {
            return Ok(d);
        }
    }
    let mut e = jac_eps.max(1e-8);
    for retry in 0..5 {
        e *= 10.0;
        log::debug!("singular Jacobian; retry {} with Jacobian ε = {e:e}", retry + 1);
        let sys = op.assemble_with_jacobian_eps(u, Some(load), e)?;
        if let Ok(d) = solve_spd(&sys.jacobian, rhs, kind) {
            if d.iter().all(|v| v.is_finite()) {
                return Ok(d);
            }
        }
    }
    Err(Error::LinearSolver("Jacobian singular after 5 regularization retries".into()))
}

fn newton_continuation(
    prob: &PhaseProblem,
    base: &MultiPhaseOperator,
    load: &[f64],
    u0: FeFunction,
    settings: &SolverSettings,
) -> Result<SolveReport> {
    if !(settings.tol > 0.0) {
        return Err(Error::Contract(format!("tol must be positive, got {}", settings.tol)));
    }
    let schedule = stages(&prob.fp, settings);
    let mut u = prob.with_boundary(u0)?;
    let mut residual_history = Vec::new();
    let mut energy_history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut message = String::new();
    for (k, &eps) in schedule.iter().enumerate() {
        let last = k + 1 == schedule.len();
        let op = base.with_eps(eps)?;
        let tol = if last { settings.tol } else { settings.tol.max(1e-6) };
        let out = newton(&op, load, u, tol, settings, &mut residual_history, &mut energy_history)?;
        iterations += out.iterations;
        u = out.u;
        if last {
            converged = out.converged;
            message = out.message;
        }
    }
    Ok(SolveReport {
        solution: u,
        iterations,
        residual_history,
        energy_history,
        converged,
        eps_schedule: schedule,
        increment_history: Vec::new(),
        message,
    })
}

/// Minimizes `I(u) − ∫ f u` for a source depending on `x` only.
pub fn solve_variational(prob: &PhaseProblem, settings: &SolverSettings) -> Result<SolveReport> {
    solve_variational_from(prob, settings, prob.initial_guess())
}

pub fn solve_variational_from(prob: &PhaseProblem, settings: &SolverSettings, u0: FeFunction) -> Result<SolveReport> {
    if !prob.source.is_frozen() {
        return Err(Error::Contract("variational solve needs a source depending on x only".into()));
    }
    let op = MultiPhaseOperator::new(&prob.fp, prob.mesh.clone());
    let load = load_vector(&prob.source, &prob.initial_guess(), op.rule())?;
    newton_continuation(prob, &op, &load, u0, settings)
}

/// Outer fixed point `A(u_{k+1}) = f(x, u_k, ∇u_k)` with inner Newton solves.
pub fn solve_convection(prob: &PhaseProblem, settings: &SolverSettings, max_outer: usize) -> Result<SolveReport> {
    solve_convection_from(prob, settings, max_outer, prob.initial_guess())
}

pub fn solve_convection_from(
    prob: &PhaseProblem,
    settings: &SolverSettings,
    max_outer: usize,
    u0: FeFunction,
) -> Result<SolveReport> {
    let op = MultiPhaseOperator::new(&prob.fp, prob.mesh.clone());
    let exact = op.with_eps(*stages(&prob.fp, settings).last().expect("nonempty schedule"))?;
    let mut u = prob.with_boundary(u0)?;
    let mut residual_history = Vec::new();
    let mut energy_history = Vec::new();
    let mut increments = Vec::new();
    let mut iterations = 0;
    let mut growth = 0;
    let mut schedule = Vec::new();
    for _ in 0..max_outer {
        let load = load_vector(&prob.source, &u, op.rule())?;
        let inner = newton_continuation(prob, &op, &load, u.clone(), settings)?;
        iterations += inner.iterations;
        schedule = inner.eps_schedule.clone();
        let d = op
            .free()
            .iter()
            .map(|&i| (inner.solution.values()[i] - u.values()[i]).abs())
            .fold(0.0_f64, f64::max);
        if increments.last().is_some_and(|&prev| d > prev) {
            growth += 1;
        } else {
            growth = 0;
        }
        increments.push(d);
        u = inner.solution;
        residual_history.push(sup(&weak_residual(&exact, &prob.source, &u)?));
        energy_history.push(exact.energy(&u)?);
        if d <= settings.tol && inner.converged {
            return Ok(SolveReport {
                solution: u,
                iterations,
                residual_history,
                energy_history,
                converged: true,
                eps_schedule: schedule,
                increment_history: increments,
                message: String::new(),
            });
        }
        if growth >= 5 {
            return Ok(SolveReport {
                solution: u,
                iterations,
                residual_history,
                energy_history,
                converged: false,
                eps_schedule: schedule,
                increment_history: increments,
                message: "outer iteration diverging: increments grew 5 times in a row".into(),
            });
        }
    }
    Ok(SolveReport {
        solution: u,
        iterations,
        residual_history,
        energy_history,
        converged: false,
        eps_schedule: schedule,
        increment_history: increments,
        message: format!("outer iteration limit {max_outer} reached"),
    })
}

/// First eigenvalue and eigenfunction.
#[derive(Debug, Clone)]
pub struct EigenReport {
    pub lambda: f64,
    pub eigenfunction: FeFunction,
    pub iterations: usize,
    pub history: Vec<f64>,
}

/// `∫|∇u|^m / ∫|u|^m` with the given rule.
pub fn rayleigh_quotient(u: &FeFunction, m: f64, rule: &TriangleRule) -> Result<f64> {
    let (num, den) = rayleigh_parts(u, m, rule)?;
    if den == 0.0 {
        return Err(Error::Contract("Rayleigh quotient of the zero function".into()));
    }
    Ok(num / den)
}

fn rayleigh_parts(u: &FeFunction, m: f64, rule: &TriangleRule) -> Result<(f64, f64)> {
    let mesh = u.mesh();
    let mut num = Neumaier::default();
    let mut den = Neumaier::default();
    for t in 0..mesh.num_triangles() {
        let g = u.gradient_on(t);
        let area = mesh.triangle_area(t);
        num.add(area * (g[0] * g[0] + g[1] * g[1]).sqrt().powf(m));
        for (k, l) in rule.bary.iter().enumerate() {
            den.add(area * rule.weights[k] * u.value_at_bary(t, *l).abs().powf(m));
        }
    }
    let (n, d) = (num.total(), den.total());
    if !n.is_finite() || !d.is_finite() {
        return Err(Error::NonFinite);
    }
    Ok((n, d))
}

/// Gradients of `N = ∫|∇u|^m` and `D = ∫|u|^m` over the free nodes.
fn rayleigh_gradients(op: &MultiPhaseOperator, u: &FeFunction, m: f64) -> (Vec<f64>, Vec<f64>) {
    let mesh = op.mesh();
    let rule = op.rule();
    let mut gn = vec![0.0; mesh.num_vertices()];
    let mut gd = vec![0.0; mesh.num_vertices()];
    for t in 0..mesh.num_triangles() {
        let tri = mesh.triangles()[t];
        let g = u.gradient_on(t);
        let s = (g[0] * g[0] + g[1] * g[1]).sqrt();
        let area = mesh.triangle_area(t);
        let basis = mesh.basis_gradients(t);
        let a = if s == 0.0 { 0.0 } else { m * s.powf(m - 2.0) };
        for k in 0..3 {
            gn[tri[k]] += area * a * (g[0] * basis[k][0] + g[1] * basis[k][1]);
        }
        for (q, l) in rule.bary.iter().enumerate() {
            let v = u.value_at_bary(t, *l);
            let dv = if v == 0.0 { 0.0 } else { m * v.abs().powf(m - 1.0) * v.signum() };
            for k in 0..3 {
                gd[tri[k]] += area * rule.weights[q] * dv * l[k];
            }
        }
    }
    let free = op.free();
    (free.iter().map(|&i| gn[i]).collect(), free.iter().map(|&i| gd[i]).collect())
}

/// `λ_{1,m}` of the mesh with zero boundary values. `m = 2` uses inverse
/// iteration on (stiffness, consistent mass); other `m` use a
/// stiffness-preconditioned projected gradient on the Rayleigh quotient
/// started from the `m = 2` eigenfunction. The returned `λ` is the quotient of
/// the returned eigenfunction.
pub fn first_eigenvalue(mesh: Arc<TriMesh>, m: f64, tol: f64) -> Result<EigenReport> {
    if !(m > 1.0) {
        return Err(Error::Contract(format!("eigenvalue exponent m must exceed 1, got {m}")));
    }
    if !(tol > 0.0) {
        return Err(Error::Contract(format!("tol must be positive, got {tol}")));
    }
    let fp = FluxParams::new(
        crate::modular::PhaseFunction::new(
            crate::exponent::ExponentTriple::constant(2.0, 2.0, 2.0)?,
            crate::exponent::WeightPair::zero(),
        ),
        0.0,
    )?;
    let op = MultiPhaseOperator::new(&fp, mesh.clone());
    if op.num_free() == 0 {
        return Err(Error::Geometry("mesh has no interior vertices".into()));
    }
    let k = op.stiffness();
    let mass = op.mass();
    let chol = EnvelopeCholesky::factor(&k)?;
    let mut x = vec![1.0; op.num_free()];
    let mut history = Vec::new();
    let mut lambda = f64::INFINITY;
    let mut iterations = 0;
    for it in 1..=500 {
        let y = chol.solve(&mass.mul_vec(&x));
        let norm = mass.bilinear(&y, &y).sqrt();
        x = y.iter().map(|v| v / norm).collect();
        let next = k.bilinear(&x, &x);
        history.push(next);
        iterations = it;
        let done = (lambda - next).abs() <= tol * next;
        lambda = next;
        if done {
            break;
        }
    }
    if x.iter().sum::<f64>() < 0.0 {
        x.iter_mut().for_each(|v| *v = -*v);
    }
    let mut u = FeFunction::zeros(mesh.clone());
    op.scatter_free(&mut u, &x);
    if m == 2.0 {
        let lambda = rayleigh_quotient(&u, 2.0, op.rule())?;
        return Ok(EigenReport { lambda, eigenfunction: u, iterations, history });
    }

    let normalize = |u: &mut FeFunction| -> Result<f64> {
        let (_, d) = rayleigh_parts(u, m, op.rule())?;
        let c = d.powf(-1.0 / m);
        u.values_mut().iter_mut().for_each(|v| *v *= c);
        Ok(c)
    };
    normalize(&mut u)?;
    let mut q = rayleigh_quotient(&u, m, op.rule())?;
    let mut hist = vec![q];
    let mut small = 0;
    let mut step = 1.0_f64;
    for it in 1..=5000 {
        let (gn, gd) = rayleigh_gradients(&op, &u, m);
        let (num, den) = rayleigh_parts(&u, m, op.rule())?;
        let grad: Vec<f64> = gn.iter().zip(&gd).map(|(a, b)| (a - num / den * b) / den).collect();
        let dir: Vec<f64> = chol.solve(&grad).iter().map(|v| -v).collect();
        let slope = dot(&grad, &dir);
        if slope >= 0.0 {
            break;
        }
        let x0 = op.gather_free(&u);
        let mut alpha = (2.0 * step).min(1.0);
        let mut accepted = None;
        for _ in 0..40 {
            let mut trial = u.clone();
            let xt: Vec<f64> = x0.iter().zip(&dir).map(|(a, b)| a + alpha * b).collect();
            op.scatter_free(&mut trial, &xt);
            if let Ok(qt) = rayleigh_quotient(&trial, m, op.rule()) {
                if qt <= q + 1e-4 * alpha * slope {
                    accepted = Some((trial, qt));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((mut trial, _)) = accepted else { break };
        step = alpha;
        normalize(&mut trial)?;
        let qn = rayleigh_quotient(&trial, m, op.rule())?;
        u = trial;
        let change = (q - qn).abs() / qn;
        q = qn;
        hist.push(q);
        iterations += 1;
        if change <= tol {
            small += 1;
            if small >= 3 {
                break;
            }
        } else {
            small = 0;
        }
        if it == 5000 {
            log::warn!("m-Rayleigh descent stopped at the iteration cap");
        }
    }
    history.extend(hist);
    let lambda = rayleigh_quotient(&u, m, op.rule())?;
    Ok(EigenReport { lambda, eigenfunction: u, iterations, history })
}

/// `1 − k₃ − k₄/λ_{1,p⁻} > 0`.
pub fn check_h2(src: &SourceTerm, lambda_p_minus: f64) -> Result<HypothesisReport> {
    if !(lambda_p_minus > 0.0) {
        return Err(Error::Contract(format!("eigenvalue must be positive, got {lambda_p_minus}")));
    }
    let k = &src.constants.k;
    Ok(HypothesisReport::from_margin("H2", 1.0 - k[2] - k[3] / lambda_p_minus, None))
}

/// `k₅/λ_{1,2} + k₆/√λ_{1,2} < threshold`, with `threshold` one of `1`,
/// `inf μ₁`, `inf μ₂` as the caller requires.
pub fn check_h3(src: &SourceTerm, lambda_2: f64, threshold: f64) -> Result<HypothesisReport> {
    if !(lambda_2 > 0.0) {
        return Err(Error::Contract(format!("eigenvalue must be positive, got {lambda_2}")));
    }
    let k = &src.constants.k;
    Ok(HypothesisReport::from_margin("H3", threshold - (k[4] / lambda_2 + k[5] / lambda_2.sqrt()), None))
}

/// Result of a multi-start experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniquenessReport {
    pub max_distance: f64,
    pub converged: usize,
    pub total: usize,
}

/// Random initial states: interior values uniform in `[−h, h]`.
pub fn random_starts(prob: &PhaseProblem, n_starts: usize, seed: u64) -> Vec<FeFunction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = prob.mesh.h_max();
    (0..n_starts)
        .map(|_| {
            let mut u = prob.initial_guess();
            let flags = prob.mesh.boundary_flags().to_vec();
            for (i, v) in u.values_mut().iter_mut().enumerate() {
                if !flags[i] {
                    *v = rng.gen_range(-1.0..=1.0) * h;
                }
            }
            u
        })
        .collect()
}

/// Runs the convection solver from `n_starts` random states and returns the
/// largest free-node sup distance between converged solutions.
pub fn verify_uniqueness_empirical(
    prob: &PhaseProblem,
    settings: &SolverSettings,
    n_starts: usize,
    seed: u64,
) -> Result<UniquenessReport> {
    if n_starts < 2 {
        return Err(Error::Contract("uniqueness experiment needs at least 2 starts".into()));
    }
    verify_uniqueness_from(prob, settings, &random_starts(prob, n_starts, seed))
}

pub fn verify_uniqueness_from(
    prob: &PhaseProblem,
    settings: &SolverSettings,
    starts: &[FeFunction],
) -> Result<UniquenessReport> {
    let reports: Vec<Result<SolveReport>> =
        starts.par_iter().map(|u0| solve_convection_from(prob, settings, 200, u0.clone())).collect();
    let mut solutions = Vec::new();
    for r in reports {
        let r = r?;
        if r.converged {
            solutions.push(r.solution);
        }
    }
    if solutions.len() < 2 {
        return Err(Error::InsufficientSolves { converged: solutions.len(), total: starts.len() });
    }
    let (free, _) = prob.mesh.free_dofs();
    let mut max_distance = 0.0_f64;
    for i in 0..solutions.len() {
        for j in 0..i {
            for &k in &free {
                max_distance = max_distance.max((solutions[i].values()[k] - solutions[j].values()[k]).abs());
            }
        }
    }
    Ok(UniquenessReport { max_distance, converged: solutions.len(), total: starts.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exponent::{ExponentTriple, WeightPair};
    use crate::field::Domain2D;
    use crate::mesh::structured_mesh;
    use crate::modular::PhaseFunction;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn phase(p: f64, q: f64, r: f64, mu1: f64, mu2: f64) -> PhaseFunction {
        PhaseFunction::new(ExponentTriple::constant(p, q, r).unwrap(), WeightPair::constant(mu1, mu2).unwrap())
    }

    fn square(n: usize) -> Arc<TriMesh> {
        Arc::new(structured_mesh(&Domain2D::unit_square(), n).unwrap())
    }

    #[test]
    fn zero_source_gives_zero() {
        let fp = FluxParams::new(phase(2.5, 3.0, 3.5, 1.0, 0.5), 0.0).unwrap();
        let prob = PhaseProblem::new(square(8), fp, SourceTerm::zero());
        let rep = solve_variational(&prob, &SolverSettings::default()).unwrap();
        assert!(rep.converged);
        assert!(rep.solution.values().iter().all(|&v| v == 0.0));
        assert!(rep.iterations <= 1 * rep.eps_schedule.len());
    }

    #[test]
    fn poisson_manufactured() {
        let fp = FluxParams::new(phase(2.0, 2.0, 2.0, 0.0, 0.0), 0.0).unwrap();
        let src = SourceTerm::from_x(|x| 2.0 * PI * PI * (PI * x[0]).sin() * (PI * x[1]).sin());
        let prob = PhaseProblem::new(square(16), fp, src);
        let rep = solve_variational(&prob, &SolverSettings::default()).unwrap();
        assert!(rep.converged);
        let err = prob
            .mesh
            .vertices()
            .iter()
            .zip(rep.solution.values())
            .map(|(x, v)| (v - (PI * x[0]).sin() * (PI * x[1]).sin()).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-2, "{err}");
    }

    #[test]
    fn nonlinear_solve_converges_with_monotone_energy() {
        let fp = FluxParams::new(phase(1.6, 2.4, 3.0, 0.5, 0.2), 1e-8).unwrap();
        let prob = PhaseProblem::new(square(8), fp, SourceTerm::from_x(|_| 1.0));
        let rep = solve_variational(&prob, &SolverSettings::default()).unwrap();
        assert!(rep.converged, "{}", rep.message);
        assert!(rep.solution.values().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn convection_with_x_source_matches_variational() {
        let fp = FluxParams::new(phase(3.0, 3.0, 3.0, 0.0, 0.0), 0.0).unwrap();
        let prob = PhaseProblem::new(square(8), fp, SourceTerm::from_x(|x| 1.0 + x[0]));
        let s = SolverSettings::default();
        let a = solve_variational(&prob, &s).unwrap();
        let b = solve_convection(&prob, &s, 10).unwrap();
        assert!(a.converged && b.converged);
        for (x, y) in a.solution.values().iter().zip(b.solution.values()) {
            assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn eigenvalue_coarse() {
        let rep = first_eigenvalue(square(16), 2.0, 1e-12).unwrap();
        assert!(rep.lambda > 2.0 * PI * PI && rep.lambda < 1.05 * 2.0 * PI * PI, "{}", rep.lambda);
        assert!(first_eigenvalue(square(4), 1.0, 1e-8).is_err());
    }

    #[test]
    fn eigenvalue_m_not_two_is_consistent() {
        let rep = first_eigenvalue(square(8), 3.0, 1e-8).unwrap();
        let q = rayleigh_quotient(&rep.eigenfunction, 3.0, &TriangleRule::default()).unwrap();
        assert_relative_eq!(q, rep.lambda, max_relative = 1e-10);
        // the Rayleigh quotient decreases along the descent
        assert!(rep.history.last().unwrap() <= &rep.history[rep.history.len().min(rep.iterations) - 1]);
    }

    #[test]
    fn h2_h3_examples() {
        let mut src = SourceTerm::zero();
        src.constants.k = [0.0, 0.0, 0.3, 0.3, 1.0, 1.0];
        let lam = 19.7392;
        assert_relative_eq!(check_h2(&src, lam).unwrap().margin, 1.0 - 0.3 - 0.3 / lam, epsilon = 1e-15);
        assert_relative_eq!(check_h2(&src, lam).unwrap().margin, 0.6848, epsilon = 1e-4);
        let rep = check_h3(&src, lam, 1.0).unwrap();
        assert!(rep.passed);
        assert_relative_eq!(rep.margin, 0.72426, epsilon = 1e-5);
        assert!(!check_h3(&src, lam, 0.2).unwrap().passed);
        src.constants.k = [0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let rep = check_h2(&src, lam).unwrap();
        assert!(!rep.passed && rep.margin == 0.0);
        src.constants.k = [0.0, 0.0, 0.0, lam / 2.0, 0.0, 0.0];
        assert_relative_eq!(check_h2(&src, lam).unwrap().margin, 0.5, epsilon = 1e-15);
        assert_eq!(check_h3(&src, lam, 0.7).unwrap().margin, 0.7);
    }

    #[test]
    fn uniqueness_linear_problem() {
        let fp = FluxParams::new(phase(2.0, 2.0, 2.0, 0.0, 0.0), 0.0).unwrap();
        let prob = PhaseProblem::new(square(8), fp, SourceTerm::from_x(|x| x[0]));
        let s = SolverSettings::default();
        let rep = verify_uniqueness_empirical(&prob, &s, 3, UNIQUENESS_SEED).unwrap();
        assert_eq!(rep.converged, 3);
        assert!(rep.max_distance <= 1e-9);
        let starts = random_starts(&prob, 1, 5);
        let twice = vec![starts[0].clone(), starts[0].clone()];
        assert_eq!(verify_uniqueness_from(&prob, &s, &twice).unwrap().max_distance, 0.0);
        assert!(verify_uniqueness_empirical(&prob, &s, 1, 0).is_err());
    }
}
