//! Empirical constants of interior inequalities for minimizers: Caccioppoli,
//! Sobolev–Poincaré, Poincaré in `W₀`, and reverse Hölder ratios.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fem::{BallPoint, BallQuadrature, FeFunction};
use crate::field::Point;
use crate::mesh::{Ball, TriMesh};
use crate::modular::{luxemburg_norm, PhaseFunction, DEFAULT_REL_TOL};
use crate::operator::FluxParams;
use crate::quadrature::{QuadratureMeasure, TriangleRule};
use crate::solver::{solve_variational, PhaseProblem, SolverSettings, SourceTerm};

pub const DEFAULT_DELTA: f64 = 0.75;
pub const DEFAULT_M_GRID: [f64; 4] = [0.05, 0.1, 0.2, 0.4];
pub const DEFAULT_STABILITY_FACTOR: f64 = 10.0;

/// Concentric ball pairs `B_{R₁} ⊂ B_{R₂}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BallFamily {
    pub balls: Vec<Ball>,
    /// `(inner, outer)` indices into `balls`.
    pub pairing: Vec<(usize, usize)>,
}

impl BallFamily {
    pub fn new(balls: Vec<Ball>, pairing: Vec<(usize, usize)>) -> Result<Self> {
        for &(i, o) in &pairing {
            let (Some(a), Some(b)) = (balls.get(i), balls.get(o)) else {
                return Err(Error::Contract(format!("pair ({i}, {o}) out of range")));
            };
            if a.center != b.center {
                return Err(Error::Contract(format!("pair ({i}, {o}) is not concentric")));
            }
            if !(a.radius < b.radius) {
                return Err(Error::Contract(format!("pair ({i}, {o}) needs R1 < R2")));
            }
        }
        Ok(BallFamily { balls, pairing })
    }

    /// Builds pairs from `(center, R₁, R₂)`.
    pub fn from_pairs(pairs: &[(Point, f64, f64)]) -> Result<Self> {
        let mut balls = Vec::with_capacity(2 * pairs.len());
        let mut pairing = Vec::with_capacity(pairs.len());
        for &(c, r1, r2) in pairs {
            balls.push(Ball::new(c, r1)?);
            balls.push(Ball::new(c, r2)?);
            pairing.push((balls.len() - 2, balls.len() - 1));
        }
        Self::new(balls, pairing)
    }

    /// `count` pairs with centers uniform in the box `[lo, hi]`, `R₂` uniform
    /// in `r2_range` and `R₁ = ratio · R₂`.
    pub fn random(
        count: usize,
        lo: Point,
        hi: Point,
        r2_range: (f64, f64),
        ratio: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::Contract(format!("R1/R2 must lie in (0, 1), got {ratio}")));
        }
        if !(r2_range.0 > 0.0 && r2_range.0 <= r2_range.1) || lo[0] > hi[0] || lo[1] > hi[1] {
            return Err(Error::Contract("empty ball family range".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs: Vec<(Point, f64, f64)> = (0..count)
            .map(|_| {
                let c = [lo[0] + (hi[0] - lo[0]) * rng.gen::<f64>(), lo[1] + (hi[1] - lo[1]) * rng.gen::<f64>()];
                let r2 = r2_range.0 + (r2_range.1 - r2_range.0) * rng.gen::<f64>();
                (c, ratio * r2, r2)
            })
            .collect();
        Self::from_pairs(&pairs)
    }

    pub fn pairs(&self) -> impl Iterator<Item = (Ball, Ball)> + '_ {
        self.pairing.iter().map(|&(i, o)| (self.balls[i], self.balls[o]))
    }

    pub fn outer_balls(&self) -> Vec<Ball> {
        self.pairs().map(|(_, b)| b).collect()
    }

    /// Lists every outer ball (scaled by `factor`) that leaves the mesh.
    pub fn escaping(&self, mesh: &TriMesh, factor: f64) -> Vec<Ball> {
        self.outer_balls()
            .into_iter()
            .map(|b| b.scaled(factor))
            .filter(|b| b.check_inside(mesh).is_err())
            .collect()
    }
}

/// Both sides of one measured inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatioSample {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

impl RatioSample {
    /// `0/0 → 0`; `x/0 → +∞`.
    pub fn new(lhs: f64, rhs: f64) -> Self {
        let ratio = if rhs > 0.0 {
            lhs / rhs
        } else if lhs > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        RatioSample { lhs, rhs, ratio }
    }
}

/// One CSV row of a probe.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeRow {
    pub inequality: String,
    pub center_x: f64,
    pub center_y: f64,
    #[serde(rename = "R1")]
    pub r1: f64,
    #[serde(rename = "R2")]
    pub r2: f64,
    pub param: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ProbeParameters {
    pub delta: Option<f64>,
    pub m: Option<Vec<f64>>,
    pub r0: Option<f64>,
    pub gamma: Option<f64>,
}

/// Ratios of a probe over a ball family.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    pub inequality_name: String,
    pub rows: Vec<ProbeRow>,
    pub ratios: Vec<f64>,
    /// Max of `ratios`.
    pub empirical_constant: f64,
    /// `(param, max ratio)` per grid value; one entry when the probe has no grid.
    pub per_param: Vec<(f64, f64)>,
    /// `(h_max, empirical_constant)` per mesh.
    pub refinement_trace: Vec<(f64, f64)>,
    pub parameters: ProbeParameters,
    /// False when a `+∞` ratio was recorded.
    pub passed: bool,
}

impl ProbeReport {
    fn from_rows(name: &str, rows: Vec<ProbeRow>, h_max: f64, parameters: ProbeParameters) -> Self {
        let ratios: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
        let empirical_constant = ratios.iter().copied().fold(0.0, f64::max);
        let mut per_param: Vec<(f64, f64)> = Vec::new();
        for r in &rows {
            match per_param.iter_mut().find(|(p, _)| *p == r.param) {
                Some(e) => e.1 = e.1.max(r.ratio),
                None => per_param.push((r.param, r.ratio)),
            }
        }
        let passed = ratios.iter().all(|r| r.is_finite());
        ProbeReport {
            inequality_name: name.to_string(),
            rows,
            ratios,
            empirical_constant,
            per_param,
            refinement_trace: vec![(h_max, empirical_constant)],
            parameters,
            passed,
        }
    }

    /// Appends the trace of a report computed on another mesh.
    pub fn extend_trace(&mut self, other: &ProbeReport) {
        self.refinement_trace.extend_from_slice(&other.refinement_trace);
    }

    pub fn max_ratio_for(&self, param: f64) -> Option<f64> {
        self.per_param.iter().find(|(p, _)| *p == param).map(|e| e.1)
    }
}

/// Largest grid value whose max ratio stays below `factor` in every report.
pub fn stable_exponent(reports: &[&ProbeReport], factor: f64) -> Option<f64> {
    let first = reports.first()?;
    first
        .per_param
        .iter()
        .map(|e| e.0)
        .filter(|&m| reports.iter().all(|r| r.max_ratio_for(m).is_some_and(|v| v < factor)))
        .fold(None, |acc: Option<f64>, m| Some(acc.map_or(m, |a| a.max(m))))
}

/// Discrete minimizer of the energy with the trace of `boundary`.
pub fn minimize_dirichlet(
    fp: &FluxParams,
    mesh: Arc<TriMesh>,
    boundary: impl Fn(Point) -> f64,
    settings: &SolverSettings,
) -> Result<FeFunction> {
    let prob = PhaseProblem::new(mesh, fp.clone(), SourceTerm::zero()).with_dirichlet(boundary)?;
    let rep = solve_variational(&prob, settings)?;
    if !rep.converged {
        return Err(Error::Solver(format!("minimizer did not converge: {}", rep.message)));
    }
    Ok(rep.solution)
}

struct Probe<'a> {
    tf: &'a PhaseFunction,
    u: &'a FeFunction,
    grads: Vec<f64>,
    rule: TriangleRule,
}

impl<'a> Probe<'a> {
    fn new(tf: &'a PhaseFunction, u: &'a FeFunction) -> Self {
        let grads = u.gradients().iter().map(|g| (g[0] * g[0] + g[1] * g[1]).sqrt()).collect();
        Probe { tf, u, grads, rule: TriangleRule::default() }
    }

    fn quad(&self, ball: &Ball) -> Result<BallQuadrature> {
        BallQuadrature::new(self.u.mesh(), ball, &self.rule)
    }

    fn t(&self, p: &BallPoint, s: f64) -> f64 {
        self.tf.at(p.x).value(s)
    }

    fn value(&self, p: &BallPoint) -> f64 {
        self.u.value_at_bary(p.triangle, p.bary)
    }

    fn grad_phase(&self, p: &BallPoint) -> f64 {
        self.t(p, self.grads[p.triangle])
    }
}

/// `|v − mean|`, with round-off from forming the mean snapped to zero.
fn deviation(v: f64, mean: f64) -> f64 {
    let d = (v - mean).abs();
    if d <= 64.0 * f64::EPSILON * mean.abs() {
        0.0
    } else {
        d
    }
}

fn check_pair(inner: &Ball, outer: &Ball) -> Result<()> {
    if inner.center != outer.center || !(inner.radius < outer.radius) {
        return Err(Error::Contract("ball pair must be concentric with R1 < R2".into()));
    }
    Ok(())
}

/// `∫_{B_{R₁}} 𝒯(x, |∇u|)` over `∫_{B_{R₂}} 𝒯(x, |u − u_{B_{R₂}}|/(R₂ − R₁))`.
pub fn caccioppoli_ratio(tf: &PhaseFunction, u: &FeFunction, inner: &Ball, outer: &Ball) -> Result<RatioSample> {
    check_pair(inner, outer)?;
    let pr = Probe::new(tf, u);
    caccioppoli_with(&pr, inner, outer)
}

fn caccioppoli_with(pr: &Probe, inner: &Ball, outer: &Ball) -> Result<RatioSample> {
    let qi = pr.quad(inner)?;
    let qo = pr.quad(outer)?;
    let mean = qo.average(|p| pr.value(p))?;
    let gap = outer.radius - inner.radius;
    let lhs = qi.integrate(|p| pr.grad_phase(p))?;
    let rhs = qo.integrate(|p| pr.t(p, deviation(pr.value(p), mean) / gap))?;
    Ok(RatioSample::new(lhs, rhs))
}

/// Which part of `u − l` is kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Side {
    Plus,
    Minus,
}

/// Caccioppoli ratio for the truncation `(u − l)_±`; the truncated gradient is
/// `∇u` at quadrature points where `±(u − l) > 0` and zero elsewhere.
pub fn caccioppoli_truncation_ratio(
    tf: &PhaseFunction,
    u: &FeFunction,
    inner: &Ball,
    outer: &Ball,
    level: f64,
    side: Side,
) -> Result<RatioSample> {
    check_pair(inner, outer)?;
    let pr = Probe::new(tf, u);
    let sign = match side {
        Side::Plus => 1.0,
        Side::Minus => -1.0,
    };
    let w = |p: &BallPoint| (sign * (pr.value(p) - level)).max(0.0);
    let gap = outer.radius - inner.radius;
    let lhs = pr.quad(inner)?.integrate(|p| if w(p) > 0.0 { pr.grad_phase(p) } else { 0.0 })?;
    let rhs = pr.quad(outer)?.integrate(|p| pr.t(p, w(p) / gap))?;
    Ok(RatioSample::new(lhs, rhs))
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Contract(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok(())
}

fn power_mean(q: &BallQuadrature, f: impl Fn(&BallPoint) -> f64, s: f64) -> Result<f64> {
    Ok(q.average(|p| f(p).powf(s))?.powf(1.0 / s))
}

/// `avg 𝒯(x, |u − u_B|/R)` over `1 + (avg 𝒯(x, |∇u|)^δ)^{1/δ}`.
pub fn sobolev_poincare_ratio(
    tf: &PhaseFunction,
    u: &FeFunction,
    ball: &Ball,
    delta: f64,
    r0: Option<f64>,
) -> Result<RatioSample> {
    check_delta(delta)?;
    if let Some(r0) = r0 {
        if ball.radius > r0 {
            log::warn!("ball radius {} exceeds R0 = {r0}", ball.radius);
        }
    }
    let pr = Probe::new(tf, u);
    sobolev_poincare_with(&pr, ball, delta)
}

fn sobolev_poincare_with(pr: &Probe, ball: &Ball, delta: f64) -> Result<RatioSample> {
    let q = pr.quad(ball)?;
    let mean = q.average(|p| pr.value(p))?;
    let lhs = q.average(|p| pr.t(p, deviation(pr.value(p), mean) / ball.radius))?;
    let rhs = 1.0 + power_mean(&q, |p| pr.grad_phase(p), delta)?;
    Ok(RatioSample::new(lhs, rhs))
}

/// Zero-set form: `avg 𝒯(x, |u|/R)` over `1 + (avg 𝒯(x, |∇u|)^δ)^{1/δ}`
/// for `u` vanishing on `E` with `|E ∩ B| ≥ γ |B|`.
pub fn sobolev_poincare_zero_set(
    tf: &PhaseFunction,
    u: &FeFunction,
    ball: &Ball,
    in_e: impl Fn(Point) -> bool,
    delta: f64,
    gamma: f64,
) -> Result<RatioSample> {
    check_delta(delta)?;
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Contract(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    let pr = Probe::new(tf, u);
    let q = pr.quad(ball)?;
    let measure = q.integrate(|p| if in_e(p.x) { 1.0 } else { 0.0 })?;
    let required = gamma * q.measure;
    // a full zero set is measured up to round-off
    if measure < required * (1.0 - 1e-12) {
        return Err(Error::ZeroSetTooSmall { measure, required });
    }
    let mesh = u.mesh();
    for (i, &x) in mesh.vertices().iter().enumerate() {
        if ball.contains(x) && in_e(x) && u.values()[i].abs() > 1e-12 {
            return Err(Error::Contract(format!("u does not vanish on E at ({}, {})", x[0], x[1])));
        }
    }
    let lhs = q.average(|p| pr.t(p, pr.value(p).abs() / ball.radius))?;
    let rhs = 1.0 + power_mean(&q, |p| pr.grad_phase(p), delta)?;
    Ok(RatioSample::new(lhs, rhs))
}

/// `‖u‖_𝒯 / ‖∇u‖_𝒯` for `u` vanishing on the boundary.
pub fn poincare_w0_ratio(tf: &PhaseFunction, u: &FeFunction) -> Result<f64> {
    let mesh = u.mesh();
    for (i, &b) in mesh.boundary_flags().iter().enumerate() {
        if b && u.values()[i].abs() > 1e-12 {
            return Err(Error::Contract("u must vanish on the boundary".into()));
        }
    }
    if u.values().iter().all(|&v| v == 0.0) {
        return Err(Error::Contract("Poincaré ratio of the zero function".into()));
    }
    let rule = TriangleRule::default();
    let quad = QuadratureMeasure::on_mesh(mesh, &rule);
    let g = u.grad_norms_at_quadrature(&rule);
    let num = luxemburg_norm(tf, &u.values_at_quadrature(&rule), &quad, DEFAULT_REL_TOL)?.luxemburg_norm;
    let den = luxemburg_norm(tf, &g, &quad, DEFAULT_REL_TOL)?.luxemburg_norm;
    Ok(num / den)
}

fn row(name: &str, inner_r: f64, outer: &Ball, param: f64, s: RatioSample) -> ProbeRow {
    ProbeRow {
        inequality: name.to_string(),
        center_x: outer.center[0],
        center_y: outer.center[1],
        r1: inner_r,
        r2: outer.radius,
        param,
        lhs: s.lhs,
        rhs: s.rhs,
        ratio: s.ratio,
    }
}

fn geometry(mesh: &TriMesh, family: &BallFamily, factor: f64) -> Result<()> {
    match family.escaping(mesh, factor).first() {
        Some(b) => Err(Error::BallEscapes { x: b.center[0], y: b.center[1], radius: b.radius }),
        None => Ok(()),
    }
}

/// Caccioppoli ratios over every pair of the family (`param = 0`).
pub fn caccioppoli_probe(tf: &PhaseFunction, u: &FeFunction, family: &BallFamily) -> Result<ProbeReport> {
    geometry(u.mesh(), family, 1.0)?;
    let pr = Probe::new(tf, u);
    let pairs: Vec<(Ball, Ball)> = family.pairs().collect();
    let rows = pairs
        .par_iter()
        .map(|(i, o)| Ok(row("caccioppoli", i.radius, o, 0.0, caccioppoli_with(&pr, i, o)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ProbeReport::from_rows("caccioppoli", rows, u.mesh().h_max(), ProbeParameters::default()))
}

/// Sobolev–Poincaré ratios on every outer ball (`param = δ`).
pub fn sobolev_poincare_probe(
    tf: &PhaseFunction,
    u: &FeFunction,
    family: &BallFamily,
    delta: f64,
    r0: Option<f64>,
) -> Result<ProbeReport> {
    check_delta(delta)?;
    geometry(u.mesh(), family, 1.0)?;
    let pr = Probe::new(tf, u);
    let balls = family.outer_balls();
    if let Some(r0) = r0 {
        if balls.iter().any(|b| b.radius > r0) {
            log::warn!("some balls exceed R0 = {r0}");
        }
    }
    let rows = balls
        .par_iter()
        .map(|b| Ok(row("sobolev-poincare", b.radius, b, delta, sobolev_poincare_with(&pr, b, delta)?)))
        .collect::<Result<Vec<_>>>()?;
    let params = ProbeParameters { delta: Some(delta), r0, ..Default::default() };
    Ok(ProbeReport::from_rows("sobolev-poincare", rows, u.mesh().h_max(), params))
}

fn check_grid(m_grid: &[f64]) -> Result<()> {
    if m_grid.is_empty() || m_grid.iter().any(|&m| !(m > 0.0 && m < 1.0)) {
        return Err(Error::Contract("m grid must be a nonempty subset of (0, 1)".into()));
    }
    Ok(())
}

/// Reverse Hölder ratio
/// `(avg_{B_{R/2}} g^{1+m})^{1/(1+m)} / (1 + avg_{B_R} g)` with
/// `g = 𝒯(x, |∇u|)`, for every outer ball `B_R` and `m` in the grid.
pub fn higher_integrability_probe(
    tf: &PhaseFunction,
    u: &FeFunction,
    family: &BallFamily,
    m_grid: &[f64],
) -> Result<ProbeReport> {
    check_grid(m_grid)?;
    geometry(u.mesh(), family, 1.0)?;
    let pr = Probe::new(tf, u);
    let balls = family.outer_balls();
    let rows: Vec<Vec<ProbeRow>> = balls
        .par_iter()
        .map(|b| {
            let half = b.scaled(0.5);
            let qh = pr.quad(&half)?;
            let avg = pr.quad(b)?.average(|p| pr.grad_phase(p))?;
            m_grid
                .iter()
                .map(|&m| {
                    let lhs = power_mean(&qh, |p| pr.grad_phase(p), 1.0 + m)?;
                    Ok(row("higher-integrability", half.radius, b, m, RatioSample::new(lhs, 1.0 + avg)))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let params = ProbeParameters { m: Some(m_grid.to_vec()), ..Default::default() };
    Ok(ProbeReport::from_rows("higher-integrability", rows.concat(), u.mesh().h_max(), params))
}

/// `avg_{B_R} 𝒯(∇v)^{1+m}` over
/// `(avg_{B_{2R}} 𝒯(∇v))^{1+m} + avg_{B_{2R}} 𝒯(∇w)^{1+m} + 1`
/// for the outer balls `B_R` of the family.
pub fn boundary_higher_integrability_probe(
    tf: &PhaseFunction,
    v: &FeFunction,
    w: &FeFunction,
    family: &BallFamily,
    m_grid: &[f64],
) -> Result<ProbeReport> {
    check_grid(m_grid)?;
    if !Arc::ptr_eq(v.mesh(), w.mesh()) && v.mesh().as_ref() != w.mesh().as_ref() {
        return Err(Error::Contract("v and w must live on the same mesh".into()));
    }
    geometry(v.mesh(), family, 2.0)?;
    let pv = Probe::new(tf, v);
    let pw = Probe::new(tf, w);
    let balls = family.outer_balls();
    let rows: Vec<Vec<ProbeRow>> = balls
        .par_iter()
        .map(|b| {
            let q = pv.quad(b)?;
            let q2 = pv.quad(&b.scaled(2.0))?;
            let avg_v = q2.average(|p| pv.grad_phase(p))?;
            m_grid
                .iter()
                .map(|&m| {
                    let s = 1.0 + m;
                    let lhs = q.average(|p| pv.grad_phase(p).powf(s))?;
                    let rhs = avg_v.powf(s) + q2.average(|p| pw.grad_phase(p).powf(s))? + 1.0;
                    Ok(row("boundary-higher-integrability", b.radius, &b.scaled(2.0), m, RatioSample::new(lhs, rhs)))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let params = ProbeParameters { m: Some(m_grid.to_vec()), ..Default::default() };
    Ok(ProbeReport::from_rows("boundary-higher-integrability", rows.concat(), v.mesh().h_max(), params))
}
