//! Discrete multi-phase energy, residual and Jacobian.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fem::FeFunction;
use crate::field::Point;
use crate::mesh::TriMesh;
use crate::modular::{luxemburg_norm, PhaseAt, PhaseFunction, DEFAULT_REL_TOL};
use crate::quadrature::{QuadratureMeasure, TriangleRule};
use crate::sparse::CsrMatrix;
use crate::sum::Neumaier;

/// Default gradient regularization.
pub const DEFAULT_EPS: f64 = 1e-8;

/// The flux `a(x, g) = (s^{p−2} + μ₁ s^{q−2} + μ₂ s^{r−2}) g` with
/// `s = √(|g|² + ε²)`.
#[derive(Debug, Clone)]
pub struct FluxParams {
    pub tf: PhaseFunction,
    pub eps: f64,
}

impl FluxParams {
    /// `eps = 0` is only accepted when `p⁻ ≥ 2`.
    pub fn new(tf: PhaseFunction, eps: f64) -> Result<Self> {
        if !(eps >= 0.0) || !eps.is_finite() {
            return Err(Error::Contract(format!("ε must be finite and ≥ 0, got {eps}")));
        }
        if eps == 0.0 && tf.exp.p_minus < 2.0 {
            return Err(Error::Contract(format!(
                "ε = 0 needs p⁻ ≥ 2 (p⁻ = {}); the flux derivative is singular at ∇u = 0",
                tf.exp.p_minus
            )));
        }
        Ok(FluxParams { tf, eps })
    }

    /// Smallest ε admissible for these exponents: 0 if `p⁻ ≥ 2`, else [`DEFAULT_EPS`].
    pub fn natural_eps(tf: &PhaseFunction) -> f64 {
        if tf.exp.p_minus >= 2.0 {
            0.0
        } else {
            DEFAULT_EPS
        }
    }

    pub fn with_eps(&self, eps: f64) -> Result<Self> {
        Self::new(self.tf.clone(), eps)
    }

    /// True when the operator is the plain Laplacian.
    pub fn is_linear(&self) -> bool {
        let e = &self.tf.exp;
        let w = &self.tf.w;
        let pure_p2 = e.p_minus == 2.0 && e.p_plus == 2.0;
        pure_p2 && ((w.sup_mu1 == 0.0 && w.sup_mu2 == 0.0) || (e.r_minus == 2.0 && e.r_plus == 2.0))
    }
}

/// Scalar coefficient `a(s)` and the rank-one factor `b(s)` of the flux
/// derivative `a(s) I + b(s) g gᵀ`.
#[inline]
fn coefficients(ph: &PhaseAt, g2: f64, eps: f64) -> (f64, f64) {
    let s2 = g2 + eps * eps;
    if s2 == 0.0 {
        let a = (ph.p == 2.0) as u8 as f64 + ph.mu1 * (ph.q == 2.0) as u8 as f64 + ph.mu2 * (ph.r == 2.0) as u8 as f64;
        return (a, 0.0);
    }
    let s = s2.sqrt();
    let term = |e: f64| {
        let se2 = s.powf(e - 2.0);
        (se2, (e - 2.0) * se2 / s2)
    };
    let (ap, bp) = term(ph.p);
    let (mut a, mut b) = (ap, bp);
    if ph.mu1 != 0.0 {
        let (aq, bq) = term(ph.q);
        a += ph.mu1 * aq;
        b += ph.mu1 * bq;
    }
    if ph.mu2 != 0.0 {
        let (ar, br) = term(ph.r);
        a += ph.mu2 * ar;
        b += ph.mu2 * br;
    }
    (a, b)
}

/// Regularized energy density `Σ w_e (s^e − ε^e)/e`.
#[inline]
fn density(ph: &PhaseAt, g2: f64, eps: f64) -> f64 {
    if eps == 0.0 {
        return ph.energy_density(g2.sqrt());
    }
    let s = (g2 + eps * eps).sqrt();
    let term = |e: f64| (s.powf(e) - eps.powf(e)) / e;
    let mut v = term(ph.p);
    if ph.mu1 != 0.0 {
        v += ph.mu1 * term(ph.q);
    }
    if ph.mu2 != 0.0 {
        v += ph.mu2 * term(ph.r);
    }
    v
}

/// `a(x, g)`.
pub fn flux(fp: &FluxParams, x: Point, g: [f64; 2]) -> [f64; 2] {
    let (a, _) = coefficients(&fp.tf.at(x), g[0] * g[0] + g[1] * g[1], fp.eps);
    [a * g[0], a * g[1]]
}

/// Residual (free nodes), Jacobian (free × free) and regularized energy.
#[derive(Debug, Clone)]
pub struct AssembledSystem {
    pub residual: Vec<f64>,
    pub jacobian: CsrMatrix,
    pub energy: f64,
}

/// The operator on a fixed mesh with exponents and weights cached at the
/// quadrature points.
#[derive(Debug, Clone)]
pub struct MultiPhaseOperator {
    fp: FluxParams,
    mesh: Arc<TriMesh>,
    rule: TriangleRule,
    free: Vec<usize>,
    free_map: Vec<Option<usize>>,
    basis: Vec<[[f64; 2]; 3]>,
    area: Vec<f64>,
    phases: Vec<PhaseAt>,
    pattern: CsrMatrix,
}

impl MultiPhaseOperator {
    pub fn new(fp: &FluxParams, mesh: Arc<TriMesh>) -> Self {
        Self::with_rule(fp, mesh, TriangleRule::default())
    }

    pub fn with_rule(fp: &FluxParams, mesh: Arc<TriMesh>, rule: TriangleRule) -> Self {
        let (free, free_map) = mesh.free_dofs();
        let nt = mesh.num_triangles();
        let basis = (0..nt).map(|t| mesh.basis_gradients(t)).collect();
        let area = (0..nt).map(|t| mesh.triangle_area(t)).collect();
        let mut phases = Vec::with_capacity(nt * rule.len());
        for t in 0..nt {
            let tri = mesh.triangle_points(t);
            for k in 0..rule.len() {
                phases.push(fp.tf.at(rule.point(k, &tri)));
            }
        }
        let pattern = CsrMatrix::mesh_pattern(&mesh, &free_map);
        MultiPhaseOperator { fp: fp.clone(), mesh, rule, free, free_map, basis, area, phases, pattern }
    }

    /// Same cached data with another regularization.
    pub fn with_eps(&self, eps: f64) -> Result<Self> {
        let mut op = self.clone();
        op.fp = self.fp.with_eps(eps)?;
        Ok(op)
    }

    pub fn flux_params(&self) -> &FluxParams {
        &self.fp
    }

    pub fn eps(&self) -> f64 {
        self.fp.eps
    }

    pub fn mesh(&self) -> &Arc<TriMesh> {
        &self.mesh
    }

    pub fn rule(&self) -> &TriangleRule {
        &self.rule
    }

    pub fn free(&self) -> &[usize] {
        &self.free
    }

    pub fn free_map(&self) -> &[Option<usize>] {
        &self.free_map
    }

    pub fn num_free(&self) -> usize {
        self.free.len()
    }

    /// Phases at the quadrature points, triangle-major.
    pub fn phases(&self) -> &[PhaseAt] {
        &self.phases
    }

    pub fn gather_free(&self, u: &FeFunction) -> Vec<f64> {
        self.free.iter().map(|&i| u.values()[i]).collect()
    }

    /// Copies `x` into the free nodes of `u`.
    pub fn scatter_free(&self, u: &mut FeFunction, x: &[f64]) {
        let values = u.values_mut();
        for (&i, &v) in self.free.iter().zip(x) {
            values[i] = v;
        }
    }

    fn gradient(&self, t: usize, u: &[f64]) -> [f64; 2] {
        let tri = self.mesh.triangles()[t];
        let g = &self.basis[t];
        let mut out = [0.0; 2];
        for k in 0..3 {
            out[0] += u[tri[k]] * g[k][0];
            out[1] += u[tri[k]] * g[k][1];
        }
        out
    }

    fn check(&self, u: &FeFunction) -> Result<()> {
        if u.values().len() != self.mesh.num_vertices() {
            return Err(Error::Contract("function lives on a different mesh".into()));
        }
        Ok(())
    }

    fn energy_with(&self, u: &FeFunction, eps: f64) -> Result<f64> {
        self.check(u)?;
        let nq = self.rule.len();
        let per_tri: Vec<f64> = (0..self.mesh.num_triangles())
            .into_par_iter()
            .map(|t| {
                let g = self.gradient(t, u.values());
                let g2 = g[0] * g[0] + g[1] * g[1];
                let mut e = 0.0;
                for k in 0..nq {
                    e += self.rule.weights[k] * density(&self.phases[t * nq + k], g2, eps);
                }
                self.area[t] * e
            })
            .collect();
        let mut acc = Neumaier::default();
        for v in per_tri {
            if !v.is_finite() {
                return Err(Error::NonFinite);
            }
            acc.add(v);
        }
        Ok(acc.total())
    }

    /// `I(u)` with the exact (unregularized) integrand.
    pub fn energy(&self, u: &FeFunction) -> Result<f64> {
        self.energy_with(u, 0.0)
    }

    /// Energy whose gradient is the regularized residual.
    pub fn regularized_energy(&self, u: &FeFunction) -> Result<f64> {
        self.energy_with(u, self.fp.eps)
    }

    /// `ρ(|∇u|)` on the cached quadrature.
    pub fn gradient_modular(&self, u: &FeFunction) -> Result<f64> {
        self.check(u)?;
        let nq = self.rule.len();
        let mut acc = Neumaier::default();
        for t in 0..self.mesh.num_triangles() {
            let g = self.gradient(t, u.values());
            let s = (g[0] * g[0] + g[1] * g[1]).sqrt();
            for k in 0..nq {
                acc.add(self.area[t] * self.rule.weights[k] * self.phases[t * nq + k].value(s));
            }
        }
        let v = acc.total();
        if !v.is_finite() {
            return Err(Error::NonFinite);
        }
        Ok(v)
    }

    /// Luxemburg norm of `|∇u|` on the cached quadrature.
    pub fn gradient_norm(&self, u: &FeFunction) -> Result<f64> {
        self.check(u)?;
        let quad = QuadratureMeasure::on_mesh(&self.mesh, &self.rule);
        let g = u.grad_norms_at_quadrature(&self.rule);
        Ok(luxemburg_norm(&self.fp.tf, &g, &quad, DEFAULT_REL_TOL)?.luxemburg_norm)
    }

    fn local(&self, t: usize, u: &[f64], eps: f64, jac_eps: f64, with_jac: bool) -> ([f64; 3], [[f64; 3]; 3]) {
        let g = self.gradient(t, u);
        let g2 = g[0] * g[0] + g[1] * g[1];
        let nq = self.rule.len();
        let grads = &self.basis[t];
        let mut a_sum = 0.0;
        let mut jac_a = 0.0;
        let mut jac_b = 0.0;
        for k in 0..nq {
            let ph = &self.phases[t * nq + k];
            let w = self.rule.weights[k];
            let (a, b) = coefficients(ph, g2, eps);
            a_sum += w * a;
            if with_jac {
                if jac_eps == eps {
                    jac_a += w * a;
                    jac_b += w * b;
                } else {
                    let (a, b) = coefficients(ph, g2, jac_eps);
                    jac_a += w * a;
                    jac_b += w * b;
                }
            }
        }
        let area = self.area[t];
        let mut res = [0.0; 3];
        for i in 0..3 {
            res[i] = area * a_sum * (g[0] * grads[i][0] + g[1] * grads[i][1]);
        }
        let mut jac = [[0.0; 3]; 3];
        if with_jac {
            for i in 0..3 {
                let gi = g[0] * grads[i][0] + g[1] * grads[i][1];
                for j in 0..3 {
                    let gj = g[0] * grads[j][0] + g[1] * grads[j][1];
                    let ij = grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1];
                    jac[i][j] = area * (jac_a * ij + jac_b * gi * gj);
                }
            }
        }
        (res, jac)
    }

    /// `⟨A(u), φ_i⟩` for every vertex `i` (boundary rows included).
    pub fn full_residual(&self, u: &FeFunction) -> Result<Vec<f64>> {
        self.check(u)?;
        let eps = self.fp.eps;
        let locals: Vec<[f64; 3]> = (0..self.mesh.num_triangles())
            .into_par_iter()
            .map(|t| self.local(t, u.values(), eps, eps, false).0)
            .collect();
        let mut out = vec![0.0; self.mesh.num_vertices()];
        for (t, res) in locals.iter().enumerate() {
            for (k, &v) in self.mesh.triangles()[t].iter().enumerate() {
                out[v] += res[k];
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(out)
    }

    /// Residual `⟨A(u), φ_i⟩ − load_i` over the free nodes. `load` is indexed
    /// by vertex.
    pub fn residual(&self, u: &FeFunction, load: Option<&[f64]>) -> Result<Vec<f64>> {
        let full = self.full_residual(u)?;
        Ok(self.free.iter().map(|&i| full[i] - load.map_or(0.0, |l| l[i])).collect())
    }

    pub fn assemble(&self, u: &FeFunction, load: Option<&[f64]>) -> Result<AssembledSystem> {
        self.assemble_with_jacobian_eps(u, load, self.fp.eps)
    }

    /// Assembly whose Jacobian uses the regularization `jac_eps` while the
    /// residual keeps the operator's ε.
    pub fn assemble_with_jacobian_eps(
        &self,
        u: &FeFunction,
        load: Option<&[f64]>,
        jac_eps: f64,
    ) -> Result<AssembledSystem> {
        self.check(u)?;
        if let Some(l) = load {
            if l.len() != self.mesh.num_vertices() {
                return Err(Error::Contract("load vector has wrong length".into()));
            }
        }
        let eps = self.fp.eps;
        let locals: Vec<([f64; 3], [[f64; 3]; 3])> = (0..self.mesh.num_triangles())
            .into_par_iter()
            .map(|t| self.local(t, u.values(), eps, jac_eps, true))
            .collect();
        let mut residual = vec![0.0; self.free.len()];
        let mut jacobian = self.pattern.clone();
        for (t, (res, jac)) in locals.iter().enumerate() {
            let tri = self.mesh.triangles()[t];
            for a in 0..3 {
                let Some(ia) = self.free_map[tri[a]] else { continue };
                residual[ia] += res[a];
                for b in 0..3 {
                    if let Some(ib) = self.free_map[tri[b]] {
                        jacobian.add(ia, ib, jac[a][b]);
                    }
                }
            }
        }
        if let Some(l) = load {
            for (k, &i) in self.free.iter().enumerate() {
                residual[k] -= l[i];
            }
        }
        if residual.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let energy = self.regularized_energy(u)?;
        Ok(AssembledSystem { residual, jacobian, energy })
    }

    /// Stiffness matrix of the Laplacian over the free nodes.
    pub fn stiffness(&self) -> CsrMatrix {
        let mut k = self.pattern.clone();
        for t in 0..self.mesh.num_triangles() {
            let tri = self.mesh.triangles()[t];
            let g = &self.basis[t];
            for a in 0..3 {
                let Some(ia) = self.free_map[tri[a]] else { continue };
                for b in 0..3 {
                    if let Some(ib) = self.free_map[tri[b]] {
                        k.add(ia, ib, self.area[t] * (g[a][0] * g[b][0] + g[a][1] * g[b][1]));
                    }
                }
            }
        }
        k
    }

    /// Consistent P1 mass matrix over the free nodes.
    pub fn mass(&self) -> CsrMatrix {
        let mut m = self.pattern.clone();
        for t in 0..self.mesh.num_triangles() {
            let tri = self.mesh.triangles()[t];
            for a in 0..3 {
                let Some(ia) = self.free_map[tri[a]] else { continue };
                for b in 0..3 {
                    if let Some(ib) = self.free_map[tri[b]] {
                        let c = if a == b { 2.0 } else { 1.0 };
                        m.add(ia, ib, self.area[t] * c / 12.0);
                    }
                }
            }
        }
        m
    }
}

/// `I(u)` with the unregularized integrand.
pub fn energy(fp: &FluxParams, u: &FeFunction) -> Result<f64> {
    MultiPhaseOperator::new(fp, u.mesh().clone()).energy(u)
}

/// Residual and Jacobian of `A(u) − load` over the free nodes.
pub fn assemble(fp: &FluxParams, u: &FeFunction, load: Option<&[f64]>) -> Result<AssembledSystem> {
    MultiPhaseOperator::new(fp, u.mesh().clone()).assemble(u, load)
}

fn same_mesh(u: &FeFunction, v: &FeFunction) -> Result<()> {
    if !Arc::ptr_eq(u.mesh(), v.mesh()) && u.mesh() != v.mesh() {
        return Err(Error::Contract("functions live on different meshes".into()));
    }
    Ok(())
}

/// `|(I(u+δh) − I(u−δh))/(2δ) − ⟨A(u), h⟩|`. Energies use ε = 0; the
/// residual uses the operator's ε.
pub fn check_gateaux(op: &MultiPhaseOperator, u: &FeFunction, h: &FeFunction, delta: f64) -> Result<GateauxCheck> {
    same_mesh(u, h)?;
    if !(delta > 0.0) {
        return Err(Error::Contract(format!("δ must be positive, got {delta}")));
    }
    if op.mesh().boundary_flags().iter().zip(h.values()).any(|(&b, &v)| b && v != 0.0) {
        return Err(Error::Contract("direction must vanish on the boundary".into()));
    }
    let pairing: f64 = {
        let full = op.full_residual(u)?;
        op.free().iter().map(|&i| full[i] * h.values()[i]).sum()
    };
    let plus = op.energy(&u.axpy(delta, h))?;
    let minus = op.energy(&u.axpy(-delta, h))?;
    let fd = (plus - minus) / (2.0 * delta);
    Ok(GateauxCheck { discrepancy: (fd - pairing).abs(), pairing, finite_difference: fd })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GateauxCheck {
    pub discrepancy: f64,
    pub pairing: f64,
    pub finite_difference: f64,
}

/// `⟨A(u) − A(v), u − v⟩` over the free nodes.
pub fn check_monotone(op: &MultiPhaseOperator, u: &FeFunction, v: &FeFunction) -> Result<f64> {
    same_mesh(u, v)?;
    let ru = op.full_residual(u)?;
    let rv = op.full_residual(v)?;
    Ok(op.free().iter().map(|&i| (ru[i] - rv[i]) * (u.values()[i] - v.values()[i])).sum())
}

/// One row of the coercivity sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoerciveSample {
    pub scale: f64,
    pub ratio: f64,
    pub gradient_norm: f64,
    pub lower_bound: f64,
}

/// `⟨A(cu), cu⟩ / ‖∇(cu)‖` for each scale `c`, with the lower bound
/// `min(‖∇(cu)‖^{p⁻−1}, ‖∇(cu)‖^{r⁺−1})`.
pub fn check_coercive(op: &MultiPhaseOperator, u: &FeFunction, scales: &[f64]) -> Result<Vec<CoerciveSample>> {
    if op.mesh().boundary_flags().iter().zip(u.values()).any(|(&b, &v)| b && v != 0.0) {
        return Err(Error::Contract("coercivity check needs zero boundary values".into()));
    }
    if u.values().iter().all(|&v| v == 0.0) {
        return Err(Error::Contract("coercivity check needs u ≠ 0".into()));
    }
    let quad_pts: Vec<Point> = QuadratureMeasure::on_mesh(op.mesh(), op.rule()).points;
    let (p_lo, r_hi) = op.flux_params().tf.exponent_range(&quad_pts);
    let mut out = Vec::with_capacity(scales.len());
    for &c in scales {
        if !(c > 0.0) {
            return Err(Error::Contract(format!("scales must be positive, got {c}")));
        }
        let cu = u.scaled(c);
        let full = op.full_residual(&cu)?;
        let pairing: f64 = op.free().iter().map(|&i| full[i] * cu.values()[i]).sum();
        let norm = op.gradient_norm(&cu)?;
        let lower_bound = norm.powf(p_lo - 1.0).min(norm.powf(r_hi - 1.0));
        out.push(CoerciveSample { scale: c, ratio: pairing / norm, gradient_norm: norm, lower_bound });
    }
    Ok(out)
}
