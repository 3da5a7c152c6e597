//! P1 finite-element functions, integration and ball averages.

use std::io::Write;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::{dist, point_segment_distance, Point};
use crate::mesh::{barycentric, tri_area, Ball, TriMesh};
use crate::quadrature::{QuadratureMeasure, TriangleRule};
use crate::sum::Neumaier;

/// Recursion depth used when clipping triangles against a ball.
pub const BALL_CLIP_DEPTH: usize = 3;

/// A continuous piecewise-linear function given by its nodal values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeFunction {
    mesh: Arc<TriMesh>,
    values: Vec<f64>,
}

impl FeFunction {
    pub fn new(mesh: Arc<TriMesh>, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.num_vertices() {
            return Err(Error::Contract(format!(
                "{} nodal values for {} vertices",
                values.len(),
                mesh.num_vertices()
            )));
        }
        Ok(FeFunction { mesh, values })
    }

    pub fn zeros(mesh: Arc<TriMesh>) -> Self {
        let n = mesh.num_vertices();
        FeFunction { mesh, values: vec![0.0; n] }
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate(f: impl Fn(Point) -> f64, mesh: Arc<TriMesh>) -> Result<Self> {
        let values: Vec<f64> = mesh.vertices().iter().map(|&x| f(x)).collect();
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            let x = mesh.vertices()[i];
            return Err(Error::Domain(format!("non-finite value at vertex ({}, {})", x[0], x[1])));
        }
        Ok(FeFunction { mesh, values })
    }

    pub fn mesh(&self) -> &Arc<TriMesh> {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.mesh.clone(), values)
    }

    pub fn scaled(&self, c: f64) -> Self {
        FeFunction { mesh: self.mesh.clone(), values: self.values.iter().map(|v| c * v).collect() }
    }

    /// `self + c·other` on the same mesh.
    pub fn axpy(&self, c: f64, other: &FeFunction) -> Self {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + c * b).collect();
        FeFunction { mesh: self.mesh.clone(), values }
    }

    /// Constant gradient of the interpolant on triangle `t`.
    pub fn gradient_on(&self, t: usize) -> [f64; 2] {
        let g = self.mesh.basis_gradients(t);
        let tri = self.mesh.triangles()[t];
        let mut out = [0.0; 2];
        for k in 0..3 {
            let v = self.values[tri[k]];
            out[0] += v * g[k][0];
            out[1] += v * g[k][1];
        }
        out
    }

    pub fn gradients(&self) -> Vec<[f64; 2]> {
        (0..self.mesh.num_triangles()).map(|t| self.gradient_on(t)).collect()
    }

    #[inline]
    pub fn value_at_bary(&self, t: usize, l: [f64; 3]) -> f64 {
        let tri = self.mesh.triangles()[t];
        l[0] * self.values[tri[0]] + l[1] * self.values[tri[1]] + l[2] * self.values[tri[2]]
    }

    /// Values at the points of [`QuadratureMeasure::on_mesh`] for `rule`.
    pub fn values_at_quadrature(&self, rule: &TriangleRule) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.mesh.num_triangles() * rule.len());
        for t in 0..self.mesh.num_triangles() {
            for l in &rule.bary {
                out.push(self.value_at_bary(t, *l));
            }
        }
        out
    }

    /// |∇u| at the points of [`QuadratureMeasure::on_mesh`] for `rule`.
    pub fn grad_norms_at_quadrature(&self, rule: &TriangleRule) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.mesh.num_triangles() * rule.len());
        for t in 0..self.mesh.num_triangles() {
            let g = self.gradient_on(t);
            let n = (g[0] * g[0] + g[1] * g[1]).sqrt();
            out.extend(std::iter::repeat(n).take(rule.len()));
        }
        out
    }

    /// Max-norm of nodal values.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn ball_average(&self, ball: &Ball) -> Result<f64> {
        ball_average(self, ball)
    }
}

/// `∫_Ω f dx` with the quadrature rule of the given degree.
pub fn integrate(f: impl Fn(Point) -> f64, mesh: &TriMesh, rule_degree: usize) -> Result<f64> {
    let rule = TriangleRule::of_degree(rule_degree)?;
    integrate_with(mesh, &rule, |_, _, x| f(x))
}

/// `Σ_T Σ_k |T| w_k f(t, k, x_k)`, where `f` also sees the triangle and
/// rule-point index.
pub fn integrate_with(
    mesh: &TriMesh,
    rule: &TriangleRule,
    f: impl Fn(usize, usize, Point) -> f64,
) -> Result<f64> {
    let mut acc = Neumaier::default();
    for t in 0..mesh.num_triangles() {
        let tri = mesh.triangle_points(t);
        let area = mesh.triangle_area(t);
        for k in 0..rule.len() {
            let v = f(t, k, rule.point(k, &tri));
            if !v.is_finite() {
                return Err(Error::NonFinite);
            }
            acc.add(area * rule.weights[k] * v);
        }
    }
    Ok(acc.total())
}

/// A quadrature point inside a clipped ball.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BallPoint {
    pub triangle: usize,
    pub bary: [f64; 3],
    pub x: Point,
    pub weight: f64,
}

/// Quadrature over `B ∩ Ω` built by recursive subdivision of the triangles
/// crossing the circle.
#[derive(Debug, Clone, PartialEq)]
pub struct BallQuadrature {
    pub ball: Ball,
    pub points: Vec<BallPoint>,
    /// Σ of weights, the measure of the clipped region.
    pub measure: f64,
}

impl BallQuadrature {
    /// Checks containment (up to `h_max`) and builds the clipped rule.
    pub fn new(mesh: &TriMesh, ball: &Ball, rule: &TriangleRule) -> Result<Self> {
        ball.check_inside(mesh)?;
        Ok(Self::unchecked(mesh, ball, rule))
    }

    pub(crate) fn unchecked(mesh: &TriMesh, ball: &Ball, rule: &TriangleRule) -> Self {
        let mut points = Vec::new();
        let (c, r) = (ball.center, ball.radius);
        for t in 0..mesh.num_triangles() {
            let tri = mesh.triangle_points(t);
            let lo = [tri[0][0].min(tri[1][0]).min(tri[2][0]), tri[0][1].min(tri[1][1]).min(tri[2][1])];
            let hi = [tri[0][0].max(tri[1][0]).max(tri[2][0]), tri[0][1].max(tri[1][1]).max(tri[2][1])];
            if lo[0] > c[0] + r || hi[0] < c[0] - r || lo[1] > c[1] + r || hi[1] < c[1] - r {
                continue;
            }
            let unit = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
            clip(t, &tri, unit, ball, rule, BALL_CLIP_DEPTH, &mut points);
        }
        let measure = crate::sum::neumaier(points.iter().map(|p| p.weight));
        BallQuadrature { ball: *ball, points, measure }
    }

    /// `∫_{B∩Ω} f`, where `f` sees each ball point.
    pub fn integrate(&self, f: impl Fn(&BallPoint) -> f64) -> Result<f64> {
        let mut acc = Neumaier::default();
        for p in &self.points {
            let v = f(p);
            if !v.is_finite() {
                return Err(Error::NonFinite);
            }
            acc.add(p.weight * v);
        }
        Ok(acc.total())
    }

    /// Average over the clipped region.
    pub fn average(&self, f: impl Fn(&BallPoint) -> f64) -> Result<f64> {
        if self.measure <= 0.0 {
            return Err(Error::Geometry("ball does not meet the mesh".into()));
        }
        Ok(self.integrate(f)? / self.measure)
    }
}

fn clip(
    t: usize,
    tri: &[Point; 3],
    sub: [[f64; 3]; 3],
    ball: &Ball,
    rule: &TriangleRule,
    depth: usize,
    out: &mut Vec<BallPoint>,
) {
    let to_x = |l: [f64; 3]| -> Point {
        [
            l[0] * tri[0][0] + l[1] * tri[1][0] + l[2] * tri[2][0],
            l[0] * tri[0][1] + l[1] * tri[1][1] + l[2] * tri[2][1],
        ]
    };
    let corners = [to_x(sub[0]), to_x(sub[1]), to_x(sub[2])];
    let inside = corners.iter().filter(|&&p| ball.contains(p)).count();
    let area = tri_area(corners[0], corners[1], corners[2]);
    let emit = |out: &mut Vec<BallPoint>, filter: bool| {
        for k in 0..rule.len() {
            let lk = rule.bary[k];
            let mut bary = [0.0; 3];
            for (i, b) in bary.iter_mut().enumerate() {
                *b = lk[0] * sub[0][i] + lk[1] * sub[1][i] + lk[2] * sub[2][i];
            }
            let x = to_x(bary);
            if filter && !ball.contains(x) {
                continue;
            }
            out.push(BallPoint { triangle: t, bary, x, weight: area * rule.weights[k] });
        }
    };
    if inside == 3 {
        emit(out, false);
        return;
    }
    if inside == 0 && triangle_distance(&corners, ball.center) > ball.radius {
        return;
    }
    if depth == 0 {
        emit(out, true);
        return;
    }
    let mid = |a: [f64; 3], b: [f64; 3]| [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1]), 0.5 * (a[2] + b[2])];
    let (a, b, c) = (sub[0], sub[1], sub[2]);
    let (ab, bc, ca) = (mid(a, b), mid(b, c), mid(c, a));
    for child in [[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]] {
        clip(t, tri, child, ball, rule, depth - 1, out);
    }
}

fn triangle_distance(tri: &[Point; 3], x: Point) -> f64 {
    let l = barycentric(*tri, x);
    if l.iter().all(|&v| v >= 0.0) {
        return 0.0;
    }
    (0..3).map(|k| point_segment_distance(x, tri[k], tri[(k + 1) % 3])).fold(f64::INFINITY, f64::min)
}

/// Mean of `u` over the ball, normalized by the clipped measure so that
/// constants are reproduced exactly.
pub fn ball_average(u: &FeFunction, ball: &Ball) -> Result<f64> {
    let bq = BallQuadrature::new(u.mesh(), ball, &TriangleRule::default())?;
    bq.average(|p| u.value_at_bary(p.triangle, p.bary))
}

/// Distance between two points; re-exported for probes.
pub fn distance(a: Point, b: Point) -> f64 {
    dist(a, b)
}

/// Quadrature measure of the whole mesh for `rule`.
pub fn mesh_measure(mesh: &TriMesh, rule: &TriangleRule) -> QuadratureMeasure {
    QuadratureMeasure::on_mesh(mesh, rule)
}

/// Writes a legacy ASCII VTK 3.0 unstructured grid with nodal scalars and
/// per-triangle vectors.
pub fn write_vtk<W: Write>(
    w: &mut W,
    title: &str,
    mesh: &TriMesh,
    point_scalars: &[(&str, &[f64])],
    cell_vectors: &[(&str, &[[f64; 2]])],
) -> Result<()> {
    let title: String = title.chars().filter(|&c| c != '\n').take(255).collect();
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{title}")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {} double", mesh.num_vertices())?;
    for v in mesh.vertices() {
        writeln!(w, "{:.16e} {:.16e} 0", v[0], v[1])?;
    }
    let nt = mesh.num_triangles();
    writeln!(w, "CELLS {} {}", nt, 4 * nt)?;
    for t in mesh.triangles() {
        writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
    }
    writeln!(w, "CELL_TYPES {nt}")?;
    for _ in 0..nt {
        writeln!(w, "5")?;
    }
    if !point_scalars.is_empty() {
        writeln!(w, "POINT_DATA {}", mesh.num_vertices())?;
        for (name, values) in point_scalars {
            if values.len() != mesh.num_vertices() {
                return Err(Error::Contract(format!("point field '{name}' has wrong length")));
            }
            writeln!(w, "SCALARS {name} double 1")?;
            writeln!(w, "LOOKUP_TABLE default")?;
            for v in values.iter() {
                writeln!(w, "{v:.16e}")?;
            }
        }
    }
    if !cell_vectors.is_empty() {
        writeln!(w, "CELL_DATA {nt}")?;
        for (name, values) in cell_vectors {
            if values.len() != nt {
                return Err(Error::Contract(format!("cell field '{name}' has wrong length")));
            }
            writeln!(w, "VECTORS {name} double")?;
            for v in values.iter() {
                writeln!(w, "{:.16e} {:.16e} 0", v[0], v[1])?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Domain2D;
    use crate::mesh::structured_mesh;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn square(n: usize) -> Arc<TriMesh> {
        Arc::new(structured_mesh(&Domain2D::unit_square(), n).unwrap())
    }

    #[test]
    fn gradients_of_affine_functions() {
        let m = square(5);
        let u = FeFunction::interpolate(|x| x[0], m.clone()).unwrap();
        let c = FeFunction::interpolate(|_| 2.5, m.clone()).unwrap();
        let a = FeFunction::interpolate(|x| 3.0 * x[0] + 4.0 * x[1] - 1.0, m.clone()).unwrap();
        for t in 0..m.num_triangles() {
            let g = u.gradient_on(t);
            assert!((g[0] - 1.0).abs() < 1e-13 && g[1].abs() < 1e-13);
            let g = c.gradient_on(t);
            assert!(g[0].abs() < 1e-13 && g[1].abs() < 1e-13);
            let g = a.gradient_on(t);
            assert!((g[0] - 3.0).abs() < 1e-13 && (g[1] - 4.0).abs() < 1e-13);
        }
    }

    #[test]
    fn interpolation_examples() {
        let m = square(1);
        let c = FeFunction::interpolate(|_| 3.0, m.clone()).unwrap();
        assert_eq!(c.values(), &[3.0; 4]);
        let x = FeFunction::interpolate(|x| x[0], m.clone()).unwrap();
        assert_eq!(x.values(), &[0.0, 0.0, 1.0, 1.0]);
        let m2 = square(2);
        let s = FeFunction::interpolate(|x| (PI * x[0]).sin(), m2.clone()).unwrap();
        // vertex 3 = (0.5, 0)
        assert_eq!(m2.vertices()[3], [0.5, 0.0]);
        assert_relative_eq!(s.values()[3], 1.0, epsilon = 1e-15);
        assert!(FeFunction::interpolate(|x| 1.0 / x[0], m).is_err());
    }

    #[test]
    fn integration_examples() {
        let m = square(4);
        assert_relative_eq!(integrate(|_| 1.0, &m, 5).unwrap(), 1.0, epsilon = 1e-14);
        assert_relative_eq!(integrate(|x| x[0], &m, 5).unwrap(), 0.5, epsilon = 1e-14);
        let v = integrate(|x| x[0] * x[0] * x[1] * x[1], &m, 5).unwrap();
        assert!((v - 1.0 / 9.0).abs() < 1e-12);
        assert!(matches!(integrate(|_| f64::NAN, &m, 5), Err(Error::NonFinite)));
    }

    #[test]
    fn integration_linear_and_additive() {
        let m = square(6);
        let rule = TriangleRule::default();
        let f = |x: Point| (3.0 * x[0]).sin() + x[1];
        let g = |x: Point| x[0] * x[1].exp();
        let lin = integrate_with(&m, &rule, |_, _, x| 2.0 * f(x) - 3.0 * g(x)).unwrap();
        let sep = 2.0 * integrate_with(&m, &rule, |_, _, x| f(x)).unwrap()
            - 3.0 * integrate_with(&m, &rule, |_, _, x| g(x)).unwrap();
        assert_relative_eq!(lin, sep, epsilon = 1e-13);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mask: Vec<bool> = (0..m.num_triangles()).map(|_| rng.gen()).collect();
        let a = integrate_with(&m, &rule, |t, _, x| if mask[t] { f(x) } else { 0.0 }).unwrap();
        let b = integrate_with(&m, &rule, |t, _, x| if mask[t] { 0.0 } else { f(x) }).unwrap();
        let all = integrate_with(&m, &rule, |_, _, x| f(x)).unwrap();
        assert_relative_eq!(a + b, all, epsilon = 1e-14);
    }

    #[test]
    fn ball_average_examples() {
        let m = square(16);
        let c = FeFunction::interpolate(|_| 1.7, m.clone()).unwrap();
        let b = Ball::new([0.5, 0.5], 0.3).unwrap();
        assert_relative_eq!(c.ball_average(&b).unwrap(), 1.7, epsilon = 1e-13);
        let x = FeFunction::interpolate(|x| x[0], m.clone()).unwrap();
        assert_relative_eq!(x.ball_average(&b).unwrap(), 0.5, epsilon = 1e-12);
        assert!(matches!(
            x.ball_average(&Ball::new([0.9, 0.5], 0.4).unwrap()),
            Err(Error::BallEscapes { .. })
        ));
    }

    #[test]
    fn ball_average_polar_oracle() {
        // polar oracle: (1/π) ∫₀^{2π} ∫₀^1 ρ² ρ dρ dθ = 1/2
        let dom = Domain2D::rectangle([-1.0, -1.0], [1.0, 1.0]).unwrap();
        let m = Arc::new(structured_mesh(&dom, 64).unwrap());
        let u = FeFunction::interpolate(|x| x[0] * x[0] + x[1] * x[1], m).unwrap();
        let avg = u.ball_average(&Ball::new([0.0, 0.0], 1.0).unwrap()).unwrap();
        assert!((avg - 0.5).abs() < 2e-3, "{avg}");
    }

    #[test]
    fn ball_average_of_affine_is_center_value() {
        let f = |x: Point| 2.0 * x[0] - 0.7 * x[1] + 0.3;
        let ball = Ball::new([0.43, 0.51], 0.27).unwrap();
        let mut errs = Vec::new();
        for n in [8, 16, 32] {
            let u = FeFunction::interpolate(f, square(n)).unwrap();
            errs.push((u.ball_average(&ball).unwrap() - f(ball.center)).abs());
        }
        let h = |n: f64| 2f64.sqrt() / n;
        let consts: Vec<f64> = errs.iter().zip([8.0, 16.0, 32.0]).map(|(e, n)| e / h(n).powi(2)).collect();
        assert!(consts.iter().all(|&c| c < 1.0), "{consts:?}");
    }

    #[test]
    fn clipped_measure_approximates_disk() {
        let m = square(32);
        let b = Ball::new([0.5, 0.5], 0.25).unwrap();
        let bq = BallQuadrature::new(&m, &b, &TriangleRule::default()).unwrap();
        assert!((bq.measure - b.measure()).abs() / b.measure() < 1e-3);
    }

    #[test]
    fn vtk_output_shape() {
        let m = square(2);
        let u = FeFunction::interpolate(|x| x[0], m.clone()).unwrap();
        let mut buf = Vec::new();
        write_vtk(&mut buf, "test", &m, &[("u", u.values())], &[("grad", &u.gradients())]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("# vtk DataFile Version 3.0\ntest\nASCII\nDATASET UNSTRUCTURED_GRID\n"));
        assert!(s.contains("POINTS 9 double"));
        assert!(s.contains("CELLS 8 32"));
        assert!(s.contains("POINT_DATA 9"));
        assert!(s.contains("CELL_DATA 8"));
    }
}
