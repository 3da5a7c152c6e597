//! Triangle quadrature rules in barycentric form, and quadrature measures.

use crate::error::{Error, Result};
use crate::field::Point;
use crate::mesh::TriMesh;

/// Quadrature on the reference triangle; weights sum to one (multiply by the
/// triangle area).
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleRule {
    pub degree: usize,
    pub bary: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl TriangleRule {
    /// Smallest built-in rule exact for polynomials of total degree `degree`.
    ///
    /// Degrees 1, 2 and 3–5 use the centroid, the three-point and the seven-point
    /// symmetric rules; higher degrees use a collapsed Gauss–Legendre product rule.
    pub fn of_degree(degree: usize) -> Result<Self> {
        match degree {
            0 | 1 => Ok(TriangleRule { degree: 1, bary: vec![[1.0 / 3.0; 3]], weights: vec![1.0] }),
            2 => {
                let (a, b) = (1.0 / 6.0, 2.0 / 3.0);
                Ok(TriangleRule {
                    degree: 2,
                    bary: vec![[b, a, a], [a, b, a], [a, a, b]],
                    weights: vec![1.0 / 3.0; 3],
                })
            }
            3..=5 => Ok(seven_point()),
            6..=30 => Ok(collapsed_gauss(degree)),
            _ => Err(Error::Contract(format!("no quadrature rule of degree {degree}"))),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Physical location of quadrature point `k` in a triangle.
    #[inline]
    pub fn point(&self, k: usize, tri: &[Point; 3]) -> Point {
        let l = self.bary[k];
        [
            l[0] * tri[0][0] + l[1] * tri[1][0] + l[2] * tri[2][0],
            l[0] * tri[0][1] + l[1] * tri[1][1] + l[2] * tri[2][1],
        ]
    }
}

impl Default for TriangleRule {
    fn default() -> Self {
        seven_point()
    }
}

fn seven_point() -> TriangleRule {
    let s15 = 15f64.sqrt();
    let a = (6.0 - s15) / 21.0;
    let b = (6.0 + s15) / 21.0;
    let wa = (155.0 - s15) / 1200.0;
    let wb = (155.0 + s15) / 1200.0;
    TriangleRule {
        degree: 5,
        bary: vec![
            [1.0 / 3.0; 3],
            [1.0 - 2.0 * a, a, a],
            [a, 1.0 - 2.0 * a, a],
            [a, a, 1.0 - 2.0 * a],
            [1.0 - 2.0 * b, b, b],
            [b, 1.0 - 2.0 * b, b],
            [b, b, 1.0 - 2.0 * b],
        ],
        weights: vec![9.0 / 40.0, wa, wa, wa, wb, wb, wb],
    }
}

/// Gauss–Legendre nodes and weights on [0, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pm) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = 0.5 * (1.0 - x);
        weights[i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Duffy-collapsed tensor Gauss rule of the requested degree.
fn collapsed_gauss(degree: usize) -> TriangleRule {
    // the Jacobian (1−ξ) raises the degree in ξ by one
    let k = (degree + 2).div_ceil(2);
    let (x, w) = gauss_legendre(k);
    let mut bary = Vec::with_capacity(k * k);
    let mut weights = Vec::with_capacity(k * k);
    for i in 0..k {
        for j in 0..k {
            let xi = x[i];
            let eta = x[j] * (1.0 - xi);
            bary.push([1.0 - xi - eta, xi, eta]);
            // reference area 1/2 normalized to weight sum 1
            weights.push(2.0 * w[i] * w[j] * (1.0 - xi));
        }
    }
    TriangleRule { degree, bary, weights }
}

/// A discretized integration measure: points with positive weights.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureMeasure {
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
    pub total_mass: f64,
}

impl QuadratureMeasure {
    pub fn new(points: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(Error::Contract("points and weights differ in length".into()));
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::Contract("quadrature weights must be positive".into()));
        }
        let total_mass = crate::sum::neumaier(weights.iter().copied());
        Ok(QuadratureMeasure { points, weights, total_mass })
    }

    /// Triangle-by-triangle measure on a mesh; point order is
    /// `triangle-major, rule-point-minor`.
    pub fn on_mesh(mesh: &TriMesh, rule: &TriangleRule) -> Self {
        let mut points = Vec::with_capacity(mesh.num_triangles() * rule.len());
        let mut weights = Vec::with_capacity(points.capacity());
        for t in 0..mesh.num_triangles() {
            let tri = mesh.triangle_points(t);
            let area = mesh.triangle_area(t);
            for k in 0..rule.len() {
                points.push(rule.point(k, &tri));
                weights.push(area * rule.weights[k]);
            }
        }
        Self::new(points, weights).expect("mesh triangles have positive area")
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `Σ w_k f(k)`, failing on a non-finite integrand value.
    pub fn integrate(&self, f: impl Fn(usize) -> f64) -> Result<f64> {
        let mut acc = crate::sum::Neumaier::default();
        for (k, &w) in self.weights.iter().enumerate() {
            let v = f(k);
            if !v.is_finite() {
                return Err(Error::NonFinite);
            }
            acc.add(w * v);
        }
        Ok(acc.total())
    }
}
