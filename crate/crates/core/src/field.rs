//! Polygonal domains and scalar fields on them.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::expr::Expr;

pub type Point = [f64; 2];

/// Default resolution of the uniform sampling grid used for extremal values.
pub const DEFAULT_SAMPLE_GRID: usize = 128;

/// A simple polygon Ω ⊂ ℝ² with the symbolic space dimension N.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain2D {
    vertices: Vec<Point>,
    dim: usize,
}

impl Domain2D {
    /// Builds a domain from polygon vertices. Clockwise input is reoriented.
    pub fn new(mut vertices: Vec<Point>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::Geometry(format!("polygon needs ≥ 3 vertices, got {}", vertices.len())));
        }
        let area = signed_area(&vertices);
        let scale = bbox_diameter(&vertices).max(f64::MIN_POSITIVE);
        if area.abs() <= 1e-14 * scale * scale {
            return Err(Error::Geometry("polygon has zero area".into()));
        }
        if area < 0.0 {
            vertices.reverse();
        }
        let n = vertices.len();
        for i in 0..n {
            for j in (i + 1)..n {
                // adjacent edges share a vertex
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                let (a, b) = (vertices[i], vertices[(i + 1) % n]);
                let (c, d) = (vertices[j], vertices[(j + 1) % n]);
                if segments_intersect(a, b, c, d) {
                    return Err(Error::Geometry(format!("polygon edges {i} and {j} intersect")));
                }
            }
        }
        Ok(Domain2D { vertices, dim: 2 })
    }

    pub fn unit_square() -> Self {
        Self::rectangle([0.0, 0.0], [1.0, 1.0]).expect("unit square is valid")
    }

    pub fn rectangle(lo: Point, hi: Point) -> Result<Self> {
        Self::new(vec![lo, [hi[0], lo[1]], hi, [lo[0], hi[1]]])
    }

    /// Regular polygon inscribed in the circle of the given radius.
    pub fn regular_polygon(center: Point, radius: f64, sides: usize) -> Result<Self> {
        let verts = (0..sides)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / sides as f64;
                [center[0] + radius * a.cos(), center[1] + radius * a.sin()]
            })
            .collect();
        Self::new(verts)
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    /// The space dimension N used in exponent hypotheses.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn bbox(&self) -> (Point, Point) {
        bbox(&self.vertices)
    }

    /// Returns the corners when Ω is an axis-aligned rectangle.
    pub fn as_rectangle(&self) -> Option<(Point, Point)> {
        if self.vertices.len() != 4 {
            return None;
        }
        let (lo, hi) = self.bbox();
        let tol = 1e-14 * (1.0 + bbox_diameter(&self.vertices));
        let on_corner = |p: &Point| {
            ((p[0] - lo[0]).abs() < tol || (p[0] - hi[0]).abs() < tol)
                && ((p[1] - lo[1]).abs() < tol || (p[1] - hi[1]).abs() < tol)
        };
        if self.vertices.iter().all(on_corner) {
            Some((lo, hi))
        } else {
            None
        }
    }

    /// Point-in-polygon test; points on the boundary count as inside.
    pub fn contains(&self, p: Point) -> bool {
        let n = self.vertices.len();
        let tol = 1e-12 * (1.0 + bbox_diameter(&self.vertices));
        for i in 0..n {
            if point_segment_distance(p, self.vertices[i], self.vertices[(i + 1) % n]) <= tol {
                return true;
            }
        }
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let (a, b) = (self.vertices[i], self.vertices[j]);
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let x = (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0];
                if p[0] < x {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }

    /// Uniform `n × n` grid over the bounding box (nodes included), restricted
    /// to Ω, plus the polygon vertices.
    pub fn sample_grid(&self, n: usize) -> Vec<Point> {
        let (lo, hi) = self.bbox();
        let n = n.max(1);
        let mut pts = Vec::with_capacity((n + 1) * (n + 1) + self.vertices.len());
        for i in 0..=n {
            for j in 0..=n {
                let p = [
                    lo[0] + (hi[0] - lo[0]) * i as f64 / n as f64,
                    lo[1] + (hi[1] - lo[1]) * j as f64 / n as f64,
                ];
                if self.contains(p) {
                    pts.push(p);
                }
            }
        }
        pts.extend_from_slice(&self.vertices);
        pts
    }

    /// Default sampling set for extremal values.
    pub fn default_samples(&self) -> Vec<Point> {
        self.sample_grid(DEFAULT_SAMPLE_GRID)
    }
}

pub(crate) fn signed_area(v: &[Point]) -> f64 {
    let n = v.len();
    0.5 * (0..n)
        .map(|i| {
            let (a, b) = (v[i], v[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
}

fn bbox(v: &[Point]) -> (Point, Point) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in v {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (lo, hi)
}

fn bbox_diameter(v: &[Point]) -> f64 {
    let (lo, hi) = bbox(v);
    ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2)).sqrt()
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |p: Point, q: Point, r: Point, o: f64| {
        o == 0.0
            && r[0] >= p[0].min(q[0])
            && r[0] <= p[0].max(q[0])
            && r[1] >= p[1].min(q[1])
            && r[1] <= p[1].max(q[1])
    };
    on(c, d, a, d1) || on(c, d, b, d2) || on(a, b, c, d3) || on(a, b, d, d4)
}

pub(crate) fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 { ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let q = [a[0] + t * ab[0] - p[0], a[1] + t * ab[1] - p[1]];
    (q[0] * q[0] + q[1] * q[1]).sqrt()
}

pub(crate) fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

type Callback = Arc<dyn Fn(Point) -> f64 + Send + Sync>;

#[derive(Clone)]
enum FieldKind {
    Const(f64),
    Affine([f64; 3]),
    Expr(Arc<Expr>),
    Custom(Callback),
}

/// A deterministic scalar function on Ω, optionally carrying declared bounds.
#[derive(Clone)]
pub struct ScalarField {
    kind: FieldKind,
    declared_bounds: Option<(f64, f64)>,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            FieldKind::Const(c) => write!(f, "Const({c})"),
            FieldKind::Affine(a) => write!(f, "Affine({a:?})"),
            FieldKind::Expr(e) => write!(f, "Expr({:?})", e.source()),
            FieldKind::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl ScalarField {
    pub fn constant(c: f64) -> Self {
        ScalarField { kind: FieldKind::Const(c), declared_bounds: None }
    }

    /// `a0 + a1·x₁ + a2·x₂`
    pub fn affine(a: [f64; 3]) -> Self {
        ScalarField { kind: FieldKind::Affine(a), declared_bounds: None }
    }

    pub fn expr(source: &str) -> Result<Self> {
        let e = Expr::parse(source)?;
        if e.depends_on_solution() {
            return Err(Error::Expr { column: 1, message: "field expressions may only use x1, x2".into() });
        }
        Ok(ScalarField { kind: FieldKind::Expr(Arc::new(e)), declared_bounds: None })
    }

    pub fn from_fn(f: impl Fn(Point) -> f64 + Send + Sync + 'static) -> Self {
        ScalarField { kind: FieldKind::Custom(Arc::new(f)), declared_bounds: None }
    }

    pub fn with_bounds(mut self, lo: f64, hi: f64) -> Self {
        self.declared_bounds = Some((lo, hi));
        self
    }

    pub fn declared_bounds(&self) -> Option<(f64, f64)> {
        self.declared_bounds
    }

    #[inline]
    pub fn eval(&self, x: Point) -> f64 {
        match &self.kind {
            FieldKind::Const(c) => *c,
            FieldKind::Affine(a) => a[0] + a[1] * x[0] + a[2] * x[1],
            FieldKind::Expr(e) => e.eval_at(x),
            FieldKind::Custom(f) => f(x),
        }
    }

    /// The value when the field is a literal constant.
    pub fn as_constant(&self) -> Option<f64> {
        match &self.kind {
            FieldKind::Const(c) => Some(*c),
            FieldKind::Affine([a0, a1, a2]) if *a1 == 0.0 && *a2 == 0.0 => Some(*a0),
            _ => None,
        }
    }

    /// Pointwise map of this field.
    pub fn map(&self, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> ScalarField {
        let inner = self.clone();
        ScalarField::from_fn(move |x| f(inner.eval(x)))
    }

    /// Minimum and maximum over the samples. Fails on non-finite values or a
    /// declared-bounds violation.
    pub fn extrema(&self, samples: &[Point]) -> Result<(f64, f64)> {
        if samples.is_empty() {
            return Err(Error::EmptySamples("field extrema".into()));
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &x in samples {
            let v = self.eval(x);
            if !v.is_finite() {
                return Err(Error::Domain(format!("field is not finite at ({}, {})", x[0], x[1])));
            }
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if let Some((dlo, dhi)) = self.declared_bounds {
            if lo < dlo || hi > dhi {
                return Err(Error::Contract(format!(
                    "sampled range [{lo}, {hi}] leaves declared bounds [{dlo}, {dhi}]"
                )));
            }
        }
        Ok((lo, hi))
    }
}
