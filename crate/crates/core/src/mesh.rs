//! Conforming triangle meshes.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::field::{dist, point_segment_distance, signed_area, Domain2D, Point};

/// An immutable conforming triangulation with counter-clockwise triangles.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary_flags: Vec<bool>,
    boundary_edges: Vec<[usize; 2]>,
    h_max: f64,
}

impl TriMesh {
    /// Builds a mesh, orienting every triangle counter-clockwise and deriving
    /// the boundary from edges that belong to a single triangle.
    pub fn new(vertices: Vec<Point>, mut triangles: Vec<[usize; 3]>) -> Result<Self> {
        let nv = vertices.len();
        let mut h_max = 0.0_f64;
        for t in triangles.iter_mut() {
            if t.iter().any(|&i| i >= nv) {
                return Err(Error::Geometry(format!("triangle {t:?} references a missing vertex")));
            }
            let a = tri_area(vertices[t[0]], vertices[t[1]], vertices[t[2]]);
            if a == 0.0 {
                return Err(Error::Geometry(format!("triangle {t:?} has zero area")));
            }
            if a < 0.0 {
                t.swap(1, 2);
            }
            for k in 0..3 {
                h_max = h_max.max(dist(vertices[t[k]], vertices[t[(k + 1) % 3]]));
            }
        }
        let mut edge_count: HashMap<[usize; 2], usize> = HashMap::new();
        for t in &triangles {
            for k in 0..3 {
                *edge_count.entry(edge_key(t[k], t[(k + 1) % 3])).or_default() += 1;
            }
        }
        if let Some((e, _)) = edge_count.iter().find(|(_, &c)| c > 2) {
            return Err(Error::Geometry(format!("edge {e:?} shared by more than two triangles")));
        }
        let mut boundary_edges: Vec<[usize; 2]> =
            edge_count.into_iter().filter(|&(_, c)| c == 1).map(|(e, _)| e).collect();
        boundary_edges.sort_unstable();
        let mut boundary_flags = vec![false; nv];
        for e in &boundary_edges {
            boundary_flags[e[0]] = true;
            boundary_flags[e[1]] = true;
        }
        Ok(TriMesh { vertices, triangles, boundary_flags, boundary_edges, h_max })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_flags(&self) -> &[bool] {
        &self.boundary_flags
    }

    pub fn boundary_edges(&self) -> &[[usize; 2]] {
        &self.boundary_edges
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// Longest edge length.
    pub fn h_max(&self) -> f64 {
        self.h_max
    }

    pub fn triangle_points(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_points(t);
        tri_area(a, b, c)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Gradients of the three barycentric (hat) functions on triangle `t`.
    pub fn basis_gradients(&self, t: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.triangle_points(t);
        let two_area = 2.0 * tri_area(a, b, c);
        [
            [(b[1] - c[1]) / two_area, (c[0] - b[0]) / two_area],
            [(c[1] - a[1]) / two_area, (a[0] - c[0]) / two_area],
            [(a[1] - b[1]) / two_area, (b[0] - a[0]) / two_area],
        ]
    }

    /// Indices of interior (free) vertices, and the inverse map vertex → free index.
    pub fn free_dofs(&self) -> (Vec<usize>, Vec<Option<usize>>) {
        let mut free = Vec::new();
        let mut map = vec![None; self.vertices.len()];
        for (i, &b) in self.boundary_flags.iter().enumerate() {
            if !b {
                map[i] = Some(free.len());
                free.push(i);
            }
        }
        (free, map)
    }

    /// Distance from `x` to the mesh boundary.
    pub fn boundary_distance(&self, x: Point) -> f64 {
        self.boundary_edges
            .iter()
            .map(|e| point_segment_distance(x, self.vertices[e[0]], self.vertices[e[1]]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Triangle containing `x` (within `tol` in barycentric coordinates) and
    /// the barycentric coordinates.
    pub fn locate(&self, x: Point, tol: f64) -> Option<(usize, [f64; 3])> {
        for t in 0..self.triangles.len() {
            let l = barycentric(self.triangle_points(t), x);
            if l.iter().all(|&v| v >= -tol) {
                return Some((t, l));
            }
        }
        None
    }

    /// Regular 4-split of every triangle. Parent vertices keep their indices;
    /// the returned vector maps each child triangle to its parent.
    pub fn refine(&self) -> (TriMesh, Vec<usize>) {
        let mut vertices = self.vertices.clone();
        let mut midpoint: HashMap<[usize; 2], usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, verts: &mut Vec<Point>| -> usize {
            *midpoint.entry(edge_key(a, b)).or_insert_with(|| {
                let (pa, pb) = (verts[a], verts[b]);
                verts.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
                verts.len() - 1
            })
        };
        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        let mut parent = Vec::with_capacity(4 * self.triangles.len());
        for (ti, &[a, b, c]) in self.triangles.iter().enumerate() {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            triangles.extend_from_slice(&[[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
            parent.extend_from_slice(&[ti; 4]);
        }
        let mesh = TriMesh::new(vertices, triangles).expect("refinement of a valid mesh is valid");
        (mesh, parent)
    }
}

fn edge_key(a: usize, b: usize) -> [usize; 2] {
    if a < b {
        [a, b]
    } else {
        [b, a]
    }
}

pub(crate) fn tri_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

pub(crate) fn barycentric(tri: [Point; 3], x: Point) -> [f64; 3] {
    let [a, b, c] = tri;
    let area = tri_area(a, b, c);
    let l0 = tri_area(x, b, c) / area;
    let l1 = tri_area(a, x, c) / area;
    [l0, l1, 1.0 - l0 - l1]
}

/// Triangulates the domain with `n` subdivisions per coarse edge.
///
/// Axis-aligned rectangles use an `(n+1)²` grid, vertex `i·(n+1) + j` at
/// `(x_i, y_j)`, each cell split along its lower-left to upper-right
/// diagonal. Other polygons are ear-clipped and every ear is uniformly
/// subdivided into `n²` triangles.
pub fn structured_mesh(domain: &Domain2D, n: usize) -> Result<TriMesh> {
    if n == 0 {
        return Err(Error::Contract("mesh resolution n must be ≥ 1".into()));
    }
    if let Some((lo, hi)) = domain.as_rectangle() {
        let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
        for i in 0..=n {
            for j in 0..=n {
                vertices.push([
                    lo[0] + (hi[0] - lo[0]) * i as f64 / n as f64,
                    lo[1] + (hi[1] - lo[1]) * j as f64 / n as f64,
                ]);
            }
        }
        let id = |i: usize, j: usize| i * (n + 1) + j;
        let mut triangles = Vec::with_capacity(2 * n * n);
        for i in 0..n {
            for j in 0..n {
                triangles.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                triangles.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
        return TriMesh::new(vertices, triangles);
    }
    let ears = ear_clip(domain.vertices())?;
    subdivide(domain.vertices(), &ears, n)
}

/// Disk mesh made of concentric rings: ring `k` carries `6k` vertices, the
/// boundary is the inscribed `6n`-gon.
pub fn disk_mesh(center: Point, radius: f64, n: usize) -> Result<TriMesh> {
    if n == 0 || !(radius > 0.0) {
        return Err(Error::Contract("disk mesh needs n ≥ 1 and radius > 0".into()));
    }
    let mut vertices = vec![center];
    let ring_start = |k: usize| if k == 0 { 0 } else { 1 + 3 * k * (k - 1) };
    for k in 1..=n {
        let rk = radius * k as f64 / n as f64;
        for j in 0..6 * k {
            let a = 2.0 * std::f64::consts::PI * j as f64 / (6 * k) as f64;
            vertices.push([center[0] + rk * a.cos(), center[1] + rk * a.sin()]);
        }
    }
    let vid = |k: usize, j: usize| -> usize {
        if k == 0 {
            0
        } else {
            ring_start(k) + j % (6 * k)
        }
    };
    let mut triangles = Vec::with_capacity(6 * n * n);
    for k in 0..n {
        // six sectors; in each, ring k has k segments and ring k+1 has k+1
        for s in 0..6 {
            for m in 0..=k {
                let outer = s * (k + 1) + m;
                let inner = s * k + m;
                triangles.push([vid(k, inner), vid(k + 1, outer), vid(k + 1, outer + 1)]);
                if m < k {
                    triangles.push([vid(k, inner), vid(k + 1, outer + 1), vid(k, inner + 1)]);
                }
            }
        }
    }
    TriMesh::new(vertices, triangles)
}

fn ear_clip(poly: &[Point]) -> Result<Vec<[usize; 3]>> {
    let mut idx: Vec<usize> = (0..poly.len()).collect();
    if signed_area(poly) < 0.0 {
        idx.reverse();
    }
    let mut ears = Vec::with_capacity(poly.len() - 2);
    let mut guard = 0;
    while idx.len() > 3 {
        let m = idx.len();
        let mut clipped = false;
        for k in 0..m {
            let (ia, ib, ic) = (idx[(k + m - 1) % m], idx[k], idx[(k + 1) % m]);
            let (a, b, c) = (poly[ia], poly[ib], poly[ic]);
            if tri_area(a, b, c) <= 0.0 {
                continue;
            }
            let blocked = idx.iter().any(|&j| {
                if j == ia || j == ib || j == ic {
                    return false;
                }
                let l = barycentric([a, b, c], poly[j]);
                l.iter().all(|&v| v >= -1e-14)
            });
            if !blocked {
                ears.push([ia, ib, ic]);
                idx.remove(k);
                clipped = true;
                break;
            }
        }
        guard += 1;
        if !clipped || guard > 4 * poly.len() {
            return Err(Error::Geometry("ear clipping failed; polygon is not simple".into()));
        }
    }
    ears.push([idx[0], idx[1], idx[2]]);
    Ok(ears)
}

/// Uniform n-subdivision of each coarse triangle; nodes on shared coarse
/// edges are shared.
fn subdivide(poly: &[Point], coarse: &[[usize; 3]], n: usize) -> Result<TriMesh> {
    let mut vertices: Vec<Point> = poly.to_vec();
    // interior nodes of coarse edges, keyed by (min, max, k) along min → max
    let mut edge_nodes: HashMap<(usize, usize, usize), usize> = HashMap::new();
    let mut triangles = Vec::new();
    for &[a, b, c] in coarse {
        let (pa, pb, pc) = (poly[a], poly[b], poly[c]);
        // lattice node (i, j): i steps toward b, j steps toward c
        let mut local: HashMap<(usize, usize), usize> = HashMap::new();
        for i in 0..=n {
            for j in 0..=(n - i) {
                let w = n - i - j;
                let id = if i == n {
                    b
                } else if j == n {
                    c
                } else if w == n {
                    a
                } else if j == 0 {
                    shared_edge_node(&mut edge_nodes, &mut vertices, poly, a, b, i, n)
                } else if i == 0 {
                    shared_edge_node(&mut edge_nodes, &mut vertices, poly, a, c, j, n)
                } else if w == 0 {
                    shared_edge_node(&mut edge_nodes, &mut vertices, poly, b, c, j, n)
                } else {
                    let (s, t) = (i as f64 / n as f64, j as f64 / n as f64);
                    vertices.push([
                        pa[0] + s * (pb[0] - pa[0]) + t * (pc[0] - pa[0]),
                        pa[1] + s * (pb[1] - pa[1]) + t * (pc[1] - pa[1]),
                    ]);
                    vertices.len() - 1
                };
                local.insert((i, j), id);
            }
        }
        for i in 0..n {
            for j in 0..(n - i) {
                triangles.push([local[&(i, j)], local[&(i + 1, j)], local[&(i, j + 1)]]);
                if i + j + 1 < n {
                    triangles.push([local[&(i + 1, j)], local[&(i + 1, j + 1)], local[&(i, j + 1)]]);
                }
            }
        }
    }
    TriMesh::new(vertices, triangles)
}

/// Node `k` of `n` along the coarse edge from `from` to `to`.
fn shared_edge_node(
    edge_nodes: &mut HashMap<(usize, usize, usize), usize>,
    vertices: &mut Vec<Point>,
    poly: &[Point],
    from: usize,
    to: usize,
    k: usize,
    n: usize,
) -> usize {
    let (lo, hi, kk) = if from < to { (from, to, k) } else { (to, from, n - k) };
    *edge_nodes.entry((lo, hi, kk)).or_insert_with(|| {
        let s = kk as f64 / n as f64;
        let (p, q) = (poly[lo], poly[hi]);
        vertices.push([p[0] + s * (q[0] - p[0]), p[1] + s * (q[1] - p[1])]);
        vertices.len() - 1
    })
}

/// A disk `B_R(y)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Ball {
    pub center: Point,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Point, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::Contract(format!("ball radius must be positive, got {radius}")));
        }
        Ok(Ball { center, radius })
    }

    pub fn contains(&self, x: Point) -> bool {
        dist(self.center, x) <= self.radius
    }

    pub fn measure(&self) -> f64 {
        std::f64::consts::PI * self.radius * self.radius
    }

    pub fn scaled(&self, factor: f64) -> Ball {
        Ball { center: self.center, radius: self.radius * factor }
    }

    /// Checks that the ball lies in the meshed domain up to `h_max`.
    pub fn check_inside(&self, mesh: &TriMesh) -> Result<()> {
        let escapes = || Error::BallEscapes { x: self.center[0], y: self.center[1], radius: self.radius };
        if mesh.locate(self.center, 1e-12).is_none() {
            return Err(escapes());
        }
        if mesh.boundary_distance(self.center) < self.radius - mesh.h_max() {
            return Err(escapes());
        }
        Ok(())
    }
}
