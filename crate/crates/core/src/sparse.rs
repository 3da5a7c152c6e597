//! Symmetric sparse matrices over mesh unknowns and their linear solvers.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::TriMesh;

/// Compressed-row matrix with sorted column indices. Both triangles of a
/// symmetric matrix are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Zero matrix with the given (deduplicated, sorted) adjacency pattern.
    pub fn from_pattern(mut rows: Vec<Vec<usize>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for row in rows.iter_mut() {
            row.sort_unstable();
            row.dedup();
            col_idx.extend_from_slice(row);
            row_ptr.push(col_idx.len());
        }
        let values = vec![0.0; col_idx.len()];
        CsrMatrix { n, row_ptr, col_idx, values }
    }

    /// Pattern coupling the free vertices that share a triangle, diagonal included.
    pub fn mesh_pattern(mesh: &TriMesh, free_map: &[Option<usize>]) -> Self {
        let n = free_map.iter().filter(|m| m.is_some()).count();
        let mut rows: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for tri in mesh.triangles() {
            for &a in tri {
                let Some(ia) = free_map[a] else { continue };
                for &b in tri {
                    if let Some(ib) = free_map[b] {
                        rows[ia].push(ib);
                    }
                }
            }
        }
        Self::from_pattern(rows)
    }

    pub fn from_dense(a: &[Vec<f64>]) -> Self {
        let rows: Vec<Vec<usize>> =
            a.iter().map(|r| r.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, _)| j).collect()).collect();
        let mut m = Self::from_pattern(rows);
        for (i, r) in a.iter().enumerate() {
            for (j, &v) in r.iter().enumerate() {
                if v != 0.0 {
                    m.add(i, j, v);
                }
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.col_idx[a..b], &self.values[a..b])
    }

    fn position(&self, i: usize, j: usize) -> Option<usize> {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.col_idx[a..b].binary_search(&j).ok().map(|k| a + k)
    }

    /// Adds `v` to entry `(i, j)`, which must be in the pattern.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.position(i, j).unwrap_or_else(|| panic!("entry ({i}, {j}) outside the sparsity pattern"));
        self.values[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |k| self.values[k])
    }

    pub fn clear(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn scale(&mut self, c: f64) {
        self.values.iter_mut().for_each(|v| *v *= c);
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let (cols, vals) = self.row(i);
                cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum()
            })
            .collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// `max |a_ij − a_ji|`.
    pub fn symmetry_defect(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, row) in d.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                row[j] = v;
            }
        }
        d
    }

    /// `xᵀ A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        dot(x, &self.mul_vec(y))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Reverse Cuthill–McKee ordering; returns `perm` with `perm[new] = old`.
pub fn rcm_ordering(a: &CsrMatrix) -> Vec<usize> {
    let n = a.dim();
    let degree: Vec<usize> = (0..n).map(|i| a.row(i).0.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let start = (0..n).filter(|&i| !visited[i]).min_by_key(|&i| degree[i]).expect("unvisited vertex");
        let start = pseudo_peripheral(a, start, &degree);
        visited[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = a.row(v).0.iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_by_key(|&w| (degree[w], w));
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

fn pseudo_peripheral(a: &CsrMatrix, start: usize, degree: &[usize]) -> usize {
    let mut v = start;
    let mut ecc = 0;
    for _ in 0..8 {
        let levels = bfs_levels(a, v);
        let max_level = *levels.iter().flatten().max().unwrap_or(&0);
        if max_level <= ecc && ecc > 0 {
            break;
        }
        ecc = max_level;
        v = (0..levels.len())
            .filter(|&i| levels[i] == Some(max_level))
            .min_by_key(|&i| (degree[i], i))
            .unwrap_or(v);
    }
    v
}

fn bfs_levels(a: &CsrMatrix, start: usize) -> Vec<Option<usize>> {
    let mut level = vec![None; a.dim()];
    level[start] = Some(0);
    let mut queue = VecDeque::from([start]);
    while let Some(v) = queue.pop_front() {
        let l = level[v].unwrap();
        for &w in a.row(v).0 {
            if level[w].is_none() {
                level[w] = Some(l + 1);
                queue.push_back(w);
            }
        }
    }
    level
}

/// Envelope (variable-band) Cholesky factor `P A Pᵀ = L Lᵀ` under an RCM
/// permutation.
#[derive(Debug, Clone)]
pub struct EnvelopeCholesky {
    perm: Vec<usize>,
    first: Vec<usize>,
    start: Vec<usize>,
    data: Vec<f64>,
}

impl EnvelopeCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.dim();
        let perm = rcm_ordering(a);
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first = vec![0; n];
        for (i, f) in first.iter_mut().enumerate() {
            let (cols, _) = a.row(perm[i]);
            *f = cols.iter().map(|&c| inv[c]).filter(|&c| c <= i).min().unwrap_or(i);
        }
        let mut start = Vec::with_capacity(n + 1);
        start.push(0);
        for i in 0..n {
            start.push(start[i] + i - first[i] + 1);
        }
        let mut data = vec![0.0; start[n]];
        for i in 0..n {
            let (cols, vals) = a.row(perm[i]);
            for (&c, &v) in cols.iter().zip(vals) {
                let j = inv[c];
                if j <= i {
                    data[start[i] + j - first[i]] = v;
                }
            }
        }
        let scale = a.max_abs().max(f64::MIN_POSITIVE);
        for i in 0..n {
            let fi = first[i];
            for j in fi..=i {
                let fj = first[j];
                let k0 = fi.max(fj);
                let mut s = data[start[i] + j - fi];
                let ri = &data[start[i] + k0 - fi..start[i] + j - fi];
                let rj = &data[start[j] + k0 - fj..start[j] + j - fj];
                s -= ri.iter().zip(rj).map(|(x, y)| x * y).sum::<f64>();
                if j < i {
                    data[start[i] + j - fi] = s / data[start[j + 1] - 1];
                } else {
                    if !(s > 1e-14 * scale) {
                        return Err(Error::LinearSolver(format!("non-positive pivot {s:e} at row {i}")));
                    }
                    data[start[i] + i - fi] = s.sqrt();
                }
            }
        }
        Ok(EnvelopeCholesky { perm, first, start, data })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    /// Stored entries of the factor.
    pub fn envelope_size(&self) -> usize {
        self.data.len()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut y: Vec<f64> = self.perm.iter().map(|&o| b[o]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.data[self.start[i]..self.start[i + 1]];
            let s: f64 = row[..i - fi].iter().zip(&y[fi..i]).map(|(l, v)| l * v).sum();
            y[i] = (y[i] - s) / row[i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = &self.data[self.start[i]..self.start[i + 1]];
            y[i] /= row[i - fi];
            let yi = y[i];
            for (k, l) in row[..i - fi].iter().enumerate() {
                y[fi + k] -= l * yi;
            }
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}

/// Jacobi-preconditioned conjugate gradients. Returns the solution and the
/// iteration count; fails if `‖r‖ ≤ rel_tol ‖b‖` is not reached.
pub fn pcg(a: &CsrMatrix, b: &[f64], rel_tol: f64, max_iter: usize) -> Result<(Vec<f64>, usize)> {
    let n = a.dim();
    let diag = a.diagonal();
    if diag.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::LinearSolver("Jacobi preconditioner needs a positive diagonal".into()));
    }
    let bnorm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, 0));
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 1..=max_iter {
        let ap = a.mul_vec(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::LinearSolver("matrix is not positive definite".into()));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if dot(&r, &r).sqrt() <= rel_tol * bnorm {
            return Ok((x, it));
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::LinearSolver(format!("CG did not reach {rel_tol:e} in {max_iter} iterations")))
}

/// Linear solver used inside Newton iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinearSolverKind {
    #[default]
    Direct,
    Cg,
}

/// Solves the SPD system `A x = b`; the direct path falls back to CG when the
/// factorization fails.
pub fn solve_spd(a: &CsrMatrix, b: &[f64], kind: LinearSolverKind) -> Result<Vec<f64>> {
    let cg = || pcg(a, b, 1e-13, 20 * a.dim().max(10)).map(|(x, _)| x);
    match kind {
        LinearSolverKind::Direct => match EnvelopeCholesky::factor(a) {
            Ok(f) => Ok(f.solve(b)),
            Err(e) => {
                log::debug!("direct factorization failed ({e}); falling back to CG");
                cg()
            }
        },
        LinearSolverKind::Cg => cg(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Domain2D;
    use crate::mesh::structured_mesh;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn laplacian_1d(n: usize) -> CsrMatrix {
        let mut d = vec![vec![0.0_f64; n]; n];
        for i in 0..n {
            d[i][i] = 2.0;
            if i > 0 {
                d[i][i - 1] = -1.0;
                d[i - 1][i] = -1.0;
            }
        }
        CsrMatrix::from_dense(&d)
    }

    fn random_spd(n: usize, seed: u64) -> CsrMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut d = vec![vec![0.0_f64; n]; n];
        for i in 0..n {
            for j in 0..i {
                if rng.gen::<f64>() < 0.2 {
                    let v = rng.gen_range(-1.0..1.0);
                    d[i][j] = v;
                    d[j][i] = v;
                }
            }
        }
        for i in 0..n {
            d[i][i] = 1.0 + d[i].iter().map(|v| v.abs()).sum::<f64>();
        }
        CsrMatrix::from_dense(&d)
    }

    #[test]
    fn rcm_is_a_permutation() {
        let m = structured_mesh(&Domain2D::unit_square(), 6).unwrap();
        let (_, map) = m.free_dofs();
        let a = CsrMatrix::mesh_pattern(&m, &map);
        let mut p = rcm_ordering(&a);
        p.sort_unstable();
        assert_eq!(p, (0..a.dim()).collect::<Vec<_>>());
    }

    #[test]
    fn cholesky_solves_random_spd() {
        for seed in 0..5 {
            let a = random_spd(40, seed);
            let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
            let b = a.mul_vec(&x);
            let y = EnvelopeCholesky::factor(&a).unwrap().solve(&b);
            for (u, v) in x.iter().zip(&y) {
                assert!((u - v).abs() < 1e-12);
            }
            let (z, _) = pcg(&a, &b, 1e-14, 1000).unwrap();
            for (u, v) in x.iter().zip(&z) {
                assert!((u - v).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn cholesky_1d_laplacian() {
        let a = laplacian_1d(50);
        let b = vec![1.0; 50];
        let x = EnvelopeCholesky::factor(&a).unwrap().solve(&b);
        // discrete solution of −u'' = 1 with h = 1: x_i = (i+1)(50−i)/2
        for (i, v) in x.iter().enumerate() {
            let exact = (i as f64 + 1.0) * (50.0 - i as f64) / 2.0;
            assert!((v - exact).abs() < 1e-9 * exact);
        }
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let a = CsrMatrix::from_dense(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert!(EnvelopeCholesky::factor(&a).is_err());
    }

    #[test]
    fn fallback_to_cg_is_transparent() {
        let a = random_spd(30, 9);
        let b: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let x = solve_spd(&a, &b, LinearSolverKind::Direct).unwrap();
        let y = solve_spd(&a, &b, LinearSolverKind::Cg).unwrap();
        for (u, v) in x.iter().zip(&y) {
            assert!((u - v).abs() < 1e-9);
        }
    }
}
