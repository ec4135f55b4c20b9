//! Small finite-element toolbox: P1 triangle utilities, quadrature rules,
//! a CSR sparse matrix with triplet assembly, and Jacobi-preconditioned
//! Krylov solvers (CG for symmetric systems, BiCGStab otherwise).
//!
//! Quadrature is fixed crate-wide: the 3-point edge-midpoint rule on
//! triangles (exact through degree 2) and the 2-point Gauss rule on edges
//! (exact through degree 3). Effective coefficients, mean-zero offsets and
//! error norms all use these same rules, so discrete compatibility
//! identities (e.g. surface mean zero) hold to rounding rather than to a
//! quadrature error.

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// P1 triangle utilities
// ---------------------------------------------------------------------------

pub fn tri_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
}

/// P1 shape-function gradients and the (signed) triangle area.
pub fn tri_grads(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> ([[f64; 2]; 3], f64) {
    let area = tri_area(a, b, c);
    let inv = 1.0 / (2.0 * area);
    let g = [
        [(b[1] - c[1]) * inv, (c[0] - b[0]) * inv],
        [(c[1] - a[1]) * inv, (a[0] - c[0]) * inv],
        [(a[1] - b[1]) * inv, (b[0] - a[0]) * inv],
    ];
    (g, area)
}

/// Edge-midpoint quadrature: 3 points, each with weight `area/3`, together
/// with the P1 shape values at each point.
pub fn tri_quad3(
    a: [f64; 2],
    b: [f64; 2],
    c: [f64; 2],
    area: f64,
) -> [([f64; 2], f64, [f64; 3]); 3] {
    let w = area / 3.0;
    [
        (
            [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])],
            w,
            [0.5, 0.5, 0.0],
        ),
        (
            [0.5 * (b[0] + c[0]), 0.5 * (b[1] + c[1])],
            w,
            [0.0, 0.5, 0.5],
        ),
        (
            [0.5 * (c[0] + a[0]), 0.5 * (c[1] + a[1])],
            w,
            [0.5, 0.0, 0.5],
        ),
    ]
}

/// 2-point Gauss quadrature on the segment `(a, b)`: points, weights and the
/// P1 shape values `(phi_a, phi_b)` at each point.
pub fn edge_quad2(a: [f64; 2], b: [f64; 2]) -> [([f64; 2], f64, [f64; 2]); 2] {
    let len = crate::geometry::dist(a, b);
    let w = 0.5 * len;
    let s = 0.5 / 3.0f64.sqrt();
    let t0 = 0.5 - s;
    let t1 = 0.5 + s;
    let at = |t: f64| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
    [(at(t0), w, [1.0 - t0, t0]), (at(t1), w, [1.0 - t1, t1])]
}

/// Barycentric coordinates of `p` in triangle `(a, b, c)`.
pub fn barycentric(p: [f64; 2], a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> [f64; 3] {
    let area = tri_area(a, b, c);
    let la = tri_area(p, b, c) / area;
    let lb = tri_area(a, p, c) / area;
    [la, lb, 1.0 - la - lb]
}

// ---------------------------------------------------------------------------
// Sparse matrix
// ---------------------------------------------------------------------------

/// Triplet accumulator for assembly; duplicate entries are summed in index
/// order when converting to CSR, so the result is deterministic.
pub struct Triplets {
    n: usize,
    entries: Vec<(u32, u32, f64)>,
}

impl Triplets {
    pub fn new(n: usize) -> Self {
        Triplets {
            n,
            entries: Vec::new(),
        }
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        if v != 0.0 {
            self.entries.push((i as u32, j as u32, v));
        }
    }

    pub fn to_csr(mut self) -> Csr {
        self.entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_counts = vec![0usize; self.n + 1];
        let mut col: Vec<usize> = Vec::with_capacity(self.entries.len());
        let mut val: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut prev: Option<(u32, u32)> = None;
        for &(i, j, v) in &self.entries {
            if prev == Some((i, j)) {
                *val.last_mut().unwrap() += v;
            } else {
                col.push(j as usize);
                val.push(v);
                row_counts[i as usize + 1] += 1;
                prev = Some((i, j));
            }
        }
        for r in 0..self.n {
            row_counts[r + 1] += row_counts[r];
        }
        Csr {
            n: self.n,
            row_ptr: row_counts,
            col,
            val,
        }
    }
}

/// Compressed sparse row matrix.
#[derive(Clone)]
pub struct Csr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col: Vec<usize>,
    pub val: Vec<f64>,
}

impl Csr {
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.val[k] * x[self.col[k]];
            }
            y[i] = acc;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.col[k] == i {
                    d[i] += self.val[k];
                }
            }
        }
        d
    }

    /// Pin `dof` to zero: its row and column are cleared and the diagonal set
    /// to the given value (keeps symmetry when the input is symmetric).
    pub fn pin_dof(&mut self, dof: usize, diag: f64) {
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if i == dof || self.col[k] == dof {
                    self.val[k] = 0.0;
                }
                if i == dof && self.col[k] == dof {
                    self.val[k] = diag;
                }
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Jacobi-preconditioned conjugate gradients. `tol` is relative to `||b||`
/// (with an absolute floor), returns the iterate and iteration count.
pub fn cg(a: &Csr, b: &[f64], x0: Option<&[f64]>, tol: f64, max_iter: usize) -> Result<(Vec<f64>, usize)> {
    let n = a.n;
    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    let inv_d: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d.abs() > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut r = vec![0.0; n];
    a.matvec(&x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let bnorm = norm(b).max(1e-300);
    let target = tol * bnorm;
    if norm(&r) <= target {
        return Ok((x, 0));
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_d).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        a.matvec(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if norm(&r) <= target {
            return Ok((x, it));
        }
        for i in 0..n {
            z[i] = r[i] * inv_d[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::LinearSolve {
        residual: norm(&r) / bnorm,
        iters: max_iter,
    })
}

/// Jacobi-preconditioned BiCGStab for nonsymmetric systems.
pub fn bicgstab(
    a: &Csr,
    b: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, usize)> {
    let n = a.n;
    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    let inv_d: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d.abs() > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut r = vec![0.0; n];
    a.matvec(&x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let bnorm = norm(b).max(1e-300);
    let target = tol * bnorm;
    if norm(&r) <= target {
        return Ok((x, 0));
    }
    let r0 = r.clone();
    let mut rho = 1.0;
    let mut alpha = 1.0;
    let mut omega = 1.0;
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut phat = vec![0.0; n];
    let mut shat = vec![0.0; n];
    let mut t = vec![0.0; n];
    for it in 1..=max_iter {
        let rho_new = dot(&r0, &r);
        if rho_new.abs() < 1e-300 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        for i in 0..n {
            phat[i] = p[i] * inv_d[i];
        }
        a.matvec(&phat, &mut v);
        alpha = rho / dot(&r0, &v);
        let mut s = r.clone();
        for i in 0..n {
            s[i] -= alpha * v[i];
        }
        if norm(&s) <= target {
            for i in 0..n {
                x[i] += alpha * phat[i];
            }
            return Ok((x, it));
        }
        for i in 0..n {
            shat[i] = s[i] * inv_d[i];
        }
        a.matvec(&shat, &mut t);
        omega = dot(&t, &s) / dot(&t, &t).max(1e-300);
        for i in 0..n {
            x[i] += alpha * phat[i] + omega * shat[i];
            r[i] = s[i] - omega * t[i];
        }
        if norm(&r) <= target {
            return Ok((x, it));
        }
        if omega.abs() < 1e-300 {
            break;
        }
    }
    let res = norm(&r) / bnorm;
    Err(Error::LinearSolve {
        residual: res,
        iters: max_iter,
    })
}

/// Quadrature integral of a P1 nodal field over the mesh.
pub fn field_integral(mesh: &crate::mesh::TriangulatedDomain, v: &[f64]) -> f64 {
    let mut acc = 0.0;
    for t in &mesh.triangles {
        let (a, b, c) = (mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]);
        let area = tri_area(a, b, c);
        for (_, wq, phi) in tri_quad3(a, b, c, area) {
            acc += wq * (phi[0] * v[t[0]] + phi[1] * v[t[1]] + phi[2] * v[t[2]]);
        }
    }
    acc
}

/// L2 norm of a P1 nodal field; the mid-edge rule is exact for its square.
pub fn field_l2_norm(mesh: &crate::mesh::TriangulatedDomain, v: &[f64]) -> f64 {
    let mut acc = 0.0;
    for t in &mesh.triangles {
        let (a, b, c) = (mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]);
        let area = tri_area(a, b, c);
        for (_, wq, phi) in tri_quad3(a, b, c, area) {
            let val = phi[0] * v[t[0]] + phi[1] * v[t[1]] + phi[2] * v[t[2]];
            acc += wq * val * val;
        }
    }
    acc.sqrt()
}

/// L2 distance between two P1 nodal fields on the same mesh.
pub fn field_l2_distance(mesh: &crate::mesh::TriangulatedDomain, v: &[f64], w: &[f64]) -> f64 {
    let diff: Vec<f64> = v.iter().zip(w).map(|(a, b)| a - b).collect();
    field_l2_norm(mesh, &diff)
}
