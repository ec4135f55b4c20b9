//! Shared oracle machinery for the integration tests.
//!
//! The oracles re-derive the discrete systems from scratch: their own shape
//! functions, their own quadrature constants, dense matrices, partial-pivot
//! LU, and undamped Newton. They share nothing with the production path but
//! the model catalog itself, so matching nodal values are evidence about
//! the solvers, not a tautology.

#![allow(dead_code)]

use perfcell_core::mesh::{PerforatedMesh, TriangulatedDomain};
use perfcell_core::models::{BoundaryFluxModel, FluxModel};
use perfcell_core::periodic::PeriodicMap;

/// Solve `a x = b` by Gaussian elimination with partial pivoting.
pub fn lu_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    assert!(a.len() == n && a.iter().all(|row| row.len() == n));
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        assert!(a[pivot][col].abs() > 1e-300, "singular oracle matrix");
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = b[row];
        for k in row + 1..n {
            s -= a[row][k] * x[k];
        }
        x[row] = s / a[row][row];
    }
    x
}

/// Affine P1 shape data on one triangle, derived from the interpolation
/// conditions `phi_i(p_j) = delta_ij` via an explicit 3x3 inverse.
pub struct OracleShapes {
    /// `grad[i]` is the (constant) gradient of shape function `i`.
    pub grad: [[f64; 2]; 3],
    pub area: f64,
}

pub fn oracle_shapes(p: [[f64; 2]; 3]) -> OracleShapes {
    // phi_i(x, y) = c_i + d_i x + e_i y; rows of the Vandermonde inverse.
    let det = p[0][0] * (p[1][1] - p[2][1]) + p[1][0] * (p[2][1] - p[0][1])
        + p[2][0] * (p[0][1] - p[1][1]);
    let inv = 1.0 / det;
    let grad = [
        [(p[1][1] - p[2][1]) * inv, (p[2][0] - p[1][0]) * inv],
        [(p[2][1] - p[0][1]) * inv, (p[0][0] - p[2][0]) * inv],
        [(p[0][1] - p[1][1]) * inv, (p[1][0] - p[0][0]) * inv],
    ];
    OracleShapes {
        grad,
        area: 0.5 * det,
    }
}

/// Midpoint quadrature on a triangle: degree-2 exact, weight `area/3`,
/// shape values at each point.
pub fn oracle_tri_points(p: [[f64; 2]; 3]) -> [([f64; 2], [f64; 3]); 3] {
    let mid = |a: [f64; 2], b: [f64; 2]| [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
    [
        (mid(p[0], p[1]), [0.5, 0.5, 0.0]),
        (mid(p[1], p[2]), [0.0, 0.5, 0.5]),
        (mid(p[2], p[0]), [0.5, 0.0, 0.5]),
    ]
}

/// Two-point Gauss rule on a segment: points `(1 ∓ 1/sqrt3)/2` along the
/// edge, each with weight `|b - a| / 2`, plus shape values.
pub fn oracle_edge_points(a: [f64; 2], b: [f64; 2]) -> [([f64; 2], f64, [f64; 2]); 2] {
    let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    let w = 0.5 * len;
    let make = |t: f64| {
        (
            [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])],
            w,
            [1.0 - t, t],
        )
    };
    let s = 0.5 / 3.0_f64.sqrt();
    [make(0.5 - s), make(0.5 + s)]
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Lumped vertex masses: one third of each incident triangle's area.
fn lumped(mesh: &TriangulatedDomain) -> Vec<f64> {
    let mut m = vec![0.0; mesh.n_vertices()];
    for t in &mesh.triangles {
        let sh = oracle_shapes([
            mesh.vertices[t[0]],
            mesh.vertices[t[1]],
            mesh.vertices[t[2]],
        ]);
        for &v in t {
            m[v] += sh.area / 3.0;
        }
    }
    m
}

/// Dense residual and tangent of the periodic cell problem at nodal `w`,
/// folded onto periodic dofs.
fn dense_cell_system(
    mesh: &TriangulatedDomain,
    map: &PeriodicMap,
    flux: &FluxModel,
    g: &BoundaryFluxModel,
    xi: [f64; 2],
    u: f64,
    w: &[f64],
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = map.n_dofs;
    let mut res = vec![0.0; n];
    let mut jac = vec![vec![0.0; n]; n];
    for t in &mesh.triangles {
        let p = [
            mesh.vertices[t[0]],
            mesh.vertices[t[1]],
            mesh.vertices[t[2]],
        ];
        let sh = oracle_shapes(p);
        let mut eta = xi;
        for k in 0..3 {
            eta[0] += w[t[k]] * sh.grad[k][0];
            eta[1] += w[t[k]] * sh.grad[k][1];
        }
        let wq = sh.area / 3.0;
        for (y, _) in oracle_tri_points(p) {
            let a = flux.eval(eta, y);
            let da = flux.jacobian(eta, y);
            for i in 0..3 {
                let di = map.dof_of_vertex[t[i]];
                res[di] += wq * (a[0] * sh.grad[i][0] + a[1] * sh.grad[i][1]);
                for j in 0..3 {
                    let dj = map.dof_of_vertex[t[j]];
                    let dir = [
                        da[0][0] * sh.grad[j][0] + da[0][1] * sh.grad[j][1],
                        da[1][0] * sh.grad[j][0] + da[1][1] * sh.grad[j][1],
                    ];
                    jac[di][dj] += wq * (dir[0] * sh.grad[i][0] + dir[1] * sh.grad[i][1]);
                }
            }
        }
    }
    for (va, vb) in mesh.hole_edges() {
        for (y, wq, phi) in oracle_edge_points(mesh.vertices[va], mesh.vertices[vb]) {
            let gv = g.eval(u, y);
            res[map.dof_of_vertex[va]] -= wq * gv * phi[0];
            res[map.dof_of_vertex[vb]] -= wq * gv * phi[1];
        }
    }
    (res, jac)
}

/// Dense-LU Newton solve of the periodic cell problem. The singular
/// pure-Neumann tangent is regularized with a lumped-mean Lagrange
/// multiplier; the returned nodal field has lumped mean zero, matching the
/// production normalization.
pub fn oracle_cell_solve(
    mesh: &TriangulatedDomain,
    map: &PeriodicMap,
    flux: &FluxModel,
    g: &BoundaryFluxModel,
    xi: [f64; 2],
    u: f64,
    tol: f64,
) -> Vec<f64> {
    let n = map.n_dofs;
    let mass = lumped(mesh);
    let mut folded_mass = vec![0.0; n];
    for (v, &m) in mass.iter().enumerate() {
        folded_mass[map.dof_of_vertex[v]] += m;
    }
    let mut w = vec![0.0; mesh.n_vertices()];
    for iter in 0..60 {
        let (res, jac) = dense_cell_system(mesh, map, flux, g, xi, u, &w);
        if l2(&res) < tol {
            break;
        }
        assert!(iter < 59, "oracle cell Newton did not converge");
        let mut aug = vec![vec![0.0; n + 1]; n + 1];
        let mut rhs = vec![0.0; n + 1];
        for i in 0..n {
            aug[i][..n].copy_from_slice(&jac[i]);
            aug[i][n] = folded_mass[i];
            aug[n][i] = folded_mass[i];
            rhs[i] = -res[i];
        }
        let delta = lu_solve(aug, rhs);
        for (v, wv) in w.iter_mut().enumerate() {
            *wv += delta[map.dof_of_vertex[v]];
        }
    }
    let total: f64 = mass.iter().zip(&w).map(|(m, v)| m * v).sum();
    let area: f64 = mass.iter().sum();
    let mean = total / area;
    for v in &mut w {
        *v -= mean;
    }
    w
}

/// Dense residual and tangent of the fine elliptic problem at nodal `u`.
fn dense_fine_system(
    fine: &PerforatedMesh,
    flux: &FluxModel,
    g: &BoundaryFluxModel,
    f: impl Fn([f64; 2]) -> f64,
    lambda: f64,
    u: &[f64],
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mesh = &fine.domain;
    let cells = mesh.cell_index.as_ref().expect("tiled mesh carries cell_index");
    let n = mesh.n_vertices();
    let mut res = vec![0.0; n];
    let mut jac = vec![vec![0.0; n]; n];
    for (ti, t) in mesh.triangles.iter().enumerate() {
        let p = [
            mesh.vertices[t[0]],
            mesh.vertices[t[1]],
            mesh.vertices[t[2]],
        ];
        let sh = oracle_shapes(p);
        let mut du = [0.0; 2];
        for k in 0..3 {
            du[0] += u[t[k]] * sh.grad[k][0];
            du[1] += u[t[k]] * sh.grad[k][1];
        }
        let wq = sh.area / 3.0;
        for (x, phi) in oracle_tri_points(p) {
            let y = fine.local_y(cells[ti], x);
            let a = flux.eval(du, y);
            let da = flux.jacobian(du, y);
            let uq = phi[0] * u[t[0]] + phi[1] * u[t[1]] + phi[2] * u[t[2]];
            let zero_order = lambda * uq - f(x);
            for i in 0..3 {
                res[t[i]] +=
                    wq * (a[0] * sh.grad[i][0] + a[1] * sh.grad[i][1] + zero_order * phi[i]);
                for j in 0..3 {
                    let dir = [
                        da[0][0] * sh.grad[j][0] + da[0][1] * sh.grad[j][1],
                        da[1][0] * sh.grad[j][0] + da[1][1] * sh.grad[j][1],
                    ];
                    jac[t[i]][t[j]] += wq
                        * (dir[0] * sh.grad[i][0]
                            + dir[1] * sh.grad[i][1]
                            + lambda * phi[j] * phi[i]);
                }
            }
        }
    }
    // Surface quadrature runs on the reference edge scaled by eps, exactly
    // as the weak form prescribes for hole boundaries of size eps.
    let loop_verts = &fine.cell_mesh.hole_loop;
    let eps = fine.eps;
    for e in &fine.hole_edges {
        let ya = fine.cell_mesh.vertices[loop_verts[e.src_edge]];
        let yb = fine.cell_mesh.vertices[loop_verts[(e.src_edge + 1) % loop_verts.len()]];
        for (y, wq, phi) in oracle_edge_points(ya, yb) {
            let uq = phi[0] * u[e.va] + phi[1] * u[e.vb];
            let gv = g.eval(uq, y);
            let dg = g.deriv_u(uq, y);
            let vs = [e.va, e.vb];
            for i in 0..2 {
                res[vs[i]] -= eps * wq * gv * phi[i];
                for j in 0..2 {
                    jac[vs[i]][vs[j]] -= eps * wq * dg * phi[j] * phi[i];
                }
            }
        }
    }
    (res, jac)
}

/// Dense-LU Newton solve of the fine elliptic problem (`lambda > 0`, so
/// the tangent needs no pinning).
pub fn oracle_fine_solve(
    fine: &PerforatedMesh,
    flux: &FluxModel,
    g: &BoundaryFluxModel,
    f: impl Fn([f64; 2]) -> f64,
    lambda: f64,
    tol: f64,
) -> Vec<f64> {
    assert!(lambda > 0.0);
    let mut u = vec![0.0; fine.domain.n_vertices()];
    for iter in 0..60 {
        let (res, jac) = dense_fine_system(fine, flux, g, &f, lambda, &u);
        if l2(&res) < tol {
            return u;
        }
        assert!(iter < 59, "oracle fine Newton did not converge");
        let delta = lu_solve(jac, res.iter().map(|v| -v).collect());
        for (uv, d) in u.iter_mut().zip(&delta) {
            *uv += d;
        }
    }
    u
}
