//! Periodic cell problems on the perforated unit cell and the effective
//! coefficient maps built from their solutions.
//!
//! The corrector w = w(.; xi, u) is the periodic, mean-zero P1 solution of
//!
//! ```text
//!   integral_{Y*} a(xi + grad w, y) . grad v dy
//!     = integral_{S} g(u, y) v dsigma      for all periodic v,
//! ```
//!
//! where Y* is the solid part of the cell and S the hole boundary. From it
//! the effective maps are plain quadratures: the volume average of the flux
//! for `effective_a`, surface moments for `effective_b` and `effective_g`.
//! For a linear flux with gamma = identity the corrector splits into three
//! u- and xi-independent solves whose tensors give closed affine formulas.

use crate::error::{ConvergenceRecord, Error, Result};
use crate::fem::{cg, bicgstab, edge_quad2, tri_grads, tri_quad3, Csr, Triplets};
use crate::fields::{Gamma, MatrixField};
use crate::mesh::TriangulatedDomain;
use crate::models::{BoundaryFluxModel, FluxModel};
use crate::periodic::PeriodicMap;

/// Default Euclidean residual tolerance for cell solves.
pub const CELL_TOL: f64 = 1e-10;

const MAX_NEWTON: usize = 40;
const MAX_PICARD: usize = 300;
const LIN_TOL: f64 = 1e-12;

/// Converged corrector at one parameter point.
#[derive(Debug, Clone)]
pub struct CellSolution {
    pub xi: [f64; 2],
    pub u: f64,
    /// Nodal corrector on the cell mesh, periodic and mesh-mean zero.
    pub w: Vec<f64>,
    pub residual_norm: f64,
    pub newton_iters: usize,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn grad_on_tri(mesh: &TriangulatedDomain, t: [usize; 3], w: &[f64]) -> ([[f64; 2]; 3], f64, [f64; 2]) {
    let (grads, area) = tri_grads(
        mesh.vertices[t[0]],
        mesh.vertices[t[1]],
        mesh.vertices[t[2]],
    );
    let mut gw = [0.0; 2];
    for k in 0..3 {
        gw[0] += w[t[k]] * grads[k][0];
        gw[1] += w[t[k]] * grads[k][1];
    }
    (grads, area, gw)
}

/// Folded residual of the cell problem at nodal state `w`: entry `j` is
/// the weak form tested with the hat function of periodic dof `j`.
pub fn cell_residual(
    mesh: &TriangulatedDomain,
    map: &PeriodicMap,
    flux: &FluxModel,
    g: &BoundaryFluxModel,
    xi: [f64; 2],
    u: f64,
    w: &[f64],
) -> Vec<f64> {
    let mut r = vec![0.0; map.n_dofs];
    for t in &mesh.triangles {
        let (grads, area, gw) = grad_on_tri(mesh, *t, w);
        let eta = [xi[0] + gw[0], xi[1] + gw[1]];
        for (y, wq, _) in tri_quad3(
            mesh.vertices[t[0]],
            mesh.vertices[t[1]],
            mesh.vertices[t[2]],
            area,
        ) {
            let a = flux.eval(eta, y);
            for k in 0..3 {
                r[map.dof_of_vertex[t[k]]] += wq * (a[0] * grads[k][0] + a[1] * grads[k][1]);
            }
        }
    }
    if !g.is_zero() {
        for (va, vb) in mesh.hole_edges() {
            for (y, wq, phi) in edge_quad2(mesh.vertices[va], mesh.vertices[vb]) {
                let gv = g.eval(u, y);
                r[map.dof_of_vertex[va]] -= wq * gv * phi[0];
                r[map.dof_of_vertex[vb]] -= wq * gv * phi[1];
            }
        }
    }
    r
}

/// Folded tangent matrix at nodal state `w` (independent of `w` for linear
/// fluxes).
fn cell_jacobian(
    mesh: &TriangulatedDomain,
    map: &PeriodicMap,
    flux: &FluxModel,
    xi: [f64; 2],
    w: &[f64],
) -> Csr {
    let mut trip = Triplets::new(map.n_dofs);
    for t in &mesh.triangles {
        let (grads, area, gw) = grad_on_tri(mesh, *t, w);
        let eta = [xi[0] + gw[0], xi[1] + gw[1]];
        for (y, wq, _) in tri_quad3(
            mesh.vertices[t[0]],
            mesh.vertices[t[1]],
            mesh.vertices[t[2]],
            area,
        ) {
            let da = flux.jacobian(eta, y);
            for i in 0..3 {
                for j in 0..3 {
                    let dv = [
                        da[0][0] * grads[j][0] + da[0][1] * grads[j][1],
                        da[1][0] * grads[j][0] + da[1][1] * grads[j][1],
                    ];
                    trip.add(
                        map.dof_of_vertex[t[i]],
                        map.dof_of_vertex[t[j]],
                        wq * (dv[0] * grads[i][0] + dv[1] * grads[i][1]),
                    );
                }
            }
        }
    }
    trip.to_csr()
}

/// Folded load vector of a surface density: `F_i = integral_S f(y) phi_i`.
fn surface_load(
    mesh: &TriangulatedDomain,
    map: &PeriodicMap,
    f: impl Fn([f64; 2]) -> f64,
) -> Vec<f64> {
    let mut rhs = vec![0.0; map.n_dofs];
    for (va, vb) in mesh.hole_edges() {
        for (y, wq, phi) in edge_quad2(mesh.vertices[va], mesh.vertices[vb]) {
            let fv = f(y);
            rhs[map.dof_of_vertex[va]] += wq * fv * phi[0];
            rhs[map.dof_of_vertex[vb]] += wq * fv * phi[1];
        }
    }
    rhs
}

/// Lumped P1 mass per vertex (row sums of the mass matrix).
pub fn lumped_mass(mesh: &TriangulatedDomain) -> Vec<f64> {
    let mut m = vec![0.0; mesh.n_vertices()];
    for t in &mesh.triangles {
        let area = crate::fem::tri_area(
            mesh.vertices[t[0]],
            mesh.vertices[t[1]],
            mesh.vertices[t[2]],
        );
        for &v in t {
            m[v] += area / 3.0;
        }
    }
    m
}

/// Mesh-weighted mean of a nodal field over the solid part.
pub fn mesh_mean(mesh: &TriangulatedDomain, w: &[f64]) -> f64 {
    let mass = lumped_mass(mesh);
    let total: f64 = mass.iter().zip(w).map(|(m, v)| m * v).sum();
    total / mesh.area()
}

/// L2 norm of the P1 gradient over the solid part.
pub fn grad_l2_norm(mesh: &TriangulatedDomain, w: &[f64]) -> f64 {
    let mut acc = 0.0;
    for t in &mesh.triangles {
        let (_, area, gw) = grad_on_tri(mesh, *t, w);
        acc += area * (gw[0] * gw[0] + gw[1] * gw[1]);
    }
    acc.sqrt()
}

fn solver_is_symmetric(flux: &FluxModel) -> bool {
    match flux.matrix_field() {
        Some(MatrixField::Nonsym) => false,
        _ => true,
    }
}

/// Solve the pinned folded linear system `m x = rhs`.
fn solve_pinned(m: &mut Csr, rhs: &mut [f64], symmetric: bool, tol: f64) -> Result<Vec<f64>> {
    m.pin_dof(0, 1.0);
    rhs[0] = 0.0;
    let max_iter = 100 + 50 * rhs.len();
    let (x, _) = if symmetric {
        cg(m, rhs, None, tol, max_iter)?
    } else {
        bicgstab(m, rhs, None, tol, max_iter)?
    };
    Ok(x)
}

/// Solve the cell problem at `(xi, u)`.
///
/// Damped Newton with the analytic tangent; on stagnation (one full
/// backtracking line search without residual decrease) the nonlinear family
/// falls back to a frozen-coefficient Picard iteration before giving up.
/// The discrete compatibility condition is checked first: the surface data
/// must have (scaled) mean below 1e-10 or the pure-Neumann system has no
/// solution.
pub fn solve_cell(
    mesh: &TriangulatedDomain,
    map: &PeriodicMap,
    flux: &FluxModel,
    g: &BoundaryFluxModel,
    xi: [f64; 2],
    u: f64,
    tol: f64,
) -> Result<CellSolution> {
    solve_cell_from(mesh, map, flux, g, xi, u, tol, None)
}

/// As `solve_cell` with an optional nodal warm start.
fn solve_cell_from(
    mesh: &TriangulatedDomain,
    map: &PeriodicMap,
    flux: &FluxModel,
    g: &BoundaryFluxModel,
    xi: [f64; 2],
    u: f64,
    tol: f64,
    start: Option<&[f64]>,
) -> Result<CellSolution> {
    if tol <= 0.0 {
        return Err(Error::config(format!("cell tolerance must be positive, got {tol}")));
    }
    if !g.is_zero() {
        // Quadrate over this mesh's own edges rather than the model's bound
        // cache so a model bound elsewhere (or not at all) is still checked
        // against exactly the data that enters the residual. The tolerance
        // scales with |gamma(u)| because the u-part of g is mean-zeroed in
        // floating point relative to its own magnitude.
        let mut mean = 0.0;
        for (va, vb) in mesh.hole_edges() {
            for (y, wq, _) in edge_quad2(mesh.vertices[va], mesh.vertices[vb]) {
                mean += wq * g.eval(u, y);
            }
        }
        if mean.abs() > 1e-10 * (1.0 + g.gamma.eval(u).abs()) {
            return Err(Error::Incompatible(mean));
        }
    }

    let symmetric = solver_is_symmetric(flux);
    let mut w = match start {
        Some(w0) => w0.to_vec(),
        None => vec![0.0; mesh.n_vertices()],
    };
    let mut r = cell_residual(mesh, map, flux, g, xi, u, &w);
    let mut rn = norm(&r);
    let mut log: Vec<ConvergenceRecord> = Vec::new();
    let mut iters = 0;

    while rn >= tol && iters < MAX_NEWTON {
        let mut jac = cell_jacobian(mesh, map, flux, xi, &w);
        let mut rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        let delta = map.unfold(&solve_pinned(&mut jac, &mut rhs, symmetric, LIN_TOL)?);

        let mut s = 1.0;
        let mut accepted = false;
        for _ in 0..=10 {
            let w_try: Vec<f64> = w.iter().zip(&delta).map(|(a, d)| a + s * d).collect();
            let r_try = cell_residual(mesh, map, flux, g, xi, u, &w_try);
            let rn_try = norm(&r_try);
            if rn_try < rn * (1.0 - 1e-4 * s) || rn_try < tol {
                w = w_try;
                r = r_try;
                rn = rn_try;
                accepted = true;
                break;
            }
            s *= 0.5;
        }
        iters += 1;
        log.push((iters, rn, if accepted { s } else { 0.0 }));
        if !accepted {
            break;
        }
    }

    if rn >= tol && !flux.is_linear() {
        // Frozen-coefficient fallback: the nonlinear family factors as
        // a(eta, y) = m(eta, y) eta with scalar m, so each sweep is one SPD
        // solve of integral m(eta_k) (xi + grad w_{k+1}) . grad v = surface.
        let surface = surface_load(mesh, map, |y| g.eval(u, y));
        let mut prev = rn;
        let mut flat = 0;
        while rn >= tol && iters < MAX_NEWTON + MAX_PICARD {
            let (mut m, mut rhs) = picard_system(mesh, map, flux, xi, &w, &surface);
            w = map.unfold(&solve_pinned(&mut m, &mut rhs, true, LIN_TOL)?);
            r = cell_residual(mesh, map, flux, g, xi, u, &w);
            rn = norm(&r);
            iters += 1;
            log.push((iters, rn, 1.0));
            if rn > 0.97 * prev {
                flat += 1;
                if flat >= 5 {
                    break;
                }
            } else {
                flat = 0;
            }
            prev = rn;
        }
    }

    if rn >= tol {
        return Err(Error::NonConvergence {
            residual: rn,
            iters,
            log,
        });
    }

    let mean = mesh_mean(mesh, &w);
    for v in &mut w {
        *v -= mean;
    }
    Ok(CellSolution {
        xi,
        u,
        w,
        residual_norm: rn,
        newton_iters: iters,
    })
}

/// Frozen-coefficient matrix and right side for one Picard sweep.
fn picard_system(
    mesh: &TriangulatedDomain,
    map: &PeriodicMap,
    flux: &FluxModel,
    xi: [f64; 2],
    w: &[f64],
    surface: &[f64],
) -> (Csr, Vec<f64>) {
    let mut trip = Triplets::new(map.n_dofs);
    let mut rhs = surface.to_vec();
    for t in &mesh.triangles {
        let (grads, area, gw) = grad_on_tri(mesh, *t, w);
        let eta = [xi[0] + gw[0], xi[1] + gw[1]];
        for (y, wq, _) in tri_quad3(
            mesh.vertices[t[0]],
            mesh.vertices[t[1]],
            mesh.vertices[t[2]],
            area,
        ) {
            // a(eta, y) = m(eta, y) eta with scalar m, recovered from the
            // model as (a . eta) / |eta|^2 so the factorization stays exact.
            let a_eta = flux.eval(eta, y);
            let e2 = eta[0] * eta[0] + eta[1] * eta[1];
            let scale = if e2 > 0.0 {
                (a_eta[0] * eta[0] + a_eta[1] * eta[1]) / e2
            } else {
                flux.eval([1.0, 0.0], y)[0]
            };
            for i in 0..3 {
                let gi = map.dof_of_vertex[t[i]];
                rhs[gi] -= wq * scale * (xi[0] * grads[i][0] + xi[1] * grads[i][1]);
                for j in 0..3 {
                    trip.add(
                        gi,
                        map.dof_of_vertex[t[j]],
                        wq * scale * (grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1]),
                    );
                }
            }
        }
    }
    (trip.to_csr(), rhs)
}

/// Volume average of the flux: `a*(xi, u) = integral_{Y*} a(xi + grad w, y) dy`.
pub fn effective_a(mesh: &TriangulatedDomain, flux: &FluxModel, sol: &CellSolution) -> [f64; 2] {
    let mut acc = [0.0; 2];
    for t in &mesh.triangles {
        let (_, area, gw) = grad_on_tri(mesh, *t, &sol.w);
        let eta = [sol.xi[0] + gw[0], sol.xi[1] + gw[1]];
        for (y, wq, _) in tri_quad3(
            mesh.vertices[t[0]],
            mesh.vertices[t[1]],
            mesh.vertices[t[2]],
            area,
        ) {
            let a = flux.eval(eta, y);
            acc[0] += wq * a[0];
            acc[1] += wq * a[1];
        }
    }
    acc
}

/// Surface moment `b*(xi, u) = integral_S g'_u(u, y) w dsigma`.
///
/// Invariant under constant shifts of w because the u-derivative of the
/// mean-zero property makes `integral_S g'_u dsigma = 0`.
pub fn effective_b(mesh: &TriangulatedDomain, g: &BoundaryFluxModel, sol: &CellSolution) -> f64 {
    if g.is_zero() || !g.depends_on_u() {
        return 0.0;
    }
    let mut acc = 0.0;
    for (va, vb) in mesh.hole_edges() {
        for (y, wq, phi) in edge_quad2(mesh.vertices[va], mesh.vertices[vb]) {
            let wv = phi[0] * sol.w[va] + phi[1] * sol.w[vb];
            acc += wq * g.deriv_u(sol.u, y) * wv;
        }
    }
    acc
}

/// Surface moment `g*(u) = integral_S g(u, y) y dsigma`, one component per
/// coordinate. Mean-zero g makes the value translation invariant in y.
pub fn effective_g(mesh: &TriangulatedDomain, g: &BoundaryFluxModel, u: f64) -> [f64; 2] {
    if g.is_zero() {
        return [0.0; 2];
    }
    let mut acc = [0.0; 2];
    for (va, vb) in mesh.hole_edges() {
        for (y, wq, _) in edge_quad2(mesh.vertices[va], mesh.vertices[vb]) {
            let gv = g.eval(u, y);
            acc[0] += wq * gv * y[0];
            acc[1] += wq * gv * y[1];
        }
    }
    acc
}

/// First moment of the surface flux derivative, `int_S g_u(u, y) y dsigma`.
///
/// This is the state derivative of [`effective_g`] and the volume density
/// paired with `grad u` in the boundary identity check.
pub fn effective_g_du(mesh: &TriangulatedDomain, g: &BoundaryFluxModel, u: f64) -> [f64; 2] {
    if g.is_zero() || !g.depends_on_u() {
        return [0.0; 2];
    }
    let mut acc = [0.0; 2];
    for (va, vb) in mesh.hole_edges() {
        for (y, wq, _) in edge_quad2(mesh.vertices[va], mesh.vertices[vb]) {
            let gv = g.deriv_u(u, y);
            acc[0] += wq * gv * y[0];
            acc[1] += wq * gv * y[1];
        }
    }
    acc
}

// ---------------------------------------------------------------------------
// Linear split
// ---------------------------------------------------------------------------

/// Homogenized tensors of the linear split.
///
/// With a linear flux `A(y)` and `g(u, y) = alpha(y) + u beta(y)` the
/// corrector is `w = w1 . xi + u w2 + w3`, and the effective maps collapse
/// to the affine formulas in `a_star` / `b_star` below.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearTensors {
    /// `A_hom e_k = integral A (e_k + grad w1_k)`, row-major.
    pub a_hom: [[f64; 2]; 2],
    /// `B_hom_k = integral A grad w2 . (e_k + grad w1_k)`; zero when A is
    /// symmetric, by the w1 weak form tested with w2.
    pub b_hom: [f64; 2],
    /// `C_hom = integral A grad w2 . grad w2`, nonnegative for SPD A.
    pub c_hom: f64,
    /// `D_hom = integral A grad w2 . grad w3`.
    pub d_hom: f64,
    /// `E2 = integral A grad w2`, `E3 = integral A grad w3`.
    pub e2: [f64; 2],
    pub e3: [f64; 2],
    /// Solid-part volume of the cell.
    pub y_star: f64,
}

impl LinearTensors {
    /// Tensors of the unperforated identity medium: `a* = xi`, `b* = 0`.
    pub fn identity() -> Self {
        LinearTensors {
            a_hom: [[1.0, 0.0], [0.0, 1.0]],
            b_hom: [0.0; 2],
            c_hom: 0.0,
            d_hom: 0.0,
            e2: [0.0; 2],
            e3: [0.0; 2],
            y_star: 1.0,
        }
    }

    pub fn a_star(&self, xi: [f64; 2], u: f64) -> [f64; 2] {
        [
            self.a_hom[0][0] * xi[0] + self.a_hom[0][1] * xi[1] + u * self.e2[0] + self.e3[0],
            self.a_hom[1][0] * xi[0] + self.a_hom[1][1] * xi[1] + u * self.e2[1] + self.e3[1],
        ]
    }

    /// `b*(xi, u) = (B_hom - E2) . xi + u C_hom + D_hom`.
    ///
    /// The xi coefficient subtracts E2 because the surface moment expands
    /// through the w2 weak form as `integral A grad w2 . grad(w1 . xi)`,
    /// without the bare xi that the B_hom definition carries.
    pub fn b_star(&self, xi: [f64; 2], u: f64) -> f64 {
        (self.b_hom[0] - self.e2[0]) * xi[0] + (self.b_hom[1] - self.e2[1]) * xi[1]
            + u * self.c_hom
            + self.d_hom
    }
}

/// The three elementary correctors of the linear split plus their tensors.
#[derive(Debug, Clone)]
pub struct LinearSplit {
    /// Correctors for xi = e1, e2 with g = 0.
    pub w1: [Vec<f64>; 2],
    /// Corrector forced by the mean-zeroed beta surface density.
    pub w2: Vec<f64>,
    /// Corrector forced by the mean-zeroed alpha surface density.
    pub w3: Vec<f64>,
    pub tensors: LinearTensors,
}

impl LinearSplit {
    /// Superpose the elementary correctors at `(xi, u)`.
    pub fn corrector(&self, xi: [f64; 2], u: f64) -> Vec<f64> {
        let mut w = vec![0.0; self.w2.len()];
        for (i, v) in w.iter_mut().enumerate() {
            *v = xi[0] * self.w1[0][i] + xi[1] * self.w1[1][i] + u * self.w2[i] + self.w3[i];
        }
        w
    }
}

/// Solve the three elementary cell problems of the linear case and quadrate
/// the homogenized tensors. Requires a linear flux and gamma = identity
/// (otherwise the u-dependence does not factor out of the surface data).
pub fn solve_linear_split(
    mesh: &TriangulatedDomain,
    map: &PeriodicMap,
    flux: &FluxModel,
    g: &BoundaryFluxModel,
    tol: f64,
) -> Result<LinearSplit> {
    if !flux.is_linear() {
        return Err(Error::config(
            "linear split requires a linear flux".to_string(),
        ));
    }
    if !g.is_zero() && g.gamma != Gamma::Identity {
        return Err(Error::config(
            "linear split requires gamma = identity".to_string(),
        ));
    }
    let symmetric = solver_is_symmetric(flux);
    let n = mesh.n_vertices();
    let zeros = vec![0.0; n];
    let jac = cell_jacobian(mesh, map, flux, [0.0; 2], &zeros);

    let lin_tol = tol.min(LIN_TOL);
    let solve_rhs = |rhs: &mut Vec<f64>| -> Result<Vec<f64>> {
        let mut m = jac.clone();
        let mut w = map.unfold(&solve_pinned(&mut m, rhs, symmetric, lin_tol)?);
        let mean = mesh_mean(mesh, &w);
        for v in &mut w {
            *v -= mean;
        }
        Ok(w)
    };

    // w1_k: integral A (e_k + grad w) . grad v = 0.
    let mut w1: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for k in 0..2 {
        let e_k = [if k == 0 { 1.0 } else { 0.0 }, if k == 1 { 1.0 } else { 0.0 }];
        let mut rhs = vec![0.0; map.n_dofs];
        for t in &mesh.triangles {
            let (grads, area, _) = grad_on_tri(mesh, *t, &zeros);
            for (y, wq, _) in tri_quad3(
                mesh.vertices[t[0]],
                mesh.vertices[t[1]],
                mesh.vertices[t[2]],
                area,
            ) {
                let a = flux.eval(e_k, y);
                for i in 0..3 {
                    rhs[map.dof_of_vertex[t[i]]] -=
                        wq * (a[0] * grads[i][0] + a[1] * grads[i][1]);
                }
            }
        }
        w1[k] = solve_rhs(&mut rhs)?;
    }

    // With gamma = identity: g(u, y) = alpha_bar(y) + u beta_bar(y), so
    // alpha_bar = g(0, .) and beta_bar = g'_u.
    let (w2, w3) = if g.is_zero() {
        (zeros.clone(), zeros.clone())
    } else {
        let mut rhs2 = surface_load(mesh, map, |y| g.deriv_u(0.0, y));
        let w2 = solve_rhs(&mut rhs2)?;
        let mut rhs3 = surface_load(mesh, map, |y| g.eval(0.0, y));
        let w3 = solve_rhs(&mut rhs3)?;
        (w2, w3)
    };

    // Quadrature of the tensors.
    let mut a_hom = [[0.0; 2]; 2];
    let mut b_hom = [0.0; 2];
    let mut c_hom = 0.0;
    let mut d_hom = 0.0;
    let mut e2 = [0.0; 2];
    let mut e3 = [0.0; 2];
    for t in &mesh.triangles {
        let (_, area, g1a) = grad_on_tri(mesh, *t, &w1[0]);
        let (_, _, g1b) = grad_on_tri(mesh, *t, &w1[1]);
        let (_, _, g2) = grad_on_tri(mesh, *t, &w2);
        let (_, _, g3) = grad_on_tri(mesh, *t, &w3);
        let d1 = [[1.0 + g1a[0], g1a[1]], [g1b[0], 1.0 + g1b[1]]];
        for (y, wq, _) in tri_quad3(
            mesh.vertices[t[0]],
            mesh.vertices[t[1]],
            mesh.vertices[t[2]],
            area,
        ) {
            let a2 = flux.eval(g2, y);
            let a3 = flux.eval(g3, y);
            for k in 0..2 {
                let ak = flux.eval(d1[k], y);
                a_hom[0][k] += wq * ak[0];
                a_hom[1][k] += wq * ak[1];
                b_hom[k] += wq * (a2[0] * d1[k][0] + a2[1] * d1[k][1]);
            }
            c_hom += wq * (a2[0] * g2[0] + a2[1] * g2[1]);
            d_hom += wq * (a2[0] * g3[0] + a2[1] * g3[1]);
            e2[0] += wq * a2[0];
            e2[1] += wq * a2[1];
            e3[0] += wq * a3[0];
            e3[1] += wq * a3[1];
        }
    }

    Ok(LinearSplit {
        w1,
        w2,
        w3,
        tensors: LinearTensors {
            a_hom,
            b_hom,
            c_hom,
            d_hom,
            e2,
            e3,
            y_star: mesh.area(),
        },
    })
}

// ---------------------------------------------------------------------------
// Theta problem
// ---------------------------------------------------------------------------

/// Periodic mean-zero solution of the auxiliary harmonic problem
/// `integral grad Theta . grad v = integral_S g(u, y) v dsigma`.
#[derive(Debug, Clone)]
pub struct ThetaSolution {
    pub theta: Vec<f64>,
    /// `|| grad Theta ||_{L2(Y*)}`.
    pub grad_norm: f64,
}

pub fn solve_theta(
    mesh: &TriangulatedDomain,
    map: &PeriodicMap,
    g: &BoundaryFluxModel,
    u: f64,
    tol: f64,
) -> Result<ThetaSolution> {
    let laplace = FluxModel::linear(MatrixField::Identity);
    let sol = solve_cell(mesh, map, &laplace, g, [0.0; 2], u, tol)?;
    let grad_norm = grad_l2_norm(mesh, &sol.w);
    Ok(ThetaSolution {
        theta: sol.w,
        grad_norm,
    })
}

// ---------------------------------------------------------------------------
// Derivatives of the effective maps
// ---------------------------------------------------------------------------

/// How to differentiate the effective maps at a solved parameter point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeMode {
    /// Central finite differences of fresh cell solves.
    Fd,
    /// Linearized (tangent) solves around the converged corrector.
    Tangent,
}

/// Values and first derivatives of `(a*, b*)` at one parameter point.
#[derive(Debug, Clone, Copy)]
pub struct EffectiveJet {
    pub a: [f64; 2],
    pub b: f64,
    /// `da_dxi[i][k] = d a*_i / d xi_k`.
    pub da_dxi: [[f64; 2]; 2],
    pub da_du: [f64; 2],
    pub db_dxi: [f64; 2],
    pub db_du: f64,
}

pub fn effective_jet(
    mesh: &TriangulatedDomain,
    map: &PeriodicMap,
    flux: &FluxModel,
    g: &BoundaryFluxModel,
    sol: &CellSolution,
    mode: DerivativeMode,
    tol: f64,
) -> Result<EffectiveJet> {
    let a = effective_a(mesh, flux, sol);
    let b = effective_b(mesh, g, sol);
    match mode {
        DerivativeMode::Tangent => {
            let symmetric = solver_is_symmetric(flux);
            let jac = cell_jacobian(mesh, map, flux, sol.xi, &sol.w);
            let tangent = |rhs: &mut Vec<f64>| -> Result<Vec<f64>> {
                let mut m = jac.clone();
                Ok(map.unfold(&solve_pinned(&mut m, rhs, symmetric, LIN_TOL)?))
            };

            // d w / d xi_k solves J t = -integral Da e_k . grad phi.
            let mut da_dxi = [[0.0; 2]; 2];
            let mut db_dxi = [0.0; 2];
            for k in 0..2 {
                let e_k = [if k == 0 { 1.0 } else { 0.0 }, if k == 1 { 1.0 } else { 0.0 }];
                let mut rhs = vec![0.0; map.n_dofs];
                for t in &mesh.triangles {
                    let (grads, area, gw) = grad_on_tri(mesh, *t, &sol.w);
                    let eta = [sol.xi[0] + gw[0], sol.xi[1] + gw[1]];
                    for (y, wq, _) in tri_quad3(
                        mesh.vertices[t[0]],
                        mesh.vertices[t[1]],
                        mesh.vertices[t[2]],
                        area,
                    ) {
                        let da = flux.jacobian(eta, y);
                        let dek = [
                            da[0][0] * e_k[0] + da[0][1] * e_k[1],
                            da[1][0] * e_k[0] + da[1][1] * e_k[1],
                        ];
                        for i in 0..3 {
                            rhs[map.dof_of_vertex[t[i]]] -=
                                wq * (dek[0] * grads[i][0] + dek[1] * grads[i][1]);
                        }
                    }
                }
                let t_k = tangent(&mut rhs)?;
                for t in &mesh.triangles {
                    let (_, area, gw) = grad_on_tri(mesh, *t, &sol.w);
                    let (_, _, gt) = grad_on_tri(mesh, *t, &t_k);
                    let eta = [sol.xi[0] + gw[0], sol.xi[1] + gw[1]];
                    let dir = [e_k[0] + gt[0], e_k[1] + gt[1]];
                    for (y, wq, _) in tri_quad3(
                        mesh.vertices[t[0]],
                        mesh.vertices[t[1]],
                        mesh.vertices[t[2]],
                        area,
                    ) {
                        let da = flux.jacobian(eta, y);
                        da_dxi[0][k] += wq * (da[0][0] * dir[0] + da[0][1] * dir[1]);
                        da_dxi[1][k] += wq * (da[1][0] * dir[0] + da[1][1] * dir[1]);
                    }
                }
                if !g.is_zero() {
                    for (va, vb) in mesh.hole_edges() {
                        for (y, wq, phi) in edge_quad2(mesh.vertices[va], mesh.vertices[vb]) {
                            let tv = phi[0] * t_k[va] + phi[1] * t_k[vb];
                            db_dxi[k] += wq * g.deriv_u(sol.u, y) * tv;
                        }
                    }
                }
            }

            // d w / d u solves J t = +integral g'_u phi dsigma.
            let mut rhs_u = surface_load(mesh, map, |y| g.deriv_u(sol.u, y));
            let t_u = tangent(&mut rhs_u)?;
            let mut da_du = [0.0; 2];
            let mut db_du = 0.0;
            for t in &mesh.triangles {
                let (_, area, gw) = grad_on_tri(mesh, *t, &sol.w);
                let (_, _, gt) = grad_on_tri(mesh, *t, &t_u);
                let eta = [sol.xi[0] + gw[0], sol.xi[1] + gw[1]];
                for (y, wq, _) in tri_quad3(
                    mesh.vertices[t[0]],
                    mesh.vertices[t[1]],
                    mesh.vertices[t[2]],
                    area,
                ) {
                    let da = flux.jacobian(eta, y);
                    da_du[0] += wq * (da[0][0] * gt[0] + da[0][1] * gt[1]);
                    da_du[1] += wq * (da[1][0] * gt[0] + da[1][1] * gt[1]);
                }
            }
            if !g.is_zero() {
                for (va, vb) in mesh.hole_edges() {
                    for (y, wq, phi) in edge_quad2(mesh.vertices[va], mesh.vertices[vb]) {
                        let wv = phi[0] * sol.w[va] + phi[1] * sol.w[vb];
                        let tv = phi[0] * t_u[va] + phi[1] * t_u[vb];
                        db_du += wq * (g.second_deriv_u(sol.u, y) * wv + g.deriv_u(sol.u, y) * tv);
                    }
                }
            }
            Ok(EffectiveJet {
                a,
                b,
                da_dxi,
                da_du,
                db_dxi,
                db_du,
            })
        }
        DerivativeMode::Fd => {
            let dxi = 1e-5 * (1.0 + sol.xi[0].abs().max(sol.xi[1].abs()));
            let du = 1e-5 * (1.0 + sol.u.abs());
            let probe = |xi: [f64; 2], u: f64| -> Result<([f64; 2], f64)> {
                let s = solve_cell_from(mesh, map, flux, g, xi, u, tol, Some(&sol.w))?;
                Ok((effective_a(mesh, flux, &s), effective_b(mesh, g, &s)))
            };
            let mut da_dxi = [[0.0; 2]; 2];
            let mut db_dxi = [0.0; 2];
            for k in 0..2 {
                let mut xp = sol.xi;
                let mut xm = sol.xi;
                xp[k] += dxi;
                xm[k] -= dxi;
                let (ap, bp) = probe(xp, sol.u)?;
                let (am, bm) = probe(xm, sol.u)?;
                da_dxi[0][k] = (ap[0] - am[0]) / (2.0 * dxi);
                da_dxi[1][k] = (ap[1] - am[1]) / (2.0 * dxi);
                db_dxi[k] = (bp - bm) / (2.0 * dxi);
            }
            let (ap, bp) = probe(sol.xi, sol.u + du)?;
            let (am, bm) = probe(sol.xi, sol.u - du)?;
            let da_du = [(ap[0] - am[0]) / (2.0 * du), (ap[1] - am[1]) / (2.0 * du)];
            let db_du = (bp - bm) / (2.0 * du);
            Ok(EffectiveJet {
                a,
                b,
                da_dxi,
                da_du,
                db_dxi,
                db_du,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{Gamma, MatrixField, ScalarField, SurfaceField};
    use crate::geometry::{CellGeometry, HoleShape};
    use crate::mesh::mesh_unit_cell;
    use crate::periodic::periodic_pairing;

    fn disk_mesh(h: f64) -> (TriangulatedDomain, PeriodicMap) {
        let geom = CellGeometry::new(
            HoleShape::Disk {
                center: [0.0, 0.0],
                radius: 0.25,
            },
            h,
        );
        let mesh = mesh_unit_cell(&geom).unwrap();
        let map = periodic_pairing(&mesh).unwrap();
        (mesh, map)
    }

    fn plain_mesh(h: f64) -> (TriangulatedDomain, PeriodicMap) {
        let geom = CellGeometry::new(HoleShape::None, h);
        let mesh = mesh_unit_cell(&geom).unwrap();
        let map = periodic_pairing(&mesh).unwrap();
        (mesh, map)
    }

    fn bound(alpha: SurfaceField, beta: SurfaceField, gamma: Gamma, mesh: &TriangulatedDomain) -> BoundaryFluxModel {
        let mut g = BoundaryFluxModel::new(alpha, beta, gamma);
        g.bind(mesh, [0.0, 0.0]);
        g
    }

    #[test]
    fn no_hole_identity_flux_reproduces_xi() {
        let (mesh, map) = plain_mesh(0.25);
        let flux = FluxModel::linear(MatrixField::Identity);
        let g = BoundaryFluxModel::zero();
        let xi = [0.7, -0.3];
        let sol = solve_cell(&mesh, &map, &flux, &g, xi, 1.2, CELL_TOL).unwrap();
        assert!(norm(&sol.w) < 1e-12, "corrector should vanish, norm {}", norm(&sol.w));
        let a = effective_a(&mesh, &flux, &sol);
        assert!((a[0] - xi[0]).abs() < 1e-12 && (a[1] - xi[1]).abs() < 1e-12);
    }

    #[test]
    fn no_hole_nonlinear_flux_matches_closed_form() {
        let (mesh, map) = plain_mesh(0.25);
        let mu = 0.5;
        let flux = FluxModel::nonlinear(ScalarField::One, mu).unwrap();
        let g = BoundaryFluxModel::zero();
        let xi = [1.5, -2.0];
        let sol = solve_cell(&mesh, &map, &flux, &g, xi, 0.0, CELL_TOL).unwrap();
        // Constant coefficients leave no oscillation to correct, so the
        // average flux is the pointwise one.
        let s = (1.0 + xi[0] * xi[0] + xi[1] * xi[1]).sqrt();
        let a = effective_a(&mesh, &flux, &sol);
        assert!((a[0] - (1.0 + mu / s) * xi[0]).abs() < 1e-12);
        assert!((a[1] - (1.0 + mu / s) * xi[1]).abs() < 1e-12);
    }

    #[test]
    fn disk_identity_flux_homogenizes_isotropically() {
        let (mesh, map) = disk_mesh(0.125);
        let flux = FluxModel::linear(MatrixField::Identity);
        let g = BoundaryFluxModel::zero();
        let sol = solve_cell(&mesh, &map, &flux, &g, [1.0, 0.0], 0.0, CELL_TOL).unwrap();
        assert!(mesh_mean(&mesh, &sol.w).abs() < 1e-12);
        let a = effective_a(&mesh, &flux, &sol);
        assert!(a[1].abs() < 1e-8, "off-axis flux {}", a[1]);
        // Voigt sandwich: the zero corrector caps a_h at |Y*|, and the
        // volume-averaged coefficient a_h / |Y*| stays above the solid
        // fraction for a centered convex hole.
        let solid = mesh.area();
        assert!(a[0] < solid && a[0] > solid * solid, "a_h {} outside ({}, {})",
            a[0], solid * solid, solid);
    }

    #[test]
    fn effective_b_ignores_constant_shifts_of_w() {
        let (mesh, map) = disk_mesh(0.125);
        let flux = FluxModel::linear(MatrixField::Identity);
        let g = bound(SurfaceField::AngleCos, SurfaceField::AngleSin, Gamma::Identity, &mesh);
        let sol = solve_cell(&mesh, &map, &flux, &g, [0.3, 0.1], 0.8, CELL_TOL).unwrap();
        let b = effective_b(&mesh, &g, &sol);
        let mut shifted = sol.clone();
        for v in &mut shifted.w {
            *v += 17.3;
        }
        let b_shifted = effective_b(&mesh, &g, &shifted);
        assert!((b - b_shifted).abs() < 1e-12, "shift moved b* by {:e}", b - b_shifted);
    }

    #[test]
    fn theta_splits_into_alpha_and_beta_parts() {
        let (mesh, map) = disk_mesh(0.125);
        let u = 2.0;
        let full = bound(SurfaceField::AngleCos, SurfaceField::AngleSin, Gamma::SoftAbs, &mesh);
        let alpha_only = bound(SurfaceField::AngleCos, SurfaceField::Zero, Gamma::Identity, &mesh);
        // A beta-only model with gamma = identity evaluated at u = 1 loads
        // exactly the mean-zeroed beta density.
        let beta_only = bound(SurfaceField::Zero, SurfaceField::AngleSin, Gamma::Identity, &mesh);
        let t_full = solve_theta(&mesh, &map, &full, u, CELL_TOL).unwrap();
        let t_a = solve_theta(&mesh, &map, &alpha_only, 0.0, CELL_TOL).unwrap();
        let t_b = solve_theta(&mesh, &map, &beta_only, 1.0, CELL_TOL).unwrap();
        let gamma_u = Gamma::SoftAbs.eval(u);
        let mut worst = 0.0f64;
        for i in 0..mesh.n_vertices() {
            let combo = t_a.theta[i] + gamma_u * t_b.theta[i];
            worst = worst.max((t_full.theta[i] - combo).abs());
        }
        assert!(worst < 1e-10, "superposition gap {worst:e}");
        assert!(t_full.grad_norm > 0.0);
    }

    #[test]
    fn linear_split_matches_direct_solves() {
        let (mesh, map) = disk_mesh(0.125);
        let flux = FluxModel::linear(MatrixField::SymAniso);
        let g = bound(SurfaceField::AngleCos, SurfaceField::AngleSin, Gamma::Identity, &mesh);
        let split = solve_linear_split(&mesh, &map, &flux, &g, CELL_TOL).unwrap();
        let t = &split.tensors;

        assert!(t.b_hom[0].abs() < 1e-9 && t.b_hom[1].abs() < 1e-9,
            "symmetric flux should zero B_hom, got {:?}", t.b_hom);
        assert!(t.c_hom >= -1e-12, "C_hom negative: {}", t.c_hom);
        assert!((t.y_star - mesh.area()).abs() < 1e-15);

        let xi = [1.0, 2.0];
        let u = 3.0;
        let direct = solve_cell(&mesh, &map, &flux, &g, xi, u, CELL_TOL).unwrap();
        let combo = split.corrector(xi, u);
        let mut worst = 0.0f64;
        for i in 0..mesh.n_vertices() {
            worst = worst.max((direct.w[i] - combo[i]).abs());
        }
        assert!(worst < 1e-10, "corrector superposition gap {worst:e}");

        let a_direct = effective_a(&mesh, &flux, &direct);
        let a_affine = t.a_star(xi, u);
        assert!((a_direct[0] - a_affine[0]).abs() < 1e-9);
        assert!((a_direct[1] - a_affine[1]).abs() < 1e-9);

        let b_direct = effective_b(&mesh, &g, &direct);
        let b_affine = t.b_star(xi, u);
        assert!((b_direct - b_affine).abs() < 1e-8,
            "b* affine formula off by {:e}", b_direct - b_affine);
    }

    #[test]
    fn jet_derivative_modes_agree() {
        let (mesh, map) = disk_mesh(0.25);
        let flux = FluxModel::nonlinear(ScalarField::TwoPlusSin, 0.3).unwrap();
        let g = bound(SurfaceField::Zero, SurfaceField::AngleCos, Gamma::SoftAbs, &mesh);
        let tol = 1e-12;
        let sol = solve_cell(&mesh, &map, &flux, &g, [0.4, -0.2], 0.7, tol).unwrap();
        assert!(sol.newton_iters >= 1);
        let jt = effective_jet(&mesh, &map, &flux, &g, &sol, DerivativeMode::Tangent, tol).unwrap();
        let jf = effective_jet(&mesh, &map, &flux, &g, &sol, DerivativeMode::Fd, tol).unwrap();
        for k in 0..2 {
            for i in 0..2 {
                assert!((jt.da_dxi[i][k] - jf.da_dxi[i][k]).abs() < 1e-6,
                    "da_dxi[{i}][{k}] tangent {} fd {}", jt.da_dxi[i][k], jf.da_dxi[i][k]);
            }
            assert!((jt.da_du[k] - jf.da_du[k]).abs() < 1e-6);
            assert!((jt.db_dxi[k] - jf.db_dxi[k]).abs() < 1e-6);
        }
        assert!((jt.db_du - jf.db_du).abs() < 1e-6,
            "db_du tangent {} fd {}", jt.db_du, jf.db_du);
    }

    #[test]
    fn unbalanced_surface_data_is_rejected() {
        let (mesh, map) = disk_mesh(0.125);
        let flux = FluxModel::linear(MatrixField::Identity);
        // Deliberately unbound: the constant alpha keeps its full mean.
        let g = BoundaryFluxModel::new(SurfaceField::One, SurfaceField::Zero, Gamma::Identity);
        let err = solve_cell(&mesh, &map, &flux, &g, [0.0, 0.0], 0.0, CELL_TOL).unwrap_err();
        assert!(matches!(err, Error::Incompatible(_)), "got {err:?}");
    }

    #[test]
    fn impossible_tolerance_reports_the_iteration_log() {
        let (mesh, map) = disk_mesh(0.25);
        let flux = FluxModel::linear(MatrixField::Identity);
        let g = bound(SurfaceField::AngleCos, SurfaceField::Zero, Gamma::Identity, &mesh);
        let err = solve_cell(&mesh, &map, &flux, &g, [1.0, 0.0], 0.0, 1e-30).unwrap_err();
        match err {
            Error::NonConvergence { residual, log, .. } => {
                assert!(residual > 0.0);
                assert!(!log.is_empty());
            }
            other => panic!("expected NonConvergence, got {other:?}"),
        }
    }
}
