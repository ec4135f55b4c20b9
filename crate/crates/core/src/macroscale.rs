//! Homogenized problems on the macro domain.
//!
//! The elliptic solve finds the P1 field U on the (unperforated) unit
//! square satisfying
//!
//! ```text
//!   integral a*(DU, U) . DPhi - integral b*(DU, U) Phi
//!     - boundary integral (g*(U) . nu) Phi
//!     + |Y*| integral (lambda U - f) Phi  =  0      for all P1 Phi,
//! ```
//!
//! with the effective maps supplied by an `EffectiveLaw` (table, exact
//! tensors, or nested cell solves). The parabolic solve runs implicit
//! Euler steps of the same form with `|Y*| (U - U_prev) / dt` added to
//! the zero-order term; set `lambda = 0` for the plain evolution problem.
//! Newton uses the law's own derivatives, so the Jacobian is exactly the
//! derivative of the assembled residual.

use rayon::prelude::*;

use crate::cell::{solve_cell, CellSolution};
use crate::error::{ConvergenceRecord, Error, Result};
use crate::fem::{bicgstab, edge_quad2, tri_grads, tri_quad3, Triplets};
use crate::fields::SourceField;
use crate::mesh::{Located, PerforatedMesh, TriLocator, TriangulatedDomain};
use crate::models::{BoundaryFluxModel, FluxModel};
use crate::periodic::PeriodicMap;
use crate::table::EffectiveLaw;

const MAX_NEWTON: usize = 40;
const LIN_TOL: f64 = 1e-12;

/// Elliptic (or one-step) macro problem data.
pub struct MacroProblem<'a> {
    pub mesh: &'a TriangulatedDomain,
    pub law: &'a dyn EffectiveLaw,
    pub f: SourceField,
    pub lambda: f64,
}

#[derive(Debug, Clone)]
pub struct MacroSolution {
    pub u: Vec<f64>,
    pub newton_iters: usize,
    pub residual_norm: f64,
    pub log: Vec<ConvergenceRecord>,
}

/// One implicit Euler state.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub time: f64,
    pub u: Vec<f64>,
}

/// Zero-order part of the weak form: `mass * U - base_coef * base - f(time, x)`.
/// Elliptic solves use `mass = lambda` and no base; implicit Euler steps
/// use `mass = 1/dt + lambda` against `base_coef = 1/dt` times the
/// previous state.
struct StepContext<'a> {
    mass: f64,
    base: Option<&'a [f64]>,
    base_coef: f64,
    time: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Outward unit normal of a unit-square boundary edge.
pub(crate) fn outer_normal(a: [f64; 2], b: [f64; 2]) -> Result<[f64; 2]> {
    const TOL: f64 = 1e-12;
    if a[0].abs() < TOL && b[0].abs() < TOL {
        return Ok([-1.0, 0.0]);
    }
    if (a[0] - 1.0).abs() < TOL && (b[0] - 1.0).abs() < TOL {
        return Ok([1.0, 0.0]);
    }
    if a[1].abs() < TOL && b[1].abs() < TOL {
        return Ok([0.0, -1.0]);
    }
    if (a[1] - 1.0).abs() < TOL && (b[1] - 1.0).abs() < TOL {
        return Ok([0.0, 1.0]);
    }
    Err(Error::config(format!(
        "boundary edge ({:?}, {:?}) is not on the unit-square boundary",
        a, b
    )))
}

fn macro_residual(p: &MacroProblem, ctx: &StepContext, u: &[f64]) -> Result<Vec<f64>> {
    let mesh = p.mesh;
    let y_star = p.law.y_star();
    let mut r = vec![0.0; mesh.n_vertices()];
    for t in &mesh.triangles {
        let (va, vb, vc) = (mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]);
        let (grads, area) = tri_grads(va, vb, vc);
        let mut du = [0.0; 2];
        for k in 0..3 {
            du[0] += u[t[k]] * grads[k][0];
            du[1] += u[t[k]] * grads[k][1];
        }
        for (x, wq, phi) in tri_quad3(va, vb, vc, area) {
            let uq = phi[0] * u[t[0]] + phi[1] * u[t[1]] + phi[2] * u[t[2]];
            let a = p.law.a(du, uq);
            let b = p.law.b(du, uq);
            let base_q = match ctx.base {
                Some(w) => phi[0] * w[t[0]] + phi[1] * w[t[1]] + phi[2] * w[t[2]],
                None => 0.0,
            };
            let zero_order =
                y_star * (ctx.mass * uq - ctx.base_coef * base_q - p.f.eval(ctx.time, x));
            for k in 0..3 {
                r[t[k]] += wq
                    * (a[0] * grads[k][0] + a[1] * grads[k][1] + (zero_order - b) * phi[k]);
            }
        }
    }
    for (va, vb) in mesh.outer_edges() {
        let (pa, pb) = (mesh.vertices[va], mesh.vertices[vb]);
        let nu = outer_normal(pa, pb)?;
        for (_, wq, phi) in edge_quad2(pa, pb) {
            let uq = phi[0] * u[va] + phi[1] * u[vb];
            let gs = p.law.gstar(uq);
            let flux = gs[0] * nu[0] + gs[1] * nu[1];
            r[va] -= wq * flux * phi[0];
            r[vb] -= wq * flux * phi[1];
        }
    }
    Ok(r)
}

fn macro_jacobian(p: &MacroProblem, ctx: &StepContext, u: &[f64]) -> Result<crate::fem::Csr> {
    let mesh = p.mesh;
    let y_star = p.law.y_star();
    let mut trip = Triplets::new(mesh.n_vertices());
    for t in &mesh.triangles {
        let (va, vb, vc) = (mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]);
        let (grads, area) = tri_grads(va, vb, vc);
        let mut du = [0.0; 2];
        for k in 0..3 {
            du[0] += u[t[k]] * grads[k][0];
            du[1] += u[t[k]] * grads[k][1];
        }
        for (_, wq, phi) in tri_quad3(va, vb, vc, area) {
            let uq = phi[0] * u[t[0]] + phi[1] * u[t[1]] + phi[2] * u[t[2]];
            let da = p.law.da_dxi(du, uq);
            let dau = p.law.da_du(du, uq);
            let dbx = p.law.db_dxi(du, uq);
            let dbu = p.law.db_du(du, uq);
            for j in 0..3 {
                let dir = [
                    da[0][0] * grads[j][0] + da[0][1] * grads[j][1] + dau[0] * phi[j],
                    da[1][0] * grads[j][0] + da[1][1] * grads[j][1] + dau[1] * phi[j],
                ];
                let db = dbx[0] * grads[j][0] + dbx[1] * grads[j][1] + dbu * phi[j];
                for i in 0..3 {
                    trip.add(
                        t[i],
                        t[j],
                        wq * (dir[0] * grads[i][0]
                            + dir[1] * grads[i][1]
                            + (y_star * ctx.mass * phi[j] - db) * phi[i]),
                    );
                }
            }
        }
    }
    for (va, vb) in mesh.outer_edges() {
        let (pa, pb) = (mesh.vertices[va], mesh.vertices[vb]);
        let nu = outer_normal(pa, pb)?;
        for (_, wq, phi) in edge_quad2(pa, pb) {
            let uq = phi[0] * u[va] + phi[1] * u[vb];
            let dgs = p.law.gstar_du(uq);
            let dflux = dgs[0] * nu[0] + dgs[1] * nu[1];
            let vs = [va, vb];
            for j in 0..2 {
                for i in 0..2 {
                    trip.add(vs[i], vs[j], -wq * dflux * phi[j] * phi[i]);
                }
            }
        }
    }
    Ok(trip.to_csr())
}

/// Post-Newton 1D correction along the constant direction: drives the
/// residual's constant component to machine zero so testing with Phi = 1
/// (the discrete mass balance) holds exactly, not just within tol.
fn polish_constant_mode(p: &MacroProblem, ctx: &StepContext, u: &mut [f64]) -> Result<()> {
    for _ in 0..3 {
        let r = macro_residual(p, ctx, u)?;
        let phi0: f64 = r.iter().sum();
        let scale = 1.0 + u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if phi0.abs() < 1e-15 * scale {
            return Ok(());
        }
        let delta = 1e-7 * scale;
        let shifted: Vec<f64> = u.iter().map(|v| v + delta).collect();
        let r1 = macro_residual(p, ctx, &shifted)?;
        let phi1: f64 = r1.iter().sum();
        let dphi = (phi1 - phi0) / delta;
        if dphi.abs() < 1e-30 {
            return Ok(());
        }
        let c = -phi0 / dphi;
        for v in u.iter_mut() {
            *v += c;
        }
    }
    Ok(())
}

fn newton(p: &MacroProblem, ctx: &StepContext, start: &[f64], tol: f64) -> Result<MacroSolution> {
    if tol <= 0.0 {
        return Err(Error::config(format!("macro tolerance must be positive, got {tol}")));
    }
    let mut u = start.to_vec();
    let mut r = macro_residual(p, ctx, &u)?;
    let mut rn = norm(&r);
    let mut log: Vec<ConvergenceRecord> = Vec::new();
    let mut iters = 0;
    while rn >= tol && iters < MAX_NEWTON {
        let jac = macro_jacobian(p, ctx, &u)?;
        let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        let max_iter = 100 + 50 * rhs.len();
        let (delta, _) = bicgstab(&jac, &rhs, None, LIN_TOL, max_iter)?;
        let mut s = 1.0;
        let mut accepted = false;
        for _ in 0..=10 {
            let u_try: Vec<f64> = u.iter().zip(&delta).map(|(a, d)| a + s * d).collect();
            let r_try = macro_residual(p, ctx, &u_try)?;
            let rn_try = norm(&r_try);
            if rn_try < rn * (1.0 - 1e-4 * s) || rn_try < tol {
                u = u_try;
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
    if rn >= tol {
        return Err(Error::NonConvergence {
            residual: rn,
            iters,
            log,
        });
    }
    polish_constant_mode(p, ctx, &mut u)?;
    let rn = norm(&macro_residual(p, ctx, &u)?);
    Ok(MacroSolution {
        u,
        newton_iters: iters,
        residual_norm: rn,
        log,
    })
}

/// Solve the homogenized elliptic problem. With no initial guess, Newton
/// starts from zero, so its first step is exactly the frozen-coefficient
/// linear solve at `(xi, u) = (0, 0)`.
pub fn solve_homogenized_elliptic(
    p: &MacroProblem,
    tol: f64,
    initial: Option<&[f64]>,
) -> Result<MacroSolution> {
    let zeros = vec![0.0; p.mesh.n_vertices()];
    let start = initial.unwrap_or(&zeros);
    let ctx = StepContext {
        mass: p.lambda,
        base: None,
        base_coef: 0.0,
        time: 0.0,
    };
    newton(p, &ctx, start, tol)
}

/// Assembled residual of the elliptic problem at a given nodal state, one
/// entry per vertex hat function. Useful for checking how well a candidate
/// field satisfies the discrete equations without running a solve.
pub fn elliptic_residual(p: &MacroProblem, u: &[f64]) -> Result<Vec<f64>> {
    let ctx = StepContext {
        mass: p.lambda,
        base: None,
        base_coef: 0.0,
        time: 0.0,
    };
    macro_residual(p, &ctx, u)
}

/// Implicit Euler for the homogenized parabolic problem; returns all
/// states including the initial one.
pub fn solve_homogenized_parabolic(
    p: &MacroProblem,
    u0: &[f64],
    t_end: f64,
    dt: f64,
    tol: f64,
) -> Result<Vec<Snapshot>> {
    if !(dt > 0.0) {
        return Err(Error::config(format!("time step must be positive, got {dt}")));
    }
    if t_end < dt {
        return Err(Error::config(format!(
            "horizon {t_end} is shorter than one step {dt}"
        )));
    }
    let n_steps = (t_end / dt).round() as usize;
    let mut snaps = vec![Snapshot {
        time: 0.0,
        u: u0.to_vec(),
    }];
    let mut prev = u0.to_vec();
    for step in 1..=n_steps {
        let time = step as f64 * dt;
        let ctx = StepContext {
            mass: 1.0 / dt + p.lambda,
            base: Some(&prev),
            base_coef: 1.0 / dt,
            time,
        };
        let sol = newton(p, &ctx, &prev, tol).map_err(|e| {
            Error::config(format!("parabolic step {step} (t = {time:.4}) failed: {e}"))
        })?;
        prev = sol.u.clone();
        snaps.push(Snapshot { time, u: sol.u });
    }
    Ok(snaps)
}

/// Per-start iteration counts and the max pairwise L2 distance of the
/// converged states; failed starts are reported, not fatal.
#[derive(Debug, Clone)]
pub struct UniquenessReport {
    pub max_pairwise_l2: f64,
    pub iters: Vec<usize>,
    pub failures: Vec<(usize, String)>,
}

pub fn uniqueness_probe(
    p: &MacroProblem,
    starts: &[Vec<f64>],
    tol: f64,
) -> Result<UniquenessReport> {
    if starts.is_empty() {
        return Err(Error::config("uniqueness probe needs at least one start".to_string()));
    }
    let mut solutions = Vec::new();
    let mut iters = Vec::new();
    let mut failures = Vec::new();
    for (k, start) in starts.iter().enumerate() {
        match solve_homogenized_elliptic(p, tol, Some(start)) {
            Ok(sol) => {
                iters.push(sol.newton_iters);
                solutions.push(sol.u);
            }
            Err(e) => failures.push((k, e.to_string())),
        }
    }
    let mut max_d: f64 = 0.0;
    for i in 0..solutions.len() {
        for j in (i + 1)..solutions.len() {
            max_d = max_d.max(crate::fem::field_l2_distance(p.mesh, &solutions[i], &solutions[j]));
        }
    }
    Ok(UniquenessReport {
        max_pairwise_l2: max_d,
        iters,
        failures,
    })
}

/// First-order two-scale reconstruction `U(x) + eps w(x/eps; DU|_T, U_T)`
/// sampled at the fine-mesh vertices.
///
/// One cell problem is solved per macro element (gradient is element
/// constant, the state is taken at the element centroid) and cached; the
/// corrector value at a fine vertex is the P1 interpolation of that cell
/// solution at the wrapped reference coordinate.
///
/// The corrector is added only inside perforated lattice cells. The frame
/// band has no holes, so the periodic-cell ansatz does not describe it and
/// its vertices keep the plain field; a vertex on the interface takes the
/// periodic boundary value of the corrector from the perforated side.
pub fn reconstruct_corrector(
    macro_mesh: &TriangulatedDomain,
    u0: &[f64],
    fine: &PerforatedMesh,
    cell_mesh: &TriangulatedDomain,
    map: &PeriodicMap,
    flux: &FluxModel,
    g: &BoundaryFluxModel,
    tol: f64,
) -> Result<Vec<f64>> {
    let macro_loc = TriLocator::new(macro_mesh);
    let cell_loc = TriLocator::new(cell_mesh);
    // Fallback element for vertices the locator resolves only to a vertex.
    let mut vertex_elem = vec![usize::MAX; macro_mesh.n_vertices()];
    for (ti, t) in macro_mesh.triangles.iter().enumerate() {
        for &v in t {
            if vertex_elem[v] == usize::MAX {
                vertex_elem[v] = ti;
            }
        }
    }

    // Locate every fine vertex first so only the macro elements actually hit
    // get a cell solve, and those run in parallel.
    let located: Vec<(usize, f64)> = fine
        .domain
        .vertices
        .iter()
        .map(|&x| match macro_loc.locate(x) {
            Located::Inside(ti, bc) => {
                let t = macro_mesh.triangles[ti];
                (ti, bc[0] * u0[t[0]] + bc[1] * u0[t[1]] + bc[2] * u0[t[2]])
            }
            Located::NearestVertex(v) => (vertex_elem[v], u0[v]),
        })
        .collect();
    let mut needed = vec![false; macro_mesh.triangles.len()];
    for &(elem, _) in &located {
        needed[elem] = true;
    }
    let sols: Vec<Option<CellSolution>> = macro_mesh
        .triangles
        .par_iter()
        .enumerate()
        .map(|(ti, t)| {
            if !needed[ti] {
                return Ok(None);
            }
            let (grads, _) = tri_grads(
                macro_mesh.vertices[t[0]],
                macro_mesh.vertices[t[1]],
                macro_mesh.vertices[t[2]],
            );
            let mut xi = [0.0; 2];
            for k in 0..3 {
                xi[0] += u0[t[k]] * grads[k][0];
                xi[1] += u0[t[k]] * grads[k][1];
            }
            let u_t = (u0[t[0]] + u0[t[1]] + u0[t[2]]) / 3.0;
            solve_cell(cell_mesh, map, flux, g, xi, u_t, tol).map(Some)
        })
        .collect::<Result<_>>()?;

    let n = fine.n as f64;
    let ni = fine.n as i32;
    let mut out = vec![0.0; fine.domain.n_vertices()];
    for (vi, &x) in fine.domain.vertices.iter().enumerate() {
        let (elem, u0x) = located[vi];
        let xs = axis_cells(x[0] * n, ni);
        let ys = axis_cells(x[1] * n, ni);
        let mut cell = None;
        for &cx in xs.iter().flatten() {
            for &cy in ys.iter().flatten() {
                if fine.is_perforated_cell([cx, cy]) {
                    cell = Some([cx, cy]);
                }
            }
        }
        out[vi] = match cell {
            None => u0x,
            Some(c) => {
                let w = &sols[elem].as_ref().expect("located element was solved").w;
                u0x + fine.eps * cell_loc.eval(w, fine.local_y(c, x))
            }
        };
    }
    Ok(out)
}

/// Lattice columns or rows a scaled coordinate can belong to: its own cell
/// plus, on a lattice line, the neighbor sharing that line.
fn axis_cells(scaled: f64, n: i32) -> [Option<i32>; 2] {
    let f = scaled.floor();
    let m = f as i32;
    let frac = scaled - f;
    let tol = 1e-9;
    let first = (m >= 0 && m < n).then_some(m);
    let second = if frac < tol && m - 1 >= 0 {
        Some(m - 1)
    } else if frac > 1.0 - tol && m + 1 < n {
        Some(m + 1)
    } else {
        None
    };
    [first, second]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::LinearTensors;
    use crate::fem::{field_integral, field_l2_norm};
    use crate::fields::mms_exact;
    use crate::geometry::{CellGeometry, HoleShape};
    use crate::mesh::{mesh_unit_square, tile_perforated_domain};
    use crate::periodic::periodic_pairing;
    use crate::table::{EffectiveTable, TableSpec};

    fn identity_table() -> EffectiveTable {
        EffectiveTable::from_linear(
            LinearTensors::identity(),
            [0.0; 2],
            [0.0; 2],
            TableSpec::default(),
        )
    }

    #[test]
    fn unit_source_gives_the_constant_state() {
        let mesh = mesh_unit_square(0.25).unwrap();
        let table = identity_table();
        let p = MacroProblem {
            mesh: &mesh,
            law: &table,
            f: SourceField::One,
            lambda: 1.0,
        };
        let sol = solve_homogenized_elliptic(&p, 1e-10, None).unwrap();
        for &v in &sol.u {
            assert!((v - 1.0).abs() < 1e-9, "state {v} should be 1");
        }
        assert!(sol.residual_norm < 1e-10);
        // Fixed point: restarting from the solution takes at most one step.
        let again = solve_homogenized_elliptic(&p, 1e-10, Some(&sol.u)).unwrap();
        assert!(again.newton_iters <= 1, "{} iterations from a fixed point", again.newton_iters);
    }

    #[test]
    fn manufactured_solution_converges_at_second_order() {
        let table = identity_table();
        let lambda = 1.0;
        let mut errors = Vec::new();
        for h in [1.0 / 8.0, 1.0 / 16.0] {
            let mesh = mesh_unit_square(h).unwrap();
            let p = MacroProblem {
                mesh: &mesh,
                law: &table,
                f: SourceField::MmsCos { lambda },
                lambda,
            };
            let sol = solve_homogenized_elliptic(&p, 1e-10, None).unwrap();
            let exact: Vec<f64> = mesh.vertices.iter().map(|&x| mms_exact(x)).collect();
            errors.push(crate::fem::field_l2_distance(&mesh, &sol.u, &exact));
        }
        let rate = (errors[0] / errors[1]).log2();
        assert!(rate >= 1.8, "rate {rate:.2} from errors {errors:?}");
    }

    #[test]
    fn parabolic_conserves_mass_and_keeps_constants() {
        let mesh = mesh_unit_square(0.25).unwrap();
        let table = identity_table();
        let p = MacroProblem {
            mesh: &mesh,
            law: &table,
            f: SourceField::Zero,
            lambda: 0.0,
        };
        let c = 0.7;
        let u0 = vec![c; mesh.n_vertices()];
        let snaps = solve_homogenized_parabolic(&p, &u0, 0.25, 1.0 / 16.0, 1e-10).unwrap();
        assert_eq!(snaps.len(), 5);
        let mass0 = field_integral(&mesh, &snaps[0].u);
        for s in &snaps {
            for &v in &s.u {
                assert!((v - c).abs() < 1e-10, "constant drifted to {v}");
            }
            let drift = (field_integral(&mesh, &s.u) - mass0).abs();
            assert!(drift < 1e-12, "mass drift {drift:e} at t={}", s.time);
        }
    }

    #[test]
    fn parabolic_diffusion_decays_in_energy_and_conserves_mass() {
        let mesh = mesh_unit_square(0.125).unwrap();
        let table = identity_table();
        let p = MacroProblem {
            mesh: &mesh,
            law: &table,
            f: SourceField::Zero,
            lambda: 0.0,
        };
        let u0: Vec<f64> = mesh
            .vertices
            .iter()
            .map(|&x| (std::f64::consts::PI * x[0]).cos())
            .collect();
        let snaps = solve_homogenized_parabolic(&p, &u0, 0.5, 1.0 / 16.0, 1e-10).unwrap();
        let mass0 = field_integral(&mesh, &snaps[0].u);
        let mut prev_energy = f64::INFINITY;
        for s in &snaps {
            let energy = field_l2_norm(&mesh, &s.u);
            assert!(energy <= prev_energy + 1e-12, "energy grew at t={}", s.time);
            prev_energy = energy;
            assert!((field_integral(&mesh, &s.u) - mass0).abs() < 1e-12);
        }
        // The mode actually decays.
        assert!(prev_energy < 0.8 * field_l2_norm(&mesh, &u0));
    }

    #[test]
    fn random_starts_collapse_to_one_solution() {
        let mesh = mesh_unit_square(0.25).unwrap();
        // A law with boundary and zero-order coupling: g* affine in u.
        let tensors = LinearTensors::identity();
        let table = EffectiveTable::from_linear(
            tensors,
            [0.3, -0.1],
            [0.05, 0.02],
            TableSpec::default(),
        );
        let p = MacroProblem {
            mesh: &mesh,
            law: &table,
            f: SourceField::CosPi,
            lambda: 50.0,
        };
        let n = mesh.n_vertices();
        let starts = vec![
            vec![0.0; n],
            vec![5.0; n],
            (0..n).map(|i| ((i * 37) % 11) as f64 - 5.0).collect(),
        ];
        let report = uniqueness_probe(&p, &starts, 1e-10).unwrap();
        assert!(report.failures.is_empty());
        assert!(
            report.max_pairwise_l2 < 1e-8,
            "solutions spread {:e}",
            report.max_pairwise_l2
        );
    }

    #[test]
    fn reconstruction_of_a_constant_state_is_exact_without_g() {
        let geom = CellGeometry::new(
            HoleShape::Disk {
                center: [0.0, 0.0],
                radius: 0.25,
            },
            0.25,
        );
        let fine = tile_perforated_domain(&geom, 4).unwrap();
        let cell_mesh = &fine.cell_mesh;
        let map = periodic_pairing(cell_mesh).unwrap();
        let flux = FluxModel::linear(crate::fields::MatrixField::Identity);
        let g = BoundaryFluxModel::zero();
        let macro_mesh = mesh_unit_square(0.25).unwrap();
        let u0 = vec![2.5; macro_mesh.n_vertices()];
        let rec = reconstruct_corrector(
            &macro_mesh,
            &u0,
            &fine,
            cell_mesh,
            &map,
            &flux,
            &g,
            1e-10,
        )
        .unwrap();
        for &v in &rec {
            assert!((v - 2.5).abs() < 1e-12, "reconstruction {v} should be 2.5");
        }
    }
}
