//! Tabulated effective maps and the law abstraction the macro solver
//! consumes.
//!
//! `build_table` samples `(xi, u) -> (a*, b*)` and `u -> g*` on a tensor
//! grid by solving one cell problem per node; `EffectiveTable` then answers
//! queries by interpolation (bilinear in xi, linear in u) whose analytic
//! derivatives feed the macro Newton. A linear flux with gamma = identity
//! carries its exact affine representation alongside the grid, and queries
//! bypass interpolation entirely in that case. `NestedCellLaw` is the
//! no-table alternative: every query triggers a fresh (memoized) cell
//! solve.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;

use rayon::prelude::*;

use crate::cell::{
    effective_a, effective_b, effective_g, effective_jet, solve_cell, solve_linear_split,
    DerivativeMode, EffectiveJet, LinearTensors,
};
use crate::error::{Error, Result};
use crate::fields::Gamma;
use crate::mesh::TriangulatedDomain;
use crate::models::{BoundaryFluxModel, FluxModel};
use crate::periodic::PeriodicMap;

/// Uniform sampling axis with at least two nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridAxis {
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl GridAxis {
    pub fn symmetric(radius: f64, n: usize) -> Self {
        GridAxis {
            min: -radius,
            max: radius,
            n,
        }
    }

    pub fn node(&self, i: usize) -> f64 {
        self.min + (self.max - self.min) * i as f64 / (self.n - 1) as f64
    }

    fn spacing(&self) -> f64 {
        (self.max - self.min) / (self.n - 1) as f64
    }

    /// Containing cell index and local coordinate of a clamped query.
    /// Returns `(i, t, clamped)` with `t` in [0, 1] and `i <= n - 2`.
    fn locate(&self, x: f64) -> (usize, f64, bool) {
        let clamped = x < self.min || x > self.max;
        let x = x.clamp(self.min, self.max);
        let h = self.spacing();
        let mut i = ((x - self.min) / h).floor() as usize;
        if i > self.n - 2 {
            i = self.n - 2;
        }
        let t = ((x - self.node(i)) / h).clamp(0.0, 1.0);
        (i, t, clamped)
    }
}

/// Grid resolutions and box radii for `build_table`.
#[derive(Debug, Clone, Copy)]
pub struct TableSpec {
    pub r_xi: f64,
    pub r_u: f64,
    pub n_xi: usize,
    pub n_u: usize,
}

impl Default for TableSpec {
    fn default() -> Self {
        TableSpec {
            r_xi: 10.0,
            r_u: 10.0,
            n_xi: 9,
            n_u: 9,
        }
    }
}

/// Sampled effective maps on a tensor grid.
///
/// Node layout: `idx(i, j, k) = (i * n_xi2 + j) * n_u + k` with `i` along
/// xi1, `j` along xi2, `k` along u.
#[derive(Debug)]
pub struct EffectiveTable {
    pub xi1: GridAxis,
    pub xi2: GridAxis,
    pub u: GridAxis,
    pub a: Vec<[f64; 2]>,
    pub b: Vec<f64>,
    /// `g*` nodes along the u axis only.
    pub gstar: Vec<[f64; 2]>,
    /// Solid-part cell volume |Y*|.
    pub y_star: f64,
    /// Exact affine representation when the model is linear; queries then
    /// skip interpolation.
    pub linear: Option<LinearTensors>,
    clamp_warned: AtomicBool,
}

/// Everything the macro solver needs from the micro scale.
pub trait EffectiveLaw: Sync {
    fn a(&self, xi: [f64; 2], u: f64) -> [f64; 2];
    fn b(&self, xi: [f64; 2], u: f64) -> f64;
    /// `da_dxi[i][k] = d a*_i / d xi_k`.
    fn da_dxi(&self, xi: [f64; 2], u: f64) -> [[f64; 2]; 2];
    fn da_du(&self, xi: [f64; 2], u: f64) -> [f64; 2];
    fn db_dxi(&self, xi: [f64; 2], u: f64) -> [f64; 2];
    fn db_du(&self, xi: [f64; 2], u: f64) -> f64;
    fn gstar(&self, u: f64) -> [f64; 2];
    fn gstar_du(&self, u: f64) -> [f64; 2];
    fn y_star(&self) -> f64;
}

impl EffectiveTable {
    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.xi2.n + j) * self.u.n + k
    }

    /// Table whose nodes and queries all come from an exact affine law:
    /// `a*, b*` from `tensors`, `g*(u) = g0 + u g1`.
    pub fn from_linear(tensors: LinearTensors, g0: [f64; 2], g1: [f64; 2], spec: TableSpec) -> Self {
        let xi1 = GridAxis::symmetric(spec.r_xi, spec.n_xi);
        let xi2 = GridAxis::symmetric(spec.r_xi, spec.n_xi);
        let uax = GridAxis::symmetric(spec.r_u, spec.n_u);
        let mut a = Vec::with_capacity(xi1.n * xi2.n * uax.n);
        let mut b = Vec::with_capacity(xi1.n * xi2.n * uax.n);
        for i in 0..xi1.n {
            for j in 0..xi2.n {
                for k in 0..uax.n {
                    let xi = [xi1.node(i), xi2.node(j)];
                    let u = uax.node(k);
                    a.push(tensors.a_star(xi, u));
                    b.push(tensors.b_star(xi, u));
                }
            }
        }
        let gstar = (0..uax.n)
            .map(|k| {
                let u = uax.node(k);
                [g0[0] + u * g1[0], g0[1] + u * g1[1]]
            })
            .collect();
        EffectiveTable {
            xi1,
            xi2,
            u: uax,
            a,
            b,
            gstar,
            y_star: tensors.y_star,
            linear: Some(tensors),
            clamp_warned: AtomicBool::new(false),
        }
    }

    fn warn_clamp(&self, xi: [f64; 2], u: f64) {
        if !self.clamp_warned.swap(true, Ordering::Relaxed) {
            eprintln!(
                "warning: query (xi = ({:.3}, {:.3}), u = {:.3}) outside the table box \
                 [{:.1}, {:.1}]^2 x [{:.1}, {:.1}]; clamping (reported once)",
                xi[0], xi[1], u, self.xi1.min, self.xi1.max, self.u.min, self.u.max
            );
        }
    }

    /// Trilinear interpolation of one stored component together with its
    /// gradient in `(xi1, xi2, u)`.
    fn interp(&self, fetch: impl Fn(usize) -> f64, xi: [f64; 2], u: f64) -> (f64, [f64; 3]) {
        let (i, t1, c1) = self.xi1.locate(xi[0]);
        let (j, t2, c2) = self.xi2.locate(xi[1]);
        let (k, t3, c3) = self.u.locate(u);
        if c1 || c2 || c3 {
            self.warn_clamp(xi, u);
        }
        let mut val = 0.0;
        let mut grad = [0.0; 3];
        let w = |t: f64, s: usize| if s == 1 { t } else { 1.0 - t };
        let dw = |s: usize| if s == 1 { 1.0 } else { -1.0 };
        for s1 in 0..2 {
            for s2 in 0..2 {
                for s3 in 0..2 {
                    let c = fetch(self.idx(i + s1, j + s2, k + s3));
                    val += w(t1, s1) * w(t2, s2) * w(t3, s3) * c;
                    grad[0] += dw(s1) * w(t2, s2) * w(t3, s3) * c;
                    grad[1] += w(t1, s1) * dw(s2) * w(t3, s3) * c;
                    grad[2] += w(t1, s1) * w(t2, s2) * dw(s3) * c;
                }
            }
        }
        grad[0] /= self.xi1.spacing();
        grad[1] /= self.xi2.spacing();
        grad[2] /= self.u.spacing();
        (val, grad)
    }

    fn interp_gstar(&self, u: f64) -> ([f64; 2], [f64; 2]) {
        let (k, t, clamped) = self.u.locate(u);
        if clamped {
            self.warn_clamp([0.0, 0.0], u);
        }
        let h = self.u.spacing();
        let lo = self.gstar[k];
        let hi = self.gstar[k + 1];
        (
            [
                (1.0 - t) * lo[0] + t * hi[0],
                (1.0 - t) * lo[1] + t * hi[1],
            ],
            [(hi[0] - lo[0]) / h, (hi[1] - lo[1]) / h],
        )
    }

    /// Fit `(gamma, c)` with `a*(xi,u) . xi >= gamma |xi|^2 - c (|u|^2 + 1)`
    /// over all grid nodes; a correct monotone model yields `gamma > 0`.
    pub fn fit_coercivity(&self) -> (f64, f64) {
        let mut c = 0.0f64;
        for i in 0..self.xi1.n {
            for j in 0..self.xi2.n {
                for k in 0..self.u.n {
                    let xi = [self.xi1.node(i), self.xi2.node(j)];
                    let u = self.u.node(k);
                    let dot = {
                        let a = self.a[self.idx(i, j, k)];
                        a[0] * xi[0] + a[1] * xi[1]
                    };
                    c = c.max(-dot / (u * u + 1.0));
                }
            }
        }
        let mut gamma = f64::INFINITY;
        for i in 0..self.xi1.n {
            for j in 0..self.xi2.n {
                for k in 0..self.u.n {
                    let xi = [self.xi1.node(i), self.xi2.node(j)];
                    let norm2 = xi[0] * xi[0] + xi[1] * xi[1];
                    if norm2 == 0.0 {
                        continue;
                    }
                    let u = self.u.node(k);
                    let a = self.a[self.idx(i, j, k)];
                    let dot = a[0] * xi[0] + a[1] * xi[1];
                    gamma = gamma.min((dot + c * (u * u + 1.0)) / norm2);
                }
            }
        }
        (gamma, c)
    }

    /// Write the table as self-describing CSV; 17-significant-digit floats
    /// make the round trip bit exact.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let ctx = || format!("writing table to {}", path.display());
        let file = std::fs::File::create(path).map_err(|e| Error::io(ctx(), e))?;
        let mut out = std::io::BufWriter::new(file);
        let mut w = |line: String| -> Result<()> {
            writeln!(out, "{line}").map_err(|e| Error::io(ctx(), e))
        };
        w("# xi1 xi2 u a1 a2 b g1 g2".to_string())?;
        w(format!("# grid {} {} {}", self.xi1.n, self.xi2.n, self.u.n))?;
        w(format!(
            "# box {:.16e} {:.16e} {:.16e} {:.16e} {:.16e} {:.16e}",
            self.xi1.min, self.xi1.max, self.xi2.min, self.xi2.max, self.u.min, self.u.max
        ))?;
        w(format!("# ystar {:.16e}", self.y_star))?;
        for i in 0..self.xi1.n {
            for j in 0..self.xi2.n {
                for k in 0..self.u.n {
                    let idx = self.idx(i, j, k);
                    let a = self.a[idx];
                    let g = self.gstar[k];
                    w(format!(
                        "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                        self.xi1.node(i),
                        self.xi2.node(j),
                        self.u.node(k),
                        a[0],
                        a[1],
                        self.b[idx],
                        g[0],
                        g[1]
                    ))?;
                }
            }
        }
        if let Some(t) = &self.linear {
            w("# tensors".to_string())?;
            w(format!(
                "a_hom,{:.16e},{:.16e},{:.16e},{:.16e}",
                t.a_hom[0][0], t.a_hom[0][1], t.a_hom[1][0], t.a_hom[1][1]
            ))?;
            w(format!("b_hom,{:.16e},{:.16e}", t.b_hom[0], t.b_hom[1]))?;
            w(format!("c_hom,{:.16e}", t.c_hom))?;
            w(format!("d_hom,{:.16e}", t.d_hom))?;
            w(format!("e2,{:.16e},{:.16e}", t.e2[0], t.e2[1]))?;
            w(format!("e3,{:.16e},{:.16e}", t.e3[0], t.e3[1]))?;
        }
        out.flush().map_err(|e| Error::io(ctx(), e))
    }

    pub fn read_csv(path: &Path) -> Result<EffectiveTable> {
        let ctx = || format!("reading table from {}", path.display());
        let file = std::fs::File::open(path).map_err(|e| Error::io(ctx(), e))?;
        let reader = std::io::BufReader::new(file);

        let mut grid: Option<(usize, usize, usize)> = None;
        let mut boxes: Option<[f64; 6]> = None;
        let mut y_star: Option<f64> = None;
        let mut rows: Vec<[f64; 8]> = Vec::new();
        let mut tensor_lines: Vec<String> = Vec::new();
        let mut in_tensors = false;

        for line in reader.lines() {
            let line = line.map_err(|e| Error::io(ctx(), e))?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let rest = rest.trim();
                if rest == "tensors" {
                    in_tensors = true;
                } else if let Some(spec) = rest.strip_prefix("grid ") {
                    let dims: Vec<usize> = spec
                        .split_whitespace()
                        .map(|s| s.parse().map_err(|_| Error::config(format!("bad grid line: {line}"))))
                        .collect::<Result<_>>()?;
                    if dims.len() != 3 {
                        return Err(Error::config(format!("bad grid line: {line}")));
                    }
                    grid = Some((dims[0], dims[1], dims[2]));
                } else if let Some(spec) = rest.strip_prefix("box ") {
                    let vals: Vec<f64> = spec
                        .split_whitespace()
                        .map(|s| s.parse().map_err(|_| Error::config(format!("bad box line: {line}"))))
                        .collect::<Result<_>>()?;
                    if vals.len() != 6 {
                        return Err(Error::config(format!("bad box line: {line}")));
                    }
                    boxes = Some([vals[0], vals[1], vals[2], vals[3], vals[4], vals[5]]);
                } else if let Some(spec) = rest.strip_prefix("ystar ") {
                    y_star = Some(
                        spec.trim()
                            .parse()
                            .map_err(|_| Error::config(format!("bad ystar line: {line}")))?,
                    );
                }
                continue;
            }
            if in_tensors {
                tensor_lines.push(line.to_string());
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse().map_err(|_| Error::config(format!("bad data row: {line}"))))
                .collect::<Result<_>>()?;
            if vals.len() != 8 {
                return Err(Error::config(format!("expected 8 columns, got {}", vals.len())));
            }
            rows.push([
                vals[0], vals[1], vals[2], vals[3], vals[4], vals[5], vals[6], vals[7],
            ]);
        }

        let (n1, n2, nu) = grid.ok_or_else(|| Error::config("table file lacks a # grid line".to_string()))?;
        let bx = boxes.ok_or_else(|| Error::config("table file lacks a # box line".to_string()))?;
        let y_star = y_star.ok_or_else(|| Error::config("table file lacks a # ystar line".to_string()))?;
        if rows.len() != n1 * n2 * nu {
            return Err(Error::config(format!(
                "table file has {} rows, grid wants {}",
                rows.len(),
                n1 * n2 * nu
            )));
        }

        let mut a = vec![[0.0; 2]; rows.len()];
        let mut b = vec![0.0; rows.len()];
        let mut gstar = vec![[0.0; 2]; nu];
        for (idx, row) in rows.iter().enumerate() {
            a[idx] = [row[3], row[4]];
            b[idx] = row[5];
            gstar[idx % nu] = [row[6], row[7]];
        }

        let linear = if tensor_lines.is_empty() {
            None
        } else {
            let mut t = LinearTensors::identity();
            t.y_star = y_star;
            for line in &tensor_lines {
                let mut parts = line.split(',');
                let key = parts.next().unwrap_or("");
                let vals: Vec<f64> = parts
                    .map(|s| s.trim().parse().map_err(|_| Error::config(format!("bad tensor row: {line}"))))
                    .collect::<Result<_>>()?;
                match (key, vals.len()) {
                    ("a_hom", 4) => t.a_hom = [[vals[0], vals[1]], [vals[2], vals[3]]],
                    ("b_hom", 2) => t.b_hom = [vals[0], vals[1]],
                    ("c_hom", 1) => t.c_hom = vals[0],
                    ("d_hom", 1) => t.d_hom = vals[0],
                    ("e2", 2) => t.e2 = [vals[0], vals[1]],
                    ("e3", 2) => t.e3 = [vals[0], vals[1]],
                    _ => return Err(Error::config(format!("bad tensor row: {line}"))),
                }
            }
            Some(t)
        };

        Ok(EffectiveTable {
            xi1: GridAxis { min: bx[0], max: bx[1], n: n1 },
            xi2: GridAxis { min: bx[2], max: bx[3], n: n2 },
            u: GridAxis { min: bx[4], max: bx[5], n: nu },
            a,
            b,
            gstar,
            y_star,
            linear,
            clamp_warned: AtomicBool::new(false),
        })
    }
}

impl EffectiveLaw for EffectiveTable {
    fn a(&self, xi: [f64; 2], u: f64) -> [f64; 2] {
        if let Some(t) = &self.linear {
            return t.a_star(xi, u);
        }
        let (a1, _) = self.interp(|i| self.a[i][0], xi, u);
        let (a2, _) = self.interp(|i| self.a[i][1], xi, u);
        [a1, a2]
    }

    fn b(&self, xi: [f64; 2], u: f64) -> f64 {
        if let Some(t) = &self.linear {
            return t.b_star(xi, u);
        }
        self.interp(|i| self.b[i], xi, u).0
    }

    fn da_dxi(&self, xi: [f64; 2], u: f64) -> [[f64; 2]; 2] {
        if let Some(t) = &self.linear {
            return t.a_hom;
        }
        let (_, g1) = self.interp(|i| self.a[i][0], xi, u);
        let (_, g2) = self.interp(|i| self.a[i][1], xi, u);
        [[g1[0], g1[1]], [g2[0], g2[1]]]
    }

    fn da_du(&self, xi: [f64; 2], u: f64) -> [f64; 2] {
        if let Some(t) = &self.linear {
            return t.e2;
        }
        let (_, g1) = self.interp(|i| self.a[i][0], xi, u);
        let (_, g2) = self.interp(|i| self.a[i][1], xi, u);
        [g1[2], g2[2]]
    }

    fn db_dxi(&self, xi: [f64; 2], u: f64) -> [f64; 2] {
        if let Some(t) = &self.linear {
            return [t.b_hom[0] - t.e2[0], t.b_hom[1] - t.e2[1]];
        }
        let (_, g) = self.interp(|i| self.b[i], xi, u);
        [g[0], g[1]]
    }

    fn db_du(&self, xi: [f64; 2], u: f64) -> f64 {
        if let Some(t) = &self.linear {
            return t.c_hom;
        }
        self.interp(|i| self.b[i], xi, u).1[2]
    }

    fn gstar(&self, u: f64) -> [f64; 2] {
        self.interp_gstar(u).0
    }

    fn gstar_du(&self, u: f64) -> [f64; 2] {
        self.interp_gstar(u).1
    }

    fn y_star(&self) -> f64 {
        self.y_star
    }
}

/// Sample the effective maps on the grid of `spec`.
///
/// Nodes are solved in parallel and written back in index order, so the
/// result is bitwise independent of the thread schedule. For a linear flux
/// with gamma = identity, the split tensors are solved once and stored
/// alongside the sampled grid.
pub fn build_table(
    mesh: &TriangulatedDomain,
    map: &PeriodicMap,
    flux: &FluxModel,
    g: &BoundaryFluxModel,
    spec: TableSpec,
    tol: f64,
) -> Result<EffectiveTable> {
    if spec.n_xi < 2 || spec.n_u < 2 {
        return Err(Error::config(format!(
            "table grid must have at least 2 nodes per axis, got {}x{}x{}",
            spec.n_xi, spec.n_xi, spec.n_u
        )));
    }
    if !(spec.r_xi > 0.0 && spec.r_u > 0.0) {
        return Err(Error::config(format!(
            "table box radii must be positive, got r_xi={} r_u={}",
            spec.r_xi, spec.r_u
        )));
    }
    let xi1 = GridAxis::symmetric(spec.r_xi, spec.n_xi);
    let xi2 = GridAxis::symmetric(spec.r_xi, spec.n_xi);
    let uax = GridAxis::symmetric(spec.r_u, spec.n_u);

    let nodes: Vec<(usize, usize, usize)> = (0..xi1.n)
        .flat_map(|i| (0..xi2.n).flat_map(move |j| (0..uax.n).map(move |k| (i, j, k))))
        .collect();

    let solved: Vec<Result<([f64; 2], f64)>> = nodes
        .par_iter()
        .map(|&(i, j, k)| {
            let xi = [xi1.node(i), xi2.node(j)];
            let u = uax.node(k);
            let sol = solve_cell(mesh, map, flux, g, xi, u, tol).map_err(|e| Error::TableNode {
                xi1: xi[0],
                xi2: xi[1],
                u,
                source: Box::new(e),
            })?;
            Ok((effective_a(mesh, flux, &sol), effective_b(mesh, g, &sol)))
        })
        .collect();

    let mut a = vec![[0.0; 2]; nodes.len()];
    let mut b = vec![0.0; nodes.len()];
    for (flat, result) in solved.into_iter().enumerate() {
        let (av, bv) = result?;
        a[flat] = av;
        b[flat] = bv;
    }

    let gstar: Vec<[f64; 2]> = (0..uax.n)
        .map(|k| effective_g(mesh, g, uax.node(k)))
        .collect();

    let linear = if flux.is_linear() && (g.is_zero() || g.gamma == Gamma::Identity) {
        Some(solve_linear_split(mesh, map, flux, g, tol)?.tensors)
    } else {
        None
    };

    Ok(EffectiveTable {
        xi1,
        xi2,
        u: uax,
        a,
        b,
        gstar,
        y_star: mesh.area(),
        linear,
        clamp_warned: AtomicBool::new(false),
    })
}

/// Max relative gap between interpolated and directly solved `a*` at
/// `n_points` deterministic off-grid points.
pub fn interpolation_probe(
    table: &EffectiveTable,
    mesh: &TriangulatedDomain,
    map: &PeriodicMap,
    flux: &FluxModel,
    g: &BoundaryFluxModel,
    n_points: usize,
    seed: u64,
    tol: f64,
) -> Result<f64> {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n_points {
        // Stay strictly inside the box so the probe measures interpolation,
        // not clamping.
        let xi = [
            rng.gen_range(0.9 * table.xi1.min..0.9 * table.xi1.max),
            rng.gen_range(0.9 * table.xi2.min..0.9 * table.xi2.max),
        ];
        let u = rng.gen_range(0.9 * table.u.min..0.9 * table.u.max);
        let sol = solve_cell(mesh, map, flux, g, xi, u, tol)?;
        let direct = effective_a(mesh, flux, &sol);
        let interp = table.a(xi, u);
        let scale = (direct[0] * direct[0] + direct[1] * direct[1]).sqrt().max(1e-12);
        let gap = ((interp[0] - direct[0]).powi(2) + (interp[1] - direct[1]).powi(2)).sqrt();
        worst = worst.max(gap / scale);
    }
    Ok(worst)
}

/// Effective law that answers every query with a fresh cell solve (FE^2
/// style), memoized on the exact query bits.
pub struct NestedCellLaw<'a> {
    mesh: &'a TriangulatedDomain,
    map: &'a PeriodicMap,
    flux: &'a FluxModel,
    g: &'a BoundaryFluxModel,
    tol: f64,
    cache: Mutex<HashMap<(u64, u64, u64), EffectiveJet>>,
}

impl<'a> NestedCellLaw<'a> {
    pub fn new(
        mesh: &'a TriangulatedDomain,
        map: &'a PeriodicMap,
        flux: &'a FluxModel,
        g: &'a BoundaryFluxModel,
        tol: f64,
    ) -> Self {
        NestedCellLaw {
            mesh,
            map,
            flux,
            g,
            tol,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn cache_len(&self) -> usize {
        self.cache.lock().unwrap().len()
    }

    fn jet(&self, xi: [f64; 2], u: f64) -> EffectiveJet {
        let key = (xi[0].to_bits(), xi[1].to_bits(), u.to_bits());
        if let Some(hit) = self.cache.lock().unwrap().get(&key) {
            return *hit;
        }
        let sol = solve_cell(self.mesh, self.map, self.flux, self.g, xi, u, self.tol)
            .unwrap_or_else(|e| panic!("nested cell solve failed at xi=({}, {}), u={}: {e}", xi[0], xi[1], u));
        let jet = effective_jet(
            self.mesh,
            self.map,
            self.flux,
            self.g,
            &sol,
            DerivativeMode::Tangent,
            self.tol,
        )
        .unwrap_or_else(|e| panic!("nested tangent solve failed at xi=({}, {}), u={}: {e}", xi[0], xi[1], u));
        self.cache.lock().unwrap().insert(key, jet);
        jet
    }
}

impl EffectiveLaw for NestedCellLaw<'_> {
    fn a(&self, xi: [f64; 2], u: f64) -> [f64; 2] {
        self.jet(xi, u).a
    }

    fn b(&self, xi: [f64; 2], u: f64) -> f64 {
        self.jet(xi, u).b
    }

    fn da_dxi(&self, xi: [f64; 2], u: f64) -> [[f64; 2]; 2] {
        self.jet(xi, u).da_dxi
    }

    fn da_du(&self, xi: [f64; 2], u: f64) -> [f64; 2] {
        self.jet(xi, u).da_du
    }

    fn db_dxi(&self, xi: [f64; 2], u: f64) -> [f64; 2] {
        self.jet(xi, u).db_dxi
    }

    fn db_du(&self, xi: [f64; 2], u: f64) -> f64 {
        self.jet(xi, u).db_du
    }

    fn gstar(&self, u: f64) -> [f64; 2] {
        effective_g(self.mesh, self.g, u)
    }

    fn gstar_du(&self, u: f64) -> [f64; 2] {
        crate::cell::effective_g_du(self.mesh, self.g, u)
    }

    fn y_star(&self) -> f64 {
        self.mesh.area()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{MatrixField, ScalarField, SurfaceField};
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

    fn bound(alpha: SurfaceField, beta: SurfaceField, gamma: Gamma, mesh: &TriangulatedDomain) -> BoundaryFluxModel {
        let mut g = BoundaryFluxModel::new(alpha, beta, gamma);
        g.bind(mesh, [0.0, 0.0]);
        g
    }

    fn small_spec() -> TableSpec {
        TableSpec {
            r_xi: 2.0,
            r_u: 1.0,
            n_xi: 3,
            n_u: 3,
        }
    }

    #[test]
    fn no_hole_identity_table_is_the_identity() {
        let geom = CellGeometry::new(HoleShape::None, 0.25);
        let mesh = mesh_unit_cell(&geom).unwrap();
        let map = periodic_pairing(&mesh).unwrap();
        let flux = FluxModel::linear(MatrixField::Identity);
        let g = BoundaryFluxModel::zero();
        let table = build_table(&mesh, &map, &flux, &g, small_spec(), 1e-10).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    let idx = table.idx(i, j, k);
                    let xi = [table.xi1.node(i), table.xi2.node(j)];
                    assert!((table.a[idx][0] - xi[0]).abs() < 1e-12);
                    assert!((table.a[idx][1] - xi[1]).abs() < 1e-12);
                    assert!(table.b[idx].abs() < 1e-15);
                }
            }
        }
        for k in 0..3 {
            assert_eq!(table.gstar[k], [0.0, 0.0]);
        }
        let (gamma, c) = table.fit_coercivity();
        assert!(gamma > 0.99 && c.abs() < 1e-12, "fit ({gamma}, {c})");
    }

    #[test]
    fn interpolation_reproduces_grid_nodes_and_affine_data() {
        // Synthetic affine data: trilinear interpolation must reproduce it
        // everywhere, including its derivatives.
        let xi1 = GridAxis::symmetric(2.0, 4);
        let xi2 = GridAxis::symmetric(2.0, 3);
        let uax = GridAxis::symmetric(1.0, 3);
        let f = |xi: [f64; 2], u: f64| 0.5 + 2.0 * xi[0] - 1.5 * xi[1] + 3.0 * u;
        let mut a = Vec::new();
        let mut b = Vec::new();
        for i in 0..xi1.n {
            for j in 0..xi2.n {
                for k in 0..uax.n {
                    let xi = [xi1.node(i), xi2.node(j)];
                    let u = uax.node(k);
                    a.push([f(xi, u), -f(xi, u)]);
                    b.push(2.0 * f(xi, u));
                }
            }
        }
        let table = EffectiveTable {
            xi1,
            xi2,
            u: uax,
            a,
            b,
            gstar: vec![[1.0, -1.0], [0.0, 0.0], [-1.0, 1.0]],
            y_star: 1.0,
            linear: None,
            clamp_warned: AtomicBool::new(false),
        };
        for &xi in &[[0.3, -1.2], [1.9, 1.9], [-2.0, 2.0], [0.0, 0.0]] {
            for &u in &[-1.0, -0.37, 0.8] {
                let av = table.a(xi, u);
                assert!((av[0] - f(xi, u)).abs() < 1e-12, "a1 at {xi:?} {u}");
                assert!((av[1] + f(xi, u)).abs() < 1e-12);
                assert!((table.b(xi, u) - 2.0 * f(xi, u)).abs() < 1e-12);
                let da = table.da_dxi(xi, u);
                assert!((da[0][0] - 2.0).abs() < 1e-12 && (da[0][1] + 1.5).abs() < 1e-12);
                assert!((table.da_du(xi, u)[0] - 3.0).abs() < 1e-12);
                assert!((table.db_dxi(xi, u)[0] - 4.0).abs() < 1e-12);
                assert!((table.db_du(xi, u) - 6.0).abs() < 1e-12);
            }
        }
        // g* is affine in u with slope (-1, 1) on [-1, 1].
        let gs = table.gstar(0.5);
        assert!((gs[0] + 0.5).abs() < 1e-12 && (gs[1] - 0.5).abs() < 1e-12);
        assert!((table.gstar_du(0.5)[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn linear_case_nodes_match_the_affine_representation() {
        let (mesh, map) = disk_mesh(0.125);
        let flux = FluxModel::linear(MatrixField::SymAniso);
        let g = bound(SurfaceField::AngleCos, SurfaceField::AngleSin, Gamma::Identity, &mesh);
        let table = build_table(&mesh, &map, &flux, &g, small_spec(), 1e-10).unwrap();
        let t = table.linear.as_ref().expect("linear tensors stored");
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    let idx = table.idx(i, j, k);
                    let xi = [table.xi1.node(i), table.xi2.node(j)];
                    let u = table.u.node(k);
                    let a_affine = t.a_star(xi, u);
                    assert!(
                        (table.a[idx][0] - a_affine[0]).abs() < 1e-9
                            && (table.a[idx][1] - a_affine[1]).abs() < 1e-9,
                        "a* node ({i},{j},{k}) off affine by {:e}",
                        (table.a[idx][0] - a_affine[0]).abs().max((table.a[idx][1] - a_affine[1]).abs())
                    );
                    assert!((table.b[idx] - t.b_star(xi, u)).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let (mesh, map) = disk_mesh(0.25);
        let flux = FluxModel::linear(MatrixField::SymAniso);
        let g = bound(SurfaceField::AngleCos, SurfaceField::AngleSin, Gamma::Identity, &mesh);
        let table = build_table(&mesh, &map, &flux, &g, small_spec(), 1e-10).unwrap();
        let dir = std::env::temp_dir().join("perfcell-table-roundtrip");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("table.csv");
        table.write_csv(&path).unwrap();
        let back = EffectiveTable::read_csv(&path).unwrap();
        assert_eq!(table.xi1, back.xi1);
        assert_eq!(table.xi2, back.xi2);
        assert_eq!(table.u, back.u);
        assert_eq!(table.y_star.to_bits(), back.y_star.to_bits());
        for idx in 0..table.a.len() {
            assert_eq!(table.a[idx][0].to_bits(), back.a[idx][0].to_bits());
            assert_eq!(table.a[idx][1].to_bits(), back.a[idx][1].to_bits());
            assert_eq!(table.b[idx].to_bits(), back.b[idx].to_bits());
        }
        for k in 0..table.gstar.len() {
            assert_eq!(table.gstar[k][0].to_bits(), back.gstar[k][0].to_bits());
        }
        let t0 = table.linear.unwrap();
        let t1 = back.linear.unwrap();
        assert_eq!(t0.a_hom[0][0].to_bits(), t1.a_hom[0][0].to_bits());
        assert_eq!(t0.c_hom.to_bits(), t1.c_hom.to_bits());
        assert_eq!(t0.e3[1].to_bits(), t1.e3[1].to_bits());
    }

    #[test]
    fn interpolation_probe_stays_small_on_the_smooth_catalog() {
        let (mesh, map) = disk_mesh(0.125);
        let flux = FluxModel::nonlinear(ScalarField::TwoPlusSin, 0.5).unwrap();
        let g = bound(SurfaceField::AngleCos, SurfaceField::AngleSin, Gamma::SoftAbs, &mesh);
        let spec = TableSpec {
            r_xi: 2.0,
            r_u: 2.0,
            n_xi: 5,
            n_u: 5,
        };
        let table = build_table(&mesh, &map, &flux, &g, spec, 1e-10).unwrap();
        assert!(table.linear.is_none());
        let worst = interpolation_probe(&table, &mesh, &map, &flux, &g, 5, 42, 1e-10).unwrap();
        assert!(worst < 0.02, "interpolation gap {worst:.4}");
    }

    #[test]
    fn queries_outside_the_box_clamp_to_the_boundary() {
        let (mesh, map) = disk_mesh(0.25);
        let flux = FluxModel::linear(MatrixField::Identity);
        let g = BoundaryFluxModel::zero();
        let mut table = build_table(&mesh, &map, &flux, &g, small_spec(), 1e-10).unwrap();
        table.linear = None;
        let inside = table.a([2.0, 0.0], 0.0);
        let outside = table.a([5.0, 0.0], 0.0);
        assert_eq!(inside, outside);
        assert!(table.clamp_warned.load(Ordering::Relaxed));
    }

    #[test]
    fn nested_law_matches_direct_solves_and_memoizes() {
        let (mesh, map) = disk_mesh(0.25);
        let flux = FluxModel::nonlinear(ScalarField::Two, 0.4).unwrap();
        let g = bound(SurfaceField::Zero, SurfaceField::AngleCos, Gamma::SoftAbs, &mesh);
        let law = NestedCellLaw::new(&mesh, &map, &flux, &g, 1e-10);
        let xi = [0.7, -0.4];
        let u = 0.3;
        let a_law = law.a(xi, u);
        let sol = solve_cell(&mesh, &map, &flux, &g, xi, u, 1e-10).unwrap();
        let a_direct = effective_a(&mesh, &flux, &sol);
        assert!((a_law[0] - a_direct[0]).abs() < 1e-12);
        assert!((a_law[1] - a_direct[1]).abs() < 1e-12);
        assert_eq!(law.cache_len(), 1);
        let _ = law.b(xi, u);
        let _ = law.da_dxi(xi, u);
        assert_eq!(law.cache_len(), 1, "repeat queries must hit the memo");
    }
}
