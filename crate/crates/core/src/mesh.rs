//! Triangulation of the periodicity cell and tiling of the perforated
//! macroscopic domain.
//!
//! The background grid splits every grid square into 4 triangles about its
//! center ("union jack"), which is invariant under both axis reflections;
//! carving a centered symmetric hole therefore yields an exactly
//! mirror-symmetric mesh, which downstream isotropy checks rely on.
//!
//! Hole cutting is carve-and-stitch: grid vertices inside or near the hole
//! polygon are removed, the exact polygon boundary points are inserted, and
//! the gap ring between the removal frontier and the polygon is stitched by
//! an angular-sweep triangulation (ear clipping as fallback for non-star
//! configurations). Lawson flips then restore local Delaunay quality. The
//! hole boundary in the final mesh is exactly the inclusion polygon, edge by
//! edge, so surface lengths and quadrature are exact for the polygon.
//!
//! All steps are deterministic in (geometry, h): flips are applied in rounds
//! with a mirror-invariant priority, and every collection is index-ordered.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::geometry::{
    polygon_area, polygon_boundary_distance, polygon_contains, segments_cross, CellGeometry,
};

/// Fraction of a grid spacing within which a grid vertex counts as "near"
/// the hole boundary and is removed before stitching.
const SNAP_FRAC: f64 = 0.40;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeTag {
    Outer,
    Hole,
}

impl EdgeTag {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeTag::Outer => "outer",
            EdgeTag::Hole => "hole",
        }
    }
}

/// Canonical undirected edge key.
#[inline]
pub fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// A conforming P1 triangle mesh.
///
/// `lattice` stores, per vertex, its half-step lattice coordinates on the
/// background grid (in `[0, 2*grid_div]^2`), or `None` for stitched hole
/// points; tiling uses it to merge shared cell-boundary vertices bitwise.
#[derive(Debug, Clone)]
pub struct TriangulatedDomain {
    pub vertices: Vec<[f64; 2]>,
    /// Counterclockwise vertex triples.
    pub triangles: Vec<[usize; 3]>,
    pub edge_tags: BTreeMap<(usize, usize), EdgeTag>,
    /// Per-triangle lattice cell of a tiled mesh; `None` for cell meshes.
    pub cell_index: Option<Vec<[i32; 2]>>,
    /// Target mesh size the mesh was built for.
    pub h_target: f64,
    /// Achieved maximum triangle circumdiameter.
    pub mesh_size: f64,
    /// Background grid subdivision count (squares per side).
    pub grid_div: u32,
    pub lattice: Vec<Option<(u32, u32)>>,
    /// Hole boundary vertices in loop order (counterclockwise); empty when
    /// the domain has no hole.
    pub hole_loop: Vec<usize>,
}

impl TriangulatedDomain {
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn area(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                crate::fem::tri_area(
                    self.vertices[t[0]],
                    self.vertices[t[1]],
                    self.vertices[t[2]],
                )
            })
            .sum()
    }

    /// Hole boundary edges in loop order.
    pub fn hole_edges(&self) -> Vec<(usize, usize)> {
        let n = self.hole_loop.len();
        (0..n)
            .map(|i| (self.hole_loop[i], self.hole_loop[(i + 1) % n]))
            .collect()
    }

    pub fn hole_perimeter(&self) -> f64 {
        self.hole_edges()
            .iter()
            .map(|&(a, b)| crate::geometry::dist(self.vertices[a], self.vertices[b]))
            .sum()
    }

    /// Edges tagged as lying on the outer boundary.
    pub fn outer_edges(&self) -> Vec<(usize, usize)> {
        self.edge_tags
            .iter()
            .filter(|(_, &t)| t == EdgeTag::Outer)
            .map(|(&k, _)| k)
            .collect()
    }

    fn compute_mesh_size(&mut self) {
        self.mesh_size = self
            .triangles
            .iter()
            .map(|t| {
                circumdiameter(
                    self.vertices[t[0]],
                    self.vertices[t[1]],
                    self.vertices[t[2]],
                )
            })
            .fold(0.0, f64::max);
    }
}

pub fn circumdiameter(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    let la = crate::geometry::dist(b, c);
    let lb = crate::geometry::dist(a, c);
    let lc = crate::geometry::dist(a, b);
    let area = crate::fem::tri_area(a, b, c).abs();
    if area == 0.0 {
        return f64::INFINITY;
    }
    la * lb * lc / (2.0 * area)
}

// ---------------------------------------------------------------------------
// Union-jack background grid
// ---------------------------------------------------------------------------

/// Build the union-jack grid with `ng` squares per side. `coord` maps a
/// half-step lattice index `d` in `[0, 2*ng]` to a physical coordinate.
fn union_jack(ng: u32, coord: &dyn Fn(u32) -> f64) -> TriangulatedDomain {
    let ngs = ng as usize;
    let n_grid = (ngs + 1) * (ngs + 1);
    let mut vertices = Vec::with_capacity(n_grid + ngs * ngs);
    let mut lattice = Vec::with_capacity(n_grid + ngs * ngs);
    for j in 0..=ngs {
        for i in 0..=ngs {
            vertices.push([coord(2 * i as u32), coord(2 * j as u32)]);
            lattice.push(Some((2 * i as u32, 2 * j as u32)));
        }
    }
    for j in 0..ngs {
        for i in 0..ngs {
            vertices.push([coord(2 * i as u32 + 1), coord(2 * j as u32 + 1)]);
            lattice.push(Some((2 * i as u32 + 1, 2 * j as u32 + 1)));
        }
    }
    let gv = |i: usize, j: usize| j * (ngs + 1) + i;
    let cv = |i: usize, j: usize| n_grid + j * ngs + i;
    let mut triangles = Vec::with_capacity(4 * ngs * ngs);
    for j in 0..ngs {
        for i in 0..ngs {
            let (v00, v10, v01, v11) = (gv(i, j), gv(i + 1, j), gv(i, j + 1), gv(i + 1, j + 1));
            let c = cv(i, j);
            triangles.push([v00, v10, c]);
            triangles.push([v10, v11, c]);
            triangles.push([v11, v01, c]);
            triangles.push([v01, v00, c]);
        }
    }
    let mut edge_tags = BTreeMap::new();
    for j in 0..ngs {
        for side in [0, ngs] {
            edge_tags.insert(edge_key(gv(side, j), gv(side, j + 1)), EdgeTag::Outer);
            edge_tags.insert(edge_key(gv(j, side), gv(j + 1, side)), EdgeTag::Outer);
        }
    }
    TriangulatedDomain {
        vertices,
        triangles,
        edge_tags,
        cell_index: None,
        h_target: 0.0,
        mesh_size: 0.0,
        grid_div: ng,
        lattice,
        hole_loop: Vec::new(),
    }
}

/// Half-step lattice coordinate on the centered cell `[-1/2, 1/2]`: the
/// integer numerator `d - ng` negates exactly under `d -> 2*ng - d`, so
/// mirror vertices have bit-exact mirrored coordinates.
fn cell_coord(d: u32, ng: u32) -> f64 {
    (d as i64 - ng as i64) as f64 / (2 * ng as i64) as f64
}

/// Squares per side for target size `h`, rounded up to even so the cell's
/// center lines are grid lines (symmetric holes then meet the grid on-axis).
fn grid_div_for(h: f64) -> u32 {
    let ng = (1.0 / h).ceil() as u32;
    ng + ng % 2
}

/// Mesh the unit periodicity cell `Y = [-1/2, 1/2]^2`, cutting the hole
/// described by `geom` if present.
pub fn mesh_unit_cell(geom: &CellGeometry) -> Result<TriangulatedDomain> {
    geom.validate()?;
    let ng = grid_div_for(geom.h);
    let mut mesh = union_jack(ng, &|d| cell_coord(d, ng));
    mesh.h_target = geom.h;
    let Some(poly) = geom.boundary_polygon() else {
        mesh.compute_mesh_size();
        return Ok(mesh);
    };
    let center = geom.hole_center().expect("hole present");
    let mirror_exact = carve_hole(&mut mesh, &poly, center, ng)?;
    // Edge flips improve ring triangle quality but cannot be guaranteed to
    // commute with reflection, so a mirror-exact ring is left untouched.
    if !mirror_exact {
        lawson_flip_rounds(&mut mesh);
    }
    mesh.compute_mesh_size();
    Ok(mesh)
}

/// Mesh the unperforated macro domain `[0, 1]^2` at mesh size `h`.
pub fn mesh_unit_square(h: f64) -> Result<TriangulatedDomain> {
    if !(h > 0.0 && h <= 0.25) {
        return Err(Error::MeshSize(h));
    }
    let ng = grid_div_for(h);
    let mut mesh = union_jack(ng, &|d| d as f64 / (2 * ng) as f64);
    mesh.h_target = h;
    mesh.compute_mesh_size();
    Ok(mesh)
}

// ---------------------------------------------------------------------------
// Hole carving
// ---------------------------------------------------------------------------

fn carve_hole(
    mesh: &mut TriangulatedDomain,
    poly: &[[f64; 2]],
    center: [f64; 2],
    ng: u32,
) -> Result<bool> {
    let spacing = 1.0 / ng as f64;
    let snap_tol = SNAP_FRAC * spacing;

    // The removal band around the hole must stay clear of the cell boundary,
    // otherwise the periodic trace would be damaged.
    let clearance = poly
        .iter()
        .map(|p| 0.5 - p[0].abs().max(p[1].abs()))
        .fold(f64::INFINITY, f64::min);
    if clearance + 1e-12 < spacing {
        return Err(Error::HoleNearBoundary(clearance));
    }

    // Bounding box prefilter for the removal test.
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in poly {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }

    let n_verts = mesh.vertices.len();
    let mut removed = vec![false; n_verts];
    for (v, &p) in mesh.vertices.iter().enumerate() {
        if p[0] < lo[0] - snap_tol
            || p[0] > hi[0] + snap_tol
            || p[1] < lo[1] - snap_tol
            || p[1] > hi[1] + snap_tol
        {
            continue;
        }
        if polygon_contains(poly, p) || polygon_boundary_distance(poly, p) < snap_tol {
            removed[v] = true;
        }
    }
    if !removed.iter().any(|&r| r) {
        return Err(Error::HoleUnderResolved {
            h: mesh.h_target,
            detail: "no grid vertex falls inside or near the hole".into(),
        });
    }
    let on_outer = |lat: Option<(u32, u32)>| {
        lat.is_some_and(|(dx, dy)| dx == 0 || dy == 0 || dx == 2 * ng || dy == 2 * ng)
    };
    for v in 0..n_verts {
        if removed[v] && on_outer(mesh.lattice[v]) {
            return Err(Error::HoleNearBoundary(clearance));
        }
    }

    let mut kept_tris = Vec::new();
    let mut dropped_area = 0.0;
    for t in &mesh.triangles {
        if t.iter().any(|&v| removed[v]) {
            if t.iter()
                .filter(|&&v| on_outer(mesh.lattice[v]))
                .count()
                >= 2
            {
                // A dropped triangle with an edge on the cell boundary would
                // leave a gap in the periodic trace.
                return Err(Error::HoleNearBoundary(clearance));
            }
            dropped_area += crate::fem::tri_area(
                mesh.vertices[t[0]],
                mesh.vertices[t[1]],
                mesh.vertices[t[2]],
            );
        } else {
            kept_tris.push(*t);
        }
    }
    let ring_area = dropped_area - polygon_area(poly);
    if ring_area <= 0.0 {
        return Err(Error::HoleUnderResolved {
            h: mesh.h_target,
            detail: format!("removal region smaller than the hole (ring area {ring_area:.3e})"),
        });
    }

    // Frontier: edges used by exactly one kept triangle, excluding the cell
    // boundary. They must chain into a single closed loop around the hole.
    let mut edge_use: HashMap<(usize, usize), usize> = HashMap::new();
    for t in &kept_tris {
        for k in 0..3 {
            *edge_use.entry(edge_key(t[k], t[(k + 1) % 3])).or_insert(0) += 1;
        }
    }
    let mut frontier_adj: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (&(a, b), &uses) in edge_use.iter() {
        if uses == 1 && !(on_outer(mesh.lattice[a]) && on_outer(mesh.lattice[b])) {
            frontier_adj.entry(a).or_default().push(b);
            frontier_adj.entry(b).or_default().push(a);
        }
    }
    let frontier = chain_loop(&frontier_adj).ok_or_else(|| Error::HoleUnderResolved {
        h: mesh.h_target,
        detail: "removal frontier is not a single closed loop".into(),
    })?;

    // Compact vertices actually used by kept triangles (a kept vertex whose
    // triangles were all dropped would otherwise dangle), then append the
    // polygon points.
    let mut used = vec![false; n_verts];
    for t in &kept_tris {
        for &v in t {
            used[v] = true;
        }
    }
    let mut new_id = vec![usize::MAX; n_verts];
    let mut vertices = Vec::new();
    let mut lattice = Vec::new();
    for (v, &u) in used.iter().enumerate() {
        if u {
            new_id[v] = vertices.len();
            vertices.push(mesh.vertices[v]);
            lattice.push(mesh.lattice[v]);
        }
    }
    let first_hole = vertices.len();
    for &p in poly {
        vertices.push(p);
        lattice.push(None);
    }
    let hole_loop: Vec<usize> = (first_hole..first_hole + poly.len()).collect();

    let mut triangles: Vec<[usize; 3]> = kept_tris
        .iter()
        .map(|t| [new_id[t[0]], new_id[t[1]], new_id[t[2]]])
        .collect();

    // Ring loops in new indexing. The frontier loop is oriented
    // counterclockwise around the hole, matching the polygon.
    let mut outer_loop: Vec<usize> = frontier.iter().map(|&v| new_id[v]).collect();
    let loop_pts: Vec<[f64; 2]> = outer_loop.iter().map(|&v| vertices[v]).collect();
    if polygon_area(&loop_pts) < 0.0 {
        outer_loop.reverse();
    }

    let (ring, mirror_exact) =
        stitch_ring(&hole_loop, &outer_loop, &vertices, center, ring_area)?;
    triangles.extend(ring);

    // Retag: outer edges survive untouched (their vertices were never
    // removed); hole edges are the polygon loop.
    let mut edge_tags = BTreeMap::new();
    for (&(a, b), &tag) in mesh.edge_tags.iter() {
        if tag == EdgeTag::Outer {
            edge_tags.insert(edge_key(new_id[a], new_id[b]), EdgeTag::Outer);
        }
    }
    for i in 0..hole_loop.len() {
        let a = hole_loop[i];
        let b = hole_loop[(i + 1) % hole_loop.len()];
        edge_tags.insert(edge_key(a, b), EdgeTag::Hole);
    }

    mesh.vertices = vertices;
    mesh.lattice = lattice;
    mesh.triangles = triangles;
    mesh.edge_tags = edge_tags;
    mesh.hole_loop = hole_loop;
    Ok(mirror_exact)
}

/// Chain an undirected 2-regular adjacency into a single closed loop.
fn chain_loop(adj: &BTreeMap<usize, Vec<usize>>) -> Option<Vec<usize>> {
    if adj.is_empty() || adj.values().any(|n| n.len() != 2) {
        return None;
    }
    let start = *adj.keys().next().unwrap();
    let mut loop_verts = vec![start];
    let mut prev = start;
    let mut cur = adj[&start][0];
    while cur != start {
        loop_verts.push(cur);
        let nbrs = &adj[&cur];
        let next = if nbrs[0] == prev { nbrs[1] } else { nbrs[0] };
        prev = cur;
        cur = next;
        if loop_verts.len() > adj.len() {
            return None;
        }
    }
    if loop_verts.len() == adj.len() {
        Some(loop_verts)
    } else {
        None
    }
}

// ---------------------------------------------------------------------------
// Ring stitching
// ---------------------------------------------------------------------------

/// Triangulate the annulus between the hole polygon (inner loop) and the
/// removal frontier (outer loop). Both loops are counterclockwise. Tries the
/// quadrant-reflection stitch (exact mirror symmetry for symmetric holes),
/// then the angular zipper, then bridged ear clipping. The flag reports
/// whether the mirror-exact stitch was used.
fn stitch_ring(
    inner: &[usize],
    outer: &[usize],
    pos: &[[f64; 2]],
    center: [f64; 2],
    ring_area: f64,
) -> Result<(Vec<[usize; 3]>, bool)> {
    if let Some(tris) = symmetric_ring(inner, outer, pos, center) {
        if ring_valid(&tris, pos, ring_area) {
            return Ok((tris, true));
        }
    }
    if let Some(tris) = zip_ring(inner, outer, pos, center) {
        if ring_valid(&tris, pos, ring_area) {
            return Ok((tris, false));
        }
    }
    let tris = earclip_ring(inner, outer, pos)?;
    if ring_valid(&tris, pos, ring_area) {
        Ok((tris, false))
    } else {
        Err(Error::RingStitch(format!(
            "stitched ring area {:.6e} does not match expected {:.6e}",
            tris.iter()
                .map(|t| crate::fem::tri_area(pos[t[0]], pos[t[1]], pos[t[2]]).abs())
                .sum::<f64>(),
            ring_area
        )))
    }
}

fn ring_valid(tris: &[[usize; 3]], pos: &[[f64; 2]], ring_area: f64) -> bool {
    let mut total = 0.0;
    for t in tris {
        let a = crate::fem::tri_area(pos[t[0]], pos[t[1]], pos[t[2]]);
        if a <= 1e-15 {
            return false;
        }
        total += a;
    }
    (total - ring_area).abs() <= 1e-9 * ring_area.max(1e-6)
}

/// Mirror-exact stitch for loops symmetric about both center axes.
///
/// One quadrant of the annulus is triangulated as an angular strip between
/// the two arcs, then reflected across the vertical and horizontal axes by
/// coordinate lookup. Every ring triangle therefore has an exact mirror
/// partner, so reflection maps the triangulation onto itself bitwise. That
/// is what keeps off-diagonal homogenized tensor entries at round-off level
/// for symmetric holes, where discretization error alone would leave O(h^2).
fn symmetric_ring(
    inner: &[usize],
    outer: &[usize],
    pos: &[[f64; 2]],
    center: [f64; 2],
) -> Option<Vec<[usize; 3]>> {
    let key = |p: [f64; 2]| ((p[0] + 0.0).to_bits(), (p[1] + 0.0).to_bits());
    let flip_x = move |p: [f64; 2]| [2.0 * center[0] - p[0], p[1]];
    let flip_y = move |p: [f64; 2]| [p[0], 2.0 * center[1] - p[1]];

    let mut index: HashMap<(u64, u64), usize> = HashMap::new();
    for &v in inner.iter().chain(outer.iter()) {
        index.insert(key(pos[v]), v);
    }
    for &v in inner.iter().chain(outer.iter()) {
        if !index.contains_key(&key(flip_x(pos[v])))
            || !index.contains_key(&key(flip_y(pos[v])))
        {
            return None;
        }
    }

    // First-quadrant arc: from the vertex on the positive horizontal
    // semiaxis to the one on the positive vertical semiaxis, inclusive.
    // Each loop must cross each semiaxis at exactly one vertex.
    let arc = |loop_v: &[usize]| -> Option<Vec<usize>> {
        let n = loop_v.len();
        let semiaxis = |v: usize| -> Option<usize> {
            let (dx, dy) = (pos[v][0] - center[0], pos[v][1] - center[1]);
            match (dx == 0.0, dy == 0.0) {
                (false, true) => Some(if dx > 0.0 { 0 } else { 2 }),
                (true, false) => Some(if dy > 0.0 { 1 } else { 3 }),
                _ => None,
            }
        };
        let mut counts = [0usize; 4];
        let mut start = None;
        for (k, &v) in loop_v.iter().enumerate() {
            if let Some(s) = semiaxis(v) {
                counts[s] += 1;
                if s == 0 {
                    start = Some(k);
                }
            }
        }
        if counts != [1, 1, 1, 1] {
            return None;
        }
        let s = start?;
        let mut a = vec![loop_v[s]];
        let mut k = (s + 1) % n;
        while semiaxis(loop_v[k]) != Some(1) {
            a.push(loop_v[k]);
            k = (k + 1) % n;
            if a.len() > n {
                return None;
            }
        }
        a.push(loop_v[k]);
        Some(a)
    };
    let ia = arc(inner)?;
    let oa = arc(outer)?;

    // Strictly increasing angles confine the arcs to the first quadrant.
    let monotone = |arc: &[usize]| {
        let a: Vec<f64> = arc
            .iter()
            .map(|&v| (pos[v][1] - center[1]).atan2(pos[v][0] - center[0]))
            .collect();
        a.windows(2).all(|w| w[0] < w[1])
    };
    if !monotone(&ia) || !monotone(&oa) {
        return None;
    }

    // Strip across the quadrant: dynamic program over monotone advances
    // minimizing the largest circumdiameter, so frontier zigzags that nearly
    // align with a polygon vertex do not force sliver triangles. Degenerate
    // or inverted candidates cost infinity; full coverage is checked by the
    // caller through the ring area.
    let (ni, no) = (ia.len(), oa.len());
    let tri_cost = |t: [usize; 3]| match orient_ccw(t, pos) {
        Some(_) => circumdiameter(pos[t[0]], pos[t[1]], pos[t[2]]),
        None => f64::INFINITY,
    };
    let idx = |i: usize, o: usize| i * no + o;
    let mut cost = vec![f64::INFINITY; ni * no];
    let mut from_inner = vec![false; ni * no];
    cost[0] = 0.0;
    for i in 0..ni {
        for o in 0..no {
            if i == 0 && o == 0 {
                continue;
            }
            let mut best = f64::INFINITY;
            let mut via_inner = false;
            if i > 0 {
                let c = cost[idx(i - 1, o)].max(tri_cost([ia[i - 1], oa[o], ia[i]]));
                if c < best {
                    best = c;
                    via_inner = true;
                }
            }
            if o > 0 {
                let c = cost[idx(i, o - 1)].max(tri_cost([ia[i], oa[o - 1], oa[o]]));
                if c < best {
                    best = c;
                    via_inner = false;
                }
            }
            cost[idx(i, o)] = best;
            from_inner[idx(i, o)] = via_inner;
        }
    }
    if !cost[idx(ni - 1, no - 1)].is_finite() {
        return None;
    }
    let mut q1: Vec<[usize; 3]> = Vec::with_capacity(ni + no - 2);
    let (mut i, mut o) = (ni - 1, no - 1);
    while i > 0 || o > 0 {
        if i > 0 && (o == 0 || from_inner[idx(i, o)]) {
            q1.push(orient_ccw([ia[i - 1], oa[o], ia[i]], pos)?);
            i -= 1;
        } else {
            q1.push(orient_ccw([ia[i], oa[o - 1], oa[o]], pos)?);
            o -= 1;
        }
    }

    let reflect = |tris: &[[usize; 3]], f: &dyn Fn([f64; 2]) -> [f64; 2]| {
        let mut out = Vec::with_capacity(tris.len());
        for t in tris {
            let a = *index.get(&key(f(pos[t[0]])))?;
            let b = *index.get(&key(f(pos[t[1]])))?;
            let c = *index.get(&key(f(pos[t[2]])))?;
            // A reflection reverses orientation.
            out.push([a, c, b]);
        }
        Some(out)
    };
    let q2 = reflect(&q1, &flip_x)?;
    let mut upper = q1;
    upper.extend(q2);
    let lower = reflect(&upper, &flip_y)?;
    let mut tris = upper;
    tris.extend(lower);
    Some(tris)
}

/// Angular-sweep zipper between two nested star-shaped loops.
fn zip_ring(
    inner: &[usize],
    outer: &[usize],
    pos: &[[f64; 2]],
    center: [f64; 2],
) -> Option<Vec<[usize; 3]>> {
    let angles = |loop_v: &[usize]| -> Option<Vec<f64>> {
        // Unwrapped, strictly increasing angles; fails when the loop is not
        // star-shaped about `center`.
        let raw: Vec<f64> = loop_v
            .iter()
            .map(|&v| (pos[v][1] - center[1]).atan2(pos[v][0] - center[0]))
            .collect();
        let mut unwrapped = Vec::with_capacity(raw.len());
        let mut offset = 0.0;
        for (k, &a) in raw.iter().enumerate() {
            let mut val = a + offset;
            if k > 0 && val <= unwrapped[k - 1] {
                offset += 2.0 * std::f64::consts::PI;
                val = a + offset;
                if val <= unwrapped[k - 1] {
                    return None;
                }
            }
            unwrapped.push(val);
        }
        if unwrapped[raw.len() - 1] - unwrapped[0] >= 2.0 * std::f64::consts::PI {
            return None;
        }
        Some(unwrapped)
    };

    // Rotate each loop to start at the vertex of smallest absolute angle.
    // For a hole symmetric about the horizontal axis through `center`, both
    // loops then start at a self-mirror vertex on that axis, which together
    // with the tie rule below makes the stitch reflection-equivariant, so
    // mesh mirror symmetry survives the ring exactly.
    let rotate_min = |loop_v: &[usize]| -> Vec<usize> {
        let k = loop_v
            .iter()
            .enumerate()
            .min_by(|(_, &a), (_, &b)| {
                let aa = (pos[a][1] - center[1]).atan2(pos[a][0] - center[0]).abs();
                let ab = (pos[b][1] - center[1]).atan2(pos[b][0] - center[0]).abs();
                aa.partial_cmp(&ab)
                    .unwrap()
                    .then_with(|| pos[b][0].partial_cmp(&pos[a][0]).unwrap())
            })
            .map(|(i, _)| i)
            .unwrap();
        let mut v = loop_v[k..].to_vec();
        v.extend_from_slice(&loop_v[..k]);
        v
    };

    let inn = rotate_min(inner);
    let out = rotate_min(outer);
    let ai = angles(&inn)?;
    let ao = angles(&out)?;
    let (ni, no) = (inn.len(), out.len());

    let two_pi = 2.0 * std::f64::consts::PI;
    let mut tris = Vec::with_capacity(ni + no);
    let (mut i, mut o) = (0usize, 0usize);
    // Advance whichever loop's next vertex comes first in angle; ties break
    // toward the inner loop, which is a type-based (mirror-invariant) rule.
    while i < ni || o < no {
        let next_i = if i < ni {
            if i + 1 < ni {
                ai[i + 1]
            } else {
                ai[0] + two_pi
            }
        } else {
            f64::INFINITY
        };
        let next_o = if o < no {
            if o + 1 < no {
                ao[o + 1]
            } else {
                ao[0] + two_pi
            }
        } else {
            f64::INFINITY
        };
        let vi = inn[i % ni];
        let vo = out[o % no];
        if next_i <= next_o {
            let vi_next = inn[(i + 1) % ni];
            tris.push(orient_ccw([vi, vo, vi_next], pos)?);
            i += 1;
        } else {
            let vo_next = out[(o + 1) % no];
            tris.push(orient_ccw([vi, vo, vo_next], pos)?);
            o += 1;
        }
    }
    Some(tris)
}

fn orient_ccw(t: [usize; 3], pos: &[[f64; 2]]) -> Option<[usize; 3]> {
    let a = crate::fem::tri_area(pos[t[0]], pos[t[1]], pos[t[2]]);
    if a.abs() <= 1e-16 {
        return None;
    }
    Some(if a > 0.0 { t } else { [t[0], t[2], t[1]] })
}

/// Bridged ear clipping of the annulus: connect the hole loop to the outer
/// loop through a mutually visible vertex pair, then clip the resulting
/// weakly simple polygon.
fn earclip_ring(inner: &[usize], outer: &[usize], pos: &[[f64; 2]]) -> Result<Vec<[usize; 3]>> {
    // Bridge from the rightmost inner vertex to the nearest visible outer
    // vertex.
    let b_idx = (0..inner.len())
        .max_by(|&p, &q| {
            let (a, b) = (pos[inner[p]], pos[inner[q]]);
            (a[0], a[1]).partial_cmp(&(b[0], b[1])).unwrap()
        })
        .unwrap();
    let bp = pos[inner[b_idx]];
    let mut candidates: Vec<usize> = (0..outer.len()).collect();
    candidates.sort_by(|&p, &q| {
        let dp = crate::geometry::dist(pos[outer[p]], bp);
        let dq = crate::geometry::dist(pos[outer[q]], bp);
        dp.partial_cmp(&dq).unwrap().then(p.cmp(&q))
    });
    let all_edges = |loop_v: &[usize]| -> Vec<([f64; 2], [f64; 2])> {
        (0..loop_v.len())
            .map(|k| (pos[loop_v[k]], pos[loop_v[(k + 1) % loop_v.len()]]))
            .collect()
    };
    let mut edges = all_edges(inner);
    edges.extend(all_edges(outer));
    let f_idx = candidates
        .into_iter()
        .find(|&c| {
            let fp = pos[outer[c]];
            edges.iter().all(|&(a, b)| !segments_cross(bp, fp, a, b))
        })
        .ok_or_else(|| Error::RingStitch("no visible bridge between hole and frontier".into()))?;

    // Merged weakly simple polygon: outer loop (counterclockwise) from the
    // bridge vertex, back to it, over the bridge, inner loop clockwise, and
    // back over the bridge.
    let mut merged: Vec<usize> = Vec::with_capacity(inner.len() + outer.len() + 2);
    for k in 0..outer.len() {
        merged.push(outer[(f_idx + k) % outer.len()]);
    }
    merged.push(outer[f_idx]);
    for k in 0..inner.len() {
        merged.push(inner[(b_idx + inner.len() - k) % inner.len()]);
    }
    merged.push(inner[b_idx]);

    earclip_polygon(&merged, pos)
}

/// Ear clipping for a weakly simple counterclockwise polygon (duplicate
/// bridge vertices allowed). Degenerate ears are removed without emitting a
/// triangle.
fn earclip_polygon(loop_v: &[usize], pos: &[[f64; 2]]) -> Result<Vec<[usize; 3]>> {
    let mut v: Vec<usize> = loop_v.to_vec();
    let mut tris = Vec::with_capacity(v.len().saturating_sub(2));
    let scale: f64 = {
        let xs: Vec<f64> = v.iter().map(|&i| pos[i][0]).collect();
        let span = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - xs.iter().cloned().fold(f64::INFINITY, f64::min);
        span.max(1e-6)
    };
    let eps_area = 1e-14 * scale * scale;
    while v.len() > 3 {
        let n = v.len();
        let mut clipped = false;
        for k in 0..n {
            let (ip, iv, inx) = (v[(k + n - 1) % n], v[k], v[(k + 1) % n]);
            if ip == inx {
                // Bridge spur: remove the doubled-back vertex.
                v.remove(k);
                clipped = true;
                break;
            }
            let (a, b, c) = (pos[ip], pos[iv], pos[inx]);
            let area2 = crate::geometry::orient2d(a, b, c);
            if area2 <= eps_area {
                continue;
            }
            let mut ear = true;
            for &w in &v {
                if w == ip || w == iv || w == inx {
                    continue;
                }
                if point_in_triangle_closed(pos[w], a, b, c, eps_area) {
                    ear = false;
                    break;
                }
            }
            if ear {
                tris.push([ip, iv, inx]);
                v.remove(k);
                clipped = true;
                break;
            }
        }
        if !clipped {
            // Only degenerate (collinear) corners remain; drop the flattest.
            let n = v.len();
            let k = (0..n)
                .min_by(|&p, &q| {
                    let ar = |k: usize| {
                        crate::geometry::orient2d(
                            pos[v[(k + n - 1) % n]],
                            pos[v[k]],
                            pos[v[(k + 1) % n]],
                        )
                        .abs()
                    };
                    ar(p).partial_cmp(&ar(q)).unwrap()
                })
                .unwrap();
            let flat = crate::geometry::orient2d(
                pos[v[(k + n - 1) % n]],
                pos[v[k]],
                pos[v[(k + 1) % n]],
            );
            if flat.abs() > eps_area {
                return Err(Error::RingStitch("ear clipping stalled".into()));
            }
            v.remove(k);
        }
    }
    if v.len() == 3 {
        let area2 = crate::geometry::orient2d(pos[v[0]], pos[v[1]], pos[v[2]]);
        if area2 > eps_area {
            tris.push([v[0], v[1], v[2]]);
        }
    }
    Ok(tris)
}

fn point_in_triangle_closed(p: [f64; 2], a: [f64; 2], b: [f64; 2], c: [f64; 2], eps: f64) -> bool {
    let d1 = crate::geometry::orient2d(a, b, p);
    let d2 = crate::geometry::orient2d(b, c, p);
    let d3 = crate::geometry::orient2d(c, a, p);
    d1 >= -eps && d2 >= -eps && d3 >= -eps
}

// ---------------------------------------------------------------------------
// Lawson flips
// ---------------------------------------------------------------------------

/// Strict in-circle test: positive when `d` lies inside the circumcircle of
/// the counterclockwise triangle `(a, b, c)`.
fn incircle(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> f64 {
    let (ax, ay) = (a[0] - d[0], a[1] - d[1]);
    let (bx, by) = (b[0] - d[0], b[1] - d[1]);
    let (cx, cy) = (c[0] - d[0], c[1] - d[1]);
    let (a2, b2, c2) = (ax * ax + ay * ay, bx * bx + by * by, cx * cx + cy * cy);
    ax * (by * c2 - b2 * cy) - ay * (bx * c2 - b2 * cx) + a2 * (bx * cy - by * cx)
}

/// Delaunay smoothing by rounds of independent Lawson flips.
///
/// Candidates are gathered against the current triangulation, ordered by a
/// mirror-invariant priority (in-circle excess, then canonical edge key),
/// and applied greedily on triangle-disjoint edges. Cocircular ties fall
/// below the threshold and are never flipped, which keeps the union-jack
/// grid intact and the whole pass reflection-equivariant on symmetric input.
fn lawson_flip_rounds(mesh: &mut TriangulatedDomain) {
    const MAX_ROUNDS: usize = 200;
    for _ in 0..MAX_ROUNDS {
        let mut edge_tris: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (ti, t) in mesh.triangles.iter().enumerate() {
            for k in 0..3 {
                edge_tris
                    .entry(edge_key(t[k], t[(k + 1) % 3]))
                    .or_default()
                    .push(ti);
            }
        }
        let mut candidates: Vec<(f64, (usize, usize), usize, usize)> = Vec::new();
        for (&key, tris) in edge_tris.iter() {
            if tris.len() != 2 || mesh.edge_tags.contains_key(&key) {
                continue;
            }
            if let Some(excess) = flip_gain(mesh, key, tris[0], tris[1]) {
                candidates.push((excess, key, tris[0], tris[1]));
            }
        }
        if candidates.is_empty() {
            return;
        }
        candidates.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap()
                .then_with(|| a.1.cmp(&b.1))
        });
        let mut touched = vec![false; mesh.triangles.len()];
        let mut any = false;
        for (_, key, t1, t2) in candidates {
            if touched[t1] || touched[t2] {
                continue;
            }
            apply_flip(mesh, key, t1, t2);
            touched[t1] = true;
            touched[t2] = true;
            any = true;
        }
        if !any {
            return;
        }
    }
}

/// In-circle excess of flipping `key`, or `None` when the flip is not
/// admissible (non-convex quad) or not an improvement beyond the tie
/// threshold.
fn flip_gain(
    mesh: &TriangulatedDomain,
    key: (usize, usize),
    t1: usize,
    t2: usize,
) -> Option<f64> {
    let (a, b) = key;
    let c = opposite_vertex(mesh.triangles[t1], a, b)?;
    let d = opposite_vertex(mesh.triangles[t2], a, b)?;
    let (pa, pb, pc, pd) = (
        mesh.vertices[a],
        mesh.vertices[b],
        mesh.vertices[c],
        mesh.vertices[d],
    );
    // New triangles must be strictly positive either way around.
    let n1 = crate::geometry::orient2d(pc, pa, pd);
    let n2 = crate::geometry::orient2d(pd, pb, pc);
    let scale = crate::geometry::dist(pa, pb)
        .max(crate::geometry::dist(pc, pd))
        .max(1e-12);
    if n1 <= 1e-13 * scale * scale || n2 <= 1e-13 * scale * scale {
        return None;
    }
    // Orient (a, b, c) counterclockwise before the in-circle test.
    let det = if crate::geometry::orient2d(pa, pb, pc) > 0.0 {
        incircle(pa, pb, pc, pd)
    } else {
        incircle(pb, pa, pc, pd)
    };
    let tie = 1e-12 * scale.powi(4);
    if det > tie {
        Some(det)
    } else {
        None
    }
}

fn opposite_vertex(t: [usize; 3], a: usize, b: usize) -> Option<usize> {
    t.iter().copied().find(|&v| v != a && v != b)
}

fn apply_flip(mesh: &mut TriangulatedDomain, key: (usize, usize), t1: usize, t2: usize) {
    let (a, b) = key;
    let c = opposite_vertex(mesh.triangles[t1], a, b).unwrap();
    let d = opposite_vertex(mesh.triangles[t2], a, b).unwrap();
    let ccw = |t: [usize; 3]| {
        if crate::fem::tri_area(
            mesh.vertices[t[0]],
            mesh.vertices[t[1]],
            mesh.vertices[t[2]],
        ) > 0.0
        {
            t
        } else {
            [t[0], t[2], t[1]]
        }
    };
    mesh.triangles[t1] = ccw([c, a, d]);
    mesh.triangles[t2] = ccw([d, b, c]);
}

// ---------------------------------------------------------------------------
// Tiling
// ---------------------------------------------------------------------------

/// One fine-mesh hole edge with its provenance in the reference cell.
#[derive(Debug, Clone, Copy)]
pub struct FineHoleEdge {
    /// Endpoints in the tiled mesh, in cell-loop order.
    pub va: usize,
    pub vb: usize,
    /// Lattice cell containing the edge.
    pub cell: [i32; 2],
    /// Index of the source edge in the cell mesh's hole loop.
    pub src_edge: usize,
}

/// Perforated macroscopic domain `Omega_eps = [0,1]^2` minus `eps`-scaled
/// holes: interior lattice cells carry the perforated cell mesh, cells
/// touching the outer boundary carry the unperforated one.
#[derive(Debug, Clone)]
pub struct PerforatedMesh {
    pub domain: TriangulatedDomain,
    /// Perforated reference cell the interior tiles were copied from.
    pub cell_mesh: TriangulatedDomain,
    /// Unperforated reference cell used for the boundary frame.
    pub frame_mesh: TriangulatedDomain,
    pub n: u32,
    pub eps: f64,
    /// All hole edges with their source-cell provenance, iteration order:
    /// lattice cell (row-major), then loop order.
    pub hole_edges: Vec<FineHoleEdge>,
}

impl PerforatedMesh {
    /// Number of perforated lattice cells.
    pub fn n_perforated(&self) -> usize {
        let n = self.n as usize;
        (n - 2) * (n - 2)
    }

    pub fn is_perforated_cell(&self, cell: [i32; 2]) -> bool {
        let n = self.n as i32;
        cell[0] >= 1 && cell[0] <= n - 2 && cell[1] >= 1 && cell[1] <= n - 2
    }

    /// Reference-cell coordinates `y` of a point `x` in lattice cell `m`.
    pub fn local_y(&self, cell: [i32; 2], x: [f64; 2]) -> [f64; 2] {
        [
            x[0] * self.n as f64 - cell[0] as f64 - 0.5,
            x[1] * self.n as f64 - cell[1] as f64 - 0.5,
        ]
    }

    /// Total hole boundary length.
    pub fn surface_measure(&self) -> f64 {
        self.hole_edges
            .iter()
            .map(|e| crate::geometry::dist(self.domain.vertices[e.va], self.domain.vertices[e.vb]))
            .sum()
    }
}

/// Tile `n x n` scaled copies of the periodicity cell over `[0, 1]^2`.
pub fn tile_perforated_domain(geom: &CellGeometry, n: u32) -> Result<PerforatedMesh> {
    if n < 3 {
        return Err(Error::TilingTooCoarse(n));
    }
    let cell_mesh = mesh_unit_cell(geom)?;
    let frame_geom = CellGeometry::new(crate::geometry::HoleShape::None, geom.h);
    let frame_mesh = mesh_unit_cell(&frame_geom)?;
    let ng = cell_mesh.grid_div;
    assert_eq!(ng, frame_mesh.grid_div);

    let big = 2 * ng as u64 * n as u64;
    let mut vertices: Vec<[f64; 2]> = Vec::new();
    let mut lattice: Vec<Option<(u32, u32)>> = Vec::new();
    let mut shared: HashMap<(u64, u64), usize> = HashMap::new();
    let mut triangles: Vec<[usize; 3]> = Vec::new();
    let mut cell_of: Vec<[i32; 2]> = Vec::new();
    let mut edge_tags: BTreeMap<(usize, usize), EdgeTag> = BTreeMap::new();
    let mut hole_edges: Vec<FineHoleEdge> = Vec::new();

    for my in 0..n {
        for mx in 0..n {
            let interior = mx >= 1 && mx < n - 1 && my >= 1 && my < n - 1;
            let src = if interior { &cell_mesh } else { &frame_mesh };
            let mut vmap = vec![usize::MAX; src.vertices.len()];
            for (v, &p) in src.vertices.iter().enumerate() {
                let id = match src.lattice[v] {
                    Some((dx, dy)) => {
                        let gx = mx as u64 * 2 * ng as u64 + dx as u64;
                        let gy = my as u64 * 2 * ng as u64 + dy as u64;
                        let on_face =
                            dx == 0 || dy == 0 || dx == 2 * ng || dy == 2 * ng;
                        if on_face {
                            *shared.entry((gx, gy)).or_insert_with(|| {
                                vertices.push([gx as f64 / big as f64, gy as f64 / big as f64]);
                                lattice.push(None);
                                vertices.len() - 1
                            })
                        } else {
                            vertices.push([gx as f64 / big as f64, gy as f64 / big as f64]);
                            lattice.push(None);
                            vertices.len() - 1
                        }
                    }
                    None => {
                        // Hole point: strictly interior to its cell.
                        let x = (p[0] + mx as f64 + 0.5) / n as f64;
                        let y = (p[1] + my as f64 + 0.5) / n as f64;
                        vertices.push([x, y]);
                        lattice.push(None);
                        vertices.len() - 1
                    }
                };
                vmap[v] = id;
            }
            for t in &src.triangles {
                triangles.push([vmap[t[0]], vmap[t[1]], vmap[t[2]]]);
                cell_of.push([mx as i32, my as i32]);
            }
            if interior {
                let loop_len = src.hole_loop.len();
                for i in 0..loop_len {
                    let a = vmap[src.hole_loop[i]];
                    let b = vmap[src.hole_loop[(i + 1) % loop_len]];
                    edge_tags.insert(edge_key(a, b), EdgeTag::Hole);
                    hole_edges.push(FineHoleEdge {
                        va: a,
                        vb: b,
                        cell: [mx as i32, my as i32],
                        src_edge: i,
                    });
                }
            }
        }
    }

    // Outer boundary edges: consecutive lattice nodes on the domain edge.
    let on_domain_edge = |gxy: (u64, u64)| {
        gxy.0 == 0 || gxy.1 == 0 || gxy.0 == big || gxy.1 == big
    };
    let mut boundary_nodes: Vec<((u64, u64), usize)> = shared
        .iter()
        .filter(|(&g, _)| on_domain_edge(g))
        .map(|(&g, &v)| (g, v))
        .collect();
    boundary_nodes.sort();
    let node_at: HashMap<(u64, u64), usize> = boundary_nodes.iter().copied().collect();
    for (&(gx, gy), &v) in node_at.iter() {
        // Walk toward increasing coordinate along each domain edge; steps of
        // one grid square (lattice stride 2).
        for (dx, dy) in [(2u64, 0u64), (0, 2)] {
            let next = (gx + dx, gy + dy);
            if next.0 > big || next.1 > big || !on_domain_edge((gx, gy)) || !on_domain_edge(next) {
                continue;
            }
            // Both nodes must be on the same domain side.
            let same_side = (gx == 0 && next.0 == 0)
                || (gy == 0 && next.1 == 0)
                || (gx == big && next.0 == big)
                || (gy == big && next.1 == big);
            if !same_side {
                continue;
            }
            if let Some(&w) = node_at.get(&next) {
                edge_tags.insert(edge_key(v, w), EdgeTag::Outer);
            }
        }
    }

    let mut domain = TriangulatedDomain {
        vertices,
        triangles,
        edge_tags,
        cell_index: Some(cell_of),
        h_target: geom.h / n as f64,
        mesh_size: 0.0,
        grid_div: ng * n,
        lattice,
        hole_loop: Vec::new(),
    };
    domain.compute_mesh_size();

    Ok(PerforatedMesh {
        domain,
        cell_mesh,
        frame_mesh,
        n,
        eps: 1.0 / n as f64,
        hole_edges,
    })
}

// ---------------------------------------------------------------------------
// Point location
// ---------------------------------------------------------------------------

/// Uniform-bin point locator over an arbitrary triangulation, with a
/// nearest-vertex fallback for points outside the mesh (inside the hole).
pub struct TriLocator<'a> {
    mesh: &'a TriangulatedDomain,
    bins: Vec<Vec<u32>>,
    nx: usize,
    ny: usize,
    lo: [f64; 2],
    inv_cell: [f64; 2],
}

pub enum Located {
    /// Containing triangle and barycentric coordinates.
    Inside(usize, [f64; 3]),
    /// Point lies in no triangle (e.g. inside the hole): nearest mesh vertex.
    NearestVertex(usize),
}

impl<'a> TriLocator<'a> {
    pub fn new(mesh: &'a TriangulatedDomain) -> Self {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in &mesh.vertices {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let nt = mesh.triangles.len().max(1);
        let target = (nt as f64).sqrt().ceil() as usize;
        let (nx, ny) = (target.max(1), target.max(1));
        let span = [
            (hi[0] - lo[0]).max(1e-12),
            (hi[1] - lo[1]).max(1e-12),
        ];
        let inv_cell = [nx as f64 / span[0], ny as f64 / span[1]];
        let mut bins = vec![Vec::new(); nx * ny];
        for (ti, t) in mesh.triangles.iter().enumerate() {
            let (mut tlo, mut thi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
            for &v in t {
                for k in 0..2 {
                    tlo[k] = tlo[k].min(mesh.vertices[v][k]);
                    thi[k] = thi[k].max(mesh.vertices[v][k]);
                }
            }
            let bx0 = (((tlo[0] - lo[0]) * inv_cell[0]) as usize).min(nx - 1);
            let bx1 = (((thi[0] - lo[0]) * inv_cell[0]) as usize).min(nx - 1);
            let by0 = (((tlo[1] - lo[1]) * inv_cell[1]) as usize).min(ny - 1);
            let by1 = (((thi[1] - lo[1]) * inv_cell[1]) as usize).min(ny - 1);
            for by in by0..=by1 {
                for bx in bx0..=bx1 {
                    bins[by * nx + bx].push(ti as u32);
                }
            }
        }
        TriLocator {
            mesh,
            bins,
            nx,
            ny,
            lo,
            inv_cell,
        }
    }

    pub fn locate(&self, p: [f64; 2]) -> Located {
        let bx = (((p[0] - self.lo[0]) * self.inv_cell[0]) as isize)
            .clamp(0, self.nx as isize - 1) as usize;
        let by = (((p[1] - self.lo[1]) * self.inv_cell[1]) as isize)
            .clamp(0, self.ny as isize - 1) as usize;
        const EPS: f64 = 1e-12;
        for &ti in &self.bins[by * self.nx + bx] {
            let t = self.mesh.triangles[ti as usize];
            let bc = crate::fem::barycentric(
                p,
                self.mesh.vertices[t[0]],
                self.mesh.vertices[t[1]],
                self.mesh.vertices[t[2]],
            );
            if bc.iter().all(|&l| l >= -EPS) {
                return Located::Inside(ti as usize, bc);
            }
        }
        // Widen the search before giving up on containment.
        for ring in 1..=2usize {
            for by2 in by.saturating_sub(ring)..=(by + ring).min(self.ny - 1) {
                for bx2 in bx.saturating_sub(ring)..=(bx + ring).min(self.nx - 1) {
                    for &ti in &self.bins[by2 * self.nx + bx2] {
                        let t = self.mesh.triangles[ti as usize];
                        let bc = crate::fem::barycentric(
                            p,
                            self.mesh.vertices[t[0]],
                            self.mesh.vertices[t[1]],
                            self.mesh.vertices[t[2]],
                        );
                        if bc.iter().all(|&l| l >= -EPS) {
                            return Located::Inside(ti as usize, bc);
                        }
                    }
                }
            }
        }
        let nearest = self
            .mesh
            .vertices
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                let da = crate::geometry::dist(**a, p);
                let db = crate::geometry::dist(**b, p);
                da.partial_cmp(&db).unwrap()
            })
            .map(|(i, _)| i)
            .unwrap();
        Located::NearestVertex(nearest)
    }

    /// Evaluate a nodal field at `p`, extending by nearest vertex value
    /// where `p` is not covered (hole interior).
    pub fn eval(&self, nodal: &[f64], p: [f64; 2]) -> f64 {
        match self.locate(p) {
            Located::Inside(ti, bc) => {
                let t = self.mesh.triangles[ti];
                bc[0] * nodal[t[0]] + bc[1] * nodal[t[1]] + bc[2] * nodal[t[2]]
            }
            Located::NearestVertex(v) => nodal[v],
        }
    }
}
