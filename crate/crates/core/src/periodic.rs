//! Periodic degree-of-freedom identification on cell meshes.
//!
//! Opposite outer faces of the periodicity cell carry matching vertex
//! traces; each slave vertex (right or top face) is folded onto its master
//! (left or bottom). The four corners collapse to a single master through
//! the union of both face identifications. Folding happens at the linear
//! system level: assembly routes every vertex through `dof_of_vertex`, so
//! the periodicity constraint is exact by construction.

use crate::error::{Error, Result};
use crate::mesh::TriangulatedDomain;

#[derive(Debug, Clone)]
pub struct PeriodicMap {
    /// (slave vertex, master vertex) pairs after corner closure.
    pub pairs: Vec<(usize, usize)>,
    /// Lattice translation carrying each slave onto its master.
    pub translations: Vec<[f64; 2]>,
    /// Folded dof index for every mesh vertex.
    pub dof_of_vertex: Vec<usize>,
    pub n_dofs: usize,
}

impl PeriodicMap {
    /// Identity map (no folding), for meshes without periodicity.
    pub fn identity(n_vertices: usize) -> Self {
        PeriodicMap {
            pairs: Vec::new(),
            translations: Vec::new(),
            dof_of_vertex: (0..n_vertices).collect(),
            n_dofs: n_vertices,
        }
    }

    /// Expand a folded dof vector to nodal values on all mesh vertices.
    pub fn unfold(&self, dofs: &[f64]) -> Vec<f64> {
        assert_eq!(dofs.len(), self.n_dofs);
        self.dof_of_vertex.iter().map(|&d| dofs[d]).collect()
    }

    /// Restrict a nodal vector to folded dofs (masters keep their value).
    pub fn fold_nodal(&self, nodal: &[f64]) -> Vec<f64> {
        assert_eq!(nodal.len(), self.dof_of_vertex.len());
        let mut out = vec![0.0; self.n_dofs];
        for (v, &d) in self.dof_of_vertex.iter().enumerate() {
            out[d] = nodal[v];
        }
        out
    }
}

const MATCH_TOL: f64 = 1e-12;

/// Pair opposite-face vertices of a cell mesh built on `[-1/2, 1/2]^2`.
///
/// Pairing is by coordinate matching: a right-face vertex is the slave of
/// the left-face vertex with the same ordinate (difference below 1e-12),
/// and likewise top onto bottom. Corner classes are merged by union-find.
pub fn periodic_pairing(mesh: &TriangulatedDomain) -> Result<PeriodicMap> {
    let n = mesh.vertices.len();
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in &mesh.vertices {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }

    // Union-find with minimum-index roots, so every slave folds onto a
    // smaller-index master and dof numbering can be assigned in one pass.
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, v: usize) -> usize {
        let mut root = v;
        while parent[root] != root {
            root = parent[root];
        }
        let mut cur = v;
        while parent[cur] != root {
            let next = parent[cur];
            parent[cur] = root;
            cur = next;
        }
        root
    }
    let union = |parent: &mut Vec<usize>, a: usize, b: usize| {
        let (ra, rb) = (find(parent, a), find(parent, b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            parent[hi] = lo;
        }
    };

    // axis 0: fold right face onto left; axis 1: top onto bottom.
    for axis in 0..2 {
        let other = 1 - axis;
        let mut masters: Vec<(f64, usize)> = Vec::new();
        let mut slaves: Vec<(f64, usize)> = Vec::new();
        for (v, p) in mesh.vertices.iter().enumerate() {
            if (p[axis] - lo[axis]).abs() < MATCH_TOL {
                masters.push((p[other], v));
            } else if (p[axis] - hi[axis]).abs() < MATCH_TOL {
                slaves.push((p[other], v));
            }
        }
        masters.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        slaves.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        if masters.len() != slaves.len() {
            return Err(Error::Pairing(format!(
                "face traces along axis {axis} differ in size: {} vs {}",
                masters.len(),
                slaves.len()
            )));
        }
        for (m, s) in masters.iter().zip(slaves.iter()) {
            if (m.0 - s.0).abs() >= MATCH_TOL {
                return Err(Error::Pairing(format!(
                    "unmatched trace vertices along axis {axis}: master {} at {:.17e} vs \
                     slave {} at {:.17e}",
                    m.1, m.0, s.1, s.0
                )));
            }
            union(&mut parent, m.1, s.1);
        }
    }

    let mut dof_of_vertex = vec![usize::MAX; n];
    let mut n_dofs = 0;
    let mut pairs = Vec::new();
    let mut translations = Vec::new();
    for v in 0..n {
        let root = find(&mut parent, v);
        if root == v {
            dof_of_vertex[v] = n_dofs;
            n_dofs += 1;
        } else {
            dof_of_vertex[v] = dof_of_vertex[root];
            pairs.push((v, root));
            let pv = mesh.vertices[v];
            let pm = mesh.vertices[root];
            translations.push([(pm[0] - pv[0]).round(), (pm[1] - pv[1]).round()]);
        }
    }
    Ok(PeriodicMap {
        pairs,
        translations,
        dof_of_vertex,
        n_dofs,
    })
}
