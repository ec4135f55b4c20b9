//! Geometry of the periodicity cell `Y = [-1/2, 1/2]^2` with one inclusion.
//!
//! Every downstream consumer (meshing, surface quadrature, analytic checks)
//! sees the inclusion only through its discretized boundary polygon, so a
//! disk is *defined* here as its inscribed polygon: perimeters, areas and
//! surface integrals are exact for that polygon rather than approximate for
//! the circle.

use crate::error::{Error, Result};

pub const CELL_MIN: f64 = -0.5;
pub const CELL_MAX: f64 = 0.5;

/// Inclusion shape. The closure of the hole must lie strictly inside `Y`.
#[derive(Debug, Clone, PartialEq)]
pub enum HoleShape {
    None,
    Disk { center: [f64; 2], radius: f64 },
    Square { center: [f64; 2], half_width: f64 },
    Polygon { vertices: Vec<[f64; 2]> },
}

/// Unit-cell description: inclusion plus the target mesh size `h`.
#[derive(Debug, Clone)]
pub struct CellGeometry {
    pub hole: HoleShape,
    pub h: f64,
}

/// Number of segments of the polygon inscribed in a disk of radius `r` at
/// mesh size `h`: `ceil(2 pi r / h)` rounded up to a multiple of 4 (so the
/// polygon of a centered disk is symmetric under both axis reflections),
/// never fewer than 8.
pub fn disk_segments(radius: f64, h: f64) -> usize {
    let raw = (2.0 * std::f64::consts::PI * radius / h).ceil() as usize;
    let rounded = raw.div_ceil(4) * 4;
    rounded.max(8)
}

impl CellGeometry {
    pub fn new(hole: HoleShape, h: f64) -> Self {
        CellGeometry { hole, h }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h <= 0.25) {
            return Err(Error::MeshSize(self.h));
        }
        match &self.hole {
            HoleShape::None => Ok(()),
            HoleShape::Disk { radius, .. } if *radius <= 0.0 => Err(Error::HoleArea(0.0)),
            HoleShape::Square { half_width, .. } if *half_width <= 0.0 => Err(Error::HoleArea(0.0)),
            HoleShape::Polygon { vertices } if vertices.len() < 3 => {
                Err(Error::PolygonTooSmall(vertices.len()))
            }
            _ => {
                let poly = self.boundary_polygon().expect("hole present");
                let area = polygon_area(&poly);
                if area <= 0.0 && matches!(self.hole, HoleShape::Polygon { .. }) {
                    return Err(Error::PolygonOrientation);
                }
                if !(area > 0.0 && area < 1.0) {
                    return Err(Error::HoleArea(area));
                }
                if matches!(self.hole, HoleShape::Polygon { .. }) && !polygon_is_simple(&poly) {
                    return Err(Error::PolygonNotSimple);
                }
                let margin = poly
                    .iter()
                    .map(|p| CELL_MAX - p[0].abs().max(p[1].abs()))
                    .fold(f64::INFINITY, f64::min);
                if margin <= 1e-9 {
                    return Err(Error::HoleNearBoundary(margin.max(0.0)));
                }
                Ok(())
            }
        }
    }

    /// Discretized hole boundary as a closed counterclockwise loop (last
    /// vertex connects back to the first). `None` when there is no hole.
    ///
    /// Disk and square loops are generated with reflection-exact arithmetic:
    /// for a centered inclusion the vertex coordinates of mirror pairs are
    /// exact floating-point negations, which the mesher relies on to produce
    /// mirror-symmetric meshes.
    pub fn boundary_polygon(&self) -> Option<Vec<[f64; 2]>> {
        match &self.hole {
            HoleShape::None => None,
            HoleShape::Disk { center, radius } => {
                Some(disk_polygon(*center, *radius, disk_segments(*radius, self.h)))
            }
            HoleShape::Square { center, half_width } => {
                Some(square_polygon(*center, *half_width, self.h))
            }
            HoleShape::Polygon { vertices } => Some(subdivide_polygon(vertices, self.h)),
        }
    }

    /// Reference point strictly inside the hole (polygon vertex centroid).
    pub fn hole_center(&self) -> Option<[f64; 2]> {
        match &self.hole {
            HoleShape::None => None,
            HoleShape::Disk { center, .. } | HoleShape::Square { center, .. } => Some(*center),
            HoleShape::Polygon { vertices } => {
                let n = vertices.len() as f64;
                let mut c = [0.0, 0.0];
                for v in vertices {
                    c[0] += v[0];
                    c[1] += v[1];
                }
                Some([c[0] / n, c[1] / n])
            }
        }
    }
}

/// Inscribed polygon of a disk, `segments` must be a multiple of 4.
///
/// Only the first quadrant's vertices are produced by `cos`/`sin`; the rest
/// are reflections, so mirror pairs are bit-exact.
fn disk_polygon(center: [f64; 2], radius: f64, segments: usize) -> Vec<[f64; 2]> {
    assert!(segments >= 8 && segments % 4 == 0);
    let q = segments / 4;
    let mut pts = vec![[0.0f64; 2]; segments];
    for k in 0..=q {
        let theta = 2.0 * std::f64::consts::PI * k as f64 / segments as f64;
        let (dx, dy) = if k == 0 {
            (radius, 0.0)
        } else if k == q {
            (0.0, radius)
        } else {
            (radius * theta.cos(), radius * theta.sin())
        };
        pts[k] = [center[0] + dx, center[1] + dy];
    }
    for k in 1..=q {
        // Second quadrant: reflect the first across the vertical axis.
        pts[q + k] = [2.0 * center[0] - pts[q - k][0], pts[q - k][1]];
    }
    for k in 1..2 * q {
        // Lower half: reflect the upper across the horizontal axis.
        pts[segments - k] = [pts[k][0], 2.0 * center[1] - pts[k][1]];
    }
    pts
}

/// Axis-aligned square boundary subdivided so every edge has length <= h.
fn square_polygon(center: [f64; 2], half_width: f64, h: f64) -> Vec<[f64; 2]> {
    let s = ((2.0 * half_width) / h).ceil() as i64;
    let s = s.max(1);
    // Coordinate along a side: center + hw * (2j - s)/s; the integer
    // numerator negates exactly under j -> s - j, giving exact mirror pairs.
    let coord = |j: i64, c: f64| c + half_width * ((2 * j - s) as f64) / (s as f64);
    let mut pts = Vec::with_capacity(4 * s as usize);
    for j in 0..s {
        pts.push([coord(j, center[0]), center[1] - half_width]); // bottom, left to right
    }
    for j in 0..s {
        pts.push([center[0] + half_width, coord(j, center[1])]); // right, bottom to top
    }
    for j in 0..s {
        pts.push([coord(s - j, center[0]), center[1] + half_width]); // top, right to left
    }
    for j in 0..s {
        pts.push([center[0] - half_width, coord(s - j, center[1])]); // left, top to bottom
    }
    pts
}

/// User polygon with every edge subdivided to length <= h.
fn subdivide_polygon(vertices: &[[f64; 2]], h: f64) -> Vec<[f64; 2]> {
    let mut pts = Vec::new();
    let n = vertices.len();
    for i in 0..n {
        let a = vertices[i];
        let b = vertices[(i + 1) % n];
        let len = dist(a, b);
        let pieces = (len / h).ceil().max(1.0) as usize;
        for j in 0..pieces {
            let t = j as f64 / pieces as f64;
            pts.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        }
    }
    pts
}

pub fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Signed area (shoelace); positive for counterclockwise loops.
pub fn polygon_area(pts: &[[f64; 2]]) -> f64 {
    let n = pts.len();
    let mut acc = 0.0;
    for i in 0..n {
        let a = pts[i];
        let b = pts[(i + 1) % n];
        acc += a[0] * b[1] - b[0] * a[1];
    }
    0.5 * acc
}

pub fn polygon_perimeter(pts: &[[f64; 2]]) -> f64 {
    let n = pts.len();
    (0..n).map(|i| dist(pts[i], pts[(i + 1) % n])).sum()
}

/// Even-odd (crossing number) point-in-polygon test.
pub fn polygon_contains(pts: &[[f64; 2]], p: [f64; 2]) -> bool {
    let n = pts.len();
    let mut inside = false;
    for i in 0..n {
        let a = pts[i];
        let b = pts[(i + 1) % n];
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x_cross = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
            if p[0] < x_cross {
                inside = !inside;
            }
        }
    }
    inside
}

/// Distance from `p` to the closed polyline through `pts`.
pub fn polygon_boundary_distance(pts: &[[f64; 2]], p: [f64; 2]) -> f64 {
    let n = pts.len();
    (0..n)
        .map(|i| point_segment_distance(p, pts[i], pts[(i + 1) % n]))
        .fold(f64::INFINITY, f64::min)
}

pub fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    if len2 == 0.0 {
        return dist(p, a);
    }
    let t = ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0);
    dist(p, [a[0] + t * ab[0], a[1] + t * ab[1]])
}

/// Twice the signed area of triangle `(a, b, c)`.
pub fn orient2d(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// Proper-crossing test for open segments `(a, b)` and `(c, d)`.
///
/// Shared endpoints do not count as crossings; collinear overlap does.
pub fn segments_cross(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let d1 = orient2d(c, d, a);
    let d2 = orient2d(c, d, b);
    let d3 = orient2d(a, b, c);
    let d4 = orient2d(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |o: f64, p: [f64; 2], q: [f64; 2], r: [f64; 2]| {
        o == 0.0
            && r[0] >= p[0].min(q[0])
            && r[0] <= p[0].max(q[0])
            && r[1] >= p[1].min(q[1])
            && r[1] <= p[1].max(q[1])
    };
    // Collinear overlap of more than a single shared endpoint.
    if on(d1, c, d, a) && on(d2, c, d, b) {
        return a != c && a != d && b != c && b != d;
    }
    false
}

/// O(n^2) simplicity check: no two non-adjacent edges intersect.
pub fn polygon_is_simple(pts: &[[f64; 2]]) -> bool {
    let n = pts.len();
    for i in 0..n {
        let (a, b) = (pts[i], pts[(i + 1) % n]);
        for j in (i + 1)..n {
            if j == i || (j + 1) % n == i || (i + 1) % n == j {
                continue;
            }
            let (c, d) = (pts[j], pts[(j + 1) % n]);
            if segments_cross(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_polygon_is_mirror_exact() {
        let geom = CellGeometry::new(
            HoleShape::Disk {
                center: [0.0, 0.0],
                radius: 0.25,
            },
            1.0 / 16.0,
        );
        let poly = geom.boundary_polygon().unwrap();
        let m = poly.len();
        assert_eq!(m % 4, 0);
        // Bitwise up to the sign of zero at the four axis vertices.
        let bits = |v: f64| (v + 0.0).to_bits();
        for k in 1..m {
            let refl_y = poly[m - k];
            assert_eq!(bits(poly[k][0]), bits(refl_y[0]));
            assert_eq!(bits(-poly[k][1]), bits(refl_y[1]));
        }
        for k in 0..=m / 2 {
            let refl_x = poly[(m / 2 - k) % m];
            assert_eq!(bits(-poly[k][0]), bits(refl_x[0]));
            assert_eq!(bits(poly[k][1]), bits(refl_x[1]));
        }
    }

    #[test]
    fn inscribed_polygon_perimeter_formula() {
        let r = 0.25;
        let h = 1.0 / 32.0;
        let m = disk_segments(r, h);
        let geom = CellGeometry::new(
            HoleShape::Disk {
                center: [0.0, 0.0],
                radius: r,
            },
            h,
        );
        let poly = geom.boundary_polygon().unwrap();
        let exact = 2.0 * m as f64 * r * (std::f64::consts::PI / m as f64).sin();
        assert!((polygon_perimeter(&poly) - exact).abs() < 1e-12);
        // Within 1% of the true circle at this resolution.
        assert!((polygon_perimeter(&poly) - 2.0 * std::f64::consts::PI * r).abs() < 0.01);
    }

    #[test]
    fn square_polygon_exact_perimeter() {
        let geom = CellGeometry::new(
            HoleShape::Square {
                center: [0.0, 0.0],
                half_width: 0.25,
            },
            1.0 / 8.0,
        );
        let poly = geom.boundary_polygon().unwrap();
        assert!((polygon_perimeter(&poly) - 2.0).abs() < 1e-13);
        assert!((polygon_area(&poly) - 0.25).abs() < 1e-14);
    }

    #[test]
    fn validate_rejects_oversized_and_touching_holes() {
        let touching = CellGeometry::new(
            HoleShape::Disk {
                center: [0.3, 0.0],
                radius: 0.25,
            },
            0.125,
        );
        assert!(matches!(
            touching.validate(),
            Err(Error::HoleNearBoundary(_))
        ));
        let bad_h = CellGeometry::new(HoleShape::None, 0.3);
        assert!(matches!(bad_h.validate(), Err(Error::MeshSize(_))));
    }

    #[test]
    fn polygon_predicates() {
        let square = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        assert!(polygon_contains(&square, [0.5, 0.5]));
        assert!(!polygon_contains(&square, [1.5, 0.5]));
        assert!(polygon_is_simple(&square));
        let bowtie = vec![[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]];
        assert!(!polygon_is_simple(&bowtie));
        assert!((polygon_boundary_distance(&square, [0.5, 0.25]) - 0.25).abs() < 1e-15);
    }
}
