//! Structured ring triangulations of the disk `B(r)`.
//!
//! Vertices sit on concentric rings; every ring carries a multiple of eight
//! nodes so that the coordinate axes and diagonals are mesh lines. Optional
//! interface radii become rings, which keeps radial coefficient jumps on
//! element edges.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::ops::Range;

use crate::error::{invalid, Error, Result};

pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ring {
    pub radius: f64,
    pub first: usize,
    pub count: usize,
}

#[derive(Debug, Clone)]
pub struct DiskMesh {
    radius: f64,
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    rings: Vec<Ring>,
    h: f64,
    min_angle_deg: f64,
    locator: Locator,
}

pub const MIN_ANGLE_DEG: f64 = 20.0;

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Node `j` of `count` equally spaced points on the circle of radius `r`,
/// with exact coordinates on the axes and diagonals.
fn ring_point(r: f64, j: usize, count: usize) -> Point {
    if r == 0.0 {
        return [0.0, 0.0];
    }
    if (8 * j) % count == 0 {
        let octant = 8 * j / count;
        let d = r * FRAC_1_SQRT_2;
        return match octant {
            0 => [r, 0.0],
            1 => [d, d],
            2 => [0.0, r],
            3 => [-d, d],
            4 => [-r, 0.0],
            5 => [-d, -d],
            6 => [0.0, -r],
            _ => [d, -d],
        };
    }
    let theta = 2.0 * PI * j as f64 / count as f64;
    [r * theta.cos(), r * theta.sin()]
}

fn ring_radii(r: f64, interfaces: &[f64], radial_step: f64) -> Vec<f64> {
    let mut stops: Vec<f64> = interfaces.iter().copied().filter(|&b| b > 0.0 && b < r).collect();
    stops.sort_by(f64::total_cmp);
    stops.dedup();
    stops.push(r);
    let mut radii = vec![0.0];
    let mut prev = 0.0;
    for stop in stops {
        let count = ((stop - prev) / radial_step).ceil().max(1.0) as usize;
        for i in 1..=count {
            radii.push(if i == count { stop } else { prev + (stop - prev) * i as f64 / count as f64 });
        }
        prev = stop;
    }
    radii
}

fn build(r: f64, interfaces: &[f64], arc_step: f64) -> DiskMesh {
    let radii = ring_radii(r, interfaces, arc_step * 3f64.sqrt() / 2.0);
    let mut vertices = Vec::new();
    let mut rings = Vec::with_capacity(radii.len());
    let mut per_sector_prev = 0usize;
    for &rho in &radii {
        let per_sector = if rho == 0.0 {
            0
        } else {
            ((2.0 * PI * rho / (8.0 * arc_step)).round() as usize).max(1).max(per_sector_prev)
        };
        let count = if rho == 0.0 { 1 } else { 8 * per_sector };
        let first = vertices.len();
        vertices.extend((0..count).map(|j| ring_point(rho, j, count)));
        rings.push(Ring { radius: rho, first, count });
        per_sector_prev = per_sector;
    }

    let mut triangles = Vec::new();
    for k in 1..rings.len() {
        let (inner, outer) = (rings[k - 1], rings[k]);
        let m_in = if inner.count == 1 { 0 } else { inner.count / 8 };
        let m_out = outer.count / 8;
        let in_idx = |s: usize, l: usize| {
            if m_in == 0 {
                inner.first
            } else {
                inner.first + (s * m_in + l) % inner.count
            }
        };
        let out_idx = |s: usize, l: usize| outer.first + (s * m_out + l) % outer.count;
        for s in 0..8 {
            let (mut i, mut j) = (0, 0);
            while i < m_in || j < m_out {
                let advance_outer = if i == m_in {
                    true
                } else if j == m_out {
                    false
                } else {
                    let a = dist(vertices[in_idx(s, i)], vertices[out_idx(s, j + 1)]);
                    let b = dist(vertices[out_idx(s, j)], vertices[in_idx(s, i + 1)]);
                    a <= b
                };
                let tri = if advance_outer {
                    j += 1;
                    [in_idx(s, i), out_idx(s, j - 1), out_idx(s, j)]
                } else {
                    i += 1;
                    [in_idx(s, i - 1), out_idx(s, j), in_idx(s, i)]
                };
                let [a, b, c] = tri;
                if cross(sub(vertices[b], vertices[a]), sub(vertices[c], vertices[a])) < 0.0 {
                    triangles.push([a, c, b]);
                } else {
                    triangles.push(tri);
                }
            }
        }
    }

    let mut h: f64 = 0.0;
    let mut min_angle = f64::INFINITY;
    for t in &triangles {
        let p = [vertices[t[0]], vertices[t[1]], vertices[t[2]]];
        let e = [dist(p[1], p[2]), dist(p[2], p[0]), dist(p[0], p[1])];
        h = h.max(e[0]).max(e[1]).max(e[2]);
        for i in 0..3 {
            let (a, b, c) = (e[i], e[(i + 1) % 3], e[(i + 2) % 3]);
            let cos = ((b * b + c * c - a * a) / (2.0 * b * c)).clamp(-1.0, 1.0);
            min_angle = min_angle.min(cos.acos().to_degrees());
        }
    }
    let locator = Locator::new(&vertices, &triangles, r, h);
    DiskMesh { radius: r, vertices, triangles, rings, h, min_angle_deg: min_angle, locator }
}

/// Quasi-uniform triangulation of `B(r)` with maximal edge length at most `target_h`.
pub fn mesh_disk(r: f64, target_h: f64) -> Result<DiskMesh> {
    mesh_disk_with_rings(r, target_h, &[])
}

/// As [`mesh_disk`], with extra rings at the given radii.
pub fn mesh_disk_with_rings(r: f64, target_h: f64, interfaces: &[f64]) -> Result<DiskMesh> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(invalid("mesh radius must be positive"));
    }
    if !(target_h > 0.0 && target_h < r / 4.0) {
        return Err(invalid(format!("mesh size must lie in (0, r/4) = (0, {})", r / 4.0)));
    }
    if interfaces.iter().any(|b| !b.is_finite()) {
        return Err(invalid("interface radii must be finite"));
    }
    let mut step = target_h / 1.3;
    for _ in 0..40 {
        let mesh = build(r, interfaces, step);
        if mesh.h <= target_h {
            if mesh.min_angle_deg < MIN_ANGLE_DEG {
                return Err(Error::MeshQuality(format!(
                    "minimum angle {:.2}° is below {MIN_ANGLE_DEG}°",
                    mesh.min_angle_deg
                )));
            }
            return Ok(mesh);
        }
        step *= (target_h / mesh.h).min(0.98);
    }
    Err(Error::MeshQuality(format!("could not reach h ≤ {target_h}")))
}

impl DiskMesh {
    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Maximal edge length.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn min_angle_deg(&self) -> f64 {
        self.min_angle_deg
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn rings(&self) -> &[Ring] {
        &self.rings
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    /// Boundary vertices, ordered counterclockwise from angle 0.
    pub fn boundary(&self) -> Range<usize> {
        let last = self.rings.last().expect("mesh has rings");
        last.first..last.first + last.count
    }

    pub fn is_boundary(&self, v: usize) -> bool {
        self.boundary().contains(&v)
    }

    pub fn corners(&self, e: usize) -> [Point; 3] {
        let t = self.triangles[e];
        [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]]
    }

    pub fn area(&self, e: usize) -> f64 {
        let [a, b, c] = self.corners(e);
        0.5 * cross(sub(b, a), sub(c, a))
    }

    pub fn centroid(&self, e: usize) -> Point {
        let [a, b, c] = self.corners(e);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// Gradients of the three barycentric hat functions on element `e`.
    pub fn hat_gradients(&self, e: usize) -> [Point; 3] {
        let [a, b, c] = self.corners(e);
        let twice = cross(sub(b, a), sub(c, a));
        let g = |p: Point, q: Point| [(p[1] - q[1]) / twice, (q[0] - p[0]) / twice];
        [g(b, c), g(c, a), g(a, b)]
    }

    /// Gradient of the P1 function with nodal `values` on element `e`.
    pub fn gradient(&self, values: &[f64], e: usize) -> Point {
        let t = self.triangles[e];
        let g = self.hat_gradients(e);
        let mut out = [0.0; 2];
        for i in 0..3 {
            out[0] += values[t[i]] * g[i][0];
            out[1] += values[t[i]] * g[i][1];
        }
        out
    }

    /// Element containing `x` with barycentric coordinates.
    pub fn locate(&self, x: Point) -> Option<(usize, [f64; 3])> {
        self.locator.locate(self, x)
    }

    /// Value at `x` of the P1 function with nodal `values`.
    pub fn interpolate(&self, values: &[f64], x: Point) -> Option<f64> {
        let (e, b) = self.locate(x)?;
        let t = self.triangles[e];
        Some(b[0] * values[t[0]] + b[1] * values[t[1]] + b[2] * values[t[2]])
    }

    pub fn barycentric(&self, e: usize, x: Point) -> [f64; 3] {
        let [a, b, c] = self.corners(e);
        let twice = cross(sub(b, a), sub(c, a));
        let l1 = cross(sub(c, b), sub(x, b)) / twice;
        let l2 = cross(sub(a, c), sub(x, c)) / twice;
        [l1, l2, 1.0 - l1 - l2]
    }

    /// Checks that `B(t)` lies within the meshed disk.
    pub fn ensure_covers(&self, t: f64) -> Result<()> {
        if t > self.radius * (1.0 + 1e-12) {
            Err(Error::MeshCoverage { mesh_radius: self.radius, radius: t })
        } else {
            Ok(())
        }
    }

    /// Fraction of each element's area lying inside the disk `|x| < t`.
    pub fn disk_fractions(&self, t: f64) -> Vec<f64> {
        (0..self.triangles.len())
            .map(|e| {
                let [a, b, c] = self.corners(e);
                let rmax = [a, b, c].iter().map(|p| p[0].hypot(p[1])).fold(0.0, f64::max);
                if rmax <= t {
                    return 1.0;
                }
                let inside = disk_sector_area(a, b, t) + disk_sector_area(b, c, t) + disk_sector_area(c, a, t);
                (inside / self.area(e)).clamp(0.0, 1.0)
            })
            .collect()
    }

    /// Arcs of the circle `|x| = t` inside each element, as `(element, θ0, θ1)`
    /// sorted by `θ0` and covering `[0, 2π)`.
    pub fn circle_arcs(&self, t: f64) -> Vec<(usize, f64, f64)> {
        let mut arcs = Vec::new();
        for (e, tri) in self.triangles.iter().enumerate() {
            let p = [self.vertices[tri[0]], self.vertices[tri[1]], self.vertices[tri[2]]];
            let rmax = p.iter().map(|q| q[0].hypot(q[1])).fold(0.0, f64::max);
            if rmax < t * (1.0 - 1e-14) {
                continue;
            }
            if (0..3).map(|i| segment_distance([0.0, 0.0], p[i], p[(i + 1) % 3])).fold(f64::INFINITY, f64::min)
                > t * (1.0 + 1e-14)
            {
                continue;
            }
            let mut angles = Vec::with_capacity(6);
            for i in 0..3 {
                for q in circle_segment_hits(p[i], p[(i + 1) % 3], t) {
                    angles.push(q[1].atan2(q[0]).rem_euclid(2.0 * PI));
                }
            }
            if angles.is_empty() {
                // A circle wholly inside one element (tiny t).
                let c = [(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0];
                if c[0].hypot(c[1]) < t || self.barycentric(e, [t, 0.0]).iter().all(|&l| l >= 0.0) {
                    arcs.push((e, 0.0, 2.0 * PI));
                }
                continue;
            }
            angles.sort_by(f64::total_cmp);
            angles.push(angles[0] + 2.0 * PI);
            for w in angles.windows(2) {
                let (a0, a1) = (w[0], w[1]);
                if a1 - a0 <= 1e-13 {
                    continue;
                }
                let mid = 0.5 * (a0 + a1);
                let bary = self.barycentric(e, [t * mid.cos(), t * mid.sin()]);
                if bary.iter().all(|&l| l >= -1e-12) {
                    if a1 > 2.0 * PI {
                        arcs.push((e, a0, 2.0 * PI));
                        if a1 - 2.0 * PI > 1e-13 {
                            arcs.push((e, 0.0, a1 - 2.0 * PI));
                        }
                    } else {
                        arcs.push((e, a0, a1));
                    }
                }
            }
        }
        arcs.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        arcs
    }
}

fn segment_distance(x: Point, a: Point, b: Point) -> f64 {
    let d = sub(b, a);
    let len2 = d[0] * d[0] + d[1] * d[1];
    let s = if len2 == 0.0 { 0.0 } else { ((x[0] - a[0]) * d[0] + (x[1] - a[1]) * d[1]) / len2 };
    let s = s.clamp(0.0, 1.0);
    dist(x, [a[0] + s * d[0], a[1] + s * d[1]])
}

fn circle_segment_hits(a: Point, b: Point, r: f64) -> Vec<Point> {
    let d = sub(b, a);
    let qa = d[0] * d[0] + d[1] * d[1];
    let qb = a[0] * d[0] + a[1] * d[1];
    let qc = a[0] * a[0] + a[1] * a[1] - r * r;
    let disc = qb * qb - qa * qc;
    if disc < 0.0 || qa == 0.0 {
        return Vec::new();
    }
    let sq = disc.sqrt();
    [(-qb - sq) / qa, (-qb + sq) / qa]
        .into_iter()
        .filter(|s| (-1e-14..=1.0 + 1e-14).contains(s))
        .map(|s| [a[0] + s * d[0], a[1] + s * d[1]])
        .collect()
}

fn signed_angle(u: Point, v: Point) -> f64 {
    cross(u, v).atan2(u[0] * v[0] + u[1] * v[1])
}

/// Signed area of `disk(0, r) ∩ triangle(0, a, b)`.
fn disk_sector_area(a: Point, b: Point, r: f64) -> f64 {
    let d = sub(b, a);
    let qa = d[0] * d[0] + d[1] * d[1];
    if qa == 0.0 {
        return 0.0;
    }
    let qb = a[0] * d[0] + a[1] * d[1];
    let qc = a[0] * a[0] + a[1] * a[1] - r * r;
    let disc = qb * qb - qa * qc;
    let sector = |u: Point, v: Point| 0.5 * r * r * signed_angle(u, v);
    if disc <= 0.0 {
        return sector(a, b);
    }
    let sq = disc.sqrt();
    let (s1, s2) = ((-qb - sq) / qa, (-qb + sq) / qa);
    if s1 >= 1.0 || s2 <= 0.0 {
        return sector(a, b);
    }
    let (s1, s2) = (s1.max(0.0), s2.min(1.0));
    let p1 = [a[0] + s1 * d[0], a[1] + s1 * d[1]];
    let p2 = [a[0] + s2 * d[0], a[1] + s2 * d[1]];
    let near = |u: Point, v: Point| if u == v { 0.0 } else { sector(u, v) };
    near(a, p1) + 0.5 * cross(p1, p2) + near(p2, b)
}

/// Uniform bucket grid over the bounding square of the disk.
#[derive(Debug, Clone)]
struct Locator {
    origin: f64,
    cell: f64,
    cells: usize,
    offsets: Vec<usize>,
    items: Vec<usize>,
}

impl Locator {
    fn new(vertices: &[Point], triangles: &[[usize; 3]], r: f64, h: f64) -> Self {
        let origin = -r * (1.0 + 1e-9);
        let cell = h.max(1e-12);
        let cells = ((2.0 * r * (1.0 + 1e-9)) / cell).ceil().max(1.0) as usize;
        let index = |v: f64| (((v - origin) / cell).floor().max(0.0) as usize).min(cells - 1);
        let mut lists: Vec<Vec<usize>> = vec![Vec::new(); cells * cells];
        for (e, t) in triangles.iter().enumerate() {
            let xs = t.map(|v| vertices[v][0]);
            let ys = t.map(|v| vertices[v][1]);
            let (x0, x1) = (index(xs.iter().copied().fold(f64::INFINITY, f64::min)), index(xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)));
            let (y0, y1) = (index(ys.iter().copied().fold(f64::INFINITY, f64::min)), index(ys.iter().copied().fold(f64::NEG_INFINITY, f64::max)));
            for i in x0..=x1 {
                for j in y0..=y1 {
                    lists[i * cells + j].push(e);
                }
            }
        }
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut items = Vec::new();
        offsets.push(0);
        for l in lists {
            items.extend(l);
            offsets.push(items.len());
        }
        Self { origin, cell, cells, offsets, items }
    }

    fn locate(&self, mesh: &DiskMesh, x: Point) -> Option<(usize, [f64; 3])> {
        let idx = |v: f64| {
            let k = ((v - self.origin) / self.cell).floor();
            (k >= 0.0 && (k as usize) < self.cells).then_some(k as usize)
        };
        let (i, j) = (idx(x[0])?, idx(x[1])?);
        let c = i * self.cells + j;
        let mut best: Option<(usize, [f64; 3], f64)> = None;
        for &e in &self.items[self.offsets[c]..self.offsets[c + 1]] {
            let b = mesh.barycentric(e, x);
            let worst = b.iter().copied().fold(f64::INFINITY, f64::min);
            if worst >= 0.0 {
                return Some((e, b));
            }
            if best.as_ref().is_none_or(|(_, _, w)| worst > *w) {
                best = Some((e, b, worst));
            }
        }
        // Points on an edge can miss every element by rounding.
        best.filter(|(_, _, w)| *w > -1e-10).map(|(e, b, _)| (e, b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_mesh(m: &DiskMesh) {
        assert!(m.min_angle_deg() >= MIN_ANGLE_DEG);
        let total: f64 = (0..m.triangle_count()).map(|e| m.area(e)).sum();
        assert!((0..m.triangle_count()).all(|e| m.area(e) > 0.0));
        let r = m.radius();
        let polygon_area = {
            let b: Vec<Point> = m.boundary().map(|v| m.vertices()[v]).collect();
            (0..b.len()).map(|i| 0.5 * cross(b[i], b[(i + 1) % b.len()])).sum::<f64>()
        };
        assert!((total - polygon_area).abs() < 1e-10 * r * r);
        for v in m.boundary() {
            let p = m.vertices()[v];
            assert!((p[0].hypot(p[1]) - r).abs() <= 1e-12 * r);
        }
        // Conforming: every interior edge is shared by exactly two triangles.
        let mut edges = std::collections::HashMap::new();
        for t in m.triangles() {
            for i in 0..3 {
                let (a, b) = (t[i], t[(i + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        for ((a, b), count) in edges {
            let on_boundary = m.is_boundary(a) && m.is_boundary(b);
            assert_eq!(count, if on_boundary { 1 } else { 2 }, "edge {a}-{b}");
        }
        // Euler characteristic of a disk.
        let e = m.triangles().len();
        let v = m.vertex_count();
        let nb = m.boundary().len();
        assert_eq!(v + e - (3 * e + nb) / 2, 1);
    }

    #[test]
    fn unit_disk_examples() {
        let m = mesh_disk(1.0, 0.1).unwrap();
        check_mesh(&m);
        assert!(m.h() <= 0.1);
        assert!((400..=750).contains(&m.vertex_count()), "{} vertices", m.vertex_count());
        let fine = mesh_disk(1.0, 0.05).unwrap();
        check_mesh(&fine);
        let ratio = fine.vertex_count() as f64 / m.vertex_count() as f64;
        assert!((4.0 * 0.7..=4.0 * 1.3).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn coarse_mesh_boundary_is_counterclockwise() {
        let m = mesh_disk(2.0, 0.45).unwrap();
        check_mesh(&m);
        let angles: Vec<f64> =
            m.boundary().map(|v| m.vertices()[v][1].atan2(m.vertices()[v][0]).rem_euclid(2.0 * PI)).collect();
        assert_eq!(angles[0], 0.0);
        assert!(angles.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn interface_rings_are_exact() {
        let m = mesh_disk_with_rings(1.0, 0.1, &[0.5]).unwrap();
        check_mesh(&m);
        assert!(m.rings().iter().any(|r| r.radius == 0.5));
    }

    #[test]
    fn rejects_bad_requests() {
        assert!(mesh_disk(0.0, 0.1).is_err());
        assert!(mesh_disk(1.0, 0.3).is_err());
    }

    #[test]
    fn disk_fractions_measure_the_disk() {
        let m = mesh_disk(2.0, 0.2).unwrap();
        for t in [0.3, 1.0, 1.37] {
            let area: f64 = m.disk_fractions(t).iter().enumerate().map(|(e, f)| f * m.area(e)).sum();
            assert!((area - PI * t * t).abs() < 1e-10, "t = {t}: {area}");
        }
    }

    #[test]
    fn circle_arcs_cover_the_circle() {
        let m = mesh_disk_with_rings(2.0, 0.2, &[1.0]).unwrap();
        for t in [0.05, 0.5, 1.0, 1.3, 1.99] {
            let arcs = m.circle_arcs(t);
            let total: f64 = arcs.iter().map(|a| a.2 - a.1).sum();
            assert!((total - 2.0 * PI).abs() < 1e-9, "t = {t}: {total}");
            for &(e, a0, a1) in &arcs {
                let mid = 0.5 * (a0 + a1);
                let b = m.barycentric(e, [t * mid.cos(), t * mid.sin()]);
                assert!(b.iter().all(|&l| l > -1e-9));
            }
        }
    }

    #[test]
    fn locate_and_interpolate_linear_functions() {
        let m = mesh_disk(1.0, 0.1).unwrap();
        let values: Vec<f64> = m.vertices().iter().map(|p| 2.0 * p[0] - p[1] + 0.5).collect();
        for x in [[0.0, 0.0], [0.31, -0.2], [-0.7, 0.69], [0.999, 0.0]] {
            let v = m.interpolate(&values, x).unwrap();
            assert!((v - (2.0 * x[0] - x[1] + 0.5)).abs() < 1e-12);
        }
        assert!(m.locate([1.5, 0.0]).is_none());
    }
}
