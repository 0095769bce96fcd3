use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Upper bound on the vertex count `generate_mesh` will allocate.
pub const MAX_VERTICES: usize = 400_000;

/// Conforming triangulation of the unit disk built from concentric rings.
///
/// Vertex 0 is the centre; rings follow from the inside out and the last ring is the
/// boundary, ordered by angle starting at `θ = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub vertices: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub boundary: Vec<usize>,
    #[serde(default)]
    pub boundary_angles: Vec<f64>,
    pub h: f64,
}

/// Number of boundary vertices for target size `h`: the smallest power of two that is at
/// least `2π/h`, so halving `h` always doubles it.
pub fn boundary_resolution(h: f64) -> usize {
    let target = (2.0 * PI / h).ceil() as usize;
    target.next_power_of_two().max(8)
}

pub fn generate_mesh(h: f64) -> Result<Mesh> {
    if !(h > 0.0 && h < 1.0) {
        return Err(Error::Argument(format!("mesh size h = {h} must lie in (0, 1)")));
    }
    let n_rings = (1.0 / h).ceil() as usize;
    let n_boundary = boundary_resolution(h);
    let estimate = (n_boundary as f64 * n_rings as f64 * 0.5) as usize + 1;
    if estimate > MAX_VERTICES {
        return Err(Error::Resource(format!("h = {h} needs about {estimate} vertices (limit {MAX_VERTICES})")));
    }

    let mut vertices = vec![[0.0, 0.0]];
    // (first vertex index, count, angular offset) per ring
    let mut rings: Vec<(usize, usize, f64)> = Vec::with_capacity(n_rings);
    for i in 1..=n_rings {
        let r = i as f64 / n_rings as f64;
        let count = if i == n_rings { n_boundary } else { ((n_boundary as f64 * r).ceil() as usize).max(6) };
        let offset = if i == n_rings || i % 2 == 0 { 0.0 } else { PI / count as f64 };
        let start = vertices.len();
        for k in 0..count {
            let t = offset + 2.0 * PI * k as f64 / count as f64;
            if i == n_rings {
                vertices.push([t.cos(), t.sin()]);
            } else {
                vertices.push([r * t.cos(), r * t.sin()]);
            }
        }
        rings.push((start, count, offset));
    }

    let mut triangles = Vec::new();
    let (s1, c1, _) = rings[0];
    for k in 0..c1 {
        triangles.push([0, s1 + k, s1 + (k + 1) % c1]);
    }
    for w in rings.windows(2) {
        stitch(&mut triangles, w[0], w[1]);
    }
    for t in triangles.iter_mut() {
        if signed_area(&vertices, t) < 0.0 {
            t.swap(1, 2);
        }
    }

    let (sb, cb, _) = *rings.last().unwrap();
    let boundary: Vec<usize> = (sb..sb + cb).collect();
    let boundary_angles = (0..cb).map(|k| 2.0 * PI * k as f64 / cb as f64).collect();
    Ok(Mesh { vertices, triangles, boundary, boundary_angles, h })
}

/// Triangulates the annulus between two consecutive rings by merging their vertices in
/// angular order.
fn stitch(triangles: &mut Vec<[usize; 3]>, inner: (usize, usize, f64), outer: (usize, usize, f64)) {
    let (si, ni, oi) = inner;
    let (so, no, oo) = outer;
    let angle_in = |k: usize| oi + 2.0 * PI * k as f64 / ni as f64;
    let angle_out = |k: usize| oo + 2.0 * PI * k as f64 / no as f64;
    let (mut a, mut b) = (0usize, 0usize);
    while a < ni || b < no {
        let advance_inner = if a == ni {
            false
        } else if b == no {
            true
        } else {
            angle_in(a + 1) <= angle_out(b + 1)
        };
        if advance_inner {
            triangles.push([si + a % ni, si + (a + 1) % ni, so + b % no]);
            a += 1;
        } else {
            triangles.push([si + a % ni, so + (b + 1) % no, so + b % no]);
            b += 1;
        }
    }
}

fn signed_area(v: &[[f64; 2]], t: &[usize; 3]) -> f64 {
    let (p, q, r) = (v[t[0]], v[t[1]], v[t[2]]);
    0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]))
}

impl Mesh {
    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        signed_area(&self.vertices, &self.triangles[t])
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    pub fn is_boundary(&self) -> Vec<bool> {
        let mut flags = vec![false; self.vertex_count()];
        for &b in &self.boundary {
            flags[b] = true;
        }
        flags
    }

    /// Non-boundary vertices in increasing index order.
    pub fn interior(&self) -> Vec<usize> {
        let flags = self.is_boundary();
        (0..self.vertex_count()).filter(|&i| !flags[i]).collect()
    }

    pub fn centroid(&self, t: usize) -> [f64; 2] {
        let [a, b, c] = self.triangles[t];
        let (p, q, r) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        [(p[0] + q[0] + r[0]) / 3.0, (p[1] + q[1] + r[1]) / 3.0]
    }

    /// Largest truncation order compatible with the boundary resolution.
    pub fn max_truncation(&self) -> usize {
        self.boundary.len() / 4
    }

    /// Consistent P1 mass matrix.
    pub fn mass_matrix(&self) -> CsrMatrix {
        let mut triplets = Vec::with_capacity(9 * self.triangles.len());
        for (t, tri) in self.triangles.iter().enumerate() {
            let area = self.triangle_area(t);
            for i in 0..3 {
                for j in 0..3 {
                    let v = if i == j { area / 6.0 } else { area / 12.0 };
                    triplets.push((tri[i], tri[j], v));
                }
            }
        }
        let n = self.vertex_count();
        CsrMatrix::from_triplets(n, n, &triplets)
    }

    /// Checks the structural invariants: positive orientation, boundary on the circle,
    /// boundary sorted by angle.
    pub fn validate(&self) -> Result<()> {
        for t in 0..self.triangles.len() {
            if self.triangle_area(t) <= 0.0 {
                return Err(Error::Argument(format!("triangle {t} is not positively oriented")));
            }
        }
        if self.boundary_angles.len() != self.boundary.len() {
            return Err(Error::Argument("boundary angles missing".into()));
        }
        for (k, &b) in self.boundary.iter().enumerate() {
            let [x, y] = self.vertices[b];
            if ((x * x + y * y).sqrt() - 1.0).abs() > 1e-12 {
                return Err(Error::Argument(format!("boundary vertex {b} is off the unit circle")));
            }
            let theta = self.boundary_angles[k];
            if !(0.0..2.0 * PI).contains(&theta) || (k > 0 && theta <= self.boundary_angles[k - 1]) {
                return Err(Error::Argument("boundary vertices are not sorted by angle".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coarse_mesh_invariants() {
        let m = generate_mesh(0.5).unwrap();
        assert!(m.boundary.len() >= 12);
        m.validate().unwrap();
        // Euler characteristic of a disk: V − E + F = 1
        let mut edges = std::collections::HashSet::new();
        for t in &m.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                edges.insert((a.min(b), a.max(b)));
            }
        }
        let chi = m.vertex_count() as i64 - edges.len() as i64 + m.triangles.len() as i64;
        assert_eq!(chi, 1);
    }

    #[test]
    fn area_converges_to_pi() {
        let m = generate_mesh(0.05).unwrap();
        m.validate().unwrap();
        let deficit = PI - m.area();
        // inscribed polygon: π − (N/2) sin(2π/N)
        let n = m.boundary.len() as f64;
        assert!((deficit - (PI - 0.5 * n * (2.0 * PI / n).sin())).abs() < 1e-12);
        assert!(deficit.abs() <= 0.01);
    }

    #[test]
    fn refinement_doubles_boundary() {
        for h in [0.5, 0.3, 0.17, 0.1, 0.07, 0.05, 0.03] {
            let a = generate_mesh(h).unwrap().boundary.len();
            let b = generate_mesh(h / 2.0).unwrap().boundary.len();
            assert!(b >= 2 * a, "h = {h}: {a} -> {b}");
            assert!(a as f64 >= 2.0 * PI / h);
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate_mesh(0.2).unwrap(), generate_mesh(0.2).unwrap());
    }

    #[test]
    fn every_edge_shared_by_at_most_two_triangles() {
        let m = generate_mesh(0.1).unwrap();
        let mut count = std::collections::HashMap::new();
        for t in &m.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                *count.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        let flags = m.is_boundary();
        for ((a, b), c) in count {
            assert!(c <= 2);
            if c == 1 {
                assert!(flags[a] && flags[b], "open edge inside the disk");
            }
        }
    }

    #[test]
    fn mass_matrix_integrates_one() {
        let m = generate_mesh(0.2).unwrap();
        let ones = vec![1.0; m.vertex_count()];
        let total: f64 = m.mass_matrix().mul_vec(&ones).iter().sum();
        assert!((total - m.area()).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_h() {
        assert!(matches!(generate_mesh(0.0), Err(Error::Argument(_))));
        assert!(matches!(generate_mesh(1.5), Err(Error::Argument(_))));
        assert!(matches!(generate_mesh(1e-4), Err(Error::Resource(_))));
    }

    #[test]
    fn json_shape() {
        let m = generate_mesh(0.5).unwrap();
        let v: serde_json::Value = serde_json::to_value(&m).unwrap();
        assert!(v.get("vertices").is_some());
        assert!(v.get("triangles").is_some());
        assert!(v.get("boundary").is_some());
    }
}
