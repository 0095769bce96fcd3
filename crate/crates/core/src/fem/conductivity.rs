use serde::{Deserialize, Serialize};

use super::Mesh;
use crate::error::{Error, Result};

/// Positive scalar conductivity stored by its nodal values on a mesh.
///
/// `bounds = (a_lo, a_hi)` records the admissible band the field lives in; a field in
/// `Y_M` carries `(1/M, M)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConductivityField {
    pub nodal_values: Vec<f64>,
    #[serde(default)]
    pub kl_coeffs: Vec<f64>,
    pub bounds: (f64, f64),
}

impl ConductivityField {
    pub fn new(nodal_values: Vec<f64>, kl_coeffs: Vec<f64>, bounds: (f64, f64)) -> Result<Self> {
        let field = Self { nodal_values, kl_coeffs, bounds };
        field.validate()?;
        Ok(field)
    }

    pub fn constant(mesh: &Mesh, c: f64) -> Result<Self> {
        Self::new(vec![c; mesh.vertex_count()], Vec::new(), (c, c))
    }

    /// Nodal interpolant of `a(x, y)`; the bounds are the observed extrema.
    pub fn from_fn(mesh: &Mesh, a: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let values: Vec<f64> = mesh.vertices.iter().map(|p| a(p[0], p[1])).collect();
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self::new(values, Vec::new(), (lo, hi))
    }

    /// `a = inner` for `r < radius`, `a = outer` elsewhere.
    pub fn two_layer(mesh: &Mesh, inner: f64, outer: f64, radius: f64) -> Result<Self> {
        Self::from_fn(mesh, |x, y| if (x * x + y * y).sqrt() < radius - 1e-12 { inner } else { outer })
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.bounds;
        if !(lo > 0.0) || !(hi >= lo) || !hi.is_finite() {
            return Err(Error::Argument(format!("invalid conductivity bounds ({lo}, {hi})")));
        }
        let tol = 1e-12 * hi;
        for (i, &v) in self.nodal_values.iter().enumerate() {
            if !(v >= lo - tol && v <= hi + tol) {
                return Err(Error::Argument(format!("conductivity {v} at vertex {i} is outside [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    pub fn a_hi(&self) -> f64 {
        self.bounds.1
    }

    pub fn a_lo(&self) -> f64 {
        self.bounds.0
    }

    pub fn max_value(&self) -> f64 {
        self.nodal_values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.nodal_values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Element value: average of the three nodal values (exact centroid value of the P1
    /// interpolant).
    pub fn element_value(&self, mesh: &Mesh, t: usize) -> f64 {
        let [a, b, c] = mesh.triangles[t];
        (self.nodal_values[a] + self.nodal_values[b] + self.nodal_values[c]) / 3.0
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(
            self.nodal_values.iter().map(|v| c * v).collect(),
            self.kl_coeffs.clone(),
            (c * self.bounds.0, c * self.bounds.1),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::generate_mesh;

    #[test]
    fn constant_field_is_admissible() {
        let m = generate_mesh(0.3).unwrap();
        let a = ConductivityField::constant(&m, 2.0).unwrap();
        assert_eq!(a.a_hi(), 2.0);
        assert_eq!(a.element_value(&m, 3), 2.0);
    }

    #[test]
    fn rejects_nonpositive() {
        let m = generate_mesh(0.3).unwrap();
        assert!(ConductivityField::constant(&m, 0.0).is_err());
        assert!(ConductivityField::from_fn(&m, |x, _| x).is_err());
        let mut a = ConductivityField::constant(&m, 1.0).unwrap();
        a.nodal_values[0] = 5.0;
        assert!(a.validate().is_err());
    }

    #[test]
    fn two_layer_values() {
        let m = generate_mesh(0.1).unwrap();
        let a = ConductivityField::two_layer(&m, 4.0, 1.0, 0.5).unwrap();
        assert_eq!(a.nodal_values[0], 4.0);
        assert_eq!(a.nodal_values[m.boundary[0]], 1.0);
        assert_eq!(a.bounds, (1.0, 4.0));
    }
}
