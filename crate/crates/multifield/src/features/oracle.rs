use super::{FeatureError, FeatureSample, ShBasis, SphereQuadrature};
use crate::geom::{SpatialIndex, Vec3};

/// Occupancy ground truth: 1 iff `x` is strictly inside the (watertight)
/// mesh. Consistent with the sign of `signed_distance`.
pub fn occupancy_oracle(index: &SpatialIndex, x: Vec3) -> Result<u8, FeatureError> {
    Ok(if index.is_inside(x)? { 1 } else { 0 })
}

/// Binary directional coverage: for every quadrature direction, 1 if a ray
/// from `x` hits the mesh within range `R`, else 0.
pub fn scf_coverage(index: &SpatialIndex, x: Vec3, quad: &SphereQuadrature, range: f64) -> Vec<f64> {
    assert!(range > 0.0);
    quad.directions
        .iter()
        .map(|dir| {
            if index.ray_hit(x, *dir, range).is_some() {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// Spherical-harmonics coefficients of the coverage function:
/// `c_{l,m} = sum_k w_k * f(omega_k) * Y_{l,m}(omega_k)`.
pub fn escf_oracle(
    index: &SpatialIndex,
    x: Vec3,
    basis: &ShBasis,
    quad: &SphereQuadrature,
    range: f64,
) -> Vec<f64> {
    let mut coeffs = vec![0.0; basis.len()];
    // skip the quadrature entirely when the mesh is out of range
    let (_, dist) = index.closest_point(x);
    if dist > range {
        return coeffs;
    }
    for (dir, w) in quad.directions.iter().zip(&quad.weights) {
        if index.ray_hit(x, *dir, range).is_some() {
            let y = basis.evaluate(*dir);
            for (c, yv) in coeffs.iter_mut().zip(&y) {
                *c += w * yv;
            }
        }
    }
    coeffs
}

/// Closest-distance direction: dot product of the unit vector from `x` to
/// its closest surface point with the principal direction `v_p`.
pub fn cdd_oracle(index: &SpatialIndex, x: Vec3, v_p: Vec3) -> Result<f64, FeatureError> {
    let (p, dist) = index.closest_point(x);
    if dist <= 1e-9 {
        return Err(FeatureError::OnSurface);
    }
    let v_d = (p - x) / dist;
    Ok(v_d.dot(v_p).clamp(-1.0, 1.0))
}

/// Bundles the pieces needed to evaluate all four targets for one shape.
pub struct FeatureOracle<'a> {
    pub index: &'a SpatialIndex,
    pub basis: &'a ShBasis,
    pub quad: &'a SphereQuadrature,
    pub range: f64,
    pub v_p: Vec3,
}

impl FeatureOracle<'_> {
    /// All four targets at `x`. The mesh is assumed watertight (validated
    /// once by the caller); returns `OnSurface` when the CDD is undefined.
    pub fn sample(&self, x: Vec3) -> Result<FeatureSample, FeatureError> {
        let cdd = cdd_oracle(self.index, x, self.v_p)?;
        let inside = self.index.is_inside_unchecked(x);
        let dist = self.index.closest_point(x).1;
        Ok(FeatureSample {
            x,
            occ: if inside { 1.0 } else { 0.0 },
            sdf: if inside { -dist } else { dist },
            escf: escf_oracle(self.index, x, self.basis, self.quad, self.range),
            cdd,
        })
    }
}
