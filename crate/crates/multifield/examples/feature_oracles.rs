//! Evaluate the four ground-truth spatial features (occupancy, signed
//! distance, spherical-harmonics coverage coefficients, closest-distance
//! direction) at a few query points around an icosphere, where every value
//! has a simple analytic counterpart.
//!
//! Run with: cargo run --release --example feature_oracles

use multifield::features::{FeatureOracle, QuadratureRule, ShBasis};
use multifield::geom::{SpatialIndex, TriMesh, Vec3};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let radius = 0.5;
    let mesh = TriMesh::icosphere(radius, 3);
    let index = SpatialIndex::build(mesh)?;
    let basis = ShBasis::new(3);
    let quad = QuadratureRule::default().build();
    let oracle = FeatureOracle {
        index: &index,
        basis: &basis,
        quad: &quad,
        range: 2.0 * radius,
        v_p: Vec3::Z,
    };

    println!("query            occ   sdf      analytic  cdd      |escf|");
    for x in [
        Vec3::new(0.0, 0.0, 0.25),
        Vec3::new(0.0, 0.0, 0.75),
        Vec3::new(0.3, 0.3, 0.0),
        Vec3::new(-0.6, 0.1, 0.2),
    ] {
        let s = oracle.sample(x)?;
        let analytic = x.norm() - radius;
        let escf_norm: f64 = s.escf.iter().map(|c| c * c).sum::<f64>().sqrt();
        println!(
            "({:+.2},{:+.2},{:+.2})  {:.0}    {:+.4}  {:+.4}   {:+.4}  {:.4}",
            x.x, x.y, x.z, s.occ, s.sdf, analytic, s.cdd, escf_norm
        );
    }

    // at the sphere's center the coverage function is 1 everywhere, so the
    // expansion collapses to the constant coefficient sqrt(4*pi)
    let center = oracle.sample(Vec3::new(0.0, 0.0, 1e-4))?;
    println!(
        "\ncenter c00 = {:.6} (constant-coverage value {:.6})",
        center.escf[0],
        (4.0 * std::f64::consts::PI).sqrt()
    );
    Ok(())
}
