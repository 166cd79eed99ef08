//! Generate one procedural shape per category, print its landmarks, and
//! write the mesh plus a single-view partial point cloud to a temp dir.
//!
//! Run with: cargo run --release --example generate_shapes

use multifield::geom::{
    generate_shape, look_at, render_partial, sample_surface, shape_landmarks, ShapeCategory,
    ShapeSpec, Vec3,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::temp_dir().join("multifield-shapes");
    std::fs::create_dir_all(&out)?;

    for (category, seed) in [
        (ShapeCategory::Mug, 7u64),
        (ShapeCategory::Bowl, 7),
        (ShapeCategory::Bottle, 7),
    ] {
        let spec = ShapeSpec::sample(category, seed);
        let mesh = generate_shape(&spec)?;
        let (lo, hi) = mesh.bounds();
        println!(
            "{category:?}: {} vertices, {} faces, bounds [{:.3} {:.3} {:.3}]..[{:.3} {:.3} {:.3}]",
            mesh.vertices.len(),
            mesh.faces.len(),
            lo.x, lo.y, lo.z, hi.x, hi.y, hi.z,
        );
        for (name, p) in shape_landmarks(&spec)? {
            println!("  landmark {name}: ({:.3}, {:.3}, {:.3})", p.x, p.y, p.z);
        }

        let name = format!("{category:?}").to_lowercase();
        let obj = out.join(format!("{name}.obj"));
        multifield::geom::write_obj(&mesh, &obj)?;

        // a full surface sample and a single-view depth render
        let full = sample_surface(&mesh, 512, seed)?;
        multifield::geom::write_ply(&full, &out.join(format!("{name}_full.ply")))?;
        let camera = look_at(Vec3::new(0.4, 0.3, 0.3), Vec3::ZERO);
        let partial = render_partial(&mesh, &camera, 48, 48)?;
        multifield::geom::write_ply(&partial, &out.join(format!("{name}_partial.ply")))?;
        println!(
            "  wrote {} (+ full {} pts, partial {} pts)",
            obj.display(),
            full.len(),
            partial.len()
        );
    }
    Ok(())
}
