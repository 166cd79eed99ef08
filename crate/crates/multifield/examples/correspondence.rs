//! Find the point on one mug that corresponds to the handle tip of another
//! by nearest-neighbor search in the field's descriptor space, and compare
//! against the parametric ground-truth landmark.
//!
//! Run with: cargo run --release --example correspondence

use multifield::features::{build_dataset, DatasetConfig, ViewMode};
use multifield::field::{train, MimoConfig, MimoModel, TrainConfig};
use multifield::geom::{
    generate_shape, sample_surface, shape_landmarks, ShapeCategory, ShapeSpec,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let specs: Vec<_> = (0..3)
        .map(|i| ShapeSpec::sample(ShapeCategory::Mug, 200 + i))
        .collect();
    let datasets = build_dataset(
        &specs,
        &DatasetConfig {
            samples_per_shape: 256,
            view: ViewMode::Full { points: 96 },
            sh_degree: 2,
            seed: 1,
            ..DatasetConfig::default()
        },
    )?;
    let mut model = MimoModel::init(
        MimoConfig {
            latent_dim: 32,
            encoder_widths: vec![32, 64],
            trunk_widths: vec![64],
            head_widths: vec![32, 32],
            sh_degree: 2,
            ..MimoConfig::default()
        },
        42,
    );
    train(
        &mut model,
        &datasets,
        &TrainConfig {
            epochs: 150,
            batch_size: 64,
            lr: 1e-3,
            seed: 42,
            ..TrainConfig::default()
        },
    )?;

    // descriptor of the reference mug's handle tip
    let reference = &datasets[0];
    let tip = shape_landmarks(&reference.spec)?["handle_tip"];
    let latent_ref = model.encode(&reference.observed)?;
    let z_ref = model.point_descriptor(&latent_ref, tip);

    for target in &datasets[1..] {
        let mesh = generate_shape(&target.spec)?;
        let surface = sample_surface(&mesh, 512, target.seed ^ 0xc0de)?;
        let latent = model.encode(&target.observed)?;
        let mut best = (f64::INFINITY, surface.points[0]);
        for (p, z) in surface
            .points
            .iter()
            .zip(model.point_descriptors(&latent, &surface.points))
        {
            let d: f64 = z.iter().zip(&z_ref).map(|(a, b)| (a - b).abs()).sum();
            if d < best.0 {
                best = (d, *p);
            }
        }
        let truth = shape_landmarks(&target.spec)?["handle_tip"];
        let (lo, hi) = mesh.bounds();
        println!(
            "{}: matched ({:+.3},{:+.3},{:+.3}), true tip ({:+.3},{:+.3},{:+.3}), error {:.3} of diameter",
            target.shape_id,
            best.1.x, best.1.y, best.1.z,
            truth.x, truth.y, truth.z,
            (best.1 - truth).norm() / (hi - lo).norm()
        );
    }
    Ok(())
}
