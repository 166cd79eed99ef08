//! Build a feature dataset for two procedural mugs and train the
//! multi-head implicit field on all four branches, reporting the loss curve
//! and occupancy accuracy on the training queries.
//!
//! Run with: cargo run --release --example train_field

use multifield::features::{build_dataset, DatasetConfig, ViewMode};
use multifield::field::{train, MimoConfig, MimoModel, TrainConfig};
use multifield::geom::{ShapeCategory, ShapeSpec, Vec3};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let specs: Vec<_> = (0..2)
        .map(|i| ShapeSpec::sample(ShapeCategory::Mug, 100 + i))
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
    println!(
        "dataset: {} shapes x {} samples",
        datasets.len(),
        datasets[0].samples.len()
    );

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
    let report = train(
        &mut model,
        &datasets,
        &TrainConfig {
            epochs: 120,
            batch_size: 64,
            lr: 1e-3,
            seed: 42,
            ..TrainConfig::default()
        },
    )?;
    let first = report.curve.first().unwrap();
    let last = report.curve.last().unwrap();
    println!(
        "loss {:.4} -> {:.4} over {} steps; branch losses {:?} -> {:?}",
        first.total, last.total, report.steps, first.branch, last.branch
    );

    let (mut correct, mut total) = (0usize, 0usize);
    for d in &datasets {
        let latent = model.encode(&d.observed)?;
        let queries: Vec<Vec3> = d.samples.iter().map(|s| s.x).collect();
        for (s, o) in d.samples.iter().zip(model.predict_batch(&latent, &queries)) {
            if (o.occ_probability() > 0.5) == (s.occ > 0.5) {
                correct += 1;
            }
            total += 1;
        }
    }
    println!(
        "occupancy accuracy on training queries: {:.3}",
        correct as f64 / total as f64
    );
    Ok(())
}
