//! The grasp loop on a single mug: sample antipodal candidates, label them
//! with the geometric gripper test, train the evaluator head on the labels,
//! then refine a low-scoring grasp by gradient ascent on the predicted
//! success probability.
//!
//! Run with: cargo run --release --example grasp_pipeline

use multifield::features::{build_dataset, DatasetConfig, ViewMode};
use multifield::field::{train, MimoConfig, MimoModel, TrainConfig};
use multifield::geom::{generate_shape, ShapeCategory, ShapeSpec};
use multifield::grasp::{
    evaluate_grasp, generate_candidates, label_candidates, refine_grasp, train_evaluator,
    EvaluatorModel, EvaluatorTrainConfig, GripperModel, RefineConfig,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = ShapeSpec::sample(ShapeCategory::Mug, 400);
    let mesh = generate_shape(&spec)?;
    let gripper = GripperModel::default();

    let mut candidates = generate_candidates(&mesh, &gripper, 60, 3)?;
    label_candidates(&mesh, &gripper, &mut candidates)?;
    let positives = candidates
        .iter()
        .filter(|c| c.label == Some(true))
        .count();
    println!("{positives}/{} candidates pass the geometric test", candidates.len());

    // a small field supplies the frozen shape encoding for the evaluator
    let datasets = build_dataset(
        &[spec],
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
            epochs: 60,
            batch_size: 64,
            lr: 1e-3,
            seed: 42,
            ..TrainConfig::default()
        },
    )?;

    let mut evaluator = EvaluatorModel::init(model.config.latent_dim, gripper, 8);
    let losses = train_evaluator(
        &model,
        &mut evaluator,
        &datasets[0].observed,
        &candidates,
        &EvaluatorTrainConfig::default(),
    )?;
    println!(
        "evaluator loss {:.4} -> {:.4}",
        losses.first().unwrap(),
        losses.last().unwrap()
    );

    // refine the weakest positively-labeled grasp
    let latent = model.encode(&datasets[0].observed)?;
    let weakest = candidates
        .iter()
        .filter(|c| c.label == Some(true))
        .min_by(|a, b| {
            evaluate_grasp(&evaluator, &latent, &a.pose)
                .total_cmp(&evaluate_grasp(&evaluator, &latent, &b.pose))
        })
        .expect("at least one successful candidate");
    let refined = refine_grasp(&evaluator, &latent, &weakest.pose, &RefineConfig::default())?;
    println!(
        "refinement: p {:.3} -> {:.3} in {} iterations",
        refined.probability_before, refined.probability_after, refined.iterations
    );
    Ok(())
}
