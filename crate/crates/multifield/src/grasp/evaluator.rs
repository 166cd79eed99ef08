//! Learned grasp evaluator: a small head over the frozen implicit-field
//! encoder that scores a grasp pose from the latent shape code and the
//! posed hand keypoints, plus gradient-based grasp refinement.

use super::{GraspCandidate, GraspError, GripperModel};
use crate::field::{Latent, MimoModel};
use crate::geom::{PointCloud, Pose, UnitQuat, Vec3};
use crate::nn::{AdamState, Mlp, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Grasp-success classifier on top of a frozen shape encoder: input is
/// the latent code concatenated with the six posed hand keypoints
/// (centered like field queries), output a success logit.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluatorModel {
    pub gripper: GripperModel,
    pub head: Mlp,
    latent_dim: usize,
}

impl EvaluatorModel {
    pub fn init(latent_dim: usize, gripper: GripperModel, seed: u64) -> Self {
        let head = Mlp::init(&[latent_dim + 18, 64, 64, 1], seed ^ 0x6576_616c);
        Self {
            gripper,
            head,
            latent_dim,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    /// Rebuild from stored parts (see the grasp file formats).
    pub fn from_parts(
        gripper: GripperModel,
        head: Mlp,
        latent_dim: usize,
    ) -> Result<Self, GraspError> {
        if head.input_dim() != latent_dim + 18 {
            return Err(GraspError::InvalidParams(format!(
                "head expects input {}, latent dim {} needs {}",
                head.input_dim(),
                latent_dim,
                latent_dim + 18
            )));
        }
        if head.output_dim() != 1 {
            return Err(GraspError::InvalidParams(format!(
                "head output dim {} is not a single logit",
                head.output_dim()
            )));
        }
        Ok(Self {
            gripper,
            head,
            latent_dim,
        })
    }

    /// Posed keypoints flattened to 18 coordinates, centered at the
    /// latent's centroid to match the field-query convention.
    fn keypoint_row(&self, latent: &Latent, pose: &Pose) -> (Vec<f64>, [Vec3; 6]) {
        let world: Vec<Vec3> = self
            .gripper
            .keypoints()
            .iter()
            .map(|&k| pose.apply(k))
            .collect();
        let mut row = Vec::with_capacity(18);
        for p in &world {
            let r = *p - latent.centroid;
            row.extend_from_slice(&[r.x, r.y, r.z]);
        }
        (row, world.try_into().unwrap())
    }

    fn input_row(&self, latent: &Latent, kp_row: &[f64]) -> Tensor {
        let mut data = latent.c.data.clone();
        data.extend_from_slice(kp_row);
        Tensor::matrix(1, self.latent_dim + 18, data)
    }

    /// Success logit for a grasp pose.
    pub fn logit(&self, latent: &Latent, pose: &Pose) -> f64 {
        let (row, _) = self.keypoint_row(latent, pose);
        let mut tape = Tape::new();
        let input = tape.leaf(self.input_row(latent, &row));
        let (out, _) = self.head.forward(&mut tape, input);
        tape.value(out).item()
    }

    /// Logit plus its gradient with respect to the six world-space
    /// keypoints, via one reverse pass through the head.
    fn logit_and_keypoint_grads(&self, latent: &Latent, pose: &Pose) -> (f64, [Vec3; 6]) {
        let (row, _) = self.keypoint_row(latent, pose);
        let mut tape = Tape::new();
        let c = tape.leaf(Tensor::matrix(1, self.latent_dim, latent.c.data.clone()));
        let kp = tape.leaf(Tensor::matrix(1, 18, row));
        let input = tape.concat_cols(&[c, kp]);
        let (out, _) = self.head.forward(&mut tape, input);
        let value = tape.value(out).item();
        tape.backward(out);
        let g = tape.grad(kp);
        let grads = std::array::from_fn(|i| {
            Vec3::new(g.data[i * 3], g.data[i * 3 + 1], g.data[i * 3 + 2])
        });
        (value, grads)
    }
}

/// Success probability of a grasp pose under the evaluator.
pub fn evaluate_grasp(evaluator: &EvaluatorModel, latent: &Latent, pose: &Pose) -> f64 {
    let x = evaluator.logit(latent, pose);
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvaluatorTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for EvaluatorTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
        }
    }
}

/// Train the evaluator head on labeled grasp candidates for one object
/// cloud. The shape encoder stays frozen: only the head's parameters
/// enter the optimizer, and the field model is taken by shared reference.
pub fn train_evaluator(
    model: &MimoModel,
    evaluator: &mut EvaluatorModel,
    cloud: &PointCloud,
    candidates: &[GraspCandidate],
    config: &EvaluatorTrainConfig,
) -> Result<Vec<f64>, GraspError> {
    let labeled: Vec<(&Pose, bool)> = candidates
        .iter()
        .filter_map(|c| c.label.map(|l| (&c.pose, l)))
        .collect();
    let positives = labeled.iter().filter(|(_, l)| *l).count();
    if labeled.is_empty() || positives == 0 || positives == labeled.len() {
        return Err(GraspError::SingleClassDataset);
    }
    if model.config.latent_dim != evaluator.latent_dim {
        return Err(GraspError::InvalidParams(format!(
            "evaluator expects latent dim {}, model has {}",
            evaluator.latent_dim, model.config.latent_dim
        )));
    }
    let latent = model.encode(cloud)?;
    let rows: Vec<(Vec<f64>, f64)> = labeled
        .iter()
        .map(|(pose, label)| {
            let (kp, _) = evaluator.keypoint_row(&latent, pose);
            let mut row = latent.c.data.clone();
            row.extend_from_slice(&kp);
            (row, if *label { 1.0 } else { 0.0 })
        })
        .collect();

    let param_lens: Vec<usize> = evaluator
        .head
        .param_tensors()
        .iter()
        .map(|t| t.len())
        .collect();
    let mut adam = AdamState::new(config.lr, &param_lens);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6772_7376);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut curve = Vec::with_capacity(config.epochs);
    let width = evaluator.latent_dim + 18;

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size.max(1)) {
            let mut data = Vec::with_capacity(chunk.len() * width);
            let mut targets = Vec::with_capacity(chunk.len());
            for &i in chunk {
                data.extend_from_slice(&rows[i].0);
                targets.push(rows[i].1);
            }
            let mut tape = Tape::new();
            let params = evaluator.head.stage(&mut tape);
            let input = tape.leaf(Tensor::matrix(chunk.len(), width, data));
            let (logits, _) = evaluator.head.forward_with(&mut tape, &params, input);
            let loss = tape.bce_with_logits(logits, &Tensor::matrix(chunk.len(), 1, targets));
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(GraspError::NonFinite("evaluator training loss"));
            }
            epoch_loss += value;
            batches += 1;
            tape.backward(loss);
            let flat: Vec<Var> = params.iter().flat_map(|(w, b)| [*w, *b]).collect();
            let grads: Vec<Tensor> = flat.iter().map(|v| tape.grad(*v).clone()).collect();
            let grad_refs: Vec<&Tensor> = grads.iter().collect();
            let mut tensors = evaluator.head.param_tensors_mut();
            adam.step(&mut tensors, &grad_refs);
        }
        curve.push(epoch_loss / batches as f64);
    }
    Ok(curve)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RefineConfig {
    /// grasps at or above this success probability are left untouched
    pub threshold: f64,
    /// ascent step size on the 6 local pose coordinates
    pub step: f64,
    pub max_iterations: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            threshold: 0.9,
            step: 1e-3,
            max_iterations: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineResult {
    pub pose: Pose,
    pub probability_before: f64,
    pub probability_after: f64,
    pub iterations: usize,
}

/// Gradient ascent on the evaluator logit over SE(3), as a left-composed
/// local increment per step with backtracking halving; the returned
/// probability never falls below the input's. Poses already scoring at or
/// above the threshold are returned unchanged.
pub fn refine_grasp(
    evaluator: &EvaluatorModel,
    latent: &Latent,
    pose: &Pose,
    config: &RefineConfig,
) -> Result<RefineResult, GraspError> {
    let sigmoid = |x: f64| 1.0 / (1.0 + (-x).exp());
    let (logit0, _) = evaluator.logit_and_keypoint_grads(latent, pose);
    if !logit0.is_finite() {
        return Err(GraspError::NonFinite("grasp refinement"));
    }
    let p0 = sigmoid(logit0);
    if p0 >= config.threshold {
        return Ok(RefineResult {
            pose: *pose,
            probability_before: p0,
            probability_after: p0,
            iterations: 0,
        });
    }
    let mut t = *pose;
    let mut best_logit = logit0;
    let mut iterations = 0usize;
    for _ in 0..config.max_iterations {
        let (value, kp_grads) = evaluator.logit_and_keypoint_grads(latent, &t);
        if !value.is_finite() {
            return Err(GraspError::NonFinite("grasp refinement"));
        }
        if sigmoid(value) >= config.threshold {
            break;
        }
        // chain rule through p_j = R k_j + u at the identity increment:
        // d logit/dω = Σ p_j × g_j, d logit/du = Σ g_j
        let world: Vec<Vec3> = evaluator
            .gripper
            .keypoints()
            .iter()
            .map(|&k| t.apply(k))
            .collect();
        let mut g_rot = Vec3::ZERO;
        let mut g_tr = Vec3::ZERO;
        for (p, g) in world.iter().zip(&kp_grads) {
            g_rot = g_rot + p.cross(*g);
            g_tr = g_tr + *g;
        }
        let norm = (g_rot.norm_sq() + g_tr.norm_sq()).sqrt();
        if norm < 1e-12 {
            break;
        }
        // backtracking: halve until the logit improves
        let mut step = config.step;
        let mut advanced = false;
        for _ in 0..20 {
            let cand = Pose::new(
                UnitQuat::from_rotation_vector(g_rot * step),
                g_tr * step,
            )
            .compose(&t);
            let cand_logit = evaluator.logit(latent, &cand);
            if cand_logit > value {
                t = cand;
                best_logit = f64::max(best_logit, cand_logit);
                advanced = true;
                break;
            }
            step /= 2.0;
        }
        iterations += 1;
        if !advanced {
            break;
        }
    }
    let final_logit = evaluator.logit(latent, &t);
    // never report (or return) a pose worse than the input
    let (pose_out, p_after) = if final_logit >= logit0 {
        (t, sigmoid(final_logit))
    } else {
        (*pose, p0)
    };
    Ok(RefineResult {
        pose: pose_out,
        probability_before: p0,
        probability_after: p_after,
        iterations,
    })
}
