use super::{
    model_id, objective_and_point_grads, BasisPointSet, PoseDescriptor, PoseError,
};
use crate::field::{Latent, MimoModel};
use crate::geom::{PointCloud, Pose, UnitQuat, Vec3};
use crate::nn::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TransferConfig {
    pub restarts: usize,
    pub iterations: usize,
    /// optimizer step size on the 6 local pose coordinates
    pub step: f64,
    pub seed: u64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            restarts: 8,
            iterations: 300,
            step: 1e-2,
            seed: 0,
        }
    }
}

/// Objective value and its gradient in the 6 local pose coordinates
/// (rotation increment ω, translation increment u), both taken at the
/// identity increment left-multiplied onto `t`.
pub(crate) fn objective_and_pose_grad(
    model: &MimoModel,
    latent: &Latent,
    x: &BasisPointSet,
    z_ref: &Tensor,
    t: &Pose,
) -> (f64, [f64; 6]) {
    let queries: Vec<Vec3> = x.points.iter().map(|&p| t.apply(p)).collect();
    let (value, point_grads) = objective_and_point_grads(model, latent, &queries, z_ref);
    // p'_j = R(ω) p_j + u with d(R(ω)p)/dω at ω = 0 equal to −[p]×,
    // giving ∂L/∂ω = Σ p_j × g_j and ∂L/∂u = Σ g_j
    let mut g_rot = Vec3::ZERO;
    let mut g_tr = Vec3::ZERO;
    for (p, g) in queries.iter().zip(&point_grads) {
        g_rot = g_rot + p.cross(*g);
        g_tr = g_tr + *g;
    }
    (
        value,
        [g_rot.x, g_rot.y, g_rot.z, g_tr.x, g_tr.y, g_tr.z],
    )
}

/// `T* = arg min_T L1(Z(T, X | P̄_r), Z_ref)` by gradient descent over
/// SE(3), best of `restarts` deterministic restarts (identity first, then
/// random poses within the cloud bounds). Returns the pose and residual.
pub fn transfer_pose(
    model: &MimoModel,
    p_r: &PointCloud,
    x: &BasisPointSet,
    z_ref: &PoseDescriptor,
    config: &TransferConfig,
) -> Result<(Pose, f64), PoseError> {
    let mid = model_id(model);
    if z_ref.model_id != mid || z_ref.bps_id != x.id {
        return Err(PoseError::IncompatibleBps {
            got_model: z_ref.model_id,
            got_bps: z_ref.bps_id,
            want_model: mid,
            want_bps: x.id,
        });
    }
    let latent = model.encode(p_r)?;
    let d = model.config.descriptor_dim();
    let z_tensor = Tensor::matrix(x.points.len(), d, z_ref.z.clone());
    let bounds = p_r.bounds();

    let mut best: Option<(f64, Pose)> = None;
    for restart in 0..config.restarts.max(1) {
        let (value, pose) =
            transfer_restart(model, &latent, x, &z_tensor, bounds, restart, config)?;
        if best.as_ref().is_none_or(|(b, _)| value < *b) {
            best = Some((value, pose));
        }
    }
    let (residual, pose) = best.unwrap();
    Ok((pose, residual))
}

/// One restart's solve: restart 0 starts from the identity, later ones
/// from a random pose within `bounds`, keyed per restart index so restart
/// k is identical however many restarts run in total.
pub(crate) fn transfer_restart(
    model: &MimoModel,
    latent: &Latent,
    x: &BasisPointSet,
    z_tensor: &Tensor,
    bounds: (Vec3, Vec3),
    restart: usize,
    config: &TransferConfig,
) -> Result<(f64, Pose), PoseError> {
    let (lo, hi) = bounds;
    let init = if restart == 0 {
        Pose::IDENTITY
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ ((restart as u64) << 32));
        let axis = loop {
            let v = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            if v.norm() > 1e-3 && v.norm() <= 1.0 {
                break v.normalized();
            }
        };
        let angle = rng.gen_range(0.0..std::f64::consts::PI);
        let t = Vec3::new(
            rng.gen_range(lo.x..hi.x),
            rng.gen_range(lo.y..hi.y),
            rng.gen_range(lo.z..hi.z),
        );
        Pose::new(UnitQuat::from_axis_angle(axis, angle), t)
    };
    minimize_from(model, latent, x, z_tensor, init, config)
}

/// Adam over the 6 local coordinates; each step's update is composed onto
/// the pose as a left-multiplied increment.
fn minimize_from(
    model: &MimoModel,
    latent: &Latent,
    x: &BasisPointSet,
    z_ref: &Tensor,
    init: Pose,
    config: &TransferConfig,
) -> Result<(f64, Pose), PoseError> {
    let mut t = init;
    let mut best_value = f64::INFINITY;
    let mut best_pose = t;
    let mut adam = crate::nn::AdamState::new(config.step, &[6]);
    for _ in 0..=config.iterations {
        let (value, grad) = objective_and_pose_grad(model, latent, x, z_ref, &t);
        if !value.is_finite() {
            return Err(PoseError::OptimizationDiverged);
        }
        if value < best_value {
            best_value = value;
            best_pose = t;
        }
        let mut delta = Tensor::vector(vec![0.0; 6]);
        adam.step(&mut [&mut delta], &[&Tensor::vector(grad.to_vec())]);
        let omega = Vec3::new(delta.data[0], delta.data[1], delta.data[2]);
        let u = Vec3::new(delta.data[3], delta.data[4], delta.data[5]);
        t = Pose::new(UnitQuat::from_rotation_vector(omega), u).compose(&t);
    }
    Ok((best_value, best_pose))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{MimoConfig, MimoModel};
    use crate::pose::{pose_descriptor, sample_bps, transfer_objective};

    fn tiny_model(seed: u64) -> MimoModel {
        MimoModel::init(
            MimoConfig {
                latent_dim: 16,
                encoder_widths: vec![16, 16],
                trunk_widths: vec![16],
                head_widths: vec![8, 8],
                sh_degree: 2,
                ..MimoConfig::default()
            },
            seed,
        )
    }

    fn test_cloud(seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud {
            points: (0..48)
                .map(|_| {
                    Vec3::new(
                        rng.gen_range(-0.3..0.3),
                        rng.gen_range(-0.3..0.3),
                        rng.gen_range(-0.3..0.3),
                    )
                })
                .collect(),
            normals: None,
        }
    }

    #[test]
    fn self_transfer_recovers_reference_pose() {
        let model = tiny_model(1);
        let cloud = test_cloud(2);
        let x = sample_bps(12, 0.12, 0).unwrap();
        let t0 = Pose::new(
            UnitQuat::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), 0.15),
            Vec3::new(0.04, -0.03, 0.02),
        );
        let z_ref = pose_descriptor(&model, &cloud, &t0, &x).unwrap();
        let config = TransferConfig {
            restarts: 1, // identity init is near t0
            iterations: 400,
            step: 5e-3,
            seed: 0,
        };
        let (t_star, residual) = transfer_pose(&model, &cloud, &x, &z_ref, &config).unwrap();
        let diameter = cloud.diameter();
        let t_err = (t_star.translation - t0.translation).norm();
        let r_err = t_star.rotation.angle_to(t0.rotation).to_degrees();
        assert!(t_err <= 0.01 * diameter, "translation error {t_err}");
        assert!(r_err <= 5.0, "rotation error {r_err} deg");
        assert!(residual >= 0.0);
    }

    #[test]
    fn residual_matches_forward_only_objective() {
        let model = tiny_model(3);
        let cloud = test_cloud(4);
        let x = sample_bps(8, 0.1, 1).unwrap();
        let t0 = Pose::from_translation(Vec3::new(0.05, 0.02, -0.01));
        let z_ref = pose_descriptor(&model, &cloud, &t0, &x).unwrap();
        let config = TransferConfig {
            restarts: 2,
            iterations: 50,
            step: 5e-3,
            seed: 1,
        };
        let (t_star, residual) = transfer_pose(&model, &cloud, &x, &z_ref, &config).unwrap();
        let latent = model.encode(&cloud).unwrap();
        let recomputed = transfer_objective(&model, &latent, &t_star, &x, &z_ref.z);
        assert!((residual - recomputed).abs() <= 1e-9, "{residual} vs {recomputed}");
    }

    #[test]
    fn best_residual_non_increasing_in_restarts() {
        let model = tiny_model(5);
        let cloud = test_cloud(6);
        let x = sample_bps(8, 0.1, 2).unwrap();
        let t0 = Pose::from_translation(Vec3::new(0.1, -0.1, 0.05));
        let z_ref = pose_descriptor(&model, &cloud, &t0, &x).unwrap();
        let mut prev = f64::INFINITY;
        for restarts in 1..=4 {
            let config = TransferConfig {
                restarts,
                iterations: 30,
                step: 5e-3,
                seed: 9,
            };
            let (_, residual) = transfer_pose(&model, &cloud, &x, &z_ref, &config).unwrap();
            assert!(residual <= prev + 1e-12, "restarts {restarts}: {residual} > {prev}");
            prev = residual;
        }
    }

    #[test]
    fn wrong_model_or_bps_rejected() {
        let model = tiny_model(1);
        let other = tiny_model(2);
        let cloud = test_cloud(2);
        let x = sample_bps(8, 0.1, 0).unwrap();
        let z_other = pose_descriptor(&other, &cloud, &Pose::IDENTITY, &x).unwrap();
        assert!(matches!(
            transfer_pose(&model, &cloud, &x, &z_other, &TransferConfig::default()),
            Err(PoseError::IncompatibleBps { .. })
        ));
    }

    #[test]
    fn pose_gradient_matches_central_differences() {
        let model = tiny_model(7);
        let cloud = test_cloud(8);
        let latent = model.encode(&cloud).unwrap();
        let x = sample_bps(6, 0.1, 3).unwrap();
        let t_ref = Pose::from_translation(Vec3::new(0.07, 0.0, -0.02));
        let z_ref = super::super::pose_descriptor_with_latent(&model, &latent, &t_ref, &x);
        let z_tensor = Tensor::matrix(
            x.points.len(),
            model.config.descriptor_dim(),
            z_ref.z.clone(),
        );
        let t = Pose::new(
            UnitQuat::from_axis_angle(Vec3::new(1.0, 0.5, -0.3).normalized(), 0.2),
            Vec3::new(0.01, 0.03, -0.04),
        );
        let (_, analytic) = objective_and_pose_grad(&model, &latent, &x, &z_tensor, &t);
        let eps = 1e-6;
        for k in 0..6 {
            let probe = |sign: f64| {
                let mut delta = [0.0; 6];
                delta[k] = sign * eps;
                let omega = Vec3::new(delta[0], delta[1], delta[2]);
                let u = Vec3::new(delta[3], delta[4], delta[5]);
                let t_probe = Pose::new(UnitQuat::from_rotation_vector(omega), u).compose(&t);
                transfer_objective(&model, &latent, &t_probe, &x, &z_ref.z)
            };
            let numeric = (probe(1.0) - probe(-1.0)) / (2.0 * eps);
            let rel = (analytic[k] - numeric).abs() / numeric.abs().max(1.0);
            assert!(rel <= 1e-4, "coordinate {k}: analytic {} vs numeric {numeric}", analytic[k]);
        }
    }
}
