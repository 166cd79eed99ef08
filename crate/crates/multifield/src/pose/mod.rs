//! Basis-point-set pose descriptors and SE(3) pose transfer by descriptor
//! L1 minimization, plus rearrangement-target derivation.

mod demo;
mod transfer;

pub use demo::{read_demonstration, write_demonstration, BpsSpec, Demonstration};
pub use transfer::{transfer_pose, TransferConfig};
pub(crate) use transfer::transfer_restart;

use crate::field::{FieldError, Latent, MimoModel};
use crate::geom::{GeomError, PointCloud, Pose, Vec3};
use crate::nn::{Reduction, Tape, Tensor};
use crate::recon::ReconError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PoseError {
    #[error("basis point set needs at least 4 points, got {0}")]
    InvalidCount(usize),
    #[error("basis radius must be positive, got {0}")]
    InvalidRadius(f64),
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("descriptors are not comparable: model {got_model:x}/bps {got_bps:x} vs model {want_model:x}/bps {want_bps:x}")]
    IncompatibleBps {
        got_model: u64,
        got_bps: u64,
        want_model: u64,
        want_bps: u64,
    },
    #[error("optimization diverged (non-finite objective)")]
    OptimizationDiverged,
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Recon(#[from] ReconError),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad demonstration file {file}: {msg}")]
    BadFile { file: String, msg: String },
}

/// Fixed reference points carried rigidly by a pose.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisPointSet {
    pub points: Vec<Vec3>,
    pub radius: f64,
    pub seed: u64,
    /// identity used to reject cross-set descriptor comparison
    pub id: u64,
}

/// Uniform sample of `n` points in the radius-ball around the origin.
pub fn sample_bps(n: usize, radius: f64, seed: u64) -> Result<BasisPointSet, PoseError> {
    if n < 4 {
        return Err(PoseError::InvalidCount(n));
    }
    if radius <= 0.0 {
        return Err(PoseError::InvalidRadius(radius));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6270_73);
    let mut points = Vec::with_capacity(n);
    while points.len() < n {
        let p = Vec3::new(
            rng.gen_range(-radius..radius),
            rng.gen_range(-radius..radius),
            rng.gen_range(-radius..radius),
        );
        if p.norm() <= radius {
            points.push(p);
        }
    }
    let id = fnv1a(
        [n as u64, radius.to_bits(), seed]
            .iter()
            .flat_map(|v| v.to_le_bytes()),
    );
    Ok(BasisPointSet {
        points,
        radius,
        seed,
        id,
    })
}

/// Concatenated point descriptors of the carried basis points.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseDescriptor {
    pub z: Vec<f64>,
    pub model_id: u64,
    pub bps_id: u64,
}

impl PoseDescriptor {
    /// Sum-of-absolute-differences distance; errors when the descriptors
    /// come from different models or basis sets.
    pub fn l1(&self, other: &PoseDescriptor) -> Result<f64, PoseError> {
        if self.model_id != other.model_id || self.bps_id != other.bps_id {
            return Err(PoseError::IncompatibleBps {
                got_model: other.model_id,
                got_bps: other.bps_id,
                want_model: self.model_id,
                want_bps: self.bps_id,
            });
        }
        debug_assert_eq!(self.z.len(), other.z.len());
        Ok(self
            .z
            .iter()
            .zip(&other.z)
            .map(|(a, b)| (a - b).abs())
            .sum())
    }
}

/// Stable identity of a model's parameters, for descriptor tagging.
pub fn model_id(model: &MimoModel) -> u64 {
    fnv1a(
        model
            .param_tensors()
            .iter()
            .flat_map(|t| t.data.iter())
            .flat_map(|v| v.to_bits().to_le_bytes()),
    )
}

fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Z = concat over j of z(T·X_j | P_r).
pub fn pose_descriptor(
    model: &MimoModel,
    p_r: &PointCloud,
    t: &Pose,
    x: &BasisPointSet,
) -> Result<PoseDescriptor, PoseError> {
    let latent = model.encode(p_r)?;
    Ok(pose_descriptor_with_latent(model, &latent, t, x))
}

/// Same as [`pose_descriptor`] with the cloud already encoded.
pub fn pose_descriptor_with_latent(
    model: &MimoModel,
    latent: &Latent,
    t: &Pose,
    x: &BasisPointSet,
) -> PoseDescriptor {
    let queries: Vec<Vec3> = x.points.iter().map(|&p| t.apply(p)).collect();
    let z = model
        .point_descriptors(latent, &queries)
        .into_iter()
        .flatten()
        .collect();
    PoseDescriptor {
        z,
        model_id: model_id(model),
        bps_id: x.id,
    }
}

/// Forward-only L1 objective used by the transfer optimizer; exposed so
/// its value can be cross-checked against the optimizer's internal one.
pub fn transfer_objective(
    model: &MimoModel,
    latent: &Latent,
    t: &Pose,
    x: &BasisPointSet,
    z_ref: &[f64],
) -> f64 {
    let queries: Vec<Vec3> = x.points.iter().map(|&p| t.apply(p)).collect();
    model
        .point_descriptors(latent, &queries)
        .into_iter()
        .flatten()
        .zip(z_ref)
        .map(|(a, b)| (a - b).abs())
        .sum()
}

/// Objective and its gradient with respect to the transformed basis
/// points, via one reverse pass through the decoder.
pub(crate) fn objective_and_point_grads(
    model: &MimoModel,
    latent: &Latent,
    queries: &[Vec3],
    z_ref: &Tensor,
) -> (f64, Vec<Vec3>) {
    let n = queries.len();
    let mut tape = Tape::new();
    let c = tape.leaf(Tensor::matrix(1, latent.c.len(), latent.c.data.clone()));
    let c_rows = tape.repeat_rows(c, n);
    let mut q = Vec::with_capacity(n * 3);
    for p in queries {
        let r = *p - latent.centroid;
        q.extend_from_slice(&[r.x, r.y, r.z]);
    }
    let qv = tape.leaf(Tensor::matrix(n, 3, q));
    let input = tape.concat_cols(&[c_rows, qv]);
    let (_, desc) = model.decode_from_input(&mut tape, input, None);
    let loss = tape.l1_loss(desc, z_ref, Reduction::Sum);
    let value = tape.value(loss).item();
    tape.backward(loss);
    let g = tape.grad(qv);
    let grads = (0..n)
        .map(|i| Vec3::new(g.data[i * 3], g.data[i * 3 + 1], g.data[i * 3 + 2]))
        .collect();
    (value, grads)
}

/// The closest pair (a ∈ `p_a`, b ∈ `p_b`); ties go to the lowest index
/// pair in lexicographic (a-index, b-index) order.
pub fn keypoints_from_final_frame(
    p_a: &PointCloud,
    p_b: &PointCloud,
) -> Result<(Vec3, Vec3), PoseError> {
    if p_a.points.is_empty() || p_b.points.is_empty() {
        return Err(PoseError::EmptyCloud);
    }
    let mut best = (f64::INFINITY, 0usize, 0usize);
    for (i, a) in p_a.points.iter().enumerate() {
        for (j, b) in p_b.points.iter().enumerate() {
            let d = (*a - *b).norm_sq();
            if d < best.0 {
                best = (d, i, j);
            }
        }
    }
    Ok((p_a.points[best.1], p_b.points[best.2]))
}

/// Derive the relative rearrangement target of object B with respect to
/// object A for two novel instances, from one demonstration's final
/// frame: reconstruct both novel objects, align each to its demonstrated
/// counterpart around the demonstration keypoints, and compose.
#[allow(clippy::too_many_arguments)]
pub fn rearrange_target(
    model_a: &MimoModel,
    model_b: &MimoModel,
    demo: &Demonstration,
    novel_a: &PointCloud,
    novel_b: &PointCloud,
    recon_points: usize,
    config: &TransferConfig,
    mise: &crate::recon::MiseConfig,
) -> Result<Pose, PoseError> {
    let (k_a, k_b) = keypoints_from_final_frame(&demo.source_cloud, &demo.target_cloud)?;
    let bps = demo.bps.sample()?;
    // carry the basis set at each demonstration keypoint
    let solve = |model: &MimoModel,
                 demo_cloud: &PointCloud,
                 novel: &PointCloud,
                 k: Vec3,
                 salt: u64|
     -> Result<Pose, PoseError> {
        let z_ref = pose_descriptor(model, demo_cloud, &Pose::from_translation(k), &bps)?;
        let (_, p_r) = crate::recon::resample_reconstruction(
            model,
            novel,
            recon_points,
            config.seed ^ salt,
            mise,
        )?;
        let (t, _res) = transfer_pose(model, &p_r, &bps, &z_ref, config)?;
        Ok(t)
    };
    let t_a = solve(model_a, &demo.source_cloud, novel_a, k_a, 0xa)?;
    let t_b = solve(model_b, &demo.target_cloud, novel_b, k_b, 0xb)?;
    Ok(t_a.compose(&t_b.inverse()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::MimoConfig;

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
    fn bps_points_inside_radius_and_deterministic() {
        let a = sample_bps(32, 0.15, 9).unwrap();
        let b = sample_bps(32, 0.15, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.points.iter().all(|p| p.norm() <= 0.15));
    }

    #[test]
    fn bps_mean_distance_matches_uniform_ball() {
        let x = sample_bps(4096, 0.15, 3).unwrap();
        let mean: f64 =
            x.points.iter().map(|p| p.norm()).sum::<f64>() / x.points.len() as f64;
        // uniform-ball expectation is 3r/4
        assert!((mean - 0.75 * 0.15).abs() < 0.05 * 0.15, "mean {mean}");
    }

    #[test]
    fn bps_invalid_inputs_rejected() {
        assert!(matches!(sample_bps(3, 0.1, 0), Err(PoseError::InvalidCount(3))));
        assert!(matches!(
            sample_bps(8, 0.0, 0),
            Err(PoseError::InvalidRadius(_))
        ));
    }

    #[test]
    fn descriptor_self_distance_zero_and_deterministic() {
        let model = tiny_model(1);
        let cloud = test_cloud(2);
        let x = sample_bps(8, 0.1, 0).unwrap();
        let t = Pose::from_translation(Vec3::new(0.05, 0.0, 0.0));
        let z1 = pose_descriptor(&model, &cloud, &t, &x).unwrap();
        let z2 = pose_descriptor(&model, &cloud, &t, &x).unwrap();
        assert_eq!(z1, z2);
        assert_eq!(z1.l1(&z2).unwrap(), 0.0);
    }

    #[test]
    fn incompatible_descriptors_rejected() {
        let model = tiny_model(1);
        let other = tiny_model(2);
        let cloud = test_cloud(2);
        let x = sample_bps(8, 0.1, 0).unwrap();
        let x2 = sample_bps(8, 0.1, 1).unwrap();
        let t = Pose::IDENTITY;
        let z = pose_descriptor(&model, &cloud, &t, &x).unwrap();
        let z_model = pose_descriptor(&other, &cloud, &t, &x).unwrap();
        let z_bps = pose_descriptor(&model, &cloud, &t, &x2).unwrap();
        assert!(matches!(z.l1(&z_model), Err(PoseError::IncompatibleBps { .. })));
        assert!(matches!(z.l1(&z_bps), Err(PoseError::IncompatibleBps { .. })));
    }

    #[test]
    fn descriptor_invariant_to_joint_translation_on_grid_data() {
        let model = tiny_model(1);
        // grid-exact coordinates keep the centering bitwise
        let cloud = PointCloud {
            points: (0..16)
                .map(|i| {
                    Vec3::new(
                        (i % 4) as f64 * 0.25,
                        (i / 4) as f64 * 0.25,
                        ((i * 3) % 8) as f64 * 0.125,
                    )
                })
                .collect(),
            normals: None,
        };
        let shift = Vec3::new(1.0, -2.0, 0.5);
        let x = BasisPointSet {
            points: vec![
                Vec3::new(0.125, 0.0, 0.0),
                Vec3::new(0.0, 0.25, 0.0),
                Vec3::new(0.0, 0.0, 0.125),
                Vec3::new(0.25, 0.25, 0.0),
            ],
            radius: 0.5,
            seed: 0,
            id: 7,
        };
        let t = Pose::from_translation(Vec3::new(0.5, 0.25, 0.0));
        let t_shift = Pose::from_translation(t.translation + shift);
        let z1 = pose_descriptor(&model, &cloud, &t, &x).unwrap();
        let z2 = pose_descriptor(&model, &cloud.translated(shift), &t_shift, &x).unwrap();
        assert_eq!(z1.z, z2.z);
    }

    #[test]
    fn keypoints_match_brute_force_with_ties() {
        let p_a = PointCloud {
            points: vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(2.0, 0.0, 0.0),
            ],
            normals: None,
        };
        let p_b = PointCloud {
            points: vec![Vec3::new(1.0, 1.0, 0.0), Vec3::new(0.0, 1.0, 0.0)],
            normals: None,
        };
        // distances tie at 1.0 for (0, b1) and (1, b0); lowest a index wins
        let (a, b) = keypoints_from_final_frame(&p_a, &p_b).unwrap();
        assert_eq!(a, Vec3::new(0.0, 0.0, 0.0));
        assert_eq!(b, Vec3::new(0.0, 1.0, 0.0));
    }

    #[test]
    fn keypoints_zero_distance_for_shared_point() {
        let shared = Vec3::new(0.3, -0.2, 0.7);
        let p_a = PointCloud {
            points: vec![Vec3::new(5.0, 0.0, 0.0), shared],
            normals: None,
        };
        let p_b = PointCloud {
            points: vec![shared, Vec3::new(-4.0, 1.0, 0.0)],
            normals: None,
        };
        let (a, b) = keypoints_from_final_frame(&p_a, &p_b).unwrap();
        assert_eq!(a, shared);
        assert_eq!(b, shared);
    }

    #[test]
    fn keypoints_empty_cloud_rejected() {
        let empty = PointCloud {
            points: vec![],
            normals: None,
        };
        assert!(matches!(
            keypoints_from_final_frame(&empty, &empty),
            Err(PoseError::EmptyCloud)
        ));
    }

    #[test]
    fn keypoints_equal_exhaustive_scan_on_random_clouds() {
        let p_a = test_cloud(1);
        let p_b = test_cloud(2);
        let (a, b) = keypoints_from_final_frame(&p_a, &p_b).unwrap();
        let mut best = (f64::INFINITY, Vec3::ZERO, Vec3::ZERO);
        for &pa in &p_a.points {
            for &pb in &p_b.points {
                let d = (pa - pb).norm_sq();
                if d < best.0 {
                    best = (d, pa, pb);
                }
            }
        }
        assert_eq!((a, b), (best.1, best.2));
    }
}
