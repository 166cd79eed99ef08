//! Grasping: antipodal candidate generation, geometric success labeling,
//! task-relevant selection, pose mixtures on ℝ³×S³, a learned grasp
//! evaluator, and gradient-based grasp refinement.

mod evaluator;
mod gmm;
mod io;

pub use evaluator::{
    evaluate_grasp, refine_grasp, train_evaluator, EvaluatorModel, EvaluatorTrainConfig,
    RefineConfig, RefineResult,
};
pub use gmm::{fit_gmm, fit_gmm_bic, sample_gmm, EmConfig, GmmComponent, GraspGmm};
pub use io::{
    read_candidates, read_evaluator, read_gmm, write_candidates, write_evaluator, write_gmm,
};

use crate::field::{FieldError, MimoModel};
use crate::geom::{
    sample_surface, GeomError, PointCloud, Pose, SpatialIndex, TriMesh, UnitQuat, Vec3,
};
use crate::pose::{
    pose_descriptor_with_latent, BasisPointSet, PoseDescriptor, PoseError, TransferConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraspError {
    #[error("no penetration-free antipodal candidates found within the attempt budget")]
    NoCandidates,
    #[error("no transfer result below the residual cutoff {cutoff}")]
    NoTransfer { cutoff: f64 },
    #[error("mixture needs at least {need} distinct poses, got {got}")]
    DegenerateData { need: usize, got: usize },
    #[error("labeled dataset contains only one class")]
    SingleClassDataset,
    #[error("non-finite value during {0}")]
    NonFinite(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Pose(#[from] PoseError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad file {file}: {msg}")]
    BadFile { file: String, msg: String },
}

/// Parallel-jaw hand in its own frame: closing axis +x, approach axis +z
/// (fingers extend from the palm plane z = 0 toward +z).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GripperModel {
    /// maximum gap between the finger inner faces
    pub max_opening: f64,
    /// finger extent along y
    pub finger_width: f64,
    /// finger length along z
    pub finger_depth: f64,
    /// finger extent along x (outward from the inner face)
    pub finger_thickness: f64,
    /// palm body extent along -z
    pub palm_depth: f64,
    /// depth along the finger at which contact is modeled
    pub contact_depth: f64,
    /// friction-cone half angle for the antipodal check, degrees
    pub cone_half_angle_deg: f64,
}

impl Default for GripperModel {
    fn default() -> Self {
        Self {
            max_opening: 0.08,
            finger_width: 0.02,
            finger_depth: 0.04,
            finger_thickness: 0.01,
            palm_depth: 0.04,
            contact_depth: 0.025,
            cone_half_angle_deg: 25.0,
        }
    }
}

impl GripperModel {
    /// The six hand keypoints: wrist, palm center, two finger midpoints,
    /// two fingertips. Fingertips and midpoints lie on the finger inner
    /// faces at the fully open position.
    pub fn keypoints(&self) -> [Vec3; 6] {
        let h = self.max_opening / 2.0;
        [
            Vec3::new(0.0, 0.0, -self.palm_depth),
            Vec3::ZERO,
            Vec3::new(-h, 0.0, self.finger_depth / 2.0),
            Vec3::new(h, 0.0, self.finger_depth / 2.0),
            Vec3::new(-h, 0.0, self.finger_depth),
            Vec3::new(h, 0.0, self.finger_depth),
        ]
    }

    /// Boxes (lo, hi) in the hand frame occupied by the hand at the fully
    /// open position: palm body plus both fingers.
    pub fn body_boxes(&self) -> [(Vec3, Vec3); 3] {
        let h = self.max_opening / 2.0;
        let w = self.finger_width / 2.0;
        let t = self.finger_thickness;
        [
            (
                Vec3::new(-h - t, -w, -self.palm_depth),
                Vec3::new(h + t, w, 0.0),
            ),
            (Vec3::new(-h - t, -w, 0.0), Vec3::new(-h, w, self.finger_depth)),
            (Vec3::new(h, -w, 0.0), Vec3::new(h + t, w, self.finger_depth)),
        ]
    }

    /// Palm body only (the non-finger part), for the labeling check.
    pub fn palm_box(&self) -> (Vec3, Vec3) {
        self.body_boxes()[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Heuristic,
    DemoTransfer,
    GmmSample,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GraspCandidate {
    pub pose: Pose,
    pub label: Option<bool>,
    pub provenance: Provenance,
    /// hash of the labeling configuration, present iff labeled
    pub config_hash: Option<u64>,
}

/// Hash of the gripper parameters that determine labels.
pub fn labeling_config_hash(gripper: &GripperModel) -> u64 {
    let json = serde_json::to_vec(gripper).expect("gripper serializes");
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in json {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn box_probe_points(lo: Vec3, hi: Vec3, res: usize) -> Vec<Vec3> {
    let mut pts = Vec::new();
    for i in 0..=res {
        for j in 0..=res {
            for k in 0..=res {
                let f = |a: f64, b: f64, n: usize, q: usize| a + (b - a) * q as f64 / n as f64;
                pts.push(Vec3::new(
                    f(lo.x, hi.x, res, i),
                    f(lo.y, hi.y, res, j),
                    f(lo.z, hi.z, res, k),
                ));
            }
        }
    }
    pts
}

/// True if any probe point of the hand boxes lies inside the mesh.
fn penetrates(index: &SpatialIndex, pose: &Pose, boxes: &[(Vec3, Vec3)]) -> bool {
    const RES: usize = 4;
    boxes.iter().any(|&(lo, hi)| {
        box_probe_points(lo, hi, RES)
            .into_iter()
            .any(|p| index.is_inside_unchecked(pose.apply(p)))
    })
}

/// One antipodal contact pair found by shooting a ray through the object.
struct ContactPair {
    p1: Vec3,
    p2: Vec3,
}

fn antipodal_pair(
    index: &SpatialIndex,
    p1: Vec3,
    n1: Vec3,
    max_opening: f64,
) -> Option<ContactPair> {
    let dir = -n1;
    let origin = p1 + dir * 1e-6;
    let (t, face) = index.ray_hit_face(origin, dir, max_opening)?;
    let p2 = origin + dir * t;
    let n2 = index.mesh().face_normal(face);
    // antipodal: outward normals at least 150 degrees apart
    if n1.dot(n2) > -(150f64.to_radians().cos().abs()) {
        return None;
    }
    Some(ContactPair { p1, p2 })
}

/// Hand pose grasping the segment `p1`-`p2` with approach direction `d`
/// (unit, perpendicular to the closing axis).
fn grasp_pose(gripper: &GripperModel, p1: Vec3, p2: Vec3, d: Vec3) -> Pose {
    let a = (p2 - p1).normalized();
    let b = d.cross(a);
    let rotation = UnitQuat::from_basis(a, b, d);
    let center = (p1 + p2) / 2.0;
    Pose::new(rotation, center - d * gripper.contact_depth)
}

/// Sample antipodal, penetration-free grasp candidates on a watertight
/// mesh. Deterministic per seed; errors when the attempt budget yields
/// nothing.
pub fn generate_candidates(
    mesh: &TriMesh,
    gripper: &GripperModel,
    n: usize,
    seed: u64,
) -> Result<Vec<GraspCandidate>, GraspError> {
    if n == 0 {
        return Err(GraspError::InvalidParams("candidate count 0".into()));
    }
    mesh.check_watertight()?;
    let index = SpatialIndex::build(mesh.clone())?;
    let centroid = mesh.centroid();
    let budget = n * 300;
    let surface = sample_surface(mesh, budget, seed ^ 0x6772_6173)?;
    let normals = surface.normals.as_ref().expect("sampler provides normals");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x70_6f73_65);
    let boxes = gripper.body_boxes();
    let mut out = Vec::with_capacity(n);

    for (p1, n1) in surface.points.iter().zip(normals) {
        if out.len() >= n {
            break;
        }
        let Some(pair) = antipodal_pair(&index, *p1, *n1, gripper.max_opening) else {
            continue;
        };
        let axis = (pair.p2 - pair.p1).normalized();
        let center = (pair.p1 + pair.p2) / 2.0;
        // approach directions perpendicular to the closing axis, tried
        // outward-first (palm far from the object centroid)
        let base = axis.any_orthonormal();
        let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let mut dirs: Vec<Vec3> = (0..8)
            .map(|k| {
                let ang = phase + std::f64::consts::TAU * k as f64 / 8.0;
                let c = base * ang.cos() + axis.cross(base) * ang.sin();
                c.normalized()
            })
            .collect();
        let u = center - centroid;
        dirs.sort_by(|a, b| a.dot(u).total_cmp(&b.dot(u)));
        for d in dirs {
            let pose = grasp_pose(gripper, pair.p1, pair.p2, d);
            if !penetrates(&index, &pose, &boxes) {
                out.push(GraspCandidate {
                    pose,
                    label: None,
                    provenance: Provenance::Heuristic,
                    config_hash: None,
                });
                break;
            }
        }
    }
    if out.is_empty() {
        return Err(GraspError::NoCandidates);
    }
    Ok(out)
}

/// Geometric success proxy: both fingers reach contact within the
/// opening, both contacts pass the friction-cone check against the
/// closing axis, and the palm body does not penetrate the mesh.
pub fn label_candidate(index: &SpatialIndex, gripper: &GripperModel, pose: &Pose) -> bool {
    let h = gripper.max_opening / 2.0;
    let closing = pose.rotation.rotate(Vec3::X);
    let left = pose.apply(Vec3::new(-h, 0.0, gripper.contact_depth));
    let right = pose.apply(Vec3::new(h, 0.0, gripper.contact_depth));
    let cone = gripper.cone_half_angle_deg.to_radians().cos();

    let contact = |origin: Vec3, dir: Vec3| -> Option<bool> {
        let (_, face) = index.ray_hit_face(origin, dir, gripper.max_opening)?;
        let n = index.mesh().face_normal(face);
        Some(n.dot(closing).abs() >= cone)
    };
    let (Some(left_ok), Some(right_ok)) = (contact(left, closing), contact(right, -closing))
    else {
        return false; // a finger closes through empty space
    };
    if !(left_ok && right_ok) {
        return false;
    }
    !penetrates(index, pose, &[gripper.palm_box()])
}

/// Label a batch, stamping the config hash.
pub fn label_candidates(
    mesh: &TriMesh,
    gripper: &GripperModel,
    candidates: &mut [GraspCandidate],
) -> Result<(), GraspError> {
    let index = SpatialIndex::build(mesh.clone())?;
    let hash = labeling_config_hash(gripper);
    for c in candidates {
        c.label = Some(label_candidate(&index, gripper, &c.pose));
        c.config_hash = Some(hash);
    }
    Ok(())
}

/// Candidates sorted ascending by pose-descriptor L1 distance to the
/// demonstration; ties broken by candidate index. Returns the first `k`
/// with their distances.
pub fn select_task_relevant(
    model: &MimoModel,
    p_r: &PointCloud,
    candidates: &[GraspCandidate],
    x: &BasisPointSet,
    z_demo: &PoseDescriptor,
    k: usize,
) -> Result<Vec<(GraspCandidate, f64)>, GraspError> {
    let latent = model.encode(p_r)?;
    let mut scored: Vec<(usize, f64)> = Vec::with_capacity(candidates.len());
    for (i, c) in candidates.iter().enumerate() {
        let z = pose_descriptor_with_latent(model, &latent, &c.pose, x);
        scored.push((i, z_demo.l1(&z)?));
    }
    scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(i, d)| (candidates[i].clone(), d))
        .collect())
}

/// Transfer a demonstrated grasp onto the canonical instance: one
/// descriptor-matching solve per restart; every restart result below the
/// residual cutoff becomes a candidate.
#[allow(clippy::too_many_arguments)]
pub fn transfer_demo_to_canonical(
    model: &MimoModel,
    demo_resample: &PointCloud,
    canonical_resample: &PointCloud,
    x: &BasisPointSet,
    t_demo: &Pose,
    config: &TransferConfig,
    residual_cutoff: f64,
) -> Result<Vec<GraspCandidate>, GraspError> {
    let demo_latent = model.encode(demo_resample)?;
    let z_ref = pose_descriptor_with_latent(model, &demo_latent, t_demo, x);
    let latent = model.encode(canonical_resample)?;
    let d = model.config.descriptor_dim();
    let z_tensor = crate::nn::Tensor::matrix(x.points.len(), d, z_ref.z.clone());
    let bounds = canonical_resample.bounds();
    let mut out = Vec::new();
    for restart in 0..config.restarts.max(1) {
        let (residual, pose) = crate::pose::transfer_restart(
            model, &latent, x, &z_tensor, bounds, restart, config,
        )?;
        if residual <= residual_cutoff {
            out.push(GraspCandidate {
                pose,
                label: None,
                provenance: Provenance::DemoTransfer,
                config_hash: None,
            });
        }
    }
    if out.is_empty() {
        return Err(GraspError::NoTransfer {
            cutoff: residual_cutoff,
        });
    }
    Ok(out)
}

/// Concatenate and deduplicate candidates from the two selection
/// strategies (translation within `dist_tol`, rotation within `deg_tol`).
pub fn fuse_candidates(
    mut a: Vec<GraspCandidate>,
    b: Vec<GraspCandidate>,
    dist_tol: f64,
    deg_tol: f64,
) -> Vec<GraspCandidate> {
    for cand in b {
        let dup = a.iter().any(|c| {
            (c.pose.translation - cand.pose.translation).norm() <= dist_tol
                && c.pose.rotation.angle_to(cand.pose.rotation).to_degrees() <= deg_tol
        });
        if !dup {
            a.push(cand);
        }
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;

    fn thin_box() -> TriMesh {
        TriMesh::box_mesh(
            Vec3::new(-0.1, -0.1, -0.02),
            Vec3::new(0.1, 0.1, 0.02),
        )
    }

    #[test]
    fn thin_box_candidates_align_with_face_normal() {
        let mesh = thin_box();
        let gripper = GripperModel::default();
        let candidates = generate_candidates(&mesh, &gripper, 20, 7).unwrap();
        assert!(!candidates.is_empty());
        let mut aligned = 0usize;
        for c in &candidates {
            let closing = c.pose.rotation.rotate(Vec3::X);
            // grasps across the 0.04 slab close along ±z
            if closing.z.abs() >= 10f64.to_radians().cos() {
                aligned += 1;
            }
        }
        // wide faces dominate the surface area, so most grasps cross them
        assert!(
            aligned * 2 > candidates.len(),
            "{aligned}/{} aligned",
            candidates.len()
        );
    }

    #[test]
    fn large_sphere_has_no_candidates() {
        let mesh = TriMesh::icosphere(0.2, 2); // diameter 0.4 >> opening
        let gripper = GripperModel::default();
        assert!(matches!(
            generate_candidates(&mesh, &gripper, 5, 1),
            Err(GraspError::NoCandidates)
        ));
    }

    #[test]
    fn generated_candidates_are_penetration_free() {
        let mesh = thin_box();
        let gripper = GripperModel::default();
        let index = SpatialIndex::build(mesh.clone()).unwrap();
        let candidates = generate_candidates(&mesh, &gripper, 10, 3).unwrap();
        for c in &candidates {
            assert!(!penetrates(&index, &c.pose, &gripper.body_boxes()));
        }
    }

    #[test]
    fn generated_thin_box_candidates_label_success() {
        let mesh = thin_box();
        let gripper = GripperModel::default();
        let mut candidates = generate_candidates(&mesh, &gripper, 10, 5).unwrap();
        label_candidates(&mesh, &gripper, &mut candidates).unwrap();
        let hash = labeling_config_hash(&gripper);
        let successes = candidates
            .iter()
            .filter(|c| c.label == Some(true))
            .count();
        assert!(
            successes * 2 > candidates.len(),
            "{successes}/{}",
            candidates.len()
        );
        assert!(candidates.iter().all(|c| c.config_hash == Some(hash)));
    }

    #[test]
    fn far_away_pose_labels_failure() {
        let mesh = thin_box();
        let gripper = GripperModel::default();
        let index = SpatialIndex::build(mesh.clone()).unwrap();
        let pose = Pose::from_translation(Vec3::new(0.0, 0.0, 2.0 * gripper.max_opening + 0.3));
        assert!(!label_candidate(&index, &gripper, &pose));
    }

    #[test]
    fn tangent_grasp_on_sphere_fails_cone_check() {
        // small sphere fits the opening, but a grasp whose closing axis is
        // tangent to the surface cannot pass the friction cone
        let mesh = TriMesh::icosphere(0.03, 3);
        let gripper = GripperModel::default();
        let index = SpatialIndex::build(mesh.clone()).unwrap();
        // closing along x, hand offset so the fingers straddle the top cap:
        // contact normals there point along +z, 90 degrees off the axis
        let pose = Pose::from_translation(Vec3::new(
            0.0,
            0.0,
            0.028 - gripper.contact_depth,
        ));
        assert!(!label_candidate(&index, &gripper, &pose));
    }

    #[test]
    fn labeling_invariant_under_rigid_transform() {
        let mesh = thin_box();
        let gripper = GripperModel::default();
        let index = SpatialIndex::build(mesh.clone()).unwrap();
        let candidates = generate_candidates(&mesh, &gripper, 8, 11).unwrap();
        let rigid = Pose::new(
            UnitQuat::from_axis_angle(Vec3::new(0.3, 1.0, -0.2).normalized(), 0.8),
            Vec3::new(0.4, -0.2, 0.7),
        );
        let mut moved = mesh.clone();
        for v in &mut moved.vertices {
            *v = rigid.apply(*v);
        }
        let moved_index = SpatialIndex::build(moved).unwrap();
        for c in &candidates {
            let a = label_candidate(&index, &gripper, &c.pose);
            let b = label_candidate(&moved_index, &gripper, &rigid.compose(&c.pose));
            assert_eq!(a, b);
        }
    }

    fn tiny_model(seed: u64) -> MimoModel {
        MimoModel::init(
            crate::field::MimoConfig {
                latent_dim: 16,
                encoder_widths: vec![16, 16],
                trunk_widths: vec![16],
                head_widths: vec![8, 8],
                sh_degree: 2,
                ..crate::field::MimoConfig::default()
            },
            seed,
        )
    }

    #[test]
    fn selection_ranks_the_demo_pose_first() {
        use crate::pose::{pose_descriptor, sample_bps};
        let model = tiny_model(1);
        let mesh = thin_box();
        let cloud = sample_surface(&mesh, 128, 2).unwrap();
        let x = sample_bps(8, 0.05, 3).unwrap();
        let mut candidates = generate_candidates(&mesh, &GripperModel::default(), 6, 4).unwrap();
        let demo_pose = candidates[3].pose;
        let z_demo = pose_descriptor(&model, &cloud, &demo_pose, &x).unwrap();
        candidates.push(GraspCandidate {
            pose: demo_pose,
            label: None,
            provenance: Provenance::DemoTransfer,
            config_hash: None,
        });
        let ranked =
            select_task_relevant(&model, &cloud, &candidates, &x, &z_demo, 3).unwrap();
        assert_eq!(ranked.len(), 3);
        assert!(ranked[0].1 < 1e-12); // exact self-match
        // ties (indices 3 and the appended copy) resolve to the lower index
        assert_eq!(ranked[0].0.pose, demo_pose);
        assert!(ranked[0].1 <= ranked[1].1 && ranked[1].1 <= ranked[2].1);
    }

    #[test]
    fn demo_transfer_self_identity_within_cutoff() {
        use crate::pose::sample_bps;
        let model = tiny_model(5);
        let mesh = thin_box();
        let cloud = sample_surface(&mesh, 128, 6).unwrap();
        let x = sample_bps(8, 0.05, 7).unwrap();
        let t_demo = Pose::from_translation(Vec3::new(0.01, 0.0, 0.02));
        let config = TransferConfig {
            restarts: 2,
            iterations: 120,
            step: 5e-3,
            seed: 0,
        };
        // same cloud on both sides: restart 0 converges near t_demo
        let out = transfer_demo_to_canonical(
            &model,
            &cloud,
            &cloud,
            &x,
            &t_demo,
            &config,
            f64::INFINITY,
        )
        .unwrap();
        assert!(!out.is_empty());
        assert!(out
            .iter()
            .all(|c| c.provenance == Provenance::DemoTransfer));
        let best = out
            .iter()
            .map(|c| (c.pose.translation - t_demo.translation).norm())
            .fold(f64::INFINITY, f64::min);
        assert!(best < 0.05, "best translation error {best}");
        // an impossible cutoff leaves nothing
        assert!(matches!(
            transfer_demo_to_canonical(&model, &cloud, &cloud, &x, &t_demo, &config, -1.0),
            Err(GraspError::NoTransfer { .. })
        ));
    }

    #[test]
    fn fuse_deduplicates_near_identical_poses() {
        let mk = |t: Vec3, prov| GraspCandidate {
            pose: Pose::from_translation(t),
            label: None,
            provenance: prov,
            config_hash: None,
        };
        let a = vec![mk(Vec3::ZERO, Provenance::Heuristic)];
        let b = vec![
            mk(Vec3::new(0.001, 0.0, 0.0), Provenance::DemoTransfer),
            mk(Vec3::new(0.1, 0.0, 0.0), Provenance::DemoTransfer),
        ];
        let fused = fuse_candidates(a, b, 0.005, 2.0);
        assert_eq!(fused.len(), 2);
    }
}
