//! Multi-head implicit field model: permutation-invariant set encoder,
//! partly-shared decoder with four branches, and point descriptors.

mod checkpoint;
mod train;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CheckpointMeta};
pub use train::{train, train_resume, LossRecord, TrainConfig, TrainReport, TrainState};

use crate::geom::{PointCloud, Vec3};
use crate::nn::{Mlp, MultiTaskLossState, Tape, Tensor, Var};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("point cloud has {got} points; at least {min} required")]
    TooFewPoints { got: usize, min: usize },
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("non-finite loss at step {step}")]
    NonFinite { step: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint {file}: {msg}")]
    BadCheckpoint { file: String, msg: String },
}

/// The four decoder branches, in loss order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Occupancy,
    Sdf,
    Escf,
    Cdd,
}

pub const BRANCHES: [Branch; 4] = [Branch::Occupancy, Branch::Sdf, Branch::Escf, Branch::Cdd];

/// Which heads contribute hidden activations to the point descriptor.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DescriptorHeads {
    pub escf: bool,
    pub cdd: bool,
}

impl Default for DescriptorHeads {
    fn default() -> Self {
        Self {
            escf: true,
            cdd: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MimoConfig {
    /// pooled latent dimension
    pub latent_dim: usize,
    /// per-point encoder hidden widths (before the latent layer)
    pub encoder_widths: Vec<usize>,
    /// shared trunk hidden widths
    pub trunk_widths: Vec<usize>,
    /// hidden widths of every branch head
    pub head_widths: Vec<usize>,
    /// spherical-harmonics degree of the coverage branch
    pub sh_degree: usize,
    /// clamp for the signed-distance loss
    pub sdf_clamp: f64,
    pub descriptor_heads: DescriptorHeads,
}

impl Default for MimoConfig {
    fn default() -> Self {
        Self {
            latent_dim: 128,
            encoder_widths: vec![64, 128, 128],
            trunk_widths: vec![128, 128],
            head_widths: vec![64, 64],
            sh_degree: 5,
            sdf_clamp: 0.1,
            descriptor_heads: DescriptorHeads::default(),
        }
    }
}

impl MimoConfig {
    pub fn escf_dim(&self) -> usize {
        (self.sh_degree + 1) * (self.sh_degree + 1)
    }

    fn head_out_dim(&self, branch: Branch) -> usize {
        match branch {
            Branch::Escf => self.escf_dim(),
            _ => 1,
        }
    }

    /// Dimension of the concatenated hidden activations forming z.
    pub fn descriptor_dim(&self) -> usize {
        let per_head: usize = self.head_widths.iter().sum();
        let mut n = 0;
        if self.descriptor_heads.escf {
            n += per_head;
        }
        if self.descriptor_heads.cdd {
            n += per_head;
        }
        n
    }
}

/// Branch outputs at one query point.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchOutputs {
    pub occ_logit: f64,
    pub sdf: f64,
    pub escf: Vec<f64>,
    pub cdd: f64,
}

impl BranchOutputs {
    pub fn occ_probability(&self) -> f64 {
        1.0 / (1.0 + (-self.occ_logit).exp())
    }
}

/// Encoded shape: pooled latent plus the centroid the input was centered
/// on. Queries must be expressed relative to the same centroid.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    pub c: Tensor,
    pub centroid: Vec3,
}

/// The full model: encoder, trunk, four heads, and the loss weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MimoModel {
    pub config: MimoConfig,
    pub encoder: Mlp,
    pub trunk: Mlp,
    /// occupancy, sdf, escf, cdd
    pub heads: [Mlp; 4],
    pub loss_state: MultiTaskLossState,
}

pub const MIN_CLOUD_POINTS: usize = 8;

impl MimoModel {
    pub fn init(config: MimoConfig, seed: u64) -> Self {
        let mut enc_dims = vec![3];
        enc_dims.extend_from_slice(&config.encoder_widths);
        enc_dims.push(config.latent_dim);
        let mut trunk_dims = vec![config.latent_dim + 3];
        trunk_dims.extend_from_slice(&config.trunk_widths);
        let trunk_out = *trunk_dims.last().unwrap();
        let heads = std::array::from_fn(|i| {
            let mut dims = vec![trunk_out];
            dims.extend_from_slice(&config.head_widths);
            dims.push(config.head_out_dim(BRANCHES[i]));
            Mlp::init(&dims, seed ^ ((i as u64 + 2) << 48))
        });
        Self {
            encoder: Mlp::init(&enc_dims, seed),
            trunk: Mlp::init(&trunk_dims, seed ^ (1 << 48)),
            heads,
            loss_state: MultiTaskLossState::new(config.sdf_clamp),
            config,
        }
    }

    /// All parameter tensors in a fixed order (encoder, trunk, heads).
    pub fn param_tensors(&self) -> Vec<&Tensor> {
        let mut out = self.encoder.param_tensors();
        out.extend(self.trunk.param_tensors());
        for h in &self.heads {
            out.extend(h.param_tensors());
        }
        out
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.encoder.param_tensors_mut();
        out.extend(self.trunk.param_tensors_mut());
        for h in &mut self.heads {
            out.extend(h.param_tensors_mut());
        }
        out
    }

    /// Encode a cloud into the pooled latent. Exactly permutation- and
    /// duplication-invariant by max-pool construction, and translation-
    /// invariant because the input is centered on the canonical centroid.
    pub fn encode(&self, cloud: &PointCloud) -> Result<Latent, FieldError> {
        if cloud.points.len() < MIN_CLOUD_POINTS {
            return Err(FieldError::TooFewPoints {
                got: cloud.points.len(),
                min: MIN_CLOUD_POINTS,
            });
        }
        let centroid = cloud.canonical_centroid();
        let mut tape = Tape::new();
        let x = tape.leaf(cloud_matrix(cloud, centroid));
        let (feat, _) = self.encoder.forward(&mut tape, x);
        let pooled = tape.max_pool_rows(feat);
        Ok(Latent {
            c: tape.value(pooled).clone(),
            centroid,
        })
    }

    /// Decode one query point.
    pub fn predict(&self, latent: &Latent, x: Vec3) -> BranchOutputs {
        self.predict_batch(latent, &[x]).pop().unwrap()
    }

    /// Decode a batch of query points sharing one latent.
    pub fn predict_batch(&self, latent: &Latent, xs: &[Vec3]) -> Vec<BranchOutputs> {
        let mut tape = Tape::new();
        let (outs, _) = self.decode_on_tape(&mut tape, latent, xs, None);
        let escf_dim = self.config.escf_dim();
        (0..xs.len())
            .map(|i| BranchOutputs {
                occ_logit: tape.value(outs[0]).data[i],
                sdf: tape.value(outs[1]).data[i],
                escf: tape.value(outs[2]).data[i * escf_dim..(i + 1) * escf_dim].to_vec(),
                cdd: tape.value(outs[3]).data[i],
            })
            .collect()
    }

    /// Point descriptor z: concatenated hidden activations of the selected
    /// heads, in layer order.
    pub fn point_descriptor(&self, latent: &Latent, x: Vec3) -> Vec<f64> {
        self.point_descriptors(latent, &[x]).pop().unwrap()
    }

    /// Batched descriptors sharing one latent.
    pub fn point_descriptors(&self, latent: &Latent, xs: &[Vec3]) -> Vec<Vec<f64>> {
        let mut tape = Tape::new();
        let (_, desc) = self.decode_on_tape(&mut tape, latent, xs, None);
        let t = tape.value(desc);
        let d = t.cols();
        (0..xs.len()).map(|i| t.data[i * d..(i + 1) * d].to_vec()).collect()
    }

    /// Shared decoder pass. With `staged` parameters the graph is suitable
    /// for training; otherwise parameters enter as fresh leaves. Returns
    /// the four head output vars and the descriptor matrix var.
    pub(crate) fn decode_on_tape(
        &self,
        tape: &mut Tape,
        latent: &Latent,
        xs: &[Vec3],
        staged: Option<&StagedParams>,
    ) -> ([Var; 4], Var) {
        let n = xs.len();
        let c = tape.leaf(Tensor::matrix(1, latent.c.len(), latent.c.data.clone()));
        let c_rows = tape.repeat_rows(c, n);
        let mut q = Vec::with_capacity(n * 3);
        for x in xs {
            let r = *x - latent.centroid;
            q.extend_from_slice(&[r.x, r.y, r.z]);
        }
        let qv = tape.leaf(Tensor::matrix(n, 3, q));
        let input = tape.concat_cols(&[c_rows, qv]);
        self.decode_from_input(tape, input, staged)
    }

    pub(crate) fn decode_from_input(
        &self,
        tape: &mut Tape,
        input: Var,
        staged: Option<&StagedParams>,
    ) -> ([Var; 4], Var) {
        let trunk_out = match staged {
            Some(p) => self.trunk.forward_with(tape, &p.trunk, input).0,
            None => self.trunk.forward(tape, input).0,
        };
        let shared = tape.relu(trunk_out);
        let mut outs = Vec::with_capacity(4);
        let mut desc_parts = Vec::new();
        for (i, head) in self.heads.iter().enumerate() {
            let (out, hidden) = match staged {
                Some(p) => head.forward_with(tape, &p.heads[i], shared),
                None => head.forward(tape, shared),
            };
            outs.push(out);
            let selected = match BRANCHES[i] {
                Branch::Escf => self.config.descriptor_heads.escf,
                Branch::Cdd => self.config.descriptor_heads.cdd,
                _ => false,
            };
            if selected {
                desc_parts.extend(hidden);
            }
        }
        let desc = tape.concat_cols(&desc_parts);
        ([outs[0], outs[1], outs[2], outs[3]], desc)
    }
}

/// Model parameters staged on a tape for a training step.
pub(crate) struct StagedParams {
    pub encoder: Vec<(Var, Var)>,
    pub trunk: Vec<(Var, Var)>,
    pub heads: [Vec<(Var, Var)>; 4],
}

impl StagedParams {
    pub fn stage(model: &MimoModel, tape: &mut Tape) -> Self {
        Self {
            encoder: model.encoder.stage(tape),
            trunk: model.trunk.stage(tape),
            heads: std::array::from_fn(|i| model.heads[i].stage(tape)),
        }
    }

    /// Vars in the same order as [`MimoModel::param_tensors`].
    pub fn flat_vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for (w, b) in self.encoder.iter().chain(&self.trunk).chain(self.heads.iter().flatten()) {
            out.push(*w);
            out.push(*b);
        }
        out
    }
}

pub(crate) fn cloud_matrix(cloud: &PointCloud, centroid: Vec3) -> Tensor {
    let mut data = Vec::with_capacity(cloud.points.len() * 3);
    for p in &cloud.points {
        let r = *p - centroid;
        data.extend_from_slice(&[r.x, r.y, r.z]);
    }
    Tensor::matrix(cloud.points.len(), 3, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = (0..n)
            .map(|_| {
                Vec3::new(
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                )
            })
            .collect();
        PointCloud {
            points,
            normals: None,
        }
    }

    fn tiny_config() -> MimoConfig {
        MimoConfig {
            latent_dim: 16,
            encoder_widths: vec![16, 16],
            trunk_widths: vec![16],
            head_widths: vec![8, 8],
            sh_degree: 2,
            ..MimoConfig::default()
        }
    }

    #[test]
    fn too_few_points_rejected() {
        let model = MimoModel::init(tiny_config(), 1);
        let cloud = random_cloud(4, 0);
        assert!(matches!(
            model.encode(&cloud),
            Err(FieldError::TooFewPoints { got: 4, min: 8 })
        ));
    }

    #[test]
    fn encode_is_bitwise_permutation_invariant() {
        let model = MimoModel::init(tiny_config(), 1);
        let cloud = random_cloud(32, 3);
        let mut shuffled = cloud.clone();
        shuffled.points.reverse();
        shuffled.points.swap(0, 7);
        let a = model.encode(&cloud).unwrap();
        let b = model.encode(&shuffled).unwrap();
        assert_eq!(a.c.data, b.c.data);
    }

    #[test]
    fn encode_is_bitwise_duplication_invariant() {
        let model = MimoModel::init(tiny_config(), 1);
        let cloud = random_cloud(16, 5);
        let mut doubled = cloud.clone();
        doubled.points.extend(cloud.points.iter().copied());
        let a = model.encode(&cloud).unwrap();
        let b = model.encode(&doubled).unwrap();
        assert_eq!(a.c.data, b.c.data);
    }

    #[test]
    fn encode_is_bitwise_translation_invariant_on_grid_data() {
        // power-of-two coordinates and shift keep centering exact in
        // floating point, so the invariance holds bitwise
        let model = MimoModel::init(tiny_config(), 1);
        let points: Vec<Vec3> = (0..16)
            .map(|i| {
                Vec3::new(
                    (i % 4) as f64 * 0.25,
                    (i / 4) as f64 * 0.25,
                    ((i * 7) % 8) as f64 * 0.125,
                )
            })
            .collect();
        let cloud = PointCloud {
            points,
            normals: None,
        };
        let t = Vec3::new(2.0, -4.0, 0.5);
        let moved = cloud.translated(t);
        let a = model.encode(&cloud).unwrap();
        let b = model.encode(&moved).unwrap();
        assert_eq!(a.c.data, b.c.data);
        // descriptors at co-translated queries also agree bitwise
        let q = Vec3::new(0.25, 0.5, 0.125);
        assert_eq!(
            model.point_descriptor(&a, q),
            model.point_descriptor(&b, q + t)
        );
    }

    #[test]
    fn predict_deterministic_and_shaped() {
        let model = MimoModel::init(tiny_config(), 9);
        let cloud = random_cloud(24, 11);
        let latent = model.encode(&cloud).unwrap();
        let q = Vec3::new(0.1, -0.2, 0.05);
        let a = model.predict(&latent, q);
        let b = model.predict(&latent, q);
        assert_eq!(a, b);
        assert_eq!(a.escf.len(), 9);
        assert!(a.occ_probability() > 0.0 && a.occ_probability() < 1.0);
    }

    #[test]
    fn batch_predict_matches_single() {
        let model = MimoModel::init(tiny_config(), 9);
        let cloud = random_cloud(24, 11);
        let latent = model.encode(&cloud).unwrap();
        let qs = [
            Vec3::new(0.1, -0.2, 0.05),
            Vec3::new(-0.3, 0.0, 0.4),
            Vec3::new(0.0, 0.0, 0.0),
        ];
        let batch = model.predict_batch(&latent, &qs);
        for (q, b) in qs.iter().zip(&batch) {
            assert_eq!(&model.predict(&latent, *q), b);
        }
    }

    #[test]
    fn descriptor_dim_matches_config() {
        let config = MimoConfig::default();
        assert_eq!(config.descriptor_dim(), 256);
        let model = MimoModel::init(tiny_config(), 2);
        let cloud = random_cloud(16, 1);
        let latent = model.encode(&cloud).unwrap();
        let z = model.point_descriptor(&latent, Vec3::new(0.1, 0.1, 0.1));
        assert_eq!(z.len(), model.config.descriptor_dim());
        assert!(z.iter().all(|v| v.is_finite()));
    }
}
