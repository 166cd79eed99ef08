use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FeatureError, FeatureOracle, FeatureSample, QuadratureRule, ShBasis};
use crate::geom::{
    generate_shape, look_at, render_partial_indexed, sample_surface, PointCloud, ShapeSpec,
    SpatialIndex, Vec3,
};

/// How the observed cloud of each shape is produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum ViewMode {
    /// Area-weighted sample of the full surface.
    Full { points: usize },
    /// Single synthetic depth view from a seed-chosen direction.
    Partial {
        width: usize,
        height: usize,
        distance: f64,
    },
}

impl Default for ViewMode {
    fn default() -> Self {
        ViewMode::Full { points: 512 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// query samples per shape
    pub samples_per_shape: usize,
    pub view: ViewMode,
    /// spherical-harmonics degree for the coverage coefficients
    pub sh_degree: usize,
    /// coverage ray range; 0 means 2x the shape bounding radius
    pub range: f64,
    /// principal direction for the closest-distance-direction target
    pub v_p: Vec3,
    /// standard deviation of the near-surface query offset
    pub near_surface_sigma: f64,
    /// quadrature rule for the coverage expansion
    #[serde(default)]
    pub quadrature: QuadratureRule,
    /// optional isotropic jitter on observed clouds
    pub cloud_noise: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            samples_per_shape: 512,
            view: ViewMode::default(),
            sh_degree: 5,
            range: 0.0,
            v_p: Vec3::Z,
            near_surface_sigma: 0.025,
            quadrature: QuadratureRule::default(),
            cloud_noise: 0.0,
            seed: 0,
        }
    }
}

/// Per-shape training data plus the metadata needed to reproduce it.
#[derive(Debug, Clone)]
pub struct FeatureDataset {
    pub shape_id: String,
    pub spec: ShapeSpec,
    pub observed: PointCloud,
    pub samples: Vec<FeatureSample>,
    pub sh_degree: usize,
    pub range: f64,
    pub v_p: Vec3,
    pub seed: u64,
}

/// Build one dataset per shape spec. Deterministic for a given config:
/// per-sample RNG streams keyed on (seed, shape, sample) make the output
/// independent of evaluation order.
pub fn build_dataset(
    shapes: &[ShapeSpec],
    config: &DatasetConfig,
) -> Result<Vec<FeatureDataset>, FeatureError> {
    assert!(config.samples_per_shape >= 1);
    let basis = ShBasis::new(config.sh_degree);
    let quad = config.quadrature.build();
    shapes
        .iter()
        .enumerate()
        .map(|(si, spec)| {
            build_one(spec, si, config, &basis, &quad).map_err(|e| match e {
                FeatureError::Geom(g) => FeatureError::Shape {
                    shape: format!("{}-{}", spec.category, spec.seed),
                    source: g,
                },
                other => other,
            })
        })
        .collect()
}

fn build_one(
    spec: &ShapeSpec,
    shape_index: usize,
    config: &DatasetConfig,
    basis: &ShBasis,
    quad: &super::SphereQuadrature,
) -> Result<FeatureDataset, FeatureError> {
    let mesh = generate_shape(spec)?;
    mesh.check_watertight()?;
    let index = SpatialIndex::build(mesh)?;
    let range = if config.range > 0.0 {
        config.range
    } else {
        2.0 * index.mesh().bounding_radius()
    };
    let shape_seed = config
        .seed
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(shape_index as u64);

    let mut observed = match &config.view {
        ViewMode::Full { points } => sample_surface(index.mesh(), *points, shape_seed)?,
        ViewMode::Partial {
            width,
            height,
            distance,
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(shape_seed ^ 0xca3e_74);
            let dir = random_unit(&mut rng);
            let cam = look_at(dir * *distance, Vec3::ZERO);
            render_partial_indexed(&index, &cam, *width, *height)?
        }
    };
    if config.cloud_noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(shape_seed ^ 0x6015_e);
        for p in &mut observed.points {
            *p = *p + random_gaussian(&mut rng) * config.cloud_noise;
        }
    }

    let surface = sample_surface(index.mesh(), config.samples_per_shape, shape_seed ^ 0x5f)?;
    let (lo, hi) = index.mesh().bounds();
    let pad = Vec3::splat(0.15);
    let (lo, hi) = (lo - pad, hi + pad);

    let oracle = FeatureOracle {
        index: &index,
        basis,
        quad,
        range,
        v_p: config.v_p,
    };
    let samples: Result<Vec<FeatureSample>, FeatureError> = (0..config.samples_per_shape)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(shape_seed ^ (0xa11ce ^ (i as u64) << 20));
            // 50% near-surface, 50% uniform in the padded bounding box
            for _attempt in 0..64 {
                let x = if i % 2 == 0 {
                    surface.points[i] + random_gaussian(&mut rng) * config.near_surface_sigma
                } else {
                    Vec3::new(
                        rng.gen_range(lo.x..hi.x),
                        rng.gen_range(lo.y..hi.y),
                        rng.gen_range(lo.z..hi.z),
                    )
                };
                match oracle.sample(x) {
                    Ok(s) => return Ok(s),
                    Err(FeatureError::OnSurface) => continue,
                    Err(e) => return Err(e),
                }
            }
            unreachable!("surface-coincident draws 64 times in a row")
        })
        .collect();

    Ok(FeatureDataset {
        shape_id: format!("{}-{:03}", spec.category, shape_index),
        spec: spec.clone(),
        observed,
        samples: samples?,
        sh_degree: config.sh_degree,
        range,
        v_p: config.v_p,
        seed: config.seed,
    })
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-6 && n <= 1.0 {
            return v / n;
        }
    }
}

fn random_gaussian(rng: &mut ChaCha8Rng) -> Vec3 {
    let mut draw = || {
        let (u1, u2): (f64, f64) = (rng.gen_range(1e-12..1.0), rng.gen());
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    };
    Vec3::new(draw(), draw(), draw())
}

// ---------------------------------------------------------------------------
// on-disk format: JSON manifest + one binary record file per shape

const MAGIC: &[u8; 8] = b"MFFEATD1";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    sh_degree: usize,
    v_p: Vec3,
    seed: u64,
    shapes: Vec<ManifestShape>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestShape {
    id: String,
    spec: ShapeSpec,
    range: f64,
    records: String,
    cloud: String,
    samples: usize,
}

/// Write a manifest (`manifest.json`), one binary record file and one PLY
/// observed cloud per shape into `dir`.
pub fn write_dataset(datasets: &[FeatureDataset], dir: &Path) -> Result<(), FeatureError> {
    std::fs::create_dir_all(dir)?;
    let mut shapes = Vec::new();
    for ds in datasets {
        let rec_name = format!("{}.bin", ds.shape_id);
        let cloud_name = format!("{}.ply", ds.shape_id);
        let mut file = std::fs::File::create(dir.join(&rec_name))?;
        // 16-byte header: magic, version, record count
        file.write_all(MAGIC)?;
        file.write_all(&VERSION.to_le_bytes())?;
        file.write_all(&(ds.samples.len() as u32).to_le_bytes())?;
        let coeffs = (ds.sh_degree + 1) * (ds.sh_degree + 1);
        for s in &ds.samples {
            debug_assert_eq!(s.escf.len(), coeffs);
            let mut rec: Vec<f32> = Vec::with_capacity(6 + coeffs);
            rec.extend([s.x.x as f32, s.x.y as f32, s.x.z as f32, s.occ as f32, s.sdf as f32]);
            rec.extend(s.escf.iter().map(|&v| v as f32));
            rec.push(s.cdd as f32);
            for v in rec {
                file.write_all(&v.to_le_bytes())?;
            }
        }
        crate::geom::write_ply(&ds.observed, &dir.join(&cloud_name))?;
        shapes.push(ManifestShape {
            id: ds.shape_id.clone(),
            spec: ds.spec.clone(),
            range: ds.range,
            records: rec_name,
            cloud: cloud_name,
            samples: ds.samples.len(),
        });
    }
    let manifest = Manifest {
        sh_degree: datasets.first().map_or(5, |d| d.sh_degree),
        v_p: datasets.first().map_or(Vec3::Z, |d| d.v_p),
        seed: datasets.first().map_or(0, |d| d.seed),
        shapes,
    };
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<Vec<FeatureDataset>, FeatureError> {
    let bad = |file: &Path, msg: String| FeatureError::BadFile {
        file: file.display().to_string(),
        msg,
    };
    let manifest_path = dir.join("manifest.json");
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(&manifest_path)?)
        .map_err(|e| bad(&manifest_path, e.to_string()))?;
    let coeffs = (manifest.sh_degree + 1) * (manifest.sh_degree + 1);
    let mut out = Vec::new();
    for shape in manifest.shapes {
        let rec_path = dir.join(&shape.records);
        let mut file = std::fs::File::open(&rec_path)?;
        let mut header = [0u8; 16];
        file.read_exact(&mut header)?;
        if &header[..8] != MAGIC {
            return Err(bad(&rec_path, "bad magic".into()));
        }
        let version = u32::from_le_bytes(header[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(bad(&rec_path, format!("unsupported version {version}")));
        }
        let count = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
        let rec_len = 6 + coeffs;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        if bytes.len() != count * rec_len * 4 {
            return Err(bad(&rec_path, format!("expected {count} records")));
        }
        let mut samples = Vec::with_capacity(count);
        for r in 0..count {
            let base = r * rec_len * 4;
            let f = |k: usize| -> f64 {
                f32::from_le_bytes(bytes[base + 4 * k..base + 4 * k + 4].try_into().unwrap())
                    as f64
            };
            samples.push(FeatureSample {
                x: Vec3::new(f(0), f(1), f(2)),
                occ: f(3),
                sdf: f(4),
                escf: (0..coeffs).map(|k| f(5 + k)).collect(),
                cdd: f(5 + coeffs),
            });
        }
        let observed = crate::geom::read_ply(&dir.join(&shape.cloud))?;
        out.push(FeatureDataset {
            shape_id: shape.id,
            spec: shape.spec,
            observed,
            samples,
            sh_degree: manifest.sh_degree,
            range: shape.range,
            v_p: manifest.v_p,
            seed: manifest.seed,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::ShapeCategory;

    fn tiny_config() -> DatasetConfig {
        DatasetConfig {
            samples_per_shape: 60,
            view: ViewMode::Full { points: 64 },
            sh_degree: 2,
            quadrature: QuadratureRule::GaussProduct { n_theta: 8, n_phi: 16 },
            seed: 3,
            ..DatasetConfig::default()
        }
    }

    #[test]
    fn occ_sdf_consistent_on_every_sample() {
        let shapes = [ShapeSpec::sample(ShapeCategory::Bottle, 1)];
        let data = build_dataset(&shapes, &tiny_config()).unwrap();
        for s in &data[0].samples {
            assert_eq!(s.occ == 1.0, s.sdf < 0.0, "occ/sdf mismatch at {:?}", s.x);
            assert!((-1.0..=1.0).contains(&s.cdd));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let shapes = [ShapeSpec::sample(ShapeCategory::Bowl, 2)];
        let a = build_dataset(&shapes, &tiny_config()).unwrap();
        let b = build_dataset(&shapes, &tiny_config()).unwrap();
        assert_eq!(a[0].samples, b[0].samples);
        assert_eq!(a[0].observed, b[0].observed);
    }

    #[test]
    fn near_surface_samples_concentrate() {
        let shapes = [ShapeSpec::sample(ShapeCategory::Mug, 4)];
        let mut config = tiny_config();
        config.samples_per_shape = 200;
        let data = build_dataset(&shapes, &config).unwrap();
        let near: Vec<&FeatureSample> =
            data[0].samples.iter().step_by(2).collect(); // even indices are near-surface
        let uniform: Vec<&FeatureSample> = data[0].samples.iter().skip(1).step_by(2).collect();
        let frac = |set: &[&FeatureSample]| {
            set.iter().filter(|s| s.sdf.abs() < 0.1).count() as f64 / set.len() as f64
        };
        assert!(frac(&near) > frac(&uniform));
    }

    #[test]
    fn roundtrips_through_disk() {
        let shapes = [ShapeSpec::sample(ShapeCategory::Mug, 7)];
        let data = build_dataset(&shapes, &tiny_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&data, dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].samples.len(), data[0].samples.len());
        for (a, b) in data[0].samples.iter().zip(&back[0].samples) {
            assert!((a.x - b.x).norm() < 1e-6);
            assert_eq!(a.occ, b.occ);
            assert!((a.sdf - b.sdf).abs() < 1e-6);
            assert!((a.cdd - b.cdd).abs() < 1e-6);
        }
    }
}
