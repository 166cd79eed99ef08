//! On-disk formats for grasp artifacts: candidates as JSON lines (one
//! object per line) and fitted pose mixtures as a single JSON document
//! with flat numeric arrays.

use super::{EvaluatorModel, GmmComponent, GraspCandidate, GraspError, GraspGmm, Provenance};
use crate::geom::Pose;
use crate::grasp::GripperModel;
use crate::nn::{Mlp, Tensor};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

#[derive(serde::Serialize, serde::Deserialize)]
struct CandidateLine {
    pose: [f64; 7],
    label: Option<bool>,
    provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<u64>,
}

/// One candidate per line: `{"pose": [qw,qx,qy,qz,tx,ty,tz], "label": …,
/// "provenance": …, "config_hash": …}`.
pub fn write_candidates(path: &Path, candidates: &[GraspCandidate]) -> Result<(), GraspError> {
    let mut file = std::fs::File::create(path)?;
    for c in candidates {
        let line = CandidateLine {
            pose: c.pose.to_array(),
            label: c.label,
            provenance: c.provenance,
            config_hash: c.config_hash,
        };
        serde_json::to_writer(&mut file, &line).map_err(|e| GraspError::BadFile {
            file: path.display().to_string(),
            msg: e.to_string(),
        })?;
        writeln!(file)?;
    }
    Ok(())
}

pub fn read_candidates(path: &Path) -> Result<Vec<GraspCandidate>, GraspError> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: CandidateLine =
            serde_json::from_str(&line).map_err(|e| GraspError::BadFile {
                file: path.display().to_string(),
                msg: format!("line {}: {}", i + 1, e),
            })?;
        out.push(GraspCandidate {
            pose: Pose::from_array(parsed.pose),
            label: parsed.label,
            provenance: parsed.provenance,
            config_hash: parsed.config_hash,
        });
    }
    Ok(out)
}

#[derive(serde::Serialize, serde::Deserialize)]
struct GmmFile {
    weights: Vec<f64>,
    /// one `[qw,qx,qy,qz,tx,ty,tz]` per component
    means: Vec<[f64; 7]>,
    /// one row-major 6x6 tangent covariance (36 values) per component
    covariances: Vec<Vec<f64>>,
}

pub fn write_gmm(path: &Path, gmm: &GraspGmm) -> Result<(), GraspError> {
    let file = GmmFile {
        weights: gmm.components.iter().map(|c| c.weight).collect(),
        means: gmm.components.iter().map(|c| c.mean.to_array()).collect(),
        covariances: gmm
            .components
            .iter()
            .map(|c| c.covariance.iter().flatten().copied().collect())
            .collect(),
    };
    let json = serde_json::to_string_pretty(&file).expect("mixture serializes");
    std::fs::write(path, json)?;
    Ok(())
}

pub fn read_gmm(path: &Path) -> Result<GraspGmm, GraspError> {
    let bad = |msg: String| GraspError::BadFile {
        file: path.display().to_string(),
        msg,
    };
    let text = std::fs::read_to_string(path)?;
    let file: GmmFile = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    if file.weights.len() != file.means.len() || file.weights.len() != file.covariances.len() {
        return Err(bad(format!(
            "component counts disagree: {} weights, {} means, {} covariances",
            file.weights.len(),
            file.means.len(),
            file.covariances.len()
        )));
    }
    let mut components = Vec::with_capacity(file.weights.len());
    for ((w, m), cov_flat) in file
        .weights
        .into_iter()
        .zip(file.means)
        .zip(file.covariances)
    {
        if cov_flat.len() != 36 {
            return Err(bad(format!(
                "covariance has {} entries, expected 36",
                cov_flat.len()
            )));
        }
        let mut covariance = [[0.0; 6]; 6];
        for (r, row) in covariance.iter_mut().enumerate() {
            row.copy_from_slice(&cov_flat[r * 6..(r + 1) * 6]);
        }
        components.push(GmmComponent {
            weight: w,
            mean: Pose::from_array(m),
            covariance,
        });
    }
    Ok(GraspGmm { components })
}

#[derive(serde::Serialize, serde::Deserialize)]
struct EvaluatorLayer {
    rows: usize,
    cols: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct EvaluatorFile {
    gripper: GripperModel,
    latent_dim: usize,
    layers: Vec<EvaluatorLayer>,
}

/// JSON snapshot of the evaluator head; floats round-trip bitwise.
pub fn write_evaluator(path: &Path, evaluator: &EvaluatorModel) -> Result<(), GraspError> {
    let file = EvaluatorFile {
        gripper: evaluator.gripper.clone(),
        latent_dim: evaluator.latent_dim(),
        layers: evaluator
            .head
            .layers
            .iter()
            .map(|(w, b)| EvaluatorLayer {
                rows: w.rows(),
                cols: w.cols(),
                weight: w.data.clone(),
                bias: b.data.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_string(&file).expect("evaluator serializes");
    std::fs::write(path, json)?;
    Ok(())
}

pub fn read_evaluator(path: &Path) -> Result<EvaluatorModel, GraspError> {
    let bad = |msg: String| GraspError::BadFile {
        file: path.display().to_string(),
        msg,
    };
    let text = std::fs::read_to_string(path)?;
    let file: EvaluatorFile = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    let mut layers = Vec::with_capacity(file.layers.len());
    for (i, l) in file.layers.into_iter().enumerate() {
        if l.weight.len() != l.rows * l.cols || l.bias.len() != l.cols {
            return Err(bad(format!("layer {i} has inconsistent shapes")));
        }
        layers.push((
            Tensor::matrix(l.rows, l.cols, l.weight),
            Tensor::vector(l.bias),
        ));
    }
    if layers.is_empty() {
        return Err(bad("no layers".into()));
    }
    EvaluatorModel::from_parts(file.gripper, Mlp { layers }, file.latent_dim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{UnitQuat, Vec3};

    #[test]
    fn candidates_roundtrip() {
        let candidates = vec![
            GraspCandidate {
                pose: Pose::new(
                    UnitQuat::from_axis_angle(Vec3::new(0.2, 1.0, -0.3), 0.8),
                    Vec3::new(0.01, -0.02, 0.03),
                ),
                label: Some(true),
                provenance: Provenance::Heuristic,
                config_hash: Some(42),
            },
            GraspCandidate {
                pose: Pose::IDENTITY,
                label: None,
                provenance: Provenance::DemoTransfer,
                config_hash: None,
            },
            GraspCandidate {
                pose: Pose::from_translation(Vec3::new(1.0, 2.0, 3.0)),
                label: Some(false),
                provenance: Provenance::GmmSample,
                config_hash: Some(7),
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("candidates.jsonl");
        write_candidates(&path, &candidates).unwrap();
        let loaded = read_candidates(&path).unwrap();
        assert_eq!(loaded.len(), candidates.len());
        for (a, b) in loaded.iter().zip(&candidates) {
            // renormalization on load may flip the last bit of the rotation
            for (x, y) in a.pose.to_array().iter().zip(b.pose.to_array()) {
                assert!((x - y).abs() < 1e-12);
            }
            assert_eq!(a.label, b.label);
            assert_eq!(a.provenance, b.provenance);
            assert_eq!(a.config_hash, b.config_hash);
        }
        // one JSON object per line
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.trim().lines().count(), 3);
        for line in text.trim().lines() {
            assert!(serde_json::from_str::<serde_json::Value>(line).is_ok());
        }
    }

    #[test]
    fn gmm_roundtrip() {
        let mut cov = [[0.0; 6]; 6];
        for (i, row) in cov.iter_mut().enumerate() {
            row[i] = 0.01 * (i + 1) as f64;
        }
        cov[0][3] = 1e-4;
        cov[3][0] = 1e-4;
        let gmm = GraspGmm {
            components: vec![
                GmmComponent {
                    weight: 0.3,
                    mean: Pose::new(
                        UnitQuat::from_axis_angle(Vec3::Z, 0.4),
                        Vec3::new(0.1, 0.0, -0.1),
                    ),
                    covariance: cov,
                },
                GmmComponent {
                    weight: 0.7,
                    mean: Pose::IDENTITY,
                    covariance: cov,
                },
            ],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gmm.json");
        write_gmm(&path, &gmm).unwrap();
        let loaded = read_gmm(&path).unwrap();
        assert_eq!(loaded.components.len(), gmm.components.len());
        for (a, b) in loaded.components.iter().zip(&gmm.components) {
            assert_eq!(a.weight, b.weight);
            assert_eq!(a.covariance, b.covariance);
            for (x, y) in a.mean.to_array().iter().zip(b.mean.to_array()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn malformed_line_reported_with_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(
            &path,
            "{\"pose\":[1,0,0,0,0,0,0],\"label\":null,\"provenance\":\"heuristic\"}\nnot json\n",
        )
        .unwrap();
        match read_candidates(&path) {
            Err(GraspError::BadFile { msg, .. }) => assert!(msg.contains("line 2")),
            other => panic!("expected BadFile, got {other:?}"),
        }
    }

    #[test]
    fn evaluator_roundtrip_bitwise() {
        let evaluator = EvaluatorModel::init(16, GripperModel::default(), 9);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("evaluator.json");
        write_evaluator(&path, &evaluator).unwrap();
        let loaded = read_evaluator(&path).unwrap();
        assert_eq!(loaded, evaluator);
    }

    #[test]
    fn wrong_covariance_size_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gmm.json");
        std::fs::write(
            &path,
            "{\"weights\":[1.0],\"means\":[[1,0,0,0,0,0,0]],\"covariances\":[[1,2,3]]}",
        )
        .unwrap();
        assert!(matches!(read_gmm(&path), Err(GraspError::BadFile { .. })));
    }
}
