use super::{sample_bps, BasisPointSet, PoseError};
use crate::geom::{read_ply, write_ply, PointCloud, Pose};
use std::path::Path;

/// Basis-point-set parameters stored with a demonstration so transfer
/// reuses the identical set.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BpsSpec {
    pub n: usize,
    pub radius: f64,
    pub seed: u64,
}

impl BpsSpec {
    pub fn sample(&self) -> Result<BasisPointSet, PoseError> {
        sample_bps(self.n, self.radius, self.seed)
    }
}

/// A recorded demonstration: object clouds at the final configuration and
/// the demonstrated grasp pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub source_cloud: PointCloud,
    pub target_cloud: PointCloud,
    pub grasp_pose: Pose,
    pub bps: BpsSpec,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct DemoFile {
    source_cloud: String,
    target_cloud: String,
    grasp_pose: [f64; 7],
    bps: BpsSpec,
}

/// JSON index referencing PLY clouds by path relative to the JSON file.
pub fn read_demonstration(path: &Path) -> Result<Demonstration, PoseError> {
    let text = std::fs::read_to_string(path)?;
    let file: DemoFile = serde_json::from_str(&text).map_err(|e| PoseError::BadFile {
        file: path.display().to_string(),
        msg: e.to_string(),
    })?;
    let dir = path.parent().unwrap_or(Path::new("."));
    Ok(Demonstration {
        source_cloud: read_ply(&dir.join(&file.source_cloud))?,
        target_cloud: read_ply(&dir.join(&file.target_cloud))?,
        grasp_pose: Pose::from_array(file.grasp_pose),
        bps: file.bps,
    })
}

/// Write `<stem>.json` plus `<stem>_source.ply` and `<stem>_target.ply`
/// next to it.
pub fn write_demonstration(path: &Path, demo: &Demonstration) -> Result<(), PoseError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| PoseError::BadFile {
            file: path.display().to_string(),
            msg: "path has no file stem".into(),
        })?;
    let source = format!("{stem}_source.ply");
    let target = format!("{stem}_target.ply");
    write_ply(&demo.source_cloud, &dir.join(&source))?;
    write_ply(&demo.target_cloud, &dir.join(&target))?;
    let file = DemoFile {
        source_cloud: source,
        target_cloud: target,
        grasp_pose: demo.grasp_pose.to_array(),
        bps: demo.bps.clone(),
    };
    let json = serde_json::to_string_pretty(&file).expect("demo serializes");
    std::fs::write(path, json)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{UnitQuat, Vec3};

    #[test]
    fn demonstration_roundtrip() {
        let demo = Demonstration {
            source_cloud: PointCloud {
                points: vec![Vec3::new(0.1, 0.2, 0.3), Vec3::new(-0.4, 0.5, 0.0)],
                normals: None,
            },
            target_cloud: PointCloud {
                points: vec![Vec3::new(1.0, 0.0, 0.0)],
                normals: None,
            },
            grasp_pose: Pose::new(
                UnitQuat::from_axis_angle(Vec3::new(0.0, 1.0, 0.0), 0.4),
                Vec3::new(0.01, 0.02, 0.03),
            ),
            bps: BpsSpec {
                n: 16,
                radius: 0.12,
                seed: 4,
            },
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demo.json");
        write_demonstration(&path, &demo).unwrap();
        let loaded = read_demonstration(&path).unwrap();
        assert_eq!(loaded.bps, demo.bps);
        assert_eq!(loaded.source_cloud.points.len(), 2);
        assert_eq!(loaded.target_cloud.points.len(), 1);
        for (a, b) in loaded
            .grasp_pose
            .to_array()
            .iter()
            .zip(demo.grasp_pose.to_array())
        {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in loaded
            .source_cloud
            .points
            .iter()
            .zip(&demo.source_cloud.points)
        {
            assert!((*a - *b).norm() < 1e-12);
        }
    }

    #[test]
    fn missing_file_reported() {
        assert!(read_demonstration(Path::new("/nonexistent/demo.json")).is_err());
    }
}
