//! ASCII OBJ meshes (triangles only) and ASCII PLY point clouds
//! (`x y z [nx ny nz]`).

use std::fmt::Write as _;
use std::path::Path;

use super::{GeomError, PointCloud, TriMesh, Vec3};

pub fn write_obj(mesh: &TriMesh, path: &Path) -> Result<(), GeomError> {
    let mut out = String::new();
    for v in &mesh.vertices {
        writeln!(out, "v {} {} {}", v.x, v.y, v.z).unwrap();
    }
    for f in &mesh.faces {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_obj(path: &Path) -> Result<TriMesh, GeomError> {
    let text = std::fs::read_to_string(path)?;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let err = |msg: String| GeomError::Parse {
        file: path.display().to_string(),
        msg,
    };
    for (lineno, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let mut coord = |_: &str| -> Result<f64, GeomError> {
                    it.next()
                        .ok_or_else(|| err(format!("line {}: short vertex", lineno + 1)))?
                        .parse()
                        .map_err(|e| err(format!("line {}: {e}", lineno + 1)))
                };
                vertices.push(Vec3::new(coord("x")?, coord("y")?, coord("z")?));
            }
            Some("f") => {
                let idx: Vec<u32> = it
                    .map(|tok| {
                        tok.split('/')
                            .next()
                            .unwrap()
                            .parse::<u32>()
                            .map_err(|e| err(format!("line {}: {e}", lineno + 1)))
                    })
                    .collect::<Result<_, _>>()?;
                if idx.len() != 3 {
                    return Err(err(format!(
                        "line {}: only triangle faces are supported",
                        lineno + 1
                    )));
                }
                faces.push([idx[0] - 1, idx[1] - 1, idx[2] - 1]);
            }
            _ => {}
        }
    }
    Ok(TriMesh::new(vertices, faces))
}

pub fn write_ply(cloud: &PointCloud, path: &Path) -> Result<(), GeomError> {
    let mut out = String::new();
    writeln!(out, "ply").unwrap();
    writeln!(out, "format ascii 1.0").unwrap();
    writeln!(out, "element vertex {}", cloud.len()).unwrap();
    writeln!(out, "property double x").unwrap();
    writeln!(out, "property double y").unwrap();
    writeln!(out, "property double z").unwrap();
    if cloud.normals.is_some() {
        writeln!(out, "property double nx").unwrap();
        writeln!(out, "property double ny").unwrap();
        writeln!(out, "property double nz").unwrap();
    }
    writeln!(out, "end_header").unwrap();
    for (i, p) in cloud.points.iter().enumerate() {
        if let Some(normals) = &cloud.normals {
            let n = normals[i];
            writeln!(out, "{} {} {} {} {} {}", p.x, p.y, p.z, n.x, n.y, n.z).unwrap();
        } else {
            writeln!(out, "{} {} {}", p.x, p.y, p.z).unwrap();
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_ply(path: &Path) -> Result<PointCloud, GeomError> {
    let text = std::fs::read_to_string(path)?;
    let err = |msg: String| GeomError::Parse {
        file: path.display().to_string(),
        msg,
    };
    let mut lines = text.lines();
    let mut count = None;
    let mut props = 0usize;
    for line in lines.by_ref() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix("element vertex ") {
            count = Some(
                rest.parse::<usize>()
                    .map_err(|e| err(format!("bad vertex count: {e}")))?,
            );
        } else if line.starts_with("property") {
            props += 1;
        } else if line == "end_header" {
            break;
        }
    }
    let count = count.ok_or_else(|| err("missing element vertex".into()))?;
    let with_normals = props >= 6;
    let mut points = Vec::with_capacity(count);
    let mut normals = Vec::with_capacity(if with_normals { count } else { 0 });
    for line in lines.take(count) {
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| err(format!("{e}"))))
            .collect::<Result<_, _>>()?;
        if vals.len() < 3 {
            return Err(err("short vertex line".into()));
        }
        points.push(Vec3::new(vals[0], vals[1], vals[2]));
        if with_normals {
            if vals.len() < 6 {
                return Err(err("missing normal components".into()));
            }
            normals.push(Vec3::new(vals[3], vals[4], vals[5]));
        }
    }
    if points.len() != count {
        return Err(err(format!(
            "expected {count} vertices, found {}",
            points.len()
        )));
    }
    Ok(if with_normals {
        PointCloud::with_normals(points, normals)
    } else {
        PointCloud::new(points)
    })
}
