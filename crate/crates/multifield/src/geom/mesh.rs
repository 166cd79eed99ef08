use std::collections::HashMap;

use super::{GeomError, Vec3};

/// An indexed triangle mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Self {
        debug_assert!(faces
            .iter()
            .all(|f| f.iter().all(|&i| (i as usize) < vertices.len())));
        Self { vertices, faces }
    }

    pub fn triangle(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn face_normal(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.triangle(f);
        (b - a).cross(c - a).normalized()
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.triangle(f);
        (b - a).cross(c - a).norm() / 2.0
    }

    pub fn area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Enclosed volume via the divergence theorem; positive for outward
    /// winding on a closed mesh.
    pub fn signed_volume(&self) -> f64 {
        (0..self.faces.len())
            .map(|f| {
                let [a, b, c] = self.triangle(f);
                a.dot(b.cross(c)) / 6.0
            })
            .sum()
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::splat(f64::INFINITY);
        let mut hi = Vec3::splat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
        (lo, hi)
    }

    pub fn centroid(&self) -> Vec3 {
        let mut sum = Vec3::ZERO;
        for v in &self.vertices {
            sum = sum + *v;
        }
        sum / self.vertices.len() as f64
    }

    /// Radius of the vertex-farthest point from the origin.
    pub fn bounding_radius(&self) -> f64 {
        self.vertices
            .iter()
            .map(|v| v.norm())
            .fold(0.0, f64::max)
    }

    /// Number of distinct undirected edges.
    pub fn edge_count(&self) -> usize {
        let mut edges = std::collections::HashSet::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                edges.insert((a.min(b), a.max(b)));
            }
        }
        edges.len()
    }

    /// V - E + F.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edge_count() as i64 + self.faces.len() as i64
    }

    /// Checks that every undirected edge is shared by exactly two faces,
    /// with opposite winding.
    pub fn check_watertight(&self) -> Result<(), GeomError> {
        if self.faces.is_empty() {
            return Err(GeomError::EmptyMesh);
        }
        let mut directed: HashMap<(u32, u32), i32> = HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *directed.entry((a.min(b), a.max(b))).or_insert(0) +=
                    if a < b { 1 } else { -1 };
                let count = directed.get_mut(&(a.min(b), a.max(b))).unwrap();
                // third traversal of an undirected edge is always a defect
                if count.abs() > 1 {
                    return Err(GeomError::NonWatertight(format!(
                        "edge ({},{}) traversed more than once in the same direction",
                        a.min(b),
                        a.max(b)
                    )));
                }
            }
        }
        for ((a, b), balance) in directed {
            if balance != 0 {
                return Err(GeomError::NonWatertight(format!(
                    "edge ({a},{b}) is not shared by two opposed faces"
                )));
            }
        }
        Ok(())
    }

    /// Translate all vertices.
    pub fn translate(&mut self, t: Vec3) {
        for v in &mut self.vertices {
            *v = *v + t;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.vertices {
            *v = *v * s;
        }
    }

    /// Merge vertices closer than `tol` and drop zero-area faces.
    pub fn weld(&self, tol: f64) -> TriMesh {
        let inv = 1.0 / tol.max(1e-300);
        let mut map: HashMap<(i64, i64, i64), u32> = HashMap::new();
        let mut remap = vec![0u32; self.vertices.len()];
        let mut verts = Vec::new();
        for (i, v) in self.vertices.iter().enumerate() {
            let key = (
                (v.x * inv).round() as i64,
                (v.y * inv).round() as i64,
                (v.z * inv).round() as i64,
            );
            let idx = *map.entry(key).or_insert_with(|| {
                verts.push(*v);
                (verts.len() - 1) as u32
            });
            remap[i] = idx;
        }
        let mut faces = Vec::new();
        for f in &self.faces {
            let g = [remap[f[0] as usize], remap[f[1] as usize], remap[f[2] as usize]];
            if g[0] == g[1] || g[1] == g[2] || g[0] == g[2] {
                continue;
            }
            let [a, b, c] = [
                verts[g[0] as usize],
                verts[g[1] as usize],
                verts[g[2] as usize],
            ];
            if (b - a).cross(c - a).norm() < 2.0 * tol * tol {
                continue;
            }
            faces.push(g);
        }
        TriMesh::new(verts, faces)
    }

    /// Icosphere of radius `r` centered at the origin.
    pub fn icosphere(r: f64, subdivisions: u32) -> TriMesh {
        let phi = (1.0 + 5.0_f64.sqrt()) / 2.0;
        let mut verts = vec![
            Vec3::new(-1.0, phi, 0.0),
            Vec3::new(1.0, phi, 0.0),
            Vec3::new(-1.0, -phi, 0.0),
            Vec3::new(1.0, -phi, 0.0),
            Vec3::new(0.0, -1.0, phi),
            Vec3::new(0.0, 1.0, phi),
            Vec3::new(0.0, -1.0, -phi),
            Vec3::new(0.0, 1.0, -phi),
            Vec3::new(phi, 0.0, -1.0),
            Vec3::new(phi, 0.0, 1.0),
            Vec3::new(-phi, 0.0, -1.0),
            Vec3::new(-phi, 0.0, 1.0),
        ];
        for v in &mut verts {
            *v = v.normalized();
        }
        let mut faces: Vec<[u32; 3]> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        for _ in 0..subdivisions {
            let mut midpoint: HashMap<(u32, u32), u32> = HashMap::new();
            let mut new_faces = Vec::with_capacity(faces.len() * 4);
            for f in &faces {
                let mut mid = [0u32; 3];
                for k in 0..3 {
                    let (a, b) = (f[k], f[(k + 1) % 3]);
                    let key = (a.min(b), a.max(b));
                    mid[k] = *midpoint.entry(key).or_insert_with(|| {
                        let m = ((verts[a as usize] + verts[b as usize]) / 2.0).normalized();
                        verts.push(m);
                        (verts.len() - 1) as u32
                    });
                }
                new_faces.push([f[0], mid[0], mid[2]]);
                new_faces.push([f[1], mid[1], mid[0]]);
                new_faces.push([f[2], mid[2], mid[1]]);
                new_faces.push([mid[0], mid[1], mid[2]]);
            }
            faces = new_faces;
        }
        for v in &mut verts {
            *v = *v * r;
        }
        TriMesh::new(verts, faces)
    }

    /// Axis-aligned box spanning `lo..hi`, 12 triangles with outward normals.
    pub fn box_mesh(lo: Vec3, hi: Vec3) -> TriMesh {
        let v = vec![
            Vec3::new(lo.x, lo.y, lo.z),
            Vec3::new(hi.x, lo.y, lo.z),
            Vec3::new(hi.x, hi.y, lo.z),
            Vec3::new(lo.x, hi.y, lo.z),
            Vec3::new(lo.x, lo.y, hi.z),
            Vec3::new(hi.x, lo.y, hi.z),
            Vec3::new(hi.x, hi.y, hi.z),
            Vec3::new(lo.x, hi.y, hi.z),
        ];
        let faces = vec![
            [0, 2, 1],
            [0, 3, 2], // -z
            [4, 5, 6],
            [4, 6, 7], // +z
            [0, 1, 5],
            [0, 5, 4], // -y
            [2, 3, 7],
            [2, 7, 6], // +y
            [1, 2, 6],
            [1, 6, 5], // +x
            [3, 0, 4],
            [3, 4, 7], // -x
        ];
        TriMesh::new(v, faces)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosphere_watertight_and_spherical() {
        let m = TriMesh::icosphere(1.0, 3);
        m.check_watertight().unwrap();
        assert_eq!(m.euler_characteristic(), 2);
        for v in &m.vertices {
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cube_watertight() {
        let m = TriMesh::box_mesh(Vec3::splat(-0.5), Vec3::splat(0.5));
        m.check_watertight().unwrap();
        assert_eq!(m.euler_characteristic(), 2);
        assert!((m.area() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn open_mesh_rejected() {
        let m = TriMesh::new(
            vec![Vec3::ZERO, Vec3::X, Vec3::Y],
            vec![[0, 1, 2]],
        );
        assert!(matches!(
            m.check_watertight(),
            Err(GeomError::NonWatertight(_))
        ));
    }
}
