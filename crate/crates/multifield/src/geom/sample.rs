use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{GeomError, PointCloud, Pose, SpatialIndex, TriMesh, Vec3};

/// Area-weighted uniform surface sampling with outward per-point normals.
/// Deterministic per seed.
pub fn sample_surface(mesh: &TriMesh, n: usize, seed: u64) -> Result<PointCloud, GeomError> {
    if mesh.faces.is_empty() {
        return Err(GeomError::EmptyMesh);
    }
    assert!(n >= 1);
    let mut cumulative = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        total += mesh.face_area(f);
        cumulative.push(total);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    for _ in 0..n {
        let u = rng.gen_range(0.0..total);
        let f = cumulative.partition_point(|&c| c < u).min(mesh.faces.len() - 1);
        let [a, b, c] = mesh.triangle(f);
        let (mut r1, mut r2) = (rng.gen::<f64>(), rng.gen::<f64>());
        if r1 + r2 > 1.0 {
            r1 = 1.0 - r1;
            r2 = 1.0 - r2;
        }
        points.push(a + (b - a) * r1 + (c - a) * r2);
        normals.push(mesh.face_normal(f));
    }
    Ok(PointCloud::with_normals(points, normals))
}

/// Depth-buffer ray cast from a camera pose: one point per hit pixel,
/// camera-facing surface only.
///
/// The camera frame looks along its local -z axis with +y up; the image
/// plane spans a fixed 60 degree vertical field of view.
pub fn render_partial(
    mesh: &TriMesh,
    camera: &Pose,
    width: usize,
    height: usize,
) -> Result<PointCloud, GeomError> {
    let index = SpatialIndex::build(mesh.clone())?;
    render_partial_indexed(&index, camera, width, height)
}

/// As [`render_partial`] but reusing an existing spatial index.
pub fn render_partial_indexed(
    index: &SpatialIndex,
    camera: &Pose,
    width: usize,
    height: usize,
) -> Result<PointCloud, GeomError> {
    assert!(width >= 1 && height >= 1);
    let origin = camera.translation;
    let fov_y = 60.0_f64.to_radians();
    let tan_y = (fov_y / 2.0).tan();
    let tan_x = tan_y * width as f64 / height as f64;
    let mut points = Vec::new();
    let mut normals = Vec::new();
    for py in 0..height {
        for px in 0..width {
            // pixel center in NDC
            let sx = (2.0 * (px as f64 + 0.5) / width as f64 - 1.0) * tan_x;
            let sy = (1.0 - 2.0 * (py as f64 + 0.5) / height as f64) * tan_y;
            let dir_cam = Vec3::new(sx, sy, -1.0).normalized();
            let dir = camera.rotation.rotate(dir_cam);
            if let Some(t) = index.ray_hit(origin, dir, f64::INFINITY) {
                let p = origin + dir * t;
                let (_, _, face) = index.closest_point_face(p);
                let mut n = index.mesh().face_normal(face);
                if n.dot(dir) > 0.0 {
                    n = -n;
                }
                points.push(p);
                normals.push(n);
            }
        }
    }
    if points.is_empty() {
        return Err(GeomError::NoVisibleSurface);
    }
    Ok(PointCloud::with_normals(points, normals))
}

/// Camera pose at `eye` looking toward `target` with +z roughly up.
pub fn look_at(eye: Vec3, target: Vec3) -> Pose {
    let fwd = (target - eye).normalized();
    let up_hint = if fwd.z.abs() > 0.99 { Vec3::X } else { Vec3::Z };
    let right = fwd.cross(up_hint).normalized();
    let up = right.cross(fwd);
    // camera basis: x right, y up, z opposite the view direction
    let q = super::UnitQuat::from_basis(right, up, -fwd);
    Pose::new(q, eye)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_triangle_samples_inside() {
        let mesh = TriMesh::new(vec![Vec3::ZERO, Vec3::X, Vec3::Y], vec![[0, 1, 2]]);
        let cloud = sample_surface(&mesh, 3, 1).unwrap();
        for p in &cloud.points {
            assert!(p.x >= -1e-12 && p.y >= -1e-12 && p.x + p.y <= 1.0 + 1e-12);
            assert!(p.z.abs() < 1e-12);
        }
    }

    #[test]
    fn icosphere_samples_near_unit_radius() {
        let mesh = TriMesh::icosphere(1.0, 3);
        let cloud = sample_surface(&mesh, 10_000, 9).unwrap();
        let mean: f64 =
            cloud.points.iter().map(|p| p.norm()).sum::<f64>() / cloud.points.len() as f64;
        assert!((0.98..=1.0).contains(&mean), "mean radius {mean}");
    }

    #[test]
    fn sample_deterministic() {
        let mesh = TriMesh::icosphere(1.0, 2);
        let a = sample_surface(&mesh, 100, 5).unwrap();
        let b = sample_surface(&mesh, 100, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn partial_view_front_hemisphere_only() {
        let mesh = TriMesh::icosphere(1.0, 3);
        let cam = look_at(Vec3::new(3.0, 0.0, 0.0), Vec3::ZERO);
        let cloud = render_partial(&mesh, &cam, 48, 48).unwrap();
        assert!(!cloud.is_empty());
        for p in &cloud.points {
            assert!(p.x >= -1e-6, "back-face point {p:?}");
        }
    }

    #[test]
    fn partial_view_points_on_surface() {
        let mesh = TriMesh::icosphere(1.0, 2);
        let cam = look_at(Vec3::new(0.0, 2.5, 1.0), Vec3::ZERO);
        let cloud = render_partial(&mesh, &cam, 32, 32).unwrap();
        let index = SpatialIndex::build(mesh).unwrap();
        for p in &cloud.points {
            assert!(index.closest_point(*p).1 < 1e-6);
        }
    }

    #[test]
    fn camera_facing_away_sees_nothing() {
        let mesh = TriMesh::icosphere(1.0, 2);
        let cam = look_at(Vec3::new(3.0, 0.0, 0.0), Vec3::new(6.0, 0.0, 0.0));
        assert!(matches!(
            render_partial(&mesh, &cam, 16, 16),
            Err(GeomError::NoVisibleSurface)
        ));
    }

    #[test]
    fn doubled_resolution_is_a_refinement() {
        let mesh = TriMesh::icosphere(1.0, 2);
        let cam = look_at(Vec3::new(2.5, 0.5, 0.5), Vec3::ZERO);
        let coarse = render_partial(&mesh, &cam, 16, 16).unwrap();
        let fine = render_partial(&mesh, &cam, 32, 32).unwrap();
        assert!(fine.len() > coarse.len());
        // every coarse hit has a fine hit within one coarse pixel footprint
        let pix = 2.5 * 2.0 * (30.0_f64.to_radians()).tan() / 16.0;
        for c in &coarse.points {
            let nearest = fine
                .points
                .iter()
                .map(|f| (*f - *c).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(nearest < 2.0 * pix, "coarse hit isolated by {nearest}");
        }
    }
}
