use super::{GeomError, TriMesh, Vec3};

#[derive(Debug, Clone, Copy)]
struct Aabb {
    lo: Vec3,
    hi: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            lo: Vec3::splat(f64::INFINITY),
            hi: Vec3::splat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: Vec3) {
        self.lo = self.lo.min(p);
        self.hi = self.hi.max(p);
    }

    fn dist_sq(&self, p: Vec3) -> f64 {
        let mut d = 0.0;
        for a in 0..3 {
            let v = p[a];
            let c = v.clamp(self.lo[a], self.hi[a]);
            d += (v - c) * (v - c);
        }
        d
    }

    fn ray_intersects(&self, origin: Vec3, inv_dir: Vec3, max_t: f64) -> bool {
        let mut t0 = 0.0_f64;
        let mut t1 = max_t;
        for a in 0..3 {
            let ta = (self.lo[a] - origin[a]) * inv_dir[a];
            let tb = (self.hi[a] - origin[a]) * inv_dir[a];
            let (near, far) = if ta <= tb { (ta, tb) } else { (tb, ta) };
            if near.is_nan() || far.is_nan() {
                continue;
            }
            t0 = t0.max(near);
            t1 = t1.min(far);
            if t0 > t1 {
                return false;
            }
        }
        true
    }
}

#[derive(Debug)]
enum Node {
    Leaf {
        bounds: Aabb,
        start: usize,
        count: usize,
    },
    Inner {
        bounds: Aabb,
        left: usize,
        right: usize,
    },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

/// Bounding-volume hierarchy over the triangles of a mesh. Read-only after
/// construction; queries are exact (branch-and-bound never prunes a
/// candidate tied with the current best).
#[derive(Debug)]
pub struct SpatialIndex {
    mesh: TriMesh,
    nodes: Vec<Node>,
    /// triangle indices, permuted so each leaf owns a contiguous range
    order: Vec<u32>,
}

struct RayHit {
    t: f64,
    face: usize,
    /// barycentric hit near a triangle edge or vertex, or grazing incidence
    degenerate: bool,
}

const LEAF_SIZE: usize = 8;

impl SpatialIndex {
    pub fn build(mesh: TriMesh) -> Result<Self, GeomError> {
        if mesh.faces.is_empty() {
            return Err(GeomError::EmptyMesh);
        }
        let centroids: Vec<Vec3> = (0..mesh.faces.len())
            .map(|f| {
                let [a, b, c] = mesh.triangle(f);
                (a + b + c) / 3.0
            })
            .collect();
        let mut order: Vec<u32> = (0..mesh.faces.len() as u32).collect();
        let mut nodes = Vec::new();
        Self::split(&mesh, &centroids, &mut order, 0, mesh.faces.len(), &mut nodes);
        Ok(Self { mesh, nodes, order })
    }

    fn tri_bounds(mesh: &TriMesh, order: &[u32], start: usize, count: usize) -> Aabb {
        let mut b = Aabb::empty();
        for &f in &order[start..start + count] {
            for v in mesh.triangle(f as usize) {
                b.grow(v);
            }
        }
        b
    }

    fn split(
        mesh: &TriMesh,
        centroids: &[Vec3],
        order: &mut [u32],
        start: usize,
        count: usize,
        nodes: &mut Vec<Node>,
    ) -> usize {
        let bounds = Self::tri_bounds(mesh, order, start, count);
        let idx = nodes.len();
        if count <= LEAF_SIZE {
            nodes.push(Node::Leaf {
                bounds,
                start,
                count,
            });
            return idx;
        }
        // median split on the longest centroid-extent axis
        let mut cb = Aabb::empty();
        for &f in &order[start..start + count] {
            cb.grow(centroids[f as usize]);
        }
        let ext = cb.hi - cb.lo;
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        let slice = &mut order[start..start + count];
        slice.sort_by(|&a, &b| {
            centroids[a as usize][axis]
                .total_cmp(&centroids[b as usize][axis])
                .then(a.cmp(&b))
        });
        let half = count / 2;
        nodes.push(Node::Leaf {
            bounds,
            start: 0,
            count: 0,
        }); // placeholder
        let left = Self::split(mesh, centroids, order, start, half, nodes);
        let right = Self::split(mesh, centroids, order, start + half, count - half, nodes);
        nodes[idx] = Node::Inner {
            bounds,
            left,
            right,
        };
        idx
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    /// Globally closest surface point to `x` and its distance.
    pub fn closest_point(&self, x: Vec3) -> (Vec3, f64) {
        let (p, d2, _) = self.closest_point_face(x);
        (p, d2.sqrt())
    }

    /// Closest point with squared distance and the owning face index.
    pub fn closest_point_face(&self, x: Vec3) -> (Vec3, f64, usize) {
        let mut best_d2 = f64::INFINITY;
        let mut best_p = Vec3::ZERO;
        let mut best_face = usize::MAX;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if node.bounds().dist_sq(x) > best_d2 {
                continue;
            }
            match node {
                Node::Leaf { start, count, .. } => {
                    for &f in &self.order[*start..*start + *count] {
                        let tri = self.mesh.triangle(f as usize);
                        let p = closest_point_triangle(x, tri);
                        let d2 = (p - x).norm_sq();
                        // tie-break by lowest face index, matching a first-wins scan
                        if d2 < best_d2 || (d2 == best_d2 && (f as usize) < best_face) {
                            best_d2 = d2;
                            best_p = p;
                            best_face = f as usize;
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    let (dl, dr) = (
                        self.nodes[*left].bounds().dist_sq(x),
                        self.nodes[*right].bounds().dist_sq(x),
                    );
                    // visit nearer child first
                    if dl <= dr {
                        stack.push(*right);
                        stack.push(*left);
                    } else {
                        stack.push(*left);
                        stack.push(*right);
                    }
                }
            }
        }
        (best_p, best_d2, best_face)
    }

    /// Smallest `t` in `(0, max_t]` with `origin + t*dir` on the mesh.
    pub fn ray_hit(&self, origin: Vec3, dir: Vec3, max_t: f64) -> Option<f64> {
        debug_assert!((dir.norm() - 1.0).abs() <= 1e-9);
        debug_assert!(max_t > 0.0);
        self.nearest_ray_hit(origin, dir, max_t).map(|h| h.t)
    }

    /// Like [`Self::ray_hit`], also reporting the face hit first.
    pub fn ray_hit_face(&self, origin: Vec3, dir: Vec3, max_t: f64) -> Option<(f64, usize)> {
        debug_assert!((dir.norm() - 1.0).abs() <= 1e-9);
        debug_assert!(max_t > 0.0);
        self.nearest_ray_hit(origin, dir, max_t).map(|h| (h.t, h.face))
    }

    fn nearest_ray_hit(&self, origin: Vec3, dir: Vec3, max_t: f64) -> Option<RayHit> {
        let inv = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut best: Option<RayHit> = None;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            let limit = best.as_ref().map_or(max_t, |h| h.t);
            if !node.bounds().ray_intersects(origin, inv, limit) {
                continue;
            }
            match node {
                Node::Leaf { start, count, .. } => {
                    for &f in &self.order[*start..*start + *count] {
                        if let Some(hit) =
                            ray_triangle(origin, dir, self.mesh.triangle(f as usize), f as usize)
                        {
                            if hit.t <= limit
                                && best.as_ref().map_or(true, |b| {
                                    hit.t < b.t || (hit.t == b.t && hit.face < b.face)
                                })
                            {
                                best = Some(hit);
                            }
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    stack.push(*left);
                    stack.push(*right);
                }
            }
        }
        best.filter(|h| h.t <= max_t)
    }

    /// All intersections along the ray, used for parity counting.
    fn count_crossings(&self, origin: Vec3, dir: Vec3) -> Result<usize, ()> {
        let inv = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut hits: Vec<RayHit> = Vec::new();
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if !node.bounds().ray_intersects(origin, inv, f64::INFINITY) {
                continue;
            }
            match node {
                Node::Leaf { start, count, .. } => {
                    for &f in &self.order[*start..*start + *count] {
                        if let Some(hit) =
                            ray_triangle(origin, dir, self.mesh.triangle(f as usize), f as usize)
                        {
                            if hit.degenerate {
                                return Err(());
                            }
                            hits.push(hit);
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    stack.push(*left);
                    stack.push(*right);
                }
            }
        }
        Ok(hits.len())
    }

    /// Signed distance: magnitude from `closest_point`, negative inside.
    /// Inside/outside by ray parity, with fallback ray directions when a
    /// ray grazes an edge or vertex.
    pub fn signed_distance(&self, x: Vec3) -> Result<f64, GeomError> {
        let d = self.closest_point(x).1;
        Ok(if self.is_inside(x)? { -d } else { d })
    }

    pub fn is_inside(&self, x: Vec3) -> Result<bool, GeomError> {
        self.mesh.check_watertight()?;
        Ok(self.is_inside_unchecked(x))
    }

    /// Parity test without re-running the watertightness check; callers
    /// doing bulk queries validate the mesh once up front.
    pub fn is_inside_unchecked(&self, x: Vec3) -> bool {
        // deliberately irrational-ish directions to avoid axis-aligned grazing
        let dirs = [
            Vec3::new(0.357_801_4, 0.868_243_1, 0.343_621_9),
            Vec3::new(-0.275_936_2, 0.493_184_5, -0.825_031_7),
            Vec3::new(0.812_349_5, -0.301_762_3, -0.499_318_2),
            Vec3::new(-0.577_350_3, -0.577_350_3, 0.577_350_3),
        ];
        for d in dirs {
            if let Ok(n) = self.count_crossings(x, d.normalized()) {
                return n % 2 == 1;
            }
        }
        // every probe grazed something; fall back to the last probe counting
        // degenerate hits as crossings (half-weight rounding)
        let mut n = 0usize;
        let d = dirs[3].normalized();
        let inv = Vec3::new(1.0 / d.x, 1.0 / d.y, 1.0 / d.z);
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            match &self.nodes[ni] {
                Node::Leaf { start, count, .. } => {
                    for &f in &self.order[*start..*start + *count] {
                        if ray_triangle(x, d, self.mesh.triangle(f as usize), f as usize).is_some()
                        {
                            n += 1;
                        }
                    }
                }
                Node::Inner { left, right, bounds } => {
                    if bounds.ray_intersects(x, inv, f64::INFINITY) {
                        stack.push(*left);
                        stack.push(*right);
                    }
                }
            }
        }
        n % 2 == 1
    }
}

/// Closest point on a triangle to `p` (Ericson, Real-Time Collision
/// Detection, 5.1.5).
pub fn closest_point_triangle(p: Vec3, [a, b, c]: [Vec3; 3]) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(ap);
    let d2 = ac.dot(ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(bp);
    let d4 = ac.dot(bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(cp);
    let d6 = ac.dot(cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

/// Moller-Trumbore intersection with `t > 1e-12`.
fn ray_triangle(origin: Vec3, dir: Vec3, [a, b, c]: [Vec3; 3], face: usize) -> Option<RayHit> {
    const EPS: f64 = 1e-12;
    const EDGE_EPS: f64 = 1e-9;
    let e1 = b - a;
    let e2 = c - a;
    let h = dir.cross(e2);
    let det = e1.dot(h);
    if det.abs() < EPS {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - a;
    let u = s.dot(h) * inv;
    if !(-EDGE_EPS..=1.0 + EDGE_EPS).contains(&u) {
        return None;
    }
    let q = s.cross(e1);
    let v = dir.dot(q) * inv;
    if v < -EDGE_EPS || u + v > 1.0 + EDGE_EPS {
        return None;
    }
    let t = e2.dot(q) * inv;
    if t <= EPS {
        return None;
    }
    let degenerate =
        u < EDGE_EPS || v < EDGE_EPS || u + v > 1.0 - EDGE_EPS || det.abs() < 1e-9;
    Some(RayHit { t, face, degenerate })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exhaustive_closest(mesh: &TriMesh, x: Vec3) -> (Vec3, f64, usize) {
        let mut best = (Vec3::ZERO, f64::INFINITY, usize::MAX);
        for f in 0..mesh.faces.len() {
            let p = closest_point_triangle(x, mesh.triangle(f));
            let d2 = (p - x).norm_sq();
            if d2 < best.1 {
                best = (p, d2, f);
            }
        }
        best
    }

    #[test]
    fn closest_point_matches_exhaustive_scan() {
        use rand::{Rng, SeedableRng};
        let mesh = TriMesh::icosphere(1.0, 3);
        let index = SpatialIndex::build(mesh.clone()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let x = Vec3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            let (p, d2, face) = index.closest_point_face(x);
            let (ep, ed2, eface) = exhaustive_closest(&mesh, x);
            assert!((d2 - ed2).abs() <= 1e-12, "d2 {d2} vs {ed2}");
            assert_eq!(face, eface);
            assert!((p - ep).norm() <= 1e-9);
        }
    }

    #[test]
    fn closest_point_on_cube() {
        let mesh = TriMesh::box_mesh(Vec3::splat(-0.5), Vec3::splat(0.5));
        let index = SpatialIndex::build(mesh).unwrap();
        let (p, d) = index.closest_point(Vec3::new(2.0, 0.0, 0.0));
        assert!((p - Vec3::new(0.5, 0.0, 0.0)).norm() < 1e-12);
        assert!((d - 1.5).abs() < 1e-12);
    }

    #[test]
    fn closest_point_at_vertex_is_zero() {
        let mesh = TriMesh::icosphere(1.0, 1);
        let v0 = mesh.vertices[0];
        let index = SpatialIndex::build(mesh).unwrap();
        assert!(index.closest_point(v0).1 <= 1e-12);
    }

    #[test]
    fn ray_hits_sphere() {
        let index = SpatialIndex::build(TriMesh::icosphere(1.0, 3)).unwrap();
        let t = index
            .ray_hit(Vec3::new(0.0, 0.0, 2.0), Vec3::new(0.0, 0.0, -1.0), 10.0)
            .unwrap();
        assert!((t - 1.0).abs() < 2e-2);
        assert!(index
            .ray_hit(Vec3::new(0.0, 0.0, 2.0), Vec3::new(0.0, 0.0, 1.0), 10.0)
            .is_none());
    }

    #[test]
    fn grazing_ray_matches_quadratic_formula() {
        // ray parallel to z at offset 0.999; analytic sphere hit
        // t = 2 - sqrt(1 - off^2) for a unit sphere seen from z = 2
        let index = SpatialIndex::build(TriMesh::icosphere(1.0, 5)).unwrap();
        let off = 0.999;
        let t = index
            .ray_hit(Vec3::new(off, 0.0, 2.0), Vec3::new(0.0, 0.0, -1.0), 10.0)
            .unwrap();
        let expected = 2.0 - (1.0 - off * off).sqrt();
        // grazing hits amplify tessellation error; generous tolerance
        assert!((t - expected).abs() < 0.1, "t={t} expected={expected}");
    }

    #[test]
    fn signed_distance_cube() {
        let mesh = TriMesh::box_mesh(Vec3::splat(-0.5), Vec3::splat(0.5));
        let index = SpatialIndex::build(mesh).unwrap();
        let d = index.signed_distance(Vec3::new(0.0, 0.0, 0.4)).unwrap();
        assert!((d + 0.1).abs() < 1e-12);
        let d = index.signed_distance(Vec3::new(0.0, 0.0, 2.0)).unwrap();
        assert!((d - 1.5).abs() < 1e-12);
    }

    #[test]
    fn signed_distance_sphere_center() {
        let index = SpatialIndex::build(TriMesh::icosphere(1.0, 3)).unwrap();
        let d = index.signed_distance(Vec3::ZERO).unwrap();
        assert!((d + 1.0).abs() < 2e-2);
    }

    #[test]
    fn sign_flips_only_at_surface_on_transect() {
        let index = SpatialIndex::build(TriMesh::icosphere(1.0, 3)).unwrap();
        index.mesh().check_watertight().unwrap();
        let mut prev_sign = 1.0_f64;
        let mut flips = 0;
        for i in 0..400 {
            let z = -2.0 + 4.0 * i as f64 / 399.0;
            let d = if index.is_inside_unchecked(Vec3::new(0.1, 0.05, z)) {
                -1.0
            } else {
                1.0
            };
            if d != prev_sign && i > 0 {
                flips += 1;
            }
            prev_sign = d;
        }
        assert_eq!(flips, 2);
    }
}
