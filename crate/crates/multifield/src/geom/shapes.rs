use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GeomError, TriMesh, Vec3};

/// Procedural shape families with a shared parametrization, so dense
/// correspondences between instances of a category are known analytically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeCategory {
    Mug,
    Bowl,
    Bottle,
}

impl std::str::FromStr for ShapeCategory {
    type Err = GeomError;
    fn from_str(s: &str) -> Result<Self, GeomError> {
        match s {
            "mug" => Ok(Self::Mug),
            "bowl" => Ok(Self::Bowl),
            "bottle" => Ok(Self::Bottle),
            other => Err(GeomError::UnknownCategory(other.to_string())),
        }
    }
}

impl std::fmt::Display for ShapeCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Mug => write!(f, "mug"),
            Self::Bowl => write!(f, "bowl"),
            Self::Bottle => write!(f, "bottle"),
        }
    }
}

/// A deterministic recipe for one shape instance. The same spec always
/// produces the identical mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub category: ShapeCategory,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub seed: u64,
}

impl ShapeSpec {
    pub fn new(category: ShapeCategory) -> Self {
        Self {
            category,
            params: BTreeMap::new(),
            seed: 0,
        }
    }

    pub fn with_param(mut self, name: &str, value: f64) -> Self {
        self.params.insert(name.to_string(), value);
        self
    }

    fn get(&self, name: &str, default: f64) -> f64 {
        self.params.get(name).copied().unwrap_or(default)
    }

    /// Draw a random instance of `category` with parameters jittered
    /// around the defaults; deterministic per seed.
    pub fn sample(category: ShapeCategory, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ca1ab1e);
        let mut spec = Self::new(category);
        spec.seed = seed;
        let mut jitter = |name: &str, base: f64, rel: f64| {
            let v = base * (1.0 + rng.gen_range(-rel..rel));
            spec.params.insert(name.to_string(), v);
        };
        match category {
            ShapeCategory::Mug => {
                jitter("body_radius", 0.16, 0.2);
                jitter("height", 0.4, 0.2);
                jitter("wall", 0.02, 0.2);
                jitter("handle_radius", 0.028, 0.2);
            }
            ShapeCategory::Bowl => {
                jitter("radius", 0.3, 0.2);
                jitter("height", 0.18, 0.2);
                jitter("wall", 0.025, 0.2);
            }
            ShapeCategory::Bottle => {
                jitter("body_radius", 0.14, 0.2);
                jitter("body_height", 0.3, 0.2);
                jitter("neck_ratio", 0.45, 0.2);
                jitter("neck_height", 0.12, 0.2);
            }
        }
        spec
    }
}

struct Range {
    name: &'static str,
    lo: f64,
    hi: f64,
}

fn check(value: f64, r: Range) -> Result<f64, GeomError> {
    if value.is_finite() && value >= r.lo && value <= r.hi {
        Ok(value)
    } else {
        Err(GeomError::InvalidParams {
            name: r.name,
            value,
            expected: Box::leak(format!("[{}, {}]", r.lo, r.hi).into_boxed_str()),
        })
    }
}

const SEG: usize = 48;

/// Generate the watertight mesh for a spec: canonical orientation with the
/// opening along +z, bounding box centered at the origin and fitting in
/// the unit cube.
pub fn generate_shape(spec: &ShapeSpec) -> Result<TriMesh, GeomError> {
    let (mut mesh, _) = build_shape(spec)?;
    normalize(&mut mesh, spec)?;
    Ok(mesh)
}

/// Named landmark points of the shape (in the normalized frame), derived
/// from the parametrization. Used as correspondence ground truth.
pub fn shape_landmarks(spec: &ShapeSpec) -> Result<BTreeMap<String, Vec3>, GeomError> {
    let (mesh, mut landmarks) = build_shape(spec)?;
    let (offset, scale) = normalization(&mesh);
    for p in landmarks.values_mut() {
        *p = (*p + offset) * scale;
    }
    Ok(landmarks)
}

fn normalization(mesh: &TriMesh) -> (Vec3, f64) {
    let (lo, hi) = mesh.bounds();
    let center = (lo + hi) / 2.0;
    let ext = hi - lo;
    let max_dim = ext.x.max(ext.y).max(ext.z);
    let scale = if max_dim > 1.0 { 1.0 / max_dim } else { 1.0 };
    (-center, scale)
}

fn normalize(mesh: &mut TriMesh, _spec: &ShapeSpec) -> Result<(), GeomError> {
    let (offset, scale) = normalization(mesh);
    mesh.translate(offset);
    mesh.scale(scale);
    Ok(())
}

fn build_shape(spec: &ShapeSpec) -> Result<(TriMesh, BTreeMap<String, Vec3>), GeomError> {
    match spec.category {
        ShapeCategory::Mug => build_mug(spec),
        ShapeCategory::Bowl => build_bowl(spec),
        ShapeCategory::Bottle => build_bottle(spec),
    }
}

// ---------------------------------------------------------------------------
// surface-of-revolution builder

/// Builds a closed surface of revolution from a pole-to-pole profile
/// polyline `(r, z)` with `r == 0` at both ends. `skip` lists quads
/// (profile segment index, angular cell index) to leave open.
struct Revolve {
    verts: Vec<Vec3>,
    faces: Vec<[u32; 3]>,
    profile_len: usize,
}

impl Revolve {
    fn new(profile: &[(f64, f64)], skip: &[(usize, usize)]) -> Self {
        assert!(profile.len() >= 3);
        assert!(profile[0].0 == 0.0 && profile[profile.len() - 1].0 == 0.0);
        let n = profile.len();
        let delta = std::f64::consts::TAU / SEG as f64;
        let mut verts = Vec::new();
        // pole 0, then rings for interior profile points, then pole 1
        verts.push(Vec3::new(0.0, 0.0, profile[0].1));
        for &(r, z) in &profile[1..n - 1] {
            for j in 0..SEG {
                // cell 0 straddles theta = 0 so handle attachments are
                // symmetric about the +x axis
                let theta = -delta / 2.0 + j as f64 * delta;
                verts.push(Vec3::new(r * theta.cos(), r * theta.sin(), z));
            }
        }
        verts.push(Vec3::new(0.0, 0.0, profile[n - 1].1));
        let top_pole = (verts.len() - 1) as u32;

        let vid = |i: usize, j: usize| -> u32 { (1 + (i - 1) * SEG + (j % SEG)) as u32 };

        let mut faces = Vec::new();
        for i in 0..n - 1 {
            let (r0, _) = profile[i];
            let (r1, _) = profile[i + 1];
            if r0 == 0.0 && r1 > 0.0 {
                for j in 0..SEG {
                    faces.push([0, vid(i + 1, j), vid(i + 1, j + 1)]);
                }
            } else if r0 > 0.0 && r1 == 0.0 {
                for j in 0..SEG {
                    faces.push([vid(i, j), top_pole, vid(i, j + 1)]);
                }
            } else if r0 > 0.0 && r1 > 0.0 {
                for j in 0..SEG {
                    if skip.contains(&(i, j)) {
                        continue;
                    }
                    faces.push([vid(i, j), vid(i + 1, j), vid(i + 1, j + 1)]);
                    faces.push([vid(i, j), vid(i + 1, j + 1), vid(i, j + 1)]);
                }
            }
        }
        Self {
            verts,
            faces,
            profile_len: n,
        }
    }

    fn vid(&self, i: usize, j: usize) -> u32 {
        assert!(i >= 1 && i < self.profile_len - 1);
        (1 + (i - 1) * SEG + (j % SEG)) as u32
    }

    /// Flip winding if the enclosed signed volume is negative.
    fn oriented(mut self) -> Self {
        let vol: f64 = self
            .faces
            .iter()
            .map(|f| {
                let a = self.verts[f[0] as usize];
                let b = self.verts[f[1] as usize];
                let c = self.verts[f[2] as usize];
                a.dot(b.cross(c)) / 6.0
            })
            .sum();
        if vol < 0.0 {
            for f in &mut self.faces {
                f.swap(1, 2);
            }
        }
        self
    }

    fn into_mesh(self) -> TriMesh {
        TriMesh::new(self.verts, self.faces)
    }
}

// ---------------------------------------------------------------------------
// mug

fn build_mug(spec: &ShapeSpec) -> Result<(TriMesh, BTreeMap<String, Vec3>), GeomError> {
    let body_r = check(
        spec.get("body_radius", 0.16),
        Range {
            name: "body_radius",
            lo: 0.05,
            hi: 0.3,
        },
    )?;
    let height = check(
        spec.get("height", 0.4),
        Range {
            name: "height",
            lo: 0.1,
            hi: 0.9,
        },
    )?;
    let wall = check(
        spec.get("wall", 0.02),
        Range {
            name: "wall",
            lo: 0.005,
            hi: 0.4 * body_r,
        },
    )?;
    let handle_r = check(
        spec.get("handle_radius", 0.028),
        Range {
            name: "handle_radius",
            lo: 0.0,
            hi: 0.08_f64.min(0.12 * height),
        },
    )?;

    let attach_lo = 0.28 * height;
    let attach_hi = 0.72 * height;
    let w = handle_r;

    // outer wall rows: base, the four hole-boundary rows, rim; plus filler
    // rows away from the holes
    let mut rows = vec![0.0, height];
    let mut hole_rows = Vec::new();
    if w > 0.0 {
        hole_rows = vec![attach_lo - w, attach_lo + w, attach_hi - w, attach_hi + w];
        rows.extend_from_slice(&hole_rows);
    }
    for k in 1..8 {
        let z = height * k as f64 / 8.0;
        if hole_rows.iter().all(|h| (z - h).abs() > 0.02 * height) {
            rows.push(z);
        }
    }
    rows.sort_by(f64::total_cmp);
    rows.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

    // profile: bottom center -> outer bottom -> outer wall up -> rim ->
    // inner wall down -> inner bottom -> axis
    let inner_r = body_r - wall;
    let bottom = wall;
    let mut profile: Vec<(f64, f64)> = vec![(0.0, 0.0)];
    let mut outer_idx = Vec::new(); // profile index per outer-wall row
    for &z in &rows {
        profile.push((body_r, z));
        outer_idx.push(profile.len() - 1);
    }
    // inner wall, top to bottom
    let inner_rows = 6;
    for k in 0..=inner_rows {
        let z = height - (height - bottom) * k as f64 / inner_rows as f64;
        profile.push((inner_r, z));
    }
    profile.push((0.0, bottom));

    let row_index = |z: f64| -> usize {
        let i = rows
            .iter()
            .position(|&r| (r - z).abs() < 1e-12)
            .expect("hole row present");
        outer_idx[i]
    };

    let mut landmarks = BTreeMap::new();
    landmarks.insert("rim_center".into(), Vec3::new(0.0, 0.0, height));
    landmarks.insert(
        "rim_point".into(),
        Vec3::new(-(body_r - wall / 2.0), 0.0, height),
    );
    landmarks.insert("bottom_center".into(), Vec3::new(0.0, 0.0, 0.0));

    if w == 0.0 {
        let mesh = Revolve::new(&profile, &[]).oriented().into_mesh();
        return Ok((mesh, landmarks));
    }

    // hole quads on angular cell 0, between the attach boundary rows
    let seg_lo = row_index(attach_lo - w); // segment [z, next row] is the hole
    let seg_hi = row_index(attach_hi - w);
    let skip = [(seg_lo, 0usize), (seg_hi, 0usize)];
    let rev = Revolve::new(&profile, &skip).oriented();

    // handle tube: swept square section along a semicircular arc in the
    // x-z plane, welded to the hole boundary vertices
    let delta = std::f64::consts::TAU / SEG as f64;
    let cx = body_r * (delta / 2.0).cos();
    let y0 = -body_r * (delta / 2.0).sin();
    let y1 = -y0;
    let cz = (attach_lo + attach_hi) / 2.0;
    let rho = (attach_hi - attach_lo) / 2.0;

    let mut verts = rev.verts.clone();
    let mut faces = rev.faces.clone();

    let ring_lower = [
        rev.vid(seg_lo, 0),
        rev.vid(seg_lo, 1),
        rev.vid(seg_lo + 1, 1),
        rev.vid(seg_lo + 1, 0),
    ];
    let ring_upper = [
        rev.vid(seg_hi + 1, 0),
        rev.vid(seg_hi + 1, 1),
        rev.vid(seg_hi, 1),
        rev.vid(seg_hi, 0),
    ];

    let arc_segments = 10;
    let mut rings: Vec<[u32; 4]> = vec![ring_lower];
    for k in 1..arc_segments {
        let phi = std::f64::consts::PI * k as f64 / arc_segments as f64;
        let mut ring = [0u32; 4];
        // cycle matches the hole corner order at phi = 0
        let corners = [(w, y0), (w, y1), (-w, y1), (-w, y0)];
        for (e, (d, y)) in corners.iter().enumerate() {
            let x = cx + (rho + d) * phi.sin();
            let z = cz - (rho + d) * phi.cos();
            ring[e] = verts.len() as u32;
            verts.push(Vec3::new(x, *y, z));
        }
        rings.push(ring);
    }
    rings.push(ring_upper);

    for pair in rings.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        for e in 0..4 {
            let (a0, a1) = (a[e], a[(e + 1) % 4]);
            let (b0, b1) = (b[e], b[(e + 1) % 4]);
            faces.push([a0, a1, b1]);
            faces.push([a0, b1, b0]);
        }
    }

    landmarks.insert("handle_tip".into(), Vec3::new(cx + rho + w, 0.0, cz));
    Ok((TriMesh::new(verts, faces), landmarks))
}

// ---------------------------------------------------------------------------
// bowl

fn build_bowl(spec: &ShapeSpec) -> Result<(TriMesh, BTreeMap<String, Vec3>), GeomError> {
    let radius = check(
        spec.get("radius", 0.3),
        Range {
            name: "radius",
            lo: 0.08,
            hi: 0.5,
        },
    )?;
    let height = check(
        spec.get("height", 0.18),
        Range {
            name: "height",
            lo: 0.05,
            hi: 0.45,
        },
    )?;
    let wall = check(
        spec.get("wall", 0.025),
        Range {
            name: "wall",
            lo: 0.005,
            hi: 0.4 * height.min(radius),
        },
    )?;

    let steps = 12;
    let mut profile: Vec<(f64, f64)> = vec![(0.0, 0.0)];
    // outer shell: quarter-ellipse from bottom to rim
    for k in 1..=steps {
        let t = std::f64::consts::FRAC_PI_2 * k as f64 / steps as f64;
        profile.push((radius * t.sin(), height * (1.0 - t.cos())));
    }
    // inner shell back down
    for k in (1..=steps).rev() {
        let t = std::f64::consts::FRAC_PI_2 * k as f64 / steps as f64;
        profile.push((
            (radius - wall) * t.sin(),
            wall + (height - wall) * (1.0 - t.cos()),
        ));
    }
    profile.push((0.0, wall));

    let mesh = Revolve::new(&profile, &[]).oriented().into_mesh();
    let mut landmarks = BTreeMap::new();
    landmarks.insert(
        "rim_point".into(),
        Vec3::new(-(radius - wall / 2.0), 0.0, height),
    );
    landmarks.insert("bottom_center".into(), Vec3::new(0.0, 0.0, 0.0));
    Ok((mesh, landmarks))
}

// ---------------------------------------------------------------------------
// bottle

fn build_bottle(spec: &ShapeSpec) -> Result<(TriMesh, BTreeMap<String, Vec3>), GeomError> {
    let body_r = check(
        spec.get("body_radius", 0.14),
        Range {
            name: "body_radius",
            lo: 0.05,
            hi: 0.3,
        },
    )?;
    let body_h = check(
        spec.get("body_height", 0.3),
        Range {
            name: "body_height",
            lo: 0.1,
            hi: 0.6,
        },
    )?;
    let neck_ratio = check(
        spec.get("neck_ratio", 0.45),
        Range {
            name: "neck_ratio",
            lo: 0.2,
            hi: 0.8,
        },
    )?;
    let neck_h = check(
        spec.get("neck_height", 0.12),
        Range {
            name: "neck_height",
            lo: 0.02,
            hi: 0.3,
        },
    )?;

    let neck_r = body_r * neck_ratio;
    let shoulder = 0.35 * body_h;
    let total = body_h + shoulder + neck_h;

    let mut profile: Vec<(f64, f64)> = vec![(0.0, 0.0)];
    let body_rows = 5;
    for k in 0..=body_rows {
        profile.push((body_r, body_h * k as f64 / body_rows as f64));
    }
    // smooth shoulder taper
    let taper_rows = 6;
    for k in 1..=taper_rows {
        let t = k as f64 / taper_rows as f64;
        let smooth = 0.5 - 0.5 * (std::f64::consts::PI * t).cos();
        profile.push((
            body_r + (neck_r - body_r) * smooth,
            body_h + shoulder * t,
        ));
    }
    profile.push((neck_r, total));
    profile.push((0.0, total));

    let mesh = Revolve::new(&profile, &[]).oriented().into_mesh();
    let mut landmarks = BTreeMap::new();
    landmarks.insert("neck_top".into(), Vec3::new(0.0, 0.0, total));
    landmarks.insert(
        "shoulder".into(),
        Vec3::new(body_r, 0.0, body_h + shoulder / 2.0),
    );
    landmarks.insert("bottom_center".into(), Vec3::new(0.0, 0.0, 0.0));
    Ok((mesh, landmarks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::SpatialIndex;

    #[test]
    fn all_categories_watertight_and_fit_unit_cube() {
        for cat in [ShapeCategory::Mug, ShapeCategory::Bowl, ShapeCategory::Bottle] {
            let mesh = generate_shape(&ShapeSpec::new(cat)).unwrap();
            mesh.check_watertight()
                .unwrap_or_else(|e| panic!("{cat}: {e}"));
            let (lo, hi) = mesh.bounds();
            for a in 0..3 {
                assert!(lo[a] >= -0.5 - 1e-9 && hi[a] <= 0.5 + 1e-9, "{cat} bounds");
            }
        }
    }

    #[test]
    fn default_mug_is_genus_one() {
        let mesh = generate_shape(&ShapeSpec::new(ShapeCategory::Mug)).unwrap();
        assert_eq!(mesh.euler_characteristic(), 0);
    }

    #[test]
    fn zero_handle_equals_handleless_cup() {
        let spec = ShapeSpec::new(ShapeCategory::Mug).with_param("handle_radius", 0.0);
        let a = generate_shape(&spec).unwrap();
        let b = generate_shape(&spec).unwrap();
        assert_eq!(a.vertices, b.vertices);
        assert_eq!(a.euler_characteristic(), 2);
    }

    #[test]
    fn deterministic_per_spec() {
        let spec = ShapeSpec::sample(ShapeCategory::Mug, 42);
        let a = generate_shape(&spec).unwrap();
        let b = generate_shape(&spec).unwrap();
        assert_eq!(a.vertices, b.vertices);
        assert_eq!(a.faces, b.faces);
    }

    #[test]
    fn invalid_param_names_the_parameter() {
        let spec = ShapeSpec::new(ShapeCategory::Mug).with_param("body_radius", 9.0);
        match generate_shape(&spec) {
            Err(GeomError::InvalidParams { name, .. }) => assert_eq!(name, "body_radius"),
            other => panic!("expected InvalidParams, got {other:?}"),
        }
    }

    #[test]
    fn mug_inside_outside_sane() {
        let mesh = generate_shape(&ShapeSpec::new(ShapeCategory::Mug)).unwrap();
        let index = SpatialIndex::build(mesh).unwrap();
        index.mesh().check_watertight().unwrap();
        // cavity above the inner bottom is outside the solid
        assert!(!index.is_inside_unchecked(Vec3::new(0.0, 0.0, 0.2)));
        // far outside
        assert!(!index.is_inside_unchecked(Vec3::new(0.0, 0.0, 2.0)));
    }

    #[test]
    fn handle_tip_landmark_on_surface() {
        let spec = ShapeSpec::new(ShapeCategory::Mug);
        let tip = shape_landmarks(&spec).unwrap()["handle_tip"];
        let mesh = generate_shape(&spec).unwrap();
        let index = SpatialIndex::build(mesh).unwrap();
        let (_, d) = index.closest_point(tip);
        assert!(d < 5e-3, "handle tip {d} off surface");
    }

    #[test]
    fn sampled_specs_generate() {
        for seed in 0..5 {
            for cat in [ShapeCategory::Mug, ShapeCategory::Bowl, ShapeCategory::Bottle] {
                let spec = ShapeSpec::sample(cat, seed);
                let mesh = generate_shape(&spec).unwrap();
                mesh.check_watertight().unwrap();
            }
        }
    }
}
