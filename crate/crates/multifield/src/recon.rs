//! Shape reconstruction: multiresolution isosurface extraction over an
//! occupancy field, and resampling of the result into a point cloud.
//!
//! The polygonizer builds cell polygons by marching-squares segments on
//! the six cell faces and stitching them into loops, instead of a case
//! table. Segments are directed with the occupied region on the left as
//! seen from outside the cell, which makes loop orientation consistent
//! within and across cells; ambiguous faces are resolved by the bilinear
//! face-center value, which depends only on the shared face corners and is
//! therefore crack-free.

use crate::field::{FieldError, MimoModel};
use crate::geom::{sample_surface, GeomError, PointCloud, TriMesh, Vec3};
use std::collections::{HashMap, HashSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReconError {
    #[error("field is occupied everywhere at the final resolution")]
    AllInside,
    #[error("field is empty everywhere at the final resolution")]
    AllOutside,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("sample count must be positive")]
    InvalidCount,
    #[error("reconstruction failed: {0}")]
    ReconstructionFailed(String),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

/// Batched occupancy evaluator over an axis-aligned box.
pub struct OccupancyField<'a> {
    pub eval: Box<dyn Fn(&[Vec3]) -> Vec<f64> + 'a>,
    pub lo: Vec3,
    pub hi: Vec3,
}

impl<'a> OccupancyField<'a> {
    /// Wrap an analytic indicator or probability function.
    pub fn from_fn(f: impl Fn(Vec3) -> f64 + 'a, lo: Vec3, hi: Vec3) -> Self {
        Self {
            eval: Box::new(move |xs| xs.iter().map(|&x| f(x)).collect()),
            lo,
            hi,
        }
    }

    /// Occupancy probability of a trained model conditioned on a cloud.
    pub fn from_model(
        model: &'a MimoModel,
        cloud: &PointCloud,
        lo: Vec3,
        hi: Vec3,
    ) -> Result<Self, FieldError> {
        let latent = model.encode(cloud)?;
        Ok(Self {
            eval: Box::new(move |xs| {
                model
                    .predict_batch(&latent, xs)
                    .iter()
                    .map(|o| o.occ_probability())
                    .collect()
            }),
            lo,
            hi,
        })
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MiseConfig {
    /// coarse grid resolution (cells per axis)
    pub initial: usize,
    /// final grid resolution; must be initial * 2^k
    pub final_res: usize,
    /// iso threshold
    pub tau: f64,
}

impl Default for MiseConfig {
    fn default() -> Self {
        Self {
            initial: 32,
            final_res: 128,
            tau: 0.5,
        }
    }
}

impl MiseConfig {
    fn validate(&self) -> Result<(), ReconError> {
        let bad = |m: String| Err(ReconError::InvalidConfig(m));
        if self.initial == 0 || self.final_res < self.initial {
            return bad(format!(
                "resolutions {} -> {}",
                self.initial, self.final_res
            ));
        }
        let ratio = self.final_res / self.initial;
        if self.initial * ratio != self.final_res || !ratio.is_power_of_two() {
            return bad(format!(
                "final resolution {} is not initial {} times a power of two",
                self.final_res, self.initial
            ));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad(format!("tau {} outside (0, 1)", self.tau));
        }
        Ok(())
    }
}

type VKey = (u32, u32, u32);
type Cell = (usize, usize, usize);

struct Lattice<'a, 'b> {
    field: &'a OccupancyField<'b>,
    res: usize,
    /// vertex-grid value minus tau, keyed by integer lattice coordinate
    values: HashMap<VKey, f64>,
    tau: f64,
}

impl Lattice<'_, '_> {
    fn pos(&self, k: VKey) -> Vec3 {
        let t = |i: u32, lo: f64, hi: f64| lo + (hi - lo) * i as f64 / self.res as f64;
        Vec3::new(
            t(k.0, self.field.lo.x, self.field.hi.x),
            t(k.1, self.field.lo.y, self.field.hi.y),
            t(k.2, self.field.lo.z, self.field.hi.z),
        )
    }

    /// Evaluate any missing keys in one batched field call. The nudge of
    /// exact-threshold values to the inside keeps every sign decision and
    /// interpolation strictly off the boundary.
    fn ensure(&mut self, keys: impl IntoIterator<Item = VKey>) {
        let mut missing: Vec<VKey> = keys
            .into_iter()
            .filter(|k| !self.values.contains_key(k))
            .collect();
        missing.sort_unstable();
        missing.dedup();
        if missing.is_empty() {
            return;
        }
        let pts: Vec<Vec3> = missing.iter().map(|&k| self.pos(k)).collect();
        let vals = (self.field.eval)(&pts);
        for (k, v) in missing.into_iter().zip(vals) {
            let mut s = v - self.tau;
            if s == 0.0 {
                s = 1e-12;
            }
            self.values.insert(k, s);
        }
    }

    fn signed(&self, k: VKey) -> f64 {
        self.values[&k]
    }
}

fn cell_corners(c: Cell, stride: usize) -> [VKey; 8] {
    std::array::from_fn(|i| {
        (
            (c.0 + (i & 1) * stride) as u32,
            (c.1 + ((i >> 1) & 1) * stride) as u32,
            (c.2 + ((i >> 2) & 1) * stride) as u32,
        )
    })
}

fn is_mixed(lat: &Lattice, c: Cell, stride: usize) -> bool {
    let corners = cell_corners(c, stride);
    let first = lat.signed(corners[0]) > 0.0;
    corners[1..].iter().any(|&k| (lat.signed(k) > 0.0) != first)
}

/// Marching-squares segments for one face, as (from, to) pairs of local
/// face-edge indices, where face edge k joins face corners k and k+1.
/// `inside` holds the four corner flags in cyclic order; `center` is the
/// bilinear-center flag deciding the two ambiguous masks.
fn face_segments(inside: [bool; 4], center: bool) -> Vec<(usize, usize)> {
    let mask = inside
        .iter()
        .enumerate()
        .fold(0usize, |m, (i, &b)| m | ((b as usize) << i));
    match mask {
        0 | 15 => vec![],
        // one corner occupied
        1 => vec![(0, 3)],
        2 => vec![(1, 0)],
        4 => vec![(2, 1)],
        8 => vec![(3, 2)],
        // one corner empty (reverse of the complement)
        14 => vec![(3, 0)],
        13 => vec![(0, 1)],
        11 => vec![(1, 2)],
        7 => vec![(2, 3)],
        // two adjacent corners occupied
        3 => vec![(1, 3)],
        6 => vec![(2, 0)],
        12 => vec![(3, 1)],
        9 => vec![(0, 2)],
        // diagonal: connectivity from the face-center value
        5 => {
            if center {
                vec![(0, 1), (2, 3)]
            } else {
                vec![(0, 3), (2, 1)]
            }
        }
        10 => {
            if center {
                vec![(1, 2), (3, 0)]
            } else {
                vec![(1, 0), (3, 2)]
            }
        }
        _ => unreachable!(),
    }
}

/// Cube-corner indices of each face, counter-clockwise as seen from
/// outside: face = (axis, side).
fn face_corner_order(axis: usize, side: usize) -> [usize; 4] {
    // tangent axes (u, w) with u x w pointing along the outward normal
    let (u, w) = if side == 1 {
        ((axis + 1) % 3, (axis + 2) % 3)
    } else {
        ((axis + 2) % 3, (axis + 1) % 3)
    };
    let base = side << axis;
    [
        base,
        base | (1 << u),
        base | (1 << u) | (1 << w),
        base | (1 << w),
    ]
}

/// Cube edge id (axis * 4 + slot) joining two corners differing in one bit.
fn cube_edge(a: usize, b: usize) -> (usize, usize) {
    let d = (a ^ b).trailing_zeros() as usize;
    debug_assert_eq!(a ^ b, 1 << d);
    let m = a & b;
    let (f1, f2) = match d {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let slot = ((m >> f1) & 1) | (((m >> f2) & 1) << 1);
    (d * 4 + slot, m)
}

struct MeshBuilder {
    vertices: Vec<Vec3>,
    faces: Vec<[u32; 3]>,
    /// exact weld: (lower lattice corner, axis) -> vertex index
    edge_vertices: HashMap<(VKey, u8), u32>,
}

impl MeshBuilder {
    /// Polygonize one unit cell at lattice coordinate `c`.
    fn polygonize_cell(&mut self, lat: &Lattice, c: Cell) {
        let corners = cell_corners(c, 1);
        let s: [f64; 8] = std::array::from_fn(|i| lat.signed(corners[i]));

        // directed segments between cube edges, from all six faces
        let mut next: HashMap<usize, usize> = HashMap::new();
        for axis in 0..3 {
            for side in 0..2 {
                let order = face_corner_order(axis, side);
                let inside = order.map(|i| s[i] > 0.0);
                let center = order.iter().map(|&i| s[i]).sum::<f64>() > 0.0;
                for (from, to) in face_segments(inside, center) {
                    let (from_edge, _) = cube_edge(order[from], order[(from + 1) % 4]);
                    let (to_edge, _) = cube_edge(order[to], order[(to + 1) % 4]);
                    let prev = next.insert(from_edge, to_edge);
                    debug_assert!(prev.is_none());
                }
            }
        }

        // chain segments into loops and fan-triangulate
        let mut remaining = next;
        while let Some((&start, _)) = remaining.iter().next() {
            let mut loop_edges = vec![start];
            let mut cur = remaining.remove(&start).unwrap();
            while cur != start {
                loop_edges.push(cur);
                cur = remaining.remove(&cur).unwrap();
            }
            let ids: Vec<u32> = loop_edges
                .iter()
                .map(|&e| self.edge_vertex(lat, c, &s, e))
                .collect();
            for i in 1..ids.len() - 1 {
                let f = [ids[0], ids[i], ids[i + 1]];
                if f[0] != f[1] && f[1] != f[2] && f[0] != f[2] {
                    self.faces.push(f);
                }
            }
        }
    }

    fn edge_vertex(&mut self, lat: &Lattice, c: Cell, s: &[f64; 8], edge: usize) -> u32 {
        let axis = edge / 4;
        let slot = edge % 4;
        let (f1, f2) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let mut lower = 0usize;
        lower |= (slot & 1) << f1;
        lower |= ((slot >> 1) & 1) << f2;
        let upper = lower | (1 << axis);
        let key_corner = (
            (c.0 + ((lower) & 1)) as u32,
            (c.1 + ((lower >> 1) & 1)) as u32,
            (c.2 + ((lower >> 2) & 1)) as u32,
        );
        if let Some(&id) = self.edge_vertices.get(&(key_corner, axis as u8)) {
            return id;
        }
        let (s0, s1) = (s[lower], s[upper]);
        debug_assert!((s0 > 0.0) != (s1 > 0.0));
        let t = s0 / (s0 - s1);
        let p0 = lat.pos(key_corner);
        let p1 = lat.pos((
            key_corner.0 + (axis == 0) as u32,
            key_corner.1 + (axis == 1) as u32,
            key_corner.2 + (axis == 2) as u32,
        ));
        let p = p0 + (p1 - p0) * t;
        let id = self.vertices.len() as u32;
        self.vertices.push(p);
        self.edge_vertices.insert((key_corner, axis as u8), id);
        id
    }
}

/// Multiresolution isosurface extraction: evaluate the coarse grid, then
/// repeatedly subdivide cells with mixed corner signs (plus their
/// neighbors) until the final resolution, and polygonize the crossing
/// cells. Output matches dense-grid extraction for fields without
/// components smaller than a coarse cell.
pub fn mise_extract(field: &OccupancyField, config: &MiseConfig) -> Result<TriMesh, ReconError> {
    config.validate()?;
    let mut lat = Lattice {
        field,
        res: config.final_res,
        values: HashMap::new(),
        tau: config.tau,
    };
    let mut stride = config.final_res / config.initial;
    let mut active: Vec<Cell> = {
        let n = config.initial;
        let mut v = Vec::with_capacity(n * n * n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    v.push((i * stride, j * stride, k * stride));
                }
            }
        }
        v
    };

    let crossing = loop {
        lat.ensure(active.iter().flat_map(|&c| cell_corners(c, stride)));
        let mixed: Vec<Cell> = active
            .iter()
            .copied()
            .filter(|&c| is_mixed(&lat, c, stride))
            .collect();
        if stride == 1 {
            break mixed;
        }
        // expand by the 26-neighborhood so features near cell borders
        // survive refinement, then subdivide into octants
        let max = config.final_res - stride;
        let mut expanded: HashSet<Cell> = HashSet::new();
        for &(i, j, k) in &mixed {
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    for dk in -1i64..=1 {
                        let (ni, nj, nk) = (
                            i as i64 + di * stride as i64,
                            j as i64 + dj * stride as i64,
                            k as i64 + dk * stride as i64,
                        );
                        if ni >= 0
                            && nj >= 0
                            && nk >= 0
                            && ni <= max as i64
                            && nj <= max as i64
                            && nk <= max as i64
                        {
                            expanded.insert((ni as usize, nj as usize, nk as usize));
                        }
                    }
                }
            }
        }
        stride /= 2;
        active = expanded
            .into_iter()
            .flat_map(|(i, j, k)| {
                (0..8).map(move |b| {
                    (
                        i + (b & 1) * stride,
                        j + ((b >> 1) & 1) * stride,
                        k + ((b >> 2) & 1) * stride,
                    )
                })
            })
            .collect();
        active.sort_unstable();
    };

    if crossing.is_empty() {
        let occupied = lat.values.values().filter(|v| **v > 0.0).count();
        return if occupied * 2 >= lat.values.len() {
            Err(ReconError::AllInside)
        } else {
            Err(ReconError::AllOutside)
        };
    }

    let mut builder = MeshBuilder {
        vertices: Vec::new(),
        faces: Vec::new(),
        edge_vertices: HashMap::new(),
    };
    for &c in &crossing {
        builder.polygonize_cell(&lat, c);
    }
    let mut mesh = TriMesh::new(builder.vertices, builder.faces).weld(1e-9);
    orient_outward(&mut mesh, field, (field.hi - field.lo).norm() / config.final_res as f64);
    Ok(mesh)
}

/// Dense-grid extraction at the final resolution; the reference the
/// multiresolution pass must reproduce.
pub fn dense_extract(field: &OccupancyField, config: &MiseConfig) -> Result<TriMesh, ReconError> {
    let dense = MiseConfig {
        initial: config.final_res,
        final_res: config.final_res,
        tau: config.tau,
    };
    mise_extract(field, &dense)
}

/// Flip faces so the majority of face normals point from occupied toward
/// empty space, probing the field just off each face centroid.
fn orient_outward(mesh: &mut TriMesh, field: &OccupancyField, h: f64) {
    if mesh.faces.is_empty() {
        return;
    }
    let mut probes = Vec::with_capacity(mesh.faces.len() * 2);
    for i in 0..mesh.faces.len() {
        let [a, b, c] = mesh.triangle(i);
        let centroid = (a + b + c) / 3.0;
        let n = (b - a).cross(c - a);
        let n = if n.norm() > 0.0 {
            n.normalized()
        } else {
            Vec3::new(0.0, 0.0, 1.0)
        };
        probes.push(centroid + n * (0.5 * h));
        probes.push(centroid - n * (0.5 * h));
    }
    let vals = (field.eval)(&probes);
    let votes_flip = (0..mesh.faces.len())
        .filter(|i| vals[2 * i] > vals[2 * i + 1])
        .count();
    if votes_flip * 2 > mesh.faces.len() {
        for f in &mut mesh.faces {
            f.swap(1, 2);
        }
    }
}

/// Reconstruct a mesh from the occupancy branch conditioned on an observed
/// cloud, then sample `n` surface points from it.
pub fn resample_reconstruction(
    model: &MimoModel,
    observed: &PointCloud,
    n: usize,
    seed: u64,
    config: &MiseConfig,
) -> Result<(TriMesh, PointCloud), ReconError> {
    if n == 0 {
        return Err(ReconError::InvalidCount);
    }
    if observed.points.is_empty() {
        return Err(ReconError::ReconstructionFailed("empty observed cloud".into()));
    }
    let (lo, hi) = observed.bounds();
    let pad = Vec3::splat(((hi - lo).norm() * 0.25).max(0.1));
    let field = OccupancyField::from_model(model, observed, lo - pad, hi + pad)?;
    let mesh = match mise_extract(&field, config) {
        Ok(m) => m,
        Err(e @ (ReconError::AllInside | ReconError::AllOutside)) => {
            return Err(ReconError::ReconstructionFailed(e.to_string()))
        }
        Err(e) => return Err(e),
    };
    let cloud = sample_surface(&mesh, n, seed)?;
    Ok((mesh, cloud))
}
