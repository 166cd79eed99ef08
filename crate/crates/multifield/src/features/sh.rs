//! Real orthonormal spherical harmonics and unit-sphere quadrature.

use std::f64::consts::{PI, TAU};

use crate::geom::Vec3;

/// Quadrature rule on the unit sphere; weights sum to 4*pi.
#[derive(Debug, Clone)]
pub struct SphereQuadrature {
    pub directions: Vec<Vec3>,
    pub weights: Vec<f64>,
}

/// Serializable choice of quadrature rule.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum QuadratureRule {
    Fibonacci { n: usize },
    GaussProduct { n_theta: usize, n_phi: usize },
}

impl Default for QuadratureRule {
    fn default() -> Self {
        // exact for products of harmonics up to degree 15; a Fibonacci
        // spiral of any practical size misses the 1e-6 orthonormality bar
        QuadratureRule::GaussProduct {
            n_theta: 16,
            n_phi: 32,
        }
    }
}

impl QuadratureRule {
    pub fn build(self) -> SphereQuadrature {
        match self {
            QuadratureRule::Fibonacci { n } => SphereQuadrature::fibonacci(n),
            QuadratureRule::GaussProduct { n_theta, n_phi } => {
                SphereQuadrature::gauss_product(n_theta, n_phi)
            }
        }
    }
}

impl SphereQuadrature {
    /// Spiral (Fibonacci) point set with equal weights.
    pub fn fibonacci(n: usize) -> Self {
        assert!(n >= 2);
        let golden = (1.0 + 5.0_f64.sqrt()) / 2.0;
        let mut directions = Vec::with_capacity(n);
        for i in 0..n {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = TAU * (i as f64 / golden).fract();
            directions.push(Vec3::new(r * phi.cos(), r * phi.sin(), z));
        }
        let w = 4.0 * PI / n as f64;
        Self {
            weights: vec![w; n],
            directions,
        }
    }

    /// Tensor product of Gauss-Legendre nodes in cos(theta) and a uniform
    /// grid in phi. Exact for spherical harmonics up to degree
    /// `2 * n_theta - 1` (and order `< n_phi / 2`).
    pub fn gauss_product(n_theta: usize, n_phi: usize) -> Self {
        let (nodes, gl_weights) = gauss_legendre(n_theta);
        let mut directions = Vec::with_capacity(n_theta * n_phi);
        let mut weights = Vec::with_capacity(n_theta * n_phi);
        for (z, wz) in nodes.iter().zip(&gl_weights) {
            let r = (1.0 - z * z).max(0.0).sqrt();
            for j in 0..n_phi {
                let phi = TAU * j as f64 / n_phi as f64;
                directions.push(Vec3::new(r * phi.cos(), r * phi.sin(), *z));
                weights.push(wz * TAU / n_phi as f64);
            }
        }
        Self {
            directions,
            weights,
        }
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1] via Newton iteration.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Chebyshev-based initial guess
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Legendre polynomial P_n(x) and its derivative.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Real orthonormal spherical-harmonics basis up to degree `max_degree`.
///
/// Coefficient vectors use lexicographic `(l, m)` ordering with `m` from
/// `-l` to `l`, total length `(L + 1)^2`.
#[derive(Debug, Clone)]
pub struct ShBasis {
    pub max_degree: usize,
}

impl ShBasis {
    pub fn new(max_degree: usize) -> Self {
        Self { max_degree }
    }

    pub fn len(&self) -> usize {
        (self.max_degree + 1) * (self.max_degree + 1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Flat index of `(l, m)`.
    pub fn index(&self, l: usize, m: i64) -> usize {
        debug_assert!(l <= self.max_degree && m.unsigned_abs() as usize <= l);
        l * l + (m + l as i64) as usize
    }

    /// Evaluate all Y_{l,m} at a unit direction.
    pub fn evaluate(&self, dir: Vec3) -> Vec<f64> {
        let l_max = self.max_degree;
        let ct = dir.z.clamp(-1.0, 1.0);
        let st = (1.0 - ct * ct).max(0.0).sqrt();
        let phi = dir.y.atan2(dir.x);

        // associated Legendre P_l^m(ct) for 0 <= m <= l, standard recurrences
        let mut p = vec![vec![0.0; l_max + 1]; l_max + 1];
        p[0][0] = 1.0;
        for m in 1..=l_max {
            p[m][m] = -((2 * m - 1) as f64) * st * p[m - 1][m - 1];
        }
        for m in 0..l_max {
            p[m + 1][m] = (2 * m + 1) as f64 * ct * p[m][m];
        }
        for m in 0..=l_max {
            for l in m + 2..=l_max {
                p[l][m] = (((2 * l - 1) as f64) * ct * p[l - 1][m]
                    - ((l + m - 1) as f64) * p[l - 2][m])
                    / ((l - m) as f64);
            }
        }

        let mut out = vec![0.0; self.len()];
        for l in 0..=l_max {
            for m in -(l as i64)..=(l as i64) {
                let am = m.unsigned_abs() as usize;
                let mut norm = ((2 * l + 1) as f64 / (4.0 * PI)).sqrt();
                if am > 0 {
                    let mut ratio = 1.0;
                    for k in (l - am + 1)..=(l + am) {
                        ratio *= k as f64;
                    }
                    norm *= (2.0 / ratio).sqrt();
                    // cancel the Condon-Shortley phase baked into P_l^m
                    if am % 2 == 1 {
                        norm = -norm;
                    }
                }
                let angular = if m > 0 {
                    (am as f64 * phi).cos()
                } else if m < 0 {
                    (am as f64 * phi).sin()
                } else {
                    1.0
                };
                out[self.index(l, m)] = norm * p[l][am] * angular;
            }
        }
        out
    }

    /// Gram matrix of the basis under a quadrature rule; identity when the
    /// rule is accurate enough.
    pub fn gram(&self, quad: &SphereQuadrature) -> Vec<Vec<f64>> {
        let n = self.len();
        let mut g = vec![vec![0.0; n]; n];
        for (dir, w) in quad.directions.iter().zip(&quad.weights) {
            let y = self.evaluate(*dir);
            for a in 0..n {
                for b in 0..n {
                    g[a][b] += w * y[a] * y[b];
                }
            }
        }
        g
    }

    /// Maximum absolute deviation of the Gram matrix from the identity.
    pub fn orthonormality_error(&self, quad: &SphereQuadrature) -> f64 {
        let g = self.gram(quad);
        let mut err: f64 = 0.0;
        for (a, row) in g.iter().enumerate() {
            for (b, &v) in row.iter().enumerate() {
                let target = if a == b { 1.0 } else { 0.0 };
                err = err.max((v - target).abs());
            }
        }
        err
    }
}
