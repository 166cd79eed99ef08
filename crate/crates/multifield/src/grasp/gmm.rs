//! Gaussian mixture over grasp poses on ℝ³ × S³. Each component carries a
//! mean pose; densities and covariances live in the 6-dimensional tangent
//! space at the component's rotation mean (translation offset plus the
//! rotation-vector logarithm of the relative rotation, with quaternion
//! signs aligned to the mean's hemisphere).

use super::GraspError;
use crate::geom::{Pose, UnitQuat, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: Pose,
    /// 6x6 covariance in the tangent space at `mean`, row-major
    pub covariance: [[f64; 6]; 6],
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GraspGmm {
    pub components: Vec<GmmComponent>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EmConfig {
    pub iterations: usize,
    pub seed: u64,
    /// diagonal floor added to every covariance
    pub reg: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            iterations: 60,
            seed: 0,
            reg: 1e-6,
        }
    }
}

/// Tangent coordinates of `pose` at `mean`: `[dt, ω]` with
/// `ω = log(μ_q⁻¹ · q)` after sign alignment.
pub fn tangent_coords(mean: &Pose, pose: &Pose) -> [f64; 6] {
    let dt = pose.translation - mean.translation;
    let mut q = pose.rotation;
    if mean.rotation.dot(q) < 0.0 {
        q = -q;
    }
    let omega = mean.rotation.conjugate().mul(q).to_rotation_vector();
    [dt.x, dt.y, dt.z, omega.x, omega.y, omega.z]
}

/// Inverse of [`tangent_coords`]: the pose at tangent offset `y` from
/// `mean`.
pub fn tangent_exp(mean: &Pose, y: [f64; 6]) -> Pose {
    let dt = Vec3::new(y[0], y[1], y[2]);
    let omega = Vec3::new(y[3], y[4], y[5]);
    Pose::new(
        mean.rotation.mul(UnitQuat::from_rotation_vector(omega)),
        mean.translation + dt,
    )
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite 6x6
/// matrix. `None` if the matrix is not positive definite.
fn cholesky6(a: &[[f64; 6]; 6]) -> Option<[[f64; 6]; 6]> {
    let mut l = [[0.0; 6]; 6];
    for i in 0..6 {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i][j] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

/// Solve L x = b for lower-triangular L.
fn forward_solve(l: &[[f64; 6]; 6], b: &[f64; 6]) -> [f64; 6] {
    let mut x = [0.0; 6];
    for i in 0..6 {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i][k] * x[k];
        }
        x[i] = s / l[i][i];
    }
    x
}

struct CompCache {
    chol: [[f64; 6]; 6],
    log_norm: f64, // -0.5 (6 ln 2π + ln det Σ)
}

fn cache_component(c: &GmmComponent) -> Result<CompCache, GraspError> {
    let chol = cholesky6(&c.covariance)
        .ok_or(GraspError::NonFinite("covariance factorization"))?;
    let log_det: f64 = (0..6).map(|i| chol[i][i].ln()).sum::<f64>() * 2.0;
    let log_norm = -0.5 * (6.0 * (2.0 * std::f64::consts::PI).ln() + log_det);
    Ok(CompCache { chol, log_norm })
}

fn component_log_density(c: &GmmComponent, cache: &CompCache, pose: &Pose) -> f64 {
    let y = tangent_coords(&c.mean, pose);
    let z = forward_solve(&cache.chol, &y);
    let maha: f64 = z.iter().map(|v| v * v).sum();
    cache.log_norm - 0.5 * maha
}

impl GraspGmm {
    /// Mixture log density at `pose` (log-sum-exp over components).
    pub fn log_density(&self, pose: &Pose) -> Result<f64, GraspError> {
        let mut terms = Vec::with_capacity(self.components.len());
        for c in &self.components {
            let cache = cache_component(c)?;
            terms.push(c.weight.ln() + component_log_density(c, &cache, pose));
        }
        let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln())
    }

    pub fn density(&self, pose: &Pose) -> Result<f64, GraspError> {
        Ok(self.log_density(pose)?.exp())
    }
}

/// Draw `n` poses from the mixture. Deterministic per seed.
pub fn sample_gmm(gmm: &GraspGmm, n: usize, seed: u64) -> Result<Vec<Pose>, GraspError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let caches: Vec<CompCache> = gmm
        .components
        .iter()
        .map(cache_component)
        .collect::<Result<_, _>>()?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut k = gmm.components.len() - 1;
        for (i, c) in gmm.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                k = i;
                break;
            }
        }
        // y = L ξ with ξ standard normal (Box-Muller)
        let mut xi = [0.0; 6];
        for pair in xi.chunks_mut(2) {
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let r = (-2.0 * u1.ln()).sqrt();
            pair[0] = r * u2.cos();
            if pair.len() > 1 {
                pair[1] = r * u2.sin();
            }
        }
        let l = &caches[k].chol;
        let mut y = [0.0; 6];
        for i in 0..6 {
            for (j, x) in xi.iter().enumerate().take(i + 1) {
                y[i] += l[i][j] * x;
            }
        }
        out.push(tangent_exp(&gmm.components[k].mean, y));
    }
    Ok(out)
}

fn count_distinct(poses: &[Pose]) -> usize {
    let mut distinct: Vec<&Pose> = Vec::new();
    for p in poses {
        let dup = distinct.iter().any(|q| {
            (q.translation - p.translation).norm() < 1e-9
                && q.rotation.angle_to(p.rotation) < 1e-9
        });
        if !dup {
            distinct.push(p);
        }
    }
    distinct.len()
}

/// Weighted intrinsic mean on ℝ³ × S³: Euclidean mean for translation,
/// iterated tangent-space averaging for the rotation.
fn weighted_mean(poses: &[Pose], w: &[f64]) -> Pose {
    let total: f64 = w.iter().sum();
    let mut t = Vec3::ZERO;
    for (p, &wi) in poses.iter().zip(w) {
        t = t + p.translation * (wi / total);
    }
    let mut mu = poses[w
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0)]
    .rotation;
    for _ in 0..32 {
        let mut v = Vec3::ZERO;
        for (p, &wi) in poses.iter().zip(w) {
            let mut q = p.rotation;
            if mu.dot(q) < 0.0 {
                q = -q;
            }
            v = v + mu.conjugate().mul(q).to_rotation_vector() * (wi / total);
        }
        mu = mu.mul(UnitQuat::from_rotation_vector(v));
        if v.norm() < 1e-12 {
            break;
        }
    }
    Pose::new(mu, t)
}

/// Fit a `k`-component mixture by EM. Initialization spreads means over
/// the data deterministically (k-means++-style seeding by farthest pose).
pub fn fit_gmm(poses: &[Pose], k: usize, config: &EmConfig) -> Result<GraspGmm, GraspError> {
    if k == 0 {
        return Err(GraspError::InvalidParams("k must be positive".into()));
    }
    let distinct = count_distinct(poses);
    if distinct < k {
        return Err(GraspError::DegenerateData {
            need: k,
            got: distinct,
        });
    }
    // canonical hemisphere up front: q and -q are the same rotation, so
    // a sign flip of any input must not change the fit at all
    let poses: Vec<Pose> = poses
        .iter()
        .map(|p| Pose::new(p.rotation.canonical(), p.translation))
        .collect();
    let poses = poses.as_slice();
    let n = poses.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    // seeding: first mean uniformly at random, then farthest-pose
    let pose_dist = |a: &Pose, b: &Pose| {
        (a.translation - b.translation).norm() + a.rotation.angle_to(b.rotation)
    };
    let mut mean_idx = vec![rng.gen_range(0..n)];
    while mean_idx.len() < k {
        let (next, _) = (0..n)
            .map(|i| {
                let d = mean_idx
                    .iter()
                    .map(|&j| pose_dist(&poses[i], &poses[j]))
                    .fold(f64::INFINITY, f64::min);
                (i, d)
            })
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        mean_idx.push(next);
    }
    let spread = {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s = f64::max(s, pose_dist(&poses[i], &poses[j]));
            }
        }
        f64::max(s, 1e-3)
    };
    let mut components: Vec<GmmComponent> = mean_idx
        .into_iter()
        .map(|i| {
            let mut cov = [[0.0; 6]; 6];
            for (d, row) in cov.iter_mut().enumerate() {
                row[d] = (spread / 2.0).powi(2) + config.reg;
            }
            GmmComponent {
                weight: 1.0 / k as f64,
                mean: poses[i],
                covariance: cov,
            }
        })
        .collect();

    let mut resp = vec![vec![0.0; k]; n];
    for _ in 0..config.iterations {
        // E step
        let caches: Vec<CompCache> = components
            .iter()
            .map(cache_component)
            .collect::<Result<_, _>>()?;
        for (i, pose) in poses.iter().enumerate() {
            let logs: Vec<f64> = components
                .iter()
                .zip(&caches)
                .map(|(c, cache)| c.weight.ln() + component_log_density(c, cache, pose))
                .collect();
            let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if !m.is_finite() {
                return Err(GraspError::NonFinite("EM responsibility"));
            }
            let z: f64 = logs.iter().map(|l| (l - m).exp()).sum();
            for (j, l) in logs.iter().enumerate() {
                resp[i][j] = (l - m).exp() / z;
            }
        }
        // M step
        for (j, comp) in components.iter_mut().enumerate() {
            let w: Vec<f64> = resp.iter().map(|r| r[j]).collect();
            let nj: f64 = w.iter().sum();
            comp.weight = nj / n as f64;
            if nj < 1e-12 {
                continue;
            }
            comp.mean = weighted_mean(poses, &w);
            let mut cov = [[0.0; 6]; 6];
            for (pose, &wi) in poses.iter().zip(&w) {
                let y = tangent_coords(&comp.mean, pose);
                for (r, row) in cov.iter_mut().enumerate() {
                    for (c, cell) in row.iter_mut().enumerate() {
                        *cell += wi * y[r] * y[c] / nj;
                    }
                }
            }
            for (d, row) in cov.iter_mut().enumerate() {
                row[d] += config.reg;
            }
            comp.covariance = cov;
        }
        let wsum: f64 = components.iter().map(|c| c.weight).sum();
        for c in &mut components {
            c.weight /= wsum;
        }
    }
    Ok(GraspGmm { components })
}

fn log_likelihood(gmm: &GraspGmm, poses: &[Pose]) -> Result<f64, GraspError> {
    let mut ll = 0.0;
    for p in poses {
        ll += gmm.log_density(p)?;
    }
    Ok(ll)
}

/// Fit mixtures for every k in `1..=k_max` that the data supports and
/// keep the one with the lowest Bayesian information criterion.
pub fn fit_gmm_bic(
    poses: &[Pose],
    k_max: usize,
    config: &EmConfig,
) -> Result<(GraspGmm, usize), GraspError> {
    if poses.is_empty() {
        return Err(GraspError::DegenerateData { need: 1, got: 0 });
    }
    let distinct = count_distinct(poses);
    let mut best: Option<(f64, GraspGmm, usize)> = None;
    for k in 1..=k_max.max(1).min(distinct) {
        let gmm = fit_gmm(poses, k, config)?;
        let ll = log_likelihood(&gmm, poses)?;
        // per component: 6 mean-translation + 3 rotation + 21 covariance,
        // plus k-1 free weights
        let params = (k * (6 + 3 + 21) + (k - 1)) as f64;
        let bic = params * (poses.len() as f64).ln() - 2.0 * ll;
        if best.as_ref().is_none_or(|(b, _, _)| bic < *b) {
            best = Some((bic, gmm, k));
        }
    }
    let (_, gmm, k) = best.unwrap();
    Ok((gmm, k))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn jittered(center: &Pose, sigma_t: f64, sigma_r: f64, n: usize, seed: u64) -> Vec<Pose> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let mut y = [0.0; 6];
                for (i, v) in y.iter_mut().enumerate() {
                    let s = if i < 3 { sigma_t } else { sigma_r };
                    *v = rng.gen_range(-s..s);
                }
                tangent_exp(center, y)
            })
            .collect()
    }

    #[test]
    fn tangent_roundtrip() {
        let mean = Pose::new(
            UnitQuat::from_axis_angle(Vec3::new(1.0, 0.3, -0.2), 0.9),
            Vec3::new(0.1, -0.2, 0.3),
        );
        let pose = Pose::new(
            UnitQuat::from_axis_angle(Vec3::new(-0.5, 1.0, 0.1), 1.4),
            Vec3::new(-0.05, 0.08, 0.0),
        );
        let back = tangent_exp(&mean, tangent_coords(&mean, &pose));
        assert!((back.translation - pose.translation).norm() < 1e-9);
        assert!(back.rotation.angle_to(pose.rotation) < 1e-8);
    }

    #[test]
    fn antipodal_quaternions_give_identical_coords() {
        let mean = Pose::IDENTITY;
        let pose = Pose::new(UnitQuat::from_axis_angle(Vec3::Z, 0.5), Vec3::ZERO);
        let flipped = Pose::new(-pose.rotation, Vec3::ZERO);
        let a = tangent_coords(&mean, &pose);
        let b = tangent_coords(&mean, &flipped);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn cholesky_identity() {
        let mut eye = [[0.0; 6]; 6];
        for (i, row) in eye.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        let l = cholesky6(&eye).unwrap();
        assert_eq!(l, eye);
        let mut indef = eye;
        indef[3][3] = -1.0;
        assert!(cholesky6(&indef).is_none());
    }

    #[test]
    fn single_component_recovers_cluster_mean() {
        let center = Pose::new(
            UnitQuat::from_axis_angle(Vec3::Y, 0.7),
            Vec3::new(0.05, 0.0, -0.02),
        );
        let poses = jittered(&center, 0.005, 0.02, 60, 3);
        let gmm = fit_gmm(&poses, 1, &EmConfig::default()).unwrap();
        let c = &gmm.components[0];
        assert!((c.weight - 1.0).abs() < 1e-12);
        assert!((c.mean.translation - center.translation).norm() < 0.003);
        assert!(c.mean.rotation.angle_to(center.rotation) < 0.02);
    }

    #[test]
    fn two_clusters_separated() {
        let a = Pose::from_translation(Vec3::new(-0.1, 0.0, 0.0));
        let b = Pose::new(
            UnitQuat::from_axis_angle(Vec3::Z, 1.5),
            Vec3::new(0.1, 0.0, 0.0),
        );
        let mut poses = jittered(&a, 0.004, 0.01, 40, 5);
        poses.extend(jittered(&b, 0.004, 0.01, 40, 6));
        let gmm = fit_gmm(&poses, 2, &EmConfig::default()).unwrap();
        let mut means: Vec<Vec3> = gmm.components.iter().map(|c| c.mean.translation).collect();
        means.sort_by(|p, q| p.x.total_cmp(&q.x));
        assert!((means[0] - a.translation).norm() < 0.01);
        assert!((means[1] - b.translation).norm() < 0.01);
        for c in &gmm.components {
            assert!((c.weight - 0.5).abs() < 0.05, "weight {}", c.weight);
        }
    }

    #[test]
    fn bic_prefers_two_components_for_two_clusters() {
        let a = Pose::from_translation(Vec3::new(-0.1, 0.0, 0.0));
        let b = Pose::from_translation(Vec3::new(0.1, 0.0, 0.0));
        let mut poses = jittered(&a, 0.003, 0.01, 50, 7);
        poses.extend(jittered(&b, 0.003, 0.01, 50, 8));
        let (_, k) = fit_gmm_bic(&poses, 4, &EmConfig::default()).unwrap();
        assert_eq!(k, 2);
    }

    #[test]
    fn degenerate_data_rejected() {
        let poses = vec![Pose::IDENTITY; 10];
        assert!(matches!(
            fit_gmm(&poses, 2, &EmConfig::default()),
            Err(GraspError::DegenerateData { need: 2, got: 1 })
        ));
    }

    #[test]
    fn samples_follow_the_fit() {
        let center = Pose::new(
            UnitQuat::from_axis_angle(Vec3::X, 0.4),
            Vec3::new(0.02, -0.01, 0.03),
        );
        let poses = jittered(&center, 0.01, 0.03, 80, 9);
        let gmm = fit_gmm(&poses, 1, &EmConfig::default()).unwrap();
        let samples = sample_gmm(&gmm, 500, 11).unwrap();
        let mean_t = samples
            .iter()
            .fold(Vec3::ZERO, |acc, p| acc + p.translation)
            * (1.0 / samples.len() as f64);
        assert!((mean_t - center.translation).norm() < 0.005);
        let max_angle = samples
            .iter()
            .map(|p| p.rotation.angle_to(center.rotation))
            .fold(0.0, f64::max);
        assert!(max_angle < 0.3, "max angle {max_angle}");
    }

    #[test]
    fn density_integrates_consistently() {
        // density at the mean of a tight cluster exceeds density far away
        let center = Pose::IDENTITY;
        let poses = jittered(&center, 0.01, 0.01, 50, 13);
        let gmm = fit_gmm(&poses, 1, &EmConfig::default()).unwrap();
        let near = gmm.log_density(&center).unwrap();
        let far = gmm
            .log_density(&Pose::from_translation(Vec3::new(1.0, 0.0, 0.0)))
            .unwrap();
        assert!(near > far + 10.0);
    }

    #[test]
    fn fit_deterministic() {
        let poses = jittered(&Pose::IDENTITY, 0.01, 0.02, 30, 17);
        let a = fit_gmm(&poses, 2, &EmConfig::default()).unwrap();
        let b = fit_gmm(&poses, 2, &EmConfig::default()).unwrap();
        assert_eq!(a, b);
    }
}
