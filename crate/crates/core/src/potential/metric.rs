//! RBF metric learned from data.
//!
//! `h(x) = sum_k w_k exp(-lambda_k / 2 |x - c_k|^2)` is fitted to equal one on
//! the data, and the metric is `G(x) = (h(x) + eps)^-1 I`. The implied
//! potential for a velocity `v` is `v^T (G(x) - I) v`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::neural::Adam;

/// Bandwidth used for clusters whose points all sit on the centroid.
pub const LAMBDA_MAX: f64 = 1e8;
pub const DEFAULT_EPSILON: f64 = 1e-3;
pub const DEFAULT_KAPPA: f64 = 1.5;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// A cluster that loses all its points is re-seeded at the point farthest
/// from its currently assigned centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeans> {
    const MAX_ITER: usize = 300;
    if k == 0 || k > points.len() {
        return Err(Error::Config(format!("k must be in 1..={}, got {k}", points.len())));
    }
    let d = points[0].len();
    for p in points {
        check_dim(d, p.len())?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut closest: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, &c) in closest.iter().enumerate() {
                if r < c {
                    chosen = i;
                    break;
                }
                r -= c;
            }
            // guard against rounding landing on a zero-weight point
            if closest[chosen] == 0.0 {
                chosen = closest.iter().rposition(|&c| c > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[pick].clone();
        for (cl, p) in closest.iter_mut().zip(points) {
            *cl = cl.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }

    let mut assignments = vec![usize::MAX; points.len()];
    let mut iterations = 0;
    for it in 0..MAX_ITER {
        iterations = it + 1;
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let best = nearest(p, &centroids).0;
            if assignments[i] != best {
                assignments[i] = best;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (i, sq_dist(p, &centroids[assignments[i]])))
                    .max_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|(i, _)| i)
                    .unwrap();
                centroids[c] = points[far].clone();
                assignments[far] = c;
                changed = true;
            } else {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = points.iter().zip(&assignments).map(|(p, &a)| sq_dist(p, &centroids[a])).sum();
    Ok(KMeans {
        centroids,
        assignments,
        inertia,
        iterations,
    })
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let dd = sq_dist(p, c);
        if dd < best.1 {
            best = (j, dd);
        }
    }
    best
}

/// Per-cluster bandwidths `lambda_k = 0.5 (kappa * mean_{x in C_k} |x - c_k|)^-2`,
/// capped at [`LAMBDA_MAX`].
pub fn fit_bandwidths(points: &[Vec<f64>], km: &KMeans, kappa: f64) -> Result<Vec<f64>> {
    let k = km.centroids.len();
    let mut dist_sum = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(&km.assignments) {
        dist_sum[a] += sq_dist(p, &km.centroids[a]).sqrt();
        counts[a] += 1;
    }
    (0..k)
        .map(|c| {
            if counts[c] == 0 {
                return Err(Error::Config(format!("cluster {c} is empty")));
            }
            let spread = kappa * dist_sum[c] / counts[c] as f64;
            Ok(if spread > 0.0 {
                (0.5 / (spread * spread)).min(LAMBDA_MAX)
            } else {
                LAMBDA_MAX
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfMetric {
    pub centroids: Vec<Vec<f64>>,
    pub bandwidths: Vec<f64>,
    pub weights: Vec<f64>,
    pub epsilon: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RbfFitConfig {
    pub n_clusters: usize,
    pub kappa: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for RbfFitConfig {
    fn default() -> Self {
        Self {
            n_clusters: 100,
            kappa: DEFAULT_KAPPA,
            epsilon: DEFAULT_EPSILON,
            epochs: 100,
            lr: 1e-2,
            batch: 256,
            seed: 0,
        }
    }
}

impl RbfMetric {
    pub fn dim(&self) -> usize {
        self.centroids[0].len()
    }

    /// Kernel activations `exp(-lambda_k/2 |x - c_k|^2)`.
    fn features(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.centroids
                .iter()
                .zip(&self.bandwidths)
                .map(|(c, l)| (-0.5 * l * sq_dist(x, c)).exp()),
        );
    }

    pub fn h(&self, x: &[f64]) -> f64 {
        self.centroids
            .iter()
            .zip(&self.bandwidths)
            .zip(&self.weights)
            .map(|((c, l), w)| w * (-0.5 * l * sq_dist(x, c)).exp())
            .sum()
    }

    /// `h(x)` and its gradient.
    pub fn h_and_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let mut h = 0.0;
        let mut g = vec![0.0; x.len()];
        for ((c, l), w) in self.centroids.iter().zip(&self.bandwidths).zip(&self.weights) {
            let term = w * (-0.5 * l * sq_dist(x, c)).exp();
            h += term;
            for i in 0..x.len() {
                g[i] -= term * l * (x[i] - c[i]);
            }
        }
        (h, g)
    }

    /// Diagonal entry of `G(x)`.
    pub fn metric_scale(&self, x: &[f64]) -> f64 {
        1.0 / (self.h(x) + self.epsilon)
    }

    /// `v^T (G(x) - I) v`.
    pub fn potential(&self, x: &[f64], v: &[f64]) -> f64 {
        let vv: f64 = v.iter().map(|a| a * a).sum();
        vv * (self.metric_scale(x) - 1.0)
    }

    /// `|v|_G^2 = v^T G(x) v`.
    pub fn metric_norm_sq(&self, x: &[f64], v: &[f64]) -> f64 {
        let vv: f64 = v.iter().map(|a| a * a).sum();
        vv * self.metric_scale(x)
    }

    /// Potential with its gradients with respect to `x` and `v`.
    pub fn potential_with_grads(&self, x: &[f64], v: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let (h, gh) = self.h_and_grad(x);
        let inv = 1.0 / (h + self.epsilon);
        let vv: f64 = v.iter().map(|a| a * a).sum();
        let value = vv * (inv - 1.0);
        let dx = gh.iter().map(|g| -vv * inv * inv * g).collect();
        let dv = v.iter().map(|a| 2.0 * a * (inv - 1.0)).collect();
        (value, dx, dv)
    }

    /// `sum_x (1 - h(x))^2`.
    pub fn data_loss(&self, points: &[Vec<f64>]) -> f64 {
        points.iter().map(|p| (1.0 - self.h(p)).powi(2)).sum()
    }

    /// Cluster, set bandwidths, and fit the weights on `points`.
    pub fn fit(points: &[Vec<f64>], cfg: &RbfFitConfig) -> Result<Self> {
        let km = kmeans(points, cfg.n_clusters, cfg.seed)?;
        let bandwidths = fit_bandwidths(points, &km, cfg.kappa)?;
        let mut metric = RbfMetric {
            centroids: km.centroids,
            bandwidths,
            weights: vec![0.0; cfg.n_clusters],
            epsilon: cfg.epsilon,
            kappa: cfg.kappa,
        };
        fit_rbf_weights(&mut metric, points, cfg.epochs, cfg.lr, cfg.batch, cfg.seed)?;
        Ok(metric)
    }
}

/// Minimise `sum (1 - h(x))^2` over the weights with Adam on shuffled minibatches.
/// Returns the full-data loss after fitting.
pub fn fit_rbf_weights(
    metric: &mut RbfMetric,
    points: &[Vec<f64>],
    epochs: usize,
    lr: f64,
    batch: usize,
    seed: u64,
) -> Result<f64> {
    if points.is_empty() || batch == 0 {
        return Err(Error::Config("need data and a positive batch size".into()));
    }
    let k = metric.centroids.len();
    let mut adam = Adam::new(k, lr);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0001);
    let mut order: Vec<usize> = (0..points.len()).collect();
    let mut feats = Vec::with_capacity(k);
    let mut grad = vec![0.0; k];
    let mut step = 0;
    for _ in 0..epochs {
        shuffle(&mut order, &mut rng);
        for chunk in order.chunks(batch) {
            grad.fill(0.0);
            let mut loss = 0.0;
            for &i in chunk {
                metric.features(&points[i], &mut feats);
                let h: f64 = feats.iter().zip(&metric.weights).map(|(f, w)| f * w).sum();
                let r = 1.0 - h;
                loss += r * r;
                for (g, f) in grad.iter_mut().zip(&feats) {
                    *g -= 2.0 * r * f;
                }
            }
            if !loss.is_finite() {
                return Err(Error::divergence("rbf weight fit", step));
            }
            adam.step(&mut metric.weights, &grad)
                .map_err(|_| Error::divergence("rbf weight fit", step))?;
            step += 1;
        }
    }
    Ok(metric.data_loss(points))
}

pub(crate) fn shuffle<R: Rng>(v: &mut [usize], rng: &mut R) {
    for i in (1..v.len()).rev() {
        let j = rng.random_range(0..=i);
        v.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn blobs(n: usize, seed: u64) -> (Vec<Vec<f64>>, [Vec<f64>; 2]) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = [[0.0, 0.0], [1.0, 0.0]];
        let mut pts = Vec::new();
        let mut sums = [vec![0.0; 2], vec![0.0; 2]];
        for i in 0..2 * n {
            let c = centers[i % 2];
            let p: Vec<f64> = (0..2)
                .map(|k| c[k] + 0.1 * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect();
            sums[i % 2][0] += p[0] / n as f64;
            sums[i % 2][1] += p[1] / n as f64;
            pts.push(p);
        }
        (pts, sums)
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let (pts, _) = blobs(50, 1);
        let km = kmeans(&pts, 1, 0).unwrap();
        for k in 0..2 {
            let mean = pts.iter().map(|p| p[k]).sum::<f64>() / pts.len() as f64;
            assert!((km.centroids[0][k] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn two_blobs_recover_sample_means() {
        let (pts, means) = blobs(200, 2);
        let km = kmeans(&pts, 2, 3).unwrap();
        for m in &means {
            let d = km.centroids.iter().map(|c| sq_dist(c, m).sqrt()).fold(f64::INFINITY, f64::min);
            assert!(d < 0.1, "{d}");
        }
    }

    #[test]
    fn k_equals_n_has_zero_inertia() {
        let (pts, _) = blobs(10, 4);
        let km = kmeans(&pts, pts.len(), 5).unwrap();
        assert_eq!(km.inertia, 0.0);
        assert!(kmeans(&pts, pts.len() + 1, 5).is_err());
    }

    #[test]
    fn bandwidth_formula() {
        let pts = vec![vec![-1.0, 0.0], vec![1.0, 0.0]];
        let km = KMeans {
            centroids: vec![vec![0.0, 0.0]],
            assignments: vec![0, 0],
            inertia: 2.0,
            iterations: 1,
        };
        let l = fit_bandwidths(&pts, &km, 1.5).unwrap();
        assert!((l[0] - 2.0 / 9.0).abs() < 1e-15);
        let l2 = fit_bandwidths(&pts, &km, 3.0).unwrap();
        assert!((l[0] / l2[0] - 4.0).abs() < 1e-12);

        let degenerate = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        assert_eq!(fit_bandwidths(&degenerate, &km, 1.5).unwrap(), vec![LAMBDA_MAX]);
    }

    #[test]
    fn weight_fit_on_a_single_point_cluster() {
        let pts = vec![vec![0.5, 0.5]; 20];
        let mut m = RbfMetric {
            centroids: vec![vec![0.5, 0.5]],
            bandwidths: vec![LAMBDA_MAX],
            weights: vec![0.0],
            epsilon: DEFAULT_EPSILON,
            kappa: DEFAULT_KAPPA,
        };
        assert_eq!(m.data_loss(&pts), 20.0);
        let loss = fit_rbf_weights(&mut m, &pts, 1000, 1e-2, 20, 0).unwrap();
        assert!((m.weights[0] - 1.0).abs() < 1e-3, "{}", m.weights[0]);
        assert!(loss < 1e-4);
    }

    #[test]
    fn potential_closed_forms() {
        let m = RbfMetric {
            centroids: vec![vec![0.0, 0.0]],
            bandwidths: vec![2.0],
            weights: vec![1.0],
            epsilon: 1e-3,
            kappa: 1.5,
        };
        let v = [0.3, -0.4];
        let vv = 0.25;
        let at_centroid = m.potential(&[0.0, 0.0], &v);
        assert!((at_centroid - (1.0 / 1.001 - 1.0) * vv).abs() < 1e-15);
        let far = m.potential(&[100.0, 0.0], &v);
        assert!((far - (1.0 / 1e-3 - 1.0) * vv).abs() < 1e-9);
        assert_eq!(m.potential(&[0.3, 0.1], &[0.0, 0.0]), 0.0);
    }

    #[test]
    fn potential_gradients_match_fd() {
        let m = RbfMetric {
            centroids: vec![vec![0.0, 0.0], vec![0.4, 0.2]],
            bandwidths: vec![5.0, 3.0],
            weights: vec![0.7, 0.4],
            epsilon: 1e-3,
            kappa: 1.5,
        };
        let x = [0.2, -0.1];
        let v = [0.5, 0.9];
        let (_, dx, dv) = m.potential_with_grads(&x, &v);
        let h = 1e-6;
        for i in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += h;
            xm[i] -= h;
            let fd = (m.potential(&xp, &v) - m.potential(&xm, &v)) / (2.0 * h);
            assert!((fd - dx[i]).abs() / fd.abs().max(1.0) < 1e-6);
            let mut vp = v;
            let mut vm = v;
            vp[i] += h;
            vm[i] -= h;
            let fd = (m.potential(&x, &vp) - m.potential(&x, &vm)) / (2.0 * h);
            assert!((fd - dv[i]).abs() / fd.abs().max(1.0) < 1e-6);
        }
    }
}
