//! Straight-line paths and the image-dependent pair potential (IDPP)
//! interpolation of pairwise distance matrices.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coupling::Pairs;
use crate::error::{check_dim, Error, Result};
use crate::gfm::{SplineModel, TransitionPath};
use crate::neural::Adam;

/// Uniform-grid straight line with `n_points` samples.
pub fn linear_path(x0: &[f64], xt: &[f64], n_points: usize) -> Result<TransitionPath> {
    check_dim(x0.len(), xt.len())?;
    if n_points < 2 {
        return Err(Error::Config("a path needs at least two points".into()));
    }
    let times: Vec<f64> = (0..n_points).map(|k| k as f64 / (n_points - 1) as f64).collect();
    let states = Array2::from_shape_fn((n_points, x0.len()), |(k, j)| {
        let t = times[k];
        (1.0 - t) * x0[j] + t * xt[j]
    });
    TransitionPath::new(times, states)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairwiseDistanceConfig {
    pub n_particles: usize,
    pub spatial_dim: usize,
}

impl PairwiseDistanceConfig {
    pub fn state_dim(&self) -> usize {
        self.n_particles * self.spatial_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_particles < 2 || self.spatial_dim == 0 {
            return Err(Error::Config("need at least two particles in a positive dimension".into()));
        }
        Ok(())
    }
}

/// `N x N` matrix of particle separations.
pub fn pairwise_distances(x: &[f64], cfg: &PairwiseDistanceConfig) -> Result<Array2<f64>> {
    check_dim(cfg.state_dim(), x.len())?;
    let (n, s) = (cfg.n_particles, cfg.spatial_dim);
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let r = (0..s).map(|k| (x[i * s + k] - x[j * s + k]).powi(2)).sum::<f64>().sqrt();
            d[[i, j]] = r;
            d[[j, i]] = r;
        }
    }
    Ok(d)
}

/// `sum_ij (d_ij(x) - r_ij)^2` and its gradient with respect to `x`.
fn distance_residual(x: &[f64], target: &Array2<f64>, cfg: &PairwiseDistanceConfig) -> (f64, Vec<f64>) {
    let (n, s) = (cfg.n_particles, cfg.spatial_dim);
    let mut loss = 0.0;
    let mut g = vec![0.0; x.len()];
    for i in 0..n {
        for j in i + 1..n {
            let diff: Vec<f64> = (0..s).map(|k| x[i * s + k] - x[j * s + k]).collect();
            let d = diff.iter().map(|a| a * a).sum::<f64>().sqrt();
            let r = d - target[[i, j]];
            // both (i, j) and (j, i) entries
            loss += 2.0 * r * r;
            if d > 0.0 {
                for k in 0..s {
                    let gk = 4.0 * r * diff[k] / d;
                    g[i * s + k] += gk;
                    g[j * s + k] -= gk;
                }
            }
        }
    }
    (loss, g)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdppConfig {
    pub system: PairwiseDistanceConfig,
    pub epochs: usize,
    pub lr: f64,
    pub hidden: usize,
    pub depth: usize,
    /// Interior time points per pair in every epoch.
    pub n_times: usize,
    pub seed: u64,
}

impl Default for IdppConfig {
    fn default() -> Self {
        Self {
            system: PairwiseDistanceConfig {
                n_particles: 4,
                spatial_dim: 3,
            },
            epochs: 500,
            lr: 0.01,
            hidden: 64,
            depth: 2,
            n_times: 9,
            seed: 0,
        }
    }
}

/// Fitted spline and its loss history (one entry per epoch, measured before the update).
pub struct IdppFit {
    pub spline: SplineModel,
    pub losses: Vec<f64>,
    pub final_loss: f64,
}

fn idpp_grid(n_times: usize) -> Vec<f64> {
    (1..=n_times).map(|k| k as f64 / (n_times + 1) as f64).collect()
}

/// Mean IDPP loss of `spline` over every pair at the fixed interior grid.
pub fn idpp_loss(spline: &SplineModel, pairs: &Pairs, cfg: &IdppConfig) -> Result<(f64, Vec<f64>)> {
    let grid = idpp_grid(cfg.n_times);
    let rows: Vec<usize> = (0..pairs.len()).flat_map(|i| std::iter::repeat_n(i, grid.len())).collect();
    let batch = pairs.select(&rows);
    let t: Vec<f64> = (0..rows.len()).map(|k| grid[k % grid.len()]).collect();
    let e = spline.eval(&batch, &t)?;
    let m = rows.len() as f64;
    let mut gx = Array2::zeros(e.x.raw_dim());
    let mut loss = 0.0;
    for k in 0..rows.len() {
        let d0 = pairwise_distances(batch.x0.row(k).as_slice().unwrap(), &cfg.system)?;
        let d1 = pairwise_distances(batch.xt.row(k).as_slice().unwrap(), &cfg.system)?;
        let target = &d0 * (1.0 - t[k]) + &d1 * t[k];
        let (l, g) = distance_residual(e.x.row(k).as_slice().unwrap(), &target, &cfg.system);
        loss += l / m;
        gx.row_mut(k).assign(&(Array1::from(g) / m));
    }
    let gv = Array2::zeros(e.v.raw_dim());
    Ok((loss, spline.backprop(&e, &gx, &gv)?))
}

/// Train one spline, amortised over all `pairs`, on the IDPP objective with
/// full-batch Adam steps.
pub fn fit_idpp(pairs: &Pairs, cfg: &IdppConfig) -> Result<IdppFit> {
    cfg.system.validate()?;
    check_dim(cfg.system.state_dim(), pairs.dim())?;
    if pairs.is_empty() || cfg.n_times == 0 {
        return Err(Error::Config("IDPP needs pairs and time points".into()));
    }
    let mut spline = SplineModel::new(pairs.dim(), cfg.hidden, cfg.depth, cfg.seed)?;
    let mut adam = Adam::new(spline.net.n_params(), cfg.lr);
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let (loss, grad) = idpp_loss(&spline, pairs, cfg)?;
        if !loss.is_finite() {
            return Err(Error::divergence("idpp", epoch));
        }
        losses.push(loss);
        adam.step(spline.net.params_mut(), &grad)
            .map_err(|_| Error::divergence("idpp", epoch))?;
    }
    let final_loss = idpp_loss(&spline, pairs, cfg)?.0;
    Ok(IdppFit {
        spline,
        losses,
        final_loss,
    })
}

/// IDPP path for a single pair.
pub fn idpp_path(x0: &[f64], xt: &[f64], cfg: &IdppConfig, n_points: usize) -> Result<TransitionPath> {
    let pairs = Pairs {
        x0: Array1::from(x0.to_vec()).insert_axis(Axis(0)),
        xt: Array1::from(xt.to_vec()).insert_axis(Axis(0)),
    };
    fit_idpp(&pairs, cfg)?.spline.path(x0, xt, n_points)
}

/// A small synthetic system: `n` copies of a four-particle cluster and the
/// same cluster rotated about the z axis by 120 to 170 degrees and shifted,
/// with small positional noise. Straight Cartesian interpolation shrinks
/// these clusters at the midpoint; distance interpolation does not.
pub fn rotating_cluster_pairs(n: usize, seed: u64) -> Pairs {
    let base = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.2, 0.0], [0.3, 0.4, 0.9]];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x0 = Array2::zeros((n, 12));
    let mut xt = Array2::zeros((n, 12));
    for i in 0..n {
        let angle = rng.random_range(120.0f64..170.0).to_radians();
        let (c, s) = (angle.cos(), angle.sin());
        let shift = [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), 0.0];
        for (p, q) in base.iter().enumerate() {
            let q: Vec<f64> = q.iter().map(|a| a + rng.random_range(-0.05..0.05)).collect();
            let r = [c * q[0] - s * q[1] + shift[0], s * q[0] + c * q[1] + shift[1], q[2] + shift[2]];
            for k in 0..3 {
                x0[[i, 3 * p + k]] = q[k];
                xt[[i, 3 * p + k]] = r[k];
            }
        }
    }
    Pairs { x0, xt }
}
