//! Surrogate potentials learned from endpoint samples. Training only ever sees
//! these; the true surface is reserved for path weighting and evaluation.

mod latent;
mod metric;

pub use latent::{interpolate, train_autoencoder, AutoencoderConfig, Interpolation, LatentInterpolant};
pub use metric::{
    fit_bandwidths, fit_rbf_weights, kmeans, KMeans, RbfFitConfig, RbfMetric, DEFAULT_EPSILON, DEFAULT_KAPPA,
    LAMBDA_MAX,
};

use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{check_dim, Error, Result};

/// Values and gradients of a surrogate potential over a batch.
#[derive(Debug, Clone)]
pub struct PotentialBatch {
    pub values: Array1<f64>,
    pub grad_x: Array2<f64>,
    pub grad_v: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SurrogatePotential {
    Metric(RbfMetric),
    Latent(LatentInterpolant),
    /// No potential: the spline loss reduces to kinetic energy.
    Zero,
}

impl SurrogatePotential {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Metric(_) => "metric",
            Self::Latent(_) => "latent",
            Self::Zero => "none",
        }
    }

    /// Evaluate `V` at every row. The metric potential depends on `(x, v)`;
    /// the latent potential on `(x0, xT, t, x)`.
    pub fn evaluate_batch(
        &self,
        x0: &Array2<f64>,
        xt: &Array2<f64>,
        t: &[f64],
        x: &Array2<f64>,
        v: &Array2<f64>,
    ) -> Result<PotentialBatch> {
        let n = x.nrows();
        check_dim(n, v.nrows())?;
        check_dim(n, t.len())?;
        let mut out = PotentialBatch {
            values: Array1::zeros(n),
            grad_x: Array2::zeros(x.raw_dim()),
            grad_v: Array2::zeros(v.raw_dim()),
        };
        match self {
            Self::Zero => {}
            Self::Metric(m) => {
                check_dim(m.dim(), x.ncols())?;
                for i in 0..n {
                    let (val, dx, dv) =
                        m.potential_with_grads(x.row(i).as_slice().unwrap(), v.row(i).as_slice().unwrap());
                    out.values[i] = val;
                    out.grad_x.row_mut(i).assign(&Array1::from(dx));
                    out.grad_v.row_mut(i).assign(&Array1::from(dv));
                }
            }
            Self::Latent(l) => {
                let r = l.reference_batch(x0, xt, t)?;
                let d = x - &r;
                out.values = d.mapv(|a| a * a).sum_axis(ndarray::Axis(1));
                out.grad_x = d * 2.0;
            }
        }
        Ok(out)
    }

    pub fn save_metric(metric: &RbfMetric, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(metric)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load_metric(path: &Path) -> Result<RbfMetric> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: RbfMetric = serde_json::from_str(&text).map_err(|e| Error::schema(path, e.to_string()))?;
        if m.centroids.is_empty()
            || m.centroids.len() != m.bandwidths.len()
            || m.centroids.len() != m.weights.len()
            || m.bandwidths.iter().any(|&l| l <= 0.0)
            || m.epsilon <= 0.0
        {
            return Err(Error::schema(path, "inconsistent metric"));
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn metric_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("metric.json");
        let m = RbfMetric {
            centroids: vec![vec![0.1, 0.2], vec![-0.3, 0.4]],
            bandwidths: vec![2.0 / 9.0, 3.5],
            weights: vec![0.8, 0.123456789012345],
            epsilon: 1e-3,
            kappa: 1.5,
        };
        SurrogatePotential::save_metric(&m, &p).unwrap();
        assert_eq!(SurrogatePotential::load_metric(&p).unwrap(), m);
        std::fs::write(&p, r#"{"centroids":[[0,0]],"bandwidths":[],"weights":[1],"epsilon":0.001,"kappa":1.5}"#)
            .unwrap();
        assert!(SurrogatePotential::load_metric(&p).is_err());
    }

    #[test]
    fn batch_matches_pointwise() {
        let m = RbfMetric {
            centroids: vec![vec![0.0, 0.0]],
            bandwidths: vec![1.0],
            weights: vec![0.9],
            epsilon: 1e-3,
            kappa: 1.5,
        };
        let x = array![[0.1, 0.2], [1.0, -1.0]];
        let v = array![[0.5, 0.0], [1.0, 2.0]];
        let pot = SurrogatePotential::Metric(m.clone());
        let b = pot.evaluate_batch(&x, &x, &[0.0, 0.0], &x, &v).unwrap();
        for i in 0..2 {
            let want = m.potential(x.row(i).as_slice().unwrap(), v.row(i).as_slice().unwrap());
            assert_eq!(b.values[i], want);
        }
        let z = SurrogatePotential::Zero.evaluate_batch(&x, &x, &[0.0, 0.0], &x, &v).unwrap();
        assert_eq!(z.values.sum(), 0.0);
    }
}
