//! Autoencoder whose latent space defines a reference interpolation between
//! endpoints; the potential penalises distance from the decoded interpolant.

use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metric::shuffle;
use crate::error::{check_dim, Error, Result};
use crate::neural::{load_checkpoint, save_checkpoint, Adam, Mlp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    #[default]
    Linear,
    Spherical,
}

impl std::str::FromStr for Interpolation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "spherical" | "slerp" => Ok(Self::Spherical),
            other => Err(Error::Config(format!("unknown interpolation `{other}`"))),
        }
    }
}

/// Interpolate between latent codes. Spherical interpolation falls back to
/// linear when the codes are (anti)parallel or one of them is zero.
pub fn interpolate(z0: &[f64], zt: &[f64], t: f64, mode: Interpolation) -> Vec<f64> {
    let lerp = || z0.iter().zip(zt).map(|(a, b)| (1.0 - t) * a + t * b).collect();
    match mode {
        Interpolation::Linear => lerp(),
        Interpolation::Spherical => {
            let n0 = z0.iter().map(|a| a * a).sum::<f64>().sqrt();
            let n1 = zt.iter().map(|a| a * a).sum::<f64>().sqrt();
            if n0 == 0.0 || n1 == 0.0 {
                return lerp();
            }
            let cos = (z0.iter().zip(zt).map(|(a, b)| a * b).sum::<f64>() / (n0 * n1)).clamp(-1.0, 1.0);
            let omega = cos.acos();
            let s = omega.sin();
            if s < 1e-9 {
                return lerp();
            }
            let (c0, c1) = (((1.0 - t) * omega).sin() / s, (t * omega).sin() / s);
            z0.iter().zip(zt).map(|(a, b)| c0 * a + c1 * b).collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentInterpolant {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub interpolation: Interpolation,
    /// Mean squared reconstruction error at the end of training.
    pub final_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutoencoderConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    pub depth: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
    pub interpolation: Interpolation,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            latent_dim: 2,
            hidden: 64,
            depth: 2,
            epochs: 100,
            lr: 1e-3,
            batch: 256,
            seed: 0,
            interpolation: Interpolation::Linear,
        }
    }
}

impl AutoencoderConfig {
    fn layer_dims(&self, input: usize) -> (Vec<usize>, Vec<usize>) {
        let mut enc = vec![input];
        enc.extend(std::iter::repeat_n(self.hidden, self.depth));
        enc.push(self.latent_dim);
        let dec: Vec<usize> = enc.iter().rev().copied().collect();
        (enc, dec)
    }
}

impl LatentInterpolant {
    pub fn new(encoder: Mlp, decoder: Mlp, interpolation: Interpolation) -> Result<Self> {
        check_dim(encoder.output_dim(), decoder.input_dim())?;
        check_dim(encoder.input_dim(), decoder.output_dim())?;
        Ok(Self {
            encoder,
            decoder,
            interpolation,
            final_loss: f64::NAN,
        })
    }

    pub fn untrained(input_dim: usize, cfg: &AutoencoderConfig) -> Result<Self> {
        let (enc, dec) = cfg.layer_dims(input_dim);
        Self::new(
            Mlp::new(&enc, cfg.seed)?,
            Mlp::new(&dec, cfg.seed.wrapping_add(1))?,
            cfg.interpolation,
        )
    }

    pub fn dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn reconstruct(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.decoder.forward(&self.encoder.forward(x)?)
    }

    /// Mean of `|x - D(E(x))|^2` over the points.
    pub fn reconstruction_loss(&self, points: &[Vec<f64>]) -> Result<f64> {
        let x = to_array(points, self.dim())?;
        let r = self.decoder.forward_batch(self.encoder.forward_batch(x.view())?.view())?;
        Ok((&r - &x).mapv(|a| a * a).sum() / points.len() as f64)
    }

    /// Decoded interpolant between the endpoint codes at time `t`.
    pub fn reference(&self, x0: &[f64], xt: &[f64], t: f64) -> Result<Vec<f64>> {
        let z0 = self.encoder.forward(x0)?;
        let z1 = self.encoder.forward(xt)?;
        self.decoder.forward(&interpolate(&z0, &z1, t, self.interpolation))
    }

    /// `|x_t - D(I(E(x0), E(xT), t))|^2`.
    pub fn potential(&self, x0: &[f64], xt: &[f64], t: f64, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        let r = self.reference(x0, xt, t)?;
        Ok(x.iter().zip(&r).map(|(a, b)| (a - b) * (a - b)).sum())
    }

    /// Reference points for a batch; row `i` uses `x0[i]`, `xt[i]`, `t[i]`.
    pub fn reference_batch(&self, x0: &Array2<f64>, xt: &Array2<f64>, t: &[f64]) -> Result<Array2<f64>> {
        check_dim(x0.nrows(), t.len())?;
        let z0 = self.encoder.forward_batch(x0.view())?;
        let z1 = self.encoder.forward_batch(xt.view())?;
        let mut z = Array2::zeros(z0.raw_dim());
        for i in 0..t.len() {
            let zi = interpolate(
                z0.row(i).as_slice().unwrap(),
                z1.row(i).as_slice().unwrap(),
                t[i],
                self.interpolation,
            );
            z.row_mut(i).assign(&ndarray::ArrayView1::from(&zi));
        }
        self.decoder.forward_batch(z.view())
    }

    pub fn save(&self, encoder_path: &Path, decoder_path: &Path) -> Result<()> {
        save_checkpoint(&self.encoder, encoder_path)?;
        save_checkpoint(&self.decoder, decoder_path)
    }

    pub fn load(encoder_path: &Path, decoder_path: &Path, interpolation: Interpolation) -> Result<Self> {
        Self::new(load_checkpoint(encoder_path)?, load_checkpoint(decoder_path)?, interpolation)
    }
}

pub(crate) fn to_array(points: &[Vec<f64>], dim: usize) -> Result<Array2<f64>> {
    let mut a = Array2::zeros((points.len(), dim));
    for (i, p) in points.iter().enumerate() {
        check_dim(dim, p.len())?;
        a.row_mut(i).assign(&ndarray::ArrayView1::from(p.as_slice()));
    }
    Ok(a)
}

/// Fit an autoencoder to the pooled endpoint data by minimising the mean
/// squared reconstruction error with Adam.
pub fn train_autoencoder(points: &[Vec<f64>], cfg: &AutoencoderConfig) -> Result<LatentInterpolant> {
    if points.is_empty() || cfg.batch == 0 {
        return Err(Error::Config("need data and a positive batch size".into()));
    }
    let dim = points[0].len();
    let mut model = LatentInterpolant::untrained(dim, cfg)?;
    let data = to_array(points, dim)?;
    let n_enc = model.encoder.n_params();
    let mut adam = Adam::new(n_enc + model.decoder.n_params(), cfg.lr);
    let mut params: Vec<f64> = model.encoder.params().iter().chain(model.decoder.params()).copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xae_0001);
    let mut order: Vec<usize> = (0..points.len()).collect();
    let mut step = 0;
    for _ in 0..cfg.epochs {
        shuffle(&mut order, &mut rng);
        for chunk in order.chunks(cfg.batch) {
            let x = data.select(ndarray::Axis(0), chunk);
            let enc = model.encoder.forward_trace(x.view())?;
            let dec = model.decoder.forward_trace(enc.output.view())?;
            let n = chunk.len() as f64;
            let resid = &dec.output - &x;
            let loss = resid.mapv(|a| a * a).sum() / n;
            if !loss.is_finite() {
                return Err(Error::divergence("autoencoder", step));
            }
            let g_dec = model.decoder.backward(&dec, (resid * (2.0 / n)).view())?;
            let g_enc = model.encoder.backward(&enc, g_dec.input.view())?;
            let grads: Vec<f64> = g_enc.params.into_iter().chain(g_dec.params).collect();
            adam.step(&mut params, &grads).map_err(|_| Error::divergence("autoencoder", step))?;
            model.encoder.params_mut().copy_from_slice(&params[..n_enc]);
            model.decoder.params_mut().copy_from_slice(&params[n_enc..]);
            step += 1;
        }
    }
    model.final_loss = model.reconstruction_loss(points)?;
    Ok(model)
}
