//! The full training loop: velocity pre-training on straight-line targets,
//! alternating spline / flow updates, and replay-buffer refinement.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coupling::{sample_pairs_ot, sample_pairs_product, sample_pairs_reflow, CouplingKind, Pairs};
use crate::dynamics::EndpointDataset;
use crate::error::{Error, Result};
use crate::neural::Adam;
use crate::potential::SurrogatePotential;
use crate::surface::{CountingSurface, Surface};

use super::path::{normalize_weights, path_cost, ReplayBuffer, TransitionPath};
use super::spline::{replay_loss, spline_loss, SplineModel};
use super::velocity::{flow_loss, integrate_paths, linear_flow_loss, Integrator, VelocityModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    /// Updates per epoch; `None` means one pass over both pools together.
    pub steps_per_epoch: Option<usize>,
    pub lr_spline: f64,
    pub lr_flow: f64,
    pub hidden: usize,
    pub depth: usize,
    pub coupling: CouplingKind,
    /// Epochs between regenerating reflow pairs.
    pub reflow_refresh: usize,
    pub pretrain: bool,
    pub resample_rounds: usize,
    pub n_paths: usize,
    pub buffer_capacity: usize,
    pub ode_steps: usize,
    pub integrator: Integrator,
    pub replay_batch: usize,
    pub replay_window: usize,
    pub replay_tol: f64,
    pub replay_max_steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch: 256,
            steps_per_epoch: None,
            lr_spline: 1e-5,
            lr_flow: 1e-3,
            hidden: 128,
            depth: 3,
            coupling: CouplingKind::MinibatchOt,
            reflow_refresh: 10,
            pretrain: true,
            resample_rounds: 1,
            n_paths: 100,
            buffer_capacity: 1000,
            ode_steps: 100,
            integrator: Integrator::Rk4,
            replay_batch: 256,
            replay_window: 10,
            replay_tol: 1e-3,
            replay_max_steps: 500,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch", self.batch),
            ("hidden", self.hidden),
            ("n_paths", self.n_paths),
            ("buffer_capacity", self.buffer_capacity),
            ("ode_steps", self.ode_steps),
            ("replay_batch", self.replay_batch),
            ("replay_window", self.replay_window),
            ("reflow_refresh", self.reflow_refresh),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.lr_spline > 0.0 && self.lr_flow > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.steps_per_epoch == Some(0) {
            return Err(Error::Config("steps_per_epoch must be positive".into()));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n_points: usize) -> usize {
        self.steps_per_epoch.unwrap_or(n_points.div_ceil(self.batch))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain,
    Train,
    Replay,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub phase: Phase,
    pub step: usize,
    pub epoch: Option<usize>,
    pub round: Option<usize>,
    pub loss_spline: Option<f64>,
    pub loss_flow: Option<f64>,
    pub loss_replay: Option<f64>,
    /// True-energy evaluations made by the trainer so far.
    pub u_evaluations: u64,
}

/// Summary of one resampling round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub u_evaluations: u64,
    pub cost_min: f64,
    pub cost_max: f64,
    pub inner_steps: usize,
    pub replay_loss_first: f64,
    pub replay_loss_last: f64,
}

pub struct Trainer<'a> {
    pub cfg: TrainConfig,
    pub spline: SplineModel,
    pub velocity: VelocityModel,
    pub buffer: ReplayBuffer,
    pub log: Vec<LogRecord>,
    pub rounds: Vec<RoundSummary>,
    /// Mean spline loss per epoch.
    pub epoch_losses: Vec<f64>,
    data: &'a EndpointDataset,
    potential: &'a SurrogatePotential,
    surface: CountingSurface,
    adam_spline: Adam,
    adam_flow: Adam,
    rng: ChaCha8Rng,
    step: usize,
}

impl<'a> Trainer<'a> {
    /// `surface` is the true potential; it is only touched when weighting
    /// resampled paths.
    pub fn new(
        cfg: TrainConfig,
        data: &'a EndpointDataset,
        potential: &'a SurrogatePotential,
        surface: Arc<dyn Surface>,
    ) -> Result<Self> {
        cfg.validate()?;
        data.validate()?;
        let d = data.dim();
        let spline = SplineModel::new(d, cfg.hidden, cfg.depth, cfg.seed)?;
        let velocity = VelocityModel::new(d, cfg.hidden, cfg.depth, cfg.seed.wrapping_add(1))?;
        Ok(Self {
            adam_spline: Adam::new(spline.net.n_params(), cfg.lr_spline),
            adam_flow: Adam::new(velocity.net.n_params(), cfg.lr_flow),
            buffer: ReplayBuffer::new(cfg.buffer_capacity)?,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2)),
            spline,
            velocity,
            log: Vec::new(),
            rounds: Vec::new(),
            epoch_losses: Vec::new(),
            data,
            potential,
            surface: CountingSurface::new(surface),
            cfg,
            step: 0,
        })
    }

    /// True-energy evaluations made by this trainer.
    pub fn u_evaluations(&self) -> u64 {
        self.surface.evaluations()
    }

    fn times(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.rng.random::<f64>()).collect()
    }

    fn initial_pairs(&mut self) -> Result<Pairs> {
        match self.cfg.coupling {
            CouplingKind::Product | CouplingKind::Reflow => {
                sample_pairs_product(self.data, self.cfg.batch, &mut self.rng)
            }
            CouplingKind::MinibatchOt => sample_pairs_ot(self.data, self.cfg.batch, &mut self.rng),
        }
    }

    fn record(&mut self, phase: Phase, epoch: Option<usize>, round: Option<usize>, losses: [Option<f64>; 3]) {
        self.log.push(LogRecord {
            phase,
            step: self.step,
            epoch,
            round,
            loss_spline: losses[0],
            loss_flow: losses[1],
            loss_replay: losses[2],
            u_evaluations: self.u_evaluations(),
        });
        self.step += 1;
    }

    fn update_flow(&mut self, pairs: &Pairs, t: &[f64], stage: &str) -> Result<f64> {
        let l = flow_loss(&self.velocity, &self.spline, pairs, t)?;
        self.adam_flow
            .step(self.velocity.net.params_mut(), &l.grad)
            .map_err(|_| Error::divergence(stage, self.step))?;
        Ok(l.loss)
    }

    /// Fit the velocity network to straight-line velocities on the initial coupling.
    pub fn pretrain(&mut self) -> Result<()> {
        let spe = self.cfg.steps_per_epoch(self.data.pool_a.len() + self.data.pool_b.len());
        for epoch in 0..self.cfg.epochs {
            for _ in 0..spe {
                let pairs = self.initial_pairs()?;
                let t = self.times(pairs.len());
                let l = linear_flow_loss(&self.velocity, &pairs, &t)
                    .map_err(|_| Error::divergence("velocity pre-training", self.step))?;
                self.adam_flow
                    .step(self.velocity.net.params_mut(), &l.grad)
                    .map_err(|_| Error::divergence("velocity pre-training", self.step))?;
                self.record(Phase::Pretrain, Some(epoch), None, [None, Some(l.loss), None]);
            }
        }
        Ok(())
    }

    fn reflow_pool(&mut self, n: usize) -> Result<Pairs> {
        sample_pairs_reflow(
            self.data,
            &self.velocity,
            self.cfg.ode_steps,
            self.cfg.integrator,
            n,
            &mut self.rng,
        )
    }

    /// Alternating spline / flow updates.
    pub fn fit(&mut self) -> Result<()> {
        let spe = self.cfg.steps_per_epoch(self.data.pool_a.len() + self.data.pool_b.len());
        let mut reflow: Option<Pairs> = None;
        for epoch in 0..self.cfg.epochs {
            if self.cfg.coupling == CouplingKind::Reflow && epoch % self.cfg.reflow_refresh == 0 {
                reflow = Some(self.reflow_pool(spe * self.cfg.batch)?);
            }
            let mut total = 0.0;
            for _ in 0..spe {
                let pairs = match &reflow {
                    Some(pool) => {
                        let idx: Vec<usize> =
                            (0..self.cfg.batch).map(|_| self.rng.random_range(0..pool.len())).collect();
                        pool.select(&idx)
                    }
                    None => self.initial_pairs()?,
                };
                let t = self.times(pairs.len());
                let ls = spline_loss(&self.spline, &pairs, &t, self.potential)
                    .map_err(|_| Error::divergence("spline training", self.step))?;
                self.adam_spline
                    .step(self.spline.net.params_mut(), &ls.grad)
                    .map_err(|_| Error::divergence("spline training", self.step))?;
                let lf = self.update_flow(&pairs, &t, "flow training")?;
                total += ls.loss;
                self.record(Phase::Train, Some(epoch), None, [Some(ls.loss), Some(lf), None]);
            }
            self.epoch_losses.push(total / spe as f64);
        }
        Ok(())
    }

    /// Sample paths from the current velocity field, weight them with the
    /// true potential, add them to the buffer, and refine until the replay
    /// loss stalls.
    pub fn resample_round(&mut self, round: usize) -> Result<RoundSummary> {
        let n = self.cfg.n_paths;
        let idx: Vec<usize> = (0..n).map(|_| self.rng.random_range(0..self.data.pool_a.len())).collect();
        let x0 = Pairs {
            x0: ndarray::Array2::from_shape_fn((n, self.data.dim()), |(i, j)| self.data.pool_a[idx[i]][j]),
            xt: ndarray::Array2::zeros((0, 0)),
        }
        .x0;
        let mut paths = integrate_paths(&self.velocity, &x0, self.cfg.ode_steps, self.cfg.integrator)?;
        let costs = paths
            .iter()
            .map(|p| path_cost(p, &self.velocity, &self.surface))
            .collect::<Result<Vec<f64>>>()?;
        let weights = normalize_weights(&costs)?;
        for ((p, c), w) in paths.iter_mut().zip(&costs).zip(&weights) {
            p.cost = Some(*c);
            p.weight = Some(*w);
        }
        for p in paths {
            self.buffer.push(p)?;
        }

        let window = self.cfg.replay_window;
        let mut hist: Vec<f64> = Vec::new();
        for _ in 0..self.cfg.replay_max_steps {
            let picks = self.buffer.sample_indices(self.cfg.replay_batch, &mut self.rng)?;
            let t = self.times(picks.len());
            // fresh pairs from the current flow, independent of the replayed paths
            let pairs = self.reflow_pool(picks.len())?;
            let chosen: Vec<&TransitionPath> = picks.iter().map(|&i| &self.buffer.entries()[i]).collect();
            let lr = replay_loss(&self.spline, &pairs, &chosen, &t).map_err(|_| Error::divergence("replay", self.step))?;
            self.adam_spline
                .step(self.spline.net.params_mut(), &lr.grad)
                .map_err(|_| Error::divergence("replay", self.step))?;
            let lf = self.update_flow(&pairs, &t, "replay flow")?;
            hist.push(lr.loss);
            self.record(Phase::Replay, None, Some(round), [None, Some(lf), Some(lr.loss)]);
            if replay_converged(&hist, window, self.cfg.replay_tol) {
                break;
            }
        }
        let summary = RoundSummary {
            round,
            u_evaluations: self.u_evaluations(),
            cost_min: costs.iter().copied().fold(f64::INFINITY, f64::min),
            cost_max: costs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            inner_steps: hist.len(),
            replay_loss_first: hist.first().copied().unwrap_or(f64::NAN),
            replay_loss_last: hist.last().copied().unwrap_or(f64::NAN),
        };
        self.rounds.push(summary.clone());
        Ok(summary)
    }

    /// Pre-training, the main loop, and the configured resampling rounds.
    /// With zero epochs nothing is trained.
    pub fn run(&mut self) -> Result<()> {
        if self.cfg.epochs == 0 {
            return Ok(());
        }
        if self.cfg.pretrain {
            self.pretrain()?;
        }
        self.fit()?;
        for r in 0..self.cfg.resample_rounds {
            self.resample_round(r)?;
        }
        Ok(())
    }

    /// JSON Lines rendering of the log.
    pub fn log_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for r in &self.log {
            s.push_str(&serde_json::to_string(r)?);
            s.push('\n');
        }
        Ok(s)
    }
}

/// Relative improvement over the last `window` steps below `tol`.
pub fn replay_converged(hist: &[f64], window: usize, tol: f64) -> bool {
    if hist.len() <= window {
        return false;
    }
    let old = hist[hist.len() - 1 - window];
    let new = hist[hist.len() - 1];
    (old - new) / old.abs().max(f64::MIN_POSITIVE) < tol
}

/// Convenience wrapper: build a trainer, run it, and hand back the models.
pub fn train(
    cfg: TrainConfig,
    data: &EndpointDataset,
    potential: &SurrogatePotential,
    surface: Arc<dyn Surface>,
) -> Result<TrainOutcome> {
    let mut tr = Trainer::new(cfg, data, potential, surface)?;
    tr.run()?;
    Ok(TrainOutcome {
        u_evaluations: tr.u_evaluations(),
        spline: tr.spline,
        velocity: tr.velocity,
        buffer: tr.buffer,
        log: tr.log,
        rounds: tr.rounds,
        epoch_losses: tr.epoch_losses,
    })
}

pub struct TrainOutcome {
    pub spline: SplineModel,
    pub velocity: VelocityModel,
    pub buffer: ReplayBuffer,
    pub log: Vec<LogRecord>,
    pub rounds: Vec<RoundSummary>,
    pub epoch_losses: Vec<f64>,
    pub u_evaluations: u64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::DatasetMeta;
    use crate::surface::Quadratic;

    fn toy() -> EndpointDataset {
        let a = (0..40).map(|i| vec![-1.0 + 0.01 * (i % 7) as f64, 0.02 * (i % 5) as f64]).collect();
        let b = (0..40).map(|i| vec![1.0 - 0.01 * (i % 3) as f64, 0.5 + 0.02 * (i % 4) as f64]).collect();
        EndpointDataset::new(a, b, DatasetMeta::default()).unwrap()
    }

    fn small() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch: 16,
            hidden: 8,
            depth: 2,
            n_paths: 5,
            ode_steps: 10,
            replay_batch: 8,
            replay_max_steps: 20,
            lr_spline: 1e-3,
            ..Default::default()
        }
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let data = toy();
        let cfg = TrainConfig { epochs: 0, ..small() };
        let fresh = Trainer::new(cfg.clone(), &data, &SurrogatePotential::Zero, Arc::new(Quadratic { dim: 2 })).unwrap();
        let out = train(cfg, &data, &SurrogatePotential::Zero, Arc::new(Quadratic { dim: 2 })).unwrap();
        assert_eq!(out.spline, fresh.spline);
        assert_eq!(out.velocity, fresh.velocity);
        assert!(out.log.is_empty());
        assert_eq!(out.u_evaluations, 0);
    }

    #[test]
    fn evaluations_only_in_resampling() {
        let data = toy();
        let pot = SurrogatePotential::Zero;
        let mut tr = Trainer::new(small(), &data, &pot, Arc::new(Quadratic { dim: 2 })).unwrap();
        tr.pretrain().unwrap();
        tr.fit().unwrap();
        assert_eq!(tr.u_evaluations(), 0);
        assert!(tr.log.iter().all(|r| r.u_evaluations == 0));
        tr.resample_round(0).unwrap();
        assert_eq!(tr.u_evaluations(), 5 * 11);
        tr.resample_round(1).unwrap();
        assert_eq!(tr.u_evaluations(), 2 * 5 * 11);
        let w = tr.buffer.weights();
        assert!(w.windows(2).all(|p| p[0] >= p[1]));
    }

    #[test]
    fn reflow_and_product_couplings_run() {
        let data = toy();
        for coupling in [CouplingKind::Product, CouplingKind::Reflow] {
            let cfg = TrainConfig {
                coupling,
                resample_rounds: 0,
                ..small()
            };
            let out = train(cfg, &data, &SurrogatePotential::Zero, Arc::new(Quadratic { dim: 2 })).unwrap();
            assert_eq!(out.epoch_losses.len(), 3);
        }
    }

    #[test]
    fn convergence_rule() {
        assert!(!replay_converged(&[1.0; 10], 10, 1e-3));
        assert!(replay_converged(&[1.0; 11], 10, 1e-3));
        let falling: Vec<f64> = (0..11).map(|k| 1.0 - 0.01 * k as f64).collect();
        assert!(!replay_converged(&falling, 10, 1e-3));
    }
}
