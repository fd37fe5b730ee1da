//! Pipeline stages behind the `pathflow` binary. Each stage reads and writes
//! artifacts in the run directory and records itself in `manifest.json`.
//!
//! | stage           | writes                                                        |
//! |-----------------|---------------------------------------------------------------|
//! | `simulate`      | `dataset.jsonl`                                               |
//! | `fit-potential` | `metric.json` or `encoder.json` + `decoder.json`              |
//! | `train`         | `spline.json`, `velocity.json`, `train_log.jsonl`, `buffer.json` |
//! | `sample`        | `paths.csv`, `weights.csv` (with `top_k`)                     |
//! | `evaluate`      | `report.csv`, `summary.json`, `paths.svg`                     |
//! | `baseline`      | `baseline-<kind>/…`                                           |

mod config;

pub use config::{BaselineConfig, BaselineKind, PotentialConfig, PotentialKind, RunConfig, SampleConfig, SimulateConfig};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{fit_idpp, linear_path, pairwise_distances, rotating_cluster_pairs};
use crate::coupling::{sample_pairs_ot, sample_pairs_product, CouplingKind};
use crate::dynamics::{EndpointDataset, LangevinConfig};
use crate::error::{Error, Result};
use crate::evaluate::{report, write_report, PathSetReport};
use crate::gfm::{integrate_paths, normalize_weights, path_cost, SplineModel, Trainer, TransitionPath, VelocityModel};
use crate::neural::{load_checkpoint, save_checkpoint};
use crate::potential::{train_autoencoder, LatentInterpolant, RbfMetric, SurrogatePotential};
use crate::surface::{surface_by_name, CountingSurface, CriticalPointRegistry, Surface};

pub const MANIFEST_FORMAT: &str = "pathflow-manifest";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    /// True-energy evaluations spent by this stage.
    pub u_evaluations: u64,
    #[serde(default)]
    pub details: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    /// Effective configuration of the most recent stage.
    #[serde(default)]
    pub config: serde_json::Value,
    pub stages: BTreeMap<String, StageRecord>,
    /// Sum over stages that count towards the evaluation budget.
    pub u_evaluations: u64,
}

impl Default for Manifest {
    fn default() -> Self {
        Self {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            config: serde_json::Value::Null,
            stages: BTreeMap::new(),
            u_evaluations: 0,
        }
    }
}

impl Manifest {
    pub fn load_or_default(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::schema(&path, e.to_string()))?;
        if m.format != MANIFEST_FORMAT || m.version != MANIFEST_VERSION {
            return Err(Error::schema(&path, "unexpected manifest format or version"));
        }
        Ok(m)
    }

    fn record(&mut self, dir: &Path, stage: &str, rec: StageRecord) -> Result<()> {
        self.stages.insert(stage.to_string(), rec);
        // the evaluation budget: data generation, training, and weighting for selection
        self.u_evaluations = ["simulate", "train", "sample"]
            .iter()
            .filter_map(|s| self.stages.get(*s))
            .map(|r| r.u_evaluations)
            .sum();
        write_text(&dir.join("manifest.json"), serde_json::to_string_pretty(self)? + "\n")
    }
}

fn write_text(path: &Path, body: String) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn require(path: &Path) -> Result<PathBuf> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "required input is missing"),
        ));
    }
    Ok(path.to_path_buf())
}

fn names(paths: &[&Path]) -> Vec<String> {
    paths.iter().map(|p| p.display().to_string()).collect()
}

pub struct Run {
    pub cfg: RunConfig,
    pub surface: Arc<dyn Surface>,
    pub registry: CriticalPointRegistry,
}

impl Run {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let surface = surface_by_name(&cfg.surface)?;
        let registry = CriticalPointRegistry::for_surface(surface.as_ref())?;
        Ok(Self { cfg, surface, registry })
    }

    pub fn dir(&self) -> &Path {
        &self.cfg.out_dir
    }

    fn record(&self, stage: &str, rec: StageRecord) -> Result<()> {
        let mut m = Manifest::load_or_default(self.dir())?;
        m.config = serde_json::to_value(&self.cfg)?;
        m.record(self.dir(), stage, rec)
    }

    fn file(&self, name: &str) -> PathBuf {
        self.cfg.out_dir.join(name)
    }

    fn start(&self, given: &Option<Vec<f64>>, index: usize) -> Result<Vec<f64>> {
        match given {
            Some(x) => Ok(x.clone()),
            None => self.registry.minima.get(index).cloned().ok_or_else(|| {
                Error::Config(format!("surface `{}` has no registered minimum #{index}; give a start point", self.cfg.surface))
            }),
        }
    }

    pub fn simulate(&self) -> Result<EndpointDataset> {
        let s = &self.cfg.simulate;
        let start_a = self.start(&s.start_a, 0)?;
        let start_b = self.start(&s.start_b, 1)?;
        let cfg = |seed| LangevinConfig {
            dt: s.dt,
            xi: s.xi,
            n_steps: s.steps,
            seed,
        };
        let data = EndpointDataset::simulate(
            self.surface.as_ref(),
            &start_a,
            &start_b,
            &cfg(s.seed_a),
            &cfg(s.seed_b),
            s.samples,
        )?;
        let out = self.file("dataset.jsonl");
        std::fs::create_dir_all(self.dir()).map_err(|e| Error::io(self.dir(), e))?;
        data.save(&out)?;
        self.record(
            "simulate",
            StageRecord {
                config: serde_json::to_value(s)?,
                inputs: vec![],
                outputs: names(&[&out]),
                u_evaluations: data.meta.u_evaluations,
                details: serde_json::json!({ "start_a": start_a, "start_b": start_b }),
            },
        )?;
        Ok(data)
    }

    pub fn load_dataset(&self) -> Result<EndpointDataset> {
        EndpointDataset::load(&require(&self.file("dataset.jsonl"))?)
    }

    pub fn fit_potential(&self) -> Result<SurrogatePotential> {
        let data_path = require(&self.file("dataset.jsonl"))?;
        let data = EndpointDataset::load(&data_path)?;
        let pooled = data.pooled();
        let pc = &self.cfg.potential;
        let (pot, outputs, details) = match pc.kind {
            PotentialKind::Metric => {
                let m = RbfMetric::fit(&pooled, &pc.rbf)?;
                let mean_h = pooled.iter().map(|p| m.h(p)).sum::<f64>() / pooled.len() as f64;
                let out = self.file("metric.json");
                SurrogatePotential::save_metric(&m, &out)?;
                (
                    SurrogatePotential::Metric(m),
                    vec![out],
                    serde_json::json!({ "mean_h": mean_h }),
                )
            }
            PotentialKind::Latent => {
                let l = train_autoencoder(&pooled, &pc.autoencoder)?;
                let (enc, dec) = (self.file("encoder.json"), self.file("decoder.json"));
                l.save(&enc, &dec)?;
                let details = serde_json::json!({ "final_loss": l.final_loss });
                (SurrogatePotential::Latent(l), vec![enc, dec], details)
            }
            PotentialKind::None => (SurrogatePotential::Zero, vec![], serde_json::Value::Null),
        };
        let outs: Vec<&Path> = outputs.iter().map(|p| p.as_path()).collect();
        self.record(
            "fit-potential",
            StageRecord {
                config: serde_json::to_value(pc)?,
                inputs: names(&[&data_path]),
                outputs: names(&outs),
                u_evaluations: 0,
                details,
            },
        )?;
        Ok(pot)
    }

    pub fn load_potential(&self) -> Result<SurrogatePotential> {
        Ok(match self.cfg.potential.kind {
            PotentialKind::Metric => SurrogatePotential::Metric(SurrogatePotential::load_metric(&require(&self.file("metric.json"))?)?),
            PotentialKind::Latent => SurrogatePotential::Latent(LatentInterpolant::load(
                &require(&self.file("encoder.json"))?,
                &require(&self.file("decoder.json"))?,
                self.cfg.potential.autoencoder.interpolation,
            )?),
            PotentialKind::None => SurrogatePotential::Zero,
        })
    }

    /// Train and save the models. On divergence the last good models are
    /// still written before the error is returned.
    pub fn train(&self) -> Result<TrainSummary> {
        let data = self.load_dataset()?;
        let pot = self.load_potential()?;
        let mut tr = Trainer::new(self.cfg.train.clone(), &data, &pot, self.surface.clone())?;
        let outcome = tr.run();
        let (spline_p, vel_p) = (self.file("spline.json"), self.file("velocity.json"));
        save_checkpoint(&tr.spline.net, &spline_p)?;
        save_checkpoint(&tr.velocity.net, &vel_p)?;
        let log_p = self.file("train_log.jsonl");
        write_text(&log_p, tr.log_jsonl()?)?;
        let buf_p = self.file("buffer.json");
        let buffer: Vec<serde_json::Value> = tr
            .buffer
            .entries()
            .iter()
            .map(|p| serde_json::json!({ "cost": p.cost, "weight": p.weight, "start": p.start(), "end": p.end() }))
            .collect();
        write_text(&buf_p, serde_json::to_string_pretty(&buffer)? + "\n")?;
        let summary = TrainSummary {
            u_evaluations: tr.u_evaluations(),
            epoch_losses: tr.epoch_losses.clone(),
            rounds: tr.rounds.iter().map(|r| serde_json::to_value(r).unwrap()).collect(),
            buffer_weights: tr.buffer.weights(),
            completed: outcome.is_ok(),
        };
        self.record(
            "train",
            StageRecord {
                config: serde_json::to_value(&self.cfg.train)?,
                inputs: names(&[&self.file("dataset.jsonl")]),
                outputs: names(&[&spline_p, &vel_p, &log_p, &buf_p]),
                u_evaluations: summary.u_evaluations,
                details: serde_json::json!({
                    "potential": pot.kind(),
                    "epoch_losses": summary.epoch_losses,
                    "rounds": summary.rounds,
                    "completed": summary.completed,
                }),
            },
        )?;
        outcome?;
        Ok(summary)
    }

    pub fn load_models(&self) -> Result<(SplineModel, VelocityModel)> {
        Ok((
            SplineModel::from_net(load_checkpoint(&require(&self.file("spline.json"))?)?)?,
            VelocityModel::from_net(load_checkpoint(&require(&self.file("velocity.json"))?)?)?,
        ))
    }

    /// Integrate paths from pool-A states; with `top_k`, keep the
    /// highest-weighted ones.
    pub fn sample(&self) -> Result<Vec<TransitionPath>> {
        let sc = &self.cfg.sample;
        let data = self.load_dataset()?;
        let (_, velocity) = self.load_models()?;
        let mut paths = sample_from_pool(&velocity, &data.pool_a, sc.n_paths, sc.ode_steps, sc.integrator, sc.seed)?;
        let counting = CountingSurface::new(self.surface.clone());
        let mut outputs = vec![self.file("paths.csv")];
        if let Some(k) = sc.top_k {
            let costs = paths
                .iter()
                .map(|p| path_cost(p, &velocity, &counting))
                .collect::<Result<Vec<_>>>()?;
            let weights = normalize_weights(&costs)?;
            let mut order: Vec<usize> = (0..paths.len()).collect();
            order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
            let mut csv = String::from("path_id,source_id,cost,weight\n");
            let mut kept = Vec::new();
            for (new_id, &i) in order.iter().take(k).enumerate() {
                let _ = writeln!(csv, "{new_id},{i},{},{}", costs[i], weights[i]);
                let mut p = paths[i].clone();
                p.cost = Some(costs[i]);
                p.weight = Some(weights[i]);
                kept.push(p);
            }
            paths = kept;
            write_text(&self.file("weights.csv"), csv)?;
            outputs.push(self.file("weights.csv"));
        }
        write_paths_csv(&self.file("paths.csv"), &paths, self.surface.as_ref())?;
        let outs: Vec<&Path> = outputs.iter().map(|p| p.as_path()).collect();
        self.record(
            "sample",
            StageRecord {
                config: serde_json::to_value(sc)?,
                inputs: names(&[&self.file("velocity.json"), &self.file("dataset.jsonl")]),
                outputs: names(&outs),
                u_evaluations: counting.evaluations(),
                details: serde_json::Value::Null,
            },
        )?;
        Ok(paths)
    }

    /// Metrics of a saved path set, written next to it.
    pub fn evaluate(&self, paths_file: Option<&Path>, report_dir: Option<&Path>) -> Result<PathSetReport> {
        let default_paths = self.file("paths.csv");
        let pf = require(paths_file.unwrap_or(&default_paths))?;
        let paths = read_paths_csv(&pf)?;
        let dir = report_dir.map(Path::to_path_buf).unwrap_or_else(|| self.cfg.out_dir.clone());
        let manifest = Manifest::load_or_default(self.dir())?;
        let (rep, per) = report(&paths, self.surface.as_ref(), &self.registry, manifest.u_evaluations)?;
        write_report(&dir, &rep, &per, &paths, self.surface.as_ref(), &self.registry)?;
        self.record(
            "evaluate",
            StageRecord {
                config: serde_json::Value::Null,
                inputs: names(&[&pf]),
                outputs: names(&[&dir.join("report.csv"), &dir.join("summary.json"), &dir.join("paths.svg")]),
                u_evaluations: 0,
                details: serde_json::to_value(&rep)?,
            },
        )?;
        Ok(rep)
    }

    pub fn baseline(&self) -> Result<serde_json::Value> {
        let bc = &self.cfg.baseline;
        let dir = self.file(&format!(
            "baseline-{}",
            match bc.kind {
                BaselineKind::Linear => "linear",
                BaselineKind::Idpp => "idpp",
            }
        ));
        let details = match bc.kind {
            BaselineKind::Linear => {
                let data = self.load_dataset()?;
                let paths = linear_baseline(&data, bc.coupling, bc.n_paths, bc.n_points, bc.seed)?;
                let pf = dir.join("paths.csv");
                write_paths_csv(&pf, &paths, self.surface.as_ref())?;
                let (rep, per) = report(&paths, self.surface.as_ref(), &self.registry, 0)?;
                write_report(&dir, &rep, &per, &paths, self.surface.as_ref(), &self.registry)?;
                serde_json::to_value(rep)?
            }
            BaselineKind::Idpp => {
                let pairs = rotating_cluster_pairs(bc.idpp_pairs, bc.seed);
                let fit = fit_idpp(&pairs, &bc.idpp)?;
                let mut worst: f64 = 0.0;
                for i in 0..pairs.len() {
                    let (a, b) = (pairs.x0.row(i).to_vec(), pairs.xt.row(i).to_vec());
                    let mid = fit.spline.spline_point(&a, &b, 0.5)?;
                    let target = (pairwise_distances(&a, &bc.idpp.system)? + pairwise_distances(&b, &bc.idpp.system)?) / 2.0;
                    let got = pairwise_distances(&mid, &bc.idpp.system)?;
                    worst = worst.max((got - target).iter().fold(0.0, |m: f64, d| m.max(d.abs())));
                }
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                save_checkpoint(&fit.spline.net, &dir.join("spline.json"))?;
                let s = serde_json::json!({
                    "initial_loss": fit.losses.first(),
                    "final_loss": fit.final_loss,
                    "midpoint_max_distance_error": worst,
                });
                write_text(&dir.join("summary.json"), serde_json::to_string_pretty(&s)? + "\n")?;
                s
            }
        };
        self.record(
            "baseline",
            StageRecord {
                config: serde_json::to_value(bc)?,
                inputs: vec![],
                outputs: names(&[&dir]),
                u_evaluations: 0,
                details: details.clone(),
            },
        )?;
        Ok(details)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub u_evaluations: u64,
    pub epoch_losses: Vec<f64>,
    pub rounds: Vec<serde_json::Value>,
    pub buffer_weights: Vec<f64>,
    pub completed: bool,
}

/// `n` ODE paths started at pool states drawn uniformly with `seed`.
pub fn sample_from_pool(
    velocity: &VelocityModel,
    pool: &[Vec<f64>],
    n: usize,
    ode_steps: usize,
    method: crate::gfm::Integrator,
    seed: u64,
) -> Result<Vec<TransitionPath>> {
    if pool.is_empty() {
        return Err(Error::Config("empty start pool".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = pool[0].len();
    let mut x0 = Array2::zeros((n, d));
    for i in 0..n {
        let k = rng.random_range(0..pool.len());
        x0.row_mut(i).assign(&ndarray::ArrayView1::from(pool[k].as_slice()));
    }
    integrate_paths(velocity, &x0, ode_steps, method)
}

/// Straight lines between pairs drawn from the dataset with `coupling`.
pub fn linear_baseline(
    data: &EndpointDataset,
    coupling: CouplingKind,
    n: usize,
    n_points: usize,
    seed: u64,
) -> Result<Vec<TransitionPath>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = match coupling {
        CouplingKind::Product => sample_pairs_product(data, n, &mut rng)?,
        CouplingKind::MinibatchOt => sample_pairs_ot(data, n, &mut rng)?,
        CouplingKind::Reflow => return Err(Error::Config("the linear baseline takes product or OT pairs".into())),
    };
    (0..pairs.len())
        .map(|i| linear_path(pairs.x0.row(i).as_slice().unwrap(), pairs.xt.row(i).as_slice().unwrap(), n_points))
        .collect()
}

/// `path_id,t,x0..x{d-1},energy`, one row per grid point.
pub fn write_paths_csv(path: &Path, paths: &[TransitionPath], surface: &dyn Surface) -> Result<()> {
    let d = paths.first().map(|p| p.dim()).unwrap_or(surface.dim());
    let mut s = String::from("path_id,t");
    for j in 0..d {
        let _ = write!(s, ",x{j}");
    }
    s.push_str(",energy\n");
    for (id, p) in paths.iter().enumerate() {
        for (k, row) in p.states.rows().into_iter().enumerate() {
            let _ = write!(s, "{id},{}", p.times[k]);
            for x in row {
                let _ = write!(s, ",{x}");
            }
            let _ = writeln!(s, ",{}", surface.energy(row.as_slice().unwrap())?);
        }
    }
    write_text(path, s)
}

pub fn read_paths_csv(path: &Path) -> Result<Vec<TransitionPath>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| Error::schema(path, "empty file"))?.split(',').collect();
    if header.len() < 4 || header[0] != "path_id" || header[1] != "t" || header[header.len() - 1] != "energy" {
        return Err(Error::schema(path, "expected columns path_id,t,x…,energy"));
    }
    let d = header.len() - 3;
    let mut out = Vec::new();
    let mut cur: Option<(usize, Vec<f64>, Vec<f64>)> = None;
    let finish = |c: (usize, Vec<f64>, Vec<f64>), out: &mut Vec<TransitionPath>| -> Result<()> {
        let n = c.1.len();
        let states = Array2::from_shape_vec((n, d), c.2).map_err(|e| Error::schema(path, e.to_string()))?;
        out.push(TransitionPath::new(c.1, states).map_err(|e| Error::schema(path, e.to_string()))?);
        Ok(())
    };
    for (ln, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != header.len() {
            return Err(Error::schema(path, format!("line {}: wrong number of fields", ln + 2)));
        }
        let bad = |_| Error::schema(path, format!("line {}: not a number", ln + 2));
        let id: usize = f[0].parse().map_err(|_| Error::schema(path, format!("line {}: bad path_id", ln + 2)))?;
        let t: f64 = f[1].parse().map_err(bad)?;
        let x = f[2..2 + d].iter().map(|v| v.parse::<f64>().map_err(bad)).collect::<Result<Vec<_>>>()?;
        match &mut cur {
            Some(c) if c.0 == id => {
                c.1.push(t);
                c.2.extend(x);
            }
            _ => {
                if let Some(c) = cur.take() {
                    finish(c, &mut out)?;
                }
                cur = Some((id, vec![t], x));
            }
        }
    }
    if let Some(c) = cur {
        finish(c, &mut out)?;
    }
    Ok(out)
}
