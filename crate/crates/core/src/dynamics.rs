//! First-order Langevin simulation around metastable states and the endpoint
//! datasets built from it.
//!
//! Random numbers come from `ChaCha8Rng` seeded with the configured 64-bit
//! seed; normal draws use `rand_distr::StandardNormal`. Both are portable, so
//! a `(surface, config, seed)` triple fixes the pools on every platform.
//!
//! Dataset files are JSON Lines. The first line is a header
//! `{"format":"pathflow-dataset","version":1,"dim":D,"meta":{...}}`; every
//! following line is one state `{"pool":"A"|"B","x":[...]}`.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::surface::Surface;

pub const DATASET_FORMAT: &str = "pathflow-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LangevinConfig {
    pub dt: f64,
    /// Noise scale.
    pub xi: f64,
    pub n_steps: usize,
    pub seed: u64,
}

impl LangevinConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !self.xi.is_finite() || self.xi < 0.0 {
            return Err(Error::Config(format!("xi must be non-negative, got {}", self.xi)));
        }
        if self.n_steps == 0 {
            return Err(Error::Config("n_steps must be at least 1".into()));
        }
        Ok(())
    }
}

impl Default for LangevinConfig {
    fn default() -> Self {
        Self {
            dt: 1e-4,
            xi: 5.0,
            n_steps: 12_000,
            seed: 0,
        }
    }
}

/// One Euler-Maruyama step: `x - grad V(x) dt + sqrt(dt) xi noise`.
pub fn langevin_step(surface: &dyn Surface, x: &[f64], cfg: &LangevinConfig, noise: &[f64]) -> Result<Vec<f64>> {
    check_dim(surface.dim(), x.len())?;
    check_dim(surface.dim(), noise.len())?;
    let mut g = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    step_into(surface, x, cfg, noise, &mut g, &mut out);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::divergence("langevin", 0));
    }
    Ok(out)
}

fn step_into(surface: &dyn Surface, x: &[f64], cfg: &LangevinConfig, noise: &[f64], g: &mut [f64], out: &mut [f64]) {
    surface.gradient_unchecked(x, g);
    let scale = cfg.dt.sqrt() * cfg.xi;
    for i in 0..x.len() {
        out[i] = x[i] - g[i] * cfg.dt + scale * noise[i];
    }
}

/// Run `cfg.n_steps` steps from `start` and keep `n_samples` of the visited
/// states (the states after each step), chosen uniformly without replacement
/// and returned in time order.
pub fn simulate_pool(surface: &dyn Surface, start: &[f64], cfg: &LangevinConfig, n_samples: usize) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    check_dim(surface.dim(), start.len())?;
    if n_samples == 0 || n_samples > cfg.n_steps {
        return Err(Error::Config(format!(
            "n_samples must be in 1..={}, got {n_samples}",
            cfg.n_steps
        )));
    }
    let d = start.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut visited = Vec::with_capacity(cfg.n_steps);
    let mut x = start.to_vec();
    let mut next = vec![0.0; d];
    let mut g = vec![0.0; d];
    let mut noise = vec![0.0; d];
    for step in 0..cfg.n_steps {
        for v in noise.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        step_into(surface, &x, cfg, &noise, &mut g, &mut next);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::divergence("langevin", step));
        }
        std::mem::swap(&mut x, &mut next);
        visited.push(x.clone());
    }
    if n_samples == cfg.n_steps {
        return Ok(visited);
    }
    let mut idx = rand::seq::index::sample(&mut rng, cfg.n_steps, n_samples).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| std::mem::take(&mut visited[i])).collect())
}

/// Provenance of a dataset.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub surface: String,
    pub start_a: Vec<f64>,
    pub start_b: Vec<f64>,
    pub config_a: LangevinConfig,
    pub config_b: LangevinConfig,
    pub samples_per_pool: usize,
    /// True energy/force evaluations spent generating the pools.
    pub u_evaluations: u64,
}

/// Two unpaired pools of states around the endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointDataset {
    pub pool_a: Vec<Vec<f64>>,
    pub pool_b: Vec<Vec<f64>>,
    pub meta: DatasetMeta,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    dim: usize,
    meta: DatasetMeta,
}

#[derive(Serialize, Deserialize)]
struct Record {
    pool: String,
    x: Vec<f64>,
}

impl EndpointDataset {
    pub fn new(pool_a: Vec<Vec<f64>>, pool_b: Vec<Vec<f64>>, meta: DatasetMeta) -> Result<Self> {
        let ds = Self { pool_a, pool_b, meta };
        ds.validate()?;
        Ok(ds)
    }

    /// Simulate both pools. Pool A uses `cfg_a`, pool B uses `cfg_b`.
    pub fn simulate(
        surface: &dyn Surface,
        start_a: &[f64],
        start_b: &[f64],
        cfg_a: &LangevinConfig,
        cfg_b: &LangevinConfig,
        samples_per_pool: usize,
    ) -> Result<Self> {
        let pool_a = simulate_pool(surface, start_a, cfg_a, samples_per_pool)?;
        let pool_b = simulate_pool(surface, start_b, cfg_b, samples_per_pool)?;
        let meta = DatasetMeta {
            surface: surface.name().to_string(),
            start_a: start_a.to_vec(),
            start_b: start_b.to_vec(),
            config_a: *cfg_a,
            config_b: *cfg_b,
            samples_per_pool,
            u_evaluations: (cfg_a.n_steps + cfg_b.n_steps) as u64,
        };
        Self::new(pool_a, pool_b, meta)
    }

    pub fn dim(&self) -> usize {
        self.pool_a[0].len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.pool_a.is_empty() || self.pool_b.is_empty() {
            return Err(Error::Config("dataset pools must be non-empty".into()));
        }
        let d = self.pool_a[0].len();
        for x in self.pool_a.iter().chain(&self.pool_b) {
            check_dim(d, x.len())?;
        }
        Ok(())
    }

    /// All states of both pools.
    pub fn pooled(&self) -> Vec<Vec<f64>> {
        self.pool_a.iter().chain(&self.pool_b).cloned().collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let header = Header {
            format: DATASET_FORMAT.into(),
            version: DATASET_VERSION,
            dim: self.dim(),
            meta: self.meta.clone(),
        };
        let mut write_line = |s: String| writeln!(w, "{s}").map_err(|e| Error::io(path, e));
        write_line(serde_json::to_string(&header)?)?;
        for (name, pool) in [("A", &self.pool_a), ("B", &self.pool_b)] {
            for x in pool {
                write_line(serde_json::to_string(&Record {
                    pool: name.into(),
                    x: x.clone(),
                })?)?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::schema(path, "empty dataset file"))?
            .map_err(|e| Error::io(path, e))?;
        let header: Header = serde_json::from_str(&first).map_err(|e| Error::schema(path, format!("header: {e}")))?;
        if header.format != DATASET_FORMAT {
            return Err(Error::schema(path, format!("unexpected format `{}`", header.format)));
        }
        if header.version != DATASET_VERSION {
            return Err(Error::schema(
                path,
                format!("dataset version {} (expected {DATASET_VERSION})", header.version),
            ));
        }
        let (mut pool_a, mut pool_b) = (Vec::new(), Vec::new());
        for (lineno, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record =
                serde_json::from_str(&line).map_err(|e| Error::schema(path, format!("line {}: {e}", lineno + 2)))?;
            if rec.x.len() != header.dim {
                return Err(Error::schema(
                    path,
                    format!("line {}: state has {} components, header says {}", lineno + 2, rec.x.len(), header.dim),
                ));
            }
            match rec.pool.as_str() {
                "A" => pool_a.push(rec.x),
                "B" => pool_b.push(rec.x),
                other => return Err(Error::schema(path, format!("line {}: unknown pool `{other}`", lineno + 2))),
            }
        }
        Self::new(pool_a, pool_b, header.meta).map_err(|e| Error::schema(path, e.to_string()))
    }
}
