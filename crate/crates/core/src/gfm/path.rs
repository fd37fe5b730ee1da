//! Sampled paths, their importance weights, and the replay buffer.

use ndarray::Array2;
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::surface::Surface;

use super::velocity::VelocityField;

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionPath {
    pub times: Vec<f64>,
    /// One state per row.
    pub states: Array2<f64>,
    /// Raw action `w~`, set by [`path_cost`].
    pub cost: Option<f64>,
    /// Normalised weight within the batch the path was sampled in.
    pub weight: Option<f64>,
}

impl TransitionPath {
    pub fn new(times: Vec<f64>, states: Array2<f64>) -> Result<Self> {
        check_dim(times.len(), states.nrows())?;
        if times.len() < 2 {
            return Err(Error::Config("a path needs at least two points".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("path times must be strictly increasing".into()));
        }
        Ok(Self {
            times,
            states,
            cost: None,
            weight: None,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn start(&self) -> Vec<f64> {
        self.states.row(0).to_vec()
    }

    pub fn end(&self) -> Vec<f64> {
        self.states.row(self.len() - 1).to_vec()
    }

    /// State linearly interpolated at time `t`, clamped to the grid.
    pub fn state_at(&self, t: f64) -> Vec<f64> {
        let n = self.len();
        if t <= self.times[0] {
            return self.start();
        }
        if t >= self.times[n - 1] {
            return self.end();
        }
        let k = self.times.partition_point(|&s| s <= t) - 1;
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let a = (t - t0) / (t1 - t0);
        let (p, q) = (self.states.row(k), self.states.row(k + 1));
        p.iter().zip(q).map(|(x, y)| (1.0 - a) * x + a * y).collect()
    }
}

/// Trapezoidal quadrature of `1/2 |v(x_t, t)|^2 + U(x_t)` along the path.
/// Every grid point costs one evaluation of `surface`.
pub fn path_cost(path: &TransitionPath, field: &dyn VelocityField, surface: &dyn Surface) -> Result<f64> {
    let v = field.velocity_rows(&path.states, &path.times)?;
    let mut f = Vec::with_capacity(path.len());
    for (k, row) in path.states.rows().into_iter().enumerate() {
        let u = surface.energy(row.as_slice().unwrap())?;
        let kin = 0.5 * v.row(k).iter().map(|a| a * a).sum::<f64>();
        f.push(kin + u);
    }
    Ok(trapezoid(&path.times, &f))
}

pub fn trapezoid(t: &[f64], f: &[f64]) -> f64 {
    t.windows(2).zip(f.windows(2)).map(|(t, f)| 0.5 * (t[1] - t[0]) * (f[0] + f[1])).sum()
}

/// `softmax(-cost)`, shifted by the minimum cost for stability.
pub fn normalize_weights(costs: &[f64]) -> Result<Vec<f64>> {
    if costs.is_empty() {
        return Ok(Vec::new());
    }
    if costs.iter().any(|c| !c.is_finite()) {
        return Err(Error::Domain("path costs must be finite".into()));
    }
    let lo = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let e: Vec<f64> = costs.iter().map(|c| (lo - c).exp()).collect();
    let z: f64 = e.iter().sum();
    Ok(e.into_iter().map(|x| x / z).collect())
}

/// Paths ordered by weight, highest first. When full, the lowest-weight
/// entry is dropped.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    entries: Vec<TransitionPath>,
    evicted: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay buffer capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            entries: Vec::new(),
            evicted: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn evicted(&self) -> usize {
        self.evicted
    }

    pub fn entries(&self) -> &[TransitionPath] {
        &self.entries
    }

    pub fn weights(&self) -> Vec<f64> {
        self.entries.iter().map(|p| p.weight.unwrap_or(0.0)).collect()
    }

    /// Insert a weighted path. Returns the evicted path, if any.
    pub fn push(&mut self, path: TransitionPath) -> Result<Option<TransitionPath>> {
        let w = path
            .weight
            .filter(|w| w.is_finite() && *w >= 0.0)
            .ok_or_else(|| Error::Domain("buffer entries need a finite non-negative weight".into()))?;
        let pos = self.entries.partition_point(|p| p.weight.unwrap() >= w);
        self.entries.insert(pos, path);
        if self.entries.len() > self.capacity {
            self.evicted += 1;
            return Ok(self.entries.pop());
        }
        Ok(None)
    }

    /// Indices drawn with probability proportional to weight; uniform when
    /// all weights vanish.
    pub fn sample_indices<R: Rng>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.entries.is_empty() {
            return Err(Error::Config("cannot sample from an empty replay buffer".into()));
        }
        match WeightedIndex::new(self.weights()) {
            Ok(dist) => Ok((0..n).map(|_| dist.sample(rng)).collect()),
            Err(_) => Ok((0..n).map(|_| rng.random_range(0..self.entries.len())).collect()),
        }
    }
}
