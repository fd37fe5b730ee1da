//! Analytic potential energy surfaces.
//!
//! Every surface exposes an energy and its exact gradient. [`CountingSurface`]
//! wraps a surface and counts how many times the true energy was queried, which
//! is the quantity reported as "evaluations" by the training pipeline.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// An energy function over `R^dim` with an analytic gradient.
pub trait Surface: Send + Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    /// Energy without argument validation.
    fn energy_unchecked(&self, x: &[f64]) -> f64;

    /// Gradient without argument validation; writes into `out`.
    fn gradient_unchecked(&self, x: &[f64], out: &mut [f64]);

    fn energy(&self, x: &[f64]) -> Result<f64> {
        validate(self.dim(), x)?;
        Ok(self.energy_unchecked(x))
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        validate(self.dim(), x)?;
        let mut g = vec![0.0; x.len()];
        self.gradient_unchecked(x, &mut g);
        Ok(g)
    }
}

fn validate(dim: usize, x: &[f64]) -> Result<()> {
    check_dim(dim, x.len())?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite surface input".into()));
    }
    Ok(())
}

/// Müller-Brown surface, the standard four-Gaussian 2D test landscape.
#[derive(Debug, Clone, Copy, Default)]
pub struct MuellerBrown;

impl MuellerBrown {
    const AMP: [f64; 4] = [-200.0, -100.0, -170.0, 15.0];
    const A: [f64; 4] = [-1.0, -1.0, -6.5, 0.7];
    const B: [f64; 4] = [0.0, 0.0, 11.0, 0.6];
    const C: [f64; 4] = [-10.0, -10.0, -6.5, 0.7];
    const X0: [f64; 4] = [1.0, 0.0, -0.5, -1.0];
    const Y0: [f64; 4] = [0.0, 0.5, 1.5, 1.0];

    /// Approximate minima as usually quoted for this surface.
    pub const APPROX_MINIMA: [[f64; 2]; 3] = [[-0.56, 1.44], [-0.05, 0.47], [0.62, 0.03]];
    /// Approximate saddles: the first separates minima 0 and 1, the second 1 and 2.
    pub const APPROX_SADDLES: [[f64; 2]; 2] = [[-0.77, 0.64], [0.22, 0.3]];
}

impl Surface for MuellerBrown {
    fn name(&self) -> &str {
        "mueller-brown"
    }

    fn dim(&self) -> usize {
        2
    }

    fn energy_unchecked(&self, p: &[f64]) -> f64 {
        let (x, y) = (p[0], p[1]);
        let mut e = 0.0;
        for k in 0..4 {
            let dx = x - Self::X0[k];
            let dy = y - Self::Y0[k];
            e += Self::AMP[k] * (Self::A[k] * dx * dx + Self::B[k] * dx * dy + Self::C[k] * dy * dy).exp();
        }
        e
    }

    fn gradient_unchecked(&self, p: &[f64], out: &mut [f64]) {
        let (x, y) = (p[0], p[1]);
        let (mut gx, mut gy) = (0.0, 0.0);
        for k in 0..4 {
            let dx = x - Self::X0[k];
            let dy = y - Self::Y0[k];
            let term = Self::AMP[k]
                * (Self::A[k] * dx * dx + Self::B[k] * dx * dy + Self::C[k] * dy * dy).exp();
            gx += term * (2.0 * Self::A[k] * dx + Self::B[k] * dy);
            gy += term * (Self::B[k] * dx + 2.0 * Self::C[k] * dy);
        }
        out[0] = gx;
        out[1] = gy;
    }
}

/// `0.5 * |x|^2`.
#[derive(Debug, Clone, Copy)]
pub struct Quadratic {
    pub dim: usize,
}

impl Surface for Quadratic {
    fn name(&self) -> &str {
        "quadratic"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn energy_unchecked(&self, x: &[f64]) -> f64 {
        0.5 * x.iter().map(|v| v * v).sum::<f64>()
    }

    fn gradient_unchecked(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
    }
}

/// Identically zero.
#[derive(Debug, Clone, Copy)]
pub struct Flat {
    pub dim: usize,
}

impl Surface for Flat {
    fn name(&self) -> &str {
        "flat"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn energy_unchecked(&self, _x: &[f64]) -> f64 {
        0.0
    }

    fn gradient_unchecked(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// Look up a surface by its CLI name.
pub fn surface_by_name(name: &str) -> Result<Arc<dyn Surface>> {
    match name {
        "mueller-brown" | "muller-brown" | "mb" => Ok(Arc::new(MuellerBrown)),
        "quadratic" => Ok(Arc::new(Quadratic { dim: 2 })),
        "flat" => Ok(Arc::new(Flat { dim: 2 })),
        other => Err(Error::Config(format!("unknown surface `{other}`"))),
    }
}

/// Wraps a surface and counts every energy or gradient query.
///
/// One Langevin step counts as one evaluation (it needs one force call), and
/// one grid point of a path cost counts as one evaluation.
pub struct CountingSurface {
    inner: Arc<dyn Surface>,
    count: AtomicU64,
}

impl CountingSurface {
    pub fn new(inner: Arc<dyn Surface>) -> Self {
        Self {
            inner,
            count: AtomicU64::new(0),
        }
    }

    pub fn evaluations(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }

    pub fn inner(&self) -> &Arc<dyn Surface> {
        &self.inner
    }
}

impl Surface for CountingSurface {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn energy_unchecked(&self, x: &[f64]) -> f64 {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.inner.energy_unchecked(x)
    }

    fn gradient_unchecked(&self, x: &[f64], out: &mut [f64]) {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.inner.gradient_unchecked(x, out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriticalKind {
    Min,
    Saddle,
}

const REFINE_TOL: f64 = 1e-8;
const HESSIAN_STEP: f64 = 1e-5;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Refine an approximate critical point until the gradient norm drops below 1e-8.
///
/// Minima use gradient descent with a backtracking line search; saddles use
/// Newton iteration on the gradient with a finite-difference Hessian.
pub fn refine_critical_point(surface: &dyn Surface, x0: &[f64], kind: CriticalKind) -> Result<Vec<f64>> {
    validate(surface.dim(), x0)?;
    match kind {
        CriticalKind::Min => descend(surface, x0),
        CriticalKind::Saddle => newton(surface, x0),
    }
}

fn descend(surface: &dyn Surface, x0: &[f64]) -> Result<Vec<f64>> {
    const MAX_ITER: usize = 100_000;
    // Below this gradient norm energy differences are lost in rounding, so the
    // line search is replaced by a fixed step of 1/L with L a Gershgorin bound
    // on the local Hessian.
    const FIXED_STEP_BELOW: f64 = 1e-4;
    let mut x = x0.to_vec();
    let mut g = surface.gradient(&x)?;
    let mut e = surface.energy_unchecked(&x);
    let mut step = 1e-3;
    let mut fixed_step: Option<f64> = None;
    for _ in 0..MAX_ITER {
        let gn = norm(&g);
        if gn < REFINE_TOL {
            return Ok(x);
        }
        if fixed_step.is_none() && gn < FIXED_STEP_BELOW {
            let hess = hessian_fd(surface, &x, HESSIAN_STEP);
            let bound = hess
                .iter()
                .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
                .fold(0.0, f64::max);
            fixed_step = Some(1.0 / bound.max(1e-12));
        }
        if let Some(eta) = fixed_step {
            for (xi, gi) in x.iter_mut().zip(&g) {
                *xi -= eta * gi;
            }
        } else {
            // Armijo backtracking; the step may grow again afterwards.
            step *= 2.0;
            loop {
                let trial: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - step * gi).collect();
                let et = surface.energy_unchecked(&trial);
                if et <= e - 0.5 * step * gn * gn || step < 1e-16 {
                    x = trial;
                    e = et;
                    break;
                }
                step *= 0.5;
            }
        }
        surface.gradient_unchecked(&x, &mut g);
    }
    Err(Error::Convergence {
        iterations: MAX_ITER,
        grad_norm: norm(&g),
        last: x,
    })
}

/// Central-difference Hessian built from the analytic gradient.
pub fn hessian_fd(surface: &dyn Surface, x: &[f64], h: f64) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut hess = vec![vec![0.0; n]; n];
    let mut gp = vec![0.0; n];
    let mut gm = vec![0.0; n];
    let mut xp = x.to_vec();
    for j in 0..n {
        xp[j] = x[j] + h;
        surface.gradient_unchecked(&xp, &mut gp);
        xp[j] = x[j] - h;
        surface.gradient_unchecked(&xp, &mut gm);
        xp[j] = x[j];
        for i in 0..n {
            hess[i][j] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }
    // symmetrize
    for i in 0..n {
        for j in 0..i {
            let m = 0.5 * (hess[i][j] + hess[j][i]);
            hess[i][j] = m;
            hess[j][i] = m;
        }
    }
    hess
}

/// Solve `a x = b` by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

fn newton(surface: &dyn Surface, x0: &[f64]) -> Result<Vec<f64>> {
    const MAX_ITER: usize = 200;
    let mut x = x0.to_vec();
    let mut g = surface.gradient(&x)?;
    for it in 0..MAX_ITER {
        let gn = norm(&g);
        if gn < REFINE_TOL {
            return Ok(x);
        }
        let hess = hessian_fd(surface, &x, HESSIAN_STEP);
        let Some(delta) = solve(hess, g.clone()) else {
            return Err(Error::Convergence {
                iterations: it,
                grad_norm: gn,
                last: x,
            });
        };
        for (xi, d) in x.iter_mut().zip(&delta) {
            *xi -= d;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Convergence {
                iterations: it,
                grad_norm: f64::NAN,
                last: x,
            });
        }
        surface.gradient_unchecked(&x, &mut g);
    }
    Err(Error::Convergence {
        iterations: MAX_ITER,
        grad_norm: norm(&g),
        last: x,
    })
}

/// Refined minima and saddles of a surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalPointRegistry {
    pub minima: Vec<Vec<f64>>,
    pub saddles: Vec<Vec<f64>>,
}

impl CriticalPointRegistry {
    /// Refine each approximate point with the matching method.
    pub fn refine(surface: &dyn Surface, minima: &[Vec<f64>], saddles: &[Vec<f64>]) -> Result<Self> {
        let minima = minima
            .iter()
            .map(|p| refine_critical_point(surface, p, CriticalKind::Min))
            .collect::<Result<_>>()?;
        let saddles = saddles
            .iter()
            .map(|p| refine_critical_point(surface, p, CriticalKind::Saddle))
            .collect::<Result<_>>()?;
        Ok(Self { minima, saddles })
    }

    pub fn mueller_brown() -> Result<Self> {
        let minima: Vec<Vec<f64>> = MuellerBrown::APPROX_MINIMA.iter().map(|p| p.to_vec()).collect();
        let saddles: Vec<Vec<f64>> = MuellerBrown::APPROX_SADDLES.iter().map(|p| p.to_vec()).collect();
        Self::refine(&MuellerBrown, &minima, &saddles)
    }

    /// Registry for a named surface. Surfaces without known critical points get an empty registry.
    pub fn for_surface(surface: &dyn Surface) -> Result<Self> {
        match surface.name() {
            "mueller-brown" => Self::mueller_brown(),
            _ => Ok(Self {
                minima: vec![],
                saddles: vec![],
            }),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
