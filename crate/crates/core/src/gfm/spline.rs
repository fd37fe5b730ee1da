//! Neural spline `x_t = (1-t) x0 + t xT + t(1-t) NN(x0, xT, t)` and the
//! losses that train it.

use ndarray::{Array1, Array2, Axis};

use crate::coupling::Pairs;
use crate::error::{check_dim, Error, Result};
use crate::neural::{unit_direction, DualTrace, Mlp};
use crate::potential::SurrogatePotential;

use super::path::TransitionPath;

#[derive(Debug, Clone, PartialEq)]
pub struct SplineModel {
    pub net: Mlp,
}

/// Spline points and velocities for a batch, with the trace needed for gradients.
pub struct SplineEval {
    pub x: Array2<f64>,
    pub v: Array2<f64>,
    trace: DualTrace,
    t: Array1<f64>,
}

/// Loss value and flat parameter gradient.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

impl SplineModel {
    /// Network `(x0, xT, t) -> R^dim` with `hidden` units in each of `depth` layers.
    pub fn new(dim: usize, hidden: usize, depth: usize, seed: u64) -> Result<Self> {
        let mut dims = vec![2 * dim + 1];
        dims.extend(std::iter::repeat_n(hidden, depth));
        dims.push(dim);
        Ok(Self { net: Mlp::new(&dims, seed)? })
    }

    pub fn from_net(net: Mlp) -> Result<Self> {
        let d = net.output_dim();
        check_dim(2 * d + 1, net.input_dim())?;
        Ok(Self { net })
    }

    pub fn dim(&self) -> usize {
        self.net.output_dim()
    }

    fn inputs(&self, pairs: &Pairs, t: &[f64]) -> Result<Array2<f64>> {
        let d = self.dim();
        check_dim(d, pairs.dim())?;
        check_dim(pairs.len(), t.len())?;
        let mut inp = Array2::zeros((t.len(), 2 * d + 1));
        inp.slice_mut(ndarray::s![.., ..d]).assign(&pairs.x0);
        inp.slice_mut(ndarray::s![.., d..2 * d]).assign(&pairs.xt);
        inp.column_mut(2 * d).assign(&Array1::from(t.to_vec()));
        Ok(inp)
    }

    /// Points and velocities; row `i` uses pair `i` at time `t[i]`.
    pub fn eval(&self, pairs: &Pairs, t: &[f64]) -> Result<SplineEval> {
        let inp = self.inputs(pairs, t)?;
        let dir = unit_direction(t.len(), inp.ncols(), 2 * self.dim());
        let trace = self.net.forward_dual(inp.view(), dir.view())?;
        let t = Array1::from(t.to_vec());
        let tt = t.mapv(|s| s * (1.0 - s)).insert_axis(Axis(1));
        let lin = t.view().insert_axis(Axis(1));
        let slope = t.mapv(|s| 1.0 - 2.0 * s).insert_axis(Axis(1));
        let x = &pairs.x0 * &lin.mapv(|s| 1.0 - s) + &pairs.xt * &lin + &trace.output * &tt;
        let v = &pairs.xt - &pairs.x0 + &trace.output_tangent * &tt + &trace.output * &slope;
        Ok(SplineEval { x, v, trace, t })
    }

    pub fn spline_point(&self, x0: &[f64], xt: &[f64], t: f64) -> Result<Vec<f64>> {
        let e = self.eval(&single(x0, xt)?, &[t])?;
        Ok(e.x.row(0).to_vec())
    }

    pub fn spline_velocity(&self, x0: &[f64], xt: &[f64], t: f64) -> Result<Vec<f64>> {
        let e = self.eval(&single(x0, xt)?, &[t])?;
        Ok(e.v.row(0).to_vec())
    }

    /// Parameter gradient of `sum(gx * x + gv * v)` for an evaluated batch.
    pub fn backprop(&self, e: &SplineEval, gx: &Array2<f64>, gv: &Array2<f64>) -> Result<Vec<f64>> {
        let tt = e.t.mapv(|s| s * (1.0 - s)).insert_axis(Axis(1));
        let slope = e.t.mapv(|s| 1.0 - 2.0 * s).insert_axis(Axis(1));
        let g_out = gx * &tt + gv * &slope;
        let g_tan = gv * &tt;
        Ok(self.net.backward_dual(&e.trace, g_out.view(), g_tan.view())?.params)
    }

    /// Uniform-grid path from `x0` to `xT` with `n_points` samples.
    pub fn path(&self, x0: &[f64], xt: &[f64], n_points: usize) -> Result<TransitionPath> {
        if n_points < 2 {
            return Err(Error::Config("a path needs at least two points".into()));
        }
        let times: Vec<f64> = (0..n_points).map(|k| k as f64 / (n_points - 1) as f64).collect();
        let pairs = Pairs {
            x0: Array2::from_shape_fn((n_points, x0.len()), |(_, j)| x0[j]),
            xt: Array2::from_shape_fn((n_points, xt.len()), |(_, j)| xt[j]),
        };
        let e = self.eval(&pairs, &times)?;
        TransitionPath::new(times, e.x)
    }
}

fn single(x0: &[f64], xt: &[f64]) -> Result<Pairs> {
    check_dim(x0.len(), xt.len())?;
    Ok(Pairs {
        x0: Array2::from_shape_vec((1, x0.len()), x0.to_vec()).unwrap(),
        xt: Array2::from_shape_vec((1, xt.len()), xt.to_vec()).unwrap(),
    })
}

/// Mean over rows of `1/2 |v|^2 + V`, with the surrogate evaluated at the
/// spline point (and velocity, for the metric potential).
pub fn spline_loss(
    spline: &SplineModel,
    pairs: &Pairs,
    t: &[f64],
    potential: &SurrogatePotential,
) -> Result<LossGrad> {
    let n = t.len() as f64;
    let e = spline.eval(pairs, t)?;
    let pot = potential.evaluate_batch(&pairs.x0, &pairs.xt, t, &e.x, &e.v)?;
    let kinetic = 0.5 * e.v.mapv(|a| a * a).sum();
    let loss = (kinetic + pot.values.sum()) / n;
    if !loss.is_finite() {
        return Err(Error::divergence("spline loss", 0));
    }
    let gx = pot.grad_x / n;
    let gv = (&e.v + &pot.grad_v) / n;
    let grad = spline.backprop(&e, &gx, &gv)?;
    Ok(LossGrad { loss, grad })
}

/// Replay loss: mean of `|x_phi - gamma_t|^2 + |v_phi|^2`. Row `i` evaluates
/// the spline on `pairs` row `i` and compares it with `paths[i]` linearly
/// interpolated at `t[i]`; the pairs need not be the paths' own endpoints.
pub fn replay_loss(spline: &SplineModel, pairs: &Pairs, paths: &[&TransitionPath], t: &[f64]) -> Result<LossGrad> {
    check_dim(paths.len(), t.len())?;
    check_dim(pairs.len(), t.len())?;
    if paths.is_empty() {
        return Err(Error::Config("replay loss needs at least one path".into()));
    }
    let n = t.len();
    let mut target = Array2::zeros((n, spline.dim()));
    for (i, (p, &s)) in paths.iter().zip(t).enumerate() {
        target.row_mut(i).assign(&Array1::from(p.state_at(s)));
    }
    let e = spline.eval(pairs, t)?;
    let resid = &e.x - &target;
    let loss = (resid.mapv(|a| a * a).sum() + e.v.mapv(|a| a * a).sum()) / n as f64;
    if !loss.is_finite() {
        return Err(Error::divergence("replay loss", 0));
    }
    let gx = resid * (2.0 / n as f64);
    let gv = &e.v * (2.0 / n as f64);
    let grad = spline.backprop(&e, &gx, &gv)?;
    Ok(LossGrad { loss, grad })
}
