//! Marginal velocity field `v(x, t)`, the flow-matching regression onto
//! spline velocities, and fixed-step ODE integration.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::coupling::Pairs;
use crate::error::{check_dim, Error, Result};
use crate::neural::Mlp;

use super::path::TransitionPath;
use super::spline::{LossGrad, SplineModel};

/// A time-dependent vector field evaluated on a batch of states (one per row).
pub trait VelocityField: Sync {
    fn velocity(&self, x: &Array2<f64>, t: f64) -> Result<Array2<f64>>;

    /// Row `i` evaluated at time `t[i]`.
    fn velocity_rows(&self, x: &Array2<f64>, t: &[f64]) -> Result<Array2<f64>> {
        check_dim(x.nrows(), t.len())?;
        let mut out = Array2::zeros(x.raw_dim());
        for (i, &s) in t.iter().enumerate() {
            let row = x.slice(ndarray::s![i..i + 1, ..]).to_owned();
            out.row_mut(i).assign(&self.velocity(&row, s)?.row(0));
        }
        Ok(out)
    }
}

impl<F> VelocityField for F
where
    F: Fn(&Array2<f64>, f64) -> Result<Array2<f64>> + Sync,
{
    fn velocity(&self, x: &Array2<f64>, t: f64) -> Result<Array2<f64>> {
        self(x, t)
    }
}

/// The same vector everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantField(pub Vec<f64>);

impl VelocityField for ConstantField {
    fn velocity(&self, x: &Array2<f64>, _t: f64) -> Result<Array2<f64>> {
        check_dim(self.0.len(), x.ncols())?;
        Ok(Array2::from_shape_fn(x.raw_dim(), |(_, j)| self.0[j]))
    }
}

/// Network `(x, t) -> R^dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityModel {
    pub net: Mlp,
}

impl VelocityModel {
    pub fn new(dim: usize, hidden: usize, depth: usize, seed: u64) -> Result<Self> {
        let mut dims = vec![dim + 1];
        dims.extend(std::iter::repeat_n(hidden, depth));
        dims.push(dim);
        Ok(Self { net: Mlp::new(&dims, seed)? })
    }

    pub fn from_net(net: Mlp) -> Result<Self> {
        check_dim(net.output_dim() + 1, net.input_dim())?;
        Ok(Self { net })
    }

    pub fn dim(&self) -> usize {
        self.net.output_dim()
    }

    fn inputs(&self, x: &Array2<f64>, t: &[f64]) -> Result<Array2<f64>> {
        check_dim(self.dim(), x.ncols())?;
        check_dim(x.nrows(), t.len())?;
        let mut inp = Array2::zeros((x.nrows(), x.ncols() + 1));
        inp.slice_mut(ndarray::s![.., ..x.ncols()]).assign(x);
        inp.column_mut(x.ncols()).assign(&Array1::from(t.to_vec()));
        Ok(inp)
    }
}

impl VelocityField for VelocityModel {
    fn velocity(&self, x: &Array2<f64>, t: f64) -> Result<Array2<f64>> {
        self.velocity_rows(x, &vec![t; x.nrows()])
    }

    fn velocity_rows(&self, x: &Array2<f64>, t: &[f64]) -> Result<Array2<f64>> {
        self.net.forward_batch(self.inputs(x, t)?.view())
    }
}

/// Mean of `|v(x_i, t_i) - target_i|^2`, with gradients for the velocity network only.
pub fn regression_loss(model: &VelocityModel, x: &Array2<f64>, t: &[f64], target: &Array2<f64>) -> Result<LossGrad> {
    let n = t.len() as f64;
    let trace = model.net.forward_trace(model.inputs(x, t)?.view())?;
    let resid = &trace.output - target;
    let loss = resid.mapv(|a| a * a).sum() / n;
    if !loss.is_finite() {
        return Err(Error::divergence("flow loss", 0));
    }
    let grad = model.net.backward(&trace, (resid * (2.0 / n)).view())?.params;
    Ok(LossGrad { loss, grad })
}

/// Flow matching against the spline: the spline is only read, so no gradient
/// reaches its parameters.
pub fn flow_loss(model: &VelocityModel, spline: &SplineModel, pairs: &Pairs, t: &[f64]) -> Result<LossGrad> {
    let e = spline.eval(pairs, t)?;
    regression_loss(model, &e.x, t, &e.v)
}

/// Flow matching against straight-line interpolants.
pub fn linear_flow_loss(model: &VelocityModel, pairs: &Pairs, t: &[f64]) -> Result<LossGrad> {
    check_dim(pairs.len(), t.len())?;
    let tc = Array1::from(t.to_vec()).insert_axis(Axis(1));
    let x = &pairs.x0 * &tc.mapv(|s| 1.0 - s) + &pairs.xt * &tc;
    let v = &pairs.xt - &pairs.x0;
    regression_loss(model, &x, t, &v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    Euler,
    #[default]
    Rk4,
}

impl std::str::FromStr for Integrator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Self::Euler),
            "rk4" => Ok(Self::Rk4),
            other => Err(Error::Config(format!("unknown integrator `{other}`"))),
        }
    }
}

fn step(field: &dyn VelocityField, x: &Array2<f64>, t: f64, h: f64, method: Integrator) -> Result<Array2<f64>> {
    Ok(match method {
        Integrator::Euler => x + &(field.velocity(x, t)? * h),
        Integrator::Rk4 => {
            let k1 = field.velocity(x, t)?;
            let k2 = field.velocity(&(x + &(&k1 * (0.5 * h))), t + 0.5 * h)?;
            let k3 = field.velocity(&(x + &(&k2 * (0.5 * h))), t + 0.5 * h)?;
            let k4 = field.velocity(&(x + &(&k3 * h)), t + h)?;
            x + &((k1 + &k2 * 2.0 + &k3 * 2.0 + k4) * (h / 6.0))
        }
    })
}

/// Integrate every row of `x0` over `[0, 1]` in `n_steps` uniform steps,
/// calling `visit(k, states)` for each grid index including 0.
fn integrate_visit(
    field: &dyn VelocityField,
    x0: &Array2<f64>,
    n_steps: usize,
    method: Integrator,
    mut visit: impl FnMut(usize, &Array2<f64>),
) -> Result<Array2<f64>> {
    if n_steps == 0 {
        return Err(Error::Config("ODE integration needs at least one step".into()));
    }
    let h = 1.0 / n_steps as f64;
    let mut x = x0.clone();
    visit(0, &x);
    for k in 0..n_steps {
        x = step(field, &x, k as f64 * h, h, method)?;
        if x.iter().any(|a| !a.is_finite()) {
            return Err(Error::divergence("ODE integration", k + 1));
        }
        visit(k + 1, &x);
    }
    Ok(x)
}

/// Final states only.
pub fn integrate_endpoints(
    field: &dyn VelocityField,
    x0: &Array2<f64>,
    n_steps: usize,
    method: Integrator,
) -> Result<Array2<f64>> {
    integrate_visit(field, x0, n_steps, method, |_, _| {})
}

/// One path per row of `x0`, each with `n_steps + 1` states.
pub fn integrate_paths(
    field: &dyn VelocityField,
    x0: &Array2<f64>,
    n_steps: usize,
    method: Integrator,
) -> Result<Vec<TransitionPath>> {
    let (n, d) = x0.dim();
    let mut states = vec![Array2::zeros((n_steps + 1, d)); n];
    integrate_visit(field, x0, n_steps, method, |k, x| {
        for (i, s) in states.iter_mut().enumerate() {
            s.row_mut(k).assign(&x.row(i));
        }
    })?;
    let times: Vec<f64> = (0..=n_steps).map(|k| k as f64 / n_steps as f64).collect();
    states.into_iter().map(|s| TransitionPath::new(times.clone(), s)).collect()
}

pub fn integrate_path(
    field: &dyn VelocityField,
    x0: &[f64],
    n_steps: usize,
    method: Integrator,
) -> Result<TransitionPath> {
    let x = Array2::from_shape_vec((1, x0.len()), x0.to_vec()).unwrap();
    Ok(integrate_paths(field, &x, n_steps, method)?.remove(0))
}
