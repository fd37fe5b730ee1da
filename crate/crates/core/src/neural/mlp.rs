use ndarray::{s, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};

pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;
pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;

#[inline]
pub fn selu(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA * x
    } else {
        SELU_LAMBDA * SELU_ALPHA * (x.exp() - 1.0)
    }
}

/// First derivative; at exactly zero the positive branch is used.
#[inline]
pub fn selu_prime(x: f64) -> f64 {
    if x >= 0.0 {
        SELU_LAMBDA
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp()
    }
}

#[inline]
pub fn selu_second(x: f64) -> f64 {
    if x >= 0.0 {
        0.0
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp()
    }
}

/// Fully connected network with SELU on hidden layers and a linear output.
///
/// All parameters live in one flat buffer. Layer `l` stores its weight matrix
/// (`dims[l+1] x dims[l]`, row-major) followed by its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    params: Vec<f64>,
}

/// Cached activations from a forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct Trace {
    /// Input to each layer; `inputs[0]` is the network input.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of each layer.
    pre: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

/// Forward pass carrying a tangent direction alongside the values.
#[derive(Debug, Clone)]
pub struct DualTrace {
    inputs: Vec<Array2<f64>>,
    tangents: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    pre_tangent: Vec<Array2<f64>>,
    pub output: Array2<f64>,
    /// Directional derivative of the output.
    pub output_tangent: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    /// Flat, laid out like [`Mlp::params`].
    pub params: Vec<f64>,
    pub input: Array2<f64>,
}

impl Mlp {
    /// Build a network with PyTorch-style uniform initialisation,
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for weights and biases.
    pub fn new(dims: &[usize], seed: u64) -> Result<Self> {
        let mut net = Self::zeros(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in 0..net.n_layers() {
            let bound = 1.0 / (dims[l] as f64).sqrt();
            let (off, len) = (net.weight_offset(l), dims[l] * dims[l + 1] + dims[l + 1]);
            for p in &mut net.params[off..off + len] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Config(format!("invalid layer dims {dims:?}")));
        }
        let n = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Self {
            dims: dims.to_vec(),
            params: vec![0.0; n],
        })
    }

    pub fn from_params(dims: &[usize], params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(dims)?;
        check_dim(net.params.len(), params.len())?;
        net.params = params;
        Ok(net)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn weight_offset(&self, layer: usize) -> usize {
        self.dims[..=layer].windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn weight(&self, layer: usize) -> ArrayView2<'_, f64> {
        let (i, o) = (self.dims[layer], self.dims[layer + 1]);
        let off = self.weight_offset(layer);
        ArrayView2::from_shape((o, i), &self.params[off..off + o * i]).unwrap()
    }

    pub fn bias(&self, layer: usize) -> ArrayView1<'_, f64> {
        let (i, o) = (self.dims[layer], self.dims[layer + 1]);
        let off = self.weight_offset(layer) + o * i;
        ArrayView1::from(&self.params[off..off + o])
    }

    fn is_hidden(&self, layer: usize) -> bool {
        layer + 1 < self.n_layers()
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        check_dim(self.input_dim(), x.ncols())
    }

    /// Evaluate a single input vector.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim(), x.len())?;
        let x = ArrayView2::from_shape((1, x.len()), x).unwrap();
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }

    /// Evaluate a batch, one sample per row.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let mut a = x.to_owned();
        for l in 0..self.n_layers() {
            let mut z = a.dot(&self.weight(l).t());
            z += &self.bias(l);
            if self.is_hidden(l) {
                z.mapv_inplace(selu);
            }
            a = z;
        }
        Ok(a)
    }

    pub fn forward_trace(&self, x: ArrayView2<f64>) -> Result<Trace> {
        self.check_input(&x)?;
        let mut inputs = Vec::with_capacity(self.n_layers());
        let mut pre = Vec::with_capacity(self.n_layers());
        let mut a = x.to_owned();
        for l in 0..self.n_layers() {
            let mut z = a.dot(&self.weight(l).t());
            z += &self.bias(l);
            let next = if self.is_hidden(l) { z.mapv(selu) } else { z.clone() };
            inputs.push(a);
            pre.push(z);
            a = next;
        }
        Ok(Trace { inputs, pre, output: a })
    }

    /// Reverse-mode gradients of `sum(upstream * output)`.
    pub fn backward(&self, trace: &Trace, upstream: ArrayView2<f64>) -> Result<Gradients> {
        check_dim(self.output_dim(), upstream.ncols())?;
        check_dim(trace.output.nrows(), upstream.nrows())?;
        let mut grads = vec![0.0; self.params.len()];
        let mut g = upstream.to_owned();
        for l in (0..self.n_layers()).rev() {
            if self.is_hidden(l) {
                ndarray::Zip::from(&mut g).and(&trace.pre[l]).for_each(|g, &z| *g *= selu_prime(z));
            }
            self.accumulate(&mut grads, l, &g, &trace.inputs[l], None);
            g = g.dot(&self.weight(l));
        }
        Ok(Gradients { params: grads, input: g })
    }

    fn accumulate(
        &self,
        grads: &mut [f64],
        layer: usize,
        gz: &Array2<f64>,
        input: &Array2<f64>,
        tangent: Option<(&Array2<f64>, &Array2<f64>)>,
    ) {
        let (i, o) = (self.dims[layer], self.dims[layer + 1]);
        let off = self.weight_offset(layer);
        let (wpart, rest) = grads[off..off + o * i + o].split_at_mut(o * i);
        let mut gw = ndarray::ArrayViewMut2::from_shape((o, i), wpart).unwrap();
        gw += &gz.t().dot(input);
        let mut gb = ndarray::ArrayViewMut1::from(rest);
        gb += &gz.sum_axis(Axis(0));
        if let Some((gzt, input_t)) = tangent {
            gw += &gzt.t().dot(input_t);
        }
    }

    /// Forward pass that also propagates the tangent `direction` (same shape as `x`).
    pub fn forward_dual(&self, x: ArrayView2<f64>, direction: ArrayView2<f64>) -> Result<DualTrace> {
        self.check_input(&x)?;
        check_dim(x.nrows(), direction.nrows())?;
        check_dim(x.ncols(), direction.ncols())?;
        let n = self.n_layers();
        let mut trace = DualTrace {
            inputs: Vec::with_capacity(n),
            tangents: Vec::with_capacity(n),
            pre: Vec::with_capacity(n),
            pre_tangent: Vec::with_capacity(n),
            output: Array2::zeros((0, 0)),
            output_tangent: Array2::zeros((0, 0)),
        };
        let mut a = x.to_owned();
        let mut at = direction.to_owned();
        for l in 0..n {
            let w = self.weight(l);
            let mut z = a.dot(&w.t());
            z += &self.bias(l);
            let zt = at.dot(&w.t());
            let (next, next_t) = if self.is_hidden(l) {
                let mut nt = zt.clone();
                ndarray::Zip::from(&mut nt).and(&z).for_each(|t, &zz| *t *= selu_prime(zz));
                (z.mapv(selu), nt)
            } else {
                (z.clone(), zt.clone())
            };
            trace.inputs.push(a);
            trace.tangents.push(at);
            trace.pre.push(z);
            trace.pre_tangent.push(zt);
            a = next;
            at = next_t;
        }
        trace.output = a;
        trace.output_tangent = at;
        Ok(trace)
    }

    /// Reverse-mode gradients of `sum(g_out * output + g_tangent * output_tangent)`
    /// through a dual forward pass. The input gradient is with respect to the
    /// primal input only.
    pub fn backward_dual(
        &self,
        trace: &DualTrace,
        g_out: ArrayView2<f64>,
        g_tangent: ArrayView2<f64>,
    ) -> Result<Gradients> {
        check_dim(self.output_dim(), g_out.ncols())?;
        check_dim(self.output_dim(), g_tangent.ncols())?;
        check_dim(trace.output.nrows(), g_out.nrows())?;
        check_dim(trace.output.nrows(), g_tangent.nrows())?;
        let mut grads = vec![0.0; self.params.len()];
        let mut g = g_out.to_owned();
        let mut gt = g_tangent.to_owned();
        for l in (0..self.n_layers()).rev() {
            if self.is_hidden(l) {
                // a = selu(z), a' = selu'(z) z'
                ndarray::Zip::from(&mut g)
                    .and(&gt)
                    .and(&trace.pre[l])
                    .and(&trace.pre_tangent[l])
                    .for_each(|g, &gt, &z, &zt| *g = *g * selu_prime(z) + gt * selu_second(z) * zt);
                ndarray::Zip::from(&mut gt).and(&trace.pre[l]).for_each(|gt, &z| *gt *= selu_prime(z));
            }
            self.accumulate(&mut grads, l, &g, &trace.inputs[l], Some((&gt, &trace.tangents[l])));
            let w = self.weight(l);
            g = g.dot(&w);
            gt = gt.dot(&w);
        }
        Ok(Gradients { params: grads, input: g })
    }

    /// Exact derivative of every output with respect to input coordinate `index`.
    pub fn time_derivative(&self, x: &[f64], index: usize) -> Result<Vec<f64>> {
        check_dim(self.input_dim(), x.len())?;
        if index >= x.len() {
            return Err(Error::Config(format!("input index {index} out of range for {} inputs", x.len())));
        }
        let xv = ArrayView2::from_shape((1, x.len()), x).unwrap();
        let mut dir = Array2::zeros((1, x.len()));
        dir[[0, index]] = 1.0;
        let tr = self.forward_dual(xv, dir.view())?;
        Ok(tr.output_tangent.row(0).to_vec())
    }

    /// Per-layer views `(weight, bias)` for serialization.
    pub fn layers(&self) -> Vec<(ArrayView2<'_, f64>, ArrayView1<'_, f64>)> {
        (0..self.n_layers()).map(|l| (self.weight(l), self.bias(l))).collect()
    }
}

/// A tangent that is one along `index` and zero elsewhere, for `n` rows.
pub fn unit_direction(n: usize, cols: usize, index: usize) -> Array2<f64> {
    let mut d = Array2::zeros((n, cols));
    d.slice_mut(s![.., index]).fill(1.0);
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand_distr::{Distribution, StandardNormal};

    fn random_input(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, d), |_| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn zero_net_outputs_output_bias() {
        let mut net = Mlp::zeros(&[3, 4, 2]).unwrap();
        let n = net.n_params();
        net.params_mut()[n - 2] = 0.5;
        net.params_mut()[n - 1] = -1.5;
        assert_eq!(net.forward(&[1.0, 2.0, 3.0]).unwrap(), vec![0.5, -1.5]);
    }

    #[test]
    fn identity_linear_net() {
        let net = Mlp::from_params(&[1, 1], vec![1.0, 0.0]).unwrap();
        assert_eq!(net.forward(&[3.0]).unwrap(), vec![3.0]);
    }

    #[test]
    fn shape_mismatch() {
        let net = Mlp::new(&[3, 4, 2], 0).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::Dimension { .. })));
        assert!(Mlp::zeros(&[3]).is_err());
    }

    #[test]
    fn selu_continuity_at_zero() {
        let eps = 1e-12;
        assert!((selu(eps) - selu(-eps)).abs() < 1e-11);
        assert_eq!(selu(0.0), 0.0);
        assert_eq!(selu_prime(0.0), SELU_LAMBDA);
    }

    #[test]
    fn linear_net_gradient_is_outer_product() {
        let net = Mlp::new(&[3, 2], 1).unwrap();
        let x = array![[1.0, -2.0, 0.5]];
        let up = array![[0.3, -0.7]];
        let tr = net.forward_trace(x.view()).unwrap();
        let g = net.backward(&tr, up.view()).unwrap();
        for o in 0..2 {
            for i in 0..3 {
                assert_eq!(g.params[o * 3 + i], up[[0, o]] * x[[0, i]]);
            }
            assert_eq!(g.params[6 + o], up[[0, o]]);
        }
    }

    #[test]
    fn zero_upstream_zero_gradient() {
        let net = Mlp::new(&[3, 8, 2], 2).unwrap();
        let x = random_input(4, 3, 3);
        let tr = net.forward_trace(x.view()).unwrap();
        let g = net.backward(&tr, Array2::zeros((4, 2)).view()).unwrap();
        assert!(g.params.iter().all(|&v| v == 0.0));
        assert!(g.input.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn trace_output_matches_forward() {
        let net = Mlp::new(&[5, 16, 16, 2], 4).unwrap();
        let x = random_input(7, 5, 5);
        let a = net.forward_batch(x.view()).unwrap();
        let b = net.forward_trace(x.view()).unwrap().output;
        let c = net.forward_dual(x.view(), unit_direction(7, 5, 4).view()).unwrap().output;
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn time_derivative_of_linear_net_is_weight_column() {
        let net = Mlp::new(&[3, 2], 6).unwrap();
        let d = net.time_derivative(&[0.1, 0.2, 0.3], 2).unwrap();
        assert_eq!(d, vec![net.weight(0)[[0, 2]], net.weight(0)[[1, 2]]]);
        assert!(net.time_derivative(&[0.1, 0.2, 0.3], 3).is_err());
    }

    #[test]
    fn time_derivative_zero_when_time_column_zero() {
        let mut net = Mlp::new(&[3, 8, 2], 7).unwrap();
        // zero the first-layer column feeding from input 2
        for o in 0..8 {
            net.params_mut()[o * 3 + 2] = 0.0;
        }
        let d = net.time_derivative(&[0.4, -0.2, 0.9], 2).unwrap();
        assert!(d.iter().all(|&v| v == 0.0));
    }
}
