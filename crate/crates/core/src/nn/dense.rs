use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParameterSet, Tensor};
use crate::error::{ensure_len, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize, len: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..len).map(|_| rng.random_range(-limit..=limit)).collect()
}

/// `out += W · x` for a row-major `[rows x cols]` block, reading columns
/// `col_offset..col_offset + x.len()` of a matrix with `stride` columns.
#[inline]
pub(crate) fn matvec_acc(w: &[f64], stride: usize, col_offset: usize, x: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * stride + col_offset..r * stride + col_offset + x.len()];
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(x) {
            acc += a * b;
        }
        *o += acc;
    }
}

/// `out += Wᵀ · dy` for a row-major `[rows x cols]` matrix.
#[inline]
pub(crate) fn matvec_t_acc(w: &[f64], cols: usize, dy: &[f64], out: &mut [f64]) {
    for (r, &d) in dy.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * d;
        }
    }
}

/// `gw += dy ⊗ x`.
#[inline]
pub(crate) fn outer_acc(gw: &mut [f64], dy: &[f64], x: &[f64]) {
    let cols = x.len();
    for (r, &d) in dy.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        let row = &mut gw[r * cols..(r + 1) * cols];
        for (g, xv) in row.iter_mut().zip(x) {
            *g += d * xv;
        }
    }
}

/// Fully connected layer `activation(W·x + b)`, `W` stored `[out x in]`.
#[derive(Clone, Debug)]
pub struct Dense {
    weight: ParamId,
    bias: ParamId,
    in_dim: usize,
    out_dim: usize,
    activation: Activation,
}

#[derive(Clone, Debug)]
pub struct DenseTrace {
    input: Vec<f64>,
    output: Vec<f64>,
}

impl Dense {
    /// Registers `{name}.weight` and `{name}.bias` in `params`.
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParameterSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::shape(format!("{name}: zero-sized layer {out_dim}x{in_dim}")));
        }
        let w = glorot_uniform(rng, in_dim, out_dim, in_dim * out_dim);
        let weight = params.insert(format!("{name}.weight"), Tensor::from_vec(&[out_dim, in_dim], w)?)?;
        let bias = params.insert(format!("{name}.bias"), Tensor::zeros(&[out_dim]))?;
        Ok(Dense {
            weight,
            bias,
            in_dim,
            out_dim,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weight_id(&self) -> ParamId {
        self.weight
    }

    pub fn bias_id(&self) -> ParamId {
        self.bias
    }

    pub fn forward(&self, params: &ParameterSet, input: &[f64]) -> Result<Vec<f64>> {
        ensure_len("dense input", input.len(), self.in_dim)?;
        let mut out = params.get(self.bias).data().to_vec();
        matvec_acc(params.get(self.weight).data(), self.in_dim, 0, input, &mut out);
        out.iter_mut().for_each(|v| *v = self.activation.apply(*v));
        Ok(out)
    }

    pub fn forward_traced(&self, params: &ParameterSet, input: &[f64]) -> Result<(Vec<f64>, DenseTrace)> {
        let output = self.forward(params, input)?;
        let trace = DenseTrace {
            input: input.to_vec(),
            output: output.clone(),
        };
        Ok((output, trace))
    }

    /// Pre-activation contribution of the leading `prefix.len()` inputs plus
    /// the bias. Combined with [`forward_from_partial`](Self::forward_from_partial)
    /// this scores many inputs sharing a prefix without recomputing it.
    pub fn prefix_partial(&self, params: &ParameterSet, prefix: &[f64]) -> Vec<f64> {
        let mut out = params.get(self.bias).data().to_vec();
        matvec_acc(params.get(self.weight).data(), self.in_dim, 0, prefix, &mut out);
        out
    }

    pub fn forward_from_partial(
        &self,
        params: &ParameterSet,
        partial: &[f64],
        prefix_len: usize,
        suffix: &[f64],
        out: &mut Vec<f64>,
    ) {
        debug_assert_eq!(prefix_len + suffix.len(), self.in_dim);
        out.clear();
        out.extend_from_slice(partial);
        matvec_acc(params.get(self.weight).data(), self.in_dim, prefix_len, suffix, out);
        out.iter_mut().for_each(|v| *v = self.activation.apply(*v));
    }

    /// Smallest `|W·x + b|` over units for a ReLU layer; infinite otherwise.
    pub fn kink_margin(&self, params: &ParameterSet, trace: &DenseTrace) -> f64 {
        if self.activation != Activation::Relu {
            return f64::INFINITY;
        }
        self.prefix_partial(params, &trace.input)
            .iter()
            .fold(f64::INFINITY, |m, z| m.min(z.abs()))
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the layer input.
    pub fn backward(
        &self,
        params: &ParameterSet,
        trace: &DenseTrace,
        upstream: &[f64],
        grads: &mut ParameterSet,
    ) -> Result<Vec<f64>> {
        ensure_len("dense upstream gradient", upstream.len(), self.out_dim)?;
        let delta: Vec<f64> = upstream
            .iter()
            .zip(&trace.output)
            .map(|(g, &y)| g * self.activation.derivative_from_output(y))
            .collect();
        outer_acc(grads.get_mut(self.weight).data_mut(), &delta, &trace.input);
        for (b, d) in grads.get_mut(self.bias).data_mut().iter_mut().zip(&delta) {
            *b += d;
        }
        let mut dx = vec![0.0; self.in_dim];
        matvec_t_acc(params.get(self.weight).data(), self.in_dim, &delta, &mut dx);
        Ok(dx)
    }
}

/// A stack of dense layers; hidden layers share one activation.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<Dense>,
}

#[derive(Clone, Debug)]
pub struct MlpTrace {
    layers: Vec<DenseTrace>,
}

impl Mlp {
    pub fn kink_margin(&self, params: &ParameterSet, trace: &MlpTrace) -> f64 {
        self.layers
            .iter()
            .zip(&trace.layers)
            .fold(f64::INFINITY, |m, (l, t)| m.min(l.kink_margin(params, t)))
    }

    /// `sizes = [in, hidden.., out]`.
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParameterSet,
        name: &str,
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::shape(format!("{name}: an MLP needs at least two sizes")));
        }
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                Dense::new(params, &format!("{name}.l{i}"), sizes[i], sizes[i + 1], act, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Mlp { layers })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map(Dense::out_dim).unwrap_or(0)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn forward(&self, params: &ParameterSet, input: &[f64]) -> Result<Vec<f64>> {
        let mut x = self.layers[0].forward(params, input)?;
        for layer in &self.layers[1..] {
            x = layer.forward(params, &x)?;
        }
        Ok(x)
    }

    pub fn forward_traced(&self, params: &ParameterSet, input: &[f64]) -> Result<(Vec<f64>, MlpTrace)> {
        let mut traces = Vec::with_capacity(self.layers.len());
        let mut x = input.to_vec();
        for layer in &self.layers {
            let (y, t) = layer.forward_traced(params, &x)?;
            traces.push(t);
            x = y;
        }
        Ok((x, MlpTrace { layers: traces }))
    }

    pub fn backward(
        &self,
        params: &ParameterSet,
        trace: &MlpTrace,
        upstream: &[f64],
        grads: &mut ParameterSet,
    ) -> Result<Vec<f64>> {
        let mut g = upstream.to_vec();
        for (layer, t) in self.layers.iter().zip(&trace.layers).rev() {
            g = layer.backward(params, t, &g, grads)?;
        }
        Ok(g)
    }

    /// Evaluates a scalar-output MLP on `prefix ⊕ suffix` for every suffix,
    /// computing the prefix part of the first layer once.
    pub fn scalar_batch<'a>(
        &self,
        params: &ParameterSet,
        prefix: &[f64],
        suffixes: impl Iterator<Item = &'a [f64]>,
    ) -> Result<Vec<f64>> {
        let first = &self.layers[0];
        if self.out_dim() != 1 {
            return Err(Error::shape("scalar_batch needs a scalar-output network"));
        }
        let partial = first.prefix_partial(params, prefix);
        let mut h = Vec::with_capacity(first.out_dim());
        let mut scores = Vec::new();
        for suffix in suffixes {
            ensure_len("batched input", prefix.len() + suffix.len(), first.in_dim())?;
            first.forward_from_partial(params, &partial, prefix.len(), suffix, &mut h);
            let mut x = std::mem::take(&mut h);
            for layer in &self.layers[1..] {
                x = layer.forward(params, &x)?;
            }
            scores.push(x[0]);
            h = Vec::with_capacity(first.out_dim());
        }
        Ok(scores)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn layer_with(weight: Vec<f64>, bias: Vec<f64>, act: Activation) -> (ParameterSet, Dense) {
        let mut ps = ParameterSet::new();
        let out = bias.len();
        let inp = weight.len() / out;
        let mut rng = stream(0, "t", &[]);
        let d = Dense::new(&mut ps, "d", inp, out, act, &mut rng).unwrap();
        ps.get_mut(d.weight_id()).data_mut().copy_from_slice(&weight);
        ps.get_mut(d.bias_id()).data_mut().copy_from_slice(&bias);
        (ps, d)
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let (ps, d) = layer_with(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], Activation::Identity);
        assert_eq!(d.forward(&ps, &[0.3, -0.4]).unwrap(), vec![0.3, -0.4]);
    }

    #[test]
    fn relu_clamps_negative_preactivation() {
        let (ps, d) = layer_with(vec![1.0, 0.0, 0.0, 1.0], vec![-1.0, 0.0], Activation::Relu);
        assert_eq!(d.forward(&ps, &[0.5, 0.5]).unwrap(), vec![0.0, 0.5]);
    }

    #[test]
    fn random_layer_matches_reverse_order_dot_product() {
        let mut rng = stream(11, "dense-oracle", &[]);
        for _ in 0..20 {
            let mut ps = ParameterSet::new();
            let d = Dense::new(&mut ps, "d", 4, 3, Activation::Identity, &mut rng).unwrap();
            for v in ps.get_mut(d.bias_id()).data_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w = ps.get(d.weight_id()).data().to_vec();
            let b = ps.get(d.bias_id()).data().to_vec();
            let got = d.forward(&ps, &x).unwrap();
            for r in 0..3 {
                // Oracle sums from the last column backwards.
                let mut acc = 0.0;
                for c in (0..4).rev() {
                    acc += w[r * 4 + c] * x[c];
                }
                acc += b[r];
                assert!((got[r] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_backward_is_linear() {
        let (ps, d) = layer_with(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], Activation::Identity);
        let x = [0.2, -0.7];
        let (_, trace) = d.forward_traced(&ps, &x).unwrap();
        let mut grads = ps.zeros_like();
        let g = [1.5, -2.0];
        let dx = d.backward(&ps, &trace, &g, &mut grads).unwrap();
        assert_eq!(dx, vec![1.5, -2.0]);
        let gw = grads.get(d.weight_id()).data();
        assert_eq!(gw, &[1.5 * 0.2, 1.5 * -0.7, -2.0 * 0.2, -2.0 * -0.7]);
    }

    #[test]
    fn shape_errors_are_reported() {
        let (ps, d) = layer_with(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], Activation::Identity);
        assert!(matches!(d.forward(&ps, &[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn batched_scoring_matches_plain_forward() {
        let mut rng = stream(5, "mlp", &[]);
        let mut ps = ParameterSet::new();
        let mlp = Mlp::new(&mut ps, "m", &[7, 9, 1], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let prefix = [0.1, -0.2, 0.3, 0.05];
        let suffixes: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let batch = mlp
            .scalar_batch(&ps, &prefix, suffixes.iter().map(Vec::as_slice))
            .unwrap();
        for (s, got) in suffixes.iter().zip(batch) {
            let full: Vec<f64> = prefix.iter().chain(s).copied().collect();
            let want = mlp.forward(&ps, &full).unwrap()[0];
            assert!((got - want).abs() < 1e-12);
        }
    }
}
