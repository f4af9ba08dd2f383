use rand::Rng;

use super::dense::{glorot_uniform, matvec_acc, matvec_t_acc, outer_acc, sigmoid};
use super::params::{ParamId, ParameterSet, Tensor};
use crate::error::{ensure_len, Result};

#[derive(Clone, Copy, Debug)]
struct Gate {
    input: ParamId,
    recurrent: ParamId,
    bias: ParamId,
}

/// Gated recurrent unit:
///
/// ```text
/// z  = σ(Wz·x + Uz·h + bz)
/// r  = σ(Wr·x + Ur·h + br)
/// h̃  = tanh(Wh·x + Uh·(r ⊙ h) + bh)
/// h' = (1 − z) ⊙ h + z ⊙ h̃
/// ```
#[derive(Clone, Debug)]
pub struct GruCell {
    update: Gate,
    reset: Gate,
    candidate: Gate,
    input_dim: usize,
    hidden_dim: usize,
}

#[derive(Clone, Debug)]
pub struct GruTrace {
    input: Vec<f64>,
    hidden: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    reset_hidden: Vec<f64>,
    candidate: Vec<f64>,
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParameterSet,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(crate::Error::shape(format!("{name}: zero-sized GRU")));
        }
        let mut gate = |g: &str| -> Result<Gate> {
            let w = glorot_uniform(rng, input_dim, hidden_dim, hidden_dim * input_dim);
            let u = glorot_uniform(rng, hidden_dim, hidden_dim, hidden_dim * hidden_dim);
            Ok(Gate {
                input: params.insert(format!("{name}.{g}.input"), Tensor::from_vec(&[hidden_dim, input_dim], w)?)?,
                recurrent: params.insert(format!("{name}.{g}.recurrent"), Tensor::from_vec(&[hidden_dim, hidden_dim], u)?)?,
                bias: params.insert(format!("{name}.{g}.bias"), Tensor::zeros(&[hidden_dim]))?,
            })
        };
        let update = gate("update")?;
        let reset = gate("reset")?;
        let candidate = gate("candidate")?;
        Ok(GruCell {
            update,
            reset,
            candidate,
            input_dim,
            hidden_dim,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    /// Ids of (input matrix, recurrent matrix, bias) for the update, reset and
    /// candidate gates, in that order.
    pub fn gate_ids(&self) -> [(ParamId, ParamId, ParamId); 3] {
        [self.update, self.reset, self.candidate].map(|g| (g.input, g.recurrent, g.bias))
    }

    fn preactivation(&self, params: &ParameterSet, gate: Gate, x: &[f64], h: &[f64]) -> Vec<f64> {
        let mut a = params.get(gate.bias).data().to_vec();
        matvec_acc(params.get(gate.input).data(), self.input_dim, 0, x, &mut a);
        matvec_acc(params.get(gate.recurrent).data(), self.hidden_dim, 0, h, &mut a);
        a
    }

    pub fn step(&self, params: &ParameterSet, hidden: &[f64], input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.step_traced(params, hidden, input)?.0)
    }

    pub fn step_traced(&self, params: &ParameterSet, hidden: &[f64], input: &[f64]) -> Result<(Vec<f64>, GruTrace)> {
        ensure_len("gru hidden", hidden.len(), self.hidden_dim)?;
        ensure_len("gru input", input.len(), self.input_dim)?;
        let mut z = self.preactivation(params, self.update, input, hidden);
        z.iter_mut().for_each(|v| *v = sigmoid(*v));
        let mut r = self.preactivation(params, self.reset, input, hidden);
        r.iter_mut().for_each(|v| *v = sigmoid(*v));
        let reset_hidden: Vec<f64> = r.iter().zip(hidden).map(|(a, b)| a * b).collect();
        let mut candidate = self.preactivation(params, self.candidate, input, &reset_hidden);
        candidate.iter_mut().for_each(|v| *v = v.tanh());
        let next: Vec<f64> = (0..self.hidden_dim)
            .map(|k| (1.0 - z[k]) * hidden[k] + z[k] * candidate[k])
            .collect();
        let trace = GruTrace {
            input: input.to_vec(),
            hidden: hidden.to_vec(),
            z,
            r,
            reset_hidden,
            candidate,
        };
        Ok((next, trace))
    }

    /// Returns `(d hidden, d input)` and accumulates parameter gradients.
    pub fn backward(
        &self,
        params: &ParameterSet,
        trace: &GruTrace,
        upstream: &[f64],
        grads: &mut ParameterSet,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        ensure_len("gru upstream gradient", upstream.len(), self.hidden_dim)?;
        let n = self.hidden_dim;
        let mut dh = vec![0.0; n];
        let mut dx = vec![0.0; self.input_dim];
        let mut d_cand_pre = vec![0.0; n];
        let mut d_z_pre = vec![0.0; n];
        for k in 0..n {
            let g = upstream[k];
            let z = trace.z[k];
            let c = trace.candidate[k];
            dh[k] += g * (1.0 - z);
            d_cand_pre[k] = g * z * (1.0 - c * c);
            d_z_pre[k] = g * (c - trace.hidden[k]) * z * (1.0 - z);
        }

        // Candidate gate; its recurrent input is r ⊙ h.
        let mut d_reset_hidden = vec![0.0; n];
        self.accumulate_gate(params, grads, self.candidate, &d_cand_pre, &trace.input, &trace.reset_hidden, &mut dx, &mut d_reset_hidden);
        let mut d_r_pre = vec![0.0; n];
        for k in 0..n {
            dh[k] += d_reset_hidden[k] * trace.r[k];
            let r = trace.r[k];
            d_r_pre[k] = d_reset_hidden[k] * trace.hidden[k] * r * (1.0 - r);
        }
        self.accumulate_gate(params, grads, self.update, &d_z_pre, &trace.input, &trace.hidden, &mut dx, &mut dh);
        self.accumulate_gate(params, grads, self.reset, &d_r_pre, &trace.input, &trace.hidden, &mut dx, &mut dh);
        Ok((dh, dx))
    }

    #[allow(clippy::too_many_arguments)]
    fn accumulate_gate(
        &self,
        params: &ParameterSet,
        grads: &mut ParameterSet,
        gate: Gate,
        delta: &[f64],
        x: &[f64],
        h: &[f64],
        dx: &mut [f64],
        dh: &mut [f64],
    ) {
        outer_acc(grads.get_mut(gate.input).data_mut(), delta, x);
        outer_acc(grads.get_mut(gate.recurrent).data_mut(), delta, h);
        for (b, d) in grads.get_mut(gate.bias).data_mut().iter_mut().zip(delta) {
            *b += d;
        }
        matvec_t_acc(params.get(gate.input).data(), self.input_dim, delta, dx);
        matvec_t_acc(params.get(gate.recurrent).data(), self.hidden_dim, delta, dh);
    }
}
