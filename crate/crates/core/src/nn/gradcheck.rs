//! Central finite-difference checking of analytic gradients.

use rand::seq::index::sample;
use rand::Rng;

use super::dense::{Dense, DenseTrace, Mlp, MlpTrace};
use super::gru::{GruCell, GruTrace};
use super::params::{ParamId, ParameterSet};
use crate::error::{Error, Result};

/// A differentiable map from one input vector to one output vector whose
/// parameters live in a [`ParameterSet`].
pub trait Block {
    type Trace;

    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;

    fn forward_traced(&self, params: &ParameterSet, input: &[f64]) -> Result<(Vec<f64>, Self::Trace)>;

    /// Contracts `upstream` with the Jacobians: returns the input gradient and
    /// accumulates parameter gradients into `grads`.
    fn backward(
        &self,
        params: &ParameterSet,
        trace: &Self::Trace,
        upstream: &[f64],
        grads: &mut ParameterSet,
    ) -> Result<Vec<f64>>;

    /// Distance of the nearest ReLU pre-activation from zero at the traced
    /// point. Smooth blocks keep the infinite default.
    fn kink_margin(&self, _params: &ParameterSet, _trace: &Self::Trace) -> f64 {
        f64::INFINITY
    }
}

impl Block for Dense {
    type Trace = DenseTrace;

    fn input_dim(&self) -> usize {
        self.in_dim()
    }

    fn output_dim(&self) -> usize {
        self.out_dim()
    }

    fn forward_traced(&self, params: &ParameterSet, input: &[f64]) -> Result<(Vec<f64>, DenseTrace)> {
        Dense::forward_traced(self, params, input)
    }

    fn backward(&self, params: &ParameterSet, trace: &DenseTrace, upstream: &[f64], grads: &mut ParameterSet) -> Result<Vec<f64>> {
        Dense::backward(self, params, trace, upstream, grads)
    }

    fn kink_margin(&self, params: &ParameterSet, trace: &DenseTrace) -> f64 {
        Dense::kink_margin(self, params, trace)
    }
}

impl Block for Mlp {
    type Trace = MlpTrace;

    fn input_dim(&self) -> usize {
        self.in_dim()
    }

    fn output_dim(&self) -> usize {
        self.out_dim()
    }

    fn forward_traced(&self, params: &ParameterSet, input: &[f64]) -> Result<(Vec<f64>, MlpTrace)> {
        Mlp::forward_traced(self, params, input)
    }

    fn backward(&self, params: &ParameterSet, trace: &MlpTrace, upstream: &[f64], grads: &mut ParameterSet) -> Result<Vec<f64>> {
        Mlp::backward(self, params, trace, upstream, grads)
    }

    fn kink_margin(&self, params: &ParameterSet, trace: &MlpTrace) -> f64 {
        Mlp::kink_margin(self, params, trace)
    }
}

/// GRU step seen as a block over `hidden ⊕ input`.
impl Block for GruCell {
    type Trace = GruTrace;

    fn input_dim(&self) -> usize {
        self.hidden_dim() + self.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.hidden_dim()
    }

    fn forward_traced(&self, params: &ParameterSet, input: &[f64]) -> Result<(Vec<f64>, GruTrace)> {
        crate::error::ensure_len("gru block input", input.len(), Block::input_dim(self))?;
        let (h, x) = input.split_at(self.hidden_dim());
        self.step_traced(params, h, x)
    }

    fn backward(&self, params: &ParameterSet, trace: &GruTrace, upstream: &[f64], grads: &mut ParameterSet) -> Result<Vec<f64>> {
        let (mut dh, dx) = GruCell::backward(self, params, trace, upstream, grads)?;
        dh.extend(dx);
        Ok(dh)
    }
}

/// Per-evaluation cache around a block: `backward` needs the trace left by a
/// preceding `forward`.
pub struct BlockContext<'b, B: Block> {
    block: &'b B,
    trace: Option<B::Trace>,
}

impl<'b, B: Block> BlockContext<'b, B> {
    pub fn new(block: &'b B) -> Self {
        BlockContext { block, trace: None }
    }

    pub fn forward(&mut self, params: &ParameterSet, input: &[f64]) -> Result<Vec<f64>> {
        let (out, trace) = self.block.forward_traced(params, input)?;
        self.trace = Some(trace);
        Ok(out)
    }

    /// Consumes the cached trace.
    pub fn backward(&mut self, params: &ParameterSet, upstream: &[f64]) -> Result<(Vec<f64>, ParameterSet)> {
        let trace = self
            .trace
            .take()
            .ok_or_else(|| Error::State("backward called without a cached forward pass".into()))?;
        let mut grads = params.zeros_like();
        let dx = self.block.backward(params, &trace, upstream, &mut grads)?;
        Ok((dx, grads))
    }
}

/// `|a − n| / max(|a|, |n|, 1e−6)`.
///
/// The floor sits above the rounding noise of a central difference at
/// ε = 1e−5 (about 1e−11 for objectives of order one), so gradients that are
/// numerically zero do not register as mismatches.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Parameter coordinates probed per random probe (all input coordinates are
/// always probed).
pub const PARAMS_PER_PROBE: usize = 24;

/// Probes whose nearest ReLU pre-activation is closer to zero than this are
/// redrawn: a central difference straddling the kink measures neither slope.
pub const KINK_MARGIN: f64 = 1e-3;

const MAX_REDRAWS: usize = 1000;

fn draw_away_from_kinks<B: Block, R: Rng + ?Sized>(block: &B, params: &ParameterSet, rng: &mut R) -> Result<Vec<f64>> {
    for _ in 0..MAX_REDRAWS {
        let x: Vec<f64> = (0..block.input_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, trace) = block.forward_traced(params, &x)?;
        if block.kink_margin(params, &trace) >= KINK_MARGIN {
            return Ok(x);
        }
    }
    Err(Error::Argument(format!(
        "no probe input with ReLU margin ≥ {KINK_MARGIN} in {MAX_REDRAWS} draws"
    )))
}

/// Largest relative error between analytic and central-difference gradients
/// of `u · block(x)` over `probe_count` random `(x, u)` probes.
///
/// Inputs and upstream vectors are drawn uniformly from `[-1, 1]`, inputs
/// at least [`KINK_MARGIN`] away from any ReLU kink. Every input
/// coordinate is checked on every probe; parameter coordinates are sampled,
/// [`PARAMS_PER_PROBE`] per probe. `params` is restored before returning.
pub fn gradient_check<B: Block, R: Rng + ?Sized>(
    block: &B,
    params: &mut ParameterSet,
    probe_count: usize,
    epsilon: f64,
    rng: &mut R,
) -> Result<f64> {
    if probe_count == 0 {
        return Err(Error::Argument("probe_count must be at least 1".into()));
    }
    let coords: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(i, (_, t))| (0..t.len()).map(move |k| (i, k)))
        .collect();
    let mut worst = 0.0f64;
    for _ in 0..probe_count {
        let x = draw_away_from_kinks(block, params, rng)?;
        let u: Vec<f64> = (0..block.output_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut ctx = BlockContext::new(block);
        ctx.forward(params, &x)?;
        let (dx, grads) = ctx.backward(params, &u)?;

        let objective = |ps: &ParameterSet, input: &[f64]| -> Result<f64> {
            let (y, _) = block.forward_traced(ps, input)?;
            Ok(y.iter().zip(&u).map(|(a, b)| a * b).sum())
        };

        let mut xp = x.clone();
        for k in 0..x.len() {
            xp[k] = x[k] + epsilon;
            let plus = objective(params, &xp)?;
            xp[k] = x[k] - epsilon;
            let minus = objective(params, &xp)?;
            xp[k] = x[k];
            worst = worst.max(relative_error(dx[k], (plus - minus) / (2.0 * epsilon)));
        }

        let picks = PARAMS_PER_PROBE.min(coords.len());
        for idx in sample(rng, coords.len(), picks) {
            let (ti, k) = coords[idx];
            let id = ParamId(ti);
            let original = params.get(id).data()[k];
            params.get_mut(id).data_mut()[k] = original + epsilon;
            let plus = objective(params, &x)?;
            params.get_mut(id).data_mut()[k] = original - epsilon;
            let minus = objective(params, &x)?;
            params.get_mut(id).data_mut()[k] = original;
            let analytic = grads.get(id).data()[k];
            worst = worst.max(relative_error(analytic, (plus - minus) / (2.0 * epsilon)));
        }
    }
    Ok(worst)
}

/// Checks an analytic gradient of a scalar function of the parameters against
/// central differences on `samples` randomly chosen coordinates (all of them
/// when `samples` is `None`).
pub fn check_parameter_gradient<F, R>(
    loss: F,
    params: &mut ParameterSet,
    analytic: &ParameterSet,
    samples: Option<usize>,
    epsilon: f64,
    rng: &mut R,
) -> Result<f64>
where
    F: Fn(&ParameterSet) -> Result<f64>,
    R: Rng + ?Sized,
{
    params.ensure_congruent(analytic)?;
    let coords: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(i, (_, t))| (0..t.len()).map(move |k| (i, k)))
        .collect();
    let chosen: Vec<usize> = match samples {
        Some(n) if n < coords.len() => sample(rng, coords.len(), n).into_vec(),
        _ => (0..coords.len()).collect(),
    };
    let mut worst = 0.0f64;
    for idx in chosen {
        let (ti, k) = coords[idx];
        let id = ParamId(ti);
        let original = params.get(id).data()[k];
        params.get_mut(id).data_mut()[k] = original + epsilon;
        let plus = loss(params);
        params.get_mut(id).data_mut()[k] = original - epsilon;
        let minus = loss(params);
        params.get_mut(id).data_mut()[k] = original;
        let numeric = (plus? - minus?) / (2.0 * epsilon);
        let name = params.name(id).to_string();
        let a = analytic
            .by_name(&name)
            .expect("congruent sets share names")
            .data()[k];
        worst = worst.max(relative_error(a, numeric));
    }
    Ok(worst)
}
