use rand::Rng;

use crate::error::{ensure_len, Result};
use crate::nn::{Activation, Block, Mlp, MlpTrace, ParameterSet};

/// A scalar Q head. The dueling form reads the value stream from a prefix of
/// the advantage input: `Q(x) = V(x[..value_dim]) + A(x)`.
#[derive(Clone, Debug)]
pub enum QHead {
    Dueling { value: Mlp, advantage: Mlp },
    Single { q: Mlp },
}

pub struct QTrace {
    value: Option<MlpTrace>,
    main: MlpTrace,
}

fn sizes(input: usize, hidden: &[usize]) -> Vec<usize> {
    let mut s = vec![input];
    s.extend_from_slice(hidden);
    s.push(1);
    s
}

impl QHead {
    /// Registers `{name}.value.*` and `{name}.advantage.*`, or `{name}.q.*`
    /// for the single-stream form.
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParameterSet,
        name: &str,
        value_dim: usize,
        input_dim: usize,
        hidden: &[usize],
        dueling: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let mlp = |ps: &mut ParameterSet, stream: &str, d: usize, rng: &mut R| {
            let prefix = if name.is_empty() { stream.to_string() } else { format!("{name}.{stream}") };
            Mlp::new(ps, &prefix, &sizes(d, hidden), Activation::Relu, Activation::Identity, rng)
        };
        if dueling {
            let value = mlp(params, "value", value_dim, rng)?;
            let advantage = mlp(params, "advantage", input_dim, rng)?;
            Ok(QHead::Dueling { value, advantage })
        } else {
            Ok(QHead::Single {
                q: mlp(params, "q", input_dim, rng)?,
            })
        }
    }

    pub fn is_dueling(&self) -> bool {
        matches!(self, QHead::Dueling { .. })
    }

    pub fn input_dim(&self) -> usize {
        match self {
            QHead::Dueling { advantage, .. } => advantage.in_dim(),
            QHead::Single { q } => q.in_dim(),
        }
    }

    /// `(V, A)`; the single-stream head reports its output as `A` with `V = 0`.
    pub fn components(&self, params: &ParameterSet, input: &[f64]) -> Result<(f64, f64)> {
        ensure_len("q head input", input.len(), self.input_dim())?;
        match self {
            QHead::Dueling { value, advantage } => {
                let v = value.forward(params, &input[..value.in_dim()])?[0];
                Ok((v, advantage.forward(params, input)?[0]))
            }
            QHead::Single { q } => Ok((0.0, q.forward(params, input)?[0])),
        }
    }

    pub fn forward(&self, params: &ParameterSet, input: &[f64]) -> Result<f64> {
        let (v, a) = self.components(params, input)?;
        Ok(v + a)
    }

    pub fn forward_traced(&self, params: &ParameterSet, input: &[f64]) -> Result<(f64, QTrace)> {
        ensure_len("q head input", input.len(), self.input_dim())?;
        match self {
            QHead::Dueling { value, advantage } => {
                let (v, vt) = value.forward_traced(params, &input[..value.in_dim()])?;
                let (a, at) = advantage.forward_traced(params, input)?;
                Ok((v[0] + a[0], QTrace { value: Some(vt), main: at }))
            }
            QHead::Single { q } => {
                let (y, t) = q.forward_traced(params, input)?;
                Ok((y[0], QTrace { value: None, main: t }))
            }
        }
    }

    /// Gradient with respect to the full input for upstream `dq`.
    pub fn backward(&self, params: &ParameterSet, trace: &QTrace, dq: f64, grads: &mut ParameterSet) -> Result<Vec<f64>> {
        match self {
            QHead::Dueling { value, advantage } => {
                let mut dx = advantage.backward(params, &trace.main, &[dq], grads)?;
                let vt = trace.value.as_ref().expect("dueling trace carries the value stream");
                let dv = value.backward(params, vt, &[dq], grads)?;
                for (d, g) in dx.iter_mut().zip(dv) {
                    *d += g;
                }
                Ok(dx)
            }
            QHead::Single { q } => q.backward(params, &trace.main, &[dq], grads),
        }
    }

    /// Q for every `prefix ⊕ suffix`. For the dueling form `prefix` must be
    /// exactly the value-stream input.
    pub fn score_batch<'a>(
        &self,
        params: &ParameterSet,
        prefix: &[f64],
        suffixes: impl Iterator<Item = &'a [f64]>,
    ) -> Result<Vec<f64>> {
        match self {
            QHead::Dueling { value, advantage } => {
                ensure_len("value stream input", prefix.len(), value.in_dim())?;
                let v = value.forward(params, prefix)?[0];
                let mut scores = advantage.scalar_batch(params, prefix, suffixes)?;
                scores.iter_mut().for_each(|s| *s += v);
                Ok(scores)
            }
            QHead::Single { q } => q.scalar_batch(params, prefix, suffixes),
        }
    }
}

impl Block for QHead {
    type Trace = QTrace;

    fn input_dim(&self) -> usize {
        QHead::input_dim(self)
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn forward_traced(&self, params: &ParameterSet, input: &[f64]) -> Result<(Vec<f64>, QTrace)> {
        let (q, t) = QHead::forward_traced(self, params, input)?;
        Ok((vec![q], t))
    }

    fn backward(&self, params: &ParameterSet, trace: &QTrace, upstream: &[f64], grads: &mut ParameterSet) -> Result<Vec<f64>> {
        ensure_len("q head upstream", upstream.len(), 1)?;
        QHead::backward(self, params, trace, upstream[0], grads)
    }

    fn kink_margin(&self, params: &ParameterSet, trace: &QTrace) -> f64 {
        match (self, &trace.value) {
            (QHead::Dueling { value, advantage }, Some(v)) => value
                .kink_margin(params, v)
                .min(advantage.kink_margin(params, &trace.main)),
            (QHead::Dueling { advantage, .. }, None) => advantage.kink_margin(params, &trace.main),
            (QHead::Single { q }, _) => q.kink_margin(params, &trace.main),
        }
    }
}

/// Actor `μ: state → goal` and critic `Q(state ⊕ goal)` of the session level.
#[derive(Clone, Debug)]
pub struct SessionNets {
    pub actor: Mlp,
    pub critic: QHead,
    state_dim: usize,
}

pub struct ActorCriticTrace {
    actor: MlpTrace,
    critic: QTrace,
}

impl SessionNets {
    /// Registers `actor.*` and `critic.*`.
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParameterSet,
        state_dim: usize,
        goal_dim: usize,
        hidden: &[usize],
        dueling: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let mut actor_sizes = vec![state_dim];
        actor_sizes.extend_from_slice(hidden);
        actor_sizes.push(goal_dim);
        let actor = Mlp::new(params, "actor", &actor_sizes, Activation::Relu, Activation::Tanh, rng)?;
        let critic = QHead::new(params, "critic", state_dim, state_dim + goal_dim, hidden, dueling, rng)?;
        Ok(SessionNets {
            actor,
            critic,
            state_dim,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn goal_dim(&self) -> usize {
        self.actor.out_dim()
    }

    pub fn propose(&self, params: &ParameterSet, state: &[f64]) -> Result<Vec<f64>> {
        self.actor.forward(params, state)
    }

    pub fn q(&self, params: &ParameterSet, state: &[f64], goal: &[f64]) -> Result<f64> {
        self.critic.forward(params, &concat(state, goal))
    }
}

/// The composed path `state ↦ Q(state, μ(state))`.
impl Block for SessionNets {
    type Trace = ActorCriticTrace;

    fn input_dim(&self) -> usize {
        self.state_dim
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn forward_traced(&self, params: &ParameterSet, input: &[f64]) -> Result<(Vec<f64>, ActorCriticTrace)> {
        let (g, actor) = self.actor.forward_traced(params, input)?;
        let (q, critic) = self.critic.forward_traced(params, &concat(input, &g))?;
        Ok((vec![q], ActorCriticTrace { actor, critic }))
    }

    fn backward(
        &self,
        params: &ParameterSet,
        trace: &ActorCriticTrace,
        upstream: &[f64],
        grads: &mut ParameterSet,
    ) -> Result<Vec<f64>> {
        ensure_len("actor-critic upstream", upstream.len(), 1)?;
        let d_in = self.critic.backward(params, &trace.critic, upstream[0], grads)?;
        let (ds, dg) = d_in.split_at(self.state_dim);
        let through_actor = self.actor.backward(params, &trace.actor, dg, grads)?;
        Ok(ds.iter().zip(through_actor).map(|(a, b)| a + b).collect())
    }

    fn kink_margin(&self, params: &ParameterSet, trace: &ActorCriticTrace) -> f64 {
        self.actor
            .kink_margin(params, &trace.actor)
            .min(Block::kink_margin(&self.critic, params, &trace.critic))
    }
}

pub(crate) fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}
