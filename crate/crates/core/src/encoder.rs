//! Recurrent user-state encoder.
//!
//! The initial state is a tanh projection of the user's feature embedding;
//! each consumption feeds `item embedding ⊕ observed reward` through a GRU.

use rand::Rng;

use crate::env::EmbeddingVector;
use crate::error::{ensure_len, Error, Result};
use crate::nn::{Activation, Dense, DenseTrace, GruCell, GruTrace, ParameterSet};

#[derive(Clone, Debug, PartialEq)]
pub struct UserState {
    pub hidden: Vec<f64>,
    /// Number of consumptions folded into `hidden`.
    pub step: usize,
}

#[derive(Clone, Debug)]
pub struct StateEncoder {
    projection: Dense,
    gru: GruCell,
    embedding_dim: usize,
    include_reward: bool,
}

/// Where a truncated back-propagation window starts.
#[derive(Clone, Debug, PartialEq)]
pub enum WindowStart {
    /// From the user features, through the projection.
    Features(Vec<f64>),
    /// From a stored hidden state, treated as a constant.
    Hidden(Vec<f64>),
}

/// Enough history to recompute a state with gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct StateWindow {
    pub start: WindowStart,
    pub inputs: Vec<Vec<f64>>,
}

pub struct EncoderTrace {
    projection: Option<DenseTrace>,
    steps: Vec<GruTrace>,
}

impl StateEncoder {
    /// Registers `proj.*` and `gru.*` in `params`.
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParameterSet,
        embedding_dim: usize,
        state_dim: usize,
        include_reward: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let projection = Dense::new(params, "proj", embedding_dim, state_dim, Activation::Tanh, rng)?;
        let gru = GruCell::new(params, "gru", embedding_dim + usize::from(include_reward), state_dim, rng)?;
        Ok(StateEncoder {
            projection,
            gru,
            embedding_dim,
            include_reward,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.gru.hidden_dim()
    }

    pub fn includes_reward(&self) -> bool {
        self.include_reward
    }

    pub fn projection(&self) -> &Dense {
        &self.projection
    }

    pub fn gru(&self) -> &GruCell {
        &self.gru
    }

    pub fn gru_input(&self, item: &EmbeddingVector, reward: f64) -> Result<Vec<f64>> {
        ensure_len("item embedding", item.dim(), self.embedding_dim)?;
        let mut x = item.as_slice().to_vec();
        if self.include_reward {
            x.push(reward);
        }
        Ok(x)
    }

    pub fn init_state(&self, params: &ParameterSet, features: &EmbeddingVector) -> Result<UserState> {
        Ok(UserState {
            hidden: self.projection.forward(params, features.as_slice())?,
            step: 0,
        })
    }

    pub fn update_state(
        &self,
        params: &ParameterSet,
        state: &UserState,
        item: &EmbeddingVector,
        reward: f64,
    ) -> Result<UserState> {
        let x = self.gru_input(item, reward)?;
        Ok(UserState {
            hidden: self.gru.step(params, &state.hidden, &x)?,
            step: state.step + 1,
        })
    }

    /// Folds a whole consumption sequence from the initial state.
    pub fn replay<'a>(
        &self,
        params: &ParameterSet,
        features: &EmbeddingVector,
        sequence: impl IntoIterator<Item = (&'a EmbeddingVector, f64)>,
    ) -> Result<UserState> {
        let mut state = self.init_state(params, features)?;
        for (item, reward) in sequence {
            state = self.update_state(params, &state, item, reward)?;
        }
        Ok(state)
    }

    pub fn forward_window(&self, params: &ParameterSet, window: &StateWindow) -> Result<(Vec<f64>, EncoderTrace)> {
        let (mut h, projection) = match &window.start {
            WindowStart::Features(f) => {
                let (h, t) = self.projection.forward_traced(params, f)?;
                (h, Some(t))
            }
            WindowStart::Hidden(h) => {
                ensure_len("window start", h.len(), self.state_dim())?;
                (h.clone(), None)
            }
        };
        let mut steps = Vec::with_capacity(window.inputs.len());
        for x in &window.inputs {
            let (next, t) = self.gru.step_traced(params, &h, x)?;
            steps.push(t);
            h = next;
        }
        Ok((h, EncoderTrace { projection, steps }))
    }

    pub fn backward(
        &self,
        params: &ParameterSet,
        trace: &EncoderTrace,
        d_hidden: &[f64],
        grads: &mut ParameterSet,
    ) -> Result<()> {
        let mut dh = d_hidden.to_vec();
        for t in trace.steps.iter().rev() {
            dh = self.gru.backward(params, t, &dh, grads)?.0;
        }
        if let Some(p) = &trace.projection {
            self.projection.backward(params, p, &dh, grads)?;
        }
        Ok(())
    }
}

/// Per-user record of hidden-state snapshots and GRU inputs, from which
/// truncated windows are cut.
#[derive(Clone, Debug)]
pub struct StateTrajectory {
    features: Vec<f64>,
    hiddens: Vec<Vec<f64>>,
    inputs: Vec<Vec<f64>>,
}

impl StateTrajectory {
    pub fn start(encoder: &StateEncoder, params: &ParameterSet, features: &EmbeddingVector) -> Result<Self> {
        let init = encoder.init_state(params, features)?;
        Ok(StateTrajectory {
            features: features.as_slice().to_vec(),
            hiddens: vec![init.hidden],
            inputs: Vec::new(),
        })
    }

    pub fn current(&self) -> UserState {
        UserState {
            hidden: self.hiddens.last().expect("trajectory is never empty").clone(),
            step: self.inputs.len(),
        }
    }

    pub fn state_at(&self, step: usize) -> Result<UserState> {
        self.hiddens
            .get(step)
            .map(|h| UserState {
                hidden: h.clone(),
                step,
            })
            .ok_or_else(|| Error::Lookup(format!("no state after {step} consumptions")))
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn push(
        &mut self,
        encoder: &StateEncoder,
        params: &ParameterSet,
        item: &EmbeddingVector,
        reward: f64,
    ) -> Result<UserState> {
        let current = self.current();
        let x = encoder.gru_input(item, reward)?;
        let next = encoder.gru.step(params, &current.hidden, &x)?;
        self.inputs.push(x);
        self.hiddens.push(next);
        Ok(self.current())
    }

    /// The window reproducing the state after `step` consumptions, reaching
    /// back at most `horizon` GRU steps.
    pub fn window(&self, step: usize, horizon: usize) -> Result<StateWindow> {
        if step > self.inputs.len() {
            return Err(Error::Lookup(format!("no state after {step} consumptions")));
        }
        let reach = step.min(horizon);
        let first = step - reach;
        let start = if first == 0 {
            WindowStart::Features(self.features.clone())
        } else {
            WindowStart::Hidden(self.hiddens[first].clone())
        };
        Ok(StateWindow {
            start,
            inputs: self.inputs[first..step].to_vec(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::check_parameter_gradient;
    use crate::rng::stream;

    fn unit(v: &[f64]) -> EmbeddingVector {
        EmbeddingVector::normalized(v.to_vec()).unwrap()
    }

    fn setup(include_reward: bool) -> (ParameterSet, StateEncoder) {
        let mut ps = ParameterSet::new();
        let mut rng = stream(1, "enc", &[]);
        let enc = StateEncoder::new(&mut ps, 3, 5, include_reward, &mut rng).unwrap();
        (ps, enc)
    }

    fn random_items(n: usize, seed: u64) -> Vec<(EmbeddingVector, f64)> {
        let mut rng = stream(seed, "items", &[]);
        (0..n)
            .map(|_| {
                let v: Vec<f64> = (0..3).map(|_| rng.random_range(0.01..1.0)).collect();
                (unit(&v), rng.random_range(-2.0..3.0))
            })
            .collect()
    }

    #[test]
    fn zero_projection_gives_zero_state() {
        let (mut ps, enc) = setup(true);
        ps.fill(0.0);
        let s = enc.init_state(&ps, &unit(&[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(s.hidden, vec![0.0; 5]);
        assert_eq!(s.step, 0);
    }

    #[test]
    fn init_state_is_deterministic_and_bounded() {
        let (ps, enc) = setup(true);
        let f = unit(&[0.2, 0.9, 0.4]);
        let a = enc.init_state(&ps, &f).unwrap();
        let b = enc.init_state(&ps, &f).unwrap();
        assert_eq!(a, b);
        assert!(a.hidden.iter().all(|h| h.abs() < 1.0));
    }

    #[test]
    fn zero_gru_halves_hidden() {
        let (mut ps, enc) = setup(true);
        let s = enc.init_state(&ps, &unit(&[0.2, 0.9, 0.4])).unwrap();
        let [(a, b, c), (d, e, f), (g, h, i)] = enc.gru().gate_ids();
        for id in [a, b, c, d, e, f, g, h, i] {
            ps.get_mut(id).data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        let next = enc.update_state(&ps, &s, &unit(&[1.0, 0.0, 0.0]), 0.7).unwrap();
        for (n, h) in next.hidden.iter().zip(&s.hidden) {
            assert_eq!(*n, 0.5 * h);
        }
        assert_eq!(next.step, 1);
    }

    #[test]
    fn replay_equals_incremental_updates() {
        let (ps, enc) = setup(true);
        let f = unit(&[0.3, 0.3, 0.9]);
        let seq = random_items(12, 4);
        let mut state = enc.init_state(&ps, &f).unwrap();
        let mut traj = StateTrajectory::start(&enc, &ps, &f).unwrap();
        for (e, r) in &seq {
            state = enc.update_state(&ps, &state, e, *r).unwrap();
            let tracked = traj.push(&enc, &ps, e, *r).unwrap();
            assert_eq!(tracked, state);
        }
        let replayed = enc.replay(&ps, &f, seq.iter().map(|(e, r)| (e, *r))).unwrap();
        assert_eq!(replayed, state);
        assert!(replayed.hidden.iter().zip(&state.hidden).all(|(a, b)| a.to_bits() == b.to_bits()));
        // A window recomputes the stored state exactly.
        for step in [0, 3, 5, 12] {
            let w = traj.window(step, 5).unwrap();
            let (h, _) = enc.forward_window(&ps, &w).unwrap();
            assert_eq!(h, traj.state_at(step).unwrap().hidden);
        }
    }

    #[test]
    fn hidden_stays_inside_unit_box() {
        let (ps, enc) = setup(true);
        let seq = random_items(200, 9);
        let mut s = enc.init_state(&ps, &unit(&[1.0, 1.0, 1.0])).unwrap();
        for (e, r) in &seq {
            s = enc.update_state(&ps, &s, e, *r).unwrap();
            assert!(s.hidden.iter().all(|h| h.abs() < 1.0));
        }
        // Extreme rewards saturate the gates; rounding can then reach the boundary.
        for (e, r) in &seq {
            s = enc.update_state(&ps, &s, e, *r * 1e3).unwrap();
            assert!(s.hidden.iter().all(|h| h.abs() <= 1.0));
        }
    }

    #[test]
    fn reward_channel_can_be_dropped() {
        let (ps, enc) = setup(false);
        let e = unit(&[1.0, 0.0, 0.0]);
        assert_eq!(enc.gru_input(&e, 9.0).unwrap().len(), 3);
        let s = enc.init_state(&ps, &e).unwrap();
        let a = enc.update_state(&ps, &s, &e, 1.0).unwrap();
        let b = enc.update_state(&ps, &s, &e, -1.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn window_gradients_match_finite_differences() {
        let (mut ps, enc) = setup(true);
        let f = unit(&[0.5, 0.1, 0.7]);
        let seq = random_items(7, 2);
        let mut traj = StateTrajectory::start(&enc, &ps, &f).unwrap();
        for (e, r) in &seq {
            traj.push(&enc, &ps, e, *r).unwrap();
        }
        let mut rng = stream(3, "enc-gc", &[]);
        let u: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        // One unrolled step from a stored snapshot, and a window reaching the projection.
        for (step, horizon) in [(7, 1), (4, 5)] {
            let w = traj.window(step, horizon).unwrap();
            let (_, trace) = enc.forward_window(&ps, &w).unwrap();
            let mut grads = ps.zeros_like();
            enc.backward(&ps, &trace, &u, &mut grads).unwrap();
            let loss = |p: &ParameterSet| -> Result<f64> {
                let (h, _) = enc.forward_window(p, &w)?;
                Ok(h.iter().zip(&u).map(|(a, b)| a * b).sum())
            };
            let err = check_parameter_gradient(loss, &mut ps, &grads, None, 1e-5, &mut rng).unwrap();
            assert!(err < 1e-4, "window ({step},{horizon}) rel err {err}");
        }
    }
}
