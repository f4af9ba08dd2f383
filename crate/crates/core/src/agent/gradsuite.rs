use serde::Serialize;

use super::{QHead, SessionNets};
use crate::error::Result;
use crate::nn::{gradient_check, Activation, Block, Dense, GruCell, Mlp, ParameterSet};
use crate::rng::stream;

/// Step of the central differences.
pub const FD_EPSILON: f64 = 1e-5;
/// Largest relative error a block may show.
pub const FD_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, Serialize)]
pub struct BlockCheck {
    pub block: &'static str,
    pub probes: usize,
    pub max_rel_error: f64,
}

impl BlockCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < FD_TOLERANCE
    }
}

fn check<B: Block>(block: &'static str, b: &B, ps: &mut ParameterSet, probes: usize, seed: u64) -> Result<BlockCheck> {
    let mut rng = stream(seed, block, &[]);
    let max_rel_error = gradient_check(b, ps, probes, FD_EPSILON, &mut rng)?;
    Ok(BlockCheck {
        block,
        probes,
        max_rel_error,
    })
}

/// Finite-difference checks of every differentiable block at the default
/// network sizes: dense layer, MLP, GRU step, dueling and single Q heads, and
/// the composed `state ↦ Q(state, μ(state))` path.
pub fn gradient_suite(probes: usize, seed: u64) -> Result<Vec<BlockCheck>> {
    let (state, goal, emb, hidden) = (32, 8, 16, 64);
    let mut rng = stream(seed, "grad-check", &[]);
    let mut out = Vec::new();

    let mut ps = ParameterSet::new();
    let dense = Dense::new(&mut ps, "dense", emb, state, Activation::Tanh, &mut rng)?;
    out.push(check("dense", &dense, &mut ps, probes, seed)?);

    let mut ps = ParameterSet::new();
    let mlp = Mlp::new(&mut ps, "mlp", &[state, hidden, goal], Activation::Relu, Activation::Tanh, &mut rng)?;
    out.push(check("mlp", &mlp, &mut ps, probes, seed)?);

    let mut ps = ParameterSet::new();
    let gru = GruCell::new(&mut ps, "gru", emb + 1, state, &mut rng)?;
    out.push(check("gru_step", &gru, &mut ps, probes, seed)?);

    let mut ps = ParameterSet::new();
    let head = QHead::new(&mut ps, "q", state + goal, state + goal + emb, &[hidden], true, &mut rng)?;
    out.push(check("dueling_head", &head, &mut ps, probes, seed)?);

    let mut ps = ParameterSet::new();
    let head = QHead::new(&mut ps, "q", state + goal, state + goal + emb, &[hidden], false, &mut rng)?;
    out.push(check("single_head", &head, &mut ps, probes, seed)?);

    let mut ps = ParameterSet::new();
    let nets = SessionNets::new(&mut ps, state, goal, &[hidden], true, &mut rng)?;
    out.push(check("actor_critic", &nets, &mut ps, probes, seed)?);

    Ok(out)
}
