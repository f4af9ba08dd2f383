//! Two-level agent: a session-level actor-critic that emits a goal vector at
//! every session start, and an interaction-level Q-network conditioned on
//! that goal that scores items.
//!
//! Parameters live in separate groups (`enc`, `ses`, `ses.target`, `int`,
//! `int.target`), each with its own Adam state for the online groups.

mod config;
mod gradsuite;
mod heads;
mod replay;

pub use config::{ActorUpdate, AgentConfig, Exploration, ReplayConfig, TargetSelection};
pub use gradsuite::{gradient_suite, BlockCheck, FD_EPSILON, FD_TOLERANCE};
pub use heads::{ActorCriticTrace, QHead, QTrace, SessionNets};

use std::sync::Arc;

use rand::Rng;
use serde::Serialize;

use crate::encoder::{EncoderTrace, StateEncoder, StateTrajectory, StateWindow, UserState};
use crate::env::{EmbeddingVector, ItemEntry, ItemId};
use crate::error::{ensure_len, Error, Result};
use crate::nn::{adam_update, polyak_update, Block, ParameterSet};
use crate::rng::stream;
use heads::concat;
use replay::Replay;

#[derive(Clone, Debug, PartialEq)]
pub struct GoalVector {
    pub values: Vec<f64>,
    /// 1-based session the goal was proposed for.
    pub session: usize,
}

#[derive(Clone, Debug)]
pub struct InteractionTransition {
    pub state: UserState,
    /// Recomputes `state` with gradients into the encoder; `None` treats the
    /// state as a constant.
    pub window: Option<StateWindow>,
    pub action: ItemId,
    pub reward: f64,
    pub next_state: UserState,
    pub goal: GoalVector,
    pub terminal: bool,
    /// Candidate set for the bootstrap argmax.
    pub next_candidates: Arc<[ItemId]>,
}

#[derive(Clone, Debug)]
pub struct SessionTransition {
    /// State at the session start.
    pub state: UserState,
    pub window: Option<StateWindow>,
    pub goal: GoalVector,
    pub reward: f64,
    /// State at the start of the next session.
    pub next_state: UserState,
    pub terminal: bool,
}

/// Gradients per parameter group; `None` marks a group that received none.
#[derive(Clone, Debug)]
pub struct AgentGrads {
    pub enc: Option<ParameterSet>,
    pub ses: Option<ParameterSet>,
    pub int: Option<ParameterSet>,
}

impl AgentGrads {
    fn none() -> Self {
        AgentGrads {
            enc: None,
            ses: None,
            int: None,
        }
    }

    fn merge(&mut self, other: AgentGrads) -> Result<()> {
        for (mine, theirs) in [(&mut self.enc, other.enc), (&mut self.ses, other.ses), (&mut self.int, other.int)] {
            match (mine.as_mut(), theirs) {
                (Some(m), Some(t)) => m.add_assign(&t)?,
                (None, Some(t)) => *mine = Some(t),
                _ => {}
            }
        }
        Ok(())
    }

    fn scale(&mut self, factor: f64) {
        for g in [&mut self.enc, &mut self.ses, &mut self.int].into_iter().flatten() {
            g.scale(factor);
        }
    }
}

#[derive(Clone, Debug)]
pub struct TdLoss {
    pub loss: f64,
    pub q: f64,
    pub target: f64,
    pub grads: AgentGrads,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct UpdateReport {
    pub interaction_loss: Option<f64>,
    pub session_loss: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    Encoder,
    Session,
    SessionTarget,
    Interaction,
    InteractionTarget,
}

impl Group {
    pub const ALL: [Group; 5] = [
        Group::Encoder,
        Group::Session,
        Group::SessionTarget,
        Group::Interaction,
        Group::InteractionTarget,
    ];

    /// Checkpoint prefix.
    pub fn prefix(self) -> &'static str {
        match self {
            Group::Encoder => "enc/",
            Group::Session => "ses/",
            Group::SessionTarget => "ses.target/",
            Group::Interaction => "int/",
            Group::InteractionTarget => "int.target/",
        }
    }
}

/// Borrowed parameter groups. Losses are written against a view so that
/// tests can substitute one perturbed group.
#[derive(Clone, Copy)]
struct View<'a> {
    enc: &'a ParameterSet,
    ses: Option<&'a ParameterSet>,
    ses_target: Option<&'a ParameterSet>,
    int: &'a ParameterSet,
    int_target: &'a ParameterSet,
}

#[derive(Clone, Debug)]
pub struct HrlAgent {
    config: AgentConfig,
    embedding_dim: usize,
    encoder: StateEncoder,
    session: Option<SessionNets>,
    interaction: QHead,
    enc: ParameterSet,
    ses: Option<ParameterSet>,
    ses_target: Option<ParameterSet>,
    int: ParameterSet,
    int_target: ParameterSet,
    replay: Option<Replay>,
    updates: u64,
}

/// Highest score, ties to the smallest id.
pub fn argmax_smallest_id(candidates: &[ItemId], scores: &[f64]) -> Result<(ItemId, f64)> {
    ensure_len("scores", scores.len(), candidates.len())?;
    let mut best: Option<(ItemId, f64)> = None;
    for (&id, &s) in candidates.iter().zip(scores) {
        best = match best {
            None => Some((id, s)),
            Some((b, bs)) if s > bs || (s == bs && id < b) => Some((id, s)),
            keep => keep,
        };
    }
    best.ok_or_else(|| Error::Argument("empty candidate set".into()))
}

/// Ids ordered by descending score, ties by ascending id, cut to `k`.
pub fn top_k(candidates: &[ItemId], scores: &[f64], k: usize) -> Result<Vec<ItemId>> {
    ensure_len("scores", scores.len(), candidates.len())?;
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(candidates[a].cmp(&candidates[b])));
    Ok(order.into_iter().take(k).map(|i| candidates[i]).collect())
}

fn item_slices<'a>(items: &'a [ItemEntry], ids: &'a [ItemId]) -> Result<impl Iterator<Item = &'a [f64]>> {
    if let Some(bad) = ids.iter().find(|id| id.0 >= items.len()) {
        return Err(Error::Lookup(format!("unknown item {}", bad.0)));
    }
    Ok(ids.iter().map(move |id| items[id.0].embedding.as_slice()))
}

fn lookup(items: &[ItemEntry], id: ItemId) -> Result<&EmbeddingVector> {
    items
        .get(id.0)
        .map(|e| &e.embedding)
        .ok_or_else(|| Error::Lookup(format!("unknown item {}", id.0)))
}

impl HrlAgent {
    /// Builds all groups from the `agent-init` substreams of `seed`. Without
    /// `hierarchical` no session-level parameters exist and goals are zero.
    pub fn new(config: &AgentConfig, embedding_dim: usize, hierarchical: bool, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut enc = ParameterSet::new();
        let encoder = StateEncoder::new(
            &mut enc,
            embedding_dim,
            config.state_dim,
            config.reward_input,
            &mut stream(seed, "agent-init", &[0]),
        )?;
        enc.attach_adam(config.adam);

        let (session, ses, ses_target) = if hierarchical {
            let mut ps = ParameterSet::new();
            let nets = SessionNets::new(
                &mut ps,
                config.state_dim,
                config.goal_dim,
                &config.hidden,
                config.dueling,
                &mut stream(seed, "agent-init", &[1]),
            )?;
            let target = ps.clone();
            ps.attach_adam(config.adam);
            (Some(nets), Some(ps), Some(target))
        } else {
            (None, None, None)
        };

        let mut int = ParameterSet::new();
        let prefix = config.state_dim + config.goal_dim;
        let interaction = QHead::new(
            &mut int,
            "",
            prefix,
            prefix + embedding_dim,
            &config.hidden,
            config.dueling,
            &mut stream(seed, "agent-init", &[2]),
        )?;
        let int_target = int.clone();
        int.attach_adam(config.adam);

        Ok(HrlAgent {
            config: config.clone(),
            embedding_dim,
            encoder,
            session,
            interaction,
            enc,
            ses,
            ses_target,
            int,
            int_target,
            replay: config.replay.map(|r| Replay::new(r, stream(seed, "replay", &[]))),
            updates: 0,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    pub fn is_hierarchical(&self) -> bool {
        self.session.is_some()
    }

    pub fn encoder(&self) -> &StateEncoder {
        &self.encoder
    }

    pub fn session_nets(&self) -> Option<&SessionNets> {
        self.session.as_ref()
    }

    pub fn interaction_head(&self) -> &QHead {
        &self.interaction
    }

    /// Number of joint updates applied so far.
    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Current ε of the exploration schedule.
    pub fn epsilon(&self) -> f64 {
        self.config.exploration.epsilon(self.updates)
    }

    /// BPTT horizon in GRU steps for a given session length.
    pub fn horizon(&self, session_length: usize) -> usize {
        self.config.bptt_horizon.unwrap_or(session_length)
    }

    pub fn group(&self, group: Group) -> Option<&ParameterSet> {
        match group {
            Group::Encoder => Some(&self.enc),
            Group::Session => self.ses.as_ref(),
            Group::SessionTarget => self.ses_target.as_ref(),
            Group::Interaction => Some(&self.int),
            Group::InteractionTarget => Some(&self.int_target),
        }
    }

    pub fn group_mut(&mut self, group: Group) -> Option<&mut ParameterSet> {
        match group {
            Group::Encoder => Some(&mut self.enc),
            Group::Session => self.ses.as_mut(),
            Group::SessionTarget => self.ses_target.as_mut(),
            Group::Interaction => Some(&mut self.int),
            Group::InteractionTarget => Some(&mut self.int_target),
        }
    }

    fn view(&self) -> View<'_> {
        View {
            enc: &self.enc,
            ses: self.ses.as_ref(),
            ses_target: self.ses_target.as_ref(),
            int: &self.int,
            int_target: &self.int_target,
        }
    }

    pub fn init_state(&self, features: &EmbeddingVector) -> Result<UserState> {
        self.encoder.init_state(&self.enc, features)
    }

    pub fn start_trajectory(&self, features: &EmbeddingVector) -> Result<StateTrajectory> {
        StateTrajectory::start(&self.encoder, &self.enc, features)
    }

    pub fn advance(&self, trajectory: &mut StateTrajectory, item: &EmbeddingVector, reward: f64) -> Result<UserState> {
        trajectory.push(&self.encoder, &self.enc, item, reward)
    }

    pub fn zero_goal(&self, session: usize) -> GoalVector {
        GoalVector {
            values: vec![0.0; self.config.goal_dim],
            session,
        }
    }

    pub fn propose_goal(&self, state: &UserState, session: usize, use_target: bool) -> Result<GoalVector> {
        let (Some(nets), Some(online), Some(target)) = (&self.session, &self.ses, &self.ses_target) else {
            return Ok(self.zero_goal(session));
        };
        let ps = if use_target { target } else { online };
        Ok(GoalVector {
            values: nets.propose(ps, &state.hidden)?,
            session,
        })
    }

    pub fn session_q(&self, state: &UserState, goal: &GoalVector, use_target: bool) -> Result<f64> {
        let (nets, online, target) = self.session_parts(self.view())?;
        nets.q(if use_target { target } else { online }, &state.hidden, &goal.values)
    }

    fn session_parts<'a>(&'a self, view: View<'a>) -> Result<(&'a SessionNets, &'a ParameterSet, &'a ParameterSet)> {
        match (&self.session, view.ses, view.ses_target) {
            (Some(n), Some(o), Some(t)) => Ok((n, o, t)),
            _ => Err(Error::State("agent has no session level".into())),
        }
    }

    fn interaction_prefix(&self, state: &UserState, goal: &GoalVector) -> Result<Vec<f64>> {
        ensure_len("state", state.hidden.len(), self.config.state_dim)?;
        ensure_len("goal", goal.values.len(), self.config.goal_dim)?;
        Ok(concat(&state.hidden, &goal.values))
    }

    pub fn interaction_q(
        &self,
        state: &UserState,
        goal: &GoalVector,
        items: &[ItemEntry],
        item: ItemId,
        use_target: bool,
    ) -> Result<f64> {
        let input = concat(&self.interaction_prefix(state, goal)?, lookup(items, item)?.as_slice());
        let ps = if use_target { &self.int_target } else { &self.int };
        self.interaction.forward(ps, &input)
    }

    /// Q of every candidate, in candidate order.
    pub fn interaction_scores(
        &self,
        state: &UserState,
        goal: &GoalVector,
        items: &[ItemEntry],
        candidates: &[ItemId],
        use_target: bool,
    ) -> Result<Vec<f64>> {
        let ps = if use_target { &self.int_target } else { &self.int };
        let prefix = self.interaction_prefix(state, goal)?;
        self.interaction.score_batch(ps, &prefix, item_slices(items, candidates)?)
    }

    /// Greedy argmax with probability `1 − ε`, a uniform candidate otherwise.
    /// With `ε = 0` the rng is not touched.
    pub fn select_action<R: Rng + ?Sized>(
        &self,
        state: &UserState,
        goal: &GoalVector,
        items: &[ItemEntry],
        candidates: &[ItemId],
        epsilon: f64,
        rng: &mut R,
    ) -> Result<ItemId> {
        if candidates.is_empty() {
            return Err(Error::Argument("empty candidate set".into()));
        }
        if epsilon > 0.0 && rng.random::<f64>() < epsilon {
            return Ok(candidates[rng.random_range(0..candidates.len())]);
        }
        let scores = self.interaction_scores(state, goal, items, candidates, false)?;
        Ok(argmax_smallest_id(candidates, &scores)?.0)
    }

    pub fn rank(
        &self,
        state: &UserState,
        goal: &GoalVector,
        items: &[ItemEntry],
        candidates: &[ItemId],
        k: usize,
    ) -> Result<Vec<ItemId>> {
        let scores = self.interaction_scores(state, goal, items, candidates, false)?;
        top_k(candidates, &scores, k)
    }

    fn encode(&self, view: View<'_>, state: &UserState, window: &Option<StateWindow>) -> Result<(Vec<f64>, Option<EncoderTrace>)> {
        match window {
            Some(w) => {
                let (h, t) = self.encoder.forward_window(view.enc, w)?;
                Ok((h, Some(t)))
            }
            None => Ok((state.hidden.clone(), None)),
        }
    }

    fn encoder_grads(&self, view: View<'_>, trace: Option<EncoderTrace>, ds: &[f64]) -> Result<Option<ParameterSet>> {
        let Some(t) = trace else { return Ok(None) };
        let mut g = view.enc.zeros_like();
        self.encoder.backward(view.enc, &t, ds, &mut g)?;
        Ok(Some(g))
    }

    pub fn interaction_td_loss(&self, tr: &InteractionTransition, items: &[ItemEntry]) -> Result<TdLoss> {
        self.interaction_td_loss_in(self.view(), tr, items)
    }

    fn interaction_td_loss_in(&self, view: View<'_>, tr: &InteractionTransition, items: &[ItemEntry]) -> Result<TdLoss> {
        let target = if tr.terminal {
            tr.reward
        } else {
            let prefix = self.interaction_prefix(&tr.next_state, &tr.goal)?;
            let selector = match self.config.selection {
                TargetSelection::Target => view.int_target,
                TargetSelection::Online => view.int,
            };
            let scores = self
                .interaction
                .score_batch(selector, &prefix, item_slices(items, &tr.next_candidates)?)?;
            let (best, best_score) = argmax_smallest_id(&tr.next_candidates, &scores)?;
            let q_next = match self.config.selection {
                TargetSelection::Target => best_score,
                TargetSelection::Online => self
                    .interaction
                    .forward(view.int_target, &concat(&prefix, lookup(items, best)?.as_slice()))?,
            };
            tr.reward + self.config.gamma * q_next
        };

        let (hidden, enc_trace) = self.encode(view, &tr.state, &tr.window)?;
        let input = concat(
            &concat(&hidden, &tr.goal.values),
            lookup(items, tr.action)?.as_slice(),
        );
        ensure_len("interaction input", input.len(), self.interaction.input_dim())?;
        let (q, trace) = self.interaction.forward_traced(view.int, &input)?;
        let diff = q - target;
        let mut int_grads = view.int.zeros_like();
        let d_in = self.interaction.backward(view.int, &trace, 2.0 * diff, &mut int_grads)?;
        let enc = self.encoder_grads(view, enc_trace, &d_in[..self.config.state_dim])?;
        Ok(TdLoss {
            loss: diff * diff,
            q,
            target,
            grads: AgentGrads {
                enc,
                ses: None,
                int: Some(int_grads),
            },
        })
    }

    pub fn session_td_loss(&self, tr: &SessionTransition) -> Result<TdLoss> {
        self.session_td_loss_in(self.view(), tr)
    }

    fn session_td_loss_in(&self, view: View<'_>, tr: &SessionTransition) -> Result<TdLoss> {
        let (nets, online, target_ps) = self.session_parts(view)?;
        let target = if tr.terminal {
            tr.reward
        } else {
            let chooser = match self.config.selection {
                TargetSelection::Target => target_ps,
                TargetSelection::Online => online,
            };
            let g_next = nets.propose(chooser, &tr.next_state.hidden)?;
            tr.reward + self.config.gamma * nets.q(target_ps, &tr.next_state.hidden, &g_next)?
        };

        let sd = self.config.state_dim;
        let (hidden, enc_trace) = self.encode(view, &tr.state, &tr.window)?;
        let mut ses_grads = online.zeros_like();
        let (q, ds) = match self.config.actor_update {
            ActorUpdate::TdBackprop => {
                let (out, trace) = Block::forward_traced(nets, online, &hidden)?;
                let diff = out[0] - target;
                let ds = Block::backward(nets, online, &trace, &[2.0 * diff], &mut ses_grads)?;
                (out[0], ds)
            }
            ActorUpdate::PolicyGradient => {
                ensure_len("goal", tr.goal.values.len(), self.config.goal_dim)?;
                let (q, trace) = nets.critic.forward_traced(online, &concat(&hidden, &tr.goal.values))?;
                let d_in = nets.critic.backward(online, &trace, 2.0 * (q - target), &mut ses_grads)?;
                // Actor ascends Q(s, μ(s)); state and critic are held fixed.
                let (g, actor_trace) = nets.actor.forward_traced(online, &hidden)?;
                let (_, pg_trace) = nets.critic.forward_traced(online, &concat(&hidden, &g))?;
                let mut scratch = online.zeros_like();
                let d_pg = nets.critic.backward(online, &pg_trace, -1.0, &mut scratch)?;
                nets.actor.backward(online, &actor_trace, &d_pg[sd..], &mut ses_grads)?;
                (q, d_in[..sd].to_vec())
            }
        };
        let diff = q - target;
        let enc = self.encoder_grads(view, enc_trace, &ds)?;
        Ok(TdLoss {
            loss: diff * diff,
            q,
            target,
            grads: AgentGrads {
                enc,
                ses: Some(ses_grads),
                int: None,
            },
        })
    }

    /// One Adam step on every online group that received gradient.
    pub fn apply_gradients(&mut self, grads: &AgentGrads) -> Result<()> {
        let lr = self.config.learning_rate;
        if let Some(g) = &grads.enc {
            adam_update(&mut self.enc, g, lr)?;
        }
        if let Some(g) = &grads.ses {
            let ses = self
                .ses
                .as_mut()
                .ok_or_else(|| Error::State("session gradients for an agent without a session level".into()))?;
            adam_update(ses, g, lr)?;
        }
        if let Some(g) = &grads.int {
            adam_update(&mut self.int, g, lr)?;
        }
        Ok(())
    }

    /// Polyak step on every target/online pair.
    pub fn sync_targets(&mut self) -> Result<()> {
        polyak_update(&mut self.int_target, &self.int, self.config.tau)?;
        if let (Some(t), Some(o)) = (self.ses_target.as_mut(), self.ses.as_ref()) {
            polyak_update(t, o, self.config.tau)?;
        }
        Ok(())
    }

    /// Minimizes `ℓ_ses + ℓ_int` with one optimizer step, then moves the
    /// targets. With replay enabled the new transitions are stored and each
    /// loss is averaged over a uniform minibatch.
    pub fn joint_update(
        &mut self,
        interaction: &InteractionTransition,
        session: Option<&SessionTransition>,
        items: &[ItemEntry],
    ) -> Result<UpdateReport> {
        let mut grads = AgentGrads::none();
        let mut report = UpdateReport::default();
        match self.replay.take() {
            None => {
                let l = self.interaction_td_loss(interaction, items)?;
                report.interaction_loss = Some(l.loss);
                grads.merge(l.grads)?;
                if let Some(tr) = session {
                    let l = self.session_td_loss(tr)?;
                    report.session_loss = Some(l.loss);
                    grads.merge(l.grads)?;
                }
            }
            Some(mut replay) => {
                let outcome = self.replayed_losses(&mut replay, interaction, session, items);
                self.replay = Some(replay);
                let (r, g) = outcome?;
                report = r;
                grads = g;
            }
        }
        self.apply_gradients(&grads)?;
        self.sync_targets()?;
        self.updates += 1;
        Ok(report)
    }

    fn replayed_losses(
        &self,
        replay: &mut Replay,
        interaction: &InteractionTransition,
        session: Option<&SessionTransition>,
        items: &[ItemEntry],
    ) -> Result<(UpdateReport, AgentGrads)> {
        let mut report = UpdateReport::default();
        let mut total = AgentGrads::none();
        replay.push_interaction(interaction.clone());
        let batch = replay.sample_interactions();
        let mut grads = AgentGrads::none();
        let mut loss = 0.0;
        for tr in &batch {
            let l = self.interaction_td_loss(tr, items)?;
            loss += l.loss;
            grads.merge(l.grads)?;
        }
        grads.scale(1.0 / batch.len() as f64);
        report.interaction_loss = Some(loss / batch.len() as f64);
        total.merge(grads)?;
        if let Some(s) = session {
            replay.push_session(s.clone());
            let batch = replay.sample_sessions();
            let mut grads = AgentGrads::none();
            let mut loss = 0.0;
            for tr in &batch {
                let l = self.session_td_loss(tr)?;
                loss += l.loss;
                grads.merge(l.grads)?;
            }
            grads.scale(1.0 / batch.len() as f64);
            report.session_loss = Some(loss / batch.len() as f64);
            total.merge(grads)?;
        }
        Ok((report, total))
    }

    /// All groups flattened under their checkpoint prefixes, with optimizer
    /// state for the online groups.
    pub fn parameters(&self) -> Result<ParameterSet> {
        let mut out = ParameterSet::new();
        for g in Group::ALL {
            if let Some(ps) = self.group(g) {
                ps.with_optimizer_entries()?.export_into(g.prefix(), &mut out)?;
            }
        }
        Ok(out)
    }

    /// Inverse of [`parameters`](Self::parameters). Every group this agent has
    /// must be present; a group it lacks must be absent.
    pub fn load_parameters(&mut self, flat: &ParameterSet) -> Result<()> {
        for g in Group::ALL {
            let mut part = ParameterSet::new();
            for (name, t) in flat.iter() {
                if let Some(local) = name.strip_prefix(g.prefix()) {
                    part.insert(local, t.clone())?;
                }
            }
            match self.group_mut(g) {
                Some(ps) => {
                    if part.is_empty() {
                        return Err(Error::shape(format!("missing parameter group {}", g.prefix())));
                    }
                    ps.restore_from_flat(&part)?;
                }
                None if !part.is_empty() => {
                    return Err(Error::shape(format!("unexpected parameter group {}", g.prefix())));
                }
                None => {}
            }
        }
        let known: usize = Group::ALL.iter().map(|g| flat.iter().filter(|(n, _)| n.starts_with(g.prefix())).count()).sum();
        if known != flat.len() {
            return Err(Error::shape("checkpoint has entries outside the agent groups"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
