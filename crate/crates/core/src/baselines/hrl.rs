use super::{Feedback, Policy, StepContext, Variant, VariantBase};
use crate::agent::{
    GoalVector, HrlAgent, InteractionTransition, SessionTransition, TargetSelection, UpdateReport,
};
use crate::encoder::StateTrajectory;
use crate::env::{session_index, ItemEntry, ItemId, UserHistory, UserProfile};
use crate::error::{Error, Result};
use crate::nn::ParameterSet;
use crate::reward::RewardShaping;
use crate::rng::SimRng;

struct UserRun {
    trajectory: StateTrajectory,
    goal: Option<GoalVector>,
    /// Consumptions before the current session started.
    session_start: usize,
    /// Goal from the initial state, kept for the frozen-goal ablation.
    initial_goal: GoalVector,
}

/// The hierarchical agent and its ablations.
pub struct HrlPolicy {
    variant: Variant,
    agent: HrlAgent,
    shaping: RewardShaping,
    session_length: usize,
    freeze_goal: bool,
    run: Option<UserRun>,
    pending_interaction: Option<InteractionTransition>,
    pending_session: Option<SessionTransition>,
}

impl HrlPolicy {
    pub fn new(variant: Variant, base: &VariantBase) -> Result<Self> {
        if !variant.is_agent() {
            return Err(Error::config("variants", format!("`{variant}` is not an agent variant")));
        }
        let mut config = base.agent.clone();
        let mut shaping = base.shaping;
        match variant {
            Variant::Ab3NoHrlNoSessionIntent => config.reward_input = false,
            Variant::Ab4VanillaDqn => {
                config.dueling = false;
                config.selection = TargetSelection::Online;
            }
            Variant::Ab5NoNovelty => shaping.novelty_weight = 0.0,
            Variant::Ab6NoDiversity => shaping.diversity_weight = 0.0,
            _ => {}
        }
        let agent = HrlAgent::new(&config, base.embedding_dim, variant.is_hierarchical(), base.seed)?;
        Ok(HrlPolicy {
            variant,
            agent,
            shaping,
            session_length: base.session_length,
            freeze_goal: variant == Variant::Ab1NoSessionIntent,
            run: None,
            pending_interaction: None,
            pending_session: None,
        })
    }

    pub fn agent(&self) -> &HrlAgent {
        &self.agent
    }

    fn run(&self) -> Result<&UserRun> {
        self.run
            .as_ref()
            .ok_or_else(|| Error::State("no active user; call begin_user first".into()))
    }

    fn goal(&self) -> Result<&GoalVector> {
        self.run()?
            .goal
            .as_ref()
            .ok_or_else(|| Error::State("no active session; call begin_session first".into()))
    }
}

fn embedding(items: &[ItemEntry], id: ItemId) -> Result<&crate::env::EmbeddingVector> {
    items
        .get(id.0)
        .map(|e| &e.embedding)
        .ok_or_else(|| Error::Lookup(format!("unknown item {}", id.0)))
}

impl Policy for HrlPolicy {
    fn variant(&self) -> Variant {
        self.variant
    }

    fn shaping(&self) -> RewardShaping {
        self.shaping
    }

    fn begin_user(&mut self, user: &UserProfile, items: &[ItemEntry], history: &UserHistory) -> Result<()> {
        let mut trajectory = self.agent.start_trajectory(&user.embedding)?;
        let initial_goal = self.agent.propose_goal(&trajectory.current(), 1, false)?;
        for (item, reward) in history.iter() {
            self.agent.advance(&mut trajectory, embedding(items, item)?, reward)?;
        }
        self.run = Some(UserRun {
            trajectory,
            goal: None,
            session_start: 0,
            initial_goal,
        });
        self.pending_interaction = None;
        self.pending_session = None;
        Ok(())
    }

    fn begin_session(&mut self, step: usize) -> Result<()> {
        let session = session_index(step, self.session_length);
        let run = self.run()?;
        let goal = if self.freeze_goal {
            GoalVector {
                values: run.initial_goal.values.clone(),
                session,
            }
        } else {
            self.agent.propose_goal(&run.trajectory.current(), session, false)?
        };
        let run = self.run.as_mut().expect("checked above");
        run.session_start = run.trajectory.len();
        run.goal = Some(goal);
        Ok(())
    }

    fn act(&mut self, ctx: &StepContext<'_>, rng: &mut SimRng) -> Result<ItemId> {
        let state = self.run()?.trajectory.current();
        let goal = self.goal()?;
        let eps = self.agent.epsilon();
        self.agent.select_action(&state, goal, ctx.items, ctx.candidates, eps, rng)
    }

    fn rank(&mut self, ctx: &StepContext<'_>, k: usize, _rng: &mut SimRng) -> Result<Vec<ItemId>> {
        let state = self.run()?.trajectory.current();
        self.agent.rank(&state, self.goal()?, ctx.items, ctx.candidates, k)
    }

    fn observe(&mut self, ctx: &StepContext<'_>, feedback: &Feedback) -> Result<()> {
        let horizon = self.agent.horizon(self.session_length);
        let goal = self.goal()?.clone();
        let run = self.run.as_mut().expect("goal implies an active user");
        let consumed = run.trajectory.len();
        let state = run.trajectory.current();
        let window = run.trajectory.window(consumed, horizon)?;
        let next_state = self
            .agent
            .advance(&mut run.trajectory, embedding(ctx.items, feedback.item)?, feedback.env_reward)?;
        if let (Some(session), true) = (&feedback.session, self.agent.is_hierarchical()) {
            self.pending_session = Some(SessionTransition {
                state: run.trajectory.state_at(run.session_start)?,
                window: Some(run.trajectory.window(run.session_start, horizon)?),
                goal: goal.clone(),
                reward: session.total,
                next_state: next_state.clone(),
                terminal: feedback.terminal,
            });
        }
        self.pending_interaction = Some(InteractionTransition {
            state,
            window: Some(window),
            action: feedback.item,
            reward: feedback.interaction.total,
            next_state,
            goal,
            terminal: feedback.terminal,
            next_candidates: feedback.next_candidates.clone(),
        });
        Ok(())
    }

    fn update(&mut self, items: &[ItemEntry]) -> Result<UpdateReport> {
        let session = self.pending_session.take();
        match self.pending_interaction.take() {
            Some(tr) => self.agent.joint_update(&tr, session.as_ref(), items),
            None => Ok(UpdateReport::default()),
        }
    }

    fn current_goal(&self) -> Option<&GoalVector> {
        self.run.as_ref().and_then(|r| r.goal.as_ref())
    }

    fn updates(&self) -> u64 {
        self.agent.updates()
    }

    fn parameters(&self) -> Result<ParameterSet> {
        self.agent.parameters()
    }

    fn load_parameters(&mut self, params: &ParameterSet) -> Result<()> {
        self.agent.load_parameters(params)
    }
}
