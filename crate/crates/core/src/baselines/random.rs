use rand::seq::index::sample;
use rand::Rng;

use super::{Feedback, Policy, StepContext, Variant};
use crate::agent::UpdateReport;
use crate::env::{ItemEntry, ItemId, UserHistory, UserProfile};
use crate::error::{Error, Result};
use crate::nn::ParameterSet;
use crate::reward::RewardShaping;
use crate::rng::SimRng;

/// Uniform over the candidates; never learns.
#[derive(Clone, Debug, Default)]
pub struct RandomPolicy;

impl RandomPolicy {
    pub fn new() -> Self {
        RandomPolicy
    }
}

pub(crate) fn random_act<R: Rng + ?Sized>(arms: &[ItemId], rng: &mut R) -> Result<ItemId> {
    if arms.is_empty() {
        return Err(Error::Argument("empty candidate set".into()));
    }
    Ok(arms[rng.random_range(0..arms.len())])
}

impl Policy for RandomPolicy {
    fn variant(&self) -> Variant {
        Variant::Random
    }

    fn shaping(&self) -> RewardShaping {
        RewardShaping::default()
    }

    fn begin_user(&mut self, _: &UserProfile, _: &[ItemEntry], _: &UserHistory) -> Result<()> {
        Ok(())
    }

    fn begin_session(&mut self, _: usize) -> Result<()> {
        Ok(())
    }

    fn act(&mut self, ctx: &StepContext<'_>, rng: &mut SimRng) -> Result<ItemId> {
        random_act(ctx.candidates, rng)
    }

    fn rank(&mut self, ctx: &StepContext<'_>, k: usize, rng: &mut SimRng) -> Result<Vec<ItemId>> {
        if ctx.candidates.is_empty() {
            return Err(Error::Argument("empty candidate set".into()));
        }
        let n = k.min(ctx.candidates.len());
        Ok(sample(rng, ctx.candidates.len(), n)
            .into_iter()
            .map(|i| ctx.candidates[i])
            .collect())
    }

    fn observe(&mut self, _: &StepContext<'_>, _: &Feedback) -> Result<()> {
        Ok(())
    }

    fn update(&mut self, _: &[ItemEntry]) -> Result<UpdateReport> {
        Ok(UpdateReport::default())
    }

    fn updates(&self) -> u64 {
        0
    }

    fn parameters(&self) -> Result<ParameterSet> {
        Ok(ParameterSet::new())
    }

    fn load_parameters(&mut self, params: &ParameterSet) -> Result<()> {
        if params.is_empty() {
            Ok(())
        } else {
            Err(Error::shape("the random policy has no parameters"))
        }
    }
}
