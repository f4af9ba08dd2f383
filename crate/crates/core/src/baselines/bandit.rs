//! Linear contextual bandits with one model per arm. The context of arm `i`
//! for user `u` is `e_u ⊕ e_i`.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use super::{Feedback, Policy, StepContext, Variant};
use crate::agent::{argmax_smallest_id, top_k, UpdateReport};
use crate::env::{ItemEntry, ItemId, UserHistory, UserProfile};
use crate::error::{ensure_len, Error, Result};
use crate::nn::{ParameterSet, Tensor};
use crate::reward::RewardShaping;
use crate::rng::SimRng;

/// `inv ← (M + c·u uᵀ)⁻¹` given `inv = M⁻¹`.
fn sherman_morrison(inv: &mut DMatrix<f64>, u: &DVector<f64>, c: f64) {
    let v = &*inv * u;
    let denom = 1.0 + c * u.dot(&v);
    inv.ger(-c / denom, &v, &v, 1.0);
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinUcbArm {
    design: DMatrix<f64>,
    inverse: DMatrix<f64>,
    response: DVector<f64>,
}

impl LinUcbArm {
    pub fn new(dim: usize) -> Self {
        LinUcbArm {
            design: DMatrix::identity(dim, dim),
            inverse: DMatrix::identity(dim, dim),
            response: DVector::zeros(dim),
        }
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    pub fn theta(&self) -> DVector<f64> {
        &self.inverse * &self.response
    }

    /// `θᵀx + α·√(xᵀA⁻¹x)`.
    pub fn score(&self, x: &DVector<f64>, alpha: f64) -> f64 {
        let width = x.dot(&(&self.inverse * x)).max(0.0).sqrt();
        self.theta().dot(x) + alpha * width
    }

    pub fn observe(&mut self, x: &DVector<f64>, reward: f64) {
        self.design.ger(1.0, x, x, 1.0);
        sherman_morrison(&mut self.inverse, x, 1.0);
        self.response.axpy(reward, x, 1.0);
    }
}

/// Gaussian posterior of a linear reward model with prior `N(0, I)` and known
/// observation noise.
#[derive(Clone, Debug, PartialEq)]
pub struct ThompsonArm {
    precision: DMatrix<f64>,
    covariance: DMatrix<f64>,
    /// `Σ r·x / σ²`.
    moment: DVector<f64>,
    noise_var: f64,
}

impl ThompsonArm {
    pub fn new(dim: usize, noise_std: f64) -> Self {
        ThompsonArm {
            precision: DMatrix::identity(dim, dim),
            covariance: DMatrix::identity(dim, dim),
            moment: DVector::zeros(dim),
            noise_var: noise_std * noise_std,
        }
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn mean(&self) -> DVector<f64> {
        &self.covariance * &self.moment
    }

    pub fn observe(&mut self, x: &DVector<f64>, reward: f64) {
        let c = 1.0 / self.noise_var;
        self.precision.ger(c, x, x, 1.0);
        sherman_morrison(&mut self.covariance, x, c);
        self.moment.axpy(reward * c, x, 1.0);
    }

    /// `θ̃ᵀx` for `θ̃` drawn from the posterior, given a standard normal `z`.
    /// The score of one arm is a scalar Gaussian with mean `μᵀx` and variance
    /// `xᵀΣx`, so one draw per arm suffices.
    pub fn sampled_score(&self, x: &DVector<f64>, scale: f64, z: f64) -> f64 {
        let sd = x.dot(&(&self.covariance * x)).max(0.0).sqrt();
        self.mean().dot(x) + scale * sd * z
    }
}

fn context(user: &[f64], items: &[ItemEntry], id: ItemId) -> Result<DVector<f64>> {
    let item = items
        .get(id.0)
        .ok_or_else(|| Error::Lookup(format!("unknown item {}", id.0)))?;
    Ok(DVector::from_iterator(
        user.len() + item.embedding.dim(),
        user.iter().chain(item.embedding.as_slice()).copied(),
    ))
}

fn arm_name(prefix: &str, id: ItemId, field: &str) -> String {
    format!("{prefix}.arm{:08}.{field}", id.0)
}

fn matrix_tensor(m: &DMatrix<f64>) -> Result<Tensor> {
    // Row-major, like every other tensor.
    Tensor::from_vec(&[m.nrows(), m.ncols()], m.transpose().as_slice().to_vec())
}

fn tensor_matrix(t: &Tensor, dim: usize) -> Result<DMatrix<f64>> {
    if t.shape() != [dim, dim] {
        return Err(Error::shape(format!("expected a {dim}x{dim} matrix, got {:?}", t.shape())));
    }
    Ok(DMatrix::from_row_slice(dim, dim, t.data()))
}

fn tensor_vector(t: &Tensor, dim: usize) -> Result<DVector<f64>> {
    ensure_len("arm vector", t.len(), dim)?;
    Ok(DVector::from_column_slice(t.data()))
}

/// Arm ids present in a flat set under `prefix`.
fn arm_ids(params: &ParameterSet, prefix: &str) -> Result<BTreeSet<ItemId>> {
    let mut ids = BTreeSet::new();
    for (name, _) in params.iter() {
        let Some(rest) = name.strip_prefix(prefix).and_then(|r| r.strip_prefix(".arm")) else {
            continue;
        };
        let digits = rest.split('.').next().unwrap_or("");
        let id: usize = digits
            .parse()
            .map_err(|_| Error::shape(format!("malformed arm entry {name}")))?;
        ids.insert(ItemId(id));
    }
    Ok(ids)
}

fn scalar(params: &ParameterSet, name: &str) -> Result<f64> {
    params
        .by_name(name)
        .filter(|t| t.len() == 1)
        .map(|t| t.data()[0])
        .ok_or_else(|| Error::shape(format!("missing scalar {name}")))
}

fn entry<'a>(params: &'a ParameterSet, name: &str) -> Result<&'a Tensor> {
    params
        .by_name(name)
        .ok_or_else(|| Error::shape(format!("missing {name}")))
}

pub struct LinUcbPolicy {
    dim: usize,
    alpha: f64,
    arms: BTreeMap<ItemId, LinUcbArm>,
    user: Vec<f64>,
    pending: Option<(ItemId, DVector<f64>, f64)>,
    updates: u64,
}

impl LinUcbPolicy {
    pub fn new(dim: usize, alpha: f64) -> Self {
        LinUcbPolicy {
            dim,
            alpha,
            arms: BTreeMap::new(),
            user: Vec::new(),
            pending: None,
            updates: 0,
        }
    }

    pub fn arm(&self, id: ItemId) -> Option<&LinUcbArm> {
        self.arms.get(&id)
    }

    fn scores(&self, ctx: &StepContext<'_>) -> Result<Vec<f64>> {
        ctx.candidates
            .iter()
            .map(|&id| {
                let x = context(&self.user, ctx.items, id)?;
                ensure_len("bandit context", x.len(), self.dim)?;
                Ok(match self.arms.get(&id) {
                    Some(arm) => arm.score(&x, self.alpha),
                    None => self.alpha * x.norm(),
                })
            })
            .collect()
    }
}

impl Policy for LinUcbPolicy {
    fn variant(&self) -> Variant {
        Variant::Linucb
    }

    fn shaping(&self) -> RewardShaping {
        RewardShaping::default()
    }

    fn begin_user(&mut self, user: &UserProfile, _: &[ItemEntry], _: &UserHistory) -> Result<()> {
        self.user = user.embedding.as_slice().to_vec();
        self.pending = None;
        Ok(())
    }

    fn begin_session(&mut self, _: usize) -> Result<()> {
        Ok(())
    }

    fn act(&mut self, ctx: &StepContext<'_>, _: &mut SimRng) -> Result<ItemId> {
        Ok(argmax_smallest_id(ctx.candidates, &self.scores(ctx)?)?.0)
    }

    fn rank(&mut self, ctx: &StepContext<'_>, k: usize, _: &mut SimRng) -> Result<Vec<ItemId>> {
        top_k(ctx.candidates, &self.scores(ctx)?, k)
    }

    fn observe(&mut self, ctx: &StepContext<'_>, feedback: &Feedback) -> Result<()> {
        let x = context(&self.user, ctx.items, feedback.item)?;
        self.pending = Some((feedback.item, x, feedback.env_reward));
        Ok(())
    }

    fn update(&mut self, _: &[ItemEntry]) -> Result<UpdateReport> {
        if let Some((id, x, r)) = self.pending.take() {
            let dim = self.dim;
            self.arms.entry(id).or_insert_with(|| LinUcbArm::new(dim)).observe(&x, r);
            self.updates += 1;
        }
        Ok(UpdateReport::default())
    }

    fn updates(&self) -> u64 {
        self.updates
    }

    fn parameters(&self) -> Result<ParameterSet> {
        let mut ps = ParameterSet::new();
        ps.insert("linucb.alpha", Tensor::scalar(self.alpha))?;
        ps.insert("linucb.updates", Tensor::scalar(self.updates as f64))?;
        for (&id, arm) in &self.arms {
            ps.insert(arm_name("linucb", id, "design"), matrix_tensor(&arm.design)?)?;
            ps.insert(arm_name("linucb", id, "inverse"), matrix_tensor(&arm.inverse)?)?;
            ps.insert(
                arm_name("linucb", id, "response"),
                Tensor::from_vec(&[self.dim], arm.response.as_slice().to_vec())?,
            )?;
        }
        Ok(ps)
    }

    fn load_parameters(&mut self, params: &ParameterSet) -> Result<()> {
        let alpha = scalar(params, "linucb.alpha")?;
        let updates = scalar(params, "linucb.updates")? as u64;
        let mut arms = BTreeMap::new();
        for id in arm_ids(params, "linucb")? {
            let arm = LinUcbArm {
                design: tensor_matrix(entry(params, &arm_name("linucb", id, "design"))?, self.dim)?,
                inverse: tensor_matrix(entry(params, &arm_name("linucb", id, "inverse"))?, self.dim)?,
                response: tensor_vector(entry(params, &arm_name("linucb", id, "response"))?, self.dim)?,
            };
            arms.insert(id, arm);
        }
        if params.len() != 2 + 3 * arms.len() {
            return Err(Error::shape("unexpected entries in a LinUCB parameter set"));
        }
        self.alpha = alpha;
        self.updates = updates;
        self.arms = arms;
        Ok(())
    }
}

pub struct ThompsonPolicy {
    dim: usize,
    noise_std: f64,
    scale: f64,
    arms: BTreeMap<ItemId, ThompsonArm>,
    user: Vec<f64>,
    pending: Option<(ItemId, DVector<f64>, f64)>,
    updates: u64,
}

impl ThompsonPolicy {
    pub fn new(dim: usize, noise_std: f64, scale: f64) -> Self {
        ThompsonPolicy {
            dim,
            noise_std,
            scale,
            arms: BTreeMap::new(),
            user: Vec::new(),
            pending: None,
            updates: 0,
        }
    }

    pub fn arm(&self, id: ItemId) -> Option<&ThompsonArm> {
        self.arms.get(&id)
    }

    /// One posterior draw per candidate; unobserved arms use the prior.
    fn sampled_scores(&self, ctx: &StepContext<'_>, rng: &mut SimRng) -> Result<Vec<f64>> {
        ctx.candidates
            .iter()
            .map(|&id| {
                let x = context(&self.user, ctx.items, id)?;
                ensure_len("bandit context", x.len(), self.dim)?;
                let z: f64 = StandardNormal.sample(rng);
                Ok(match self.arms.get(&id) {
                    Some(arm) => arm.sampled_score(&x, self.scale, z),
                    None => self.scale * x.norm() * z,
                })
            })
            .collect()
    }
}

impl Policy for ThompsonPolicy {
    fn variant(&self) -> Variant {
        Variant::Thompson
    }

    fn shaping(&self) -> RewardShaping {
        RewardShaping::default()
    }

    fn begin_user(&mut self, user: &UserProfile, _: &[ItemEntry], _: &UserHistory) -> Result<()> {
        self.user = user.embedding.as_slice().to_vec();
        self.pending = None;
        Ok(())
    }

    fn begin_session(&mut self, _: usize) -> Result<()> {
        Ok(())
    }

    fn act(&mut self, ctx: &StepContext<'_>, rng: &mut SimRng) -> Result<ItemId> {
        let scores = self.sampled_scores(ctx, rng)?;
        Ok(argmax_smallest_id(ctx.candidates, &scores)?.0)
    }

    fn rank(&mut self, ctx: &StepContext<'_>, k: usize, rng: &mut SimRng) -> Result<Vec<ItemId>> {
        let scores = self.sampled_scores(ctx, rng)?;
        top_k(ctx.candidates, &scores, k)
    }

    fn observe(&mut self, ctx: &StepContext<'_>, feedback: &Feedback) -> Result<()> {
        let x = context(&self.user, ctx.items, feedback.item)?;
        self.pending = Some((feedback.item, x, feedback.env_reward));
        Ok(())
    }

    fn update(&mut self, _: &[ItemEntry]) -> Result<UpdateReport> {
        if let Some((id, x, r)) = self.pending.take() {
            let (dim, sd) = (self.dim, self.noise_std);
            self.arms.entry(id).or_insert_with(|| ThompsonArm::new(dim, sd)).observe(&x, r);
            self.updates += 1;
        }
        Ok(UpdateReport::default())
    }

    fn updates(&self) -> u64 {
        self.updates
    }

    fn parameters(&self) -> Result<ParameterSet> {
        let mut ps = ParameterSet::new();
        ps.insert("thompson.noise_std", Tensor::scalar(self.noise_std))?;
        ps.insert("thompson.scale", Tensor::scalar(self.scale))?;
        ps.insert("thompson.updates", Tensor::scalar(self.updates as f64))?;
        for (&id, arm) in &self.arms {
            ps.insert(arm_name("thompson", id, "precision"), matrix_tensor(&arm.precision)?)?;
            ps.insert(arm_name("thompson", id, "covariance"), matrix_tensor(&arm.covariance)?)?;
            ps.insert(
                arm_name("thompson", id, "moment"),
                Tensor::from_vec(&[self.dim], arm.moment.as_slice().to_vec())?,
            )?;
        }
        Ok(ps)
    }

    fn load_parameters(&mut self, params: &ParameterSet) -> Result<()> {
        let noise_std = scalar(params, "thompson.noise_std")?;
        let scale = scalar(params, "thompson.scale")?;
        let updates = scalar(params, "thompson.updates")? as u64;
        let mut arms = BTreeMap::new();
        for id in arm_ids(params, "thompson")? {
            let arm = ThompsonArm {
                precision: tensor_matrix(entry(params, &arm_name("thompson", id, "precision"))?, self.dim)?,
                covariance: tensor_matrix(entry(params, &arm_name("thompson", id, "covariance"))?, self.dim)?,
                moment: tensor_vector(entry(params, &arm_name("thompson", id, "moment"))?, self.dim)?,
                noise_var: noise_std * noise_std,
            };
            arms.insert(id, arm);
        }
        if params.len() != 3 + 3 * arms.len() {
            return Err(Error::shape("unexpected entries in a Thompson parameter set"));
        }
        self.noise_std = noise_std;
        self.scale = scale;
        self.updates = updates;
        self.arms = arms;
        Ok(())
    }
}
