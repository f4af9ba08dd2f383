use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::EnvConfig;
use super::embedding::EmbeddingVector;
use crate::error::{Error, Result};
use crate::nn::{ParameterSet, Tensor};
use crate::rng::stream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UserId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ItemId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct UserProfile {
    pub id: UserId,
    pub embedding: EmbeddingVector,
    /// `r_u`.
    pub fixed_effect: f64,
    /// `E0_u`.
    pub intrinsic_intent: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ItemEntry {
    pub id: ItemId,
    pub embedding: EmbeddingVector,
    /// `r_i`.
    pub fixed_effect: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Population {
    pub users: Vec<UserProfile>,
    pub items: Vec<ItemEntry>,
}

fn uniform_embedding<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Result<EmbeddingVector> {
    loop {
        let raw: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
        // An all-zero draw has no direction; redraw.
        if raw.iter().any(|&x| x > 0.0) {
            return EmbeddingVector::normalized(raw);
        }
    }
}

/// Users then items, each from its own substream of `seed`.
///
/// Embedding coordinates are U[0, 1] before normalization; fixed effects and
/// intrinsic intent are normal with the configured parameters.
pub fn generate_population(config: &EnvConfig, seed: u64) -> Result<Population> {
    config.validate()?;
    let dim = config.embedding_dim;
    let mut rng = stream(seed, "population", &[0]);
    let users = (0..config.num_users)
        .map(|u| {
            Ok(UserProfile {
                id: UserId(u),
                embedding: uniform_embedding(&mut rng, dim)?,
                fixed_effect: config.user_effect.sample(&mut rng),
                intrinsic_intent: config.intrinsic_intent.sample(&mut rng),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rng = stream(seed, "population", &[1]);
    let items = (0..config.num_items)
        .map(|i| {
            Ok(ItemEntry {
                id: ItemId(i),
                embedding: uniform_embedding(&mut rng, dim)?,
                fixed_effect: config.item_effect.sample(&mut rng),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Population { users, items })
}

impl Population {
    pub fn embedding_dim(&self) -> usize {
        self.items.first().map(|i| i.embedding.dim()).unwrap_or(0)
    }

    /// Packs the population into named tensors for the checkpoint format.
    pub fn to_parameter_set(&self) -> Result<ParameterSet> {
        let d = self.embedding_dim();
        let mut ps = ParameterSet::new();
        let flat = |rows: Vec<&EmbeddingVector>| rows.iter().flat_map(|e| e.as_slice().iter().copied()).collect::<Vec<_>>();
        ps.insert(
            "users.embedding",
            Tensor::from_vec(&[self.users.len(), d], flat(self.users.iter().map(|u| &u.embedding).collect()))?,
        )?;
        ps.insert(
            "users.fixed_effect",
            Tensor::from_vec(&[self.users.len()], self.users.iter().map(|u| u.fixed_effect).collect())?,
        )?;
        ps.insert(
            "users.intrinsic_intent",
            Tensor::from_vec(&[self.users.len()], self.users.iter().map(|u| u.intrinsic_intent).collect())?,
        )?;
        ps.insert(
            "items.embedding",
            Tensor::from_vec(&[self.items.len(), d], flat(self.items.iter().map(|i| &i.embedding).collect()))?,
        )?;
        ps.insert(
            "items.fixed_effect",
            Tensor::from_vec(&[self.items.len()], self.items.iter().map(|i| i.fixed_effect).collect())?,
        )?;
        Ok(ps)
    }

    pub fn from_parameter_set(ps: &ParameterSet) -> Result<Self> {
        let get = |name: &str| ps.by_name(name).ok_or_else(|| Error::Lookup(format!("population tensor {name} missing")));
        let ue = get("users.embedding")?;
        let ur = get("users.fixed_effect")?;
        let ui = get("users.intrinsic_intent")?;
        let ie = get("items.embedding")?;
        let ir = get("items.fixed_effect")?;
        if ue.rank() != 2 || ie.rank() != 2 || ue.shape()[1] != ie.shape()[1] {
            return Err(Error::shape("population embeddings must be [n, d] with a shared d"));
        }
        let (nu, ni) = (ue.shape()[0], ie.shape()[0]);
        if ur.len() != nu || ui.len() != nu || ir.len() != ni {
            return Err(Error::shape("population effect vectors disagree with embedding rows"));
        }
        let users = (0..nu)
            .map(|u| {
                Ok(UserProfile {
                    id: UserId(u),
                    embedding: EmbeddingVector::from_unit(ue.row(u).to_vec())?,
                    fixed_effect: ur.data()[u],
                    intrinsic_intent: ui.data()[u],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let items = (0..ni)
            .map(|i| {
                Ok(ItemEntry {
                    id: ItemId(i),
                    embedding: EmbeddingVector::from_unit(ie.row(i).to_vec())?,
                    fixed_effect: ir.data()[i],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Population { users, items })
    }
}
