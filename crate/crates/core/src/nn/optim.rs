use serde::{Deserialize, Serialize};

use super::params::{ParameterSet, Tensor};
use crate::error::{Error, Result};

/// Names under these prefixes are reserved for serialized optimizer state.
pub const ADAM_M_PREFIX: &str = "adam.m/";
pub const ADAM_V_PREFIX: &str = "adam.v/";
pub const ADAM_STEP: &str = "adam.step";
pub const ADAM_HYPER: &str = "adam.hyper";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment accumulators, stored in the owning set's order.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn bitwise_eq(&self, other: &AdamState, own: &ParameterSet, theirs: &ParameterSet) -> bool {
        self.step == other.step
            && self.config == other.config
            && (0..self.m.len()).all(|i| {
                let j = own.aligned_index(theirs, i);
                self.m[i].bitwise_eq(&other.m[j]) && self.v[i].bitwise_eq(&other.v[j])
            })
    }

    pub fn first_moment(&self, params: &ParameterSet, name: &str) -> Option<&Tensor> {
        params.id(name).map(|id| &self.m[id.0])
    }

    pub fn second_moment(&self, params: &ParameterSet, name: &str) -> Option<&Tensor> {
        params.id(name).map(|id| &self.v[id.0])
    }
}

impl ParameterSet {
    /// Attaches zeroed Adam state. Further parameters can't be registered.
    pub fn attach_adam(&mut self, config: AdamConfig) {
        let zeros = |ps: &ParameterSet| ps.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        self.adam = Some(AdamState {
            config,
            step: 0,
            m: zeros(self),
            v: zeros(self),
        });
    }

    /// Flattens parameters and optimizer state into one set using the
    /// reserved `adam.*` names.
    pub fn with_optimizer_entries(&self) -> Result<ParameterSet> {
        let mut out = ParameterSet::new();
        self.export_into("", &mut out)?;
        if let Some(adam) = &self.adam {
            for (i, (name, _)) in self.iter().enumerate() {
                out.insert(format!("{ADAM_M_PREFIX}{name}"), adam.m[i].clone())?;
                out.insert(format!("{ADAM_V_PREFIX}{name}"), adam.v[i].clone())?;
            }
            out.insert(ADAM_STEP, Tensor::scalar(adam.step as f64))?;
            out.insert(
                ADAM_HYPER,
                Tensor::from_vec(
                    &[3],
                    vec![adam.config.beta1, adam.config.beta2, adam.config.epsilon],
                )?,
            )?;
        }
        Ok(out)
    }

    /// Inverse of [`with_optimizer_entries`](Self::with_optimizer_entries):
    /// copies values (and optimizer state, when present in `flat`) into this
    /// set, which must already describe the same parameters.
    pub fn restore_from_flat(&mut self, flat: &ParameterSet) -> Result<()> {
        let mut plain = ParameterSet::new();
        for (name, t) in flat.iter() {
            if !name.starts_with("adam.") {
                plain.insert(name, t.clone())?;
            }
        }
        self.assign_from(&plain)?;
        match flat.by_name(ADAM_STEP) {
            None => {
                if self.adam.is_some() {
                    let cfg = self.adam.as_ref().map(|a| a.config).unwrap_or_default();
                    self.attach_adam(cfg);
                }
            }
            Some(step) => {
                let hyper = flat
                    .by_name(ADAM_HYPER)
                    .ok_or_else(|| Error::shape("optimizer state without adam.hyper"))?;
                if hyper.len() != 3 || step.len() != 1 {
                    return Err(Error::shape("malformed optimizer header tensors"));
                }
                let config = AdamConfig {
                    beta1: hyper.data()[0],
                    beta2: hyper.data()[1],
                    epsilon: hyper.data()[2],
                };
                let mut m = Vec::with_capacity(self.len());
                let mut v = Vec::with_capacity(self.len());
                for (name, t) in self.iter() {
                    for (prefix, dest) in [(ADAM_M_PREFIX, &mut m), (ADAM_V_PREFIX, &mut v)] {
                        let key = format!("{prefix}{name}");
                        let moment = flat
                            .by_name(&key)
                            .ok_or_else(|| Error::shape(format!("missing {key}")))?;
                        if moment.shape() != t.shape() {
                            return Err(Error::shape(format!("{key} has wrong shape")));
                        }
                        dest.push(moment.clone());
                    }
                }
                self.adam = Some(AdamState {
                    config,
                    step: step.data()[0] as u64,
                    m,
                    v,
                });
            }
        }
        Ok(())
    }
}

/// One bias-corrected Adam step on every coordinate of `params`.
pub fn adam_update(params: &mut ParameterSet, grads: &ParameterSet, lr: f64) -> Result<()> {
    params.ensure_congruent(grads)?;
    let mut adam = params
        .adam
        .take()
        .ok_or_else(|| Error::State("adam_update on a set without optimizer state".into()))?;
    adam.step += 1;
    let AdamConfig {
        beta1,
        beta2,
        epsilon,
    } = adam.config;
    let t = adam.step as i32;
    let bias1 = 1.0 - beta1.powi(t);
    let bias2 = 1.0 - beta2.powi(t);
    for i in 0..params.len() {
        let j = params.aligned_index(grads, i);
        let g = grads.tensor_at(j).data();
        let m = adam.m[i].data_mut();
        let v = adam.v[i].data_mut();
        let p = params.get_mut(super::params::ParamId(i)).data_mut();
        for k in 0..p.len() {
            m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
            v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
            let m_hat = m[k] / bias1;
            let v_hat = v[k] / bias2;
            p[k] -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    params.adam = Some(adam);
    Ok(())
}

/// Blends `online` into `target`: `target <- tau * online + (1 - tau) * target`.
pub fn polyak_update(target: &mut ParameterSet, online: &ParameterSet, tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::config("agent.tau", format!("must lie in (0, 1], got {tau}")));
    }
    target.ensure_congruent(online)?;
    for i in 0..target.len() {
        let j = target.aligned_index(online, i);
        let src = online.tensor_at(j).data();
        let dst = target.get_mut(super::params::ParamId(i)).data_mut();
        for (t, &o) in dst.iter_mut().zip(src) {
            *t = blend(*t, o, tau);
        }
    }
    Ok(())
}

/// The convex combination, clamped so rounding can never leave the interval
/// spanned by its endpoints.
#[inline]
pub fn blend(target: f64, online: f64, tau: f64) -> f64 {
    if tau == 1.0 {
        return online;
    }
    let mixed = tau * online + (1.0 - tau) * target;
    mixed.clamp(target.min(online), target.max(online))
}
