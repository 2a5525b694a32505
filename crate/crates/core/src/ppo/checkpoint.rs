//! Versioned JSON checkpoint for [`PolicyParams`].

use super::{PolicyParams, PpoError};
use crate::ppo::net::Mlp;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const CHECKPOINT_FORMAT: &str = "awac-policy";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    format: String,
    version: u32,
    obs_dim: usize,
    n_actions: usize,
    hidden_sizes: Vec<usize>,
    policy_sizes: Vec<usize>,
    value_sizes: Vec<usize>,
    policy_params: Vec<f64>,
    value_params: Vec<f64>,
}

pub fn to_json(policy: &PolicyParams) -> Result<String, PpoError> {
    let doc = CheckpointDoc {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        obs_dim: policy.obs_dim(),
        n_actions: policy.n_actions(),
        hidden_sizes: policy.hidden_sizes().to_vec(),
        policy_sizes: policy.policy.sizes().to_vec(),
        value_sizes: policy.value.sizes().to_vec(),
        policy_params: policy.policy.params().to_vec(),
        value_params: policy.value.params().to_vec(),
    };
    serde_json::to_string(&doc).map_err(|e| PpoError::Corrupt(e.to_string()))
}

pub fn from_json(text: &str) -> Result<PolicyParams, PpoError> {
    let doc: CheckpointDoc =
        serde_json::from_str(text).map_err(|e| PpoError::Corrupt(e.to_string()))?;
    if doc.format != CHECKPOINT_FORMAT {
        return Err(PpoError::Corrupt(format!("unknown format {:?}", doc.format)));
    }
    if doc.version != CHECKPOINT_VERSION {
        return Err(PpoError::Version {
            found: doc.version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let expect_policy: Vec<usize> = std::iter::once(doc.obs_dim)
        .chain(doc.hidden_sizes.iter().copied())
        .chain(std::iter::once(doc.n_actions))
        .collect();
    let expect_value: Vec<usize> = std::iter::once(doc.obs_dim)
        .chain(doc.hidden_sizes.iter().copied())
        .chain(std::iter::once(1))
        .collect();
    if doc.policy_sizes != expect_policy || doc.value_sizes != expect_value {
        return Err(PpoError::Corrupt("layer sizes disagree with shape header".into()));
    }
    let policy = Mlp::from_params(doc.policy_sizes, doc.policy_params)
        .ok_or_else(|| PpoError::Corrupt("policy parameter count mismatch".into()))?;
    let value = Mlp::from_params(doc.value_sizes, doc.value_params)
        .ok_or_else(|| PpoError::Corrupt("value parameter count mismatch".into()))?;
    let params = PolicyParams {
        hidden_sizes: doc.hidden_sizes,
        policy,
        value,
    };
    if !params.is_finite() {
        return Err(PpoError::Corrupt("non-finite weights".into()));
    }
    Ok(params)
}

pub fn save_policy(policy: &PolicyParams, path: &Path) -> Result<(), PpoError> {
    fs::write(path, to_json(policy)?)?;
    Ok(())
}

pub fn load_policy(path: &Path) -> Result<PolicyParams, PpoError> {
    from_json(&fs::read_to_string(path)?)
}

/// Loads and checks the policy matches the given input/output shape.
pub fn load_policy_for(
    path: &Path,
    obs_dim: usize,
    n_actions: usize,
) -> Result<PolicyParams, PpoError> {
    let p = load_policy(path)?;
    p.check_shape(obs_dim, n_actions)?;
    Ok(p)
}
