//! JSON checkpoints: every parameter tensor keyed by name, plus enough
//! metadata to rebuild the policy without the original config.

use std::collections::BTreeMap;
use std::path::Path;

use pegrad_core::nets::{MlpSpec, SquashedGaussianPolicy};
use pegrad_core::{Combiner, EnergyMode, EnvId, ParamVector};
use serde::{Deserialize, Serialize};

use crate::config::Algorithm;
use crate::error::{CliError, Result};

pub const POLICY_PREFIX: &str = "policy.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorRecord {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub algorithm: Algorithm,
    pub env: EnvId,
    pub energy_mode: EnergyMode,
    pub combiner: Combiner,
    pub seed: u64,
    /// Environment step at which the parameters were captured.
    pub step: u64,
    pub policy: MlpSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub metadata: CheckpointMeta,
    pub params: BTreeMap<String, TensorRecord>,
}

impl Checkpoint {
    /// `networks` are stored under `<name>.` prefixes next to `policy.`.
    pub fn new(metadata: CheckpointMeta, policy: &ParamVector, networks: &[(String, ParamVector)]) -> Result<Self> {
        let mut params = BTreeMap::new();
        let groups = std::iter::once((POLICY_PREFIX.to_string(), policy))
            .chain(networks.iter().map(|(n, p)| (format!("{n}."), p)));
        for (prefix, pv) in groups {
            if !pv.all_finite() {
                return Err(CliError::Run(format!("refusing to checkpoint non-finite parameters in `{prefix}`")));
            }
            for (name, t) in pv.renamed(&prefix).unflatten() {
                params.insert(
                    name,
                    TensorRecord {
                        shape: t.shape().to_vec(),
                        values: t.into_data(),
                    },
                );
            }
        }
        Ok(Self { metadata, params })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("checkpoint serialises");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| CliError::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
        Self::from_json(&text).map_err(|e| CliError::Format {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    /// Rebuilds the policy, checking every tensor against the layout implied
    /// by the stored spec and the environment's action bounds.
    pub fn policy(&self) -> Result<SquashedGaussianPolicy> {
        let env = self.metadata.env.make(self.metadata.energy_mode);
        let spec = env.spec();
        let template = SquashedGaussianPolicy::new(
            self.metadata.policy.clone(),
            &spec.low,
            &spec.high,
            &mut pegrad_core::rng::seeded(0),
        )?;
        let mut values = Vec::with_capacity(template.params().len());
        for entry in template.params().layout() {
            let key = format!("{POLICY_PREFIX}{}", entry.name);
            let rec = self
                .params
                .get(&key)
                .ok_or_else(|| CliError::Run(format!("checkpoint is missing `{key}`")))?;
            if rec.shape != entry.shape || rec.values.len() != entry.numel() {
                return Err(CliError::Run(format!(
                    "`{key}` has shape {:?}, expected {:?}",
                    rec.shape, entry.shape
                )));
            }
            values.extend_from_slice(&rec.values);
        }
        let params = template.params().with_values(values)?;
        Ok(SquashedGaussianPolicy::from_params(
            self.metadata.policy.clone(),
            params,
            &spec.low,
            &spec.high,
        )?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let spec = MlpSpec::new(6, &[4], 2, pegrad_core::nets::Activation::Tanh).unwrap();
        let policy =
            SquashedGaussianPolicy::new(spec.clone(), &[-1.0; 2], &[1.0; 2], &mut pegrad_core::rng::seeded(3)).unwrap();
        let meta = CheckpointMeta {
            algorithm: Algorithm::Ppo,
            env: EnvId::Pointmass,
            energy_mode: EnergyMode::AbsTorque,
            combiner: Combiner::Scalarized { lambda: 0.1 },
            seed: 3,
            step: 1000,
            policy: spec,
        };
        let extra = vec![("v_task".to_string(), policy.params().renamed("x."))];
        Checkpoint::new(meta, policy.params(), &extra).unwrap()
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let ck = sample();
        let first = ck.to_json();
        let again = Checkpoint::from_json(&first).unwrap();
        assert_eq!(again, ck);
        assert_eq!(again.to_json(), first);
    }

    #[test]
    fn policy_round_trips() {
        let ck = sample();
        let p = ck.policy().unwrap();
        let back = Checkpoint::new(ck.metadata.clone(), p.params(), &[]).unwrap();
        for (k, v) in &back.params {
            assert_eq!(ck.params[k], *v);
        }
    }

    #[test]
    fn wrong_shape_is_rejected() {
        let mut ck = sample();
        ck.params.get_mut("policy.mean.weight").unwrap().shape = vec![2, 4];
        assert!(ck.policy().is_err());
        let mut ck = sample();
        ck.params.remove("policy.log_std.bias");
        assert!(ck.policy().is_err());
    }
}
