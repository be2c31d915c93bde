use std::path::Path;

use serde::Deserialize;

use super::{BaseInit, Case, Method, MethodConfig, RunConfig, DEFAULT_SEEDS};
use crate::data::Placement;
use crate::enkf::EnkfConfig;
use crate::error::{Error, Result};
use crate::esmda::EsmdaConfig;
use crate::fnn::{Activation, BiasPlacement, NetworkSpec};
use crate::gd::GdConfig;

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSettings {
    pub hidden: usize,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    pub bias_placement: BiasPlacement,
}

impl Default for NetworkSettings {
    fn default() -> Self {
        Self {
            hidden: 10,
            hidden_activation: Activation::Tanh,
            output_activation: Activation::Identity,
            bias_placement: BiasPlacement::Hidden,
        }
    }
}

impl NetworkSettings {
    pub fn spec(&self) -> Result<NetworkSpec> {
        Ok(NetworkSpec::new(1, self.hidden, 1)?
            .with_activations(self.hidden_activation, self.output_activation)
            .with_bias_placement(self.bias_placement))
    }
}

/// Contents of a `--config` file: TOML with one optional table per method,
/// usually written with dotted keys:
///
/// ```toml
/// seeds = [1, 2, 3]
/// base = "gd_pretrained"
/// gd.learning_rate = 0.1
/// enkf.obs_var = 0.005
/// esmda.alpha = [9.333333333333334, 7.0, 4.0, 2.0]
/// esmda.n_i = 4
/// ```
///
/// Per-method `seed` keys are ignored: each run uses the seed from `seeds`.
/// The `gd` table also drives pretraining for the ensemble methods.
#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Settings {
    pub seeds: Option<Vec<u64>>,
    pub base: BaseInit,
    pub placement: Placement,
    pub data_seed: u64,
    pub network: NetworkSettings,
    pub gd: GdConfig,
    pub enkf: EnkfConfig,
    pub esmda: EsmdaConfig,
}

impl Settings {
    pub fn from_toml(text: &str) -> Result<Self> {
        let settings: Settings = toml::from_str(text)?;
        settings.network.spec()?;
        Ok(settings)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.seeds.clone().unwrap_or_else(|| DEFAULT_SEEDS.to_vec())
    }

    pub fn run_config(&self, case: Case, method: Method) -> RunConfig {
        let method = match method {
            Method::Gd => MethodConfig::Gd(self.gd.clone()),
            Method::Enkf => MethodConfig::Enkf(self.enkf.clone()),
            Method::Esmda => MethodConfig::Esmda(self.esmda.clone()),
        };
        RunConfig {
            case,
            method,
            seeds: self.seeds(),
            base: self.base,
            pretrain: self.gd.clone(),
            network: self
                .network
                .spec()
                .expect("network settings are validated on load"),
            placement: self.placement,
            data_seed: self.data_seed,
            out_dir: None,
        }
    }
}
