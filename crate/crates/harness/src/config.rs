//! Experiment configuration: TOML on disk, resolved into concrete models and
//! numbers before anything runs.

use std::fmt;
use std::path::{Path, PathBuf};

use mvtd_core::actor::CriticStep;
use mvtd_core::critic::geometric_checkpoints;
use mvtd_core::features::{build_feature_set, identity_features, matrix_from_rows, random_orthonormal, FeatureSet};
use mvtd_core::gradients::{ActionFeatures, SoftmaxPolicy};
use mvtd_core::mdp::{chain_mdp, garnet_mdp, induced_chain, GarnetParams, Mdp, MdpDocument, TabularPolicy};
use mvtd_core::system::{assemble_system, spectral_constants, CriticSystem, InstanceBounds};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::instances;
use crate::manifest::RunManifest;

/// A number or the keyword `"auto"`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AutoOr {
    Value(f64),
    Keyword(Auto),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Auto {
    #[serde(rename = "auto")]
    Auto,
}

impl Default for AutoOr {
    fn default() -> Self {
        Self::Keyword(Auto::Auto)
    }
}

impl AutoOr {
    fn value(self) -> Option<f64> {
        match self {
            Self::Value(v) => Some(v),
            Self::Keyword(_) => None,
        }
    }
}

impl fmt::Display for AutoOr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Value(v) => write!(f, "{v}"),
            Self::Keyword(_) => f.write_str("auto"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MdpSpec {
    Named {
        name: String,
    },
    Chain {
        length: usize,
        #[serde(default = "default_slip")]
        slip: f64,
        gamma: f64,
        #[serde(default)]
        left_reward: f64,
    },
    Garnet {
        states: usize,
        actions: usize,
        branching: usize,
        gamma: f64,
        #[serde(default = "one")]
        r_max: f64,
        #[serde(default)]
        seed: u64,
    },
    File {
        path: PathBuf,
    },
    Inline {
        document: MdpDocument,
    },
}

fn default_slip() -> f64 {
    0.1
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PolicySpec {
    #[default]
    Uniform,
    Tabular {
        rows: Vec<Vec<f64>>,
    },
    Softmax {
        theta: Vec<f64>,
        action_features: ActionFeatureSpec,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ActionFeatureSpec {
    #[default]
    OneHot,
    /// Zero for action 0, `scale` times the state's unit vector for action 1
    /// (two-action MDPs).
    Reference {
        scale: f64,
    },
    Explicit {
        features: Vec<Vec<Vec<f64>>>,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FeatureSpec {
    #[default]
    Identity,
    Random {
        q: usize,
        #[serde(default)]
        seed: u64,
    },
    Matrix {
        phi_v: Vec<Vec<f64>>,
        phi_u: Vec<Vec<f64>>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticSpec {
    #[serde(default = "default_t")]
    pub t: u64,
    /// Tail start; defaults to t/2.
    #[serde(default)]
    pub k: Option<u64>,
    #[serde(default)]
    pub beta: AutoOr,
    /// Absent: plain TD. `"auto"` resolves to 1/sqrt(t - k).
    #[serde(default)]
    pub zeta: Option<AutoOr>,
    /// Absent: no projection. `"auto"` resolves to 1.1 ||xi|| / mu.
    #[serde(default)]
    pub h: Option<AutoOr>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub override_step_size: bool,
    /// Defaults to powers of two up to t.
    #[serde(default)]
    pub checkpoints: Option<Vec<u64>>,
}

fn default_t() -> u64 {
    10_000
}

fn default_replications() -> usize {
    10
}

fn default_delta() -> f64 {
    0.1
}

impl Default for CriticSpec {
    fn default() -> Self {
        Self {
            t: default_t(),
            k: None,
            beta: AutoOr::default(),
            zeta: None,
            h: None,
            replications: default_replications(),
            delta: default_delta(),
            override_step_size: false,
            checkpoints: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorSpec {
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub s0: usize,
    #[serde(default = "default_critic_step")]
    pub critic_step: CriticStep,
    #[serde(default)]
    pub action_features: ActionFeatureSpec,
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
    #[serde(default = "one_usize")]
    pub replications: usize,
}

fn default_n() -> usize {
    256
}

fn default_critic_step() -> CriticStep {
    CriticStep::Global { mu_floor: 0.04 }
}

fn one_usize() -> usize {
    1
}

impl Default for ActorSpec {
    fn default() -> Self {
        Self {
            n: default_n(),
            lambda: 0.0,
            s0: 0,
            critic_step: default_critic_step(),
            action_features: ActionFeatureSpec::default(),
            theta0: None,
            replications: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub mdp: MdpSpec,
    #[serde(default)]
    pub policy: PolicySpec,
    #[serde(default)]
    pub features: FeatureSpec,
    #[serde(default)]
    pub critic: CriticSpec,
    #[serde(default)]
    pub actor: ActorSpec,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// Reads a TOML config, or the config snapshot stored in a run manifest
/// (`.json`).
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    if path.extension().is_some_and(|e| e == "json") {
        let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| HarnessError::Parse {
            path: path.into(),
            message: format!("line {}, column {}: {e}", e.line(), e.column()),
        })?;
        return manifest.config.ok_or_else(|| HarnessError::Parse {
            path: path.into(),
            message: "manifest carries no experiment config (suite manifests replay with `verify --manifest`)".into(),
        });
    }
    parse_config(&text).map_err(|message| HarnessError::Parse {
        path: path.into(),
        message,
    })
}

/// Parses TOML text; the error message carries line and column.
pub fn parse_config(text: &str) -> std::result::Result<ExperimentConfig, String> {
    toml::from_str(text).map_err(|e| e.to_string())
}

/// A config with every default and `"auto"` replaced by a number, plus the
/// models it describes.
pub struct Resolved {
    pub config: ExperimentConfig,
    pub mdp: Mdp,
    pub policy: TabularPolicy,
    pub softmax: Option<SoftmaxPolicy>,
    pub features: FeatureSet,
    /// Critic system for the evaluated policy when mu > 0.
    pub system: Option<CriticSystem>,
    /// One line per materialized value.
    pub log: Vec<String>,
}

impl ExperimentConfig {
    pub fn build_mdp(&self) -> Result<Mdp> {
        Ok(match &self.mdp {
            MdpSpec::Named { name } => instances::named(name).ok_or_else(|| {
                HarnessError::ConstraintViolation(format!(
                    "unknown instance {name:?}; expected one of {:?}",
                    instances::NAMED
                ))
            })??,
            MdpSpec::Chain {
                length,
                slip,
                gamma,
                left_reward,
            } => chain_mdp(*length, *slip, *gamma, *left_reward)?,
            MdpSpec::Garnet {
                states,
                actions,
                branching,
                gamma,
                r_max,
                seed,
            } => garnet_mdp(
                GarnetParams {
                    num_states: *states,
                    num_actions: *actions,
                    branching: *branching,
                    gamma: *gamma,
                    r_max: *r_max,
                },
                &mut ChaCha8Rng::seed_from_u64(*seed),
            )?,
            MdpSpec::File { path } => Mdp::load(path)?,
            MdpSpec::Inline { document } => mvtd_core::mdp::validate_mdp(document.clone())?,
        })
    }

    /// Resolves defaults and auto values against the instance.
    pub fn resolve(&self) -> Result<Resolved> {
        let mut config = self.clone();
        let mut log = Vec::new();
        let mdp = config.build_mdp()?;
        let (policy, softmax) = match &config.policy {
            PolicySpec::Uniform => (TabularPolicy::uniform(mdp.num_states(), mdp.num_actions()), None),
            PolicySpec::Tabular { rows } => (TabularPolicy::from_rows(rows)?, None),
            PolicySpec::Softmax { theta, action_features } => {
                let feats = action_features.build(&mdp)?;
                let sm = SoftmaxPolicy::new(DVector::from_column_slice(theta), feats)?;
                (sm.tabular(), Some(sm))
            }
        };
        if policy.probs().nrows() != mdp.num_states() || policy.probs().ncols() != mdp.num_actions() {
            return Err(mvtd_core::Error::DimensionMismatch("policy shape does not match the MDP".into()).into());
        }
        let chain = induced_chain(&mdp, &policy)?;
        let features = match &config.features {
            FeatureSpec::Identity => identity_features(&chain)?,
            FeatureSpec::Random { q, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let phi_v = random_orthonormal(mdp.num_states(), *q, &mut rng)?;
                let phi_u = random_orthonormal(mdp.num_states(), *q, &mut rng)?;
                build_feature_set(phi_v, phi_u, &chain)?
            }
            FeatureSpec::Matrix { phi_v, phi_u } => {
                build_feature_set(matrix_from_rows(phi_v)?, matrix_from_rows(phi_u)?, &chain)?
            }
        };

        let c = &mut config.critic;
        if c.t == 0 {
            return Err(HarnessError::ConstraintViolation("critic.t must be positive".into()));
        }
        let k = *c.k.get_or_insert_with(|| {
            log.push(format!("critic.k = {} (t/2)", c.t / 2));
            c.t / 2
        });
        if k >= c.t {
            return Err(HarnessError::ConstraintViolation(format!(
                "tail start k = {k} must be smaller than t = {}",
                c.t
            )));
        }
        if c.replications < 2 {
            return Err(HarnessError::ConstraintViolation("critic.replications must be at least 2".into()));
        }
        if !(c.delta > 0.0 && c.delta < 1.0) {
            return Err(HarnessError::ConstraintViolation(format!("delta = {} not in (0, 1)", c.delta)));
        }
        if let Some(AutoOr::Keyword(_)) = c.zeta {
            let zeta = 1.0 / ((c.t - k) as f64).sqrt();
            log.push(format!("critic.zeta = {zeta} (1/sqrt(t - k))"));
            c.zeta = Some(AutoOr::Value(zeta));
        }
        let zeta = c.zeta.and_then(AutoOr::value);
        let (m, xi) = assemble_system(&chain, &features, mdp.gamma())?;
        let system = match CriticSystem::from_parts(
            m.clone(),
            xi,
            InstanceBounds::from_features(&features, mdp.gamma(), mdp.r_max()),
        ) {
            Ok(s) => Some(s),
            Err(mvtd_core::Error::NotPositive { .. }) => None,
            Err(e) => return Err(e.into()),
        };
        if let Some(AutoOr::Keyword(_)) = c.h {
            let sys = system.as_ref().ok_or_else(|| spectral_constants(&m).unwrap_err())?;
            let h = sys.auto_radius();
            log.push(format!("critic.h = {h} (1.1 ||xi|| / mu)"));
            c.h = Some(AutoOr::Value(h));
        }
        let h = c.h.and_then(AutoOr::value);
        if let AutoOr::Keyword(_) = c.beta {
            let bounds = InstanceBounds::from_features(&features, mdp.gamma(), mdp.r_max());
            let beta = match zeta {
                Some(z) => {
                    let b = z / bounds.c_check(z);
                    log.push(format!("critic.beta = {b} (zeta / c_check)"));
                    b
                }
                None => {
                    let sys = system.as_ref().ok_or_else(|| spectral_constants(&m).unwrap_err())?;
                    log.push(format!("critic.beta = {} (mu / c)", sys.beta_max));
                    sys.beta_max
                }
            };
            c.beta = AutoOr::Value(beta);
        }
        if c.checkpoints.is_none() {
            c.checkpoints = Some(geometric_checkpoints(c.t));
        }
        let system = match system {
            Some(mut s) => {
                if let Some(z) = zeta {
                    s = s.with_zeta(z)?;
                }
                if let Some(h) = h {
                    s = s.with_projection(h)?;
                }
                Some(s)
            }
            None => None,
        };
        Ok(Resolved {
            config,
            mdp,
            policy,
            softmax,
            features,
            system,
            log,
        })
    }
}

impl ActionFeatureSpec {
    pub fn build(&self, mdp: &Mdp) -> Result<ActionFeatures> {
        Ok(match self {
            Self::OneHot => ActionFeatures::one_hot(mdp.num_states(), mdp.num_actions()),
            Self::Reference { scale } => {
                if mdp.num_actions() != 2 {
                    return Err(HarnessError::ConstraintViolation(
                        "reference action features need exactly two actions".into(),
                    ));
                }
                let n = mdp.num_states();
                let rows: Vec<Vec<Vec<f64>>> = (0..n)
                    .map(|s| {
                        let mut e = vec![0.0; n];
                        e[s] = *scale;
                        vec![vec![0.0; n], e]
                    })
                    .collect();
                ActionFeatures::from_nested(&rows)?
            }
            Self::Explicit { features } => ActionFeatures::from_nested(features)?,
        })
    }
}

impl Resolved {
    pub fn beta(&self) -> f64 {
        self.config.critic.beta.value().expect("resolved")
    }

    pub fn k(&self) -> u64 {
        self.config.critic.k.expect("resolved")
    }

    pub fn zeta(&self) -> Option<f64> {
        self.config.critic.zeta.and_then(AutoOr::value)
    }

    pub fn h(&self) -> Option<f64> {
        self.config.critic.h.and_then(AutoOr::value)
    }
}
