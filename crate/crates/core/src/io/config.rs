//! Experiment configuration: a flat `key = value` schema with dotted section
//! prefixes, zero-dependency parsing, and validation errors that name the
//! offending key.

use std::path::{Path, PathBuf};

use crate::chain::Condition;
use crate::creation::StrategyProfile;
use crate::error::{Error, Result};
use crate::fitness::{AdvantageMode, BitstringConfig, MutationRate};
use crate::policies::{AttachmentMode, PolicyMixture, CRITERION_LABELS};

/// One value per experimental condition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerCondition<T> {
    pub pi: T,
    pub npi: T,
}

impl<T> PerCondition<T> {
    pub fn get(&self, condition: Condition) -> &T {
        match condition {
            Condition::Pi => &self.pi,
            Condition::Npi => &self.npi,
        }
    }

    pub fn get_mut(&mut self, condition: Condition) -> &mut T {
        match condition {
            Condition::Pi => &mut self.pi,
            Condition::Npi => &mut self.npi,
        }
    }
}

/// How bitstring mutation strength is interpreted.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub enum MutationMode {
    #[default]
    Flips,
    PerBit,
}

impl MutationMode {
    pub fn label(self) -> &'static str {
        match self {
            MutationMode::Flips => "flips",
            MutationMode::PerBit => "per_bit",
        }
    }
}

/// Settings of the bitstring fitness model.
#[derive(Clone, Debug, PartialEq)]
pub struct FitnessSettings {
    pub bits: usize,
    pub mu_low: f64,
    pub mu_high: f64,
    pub mutation_mode: MutationMode,
    pub window: u32,
    pub generations: u32,
    pub chains: u32,
    pub initial_fill: f64,
    pub advantage_mode: AdvantageMode,
}

impl Default for FitnessSettings {
    fn default() -> Self {
        FitnessSettings {
            bits: 256,
            mu_low: 8.0,
            mu_high: 64.0,
            mutation_mode: MutationMode::Flips,
            window: 12,
            generations: 60,
            chains: 128,
            initial_fill: 0.4,
            advantage_mode: AdvantageMode::Gate,
        }
    }
}

impl FitnessSettings {
    fn mutation_rate(&self, mu: f64, key: &str) -> Result<MutationRate> {
        match self.mutation_mode {
            MutationMode::Flips => {
                if mu.fract() != 0.0 || mu < 1.0 {
                    return Err(Error::config(
                        key,
                        format!("`{mu}` is not a positive integer flip count"),
                    ));
                }
                Ok(MutationRate::Flips(mu as u32))
            }
            MutationMode::PerBit => Ok(MutationRate::PerBit(mu)),
        }
    }

    pub fn config_for(&self, mu: f64, cumulative_advantage: f64, key: &str) -> Result<BitstringConfig> {
        let config = BitstringConfig {
            bits: self.bits,
            mutation: self.mutation_rate(mu, key)?,
            cumulative_advantage,
            window: self.window,
            generations: self.generations,
            chains: self.chains,
            initial_fill: self.initial_fill,
            advantage_mode: self.advantage_mode,
        };
        config
            .validate()
            .map_err(|e| Error::config(key, e.to_string()))?;
        Ok(config)
    }

    /// The four standard parameterizations: low/high mutation crossed with
    /// cumulative advantage off/on.
    pub fn parameterizations(&self) -> Result<Vec<(String, BitstringConfig)>> {
        let mut out = Vec::with_capacity(4);
        for (mu_label, mu, mu_key) in [
            ("low_mu", self.mu_low, "fitness.mu_low"),
            ("high_mu", self.mu_high, "fitness.mu_high"),
        ] {
            for c in [0.0, 1.0] {
                let label = format!("{mu_label}_c{}", c as u32);
                out.push((label, self.config_for(mu, c, mu_key)?));
            }
        }
        Ok(out)
    }
}

/// Full experiment configuration with every default resolved.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    /// Number of chain pairs; each pair couples a PI and an NPI chain started
    /// from the same seed image.
    pub chains: u32,
    pub generations: u32,
    pub window: u32,
    /// When false, every chain draws its own seed image.
    pub paired: bool,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Monte-Carlo resamples for permutation tests on > 20 pairs.
    pub resamples: u32,
    pub mixtures: PerCondition<PolicyMixture>,
    pub beta: [f64; 4],
    pub profiles: PerCondition<StrategyProfile>,
    pub attachment: AttachmentMode,
    /// Fill probability of seed images.
    pub seed_image_fill: f64,
    pub fitness: FitnessSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            chains: 128,
            generations: 60,
            window: 12,
            paired: true,
            seed: 42,
            out_dir: PathBuf::from("out"),
            resamples: 10_000,
            mixtures: PerCondition {
                pi: PolicyMixture::pi_default(),
                npi: PolicyMixture::npi_default(),
            },
            beta: [1.0; 4],
            profiles: PerCondition {
                pi: StrategyProfile::pi_default(),
                npi: StrategyProfile::npi_default(),
            },
            attachment: AttachmentMode::Argmax,
            seed_image_fill: 0.5,
            fitness: FitnessSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 {
            return Err(Error::config("chains", "must be at least 1"));
        }
        if self.generations == 0 {
            return Err(Error::config("generations", "must be at least 1"));
        }
        if self.window == 0 {
            return Err(Error::config("window", "must be at least 1"));
        }
        if self.resamples == 0 {
            return Err(Error::config("resamples", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.seed_image_fill) {
            return Err(Error::config("seed_image.fill", "must lie in [0, 1]"));
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::config("beta", "coefficients must be finite"));
        }
        self.mixtures
            .npi
            .validate_for(Condition::Npi)
            .map_err(|e| Error::config("policy.npi", e.to_string()))?;
        self.fitness.parameterizations()?;
        Ok(())
    }
}

/// Loads a config file, resolving defaults for every key the file omits.
/// An empty file yields the full default configuration.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::config(
            "config",
            format!("cannot read `{}`: {e}", path.display()),
        )
    })?;
    parse_config(&text)
}

/// Parses config text; see the README for the key schema.
///
/// Weight-style keys (policy mixtures, strategy profiles) are collected raw
/// and normalized once after the whole file is read, so overriding a subset
/// of weights behaves as expected.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut staging = Staging::default();
    for (line_no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::config(
                format!("line {}", line_no + 1),
                format!("expected `key = value`, got `{line}`"),
            )
        })?;
        apply_key(&mut staging, key.trim(), value.trim())?;
    }
    let mut config = staging.config;
    for condition in Condition::ALL {
        *config.mixtures.get_mut(condition) =
            PolicyMixture::new(*staging.policy_weights.get(condition)).map_err(|e| {
                Error::config(
                    format!("policy.{}", condition.label().to_lowercase()),
                    e.to_string(),
                )
            })?;
        *config.profiles.get_mut(condition) =
            StrategyProfile::new(*staging.strategy_probs.get(condition)).map_err(|e| {
                Error::config(
                    format!("strategy.{}", condition.label().to_lowercase()),
                    e.to_string(),
                )
            })?;
    }
    config.validate()?;
    Ok(config)
}

/// Parse state: the config plus raw (unnormalized) weight vectors.
struct Staging {
    config: ExperimentConfig,
    policy_weights: PerCondition<[f64; 4]>,
    strategy_probs: PerCondition<[f64; 5]>,
}

impl Default for Staging {
    fn default() -> Self {
        let config = ExperimentConfig::default();
        Staging {
            policy_weights: PerCondition {
                pi: config.mixtures.pi.weights(),
                npi: config.mixtures.npi.weights(),
            },
            strategy_probs: PerCondition {
                pi: config.profiles.pi.probs(),
                npi: config.profiles.npi.probs(),
            },
            config,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::config(key, format!("expected true/false, got `{value}`"))),
    }
}

fn apply_key(staging: &mut Staging, key: &str, value: &str) -> Result<()> {
    let config = &mut staging.config;
    match key {
        "chains" => config.chains = parse_num(key, value)?,
        "generations" => config.generations = parse_num(key, value)?,
        "window" => config.window = parse_num(key, value)?,
        "paired" => config.paired = parse_bool(key, value)?,
        "seed" => config.seed = parse_num(key, value)?,
        "out" => config.out_dir = PathBuf::from(value),
        "resamples" => config.resamples = parse_num(key, value)?,
        "seed_image.fill" => config.seed_image_fill = parse_num(key, value)?,
        "policy.attachment" => {
            config.attachment = match value {
                "argmax" => AttachmentMode::Argmax,
                "proportional" => AttachmentMode::Proportional,
                _ => {
                    return Err(Error::config(
                        key,
                        format!("expected argmax/proportional, got `{value}`"),
                    ))
                }
            }
        }
        _ if key.starts_with("policy.") => return apply_policy_key(staging, key, value),
        _ if key.starts_with("beta.") => return apply_beta_key(config, key, value),
        _ if key.starts_with("strategy.") => return apply_strategy_key(staging, key, value),
        _ if key.starts_with("fitness.") => return apply_fitness_key(config, key, value),
        _ => return Err(Error::config(key, "unknown key")),
    }
    Ok(())
}

fn parse_weight(key: &str, value: &str) -> Result<f64> {
    let weight: f64 = parse_num(key, value)?;
    if !weight.is_finite() || weight < 0.0 {
        return Err(Error::config(key, "must be finite and non-negative"));
    }
    Ok(weight)
}

fn condition_from_key(key: &str, part: &str) -> Result<Condition> {
    match part {
        "pi" => Ok(Condition::Pi),
        "npi" => Ok(Condition::Npi),
        _ => Err(Error::config(key, format!("unknown condition `{part}`"))),
    }
}

const POLICY_KEYS: [&str; 4] = ["image_driven", "cumulative_advantage", "balancing", "random"];

fn apply_policy_key(staging: &mut Staging, key: &str, value: &str) -> Result<()> {
    let mut parts = key.splitn(3, '.');
    let _ = parts.next();
    let condition = condition_from_key(key, parts.next().unwrap_or_default())?;
    let policy = parts.next().unwrap_or_default();
    let slot = POLICY_KEYS
        .iter()
        .position(|p| *p == policy)
        .ok_or_else(|| Error::config(key, format!("unknown policy `{policy}`")))?;
    staging.policy_weights.get_mut(condition)[slot] = parse_weight(key, value)?;
    Ok(())
}

fn apply_beta_key(config: &mut ExperimentConfig, key: &str, value: &str) -> Result<()> {
    let criterion = key.strip_prefix("beta.").unwrap_or_default();
    let slot = CRITERION_LABELS
        .iter()
        .position(|c| *c == criterion)
        .ok_or_else(|| Error::config(key, format!("unknown criterion `{criterion}`")))?;
    config.beta[slot] = parse_num(key, value)?;
    Ok(())
}

const STRATEGY_KEYS: [&str; 5] = [
    "disruption",
    "addition",
    "pattern_growth",
    "removal",
    "refinement",
];

fn apply_strategy_key(staging: &mut Staging, key: &str, value: &str) -> Result<()> {
    let mut parts = key.splitn(3, '.');
    let _ = parts.next();
    let condition = condition_from_key(key, parts.next().unwrap_or_default())?;
    let strategy = parts.next().unwrap_or_default();
    let slot = STRATEGY_KEYS
        .iter()
        .position(|s| *s == strategy)
        .ok_or_else(|| Error::config(key, format!("unknown strategy `{strategy}`")))?;
    staging.strategy_probs.get_mut(condition)[slot] = parse_weight(key, value)?;
    Ok(())
}

fn apply_fitness_key(config: &mut ExperimentConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "fitness.bits" => config.fitness.bits = parse_num(key, value)?,
        "fitness.mu_low" => config.fitness.mu_low = parse_num(key, value)?,
        "fitness.mu_high" => config.fitness.mu_high = parse_num(key, value)?,
        "fitness.mutation_mode" => {
            config.fitness.mutation_mode = match value {
                "flips" => MutationMode::Flips,
                "per_bit" => MutationMode::PerBit,
                _ => {
                    return Err(Error::config(
                        key,
                        format!("expected flips/per_bit, got `{value}`"),
                    ))
                }
            }
        }
        "fitness.window" => config.fitness.window = parse_num(key, value)?,
        "fitness.generations" => config.fitness.generations = parse_num(key, value)?,
        "fitness.chains" => config.fitness.chains = parse_num(key, value)?,
        "fitness.initial_fill" => config.fitness.initial_fill = parse_num(key, value)?,
        "fitness.advantage_mode" => {
            config.fitness.advantage_mode =
                AdvantageMode::parse(value).map_err(|e| Error::config(key, e.to_string()))?
        }
        _ => return Err(Error::config(key, "unknown key")),
    }
    Ok(())
}
