//! TOML run configuration merged with command line flags.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use xdiff_core::baselines::{LearnerConfigs, ProviderKind};
use xdiff_core::env::Scenario;
use xdiff_core::experiment::{RunSpec, StepChange};

/// Everything a config file may set; flags take precedence.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Option<String>,
    /// Full scenario, replacing the preset.
    pub scenario: Option<Scenario>,
    pub provider: Option<ProviderKind>,
    pub seeds: Option<u64>,
    pub first_seed: Option<u64>,
    pub slots: Option<usize>,
    pub latency_coupling: Option<bool>,
    pub step_change: Option<StepChange>,
    pub learners: LearnerConfigs,
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        toml::from_str(text).with_context(|| format!("failed to parse config {origin}"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::parse(&text, &path.display().to_string())
    }
}

/// Flag values; `None` defers to the config file, then to the defaults.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub preset: Option<String>,
    pub provider: Option<ProviderKind>,
    pub seeds: Option<u64>,
    pub slots: Option<usize>,
    pub latency_coupling: Option<bool>,
}

pub const DEFAULT_PRESET: &str = "lab";
pub const DEFAULT_SLOTS: usize = 3000;
pub const DEFAULT_SEEDS: u64 = 1;

/// A validated batch: one provider, several seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub scenario: Scenario,
    pub provider: ProviderKind,
    pub seeds: Vec<u64>,
    pub slots: usize,
    pub latency_coupling: bool,
    pub step_change: Option<StepChange>,
    pub learners: LearnerConfigs,
}

impl Resolved {
    pub fn new(cfg: &RunConfig, flags: &Overrides) -> Result<Self> {
        let scenario = match (&flags.preset, &cfg.scenario, &cfg.preset) {
            (Some(p), _, _) => Scenario::preset(p)?,
            (None, Some(s), _) => s.clone(),
            (None, None, Some(p)) => Scenario::preset(p)?,
            (None, None, None) => Scenario::preset(DEFAULT_PRESET)?,
        };
        let seeds = flags.seeds.or(cfg.seeds).unwrap_or(DEFAULT_SEEDS);
        if seeds == 0 {
            bail!("--seeds must be at least 1");
        }
        let first = cfg.first_seed.unwrap_or(1);
        let out = Self {
            scenario,
            provider: flags.provider.or(cfg.provider).unwrap_or(ProviderKind::XDiff),
            seeds: (first..first + seeds).collect(),
            slots: flags.slots.or(cfg.slots).unwrap_or(DEFAULT_SLOTS),
            latency_coupling: flags.latency_coupling.or(cfg.latency_coupling).unwrap_or(false),
            step_change: cfg.step_change,
            learners: cfg.learners.clone(),
        };
        // Validate everything before any simulation starts.
        for &seed in &out.seeds {
            out.spec(seed).validate().context("invalid run configuration")?;
        }
        Ok(out)
    }

    pub fn spec(&self, seed: u64) -> RunSpec {
        RunSpec {
            scenario: self.scenario.clone(),
            provider: self.provider,
            seed,
            slots: self.slots,
            latency_coupling: self.latency_coupling,
            step_change: self.step_change,
            learners: self.learners.clone(),
            keep_trace: true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_the_file() {
        let cfg = RunConfig::parse("preset = \"building\"\nslots = 50\nseeds = 2\n", "inline").unwrap();
        let flags = Overrides {
            slots: Some(10),
            ..Overrides::default()
        };
        let r = Resolved::new(&cfg, &flags).unwrap();
        assert_eq!(r.scenario.name, "building");
        assert_eq!(r.slots, 10);
        assert_eq!(r.seeds, vec![1, 2]);
    }

    #[test]
    fn unknown_keys_are_reported_with_their_location() {
        let err = RunConfig::parse("slots = 10\n[learners.xdiff]\netaa = 2.0\n", "inline").unwrap_err();
        let msg = format!("{err:#}");
        assert!(msg.contains("etaa") && msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn inconsistent_scenarios_fail_before_running() {
        let mut s = Scenario::lab();
        s.network.ues_per_cell = vec![3, 3, 3];
        let cfg = RunConfig {
            scenario: Some(s),
            ..RunConfig::default()
        };
        assert!(Resolved::new(&cfg, &Overrides::default()).is_err());
    }
}
