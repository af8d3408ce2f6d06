//! Scenario configuration: the TOML schema shared by the simulator, the
//! estimation tools and the CLI.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::behavior::PatienceModel;
use crate::control::PolicySpec;
use crate::distributions::EmpiricalDistribution;
use crate::error::{config, Error, Result};
use crate::kinematics::LaneConfig;

pub const SCHEMA_VERSION: u32 = 1;

const APRIL25: &str = include_str!("../../../configs/april25.toml");
const JULY13: &str = include_str!("../../../configs/july13.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehaviorConfig {
    /// Probability that a taxi drops a patron off inside the lane.
    pub dropoff_proportion: f64,
    /// Under non-batching policies a taxi entering with no stopped vehicle
    /// this close ahead counts as a lead taxi for its dwell time.
    #[serde(default = "default_sensing_range")]
    pub lead_sensing_range: f64,
    pub desired_location: EmpiricalDistribution,
    pub dwell_lead: EmpiricalDistribution,
    /// Door-open to door-close durations of non-lead taxis; its offset is
    /// the fixed preparation plus post-drop-off time.
    pub dwell_other: EmpiricalDistribution,
    pub patience: PatienceModel,
}

fn default_sensing_range() -> f64 {
    60.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrosswalkConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    pub red_duration: EmpiricalDistribution,
    pub green_duration: EmpiricalDistribution,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    /// Taxi arrivals per hour at the lane entry.
    pub demand_rate: f64,
    /// Seconds at the start excluded from statistics.
    pub warmup: f64,
    /// Total simulated seconds, warmup included.
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
    pub lane: LaneConfig,
    pub behavior: BehaviorConfig,
    pub crosswalk: CrosswalkConfig,
    pub policy: PolicySpec,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if !(self.demand_rate >= 0.0) {
            return Err(config("demand_rate must be non-negative"));
        }
        if !(self.warmup >= 0.0 && self.horizon > self.warmup) {
            return Err(config("need horizon > warmup >= 0"));
        }
        self.lane.validate(self.dt)?;
        let b = &self.behavior;
        if !(0.0..=1.0).contains(&b.dropoff_proportion) {
            return Err(config("dropoff_proportion must be a probability"));
        }
        if !(b.lead_sensing_range >= 0.0) {
            return Err(config("lead_sensing_range must be non-negative"));
        }
        if b.desired_location.min() < 0.0 || b.desired_location.max() >= self.lane.length {
            return Err(config("desired drop-off locations must lie inside the lane"));
        }
        if b.dwell_lead.min() < 0.0 || b.dwell_other.min() < 0.0 {
            return Err(config("dwell durations must be non-negative"));
        }
        b.patience.validate()?;
        if self.crosswalk.red_duration.min() <= 0.0 || self.crosswalk.green_duration.min() <= 0.0 {
            return Err(config("crosswalk phase durations must be positive"));
        }
        self.policy.validate(self.lane.length)?;
        Ok(())
    }

    /// Parses TOML text and validates the result.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Loads a config file, deep-merging each overlay (e.g. a fitted
    /// parameter fragment) on top before validation.
    pub fn load(path: &Path, overlays: &[&Path]) -> Result<Self> {
        Self::merged(read_table(path)?, &path.display().to_string(), overlays)
    }

    /// One of the shipped parameter sets: `april25` or `july13`.
    pub fn preset(name: &str) -> Result<Self> {
        Self::preset_with_overlays(name, &[])
    }

    /// A shipped parameter set with overlays merged on top, as in
    /// [`load`](Self::load).
    pub fn preset_with_overlays(name: &str, overlays: &[&Path]) -> Result<Self> {
        let text = match name {
            "april25" => APRIL25,
            "july13" => JULY13,
            other => return Err(config(format!("unknown preset {other:?} (april25, july13)"))),
        };
        let base = text
            .parse::<toml::Table>()
            .map_err(|e| config(format!("preset {name}: {e}")))?;
        Self::merged(base, &format!("preset {name}"), overlays)
    }

    fn merged(mut base: toml::Table, source: &str, overlays: &[&Path]) -> Result<Self> {
        for o in overlays {
            merge(&mut base, read_table(o)?);
        }
        let cfg: ScenarioConfig = base
            .try_into()
            .map_err(|e: toml::de::Error| config(format!("{source}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn read_table(path: &Path) -> Result<toml::Table> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    text.parse::<toml::Table>()
        .map_err(|e| config(format!("{}: {e}", path.display())))
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            // tagged tables (the policy) are replaced, not merged
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) if !o.contains_key("kind") => {
                merge(b, o)
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_load_and_round_trip() {
        for name in ["april25", "july13"] {
            let cfg = ScenarioConfig::preset(name).unwrap();
            let text = cfg.to_toml_string().unwrap();
            let back = ScenarioConfig::from_toml_str(&text).unwrap();
            assert_eq!(cfg, back);
        }
        assert!(ScenarioConfig::preset("may1").is_err());
    }

    #[test]
    fn april_values() {
        let cfg = ScenarioConfig::preset("april25").unwrap();
        assert_eq!(cfg.lane.jam_spacing, 7.5);
        assert_eq!(cfg.lane.reaction_time, 1.0);
        assert_eq!(cfg.lane.max_acceleration, 2.12);
        assert_eq!(cfg.lane.max_deceleration, 2.86);
        assert_eq!(cfg.behavior.dropoff_proportion, 0.83);
        assert_eq!(cfg.demand_rate, 400.0);
        let p = &cfg.behavior.patience.first_instance[0];
        assert_eq!((p.gamma, p.k1, p.theta1, p.k2, p.theta2), (0.43, 2.13, 1.42, 3.62, 8.77));
        match cfg.policy {
            PolicySpec::Batching { primary, secondary } => {
                assert_eq!(primary.l_m1, 122.4);
                assert_eq!(secondary.l_left, 12.3);
            }
            _ => panic!("april25 ships with batching"),
        }
    }

    #[test]
    fn schema_version_is_checked() {
        let cfg = ScenarioConfig::preset("april25").unwrap();
        let text = cfg.to_toml_string().unwrap().replace("schema_version = 1", "schema_version = 7");
        assert!(ScenarioConfig::from_toml_str(&text).is_err());
    }

    #[test]
    fn overlay_merges_nested_tables() {
        let dir = std::env::temp_dir().join(format!("curbside-overlay-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let base = dir.join("base.toml");
        std::fs::write(&base, ScenarioConfig::preset("july13").unwrap().to_toml_string().unwrap())
            .unwrap();
        let over = dir.join("over.toml");
        std::fs::write(&over, "demand_rate = 700.0\n[policy]\nkind = \"no_control\"\n").unwrap();
        let cfg = ScenarioConfig::load(&base, &[over.as_path()]).unwrap();
        assert_eq!(cfg.demand_rate, 700.0);
        assert_eq!(cfg.policy, PolicySpec::NoControl);
        assert_eq!(cfg.lane.max_acceleration, 2.39);
        std::fs::remove_dir_all(dir).ok();
    }
}
