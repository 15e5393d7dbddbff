//! Flat `key=value` configuration: run settings and profile definitions.
//!
//! Lines are `key = value`; blank lines and `#` comments are ignored.
//! Unknown and duplicate keys are rejected so typos fail loudly.

use std::collections::BTreeMap;

use crate::dynamics::{Profile, SimConfig};
use crate::mlp::{MlpConfig, TrainingConfig};
use crate::{Error, Result};

/// Parse `key=value` text into an ordered map.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("line {}: expected key=value, got {line:?}", lineno + 1))
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if map.insert(key.clone(), value).is_some() {
            return Err(Error::InvalidConfig(format!("duplicate key {key:?}")));
        }
    }
    Ok(map)
}

fn parse_field<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("cannot parse {key}={value:?}")))
}

/// Everything a pipeline run can configure, with built-in defaults.
///
/// Precedence is: command-line flags over config-file values over these
/// defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub profile: String,
    pub density: u32,
    pub radius: f64,
    pub dt: f64,
    pub max_steps: u64,
    pub seed: u64,
    /// 0 means all available cores.
    pub threads: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub plateau_min_delta: f64,
    pub plateau_patience: usize,
    pub lr_reduce_factor: f64,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub layer_dims: Vec<usize>,
    pub block_repeat: usize,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
    pub closed_loop_samples: usize,
    pub grid_path: String,
    pub dataset_path: String,
    pub model_path: String,
    pub history_path: String,
    pub report_path: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainingConfig::default();
        let mlp = MlpConfig::desk();
        RunConfig {
            profile: "plausible-rifle".to_string(),
            density: 500,
            radius: 200.0,
            dt: SimConfig::DEFAULT_DT,
            max_steps: SimConfig::DEFAULT_MAX_STEPS,
            seed: 0,
            threads: 0,
            batch_size: train.batch_size,
            learning_rate: train.learning_rate,
            momentum: train.momentum,
            plateau_min_delta: train.plateau_min_delta,
            plateau_patience: train.plateau_patience,
            lr_reduce_factor: train.lr_reduce_factor,
            early_stop_patience: train.early_stop_patience,
            max_epochs: train.max_epochs,
            layer_dims: mlp.layer_dims,
            block_repeat: mlp.block_repeat,
            bn_epsilon: mlp.bn_epsilon,
            bn_momentum: mlp.bn_momentum,
            closed_loop_samples: 500,
            grid_path: String::new(),
            dataset_path: String::new(),
            model_path: String::new(),
            history_path: String::new(),
            report_path: String::new(),
        }
    }
}

impl RunConfig {
    /// Overlay parsed `key=value` pairs; unknown keys are an error.
    pub fn apply_kv(&mut self, map: &BTreeMap<String, String>) -> Result<()> {
        for (key, value) in map {
            match key.as_str() {
                "profile" => self.profile = value.clone(),
                "density" => self.density = parse_field(key, value)?,
                "radius" => self.radius = parse_field(key, value)?,
                "dt" => self.dt = parse_field(key, value)?,
                "max_steps" => self.max_steps = parse_field(key, value)?,
                "seed" => self.seed = parse_field(key, value)?,
                "threads" => self.threads = parse_field(key, value)?,
                "batch_size" => self.batch_size = parse_field(key, value)?,
                "learning_rate" => self.learning_rate = parse_field(key, value)?,
                "momentum" => self.momentum = parse_field(key, value)?,
                "plateau_min_delta" => self.plateau_min_delta = parse_field(key, value)?,
                "plateau_patience" => self.plateau_patience = parse_field(key, value)?,
                "lr_reduce_factor" => self.lr_reduce_factor = parse_field(key, value)?,
                "early_stop_patience" => self.early_stop_patience = parse_field(key, value)?,
                "max_epochs" => self.max_epochs = parse_field(key, value)?,
                "layer_dims" => {
                    self.layer_dims = value
                        .split(',')
                        .map(|d| parse_field("layer_dims", d.trim()))
                        .collect::<Result<Vec<usize>>>()?;
                }
                "block_repeat" => self.block_repeat = parse_field(key, value)?,
                "bn_epsilon" => self.bn_epsilon = parse_field(key, value)?,
                "bn_momentum" => self.bn_momentum = parse_field(key, value)?,
                "closed_loop_samples" => self.closed_loop_samples = parse_field(key, value)?,
                "grid_path" => self.grid_path = value.clone(),
                "dataset_path" => self.dataset_path = value.clone(),
                "model_path" => self.model_path = value.clone(),
                "history_path" => self.history_path = value.clone(),
                "report_path" => self.report_path = value.clone(),
                _ => {
                    return Err(Error::InvalidConfig(format!("unknown config key {key:?}")));
                }
            }
        }
        Ok(())
    }

    pub fn from_kv_text(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        cfg.apply_kv(&parse_kv(text)?)?;
        Ok(cfg)
    }

    pub fn sim_config(&self) -> SimConfig {
        let mut cfg = SimConfig::new(self.density, self.radius, &self.profile);
        cfg.dt = self.dt;
        cfg.max_steps = self.max_steps;
        cfg
    }

    pub fn training_config(&self) -> TrainingConfig {
        TrainingConfig {
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            plateau_min_delta: self.plateau_min_delta,
            plateau_patience: self.plateau_patience,
            lr_reduce_factor: self.lr_reduce_factor,
            early_stop_patience: self.early_stop_patience,
            max_epochs: self.max_epochs,
            seed: self.seed,
        }
    }

    pub fn mlp_config(&self) -> MlpConfig {
        MlpConfig {
            layer_dims: self.layer_dims.clone(),
            block_repeat: self.block_repeat,
            bn_epsilon: self.bn_epsilon,
            bn_momentum: self.bn_momentum,
            ..MlpConfig::desk()
        }
    }
}

/// Simulation overrides a profile file may carry alongside the constants.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ProfileOverrides {
    pub dt: Option<f64>,
    pub max_radius: Option<f64>,
    pub max_steps: Option<u64>,
}

/// Parse a profile definition file.
///
/// Recognized keys: `mass`, `drag_coeff`, `ref_area`, `muzzle_speed`,
/// `gravity`, `air_density`, and optionally `dt`, `max_radius`,
/// `max_steps`. Physical constants default to the plausible-rifle
/// profile.
pub fn profile_from_kv(name: &str, text: &str) -> Result<(Profile, ProfileOverrides)> {
    let map = parse_kv(text)?;
    let base = Profile::plausible_rifle();
    let mut projectile = base.projectile;
    let mut environment = base.environment;
    let mut overrides = ProfileOverrides::default();
    for (key, value) in &map {
        match key.as_str() {
            "mass" => projectile.mass = parse_field(key, value)?,
            "drag_coeff" => projectile.drag_coeff = parse_field(key, value)?,
            "ref_area" => projectile.ref_area = parse_field(key, value)?,
            "muzzle_speed" => projectile.muzzle_speed = parse_field(key, value)?,
            "gravity" => environment.gravity = parse_field(key, value)?,
            "air_density" => environment.air_density = parse_field(key, value)?,
            "dt" => overrides.dt = Some(parse_field(key, value)?),
            "max_radius" => overrides.max_radius = Some(parse_field(key, value)?),
            "max_steps" => overrides.max_steps = Some(parse_field(key, value)?),
            _ => {
                return Err(Error::InvalidConfig(format!("unknown profile key {key:?}")));
            }
        }
    }
    let profile = Profile { name: name.to_string(), projectile, environment };
    profile.validate()?;
    Ok((profile, overrides))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_parsing_skips_comments_and_rejects_malformed_lines() {
        let map = parse_kv("# comment\n\n a = 1 \nb=two\n").unwrap();
        assert_eq!(map.get("a").unwrap(), "1");
        assert_eq!(map.get("b").unwrap(), "two");
        assert!(parse_kv("justakey\n").is_err());
        assert!(parse_kv("a=1\na=2\n").is_err());
    }

    #[test]
    fn run_config_applies_overrides_and_rejects_unknown_keys() {
        let cfg = RunConfig::from_kv_text(
            "density = 250\nradius=150\nlayer_dims = 16, 32\nseed=9\nlearning_rate=5e-3\n",
        )
        .unwrap();
        assert_eq!(cfg.density, 250);
        assert_eq!(cfg.radius, 150.0);
        assert_eq!(cfg.layer_dims, vec![16, 32]);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.learning_rate, 5e-3);
        // Untouched fields keep defaults.
        assert_eq!(cfg.batch_size, RunConfig::default().batch_size);

        let err = RunConfig::from_kv_text("densty=250\n").unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)), "{err}");
        assert!(RunConfig::from_kv_text("density=abc\n").is_err());
    }

    #[test]
    fn derived_configs_carry_the_right_fields() {
        let cfg = RunConfig::from_kv_text("density=100\nradius=50\ndt=2e-4\nseed=3\n").unwrap();
        let sim = cfg.sim_config();
        assert_eq!(sim.angular_density, 100);
        assert_eq!(sim.max_radius, 50.0);
        assert_eq!(sim.dt, 2e-4);
        let tc = cfg.training_config();
        assert_eq!(tc.seed, 3);
        assert!(tc.validate().is_ok());
        assert!(cfg.mlp_config().validate().is_ok());
    }

    #[test]
    fn profile_files_override_constants_and_carry_sim_overrides() {
        let (profile, over) = profile_from_kv(
            "custom",
            "mass=0.01\nref_area=5e-5\ndt=1e-5\nmax_radius=500\nmax_steps=100000\n",
        )
        .unwrap();
        assert_eq!(profile.projectile.mass, 0.01);
        assert_eq!(profile.projectile.ref_area, 5e-5);
        // Unspecified constants fall back to the rifle profile.
        assert_eq!(profile.projectile.muzzle_speed, 853.0);
        assert_eq!(over.dt, Some(1e-5));
        assert_eq!(over.max_radius, Some(500.0));
        assert_eq!(over.max_steps, Some(100_000));

        assert!(profile_from_kv("x", "masss=1\n").is_err());
        assert!(profile_from_kv("x", "mass=-2\n").is_err());
    }
}
