//! The run configuration file: one flat TOML document per run.

use std::path::Path;

use cogfuse_model::{strategy_by_name, FusionConfig, TrainConfig, STRATEGIES};
use cogfuse_sim::episode::EpisodeConfig;
use cogfuse_sim::pid::{Gains, PidConfig};
use cogfuse_sim::world::WorldConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub sim: SimSection,
    pub fusion: FusionSection,
    pub train: TrainSection,
    pub control: ControlSection,
    pub eval: EvalSection,
}

/// Town, traffic and data-generation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    /// Route seed of the first generated episode; episode `i` uses `seed + i`.
    pub seed: u64,
    pub episodes: usize,
    pub town_size: usize,
    pub max_steps: u64,
    pub record_every: u64,
    pub npc_vehicles: usize,
    pub pedestrian_density: f64,
    /// Parallel episode workers; 0 uses every available core.
    pub workers: usize,
}

impl Default for SimSection {
    fn default() -> Self {
        let world = WorldConfig::default();
        Self {
            seed: 0,
            episodes: 8,
            town_size: 3,
            max_steps: 600,
            record_every: 5,
            npc_vehicles: world.npc_vehicles,
            pedestrian_density: world.pedestrian_density,
            workers: 0,
        }
    }
}

/// A preset, an optional named strategy, then per-key overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSection {
    pub preset: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strategy: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aux_source: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aux_stage: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ss_provider: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub head_tl: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub head_ss: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub block_dims: Option<[usize; 4]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heads: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub token_grid: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gru_hidden: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ff_mult: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tl_channels: Option<usize>,
    /// Parameter initialization seed.
    pub seed: u64,
}

impl Default for FusionSection {
    fn default() -> Self {
        Self {
            preset: "desk".into(),
            strategy: None,
            aux_source: None,
            aux_stage: None,
            ss_provider: None,
            head_tl: None,
            head_ss: None,
            block_dims: None,
            heads: None,
            token_grid: None,
            gru_hidden: None,
            depth: None,
            input_size: None,
            ff_mult: None,
            tl_channels: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lambda_wp: f64,
    pub lambda_tl: f64,
    pub lambda_ss: f64,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub joint_provider: bool,
    pub provider_lr: f64,
    pub provider_epochs: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            lr: t.lr,
            batch_size: t.batch_size,
            epochs: t.epochs,
            lambda_wp: t.lambda_wp,
            lambda_tl: t.lambda_tl,
            lambda_ss: t.lambda_ss,
            seed: t.seed,
            checkpoint_every: t.checkpoint_every,
            joint_provider: t.joint_provider,
            provider_lr: 3e-3,
            provider_epochs: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlSection {
    pub lateral_kp: f64,
    pub lateral_ki: f64,
    pub lateral_kd: f64,
    pub longitudinal_kp: f64,
    pub longitudinal_ki: f64,
    pub longitudinal_kd: f64,
    pub window: usize,
    pub v_max: f64,
}

impl Default for ControlSection {
    fn default() -> Self {
        let p = PidConfig::default();
        Self {
            lateral_kp: p.lateral.kp,
            lateral_ki: p.lateral.ki,
            lateral_kd: p.lateral.kd,
            longitudinal_kp: p.longitudinal.kp,
            longitudinal_ki: p.longitudinal.ki,
            longitudinal_kd: p.longitudinal.kd,
            window: p.window,
            v_max: p.v_max,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum DriverKind {
    Model,
    Expert,
    RedRunner,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// `model`, `expert` or `red_runner`.
    pub driver: String,
    pub routes: usize,
    pub seed: u64,
    pub max_steps: u64,
    /// Label of the TSV row; defaults to the strategy name.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            driver: "model".into(),
            routes: 20,
            seed: 1000,
            max_steps: 1200,
            method: None,
        }
    }
}

fn parse<T: std::str::FromStr<Err = cogfuse_model::ModelError>>(
    path: &Path,
    key: &str,
    value: &Option<String>,
) -> Result<Option<T>> {
    value
        .as_deref()
        .map(|v| v.parse::<T>().map_err(|e| CliError::config(path, format!("{key}: {e}"))))
        .transpose()
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::config(path, e.to_string().trim_end().to_string()))?;
        cfg.fusion_config(path)?;
        cfg.train_config(path)?;
        cfg.driver(path)?;
        if cfg.sim.town_size < 2 {
            return Err(CliError::config(path, "sim.town_size must be at least 2"));
        }
        if !(0.0..=1.0).contains(&cfg.sim.pedestrian_density) {
            return Err(CliError::config(path, "sim.pedestrian_density must lie in [0, 1]"));
        }
        if cfg.control.window == 0 {
            return Err(CliError::config(path, "control.window must be at least 1"));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        Self::from_toml(&text, path)
    }

    /// Canonical serialization; independent of the layout of the source file.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }

    /// SHA-256 of the canonical text, hex encoded. The worker count does
    /// not affect any output and is left out.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.sim.workers = 0;
        hex::encode(Sha256::digest(c.canonical().as_bytes()))
    }

    pub fn fusion_config(&self, path: &Path) -> Result<FusionConfig> {
        let f = &self.fusion;
        let mut c = match f.preset.as_str() {
            "full" => FusionConfig::full(),
            "desk" => FusionConfig::desk(),
            "tiny" => FusionConfig::tiny(),
            other => {
                return Err(CliError::config(
                    path,
                    format!("fusion.preset: unknown preset `{other}` (expected one of: full, desk, tiny)"),
                ))
            }
        };
        if let Some(name) = &f.strategy {
            let s = strategy_by_name(name).ok_or_else(|| {
                let names: Vec<_> = STRATEGIES.iter().map(|s| s.name).collect();
                CliError::config(
                    path,
                    format!("fusion.strategy: unknown strategy `{name}` (expected one of: {})", names.join(", ")),
                )
            })?;
            c = c.with_strategy(s);
        }
        if let Some(v) = parse(path, "fusion.aux_source", &f.aux_source)? {
            c.aux_source = v;
        }
        if let Some(v) = parse(path, "fusion.aux_stage", &f.aux_stage)? {
            c.aux_stage = v;
        }
        if let Some(v) = parse(path, "fusion.ss_provider", &f.ss_provider)? {
            c.ss_provider = v;
        }
        let overrides: [(&mut usize, Option<usize>); 7] = [
            (&mut c.heads, f.heads),
            (&mut c.token_grid, f.token_grid),
            (&mut c.gru_hidden, f.gru_hidden),
            (&mut c.depth, f.depth),
            (&mut c.input_size, f.input_size),
            (&mut c.ff_mult, f.ff_mult),
            (&mut c.tl_channels, f.tl_channels),
        ];
        for (slot, value) in overrides {
            if let Some(v) = value {
                *slot = v;
            }
        }
        c.head_tl = f.head_tl.unwrap_or(c.head_tl);
        c.head_ss = f.head_ss.unwrap_or(c.head_ss);
        c.block_dims = f.block_dims.unwrap_or(c.block_dims);
        c.validate().map_err(|e| CliError::config(path, format!("[fusion]: {e}")))?;
        if 256 % c.input_size != 0 {
            return Err(CliError::config(path, "fusion.input_size must divide the 256-pixel sensor frames"));
        }
        Ok(c)
    }

    pub fn train_config(&self, path: &Path) -> Result<TrainConfig> {
        let t = &self.train;
        let c = TrainConfig {
            lr: t.lr,
            batch_size: t.batch_size,
            epochs: t.epochs,
            lambda_wp: t.lambda_wp,
            lambda_tl: t.lambda_tl,
            lambda_ss: t.lambda_ss,
            seed: t.seed,
            checkpoint_every: t.checkpoint_every,
            joint_provider: t.joint_provider,
        };
        c.validate().map_err(|e| CliError::config(path, format!("[train]: {e}")))?;
        if !(t.provider_lr > 0.0 && t.provider_lr.is_finite()) {
            return Err(CliError::config(path, "train.provider_lr must be positive"));
        }
        Ok(c)
    }

    /// Trainer settings for pre-training the auxiliary provider.
    pub fn provider_train_config(&self, path: &Path) -> Result<TrainConfig> {
        Ok(TrainConfig {
            lr: self.train.provider_lr,
            epochs: self.train.provider_epochs,
            ..self.train_config(path)?
        })
    }

    pub fn pid_config(&self) -> PidConfig {
        let c = &self.control;
        PidConfig {
            lateral: Gains::new(c.lateral_kp, c.lateral_ki, c.lateral_kd),
            longitudinal: Gains::new(c.longitudinal_kp, c.longitudinal_ki, c.longitudinal_kd),
            window: c.window,
            v_max: c.v_max,
        }
    }

    pub fn world(&self) -> WorldConfig {
        WorldConfig {
            npc_vehicles: self.sim.npc_vehicles,
            pedestrian_density: self.sim.pedestrian_density,
        }
    }

    /// Episode settings for data generation with route seed `seed`.
    pub fn data_episode(&self, seed: u64) -> EpisodeConfig {
        EpisodeConfig {
            max_steps: self.sim.max_steps,
            seed,
            world: self.world(),
            record_every: self.sim.record_every,
        }
    }

    pub fn eval_episode(&self, seed: u64) -> EpisodeConfig {
        EpisodeConfig {
            max_steps: self.eval.max_steps,
            seed,
            world: self.world(),
            record_every: 0,
        }
    }

    pub fn driver(&self, path: &Path) -> Result<DriverKind> {
        match self.eval.driver.as_str() {
            "model" => Ok(DriverKind::Model),
            "expert" => Ok(DriverKind::Expert),
            "red_runner" => Ok(DriverKind::RedRunner),
            other => Err(CliError::config(
                path,
                format!("eval.driver: unknown driver `{other}` (expected one of: model, expert, red_runner)"),
            )),
        }
    }

    /// Row label for evaluation reports.
    pub fn method(&self) -> String {
        match self.driver(Path::new("")) {
            Ok(DriverKind::Expert) => return "expert".into(),
            Ok(DriverKind::RedRunner) => return "red_runner".into(),
            _ => {}
        }
        self.eval
            .method
            .clone()
            .or_else(|| self.fusion.strategy.clone())
            .unwrap_or_else(|| "custom".into())
    }
}
