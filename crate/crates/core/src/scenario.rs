//! Stage, engine, observation and strategy settings bundled together, plus
//! the run-config file that points at them.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{load_stage, parse_stage, EngineConfig, EngineError, GameState, DEFAULT_STAGE, SMALL_STAGE};
use crate::mts::{MtsError, MtsRuntime, NetworkSource, StrategyConfig};
use crate::observation::{Environment, ObsConfig, ObsError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Obs(#[from] ObsError),
    #[error(transparent)]
    Mts(#[from] MtsError),
    #[error("{0}")]
    Invalid(String),
}

/// Everything needed to create environments and MTS runtimes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub stage: String,
    pub engine: EngineConfig,
    pub obs: ObsConfig,
    pub strategy: StrategyConfig,
}

impl Scenario {
    /// Default 13×13 stage rendered at 8 px per cell.
    pub fn standard(strategy: StrategyConfig) -> Self {
        Scenario {
            stage: DEFAULT_STAGE.to_string(),
            engine: EngineConfig::default(),
            obs: ObsConfig::default(),
            strategy,
        }
    }

    /// 9×9 stage at 10 px per cell (90 → 84) with two enemies.
    pub fn small(strategy: StrategyConfig) -> Self {
        Scenario {
            stage: SMALL_STAGE.to_string(),
            engine: EngineConfig {
                max_enemies: 2,
                ..EngineConfig::default()
            },
            obs: ObsConfig::for_grid(9, 9, 10),
            strategy,
        }
    }

    pub fn grid(&self) -> Result<(usize, usize), ConfigError> {
        let layout = parse_stage(&self.stage)?;
        Ok((layout.width, layout.height))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.engine.validate()?;
        self.obs.validate()?;
        let (w, h) = self.grid()?;
        self.obs.check_grid(w, h)?;
        self.strategy.check()?;
        self.strategy.goal_map.validate(w, h).map_err(MtsError::from)?;
        Ok(())
    }

    pub fn new_state(&self, seed: u64) -> Result<GameState, EngineError> {
        load_stage(&self.stage, &self.engine, seed)
    }

    pub fn new_env(&self, seed: u64) -> Result<Environment, ObsError> {
        Environment::new(self.new_state(seed)?, self.obs.clone())
    }

    pub fn runtime(&self, source: NetworkSource<'_>, seed: u64) -> Result<MtsRuntime, ConfigError> {
        Ok(MtsRuntime::build(&self.strategy, &self.obs, self.grid()?, source, seed)?)
    }
}

/// Strategy presets usable by name instead of a file.
pub fn strategy_preset(name: &str) -> Option<StrategyConfig> {
    match name {
        "goal_map_pair" => Some(StrategyConfig::goal_map_pair()),
        "baseline_pair" => Some(StrategyConfig::baseline_pair()),
        _ => name
            .strip_prefix("scripted:")
            .and_then(|p| p.parse().ok())
            .map(StrategyConfig::scripted),
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    toml::from_str(&read(path)?).map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// `"default"`, `"small"` or a path to a stage file.
pub fn load_stage_text(spec: &str, base: &Path) -> Result<String, ConfigError> {
    match spec {
        "default" => Ok(DEFAULT_STAGE.to_string()),
        "small" => Ok(SMALL_STAGE.to_string()),
        path => read(&base.join(path)),
    }
}

/// A strategy preset name or a path to a strategy file.
pub fn load_strategy(spec: &str, base: &Path) -> Result<StrategyConfig, ConfigError> {
    if let Some(s) = strategy_preset(spec) {
        return Ok(s);
    }
    let path = base.join(spec);
    StrategyConfig::from_toml(&read(&path)?).map_err(|e| ConfigError::Parse {
        path,
        message: e.to_string(),
    })
}

/// On-disk run config. Relative paths resolve against the file's directory.
///
/// ```toml
/// stage = "small"            # or "default", or a stage file
/// strategy = "goal_map_pair" # preset or strategy file
/// engine = "engine.toml"     # optional
/// obs = "obs.toml"           # optional
/// out_dir = "runs/demo"
///
/// [hyper]
/// total_steps = 200000
/// workers = 4
/// ```
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    #[serde(default)]
    pub stage: Option<String>,
    #[serde(default)]
    pub strategy: Option<String>,
    #[serde(default)]
    pub engine: Option<String>,
    #[serde(default)]
    pub obs: Option<String>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub hyper: Option<toml::Table>,
}

impl RunFile {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        parse_toml(path)
    }

    /// Resolves the referenced files into a scenario. Without a stage the
    /// default 13×13 stage is used; the small stage gets its own defaults.
    pub fn scenario(&self, base: &Path) -> Result<Scenario, ConfigError> {
        let strategy = load_strategy(self.strategy.as_deref().unwrap_or("goal_map_pair"), base)?;
        let mut sc = match self.stage.as_deref() {
            Some("small") => Scenario::small(strategy),
            Some(spec) => Scenario {
                stage: load_stage_text(spec, base)?,
                ..Scenario::standard(strategy)
            },
            None => Scenario::standard(strategy),
        };
        if let Some(p) = &self.engine {
            sc.engine = parse_toml(&base.join(p))?;
        }
        if let Some(p) = &self.obs {
            sc.obs = parse_toml(&base.join(p))?;
        }
        sc.validate()?;
        Ok(sc)
    }
}
