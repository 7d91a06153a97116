use serde::{Deserialize, Serialize};

use super::EngineError;

/// Tunable game rules. Loaded from TOML; every field has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    /// Expected `[width, height]` of the stage; checked at load when set.
    pub grid_size: Option<[usize; 2]>,
    /// Cells a bullet travels per tick.
    pub bullet_speed: u32,
    /// Probability that an enemy steps along the shortest path to the base.
    pub p_advance: f64,
    /// Probability that an enemy fires on a tick (when it has no bullet in flight).
    pub p_fire: f64,
    /// Ticks between an enemy's death and its replacement becoming eligible.
    pub respawn_delay: u32,
    /// Episodes end once the tick counter reaches this value.
    pub step_limit: u64,
    pub reward_per_kill: f64,
    /// Number of enemies kept on the board (alive plus pending respawns).
    pub max_enemies: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            grid_size: None,
            bullet_speed: 2,
            p_advance: 0.6,
            p_fire: 0.2,
            respawn_delay: 20,
            step_limit: 3000,
            reward_per_kill: 10.0,
            max_enemies: 5,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |what: &str| Err(EngineError::InvalidConfig(what.to_string()));
        if self.bullet_speed == 0 {
            return bad("bullet_speed must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.p_advance) || !(0.0..=1.0).contains(&self.p_fire) {
            return bad("probabilities must lie in [0, 1]");
        }
        if self.step_limit == 0 {
            return bad("step_limit must be positive");
        }
        if !self.reward_per_kill.is_finite() || self.reward_per_kill < 0.0 {
            return bad("reward_per_kill must be finite and non-negative");
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, EngineError> {
        let cfg: EngineConfig =
            toml::from_str(text).map_err(|e| EngineError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_toml_keeps_defaults() {
        let cfg = EngineConfig::from_toml("max_enemies = 2\nstep_limit = 500\n").unwrap();
        assert_eq!(cfg.max_enemies, 2);
        assert_eq!(cfg.step_limit, 500);
        assert_eq!(cfg.bullet_speed, 2);
        assert_eq!(cfg.reward_per_kill, 10.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(EngineConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn probabilities_are_bounded() {
        assert!(EngineConfig::from_toml("p_fire = 1.5").is_err());
    }
}
