//! Tick-level simulation of the tank defence game.
//!
//! A [`GameState`] is loaded from an ASCII stage and advanced with
//! [`GameState::step`]. All randomness comes from the rng stored inside the
//! state, so a serialized state fully determines its future.

mod config;
mod scripted;
mod stage;
mod state;
mod types;

pub use config::EngineConfig;
pub use scripted::{base_camper, enemy_chaser, enemy_in_line, ScriptedController, ScriptedPolicy};
pub use stage::{parse_stage, StageLayout, DEFAULT_STAGE, SMALL_STAGE};
pub use state::{load_stage, GameState, Grid};
pub use types::{
    Action, Bullet, Cell, Direction, EntityId, GameEvent, Side, Status, StepOutcome, Tank, TileKind,
};

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("malformed stage: {0}")]
    MalformedStage(String),
    #[error("cannot step a finished episode (status {0:?})")]
    SteppedTerminalState(Status),
    #[error("no action supplied for alive player {0}")]
    MissingAction(EntityId),
    #[error("invalid engine config: {0}")]
    InvalidConfig(String),
}
