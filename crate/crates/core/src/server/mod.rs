//! Live sessions over WebSocket: spectators watch, humans drive a player,
//! editors change the goal map while the game runs.

mod net;
mod session;
mod wire;

use thiserror::Error;

use crate::mts::MtsError;
use crate::observation::ObsError;
use crate::scenario::ConfigError;

pub use net::{serve, ServeConfig, ServerHandle, ServerStats};
pub use session::{ClientId, Outgoing, Session, SessionConfig, SessionEvent};
pub use wire::{
    decode, decode_prefix, decode_stream, encode, AgentScore, BulletView, Envelope, ErrorCode, GroupInfo, Role, StateUpdate,
    TankView, WireMessage, MAX_FRAME, PROTO_VERSION,
};

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("cannot bind {0}: {1}")]
    Bind(String, std::io::Error),
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("server loop ended unexpectedly")]
    Closed,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Mts(#[from] MtsError),
    #[error(transparent)]
    Obs(#[from] ObsError),
}
