//! Wire messages and their framing.
//!
//! A frame is a 4-byte big-endian payload length followed by one UTF-8 JSON
//! object: `{"seq": n, "type": "...", ...}`. Over WebSocket every binary
//! message carries exactly one frame; transcripts are frames back to back.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ServerError;
use crate::engine::{Action, Cell, Direction, EntityId, GameState, Side, Status};
use crate::goalmap::{GroupId, ResolvedTarget};
use crate::mts::EditCommand;
use crate::observation::Palette;

pub const PROTO_VERSION: u32 = 1;

/// Upper bound on one payload; larger length prefixes are rejected.
pub const MAX_FRAME: usize = 1 << 22;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum Role {
    Spectator,
    HumanPlayer { agent: EntityId },
    Editor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Malformed,
    UnsupportedVersion,
    UnknownAgent,
    UnknownGroup,
    SlotTaken,
    NotAPlayer,
    NotAnEditor,
    InvalidEdit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupInfo {
    pub id: GroupId,
    pub members: Vec<EntityId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TankView {
    pub id: EntityId,
    pub side: Side,
    pub pos: Cell,
    pub facing: Direction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BulletView {
    pub owner: EntityId,
    pub side: Side,
    pub pos: Cell,
    pub dir: Direction,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentScore {
    pub agent: EntityId,
    pub score: f64,
}

/// Everything needed to draw one frame, independent of earlier messages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateUpdate {
    pub episode: u64,
    pub decision_step: u64,
    pub tick: u64,
    /// Terrain rows in stage-file symbols.
    pub grid: Vec<String>,
    pub base: Cell,
    pub base_alive: bool,
    pub tanks: Vec<TankView>,
    pub bullets: Vec<BulletView>,
    pub scores: Vec<AgentScore>,
    pub status: Status,
    /// Resolved targets per policy group, working regions included.
    pub targets: BTreeMap<GroupId, Vec<ResolvedTarget>>,
}

impl StateUpdate {
    pub fn from_state(
        state: &GameState,
        episode: u64,
        decision_step: u64,
        targets: BTreeMap<GroupId, Vec<ResolvedTarget>>,
    ) -> Self {
        StateUpdate {
            episode,
            decision_step,
            tick: state.tick,
            grid: state.grid.rows(),
            base: state.base,
            base_alive: state.base_alive,
            tanks: state
                .tanks
                .iter()
                .filter(|t| t.alive)
                .map(|t| TankView {
                    id: t.id,
                    side: t.side,
                    pos: t.pos,
                    facing: t.facing,
                })
                .collect(),
            bullets: state
                .bullets
                .iter()
                .map(|b| BulletView {
                    owner: b.owner,
                    side: b.owner_side,
                    pos: b.pos,
                    dir: b.dir,
                })
                .collect(),
            scores: state
                .agent_scores
                .iter()
                .map(|(&agent, &score)| AgentScore { agent, score })
                .collect(),
            status: state.status,
            targets,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WireMessage {
    ServerHello {
        proto_version: u32,
        width: usize,
        height: usize,
        palette: Palette,
        groups: Vec<GroupInfo>,
        players: Vec<EntityId>,
        decision_rate: f64,
    },
    StateUpdate(StateUpdate),
    Join {
        #[serde(flatten)]
        role: Role,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        proto_version: Option<u32>,
    },
    HumanAction {
        agent: EntityId,
        action: Action,
    },
    GoalEdit {
        command: EditCommand,
    },
    Ack {
        /// Client sequence number being acknowledged.
        of: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        edit_seq: Option<u64>,
    },
    Error {
        code: ErrorCode,
        text: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        of: Option<u64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub seq: u64,
    #[serde(flatten)]
    pub msg: WireMessage,
}

pub fn encode(env: &Envelope) -> Vec<u8> {
    let payload = serde_json::to_vec(env).expect("wire messages always serialize");
    let mut out = Vec::with_capacity(payload.len() + 4);
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&payload);
    out
}

/// Decodes exactly one frame.
pub fn decode(bytes: &[u8]) -> Result<Envelope, ServerError> {
    let (env, used) = decode_prefix(bytes)?.ok_or_else(|| ServerError::Malformed("truncated frame".into()))?;
    if used != bytes.len() {
        return Err(ServerError::Malformed(format!("{} trailing bytes", bytes.len() - used)));
    }
    Ok(env)
}

/// Decodes the first frame of `bytes`; `None` when more bytes are needed.
pub fn decode_prefix(bytes: &[u8]) -> Result<Option<(Envelope, usize)>, ServerError> {
    if bytes.len() < 4 {
        return Ok(None);
    }
    let len = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes")) as usize;
    if len > MAX_FRAME {
        return Err(ServerError::Malformed(format!("frame of {len} bytes exceeds the limit")));
    }
    if bytes.len() < 4 + len {
        return Ok(None);
    }
    let env = serde_json::from_slice(&bytes[4..4 + len]).map_err(|e| ServerError::Malformed(e.to_string()))?;
    Ok(Some((env, 4 + len)))
}

/// Splits a concatenated byte stream into envelopes.
pub fn decode_stream(mut bytes: &[u8]) -> Result<Vec<Envelope>, ServerError> {
    let mut out = Vec::new();
    while !bytes.is_empty() {
        let (env, used) = decode_prefix(bytes)?.ok_or_else(|| ServerError::Malformed("truncated frame".into()))?;
        out.push(env);
        bytes = &bytes[used..];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn join_is_flat() {
        let env = Envelope {
            seq: 3,
            msg: WireMessage::Join {
                role: Role::HumanPlayer { agent: EntityId(1) },
                proto_version: Some(1),
            },
        };
        let json = serde_json::to_string(&env).unwrap();
        assert_eq!(json, r#"{"seq":3,"type":"join","role":"human_player","agent":1,"proto_version":1}"#);
        assert_eq!(decode(&encode(&env)).unwrap(), env);
    }

    #[test]
    fn length_prefix_is_big_endian() {
        let env = Envelope {
            seq: 0,
            msg: WireMessage::Ack { of: 1, edit_seq: None },
        };
        let bytes = encode(&env);
        assert_eq!(u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize, bytes.len() - 4);
    }

    #[test]
    fn truncated_and_oversized_frames_rejected() {
        let bytes = encode(&Envelope {
            seq: 0,
            msg: WireMessage::Ack { of: 1, edit_seq: None },
        });
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode(&[0xff, 0xff, 0xff, 0xff]).is_err());
        assert!(decode(&[0, 0, 0, 2, b'{', b'}']).is_err());
    }
}
