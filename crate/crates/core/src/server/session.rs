use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::wire::{decode, Envelope, ErrorCode, GroupInfo, Role, StateUpdate, WireMessage, PROTO_VERSION};
use super::ServerError;
use crate::engine::{EntityId, GameState};
use crate::goalmap::{resolve_targets, GroupId, ResolvedTarget};
use crate::mts::{ControlMode, EditCommand, MtsError, MtsRuntime, NetworkSource};
use crate::observation::{Environment, ObsError, ObsTensor, PALETTE};
use crate::scenario::Scenario;

pub type ClientId = u64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    /// Decision steps per second in the live loop.
    pub decision_rate: f64,
    /// Decision-step periods to wait after an episode ends.
    pub restart_delay: u32,
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            decision_rate: 10.0,
            restart_delay: 10,
            seed: 0,
        }
    }
}

/// One message for one client.
#[derive(Clone, Debug, PartialEq)]
pub struct Outgoing {
    pub to: ClientId,
    pub envelope: Envelope,
}

/// Inputs to a session in the order they were applied. Replaying them into
/// a session built from the same scenario and config reproduces its output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SessionEvent {
    Connect { client: ClientId },
    Disconnect { client: ClientId },
    Input { client: ClientId, bytes: Vec<u8> },
    Step,
}

struct ClientSlot {
    role: Role,
    next_seq: u64,
}

/// Live game shared by connected clients: the environment, the MTS runtime
/// and who controls what. Claiming a player switches that player's group to
/// human control until the client leaves.
pub struct Session {
    scenario: Scenario,
    cfg: SessionConfig,
    runtime: MtsRuntime,
    env: Environment,
    seeds: ChaCha8Rng,
    clients: BTreeMap<ClientId, ClientSlot>,
    next_client: ClientId,
    saved_modes: BTreeMap<GroupId, ControlMode>,
    episode: u64,
    decision_step: u64,
    restart_in: Option<u32>,
    record: Option<Vec<SessionEvent>>,
}

fn err(code: ErrorCode, text: impl Into<String>, of: Option<u64>) -> WireMessage {
    WireMessage::Error {
        code,
        text: text.into(),
        of,
    }
}

impl Session {
    pub fn new(scenario: Scenario, source: NetworkSource<'_>, cfg: SessionConfig) -> Result<Self, ServerError> {
        scenario.validate()?;
        let runtime = scenario.runtime(source, cfg.seed)?;
        let mut seeds = ChaCha8Rng::seed_from_u64(cfg.seed);
        let env = scenario.new_env(seeds.gen())?;
        Ok(Session {
            scenario,
            cfg,
            runtime,
            env,
            seeds,
            clients: BTreeMap::new(),
            next_client: 0,
            saved_modes: BTreeMap::new(),
            episode: 0,
            decision_step: 0,
            restart_in: None,
            record: None,
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    pub fn state(&self) -> &GameState {
        self.env.state()
    }

    pub fn runtime(&self) -> &MtsRuntime {
        &self.runtime
    }

    pub fn episode(&self) -> u64 {
        self.episode
    }

    pub fn decision_step(&self) -> u64 {
        self.decision_step
    }

    pub fn role(&self, client: ClientId) -> Option<Role> {
        self.clients.get(&client).map(|c| c.role)
    }

    pub fn client_count(&self) -> usize {
        self.clients.len()
    }

    /// Starts keeping a log of every event applied from now on.
    pub fn start_recording(&mut self) {
        self.record = Some(Vec::new());
    }

    pub fn take_recording(&mut self) -> Vec<SessionEvent> {
        self.record.take().unwrap_or_default()
    }

    fn note(&mut self, e: SessionEvent) {
        if let Some(r) = &mut self.record {
            r.push(e);
        }
    }

    fn envelope(&mut self, to: ClientId, msg: WireMessage) -> Option<Outgoing> {
        let slot = self.clients.get_mut(&to)?;
        let seq = slot.next_seq;
        slot.next_seq += 1;
        Some(Outgoing {
            to,
            envelope: Envelope { seq, msg },
        })
    }

    pub fn hello(&self) -> WireMessage {
        let groups = self
            .runtime
            .group_ids()
            .into_iter()
            .map(|id| GroupInfo {
                members: self.runtime.members(&id).unwrap_or_default().to_vec(),
                id,
            })
            .collect();
        WireMessage::ServerHello {
            proto_version: PROTO_VERSION,
            width: self.state().grid.width,
            height: self.state().grid.height,
            palette: PALETTE,
            groups,
            players: self.state().player_ids(),
            decision_rate: self.cfg.decision_rate,
        }
    }

    /// Resolved targets of every group on the current state.
    pub fn targets(&self) -> BTreeMap<GroupId, Vec<ResolvedTarget>> {
        self.runtime
            .group_ids()
            .into_iter()
            .filter_map(|g| {
                resolve_targets(self.runtime.goal_map(), self.state(), &g)
                    .ok()
                    .map(|m| (g, m.resolved))
            })
            .collect()
    }

    pub fn state_update(&self) -> StateUpdate {
        StateUpdate::from_state(self.state(), self.episode, self.decision_step, self.targets())
    }

    /// Registers a spectator and greets it with the hello and current state.
    pub fn connect(&mut self) -> (ClientId, Vec<Outgoing>) {
        let id = self.next_client;
        self.next_client += 1;
        self.connect_as(id)
    }

    /// Registers a spectator under a caller-chosen id.
    pub fn connect_as(&mut self, id: ClientId) -> (ClientId, Vec<Outgoing>) {
        self.next_client = self.next_client.max(id + 1);
        self.note(SessionEvent::Connect { client: id });
        self.clients.insert(
            id,
            ClientSlot {
                role: Role::Spectator,
                next_seq: 0,
            },
        );
        let hello = self.hello();
        let update = WireMessage::StateUpdate(self.state_update());
        let out = [hello, update].into_iter().filter_map(|m| self.envelope(id, m)).collect();
        (id, out)
    }

    pub fn disconnect(&mut self, client: ClientId) {
        self.note(SessionEvent::Disconnect { client });
        if let Some(slot) = self.clients.remove(&client) {
            self.release(slot.role);
        }
    }

    fn group_of(&self, agent: EntityId) -> Option<GroupId> {
        self.runtime.membership().get(&agent).cloned()
    }

    /// Gives a claimed player's group back to its previous controller once no
    /// client holds any of its members.
    fn release(&mut self, role: Role) {
        let Role::HumanPlayer { agent } = role else {
            return;
        };
        let Some(group) = self.group_of(agent) else {
            return;
        };
        let members = self.runtime.members(&group).unwrap_or_default().to_vec();
        let still_held = self
            .clients
            .values()
            .any(|c| matches!(c.role, Role::HumanPlayer { agent } if members.contains(&agent)));
        if still_held {
            return;
        }
        if let Some(mode) = self.saved_modes.remove(&group) {
            let _ = self.runtime.apply_edit(EditCommand::SetControlMode { group, mode });
        }
    }

    /// Decodes one frame from a client and handles it.
    pub fn handle_bytes(&mut self, client: ClientId, bytes: &[u8]) -> Vec<Outgoing> {
        self.note(SessionEvent::Input {
            client,
            bytes: bytes.to_vec(),
        });
        let msg = match decode(bytes) {
            Ok(env) => env,
            Err(e) => {
                return self
                    .envelope(client, err(ErrorCode::Malformed, e.to_string(), None))
                    .into_iter()
                    .collect()
            }
        };
        self.handle(client, msg)
    }

    /// Applies a decoded message and returns the replies.
    pub fn handle_message(&mut self, client: ClientId, msg: Envelope) -> Vec<Outgoing> {
        self.note(SessionEvent::Input {
            client,
            bytes: super::wire::encode(&msg),
        });
        self.handle(client, msg)
    }

    fn handle(&mut self, client: ClientId, msg: Envelope) -> Vec<Outgoing> {
        let Some(role) = self.role(client) else {
            return Vec::new();
        };
        let of = Some(msg.seq);
        let reply = match msg.msg {
            WireMessage::Join { role: wanted, proto_version } => match proto_version {
                Some(v) if v != PROTO_VERSION => err(
                    ErrorCode::UnsupportedVersion,
                    format!("server speaks protocol {PROTO_VERSION}, client asked for {v}"),
                    of,
                ),
                _ => self.join(client, role, wanted, msg.seq),
            },
            WireMessage::HumanAction { agent, action } => match role {
                Role::HumanPlayer { agent: mine } if mine == agent => {
                    self.runtime.human_handle().set(agent, action);
                    WireMessage::Ack { of: msg.seq, edit_seq: None }
                }
                _ if !self.state().player_ids().contains(&agent) => err(ErrorCode::UnknownAgent, format!("no player {agent}"), of),
                _ => err(ErrorCode::NotAPlayer, format!("this client does not control player {agent}"), of),
            },
            WireMessage::GoalEdit { command } => {
                if role != Role::Editor {
                    err(ErrorCode::NotAnEditor, "join as editor to change goals", of)
                } else {
                    match self.runtime.apply_edit(command) {
                        Ok(ack) => WireMessage::Ack {
                            of: msg.seq,
                            edit_seq: Some(ack.seq),
                        },
                        Err(MtsError::UnknownGroup(g)) => err(ErrorCode::UnknownGroup, format!("no group {g:?}"), of),
                        Err(e) => err(ErrorCode::InvalidEdit, e.to_string(), of),
                    }
                }
            }
            WireMessage::ServerHello { .. } | WireMessage::StateUpdate(_) | WireMessage::Ack { .. } | WireMessage::Error { .. } => {
                err(ErrorCode::Malformed, "server-only message", of)
            }
        };
        self.envelope(client, reply).into_iter().collect()
    }

    fn join(&mut self, client: ClientId, current: Role, wanted: Role, seq: u64) -> WireMessage {
        let of = Some(seq);
        if let Role::HumanPlayer { agent } = wanted {
            if current == wanted {
                return WireMessage::Ack { of: seq, edit_seq: None };
            }
            let Some(group) = self.group_of(agent) else {
                return err(ErrorCode::UnknownAgent, format!("no player {agent}"), of);
            };
            let taken = self.clients.iter().any(|(id, c)| *id != client && c.role == wanted);
            if taken {
                return err(ErrorCode::SlotTaken, format!("player {agent} is already controlled"), of);
            }
            if let Some(mode) = self.runtime.mode(&group) {
                if mode != ControlMode::Human {
                    self.saved_modes.insert(group.clone(), mode);
                }
            }
            let edit = self.runtime.apply_edit(EditCommand::SetControlMode {
                group,
                mode: ControlMode::Human,
            });
            self.clients.get_mut(&client).expect("known client").role = wanted;
            self.release(current);
            return WireMessage::Ack {
                of: seq,
                edit_seq: edit.ok().map(|a| a.seq),
            };
        }
        self.clients.get_mut(&client).expect("known client").role = wanted;
        self.release(current);
        WireMessage::Ack { of: seq, edit_seq: None }
    }

    fn observations(&self) -> BTreeMap<EntityId, ObsTensor> {
        self.state()
            .alive_player_ids()
            .into_iter()
            .filter_map(|id| self.env.observation(id).map(|o| (id, o)))
            .collect()
    }

    /// Advances one decision step (or one restart-delay period) and returns
    /// the broadcast. Nothing is sent while waiting to restart.
    pub fn step(&mut self) -> Result<Vec<Outgoing>, ServerError> {
        self.note(SessionEvent::Step);
        match self.restart_in {
            Some(n) if n > 0 => {
                self.restart_in = Some(n - 1);
                return Ok(Vec::new());
            }
            Some(_) => {
                let state = self.scenario.new_state(self.seeds.gen()).map_err(ObsError::from)?;
                self.env.reset(state)?;
                self.episode += 1;
                self.decision_step = 0;
                self.restart_in = None;
            }
            None => {
                let obs = self.observations();
                let decision = self.runtime.decide(self.env.state(), &obs)?;
                let out = self.env.step(&decision.actions)?;
                self.decision_step += 1;
                if out.terminal {
                    self.restart_in = Some(self.cfg.restart_delay);
                }
            }
        }
        Ok(self.broadcast(WireMessage::StateUpdate(self.state_update())))
    }

    /// One copy of `msg` per client, each with its own sequence number.
    pub fn broadcast(&mut self, msg: WireMessage) -> Vec<Outgoing> {
        let ids: Vec<ClientId> = self.clients.keys().copied().collect();
        ids.into_iter().filter_map(|id| self.envelope(id, msg.clone())).collect()
    }

    /// Applies recorded events in order and returns everything sent.
    pub fn replay(&mut self, events: &[SessionEvent]) -> Result<Vec<Outgoing>, ServerError> {
        let mut out = Vec::new();
        for e in events {
            match e {
                SessionEvent::Connect { client } => out.extend(self.connect_as(*client).1),
                SessionEvent::Disconnect { client } => self.disconnect(*client),
                SessionEvent::Input { client, bytes } => out.extend(self.handle_bytes(*client, bytes)),
                SessionEvent::Step => out.extend(self.step()?),
            }
        }
        Ok(out)
    }
}
