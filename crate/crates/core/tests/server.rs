use std::net::TcpStream;
use std::time::{Duration, Instant};

use tankdef::engine::{Action, Cell, EntityId, ScriptedPolicy};
use tankdef::goalmap::{Rect, TargetSelector, TargetSpec};
use tankdef::mts::{ControlMode, EditCommand, NetworkSource, StrategyConfig};
use tankdef::scenario::{strategy_preset, Scenario};
use tankdef::server::{
    decode, decode_stream, encode, serve, Envelope, ErrorCode, Outgoing, Role, ServeConfig, Session, SessionConfig,
    WireMessage, PROTO_VERSION,
};
use tungstenite::Message;

fn session(strategy: StrategyConfig) -> Session {
    Session::new(Scenario::small(strategy), NetworkSource::Fresh { seed: 3 }, SessionConfig::default()).unwrap()
}

fn goal_session() -> Session {
    session(strategy_preset("goal_map_pair").unwrap())
}

fn send(s: &mut Session, client: u64, seq: u64, msg: WireMessage) -> WireMessage {
    let out = s.handle_bytes(client, &encode(&Envelope { seq, msg }));
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].to, client);
    out[0].envelope.msg.clone()
}

fn join(role: Role) -> WireMessage {
    WireMessage::Join {
        role,
        proto_version: Some(PROTO_VERSION),
    }
}

fn error_code(m: &WireMessage) -> Option<ErrorCode> {
    match m {
        WireMessage::Error { code, .. } => Some(*code),
        _ => None,
    }
}

fn fixed(col: i32, row: i32) -> TargetSpec {
    TargetSpec::new(TargetSelector::FixedLocation { cell: Cell::new(col, row) }, 0)
}

#[test]
fn connect_greets_with_hello_then_state() {
    let mut s = goal_session();
    let (id, out) = s.connect();
    assert_eq!(out.len(), 2);
    assert!(out.iter().all(|o| o.to == id));
    assert!(matches!(out[0].envelope.msg, WireMessage::ServerHello { proto_version: PROTO_VERSION, .. }));
    assert!(matches!(out[1].envelope.msg, WireMessage::StateUpdate(_)));
    assert_eq!((out[0].envelope.seq, out[1].envelope.seq), (0, 1));
}

#[test]
fn second_claim_on_a_player_is_refused() {
    let mut s = goal_session();
    let (a, _) = s.connect();
    let (b, _) = s.connect();
    assert!(matches!(
        send(&mut s, a, 0, join(Role::HumanPlayer { agent: EntityId(0) })),
        WireMessage::Ack { of: 0, .. }
    ));
    let reply = send(&mut s, b, 0, join(Role::HumanPlayer { agent: EntityId(0) }));
    assert_eq!(error_code(&reply), Some(ErrorCode::SlotTaken));
    assert_eq!(s.role(b), Some(Role::Spectator));
}

#[test]
fn claim_switches_group_to_human_until_disconnect() {
    let mut s = goal_session();
    let (a, _) = s.connect();
    send(&mut s, a, 0, join(Role::HumanPlayer { agent: EntityId(0) }));
    s.step().unwrap();
    assert_eq!(s.runtime().mode("yellow"), Some(ControlMode::Human));
    assert_eq!(s.runtime().mode("green"), Some(ControlMode::Learned));
    s.disconnect(a);
    s.step().unwrap();
    assert_eq!(s.runtime().mode("yellow"), Some(ControlMode::Learned));
}

#[test]
fn actions_need_the_matching_slot() {
    let mut s = goal_session();
    let (a, _) = s.connect();
    let act = |agent| WireMessage::HumanAction {
        agent: EntityId(agent),
        action: Action::Fire,
    };
    assert_eq!(error_code(&send(&mut s, a, 0, act(0))), Some(ErrorCode::NotAPlayer));
    assert_eq!(error_code(&send(&mut s, a, 1, act(99))), Some(ErrorCode::UnknownAgent));
    send(&mut s, a, 2, join(Role::HumanPlayer { agent: EntityId(1) }));
    assert_eq!(error_code(&send(&mut s, a, 3, act(0))), Some(ErrorCode::NotAPlayer));
    assert!(matches!(send(&mut s, a, 4, act(1)), WireMessage::Ack { of: 4, .. }));
}

#[test]
fn edits_need_editor_role_and_known_group() {
    let mut s = goal_session();
    let (a, _) = s.connect();
    let edit = |group: &str| WireMessage::GoalEdit {
        command: EditCommand::SetTargets {
            group: group.into(),
            specs: vec![fixed(4, 4)],
        },
    };
    assert_eq!(error_code(&send(&mut s, a, 0, edit("yellow"))), Some(ErrorCode::NotAnEditor));
    send(&mut s, a, 1, join(Role::Editor));
    assert_eq!(error_code(&send(&mut s, a, 2, edit("purple"))), Some(ErrorCode::UnknownGroup));
    let out_of_grid = WireMessage::GoalEdit {
        command: EditCommand::SetTargets {
            group: "yellow".into(),
            specs: vec![fixed(40, 4)],
        },
    };
    assert_eq!(error_code(&send(&mut s, a, 3, out_of_grid)), Some(ErrorCode::InvalidEdit));
    assert!(matches!(send(&mut s, a, 4, edit("yellow")), WireMessage::Ack { of: 4, edit_seq: Some(_) }));
}

#[test]
fn version_mismatch_and_garbage_are_reported() {
    let mut s = goal_session();
    let (a, _) = s.connect();
    let reply = send(
        &mut s,
        a,
        0,
        WireMessage::Join {
            role: Role::Editor,
            proto_version: Some(PROTO_VERSION + 1),
        },
    );
    assert_eq!(error_code(&reply), Some(ErrorCode::UnsupportedVersion));
    let out = s.handle_bytes(a, b"\x00\x00\x00\x03abc");
    assert_eq!(error_code(&out[0].envelope.msg), Some(ErrorCode::Malformed));
    let reply = send(&mut s, a, 1, WireMessage::Ack { of: 0, edit_seq: None });
    assert_eq!(error_code(&reply), Some(ErrorCode::Malformed));
}

fn last_targets(out: &[Outgoing], group: &str) -> Vec<tankdef::goalmap::ResolvedTarget> {
    out.iter()
        .rev()
        .find_map(|o| match &o.envelope.msg {
            WireMessage::StateUpdate(u) => u.targets.get(group).cloned(),
            _ => None,
        })
        .expect("a state update")
}

#[test]
fn latest_edit_wins_before_the_next_decision() {
    let mut s = goal_session();
    let (a, _) = s.connect();
    send(&mut s, a, 0, join(Role::Editor));
    for (seq, col) in [(1, 2), (2, 6)] {
        send(
            &mut s,
            a,
            seq,
            WireMessage::GoalEdit {
                command: EditCommand::SetTargets {
                    group: "yellow".into(),
                    specs: vec![fixed(col, 3)],
                },
            },
        );
    }
    let out = s.step().unwrap();
    let t = last_targets(&out, "yellow");
    assert_eq!(t.len(), 1);
    assert_eq!(t[0].cell, Cell::new(6, 3));
}

#[test]
fn working_region_edit_shows_in_targets() {
    let mut s = goal_session();
    let (a, _) = s.connect();
    send(&mut s, a, 0, join(Role::Editor));
    send(
        &mut s,
        a,
        1,
        WireMessage::GoalEdit {
            command: EditCommand::SetTargets {
                group: "green".into(),
                specs: vec![fixed(4, 3)],
            },
        },
    );
    let rect = Rect::new(Cell::new(2, 2), Cell::new(6, 5)).unwrap();
    let reply = send(
        &mut s,
        a,
        2,
        WireMessage::GoalEdit {
            command: EditCommand::SetWorkingRegion {
                group: "green".into(),
                spec_index: 0,
                rect: Some(rect),
            },
        },
    );
    assert!(matches!(reply, WireMessage::Ack { .. }));
    let out = s.step().unwrap();
    let t = last_targets(&out, "green");
    assert_eq!(t[0].working_region, Some(rect));
}

#[test]
fn sequence_numbers_count_per_client() {
    let mut s = session(StrategyConfig::scripted(ScriptedPolicy::Noop));
    let (a, _) = s.connect();
    for _ in 0..3 {
        s.step().unwrap();
    }
    let (b, out_b) = s.connect();
    let out = s.step().unwrap();
    let seq_of = |id| out.iter().find(|o| o.to == id).unwrap().envelope.seq;
    assert_eq!(seq_of(a), 5);
    assert_eq!(seq_of(b), out_b.len() as u64);
}

#[test]
fn episodes_restart_after_the_delay() {
    let mut s = session(StrategyConfig::scripted(ScriptedPolicy::Random));
    s.connect();
    let mut silent = 0;
    for _ in 0..400 {
        if s.step().unwrap().is_empty() {
            silent += 1;
        }
        if s.episode() > 0 {
            break;
        }
    }
    assert_eq!(s.episode(), 1);
    assert_eq!(silent, SessionConfig::default().restart_delay);
    assert_eq!(s.decision_step(), 0);
}

#[test]
fn recorded_transcript_replays_identically() {
    let mut s = goal_session();
    s.start_recording();
    let (a, _) = s.connect();
    let (b, _) = s.connect();
    let mut out = Vec::new();
    out.extend(s.handle_bytes(a, &encode(&Envelope { seq: 0, msg: join(Role::HumanPlayer { agent: EntityId(0) }) })));
    out.extend(s.handle_bytes(b, &encode(&Envelope { seq: 0, msg: join(Role::Editor) })));
    for i in 0..30u64 {
        let action = Action::ALL[(i % 6) as usize];
        out.extend(s.handle_bytes(
            a,
            &encode(&Envelope {
                seq: i + 1,
                msg: WireMessage::HumanAction { agent: EntityId(0), action },
            }),
        ));
        if i == 10 {
            out.extend(s.handle_bytes(
                b,
                &encode(&Envelope {
                    seq: 1,
                    msg: WireMessage::GoalEdit {
                        command: EditCommand::SetTargets {
                            group: "green".into(),
                            specs: vec![fixed(1, 1)],
                        },
                    },
                }),
            ));
        }
        out.extend(s.step().unwrap());
    }
    s.disconnect(a);
    out.extend(s.step().unwrap());
    let events = s.take_recording();
    let json = serde_json::to_string(&events).unwrap();
    let events: Vec<tankdef::server::SessionEvent> = serde_json::from_str(&json).unwrap();

    let mut fresh = goal_session();
    let replayed = fresh.replay(&events).unwrap();
    let first: Vec<(u64, Vec<u8>)> = out.iter().map(|o| (o.to, encode(&o.envelope))).collect();
    let second: Vec<(u64, Vec<u8>)> = replayed
        .iter()
        .filter(|o| !matches!(o.envelope.msg, WireMessage::ServerHello { .. }) && o.envelope.seq > 1)
        .map(|o| (o.to, encode(&o.envelope)))
        .collect();
    assert_eq!(first, second);
    assert_eq!(fresh.state().state_hash(), s.state().state_hash());
}

fn ws_connect(addr: std::net::SocketAddr) -> tungstenite::WebSocket<tungstenite::stream::MaybeTlsStream<TcpStream>> {
    let (ws, _) = tungstenite::connect(format!("ws://{addr}")).unwrap();
    ws
}

fn read_env(ws: &mut tungstenite::WebSocket<tungstenite::stream::MaybeTlsStream<TcpStream>>) -> Envelope {
    loop {
        match ws.read().unwrap() {
            Message::Binary(b) => return decode(&b).unwrap(),
            _ => continue,
        }
    }
}

#[test]
fn stalled_client_does_not_slow_the_loop() {
    let rate = 50.0;
    let s = Session::new(
        Scenario::small(StrategyConfig::scripted(ScriptedPolicy::Random)),
        NetworkSource::Fresh { seed: 0 },
        SessionConfig {
            decision_rate: rate,
            restart_delay: 0,
            ..SessionConfig::default()
        },
    )
    .unwrap();
    let handle = serve(
        s,
        ServeConfig {
            addr: "127.0.0.1:0".into(),
            queue_capacity: 4,
            max_steps: None,
        },
    )
    .unwrap();
    // completes the handshake, then never reads
    let _stalled = ws_connect(handle.local_addr);
    let mut good = ws_connect(handle.local_addr);
    let start = Instant::now();
    let mut updates = 0;
    while start.elapsed() < Duration::from_secs(2) {
        if matches!(read_env(&mut good).msg, WireMessage::StateUpdate(_)) {
            updates += 1;
        }
    }
    let steps = handle.stats.steps.load(std::sync::atomic::Ordering::SeqCst);
    handle.stop();
    let session = handle.join().unwrap();
    let expected = 2.0 * rate;
    assert!((steps as f64) > 0.8 * expected, "loop ran {steps} steps in 2 s");
    assert!(updates as f64 > 0.6 * expected, "good client saw {updates} updates");
    assert!(session.client_count() <= 2);
}

#[test]
fn human_action_is_acked_within_a_decision_period() {
    let rate = 20.0;
    let s = Session::new(
        Scenario::small(StrategyConfig::scripted(ScriptedPolicy::Noop)),
        NetworkSource::Fresh { seed: 0 },
        SessionConfig {
            decision_rate: rate,
            ..SessionConfig::default()
        },
    )
    .unwrap();
    let handle = serve(
        s,
        ServeConfig {
            addr: "127.0.0.1:0".into(),
            ..ServeConfig::default()
        },
    )
    .unwrap();
    let mut ws = ws_connect(handle.local_addr);
    let hello = read_env(&mut ws);
    assert!(matches!(hello.msg, WireMessage::ServerHello { .. }));
    let send = |ws: &mut tungstenite::WebSocket<_>, seq, msg| {
        ws.send(Message::binary(encode(&Envelope { seq, msg }))).unwrap();
    };
    send(&mut ws, 0, join(Role::HumanPlayer { agent: EntityId(0) }));
    let mut worst = Duration::ZERO;
    for seq in 1..6u64 {
        let sent = Instant::now();
        send(
            &mut ws,
            seq,
            WireMessage::HumanAction {
                agent: EntityId(0),
                action: Action::Fire,
            },
        );
        loop {
            if let WireMessage::Ack { of, .. } = read_env(&mut ws).msg {
                if of == seq {
                    break;
                }
            }
        }
        worst = worst.max(sent.elapsed());
    }
    handle.stop();
    handle.join().unwrap();
    assert!(worst < Duration::from_secs_f64(2.0 / rate), "ack took {worst:?}");
}

#[test]
fn transcripts_are_frames_back_to_back() {
    let mut s = goal_session();
    let (_, mut out) = s.connect();
    for _ in 0..5 {
        out.extend(s.step().unwrap());
    }
    let bytes: Vec<u8> = out.iter().flat_map(|o| encode(&o.envelope)).collect();
    let back = decode_stream(&bytes).unwrap();
    assert_eq!(back, out.iter().map(|o| o.envelope.clone()).collect::<Vec<_>>());
}
