//! Drives an in-process session with a human player, records its inputs,
//! writes the outgoing frames to a transcript file and replays the inputs to
//! show the output is reproduced byte for byte.
//!
//!     cargo run --release --example session_transcript -- /tmp/transcript.bin

use tankdef::engine::{Action, EntityId};
use tankdef::mts::{NetworkSource, StrategyConfig};
use tankdef::scenario::Scenario;
use tankdef::server::{decode_stream, encode, Envelope, Outgoing, Role, Session, SessionConfig, WireMessage, PROTO_VERSION};

fn frames(out: &[Outgoing]) -> Vec<u8> {
    out.iter().flat_map(|o| encode(&o.envelope)).collect()
}

fn main() {
    let path = std::env::args().nth(1).unwrap_or_else(|| "transcript.bin".into());
    let make = || {
        Session::new(
            Scenario::small(StrategyConfig::goal_map_pair()),
            NetworkSource::Fresh { seed: 4 },
            SessionConfig::default(),
        )
        .unwrap()
    };

    let mut live = make();
    live.start_recording();
    let mut out = Vec::new();
    let (client, hello) = live.connect();
    out.extend(hello);
    let join = Envelope {
        seq: 0,
        msg: WireMessage::Join { role: Role::HumanPlayer { agent: EntityId(0) }, proto_version: Some(PROTO_VERSION) },
    };
    out.extend(live.handle_bytes(client, &encode(&join)));
    let moves = [Action::Up, Action::Fire, Action::Left, Action::Fire, Action::Right];
    for (i, action) in moves.iter().cycle().take(40).enumerate() {
        let msg = Envelope { seq: i as u64 + 1, msg: WireMessage::HumanAction { agent: EntityId(0), action: *action } };
        out.extend(live.handle_bytes(client, &encode(&msg)));
        out.extend(live.step().unwrap());
    }
    let transcript = frames(&out);
    std::fs::write(&path, &transcript).unwrap();

    let decoded = decode_stream(&std::fs::read(&path).unwrap()).unwrap();
    for env in decoded.iter().take(4) {
        let json = serde_json::to_string(&env.msg).unwrap();
        println!("#{} {}", env.seq, &json[..json.len().min(120)]);
    }
    println!("... {} frames, {} bytes in {path}", decoded.len(), transcript.len());

    let events = live.take_recording();
    let replayed = frames(&make().replay(&events).unwrap());
    println!("replay of {} recorded inputs reproduces the transcript: {}", events.len(), replayed == transcript);
}
