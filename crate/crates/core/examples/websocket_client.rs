//! Starts the live server on a free port, connects over WebSocket as an
//! editor, changes a goal map and prints what comes back.
//!
//!     cargo run --release --example websocket_client

use tungstenite::Message;

use tankdef::engine::Cell;
use tankdef::goalmap::{TargetSelector, TargetSpec};
use tankdef::mts::{EditCommand, NetworkSource, StrategyConfig};
use tankdef::scenario::Scenario;
use tankdef::server::{decode, encode, serve, Envelope, Role, ServeConfig, Session, SessionConfig, WireMessage, PROTO_VERSION};

fn main() {
    let session = Session::new(
        Scenario::standard(StrategyConfig::goal_map_pair()),
        NetworkSource::Fresh { seed: 0 },
        SessionConfig {
            decision_rate: 20.0,
            ..SessionConfig::default()
        },
    )
    .unwrap();
    let server = serve(
        session,
        ServeConfig {
            addr: "127.0.0.1:0".into(),
            ..ServeConfig::default()
        },
    )
    .unwrap();
    let url = format!("ws://{}", server.local_addr);
    println!("server at {url}");

    let (mut ws, _) = tungstenite::connect(&url).unwrap();
    let send = |ws: &mut tungstenite::WebSocket<_>, seq, msg| {
        ws.send(Message::binary(encode(&Envelope { seq, msg }))).unwrap();
    };
    send(&mut ws, 0, WireMessage::Join { role: Role::Editor, proto_version: Some(PROTO_VERSION) });
    let edit = EditCommand::SetTargets {
        group: "green".into(),
        specs: vec![TargetSpec::new(TargetSelector::FixedLocation { cell: Cell::new(6, 2) }, 0)],
    };
    send(&mut ws, 1, WireMessage::GoalEdit { command: edit });

    let mut updates = 0;
    while updates < 10 {
        let Message::Binary(bytes) = ws.read().unwrap() else { continue };
        let env = decode(&bytes).unwrap();
        match &env.msg {
            WireMessage::StateUpdate(u) => {
                updates += 1;
                let green: Vec<_> = u.targets.get("green").into_iter().flatten().map(|t| t.cell).collect();
                println!("#{:<3} step {:<3} tick {:<4} status {:?} green targets {:?}", env.seq, u.decision_step, u.tick, u.status, green);
            }
            other => println!("#{:<3} {}", env.seq, serde_json::to_string(other).unwrap()),
        }
    }
    ws.close(None).unwrap();
    server.stop();
    let session = server.join().unwrap();
    println!("served {} decision steps", session.decision_step());
}
