//! Steps the observation environment and saves the stacked 84x84 frames a
//! network would see.
//!
//!     cargo run --release --example observe -- /tmp/obs

use std::collections::BTreeMap;
use std::path::PathBuf;

use tankdef::engine::{Action, EntityId};
use tankdef::mts::StrategyConfig;
use tankdef::observation::GrayImage;
use tankdef::scenario::Scenario;

fn main() {
    let out: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "observe_out".into()).into();
    std::fs::create_dir_all(&out).unwrap();

    let scenario = Scenario::standard(StrategyConfig::goal_map_pair());
    let mut env = scenario.new_env(5).unwrap();
    let actions: BTreeMap<EntityId, Action> = [(EntityId(0), Action::Up), (EntityId(1), Action::Fire)].into();
    for step in 0..6 {
        let r = env.step(&actions).unwrap();
        println!("decision step {step}: {} ticks, rewards {:?}, terminal {}", r.ticks, r.rewards, r.terminal);
        if r.terminal {
            break;
        }
    }

    env.render().save_png(&out.join("native.png")).unwrap();
    let obs = env.observation(EntityId(0)).unwrap();
    let (h, w, k) = obs.shape();
    println!("observation tensor {h}x{w}x{k}");
    for i in 0..k {
        let mut img = GrayImage::new(w, h);
        for (dst, src) in img.pixels.iter_mut().zip(obs.frame(i)) {
            *dst = (src * 255.0).round() as u8;
        }
        img.save_png(&out.join(format!("stack_{i}.png"))).unwrap();
    }
    println!("wrote {}", out.display());
}
