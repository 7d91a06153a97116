//! Independent reference implementations shared by the property and
//! acceptance suites. None of them call into the code they check.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tankdef::engine::{load_stage, Action, Cell, EngineConfig, EntityId, GameState, ScriptedController, ScriptedPolicy, Side, TileKind, SMALL_STAGE};

/// `Σ_k γ^k r_{t+k} + γ^{T−t}·bootstrap`, summed forward from each `t`.
pub fn forward_sum_returns(rewards: &[f64], bootstrap: f64, terminal: bool, gamma: f64) -> Vec<f64> {
    let n = rewards.len();
    (0..n)
        .map(|t| {
            let mut total = 0.0;
            for (k, r) in rewards[t..].iter().enumerate() {
                total += gamma.powi(k as i32) * r;
            }
            if !terminal {
                total += gamma.powi((n - t) as i32) * bootstrap;
            }
            total
        })
        .collect()
}

/// Direct quadruple loop over `[C,H,W]` input and `[O,C,K,K]` weights.
pub fn naive_conv(
    input: &[f32],
    (c, h, w): (usize, usize, usize),
    weight: &[f32],
    (o, k): (usize, usize),
    bias: &[f32],
    stride: usize,
) -> Vec<f32> {
    let oh = (h - k) / stride + 1;
    let ow = (w - k) / stride + 1;
    let mut out = vec![0.0f32; o * oh * ow];
    for oc in 0..o {
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = bias[oc];
                for ic in 0..c {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iv = input[ic * h * w + (y * stride + ky) * w + (x * stride + kx)];
                            let wv = weight[((oc * c + ic) * k + ky) * k + kx];
                            acc += iv * wv;
                        }
                    }
                }
                out[(oc * oh + y) * ow + x] = acc;
            }
        }
    }
    out
}

/// Pixels covered by the union of one `px`-sided square per cell, clipped
/// to a `w × h` image.
pub fn square_union_area(cells: &[Cell], px: usize, w: usize, h: usize) -> usize {
    let mut covered = vec![false; w * h];
    for c in cells {
        if c.col < 0 || c.row < 0 {
            continue;
        }
        let (x0, y0) = (c.col as usize * px, c.row as usize * px);
        for y in y0..(y0 + px) {
            for x in x0..(x0 + px) {
                if x < w && y < h {
                    covered[y * w + x] = true;
                }
            }
        }
    }
    covered.iter().filter(|&&b| b).count()
}

/// Brute-force closest alive enemy to the base by Manhattan distance,
/// lowest id on ties.
pub fn brute_closest(state: &GameState) -> Option<(EntityId, Cell)> {
    let mut best: Option<(u32, EntityId, Cell)> = None;
    for t in &state.tanks {
        if t.side != Side::Enemy || !t.alive {
            continue;
        }
        let d = (t.pos.col - state.base.col).unsigned_abs() + (t.pos.row - state.base.row).unsigned_abs();
        let better = match best {
            None => true,
            Some((bd, bid, _)) => d < bd || (d == bd && t.id < bid),
        };
        if better {
            best = Some((d, t.id, t.pos));
        }
    }
    best.map(|(_, id, c)| (id, c))
}

/// Small stage with up to `extra` enemies placed at random free cells and a
/// random subset killed.
pub fn random_state(seed: u64, extra: usize) -> GameState {
    let cfg = EngineConfig {
        max_enemies: 8,
        ..EngineConfig::default()
    };
    let mut state = load_stage(SMALL_STAGE, &cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let free: Vec<Cell> = state
        .grid
        .cells()
        .filter(|&c| state.grid.get(c) == Some(TileKind::Empty) && state.occupant(c).is_none())
        .collect();
    for _ in 0..rng.gen_range(0..=extra) {
        let c = free[rng.gen_range(0..free.len())];
        if state.occupant(c).is_none() {
            state.add_enemy(c);
        }
    }
    for t in state.tanks.iter_mut() {
        if t.side == Side::Enemy && rng.gen_bool(0.2) {
            t.alive = false;
        }
    }
    state
}

pub struct EpisodeLog {
    pub ticks: u64,
    pub hash: [u8; 32],
    pub rewards: BTreeMap<EntityId, f64>,
}

/// Runs scripted controllers on every player tick by tick.
pub fn run_scripted(stage: &str, cfg: &EngineConfig, seed: u64, policy: ScriptedPolicy, ticks: u64, restart: bool) -> EpisodeLog {
    let mut state = load_stage(stage, cfg, seed).unwrap();
    let mut ctl = ScriptedController::new(policy, seed);
    let mut rewards: BTreeMap<EntityId, f64> = BTreeMap::new();
    let mut episode = 0;
    for _ in 0..ticks {
        if state.is_terminal() {
            if !restart {
                break;
            }
            episode += 1;
            state = load_stage(stage, cfg, seed.wrapping_add(episode)).unwrap();
        }
        let actions: BTreeMap<EntityId, Action> = state
            .alive_player_ids()
            .into_iter()
            .map(|id| (id, ctl.act(&state, id)))
            .collect();
        let out = state.step(&actions).unwrap();
        for (id, r) in out.rewards {
            *rewards.entry(id).or_default() += r;
        }
    }
    EpisodeLog {
        ticks,
        hash: state.state_hash(),
        rewards,
    }
}
