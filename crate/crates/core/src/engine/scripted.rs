use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::state::GameState;
use super::types::{Action, Cell, Direction, EntityId, Side, TileKind};

/// Hand-written player controllers used as baselines and fixtures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptedPolicy {
    Noop,
    Random,
    /// Guards its spawn cell and shoots enemies that line up with it.
    BaseCamper,
    /// Hunts the nearest enemy wherever it is.
    EnemyChaser,
}

impl ScriptedPolicy {
    pub const ALL: [ScriptedPolicy; 4] = [
        ScriptedPolicy::Noop,
        ScriptedPolicy::Random,
        ScriptedPolicy::BaseCamper,
        ScriptedPolicy::EnemyChaser,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScriptedPolicy::Noop => "noop",
            ScriptedPolicy::Random => "random",
            ScriptedPolicy::BaseCamper => "base_camper",
            ScriptedPolicy::EnemyChaser => "enemy_chaser",
        }
    }
}

impl fmt::Display for ScriptedPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScriptedPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScriptedPolicy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown scripted policy {s:?}"))
    }
}

/// A scripted policy bound to its own rng, so random play never touches
/// the engine's generator.
#[derive(Clone, Debug)]
pub struct ScriptedController {
    pub policy: ScriptedPolicy,
    rng: ChaCha8Rng,
}

impl ScriptedController {
    pub fn new(policy: ScriptedPolicy, seed: u64) -> Self {
        ScriptedController {
            policy,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn act(&mut self, state: &GameState, id: EntityId) -> Action {
        match self.policy {
            ScriptedPolicy::Noop => Action::Noop,
            ScriptedPolicy::Random => Action::ALL[self.rng.gen_range(0..Action::COUNT)],
            ScriptedPolicy::BaseCamper => base_camper(state, id),
            ScriptedPolicy::EnemyChaser => enemy_chaser(state, id),
        }
    }
}

/// Distance along `dir` to the first enemy tank visible from `from`.
/// Ponds and empty tiles are see-through; walls and the base are not.
pub fn enemy_in_line(state: &GameState, from: Cell, dir: Direction) -> Option<u32> {
    let mut c = from;
    for dist in 1.. {
        c = c.step(dir);
        match state.grid.get(c)? {
            TileKind::Empty | TileKind::Pond => {}
            _ => return None,
        }
        if let Some(t) = state.occupant(c) {
            return (t.side == Side::Enemy).then_some(dist);
        }
    }
    None
}

fn shoot_visible(state: &GameState, id: EntityId) -> Option<Action> {
    let me = state.tank(id).filter(|t| t.alive)?;
    let dir = Direction::ALL
        .into_iter()
        .filter_map(|d| enemy_in_line(state, me.pos, d).map(|dist| (dist, d)))
        .min()?
        .1;
    Some(if me.facing == dir {
        if state.has_bullet(id) {
            Action::Noop
        } else {
            Action::Fire
        }
    } else {
        Action::from_direction(dir)
    })
}

/// First step of a shortest path over Empty tiles from `from` to any cell
/// in `goals`, ignoring tanks. `allowed` restricts the cells walked through.
fn path_step(
    state: &GameState,
    from: Cell,
    goals: &[Cell],
    allowed: impl Fn(Cell) -> bool,
) -> Option<Direction> {
    let g = &state.grid;
    let mut first: Vec<Option<Direction>> = vec![None; g.tiles.len()];
    let mut seen = vec![false; g.tiles.len()];
    let mut queue = VecDeque::new();
    seen[g.index(from)?] = true;
    queue.push_back(from);
    while let Some(c) = queue.pop_front() {
        let ci = g.index(c)?;
        for dir in Direction::ALL {
            let n = c.step(dir);
            let Some(ni) = g.index(n) else { continue };
            if seen[ni] {
                continue;
            }
            seen[ni] = true;
            let step = first[ci].or(Some(dir));
            if goals.contains(&n) {
                return step;
            }
            if g.tiles[ni].passable() && allowed(n) {
                first[ni] = step;
                queue.push_back(n);
            }
        }
    }
    None
}

/// Holds its spawn cell next to the base and shoots whatever lines up.
pub fn base_camper(state: &GameState, id: EntityId) -> Action {
    let Some(me) = state.tank(id).filter(|t| t.alive) else {
        return Action::Noop;
    };
    if let Some(a) = shoot_visible(state, id) {
        return a;
    }
    match state.player_spawn(id) {
        Some(post) if post != me.pos => path_step(state, me.pos, &[post], |_| true)
            .map_or(Action::Noop, Action::from_direction),
        _ => Action::Noop,
    }
}

pub fn enemy_chaser(state: &GameState, id: EntityId) -> Action {
    let Some(me) = state.tank(id).filter(|t| t.alive) else {
        return Action::Noop;
    };
    if let Some(a) = shoot_visible(state, id) {
        return a;
    }
    let Some(target) = state.enemies().min_by_key(|e| (e.pos.manhattan(me.pos), e.id)) else {
        return Action::Noop;
    };
    match path_step(state, me.pos, &[target.pos], |_| true) {
        Some(dir) => Action::from_direction(dir),
        // no open path: shoot through whatever is in the way
        None => {
            let dir = if target.pos.row != me.pos.row {
                if target.pos.row < me.pos.row { Direction::Up } else { Direction::Down }
            } else if target.pos.col < me.pos.col {
                Direction::Left
            } else {
                Direction::Right
            };
            if me.facing == dir && !state.has_bullet(id) {
                Action::Fire
            } else {
                Action::from_direction(dir)
            }
        }
    }
}
