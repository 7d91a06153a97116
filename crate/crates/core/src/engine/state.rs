use std::collections::{BTreeMap, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::EngineConfig;
use super::stage::parse_stage;
use super::types::{
    Action, Bullet, Cell, Direction, EntityId, GameEvent, Side, Status, StepOutcome, Tank, TileKind,
};
use super::EngineError;

/// Tile matrix, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    pub tiles: Vec<TileKind>,
}

impl Grid {
    pub fn contains(&self, c: Cell) -> bool {
        c.col >= 0 && c.row >= 0 && (c.col as usize) < self.width && (c.row as usize) < self.height
    }

    pub fn index(&self, c: Cell) -> Option<usize> {
        self.contains(c)
            .then(|| c.row as usize * self.width + c.col as usize)
    }

    pub fn get(&self, c: Cell) -> Option<TileKind> {
        self.index(c).map(|i| self.tiles[i])
    }

    pub fn set(&mut self, c: Cell, tile: TileKind) {
        if let Some(i) = self.index(c) {
            self.tiles[i] = tile;
        }
    }

    pub fn count(&self, kind: TileKind) -> usize {
        self.tiles.iter().filter(|t| **t == kind).count()
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.height).flat_map(move |r| (0..self.width).map(move |c| Cell::new(c as i32, r as i32)))
    }

    /// Stage-file rendering of the terrain (spawn markers are not kept).
    pub fn rows(&self) -> Vec<String> {
        self.tiles
            .chunks(self.width)
            .map(|row| row.iter().map(|t| t.symbol()).collect())
            .collect()
    }
}

/// Complete simulation state. Cloning it forks the episode, including the rng.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GameState {
    pub tick: u64,
    pub grid: Grid,
    pub base: Cell,
    pub base_alive: bool,
    pub tanks: Vec<Tank>,
    pub bullets: Vec<Bullet>,
    pub rng: ChaCha8Rng,
    pub agent_scores: BTreeMap<EntityId, f64>,
    pub status: Status,
    pub player_spawns: BTreeMap<EntityId, Cell>,
    pub enemy_spawns: Vec<Cell>,
    /// Remaining delay of each enemy slot waiting to respawn.
    pub pending_respawns: Vec<u32>,
    pub next_entity: u32,
    pub config: EngineConfig,
    /// Breadth-first distance to the base over tiles a tank could reach
    /// once soft walls are shot away. `u32::MAX` marks unreachable cells.
    pub base_distance: Vec<u32>,
}

/// Number of ids reserved for players.
const PLAYER_SLOTS: u32 = 2;

/// Parses a stage and places the players and the initial enemies.
pub fn load_stage(stage_text: &str, config: &EngineConfig, seed: u64) -> Result<GameState, EngineError> {
    config.validate()?;
    let layout = parse_stage(stage_text)?;
    if let Some([w, h]) = config.grid_size {
        if (w, h) != (layout.width, layout.height) {
            return Err(EngineError::MalformedStage(format!(
                "stage is {}x{}, config expects {w}x{h}",
                layout.width, layout.height
            )));
        }
    }
    let grid = Grid {
        width: layout.width,
        height: layout.height,
        tiles: layout.tiles,
    };
    let tanks = layout
        .player_spawns
        .iter()
        .map(|&(slot, pos)| Tank {
            id: EntityId(slot as u32),
            side: Side::Player,
            pos,
            facing: Direction::Up,
            alive: true,
        })
        .collect::<Vec<_>>();
    let agent_scores = tanks.iter().map(|t| (t.id, 0.0)).collect();
    let base_distance = distance_field(&grid, layout.base);
    let mut state = GameState {
        tick: 0,
        grid,
        base: layout.base,
        base_alive: true,
        tanks,
        bullets: Vec::new(),
        rng: ChaCha8Rng::seed_from_u64(seed),
        agent_scores,
        status: Status::Running,
        player_spawns: layout
            .player_spawns
            .iter()
            .map(|&(slot, cell)| (EntityId(slot as u32), cell))
            .collect(),
        enemy_spawns: layout.enemy_spawns,
        pending_respawns: Vec::new(),
        next_entity: PLAYER_SLOTS,
        config: config.clone(),
        base_distance,
    };
    let mut free = state.free_spawn_cells();
    free.shuffle(&mut state.rng);
    let initial = free.len().min(state.config.max_enemies);
    for &cell in &free[..initial] {
        state.add_enemy(cell);
    }
    let missing = state.config.max_enemies - initial;
    state
        .pending_respawns
        .extend(std::iter::repeat_n(state.config.respawn_delay, missing));
    Ok(state)
}

fn distance_field(grid: &Grid, base: Cell) -> Vec<u32> {
    let mut dist = vec![u32::MAX; grid.tiles.len()];
    let mut queue = VecDeque::new();
    let traversable = |t: TileKind| matches!(t, TileKind::Empty | TileKind::SoftWall);
    if let Some(i) = grid.index(base) {
        dist[i] = 0;
        queue.push_back(base);
    }
    while let Some(c) = queue.pop_front() {
        let d = dist[grid.index(c).expect("queued cells are on the grid")];
        for dir in Direction::ALL {
            let n = c.step(dir);
            let Some(ni) = grid.index(n) else { continue };
            if dist[ni] == u32::MAX && traversable(grid.tiles[ni]) {
                dist[ni] = d + 1;
                queue.push_back(n);
            }
        }
    }
    dist
}

impl GameState {
    pub fn players(&self) -> impl Iterator<Item = &Tank> {
        self.tanks.iter().filter(|t| t.side == Side::Player)
    }

    pub fn enemies(&self) -> impl Iterator<Item = &Tank> {
        self.tanks.iter().filter(|t| t.side == Side::Enemy && t.alive)
    }

    pub fn player_ids(&self) -> Vec<EntityId> {
        self.players().map(|t| t.id).collect()
    }

    pub fn alive_player_ids(&self) -> Vec<EntityId> {
        self.players().filter(|t| t.alive).map(|t| t.id).collect()
    }

    pub fn player_spawn(&self, id: EntityId) -> Option<Cell> {
        self.player_spawns.get(&id).copied()
    }

    pub fn tank(&self, id: EntityId) -> Option<&Tank> {
        self.tanks.iter().find(|t| t.id == id)
    }

    /// Alive tank standing on `cell`.
    pub fn occupant(&self, cell: Cell) -> Option<&Tank> {
        self.tanks.iter().find(|t| t.alive && t.pos == cell)
    }

    pub fn is_terminal(&self) -> bool {
        self.status != Status::Running
    }

    pub fn has_bullet(&self, owner: EntityId) -> bool {
        self.bullets.iter().any(|b| b.owner == owner)
    }

    /// Shortest-path distance from `cell` to the base, if reachable.
    pub fn distance_to_base(&self, cell: Cell) -> Option<u32> {
        let d = self.base_distance[self.grid.index(cell)?];
        (d != u32::MAX).then_some(d)
    }

    pub fn free_spawn_cells(&self) -> Vec<Cell> {
        self.enemy_spawns
            .iter()
            .copied()
            .filter(|c| self.occupant(*c).is_none())
            .collect()
    }

    /// Places an enemy on `cell` with a fresh id. Used by spawning and by
    /// hand-built fixtures.
    pub fn add_enemy(&mut self, cell: Cell) -> EntityId {
        let id = EntityId(self.next_entity);
        self.next_entity += 1;
        self.tanks.push(Tank {
            id,
            side: Side::Enemy,
            pos: cell,
            facing: Direction::Down,
            alive: true,
        });
        id
    }

    /// Canonical serialized form; equal bytes imply identical futures.
    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("game state is always serializable")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<GameState, serde_json::Error> {
        serde_json::from_slice(bytes)
    }

    /// SHA-256 of the serialized state.
    pub fn state_hash(&self) -> [u8; 32] {
        Sha256::digest(self.to_bytes()).into()
    }

    /// Advances one tick. Phases: player actions, enemy actions, bullets
    /// (with hits applied as they happen), cleanup and respawn timers,
    /// spawning, termination.
    pub fn step(&mut self, actions: &BTreeMap<EntityId, Action>) -> Result<StepOutcome, EngineError> {
        if self.status != Status::Running {
            return Err(EngineError::SteppedTerminalState(self.status));
        }
        let alive = self.alive_player_ids();
        if let Some(missing) = alive.iter().find(|id| !actions.contains_key(id)) {
            return Err(EngineError::MissingAction(*missing));
        }
        let mut outcome = StepOutcome {
            rewards: self.player_ids().into_iter().map(|id| (id, 0.0)).collect(),
            ..StepOutcome::default()
        };

        for id in alive {
            self.apply_action(id, actions[&id]);
        }

        let enemy_ids: Vec<EntityId> = self.enemies().map(|t| t.id).collect();
        for id in enemy_ids {
            let action = self.enemy_policy(id);
            self.apply_action(id, action);
        }

        self.advance_bullets(&mut outcome);

        let reward = self.config.reward_per_kill;
        for event in &outcome.events {
            if let GameEvent::EnemyDestroyed { by, .. } = event {
                if let Some(r) = outcome.rewards.get_mut(by) {
                    *r += reward;
                }
            }
        }
        for (id, r) in &outcome.rewards {
            *self.agent_scores.entry(*id).or_insert(0.0) += r;
        }
        let before = self.tanks.len();
        self.tanks.retain(|t| t.side == Side::Player || t.alive);
        let died = before - self.tanks.len();
        let delay = self.config.respawn_delay;
        self.pending_respawns.extend(std::iter::repeat_n(delay, died));

        self.spawn_enemies();

        self.tick += 1;
        self.status = if !self.base_alive {
            Status::BaseDestroyed
        } else if self.players().all(|t| !t.alive) {
            Status::AllPlayersDead
        } else if self.tick >= self.config.step_limit {
            Status::StepLimit
        } else {
            Status::Running
        };
        outcome.terminal = self.status != Status::Running;
        Ok(outcome)
    }

    fn apply_action(&mut self, id: EntityId, action: Action) {
        let Some(idx) = self.tanks.iter().position(|t| t.id == id && t.alive) else {
            return;
        };
        if let Some(dir) = action.movement() {
            self.tanks[idx].facing = dir;
            let target = self.tanks[idx].pos.step(dir);
            let free = self.grid.get(target).is_some_and(TileKind::passable)
                && self.occupant(target).is_none();
            if free {
                self.tanks[idx].pos = target;
            }
        } else if action == Action::Fire && !self.has_bullet(id) {
            let t = &self.tanks[idx];
            self.bullets.push(Bullet {
                owner: id,
                owner_side: t.side,
                pos: t.pos,
                dir: t.facing,
                speed: self.config.bullet_speed,
            });
        }
    }

    /// Moves every bullet `speed` cells one cell at a time, in creation
    /// order, applying the first collision on its path.
    fn advance_bullets(&mut self, outcome: &mut StepOutcome) {
        let mut i = 0;
        while i < self.bullets.len() {
            if self.advance_bullet(i, outcome) {
                self.bullets.remove(i);
            } else {
                i += 1;
            }
        }
    }

    /// Returns true when the bullet is consumed.
    fn advance_bullet(&mut self, i: usize, outcome: &mut StepOutcome) -> bool {
        let (owner, side, dir, speed) = {
            let b = &self.bullets[i];
            (b.owner, b.owner_side, b.dir, b.speed)
        };
        // a tank that moved onto the bullet's cell this tick is hit too
        if self.hit_tank_at(self.bullets[i].pos, owner, side, outcome) {
            return true;
        }
        for _ in 0..speed {
            let next = self.bullets[i].pos.step(dir);
            match self.grid.get(next) {
                None | Some(TileKind::HardWall) => return true,
                Some(TileKind::SoftWall) => {
                    self.grid.set(next, TileKind::Empty);
                    outcome.events.push(GameEvent::WallDestroyed { cell: next });
                    return true;
                }
                Some(TileKind::Base) => {
                    self.base_alive = false;
                    outcome.events.push(GameEvent::BaseHit { by: owner });
                    return true;
                }
                Some(TileKind::Empty) | Some(TileKind::Pond) => {}
            }
            self.bullets[i].pos = next;
            if self.hit_tank_at(next, owner, side, outcome) {
                return true;
            }
        }
        false
    }

    fn hit_tank_at(&mut self, cell: Cell, owner: EntityId, side: Side, outcome: &mut StepOutcome) -> bool {
        let Some(t) = self
            .tanks
            .iter_mut()
            .find(|t| t.alive && t.pos == cell && t.id != owner)
        else {
            return false;
        };
        // same-side fire is absorbed without damage
        if t.side == side {
            return true;
        }
        t.alive = false;
        outcome.events.push(match t.side {
            Side::Enemy => GameEvent::EnemyDestroyed {
                enemy: t.id,
                cell,
                by: owner,
            },
            Side::Player => GameEvent::PlayerDestroyed {
                player: t.id,
                cell,
                by: owner,
            },
        });
        true
    }

    /// Counts down respawn timers and places every enemy whose delay has
    /// elapsed on a uniformly chosen free spawn cell. Ready enemies that
    /// find every spawn cell blocked wait for a later tick.
    pub fn spawn_enemies(&mut self) {
        for t in &mut self.pending_respawns {
            *t = t.saturating_sub(1);
        }
        while let Some(pos) = self.pending_respawns.iter().position(|t| *t == 0) {
            if self.enemies().count() >= self.config.max_enemies {
                break;
            }
            let free = self.free_spawn_cells();
            if free.is_empty() {
                break;
            }
            let cell = free[self.rng.gen_range(0..free.len())];
            self.add_enemy(cell);
            self.pending_respawns.remove(pos);
        }
    }

    /// Scripted enemy controller. Always draws three uniforms from the
    /// state rng (fire, advance, direction) so rng consumption does not
    /// depend on the branch taken.
    pub fn enemy_policy(&mut self, id: EntityId) -> Action {
        let fire_roll: f64 = self.rng.gen();
        let advance_roll: f64 = self.rng.gen();
        let dir_roll: f64 = self.rng.gen();
        let Some(tank) = self.tank(id).filter(|t| t.alive) else {
            return Action::Noop;
        };
        if fire_roll < self.config.p_fire && !self.has_bullet(id) {
            return Action::Fire;
        }
        if advance_roll < self.config.p_advance {
            if let Some(dir) = self.advance_direction(tank.pos) {
                return Action::from_direction(dir);
            }
        }
        let k = ((dir_roll * 4.0) as usize).min(3);
        Action::from_direction(Direction::ALL[k])
    }

    /// First direction (in `Direction::ALL` order) that decreases the
    /// distance to the base; next to the base this faces the base.
    pub fn advance_direction(&self, from: Cell) -> Option<Direction> {
        let d = self.distance_to_base(from)?;
        if d == 0 {
            return None;
        }
        Direction::ALL.into_iter().find(|dir| {
            let n = from.step(*dir);
            self.grid
                .index(n)
                .is_some_and(|i| self.base_distance[i] == d - 1)
        })
    }
}
