use std::fmt;

use serde::{Deserialize, Serialize};

/// Identifier of a tank. Players keep their id for the whole episode;
/// enemies get a fresh id on every spawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub u32);

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Grid cell as (column, row); row 0 is the top of the board.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub col: i32,
    pub row: i32,
}

impl Cell {
    pub const fn new(col: i32, row: i32) -> Self {
        Cell { col, row }
    }

    pub fn step(self, dir: Direction) -> Cell {
        let (dc, dr) = dir.delta();
        Cell::new(self.col + dc, self.row + dr)
    }

    pub fn manhattan(self, other: Cell) -> u32 {
        self.col.abs_diff(other.col) + self.row.abs_diff(other.row)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::Up,
        Direction::Down,
        Direction::Left,
        Direction::Right,
    ];

    pub fn delta(self) -> (i32, i32) {
        match self {
            Direction::Up => (0, -1),
            Direction::Down => (0, 1),
            Direction::Left => (-1, 0),
            Direction::Right => (1, 0),
        }
    }

    pub fn opposite(self) -> Direction {
        match self {
            Direction::Up => Direction::Down,
            Direction::Down => Direction::Up,
            Direction::Left => Direction::Right,
            Direction::Right => Direction::Left,
        }
    }

    /// Direction of a single orthogonal step from `from` to `to`, if any.
    pub fn between(from: Cell, to: Cell) -> Option<Direction> {
        Direction::ALL.into_iter().find(|d| from.step(*d) == to)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TileKind {
    Empty,
    SoftWall,
    HardWall,
    Pond,
    Base,
}

impl TileKind {
    /// Whether a tank may stand on the tile.
    pub fn passable(self) -> bool {
        self == TileKind::Empty
    }

    /// Stage-file character.
    pub fn symbol(self) -> char {
        match self {
            TileKind::Empty => '.',
            TileKind::SoftWall => 's',
            TileKind::HardWall => '#',
            TileKind::Pond => '~',
            TileKind::Base => 'B',
        }
    }

    pub fn from_symbol(c: char) -> Option<TileKind> {
        Some(match c {
            '.' => TileKind::Empty,
            's' => TileKind::SoftWall,
            '#' => TileKind::HardWall,
            '~' => TileKind::Pond,
            'B' => TileKind::Base,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Player,
    Enemy,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tank {
    pub id: EntityId,
    pub side: Side,
    pub pos: Cell,
    pub facing: Direction,
    pub alive: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bullet {
    pub owner: EntityId,
    pub owner_side: Side,
    pub pos: Cell,
    pub dir: Direction,
    pub speed: u32,
}

/// Discrete action set shared by players and enemies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Action {
    #[default]
    Noop,
    Up,
    Down,
    Left,
    Right,
    Fire,
}

impl Action {
    pub const COUNT: usize = 6;
    pub const ALL: [Action; 6] = [
        Action::Noop,
        Action::Up,
        Action::Down,
        Action::Left,
        Action::Right,
        Action::Fire,
    ];

    pub fn index(self) -> usize {
        Action::ALL.iter().position(|&a| a == self).expect("listed")
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    pub fn movement(self) -> Option<Direction> {
        match self {
            Action::Up => Some(Direction::Up),
            Action::Down => Some(Direction::Down),
            Action::Left => Some(Direction::Left),
            Action::Right => Some(Direction::Right),
            Action::Noop | Action::Fire => None,
        }
    }

    pub fn from_direction(dir: Direction) -> Action {
        match dir {
            Direction::Up => Action::Up,
            Direction::Down => Action::Down,
            Direction::Left => Action::Left,
            Direction::Right => Action::Right,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Status {
    Running,
    BaseDestroyed,
    AllPlayersDead,
    StepLimit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum GameEvent {
    EnemyDestroyed {
        enemy: EntityId,
        cell: Cell,
        by: EntityId,
    },
    PlayerDestroyed {
        player: EntityId,
        cell: Cell,
        by: EntityId,
    },
    BaseHit {
        by: EntityId,
    },
    WallDestroyed {
        cell: Cell,
    },
}

/// Result of one engine tick.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    /// Environment reward per player (every player has an entry).
    pub rewards: std::collections::BTreeMap<EntityId, f64>,
    pub events: Vec<GameEvent>,
    pub terminal: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn action_indices_round_trip() {
        for (i, a) in Action::ALL.iter().enumerate() {
            assert_eq!(a.index(), i);
            assert_eq!(Action::from_index(i), Some(*a));
        }
        assert_eq!(Action::from_index(6), None);
    }

    #[test]
    fn direction_between_neighbours() {
        let c = Cell::new(3, 3);
        for d in Direction::ALL {
            assert_eq!(Direction::between(c, c.step(d)), Some(d));
        }
        assert_eq!(Direction::between(c, Cell::new(5, 3)), None);
    }
}
