use super::types::{Cell, TileKind};
use super::EngineError;

/// The default 13×13 battlefield. The base sits at the bottom centre in a
/// lane that enemies can only enter from the two bottom corners.
pub const DEFAULT_STAGE: &str = "\
E.....E.....E
.............
.s.s.s.s.s.s.
.s.s.s.s.s.s.
.s.s.s#s.s.s.
.....s.s.....
#.ss.....ss.#
.....s.s.....
.s.s.sss.s.s.
.s.s.s~s.s.s.
.s.s.....s.s.
.###########.
...1ssBss2...
";

/// A 9×9 variant of the default layout used for quick training runs.
pub const SMALL_STAGE: &str = "\
E...E...E
.........
.s.s.s.s.
.........
.~.#.#.~.
.........
.s.s.s.s.
.#######.
.1ssBss2.
";

/// Parsed stage layout before any entities are placed.
#[derive(Clone, Debug, PartialEq)]
pub struct StageLayout {
    pub width: usize,
    pub height: usize,
    pub tiles: Vec<TileKind>,
    pub base: Cell,
    /// Player spawn cells indexed by slot (`'1'` → 0, `'2'` → 1).
    pub player_spawns: Vec<(usize, Cell)>,
    pub enemy_spawns: Vec<Cell>,
}

/// Parses the ASCII stage format: one character per cell, rows top to
/// bottom. Blank leading/trailing lines and trailing whitespace are ignored.
pub fn parse_stage(text: &str) -> Result<StageLayout, EngineError> {
    let malformed = |msg: String| EngineError::MalformedStage(msg);
    let lines: Vec<&str> = text.lines().map(str::trim_end).collect();
    let first = lines.iter().position(|l| !l.is_empty());
    let last = lines.iter().rposition(|l| !l.is_empty());
    let rows = match (first, last) {
        (Some(a), Some(b)) => &lines[a..=b],
        _ => return Err(malformed("empty stage".into())),
    };
    let width = rows[0].chars().count();
    let height = rows.len();
    let mut tiles = Vec::with_capacity(width * height);
    let mut base = None;
    let mut player_spawns: Vec<(usize, Cell)> = Vec::new();
    let mut enemy_spawns = Vec::new();
    for (r, line) in rows.iter().enumerate() {
        if line.chars().count() != width {
            return Err(malformed(format!(
                "row {r} has {} cells, expected {width}",
                line.chars().count()
            )));
        }
        for (c, ch) in line.chars().enumerate() {
            let cell = Cell::new(c as i32, r as i32);
            let tile = match ch {
                '1' | '2' => {
                    let slot = if ch == '1' { 0 } else { 1 };
                    if player_spawns.iter().any(|(s, _)| *s == slot) {
                        return Err(malformed(format!("duplicate player marker '{ch}'")));
                    }
                    player_spawns.push((slot, cell));
                    TileKind::Empty
                }
                'E' => {
                    enemy_spawns.push(cell);
                    TileKind::Empty
                }
                'B' => {
                    if base.is_some() {
                        return Err(malformed("more than one base marker".into()));
                    }
                    base = Some(cell);
                    TileKind::Base
                }
                other => TileKind::from_symbol(other).ok_or_else(|| {
                    malformed(format!("unknown character {other:?} at row {r}, column {c}"))
                })?,
            };
            tiles.push(tile);
        }
    }
    let base = base.ok_or_else(|| malformed("missing base marker 'B'".into()))?;
    if player_spawns.is_empty() {
        return Err(malformed("missing player spawn marker '1' or '2'".into()));
    }
    if enemy_spawns.is_empty() {
        return Err(malformed("missing enemy spawn marker 'E'".into()));
    }
    player_spawns.sort();
    Ok(StageLayout {
        width,
        height,
        tiles,
        base,
        player_spawns,
        enemy_spawns,
    })
}
