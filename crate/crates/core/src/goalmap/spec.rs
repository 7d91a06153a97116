use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::GoalError;
use crate::engine::Cell;

pub type GroupId = String;

pub const DEFAULT_BONUS: f64 = 2.0;

/// Inclusive cell rectangle. Serialized as `[col0, row0, col1, row1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[i32; 4]", into = "[i32; 4]")]
pub struct Rect {
    min: Cell,
    max: Cell,
}

impl Rect {
    pub fn new(min: Cell, max: Cell) -> Result<Self, GoalError> {
        if min.col > max.col || min.row > max.row {
            return Err(GoalError::MalformedRect(format!(
                "min ({}, {}) exceeds max ({}, {})",
                min.col, min.row, max.col, max.row
            )));
        }
        Ok(Rect { min, max })
    }

    pub fn min(&self) -> Cell {
        self.min
    }

    pub fn max(&self) -> Cell {
        self.max
    }

    pub fn contains(&self, c: Cell) -> bool {
        (self.min.col..=self.max.col).contains(&c.col) && (self.min.row..=self.max.row).contains(&c.row)
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (self.min.row..=self.max.row)
            .flat_map(move |r| (self.min.col..=self.max.col).map(move |c| Cell::new(c, r)))
    }

    pub fn within(&self, width: usize, height: usize) -> bool {
        self.min.col >= 0 && self.min.row >= 0 && (self.max.col as usize) < width && (self.max.row as usize) < height
    }
}

impl TryFrom<[i32; 4]> for Rect {
    type Error = GoalError;

    fn try_from(v: [i32; 4]) -> Result<Self, Self::Error> {
        Rect::new(Cell::new(v[0], v[1]), Cell::new(v[2], v[3]))
    }
}

impl From<Rect> for [i32; 4] {
    fn from(r: Rect) -> Self {
        [r.min.col, r.min.row, r.max.col, r.max.row]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TargetSelector {
    AllEnemiesInRegion { rect: Rect },
    ClosestEnemyToBase,
    FixedLocation { cell: Cell },
}

/// One line of a group's strategy. Serialized flat:
/// `{selector, rect?, cell?, priority, bonus?, working_region?}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecRepr", into = "SpecRepr")]
pub struct TargetSpec {
    pub selector: TargetSelector,
    /// Lower is more important.
    pub priority: i32,
    pub bonus_reward: f64,
    pub working_region: Option<Rect>,
}

impl TargetSpec {
    pub fn new(selector: TargetSelector, priority: i32) -> Self {
        TargetSpec {
            selector,
            priority,
            bonus_reward: DEFAULT_BONUS,
            working_region: None,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum SelectorKind {
    AllEnemiesInRegion,
    ClosestEnemyToBase,
    FixedLocation,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecRepr {
    selector: SelectorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rect: Option<Rect>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cell: Option<[i32; 2]>,
    #[serde(default)]
    priority: i32,
    #[serde(default = "default_bonus")]
    bonus: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    working_region: Option<Rect>,
}

fn default_bonus() -> f64 {
    DEFAULT_BONUS
}

impl TryFrom<SpecRepr> for TargetSpec {
    type Error = GoalError;

    fn try_from(r: SpecRepr) -> Result<Self, Self::Error> {
        let selector = match r.selector {
            SelectorKind::AllEnemiesInRegion => TargetSelector::AllEnemiesInRegion {
                rect: r
                    .rect
                    .ok_or_else(|| GoalError::InvalidSpec("all_enemies_in_region needs `rect`".into()))?,
            },
            SelectorKind::ClosestEnemyToBase => TargetSelector::ClosestEnemyToBase,
            SelectorKind::FixedLocation => {
                let [c, row] = r
                    .cell
                    .ok_or_else(|| GoalError::InvalidSpec("fixed_location needs `cell`".into()))?;
                TargetSelector::FixedLocation { cell: Cell::new(c, row) }
            }
        };
        if !r.bonus.is_finite() || r.bonus < 0.0 {
            return Err(GoalError::InvalidSpec(format!("bonus must be finite and >= 0, got {}", r.bonus)));
        }
        Ok(TargetSpec {
            selector,
            priority: r.priority,
            bonus_reward: r.bonus,
            working_region: r.working_region,
        })
    }
}

impl From<TargetSpec> for SpecRepr {
    fn from(s: TargetSpec) -> Self {
        let (selector, rect, cell) = match s.selector {
            TargetSelector::AllEnemiesInRegion { rect } => (SelectorKind::AllEnemiesInRegion, Some(rect), None),
            TargetSelector::ClosestEnemyToBase => (SelectorKind::ClosestEnemyToBase, None, None),
            TargetSelector::FixedLocation { cell } => (SelectorKind::FixedLocation, None, Some([cell.col, cell.row])),
        };
        SpecRepr {
            selector,
            rect,
            cell,
            priority: s.priority,
            bonus: s.bonus_reward,
            working_region: s.working_region,
        }
    }
}

/// Target specs per policy group.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GoalMap {
    entries: BTreeMap<GroupId, Vec<TargetSpec>>,
}

impl GoalMap {
    pub fn from_entries(entries: impl IntoIterator<Item = (GroupId, Vec<TargetSpec>)>) -> Self {
        GoalMap {
            entries: entries.into_iter().collect(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, GoalError> {
        toml::from_str(text).map_err(|e| GoalError::Parse(e.to_string()))
    }

    pub fn group(&self, id: &str) -> Option<&[TargetSpec]> {
        self.entries.get(id).map(Vec::as_slice)
    }

    pub fn group_mut(&mut self, id: &str) -> Option<&mut Vec<TargetSpec>> {
        self.entries.get_mut(id)
    }

    pub fn groups(&self) -> impl Iterator<Item = (&GroupId, &Vec<TargetSpec>)> {
        self.entries.iter()
    }

    pub fn insert(&mut self, id: impl Into<GroupId>, specs: Vec<TargetSpec>) {
        self.entries.insert(id.into(), specs);
    }

    /// Makes sure `id` has an entry, possibly empty.
    pub fn ensure_group(&mut self, id: &str) {
        self.entries.entry(id.to_string()).or_default();
    }

    /// Checks one group's specs against a `width × height` grid.
    pub fn validate_specs(specs: &[TargetSpec], width: usize, height: usize) -> Result<(), GoalError> {
        let mut seen = BTreeSet::new();
        for s in specs {
            if !seen.insert(s.priority) {
                return Err(GoalError::InvalidSpec(format!("duplicate priority {}", s.priority)));
            }
            if !s.bonus_reward.is_finite() || s.bonus_reward < 0.0 {
                return Err(GoalError::InvalidSpec("bonus must be finite and >= 0".into()));
            }
            let rects = [
                match &s.selector {
                    TargetSelector::AllEnemiesInRegion { rect } => Some(*rect),
                    _ => None,
                },
                s.working_region,
            ];
            for r in rects.into_iter().flatten() {
                if !r.within(width, height) {
                    return Err(GoalError::MalformedRect(format!("{:?} leaves the {width}x{height} grid", <[i32; 4]>::from(r))));
                }
            }
            if let TargetSelector::FixedLocation { cell } = s.selector {
                let inside = cell.col >= 0 && cell.row >= 0 && (cell.col as usize) < width && (cell.row as usize) < height;
                if !inside {
                    return Err(GoalError::InvalidSpec(format!("fixed cell ({}, {}) is off the grid", cell.col, cell.row)));
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<(), GoalError> {
        self.entries
            .values()
            .try_for_each(|specs| Self::validate_specs(specs, width, height))
    }
}
