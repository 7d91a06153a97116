//! Goal maps: per-group target specifications written by a human, resolved
//! against the live game into target metadata, rasterised into goal masks
//! and turned into bonus rewards.

mod spec;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Cell, EntityId, GameEvent, GameState};
use crate::observation::{area_resample, GrayImage, ObsConfig};

pub use spec::{GoalMap, GroupId, Rect, TargetSelector, TargetSpec, DEFAULT_BONUS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GoalError {
    #[error("unknown policy group {0:?}")]
    UnknownGroup(String),
    #[error("malformed rectangle: {0}")]
    MalformedRect(String),
    #[error("invalid target spec: {0}")]
    InvalidSpec(String),
    #[error("cannot parse goal map: {0}")]
    Parse(String),
}

/// One concrete target produced by a spec at resolution time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedTarget {
    pub cell: Cell,
    /// The enemy occupying the target, if the selector picks tanks.
    pub entity: Option<EntityId>,
    pub priority: i32,
    pub bonus_reward: f64,
    pub working_region: Option<Rect>,
    /// Index of the originating spec in the group's list.
    pub spec_index: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TargetMeta {
    /// Sorted by priority (stable within a spec).
    pub resolved: Vec<ResolvedTarget>,
    pub resolved_at_tick: u64,
}

/// Evaluates every spec of `group` against `state`. Targets outside a
/// spec's working region are dropped.
pub fn resolve_targets(goal_map: &GoalMap, state: &GameState, group: &str) -> Result<TargetMeta, GoalError> {
    let specs = goal_map
        .group(group)
        .ok_or_else(|| GoalError::UnknownGroup(group.to_string()))?;
    let mut resolved = Vec::new();
    for (spec_index, spec) in specs.iter().enumerate() {
        let hits: Vec<(Cell, Option<EntityId>)> = match &spec.selector {
            TargetSelector::AllEnemiesInRegion { rect } => {
                let mut es: Vec<_> = state.enemies().filter(|e| rect.contains(e.pos)).collect();
                es.sort_by_key(|e| e.id);
                es.into_iter().map(|e| (e.pos, Some(e.id))).collect()
            }
            TargetSelector::ClosestEnemyToBase => closest_enemy_to_base(state)
                .map(|(id, cell)| (cell, Some(id)))
                .into_iter()
                .collect(),
            TargetSelector::FixedLocation { cell } => vec![(*cell, None)],
        };
        resolved.extend(
            hits.into_iter()
                .filter(|(cell, _)| spec.working_region.is_none_or(|r| r.contains(*cell)))
                .map(|(cell, entity)| ResolvedTarget {
                    cell,
                    entity,
                    priority: spec.priority,
                    bonus_reward: spec.bonus_reward,
                    working_region: spec.working_region,
                    spec_index,
                }),
        );
    }
    resolved.sort_by_key(|t| t.priority);
    Ok(TargetMeta {
        resolved,
        resolved_at_tick: state.tick,
    })
}

/// Alive enemy with the smallest Manhattan distance to the base; ties go to
/// the lowest entity id.
pub fn closest_enemy_to_base(state: &GameState) -> Option<(EntityId, Cell)> {
    state
        .enemies()
        .min_by_key(|e| (e.pos.manhattan(state.base), e.id))
        .map(|e| (e.id, e.pos))
}

/// Goal mask at native resolution and after the observation rescale.
#[derive(Clone, Debug, PartialEq)]
pub struct GoalMask {
    pub native: GrayImage,
    pub net: GrayImage,
}

impl GoalMask {
    /// Network input: `net` scaled to `[0, 1]`.
    pub fn to_input(&self) -> Vec<f32> {
        self.net.pixels.iter().map(|&p| p as f32 / 255.0).collect()
    }
}

/// Black native-size image with a white `cell_px` square on every resolved
/// target, downscaled exactly like observation frames.
pub fn render_mask(meta: &TargetMeta, cfg: &ObsConfig) -> GoalMask {
    let (w, h) = cfg.native_size;
    let px = cfg.cell_px;
    let mut native = GrayImage::new(w, h);
    for t in &meta.resolved {
        if t.cell.col < 0 || t.cell.row < 0 {
            continue;
        }
        let (x0, y0) = (t.cell.col as usize * px, t.cell.row as usize * px);
        for y in y0..(y0 + px).min(h) {
            for x in x0..(x0 + px).min(w) {
                native.pixels[y * w + x] = 255;
            }
        }
    }
    let src: Vec<f32> = native.pixels.iter().map(|&p| p as f32).collect();
    let (nw, nh) = cfg.net_size;
    let small = area_resample(&src, w, h, nw, nh);
    let net = GrayImage {
        width: nw,
        height: nh,
        pixels: crate::observation::to_u8(&small),
    };
    GoalMask { native, net }
}

/// Bonus per player for kills of designated targets. A kill counts when the
/// destroyed enemy was resolved for the killer's group and died inside the
/// target's working region (when one is set). Each kill matches at most one
/// target.
pub fn goal_bonus(
    events: &[GameEvent],
    metas: &BTreeMap<GroupId, TargetMeta>,
    membership: &BTreeMap<EntityId, GroupId>,
) -> BTreeMap<EntityId, f64> {
    let mut bonus: BTreeMap<EntityId, f64> = membership.keys().map(|id| (*id, 0.0)).collect();
    for event in events {
        let GameEvent::EnemyDestroyed { enemy, cell, by } = event else {
            continue;
        };
        let Some(meta) = membership.get(by).and_then(|g| metas.get(g)) else {
            continue;
        };
        let hit = meta.resolved.iter().find(|t| match t.entity {
            Some(id) => id == *enemy,
            None => t.cell == *cell,
        });
        if let Some(t) = hit {
            if t.working_region.is_none_or(|r| r.contains(*cell)) {
                *bonus.entry(*by).or_insert(0.0) += t.bonus_reward;
            }
        }
    }
    bonus
}
