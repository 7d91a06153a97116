use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::MtsError;
use crate::engine::{EntityId, ScriptedPolicy};
use crate::goalmap::{GoalMap, GroupId, TargetSelector, TargetSpec};
use crate::nn::StreamLayout;

/// Where a group's actions come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    Learned,
    Scripted(ScriptedPolicy),
    Human,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupDecl {
    pub id: GroupId,
    pub members: Vec<EntityId>,
    pub network: String,
    #[serde(default = "learned")]
    pub mode: ControlMode,
}

fn learned() -> ControlMode {
    ControlMode::Learned
}

/// Policy groups, their networks and the goal map.
///
/// ```toml
/// layout = "dual_stream"
///
/// [[groups]]
/// id = "yellow"
/// members = [0]
/// network = "yellow"
///
/// [[groups]]
/// id = "green"
/// members = [1]
/// network = "green"
/// mode = { scripted = "base_camper" }
///
/// [[goal_map.yellow]]
/// selector = "closest_enemy_to_base"
/// priority = 0
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    #[serde(default = "dual")]
    pub layout: StreamLayout,
    pub groups: Vec<GroupDecl>,
    #[serde(default)]
    pub goal_map: GoalMap,
}

fn dual() -> StreamLayout {
    StreamLayout::DualStream
}

impl StrategyConfig {
    pub fn from_toml(text: &str) -> Result<Self, MtsError> {
        let mut cfg: StrategyConfig = toml::from_str(text).map_err(|e| MtsError::Config(e.to_string()))?;
        cfg.normalize();
        cfg.check()?;
        Ok(cfg)
    }

    /// Adds empty goal-map entries for groups that have none.
    pub fn normalize(&mut self) {
        for g in &self.groups {
            self.goal_map.ensure_group(&g.id);
        }
    }

    /// Structural checks that do not depend on the stage.
    pub fn check(&self) -> Result<(), MtsError> {
        if self.groups.is_empty() {
            return Err(MtsError::Config("at least one policy group is required".into()));
        }
        let mut ids = BTreeSet::new();
        let mut members = BTreeSet::new();
        for g in &self.groups {
            if !ids.insert(g.id.as_str()) {
                return Err(MtsError::Config(format!("duplicate group id {:?}", g.id)));
            }
            if g.members.is_empty() {
                return Err(MtsError::Config(format!("group {:?} has no members", g.id)));
            }
            for m in &g.members {
                if !members.insert(*m) {
                    return Err(MtsError::Config(format!("player {m} belongs to more than one group")));
                }
            }
        }
        for (gid, _) in self.goal_map.groups() {
            if !ids.contains(gid.as_str()) {
                return Err(MtsError::Config(format!("goal map refers to unknown group {gid:?}")));
            }
        }
        Ok(())
    }

    pub fn group(&self, id: &str) -> Option<&GroupDecl> {
        self.groups.iter().find(|g| g.id == id)
    }

    /// Network ids in first-use order, without duplicates.
    pub fn network_ids(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for g in &self.groups {
            if !out.contains(&g.network) {
                out.push(g.network.clone());
            }
        }
        out
    }

    fn two_groups(layout: StreamLayout, specs: Vec<TargetSpec>) -> Self {
        let group = |id: &str, member: u32| GroupDecl {
            id: id.to_string(),
            members: vec![EntityId(member)],
            network: id.to_string(),
            mode: ControlMode::Learned,
        };
        let mut cfg = StrategyConfig {
            layout,
            groups: vec![group("yellow", 0), group("green", 1)],
            goal_map: GoalMap::from_entries([
                ("yellow".to_string(), specs.clone()),
                ("green".to_string(), specs),
            ]),
        };
        cfg.normalize();
        cfg
    }

    /// Two learned groups (one per player) with dual-stream networks, both
    /// targeting the enemy closest to the base.
    pub fn goal_map_pair() -> Self {
        Self::two_groups(
            StreamLayout::DualStream,
            vec![TargetSpec::new(TargetSelector::ClosestEnemyToBase, 0)],
        )
    }

    /// Two learned groups with single-stream networks and no targets.
    pub fn baseline_pair() -> Self {
        Self::two_groups(StreamLayout::SingleStream, Vec::new())
    }

    /// Both players in one group driven by a scripted policy.
    pub fn scripted(policy: ScriptedPolicy) -> Self {
        let mut cfg = StrategyConfig {
            layout: StreamLayout::SingleStream,
            groups: vec![GroupDecl {
                id: "team".into(),
                members: vec![EntityId(0), EntityId(1)],
                network: "team".into(),
                mode: ControlMode::Scripted(policy),
            }],
            goal_map: GoalMap::default(),
        };
        cfg.normalize();
        cfg
    }
}
