//! Multi-target system: routes each policy group's observation and goal
//! mask to its network (or scripted/human controller), assembles the joint
//! action and applies live strategy edits between decision steps.

mod config;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Action, EntityId, GameState, ScriptedController};
use crate::goalmap::{render_mask, resolve_targets, GoalError, GoalMap, GoalMask, GroupId, Rect, TargetMeta, TargetSpec};
use crate::nn::{forward, Architecture, CheckpointSet, ForwardCache, NetInput, NetworkParams, NnError, INPUT_SIZE};
use crate::observation::{ObsConfig, ObsTensor};

pub use config::{ControlMode, GroupDecl, StrategyConfig};

#[derive(Debug, Error)]
pub enum MtsError {
    #[error("strategy config: {0}")]
    Config(String),
    #[error("unknown policy group {0:?}")]
    UnknownGroup(String),
    #[error("malformed rectangle: {0}")]
    MalformedRect(String),
    #[error("group partition violated: {0}")]
    Partition(String),
    #[error("missing observation for player {0}")]
    MissingObservation(EntityId),
    #[error("decide called on a finished episode")]
    NotRunning,
    #[error(transparent)]
    Goal(GoalError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

impl From<GoalError> for MtsError {
    fn from(e: GoalError) -> Self {
        match e {
            GoalError::UnknownGroup(g) => MtsError::UnknownGroup(g),
            GoalError::MalformedRect(m) => MtsError::MalformedRect(m),
            other => MtsError::Goal(other),
        }
    }
}

/// Live strategy change, applied at the next decision step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EditCommand {
    SetTargets { group: GroupId, specs: Vec<TargetSpec> },
    /// `rect: None` clears the region.
    SetWorkingRegion { group: GroupId, spec_index: usize, rect: Option<Rect> },
    SetControlMode { group: GroupId, mode: ControlMode },
}

impl EditCommand {
    pub fn group(&self) -> &str {
        match self {
            EditCommand::SetTargets { group, .. }
            | EditCommand::SetWorkingRegion { group, .. }
            | EditCommand::SetControlMode { group, .. } => group,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditAck {
    /// Position of the edit in the runtime's edit sequence.
    pub seq: u64,
}

/// Thread-safe producer side of the edit queue.
#[derive(Clone, Debug)]
pub struct EditHandle {
    queue: Arc<Mutex<VecDeque<(u64, EditCommand)>>>,
    next_seq: Arc<AtomicU64>,
    groups: Arc<BTreeSet<GroupId>>,
    grid: (usize, usize),
}

impl EditHandle {
    /// Validates and enqueues an edit.
    pub fn apply_edit(&self, cmd: EditCommand) -> Result<EditAck, MtsError> {
        if !self.groups.contains(cmd.group()) {
            return Err(MtsError::UnknownGroup(cmd.group().to_string()));
        }
        let (w, h) = self.grid;
        match &cmd {
            EditCommand::SetTargets { specs, .. } => GoalMap::validate_specs(specs, w, h)?,
            EditCommand::SetWorkingRegion { rect: Some(r), .. } if !r.within(w, h) => {
                return Err(MtsError::MalformedRect(format!(
                    "{:?} leaves the {w}x{h} grid",
                    <[i32; 4]>::from(*r)
                )))
            }
            _ => {}
        }
        // sequence number and queue position are taken under one lock so
        // the queue stays ordered by seq
        let mut q = self.queue.lock();
        let seq = self.next_seq.fetch_add(1, Ordering::SeqCst);
        q.push_back((seq, cmd));
        Ok(EditAck { seq })
    }

    pub fn pending(&self) -> usize {
        self.queue.lock().len()
    }
}

/// Latest human input per player; each decision consumes it.
#[derive(Clone, Debug, Default)]
pub struct HumanHandle {
    inputs: Arc<Mutex<BTreeMap<EntityId, Action>>>,
}

impl HumanHandle {
    pub fn set(&self, agent: EntityId, action: Action) {
        self.inputs.lock().insert(agent, action);
    }

    pub fn take(&self, agent: EntityId) -> Option<Action> {
        self.inputs.lock().remove(&agent)
    }
}

/// Everything a learned agent's choice produced, kept for training.
#[derive(Clone, Debug)]
pub struct LearnedStep {
    pub group: GroupId,
    pub network: String,
    pub action: Action,
    pub probs: Vec<f32>,
    pub value: f32,
    pub cache: Arc<ForwardCache<f32>>,
}

#[derive(Clone, Debug, Default)]
pub struct Decision {
    pub actions: BTreeMap<EntityId, Action>,
    pub learned: BTreeMap<EntityId, LearnedStep>,
    pub metas: BTreeMap<GroupId, TargetMeta>,
    pub masks: BTreeMap<GroupId, GoalMask>,
    /// Sequence number of the last edit visible to this decision, if any.
    pub edits_applied_through: Option<u64>,
}

/// Where networks come from when building a runtime.
#[derive(Clone, Copy, Debug)]
pub enum NetworkSource<'a> {
    /// Fresh seeded initialisation for every network id.
    Fresh { seed: u64 },
    /// Every network id must be present in the checkpoint set.
    Registry(&'a CheckpointSet),
}

#[derive(Clone, Debug)]
struct GroupSlot {
    id: GroupId,
    members: Vec<EntityId>,
    network: String,
    mode: ControlMode,
}

pub struct MtsRuntime {
    groups: Vec<GroupSlot>,
    goal_map: GoalMap,
    arch: Architecture,
    obs: ObsConfig,
    networks: BTreeMap<String, NetworkParams<f32>>,
    scripted: BTreeMap<GroupId, ScriptedController>,
    edits: EditHandle,
    human: HumanHandle,
    last_edit: Option<u64>,
    sampling: bool,
    seed: u64,
    rng: ChaCha8Rng,
}

/// Argmax with ties broken towards the lowest index.
pub fn greedy_action(probs: &[f32]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw from a categorical distribution.
pub fn sample_action(probs: &[f32], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p as f64;
        if u < acc {
            return i;
        }
    }
    // rounding left a sliver above the last cumulative value
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

fn scripted_seed(seed: u64, group: &str) -> u64 {
    group
        .bytes()
        .fold(seed ^ 0x9e37_79b9_7f4a_7c15, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

impl MtsRuntime {
    /// Builds a runtime for a `grid` of `(width, height)` cells.
    pub fn build(
        config: &StrategyConfig,
        obs: &ObsConfig,
        grid: (usize, usize),
        source: NetworkSource<'_>,
        seed: u64,
    ) -> Result<Self, MtsError> {
        let mut config = config.clone();
        config.normalize();
        config.check()?;
        config.goal_map.validate(grid.0, grid.1)?;
        if obs.net_size != (INPUT_SIZE, INPUT_SIZE) {
            return Err(MtsError::Config(format!(
                "network input is {INPUT_SIZE}x{INPUT_SIZE}, observation config produces {:?}",
                obs.net_size
            )));
        }
        let arch = Architecture::new(config.layout, obs.frame_stack)?;
        let mut networks = BTreeMap::new();
        for (k, id) in config.network_ids().into_iter().enumerate() {
            let params = match source {
                NetworkSource::Fresh { seed } => NetworkParams::init(arch, seed.wrapping_add(k as u64)),
                NetworkSource::Registry(set) => set.network(&id, &arch).map_err(|e| match e {
                    NnError::MissingNetwork(id) => MtsError::Config(format!("unknown network id {id:?}")),
                    other => MtsError::Nn(other),
                })?.clone(),
            };
            networks.insert(id, params);
        }
        let groups: Vec<GroupSlot> = config
            .groups
            .iter()
            .map(|g| GroupSlot {
                id: g.id.clone(),
                members: g.members.clone(),
                network: g.network.clone(),
                mode: g.mode,
            })
            .collect();
        let scripted = groups
            .iter()
            .filter_map(|g| match g.mode {
                ControlMode::Scripted(p) => Some((g.id.clone(), ScriptedController::new(p, scripted_seed(seed, &g.id)))),
                _ => None,
            })
            .collect();
        let edits = EditHandle {
            queue: Arc::default(),
            next_seq: Arc::new(AtomicU64::new(0)),
            groups: Arc::new(groups.iter().map(|g| g.id.clone()).collect()),
            grid,
        };
        Ok(MtsRuntime {
            groups,
            goal_map: config.goal_map,
            arch,
            obs: obs.clone(),
            networks,
            scripted,
            edits,
            human: HumanHandle::default(),
            last_edit: None,
            sampling: false,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    pub fn obs_config(&self) -> &ObsConfig {
        &self.obs
    }

    pub fn goal_map(&self) -> &GoalMap {
        &self.goal_map
    }

    pub fn group_ids(&self) -> Vec<GroupId> {
        self.groups.iter().map(|g| g.id.clone()).collect()
    }

    pub fn members(&self, group: &str) -> Option<&[EntityId]> {
        self.groups.iter().find(|g| g.id == group).map(|g| g.members.as_slice())
    }

    pub fn mode(&self, group: &str) -> Option<ControlMode> {
        self.groups.iter().find(|g| g.id == group).map(|g| g.mode)
    }

    pub fn network_of(&self, group: &str) -> Option<&str> {
        self.groups.iter().find(|g| g.id == group).map(|g| g.network.as_str())
    }

    /// Player → group.
    pub fn membership(&self) -> BTreeMap<EntityId, GroupId> {
        self.groups
            .iter()
            .flat_map(|g| g.members.iter().map(move |m| (*m, g.id.clone())))
            .collect()
    }

    pub fn network(&self, id: &str) -> Option<&NetworkParams<f32>> {
        self.networks.get(id)
    }

    pub fn network_mut(&mut self, id: &str) -> Option<&mut NetworkParams<f32>> {
        self.networks.get_mut(id)
    }

    pub fn networks(&self) -> &BTreeMap<String, NetworkParams<f32>> {
        &self.networks
    }

    /// Replaces a network's parameters (architecture must match).
    pub fn set_network(&mut self, id: &str, params: NetworkParams<f32>) -> Result<(), MtsError> {
        let slot = self
            .networks
            .get_mut(id)
            .ok_or_else(|| MtsError::Config(format!("unknown network id {id:?}")))?;
        if *params.arch() != self.arch {
            return Err(NnError::ArchitectureMismatch(format!("{:?} vs {:?}", params.arch(), self.arch)).into());
        }
        *slot = params;
        Ok(())
    }

    /// Sampling (training) or argmax (evaluation, serving).
    pub fn set_sampling(&mut self, sampling: bool) {
        self.sampling = sampling;
    }

    pub fn reseed(&mut self, seed: u64) {
        self.seed = seed;
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        for (gid, ctl) in self.scripted.iter_mut() {
            *ctl = ScriptedController::new(ctl.policy, scripted_seed(seed, gid));
        }
    }

    pub fn edit_handle(&self) -> EditHandle {
        self.edits.clone()
    }

    pub fn human_handle(&self) -> HumanHandle {
        self.human.clone()
    }

    pub fn apply_edit(&self, cmd: EditCommand) -> Result<EditAck, MtsError> {
        self.edits.apply_edit(cmd)
    }

    /// Applies every queued edit in order. Called at the start of `decide`.
    pub fn drain_edits(&mut self) {
        let batch: Vec<(u64, EditCommand)> = self.edits.queue.lock().drain(..).collect();
        for (seq, cmd) in batch {
            self.apply_now(cmd);
            self.last_edit = Some(seq);
        }
    }

    fn apply_now(&mut self, cmd: EditCommand) {
        match cmd {
            EditCommand::SetTargets { group, specs } => self.goal_map.insert(group, specs),
            EditCommand::SetWorkingRegion { group, spec_index, rect } => {
                match self.goal_map.group_mut(&group).and_then(|s| s.get_mut(spec_index)) {
                    Some(spec) => spec.working_region = rect,
                    None => log::warn!("ignoring working-region edit for missing spec {group}[{spec_index}]"),
                }
            }
            EditCommand::SetControlMode { group, mode } => {
                if let Some(slot) = self.groups.iter_mut().find(|g| g.id == group) {
                    slot.mode = mode;
                }
                match mode {
                    ControlMode::Scripted(p) => {
                        self.scripted
                            .insert(group.clone(), ScriptedController::new(p, scripted_seed(self.seed, &group)));
                    }
                    _ => {
                        self.scripted.remove(&group);
                    }
                }
            }
        }
    }

    fn check_partition(&self, state: &GameState) -> Result<(), MtsError> {
        let membership = self.membership();
        for id in state.alive_player_ids() {
            if !membership.contains_key(&id) {
                return Err(MtsError::Partition(format!("player {id} is in no group")));
            }
        }
        Ok(())
    }

    fn mask_for(&self, state: &GameState, group: &str) -> Result<(TargetMeta, GoalMask), MtsError> {
        let meta = resolve_targets(&self.goal_map, state, group)?;
        let mask = render_mask(&meta, &self.obs);
        Ok((meta, mask))
    }

    fn run_network(
        &self,
        network: &str,
        obs: &ObsTensor,
        mask: &GoalMask,
    ) -> Result<(crate::nn::ForwardOutput<f32>, ForwardCache<f32>), MtsError> {
        let params = &self.networks[network];
        let mask_input = mask.to_input();
        let input = NetInput {
            state: obs.as_chw(),
            mask: Some(&mask_input),
        };
        Ok(forward(params, input)?)
    }

    /// Chooses one action for every alive player.
    pub fn decide(&mut self, state: &GameState, obs: &BTreeMap<EntityId, ObsTensor>) -> Result<Decision, MtsError> {
        if state.is_terminal() {
            return Err(MtsError::NotRunning);
        }
        self.drain_edits();
        self.check_partition(state)?;
        let alive: BTreeSet<EntityId> = state.alive_player_ids().into_iter().collect();
        let mut decision = Decision {
            edits_applied_through: self.last_edit,
            ..Decision::default()
        };
        for gi in 0..self.groups.len() {
            let group = self.groups[gi].clone();
            let (meta, mask) = self.mask_for(state, &group.id)?;
            for &agent in group.members.iter().filter(|m| alive.contains(m)) {
                let action = match group.mode {
                    ControlMode::Human => self.human.take(agent).unwrap_or(Action::Noop),
                    ControlMode::Scripted(_) => self
                        .scripted
                        .get_mut(&group.id)
                        .expect("scripted groups have a controller")
                        .act(state, agent),
                    ControlMode::Learned => {
                        let o = obs.get(&agent).ok_or(MtsError::MissingObservation(agent))?;
                        let (out, cache) = self.run_network(&group.network, o, &mask)?;
                        let index = if self.sampling {
                            sample_action(&out.probs, &mut self.rng)
                        } else {
                            greedy_action(&out.probs)
                        };
                        let action = Action::from_index(index).expect("network has one output per action");
                        decision.learned.insert(
                            agent,
                            LearnedStep {
                                group: group.id.clone(),
                                network: group.network.clone(),
                                action,
                                probs: out.probs,
                                value: out.value,
                                cache: Arc::new(cache),
                            },
                        );
                        action
                    }
                };
                decision.actions.insert(agent, action);
            }
            decision.metas.insert(group.id.clone(), meta);
            decision.masks.insert(group.id, mask);
        }
        Ok(decision)
    }

    /// State-value estimates of learned agents, without choosing actions or
    /// draining edits.
    pub fn values(&self, state: &GameState, obs: &BTreeMap<EntityId, ObsTensor>) -> Result<BTreeMap<EntityId, f32>, MtsError> {
        let alive: BTreeSet<EntityId> = state.alive_player_ids().into_iter().collect();
        let mut out = BTreeMap::new();
        for group in self.groups.iter().filter(|g| g.mode == ControlMode::Learned) {
            let (_, mask) = self.mask_for(state, &group.id)?;
            for &agent in group.members.iter().filter(|m| alive.contains(m)) {
                let o = obs.get(&agent).ok_or(MtsError::MissingObservation(agent))?;
                let (res, _) = self.run_network(&group.network, o, &mask)?;
                out.insert(agent, res.value);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{load_stage, EngineConfig, ScriptedPolicy, DEFAULT_STAGE};

    fn runtime(cfg: &StrategyConfig) -> MtsRuntime {
        MtsRuntime::build(cfg, &ObsConfig::default(), (13, 13), NetworkSource::Fresh { seed: 1 }, 1).unwrap()
    }

    #[test]
    fn greedy_prefers_lowest_index_on_ties() {
        assert_eq!(greedy_action(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(greedy_action(&[0.5, 0.5]), 0);
    }

    #[test]
    fn sampling_follows_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let probs = [0.0, 0.25, 0.0, 0.75];
        let mut counts = [0usize; 4];
        for _ in 0..4000 {
            counts[sample_action(&probs, &mut rng)] += 1;
        }
        assert_eq!(counts[0] + counts[2], 0);
        assert!((counts[3] as f64 / 4000.0 - 0.75).abs() < 0.03);
    }

    #[test]
    fn pair_builds_two_slots() {
        let rt = runtime(&StrategyConfig::goal_map_pair());
        assert_eq!(rt.group_ids().len(), 2);
        assert_eq!(rt.networks().len(), 2);
    }

    #[test]
    fn human_group_defaults_to_noop() {
        let mut cfg = StrategyConfig::scripted(ScriptedPolicy::BaseCamper);
        cfg.groups[0].mode = ControlMode::Human;
        let mut rt = runtime(&cfg);
        let state = load_stage(DEFAULT_STAGE, &EngineConfig::default(), 0).unwrap();
        let d = rt.decide(&state, &BTreeMap::new()).unwrap();
        assert!(d.actions.values().all(|a| *a == Action::Noop));
        rt.human_handle().set(EntityId(1), Action::Fire);
        let d = rt.decide(&state, &BTreeMap::new()).unwrap();
        assert_eq!(d.actions[&EntityId(1)], Action::Fire);
        let d = rt.decide(&state, &BTreeMap::new()).unwrap();
        assert_eq!(d.actions[&EntityId(1)], Action::Noop);
    }

    #[test]
    fn unknown_group_edit_rejected() {
        let rt = runtime(&StrategyConfig::goal_map_pair());
        let err = rt
            .apply_edit(EditCommand::SetControlMode {
                group: "blue".into(),
                mode: ControlMode::Human,
            })
            .unwrap_err();
        assert!(matches!(err, MtsError::UnknownGroup(_)));
    }

    #[test]
    fn unknown_registry_network_is_config_error() {
        let set = CheckpointSet::new(0);
        let res = MtsRuntime::build(
            &StrategyConfig::goal_map_pair(),
            &ObsConfig::default(),
            (13, 13),
            NetworkSource::Registry(&set),
            0,
        );
        assert!(matches!(res, Err(MtsError::Config(_))));
    }
}
