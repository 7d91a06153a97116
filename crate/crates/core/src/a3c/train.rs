use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};

use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::loss::{loss_and_factored_grads, LossTerms};
use super::returns::{compute_returns, RolloutBuffer, RolloutStep};
use super::store::SharedParamStore;
use super::{A3cError, Hyperparams};
use crate::engine::EntityId;
use crate::goalmap::goal_bonus;
use crate::mts::{ControlMode, NetworkSource};
use crate::nn::{CheckpointSet, FactoredGrads};
use crate::observation::{Environment, ObsTensor};
use crate::scenario::{RunFile, Scenario};

/// How `total_steps` and every logged `step` are counted.
pub const STEP_UNIT: &str = "global decision steps summed over workers; one joint decision of all agents in one worker environment counts once";

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub scenario: Scenario,
    pub hyper: Hyperparams,
    pub out_dir: PathBuf,
}

impl TrainConfig {
    /// Reads a run file; `out_dir` defaults to `runs/` next to it.
    pub fn from_run_file(path: &Path) -> Result<Self, A3cError> {
        let base = path.parent().unwrap_or(Path::new("."));
        let run = RunFile::load(path)?;
        let scenario = run.scenario(base)?;
        let hyper = match run.hyper.clone() {
            Some(t) => Hyperparams::from_table(t)?,
            None => Hyperparams::default(),
        };
        let out_dir = base.join(run.out_dir.clone().unwrap_or_else(|| PathBuf::from("runs")));
        Ok(TrainConfig {
            scenario,
            hyper,
            out_dir,
        })
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters after the last update, stamped with the final step.
    pub final_set: CheckpointSet,
    pub final_path: PathBuf,
    /// `(milestone step, file)` in milestone order.
    pub checkpoints: Vec<(u64, PathBuf)>,
    pub log_path: PathBuf,
    pub episodes: usize,
    pub updates: u64,
}

/// `count` evenly spaced milestones ending at `total`, rounded to the
/// nearest step. Values repeat when `total < count`.
pub fn milestones(total: u64, count: usize) -> Vec<u64> {
    let c = count as u128;
    (1..=c).map(|k| ((k * total as u128 + c / 2) / c) as u64).collect()
}

struct LogSink {
    out: BufWriter<File>,
}

impl LogSink {
    fn write(&mut self, value: serde_json::Value) -> Result<(), A3cError> {
        serde_json::to_writer(&mut self.out, &value).map_err(std::io::Error::from)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }
}

struct MilestoneState {
    next: usize,
    written: Vec<(u64, PathBuf)>,
}

/// State shared by all workers of one run.
pub struct WorkerContext<'a> {
    pub scenario: &'a Scenario,
    pub hyper: &'a Hyperparams,
    pub store: &'a SharedParamStore,
    log: Mutex<LogSink>,
    milestones: Vec<u64>,
    progress: Mutex<MilestoneState>,
    out_dir: PathBuf,
    abort: AtomicBool,
    episodes: Mutex<usize>,
    updates: Mutex<u64>,
}

impl WorkerContext<'_> {
    fn log(&self, value: serde_json::Value) -> Result<(), A3cError> {
        self.log.lock().write(value)
    }

    /// Writes every milestone checkpoint the global counter has passed.
    fn checkpoint_due(&self) -> Result<(), A3cError> {
        let mut progress = self.progress.lock();
        let steps = self.store.steps();
        while progress.next < self.milestones.len() && self.milestones[progress.next] <= steps {
            let k = progress.next;
            let step = self.milestones[k];
            let set = self.store.quiesced_snapshot(step);
            let path = self.out_dir.join(format!("milestone_{:02}_{step}.ckpt", k + 1));
            set.save(&path)?;
            self.log(json!({"kind": "checkpoint", "milestone": k + 1, "step": step, "path": path}))?;
            progress.written.push((step, path));
            progress.next += 1;
        }
        Ok(())
    }
}

#[derive(Default)]
struct EpisodeAcc {
    env_reward: f64,
    train_reward: f64,
    steps: u64,
}

fn observations(env: &Environment, agents: &BTreeSet<EntityId>) -> BTreeMap<EntityId, ObsTensor> {
    env.state()
        .alive_player_ids()
        .into_iter()
        .filter(|id| agents.contains(id))
        .filter_map(|id| env.observation(id).map(|o| (id, o)))
        .collect()
}

/// Runs one worker until the global step budget is spent or another worker
/// fails. Environment and sampling seeds derive from `seed + worker_id`.
pub fn worker_loop(worker_id: usize, ctx: &WorkerContext<'_>) -> Result<(), A3cError> {
    let hp = ctx.hyper;
    let seed = hp.seed.wrapping_add(worker_id as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rt = ctx.scenario.runtime(NetworkSource::Fresh { seed: hp.seed }, seed)?;
    rt.set_sampling(true);
    let membership = rt.membership();
    let mut learned_agents = BTreeSet::new();
    let mut networks: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for g in rt.group_ids() {
        if rt.mode(&g) == Some(ControlMode::Learned) {
            learned_agents.extend(rt.members(&g).unwrap_or_default().iter().copied());
            networks.entry(rt.network_of(&g).unwrap_or_default().to_string()).or_default().push(g);
        }
    }
    let mut grads: BTreeMap<String, FactoredGrads<f32>> = networks
        .keys()
        .map(|id| (id.clone(), FactoredGrads::zeros(*rt.network(id).expect("runtime builds every network").arch())))
        .collect();
    let mut env = ctx.scenario.new_env(rng.gen())?;
    let mut episode = EpisodeAcc::default();
    let mut last_return: Option<f64> = None;

    loop {
        if ctx.abort.load(Ordering::SeqCst) {
            return Ok(());
        }
        for id in networks.keys() {
            ctx.store.snapshot_into(id, rt.network_mut(id).expect("runtime builds every network"))?;
        }
        let mut buffers: BTreeMap<EntityId, RolloutBuffer<f32>> = BTreeMap::new();
        let mut exhausted = false;
        for _ in 0..hp.t_max {
            if ctx.store.claim_step().is_none() {
                exhausted = true;
                break;
            }
            let obs = observations(&env, &learned_agents);
            let decision = rt.decide(env.state(), &obs)?;
            let outcome = env.step(&decision.actions)?;
            let bonus = goal_bonus(&outcome.events, &decision.metas, &membership);
            for (agent, ls) in decision.learned {
                let reward = outcome.rewards.get(&agent).copied().unwrap_or(0.0) + bonus.get(&agent).copied().unwrap_or(0.0);
                episode.train_reward += reward;
                buffers.entry(agent).or_default().steps.push(RolloutStep {
                    cache: ls.cache,
                    action: ls.action.index(),
                    reward,
                    value: ls.value as f64,
                });
            }
            episode.env_reward += outcome.rewards.values().sum::<f64>();
            episode.steps += 1;
            if outcome.terminal {
                break;
            }
        }

        let terminal = env.state().is_terminal();
        let alive: BTreeSet<EntityId> = env.state().alive_player_ids().into_iter().collect();
        let bootstrap = if terminal || buffers.is_empty() {
            BTreeMap::new()
        } else {
            rt.values(env.state(), &observations(&env, &learned_agents))?
        };
        for (agent, buf) in buffers.iter_mut() {
            match bootstrap.get(agent) {
                Some(v) if !terminal && alive.contains(agent) => buf.bootstrap = *v as f64,
                _ => buf.terminal = true,
            }
        }

        for (net, groups) in &networks {
            let g = grads.get_mut(net).expect("gradient buffer per network");
            let params = rt.network(net).expect("runtime holds every network");
            let mut terms = LossTerms::default();
            let mut used = false;
            for (agent, buf) in &buffers {
                if !membership.get(agent).is_some_and(|grp| groups.contains(grp)) || buf.is_empty() {
                    continue;
                }
                if !used {
                    g.set_zero();
                    used = true;
                }
                let (returns, adv) = compute_returns(buf, hp.gamma)?;
                terms.add(&loss_and_factored_grads(params, buf, &returns, &adv, hp, g)?);
            }
            if !used {
                continue;
            }
            let norm = g.clip_global_norm(hp.clip_norm);
            let step = ctx.store.steps();
            if !terms.is_finite() || !norm.is_finite() {
                ctx.abort.store(true, Ordering::SeqCst);
                ctx.log(json!({"kind": "error", "worker": worker_id, "step": step, "network": net, "message": "non-finite loss"}))?;
                return Err(A3cError::NonFiniteLoss {
                    network: net.clone(),
                    step,
                });
            }
            ctx.store.apply_factored(net, g, hp)?;
            *ctx.updates.lock() += 1;
            ctx.log(json!({
                "kind": "update",
                "step": step,
                "worker": worker_id,
                "network": net,
                "group": groups.join(","),
                "len": terms.steps,
                "policy_loss": terms.policy,
                "value_loss": terms.value,
                "entropy": terms.entropy / terms.steps as f64,
                "total_loss": terms.total,
                "grad_norm": norm,
                "recent_return": last_return,
            }))?;
        }

        if terminal {
            ctx.log(json!({
                "kind": "episode",
                "step": ctx.store.steps(),
                "worker": worker_id,
                "env_reward": episode.env_reward,
                "train_reward": episode.train_reward,
                "steps": episode.steps,
                "status": env.state().status,
            }))?;
            *ctx.episodes.lock() += 1;
            last_return = Some(episode.env_reward);
            episode = EpisodeAcc::default();
            env.reset(ctx.scenario.new_state(rng.gen()).map_err(crate::observation::ObsError::from)?)?;
        }
        ctx.checkpoint_due()?;
        if exhausted {
            return Ok(());
        }
    }
}

/// Trains every learned network of the scenario and writes milestone
/// checkpoints, `final.ckpt` and `train.jsonl` into `out_dir`.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome, A3cError> {
    let hp = &cfg.hyper;
    hp.validate()?;
    cfg.scenario.validate()?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let init = cfg.scenario.runtime(NetworkSource::Fresh { seed: hp.seed }, hp.seed)?;
    let store = SharedParamStore::new(init.networks(), hp.total_steps);
    let log_path = cfg.out_dir.join("train.jsonl");
    let mut sink = LogSink {
        out: BufWriter::new(File::create(&log_path)?),
    };
    sink.write(json!({
        "kind": "header",
        "step_unit": STEP_UNIT,
        "hyper": hp,
        "scenario": cfg.scenario,
        "networks": store.network_ids().collect::<Vec<_>>(),
        "milestones": milestones(hp.total_steps, hp.milestones),
    }))?;
    let ctx = WorkerContext {
        scenario: &cfg.scenario,
        hyper: hp,
        store: &store,
        log: Mutex::new(sink),
        milestones: milestones(hp.total_steps, hp.milestones),
        progress: Mutex::new(MilestoneState {
            next: 0,
            written: Vec::new(),
        }),
        out_dir: cfg.out_dir.clone(),
        abort: AtomicBool::new(false),
        episodes: Mutex::new(0),
        updates: Mutex::new(0),
    };
    log::info!(
        "training {} network(s) for {} steps with {} worker(s)",
        store.network_ids().count(),
        hp.total_steps,
        hp.workers
    );

    let results: Vec<Result<(), A3cError>> = if hp.workers == 1 {
        vec![worker_loop(0, &ctx)]
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..hp.workers)
                .map(|w| {
                    let ctx = &ctx;
                    s.spawn(move || {
                        let r = worker_loop(w, ctx);
                        if r.is_err() {
                            ctx.abort.store(true, Ordering::SeqCst);
                        }
                        r
                    })
                })
                .collect();
            handles
                .into_iter()
                .enumerate()
                .map(|(w, h)| h.join().unwrap_or(Err(A3cError::WorkerPanic(w))))
                .collect()
        })
    };
    if let Some(err) = results.into_iter().find_map(Result::err) {
        ctx.log.lock().out.flush()?;
        return Err(err);
    }

    ctx.checkpoint_due()?;
    let final_set = store.quiesced_snapshot(store.steps());
    let final_path = cfg.out_dir.join("final.ckpt");
    final_set.save(&final_path)?;
    let episodes = *ctx.episodes.lock();
    let updates = *ctx.updates.lock();
    let checkpoints = std::mem::take(&mut ctx.progress.lock().written);
    {
        let mut log = ctx.log.lock();
        log.write(json!({"kind": "final", "step": final_set.step, "path": final_path, "episodes": episodes, "updates": updates}))?;
        log.out.flush()?;
    }
    Ok(TrainOutcome {
        final_set,
        final_path,
        checkpoints,
        log_path,
        episodes,
        updates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn milestones_are_evenly_spaced() {
        let m = milestones(1_000_000, 20);
        assert_eq!(m.len(), 20);
        assert!(m.iter().enumerate().all(|(k, &s)| s == 50_000 * (k as u64 + 1)));
        let m = milestones(7, 20);
        assert_eq!(m.len(), 20);
        assert_eq!(*m.last().unwrap(), 7);
        assert!(m.windows(2).all(|w| w[0] <= w[1]));
    }
}
