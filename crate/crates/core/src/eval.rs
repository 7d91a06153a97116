//! Frozen-policy evaluation at milestones and report export.
//!
//! Steps are decision steps (one joint decision, `action_repeat` ticks).
//! Rewards are environment rewards summed over players; goal bonuses never
//! enter evaluation. An episode still running when the step budget ends is
//! discarded.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{EntityId, Status};
use crate::mts::{MtsError, NetworkSource};
use crate::nn::{CheckpointSet, NnError};
use crate::observation::{ObsError, ObsTensor};
use crate::scenario::{ConfigError, Scenario};

pub const DEFAULT_EVAL_STEPS: u64 = 50_000;

pub const REPORT_HEADER: &str = "steps are decision steps (action repeat applied); rewards are environment rewards summed over players; episodes unfinished at the step budget are discarded";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),
    #[error("no reports to export")]
    NoReports,
    #[error("malformed report: {0}")]
    Malformed(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Mts(MtsError),
    #[error(transparent)]
    Obs(#[from] ObsError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl From<MtsError> for EvalError {
    fn from(e: MtsError) -> Self {
        match e {
            MtsError::Nn(NnError::ArchitectureMismatch(m)) => EvalError::ArchitectureMismatch(m),
            other => EvalError::Mts(other),
        }
    }
}

impl From<NnError> for EvalError {
    fn from(e: NnError) -> Self {
        MtsError::Nn(e).into()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub total_reward: f64,
    pub steps: u64,
    pub status: Status,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MilestoneReport {
    pub milestone_step: u64,
    pub episodes: usize,
    pub mean_total_reward: f64,
    pub mean_steps_per_episode: f64,
    pub per_episode: Vec<EpisodeResult>,
    pub seed: u64,
    /// No episode finished inside the step budget; means are zero.
    pub insufficient_data: bool,
}

/// Arithmetic means over completed episodes.
pub fn aggregate(milestone_step: u64, seed: u64, per_episode: Vec<EpisodeResult>) -> MilestoneReport {
    let n = per_episode.len();
    let (mean_total_reward, mean_steps_per_episode) = if n == 0 {
        (0.0, 0.0)
    } else {
        (
            per_episode.iter().map(|e| e.total_reward).sum::<f64>() / n as f64,
            per_episode.iter().map(|e| e.steps as f64).sum::<f64>() / n as f64,
        )
    };
    MilestoneReport {
        milestone_step,
        episodes: n,
        mean_total_reward,
        mean_steps_per_episode,
        per_episode,
        seed,
        insufficient_data: n == 0,
    }
}

/// Runs `scenario` greedily for `eval_steps` decision steps across
/// consecutive episodes. Episode `k` starts from an engine seed drawn from a
/// generator seeded with `seed`.
pub fn evaluate_with(
    scenario: &Scenario,
    source: NetworkSource<'_>,
    milestone_step: u64,
    eval_steps: u64,
    seed: u64,
) -> Result<MilestoneReport, EvalError> {
    scenario.validate()?;
    let mut rt = scenario.runtime(source, seed).map_err(|e| match e {
        ConfigError::Mts(m) => EvalError::from(m),
        other => EvalError::Config(other),
    })?;
    rt.set_sampling(false);
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let mut env = scenario.new_env(seeds.gen())?;
    let mut done = Vec::new();
    let (mut reward, mut steps) = (0.0, 0u64);
    for _ in 0..eval_steps {
        let obs: std::collections::BTreeMap<EntityId, ObsTensor> = env
            .state()
            .alive_player_ids()
            .into_iter()
            .filter_map(|id| env.observation(id).map(|o| (id, o)))
            .collect();
        let decision = rt.decide(env.state(), &obs)?;
        let out = env.step(&decision.actions)?;
        reward += out.rewards.values().sum::<f64>();
        steps += 1;
        if out.terminal {
            done.push(EpisodeResult {
                total_reward: reward,
                steps,
                status: env.state().status,
            });
            reward = 0.0;
            steps = 0;
            env.reset(scenario.new_state(seeds.gen()).map_err(ObsError::from)?)?;
        }
    }
    Ok(aggregate(milestone_step, seed, done))
}

/// Evaluates a checkpoint; every network the strategy names must be in it
/// with a matching architecture. The checkpoint is only read.
pub fn evaluate(checkpoint: &CheckpointSet, scenario: &Scenario, eval_steps: u64, seed: u64) -> Result<MilestoneReport, EvalError> {
    evaluate_with(scenario, NetworkSource::Registry(checkpoint), checkpoint.step, eval_steps, seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefPoint {
    pub reward: f64,
    pub steps: f64,
}

/// Human play levels, supplied by configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HumanReference {
    pub novice: RefPoint,
    pub competent: RefPoint,
    pub source: String,
}

impl HumanReference {
    pub fn from_toml(text: &str) -> Result<Self, EvalError> {
        toml::from_str(text).map_err(|e| EvalError::Malformed(e.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Table1Row {
    pub scheme: &'static str,
    pub reward: f64,
    pub steps: f64,
}

/// Published results for the goal-map variants.
pub const TABLE1: [Table1Row; 3] = [
    Table1Row {
        scheme: "A3C with a goal map (single-player mode)",
        reward: 149.0,
        steps: 152.0,
    },
    Table1Row {
        scheme: "A3C with a goal map and a human",
        reward: 301.0,
        steps: 234.0,
    },
    Table1Row {
        scheme: "A3C with a goal map + modifying behaviors",
        reward: 363.0,
        steps: 295.0,
    },
];

/// A labelled reference row in an exported report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub label: String,
    pub reward: f64,
    pub steps: f64,
}

pub fn reference_rows(human: Option<&HumanReference>, table1: &[Table1Row]) -> Vec<ReferenceRow> {
    let mut rows = Vec::new();
    if let Some(h) = human {
        for (label, p) in [("novice", h.novice), ("competent", h.competent)] {
            rows.push(ReferenceRow {
                label: label.to_string(),
                reward: p.reward,
                steps: p.steps,
            });
        }
    }
    rows.extend(table1.iter().map(|r| ReferenceRow {
        label: format!("table1:{}", r.scheme),
        reward: r.reward,
        steps: r.steps,
    }));
    rows
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

/// One CSV row: milestone rows carry `milestone_step`; reference rows carry
/// a `label` and leave the milestone fields empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub label: String,
    pub milestone_step: Option<u64>,
    pub episodes: Option<usize>,
    pub mean_total_reward: f64,
    pub mean_steps_per_episode: f64,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportDoc {
    pub header: String,
    pub milestones: Vec<MilestoneReport>,
    pub references: Vec<ReferenceRow>,
}

pub fn csv_rows(reports: &[MilestoneReport], refs: &[ReferenceRow]) -> Vec<CsvRow> {
    let mut rows: Vec<CsvRow> = reports
        .iter()
        .map(|r| CsvRow {
            label: "milestone".into(),
            milestone_step: Some(r.milestone_step),
            episodes: Some(r.episodes),
            mean_total_reward: r.mean_total_reward,
            mean_steps_per_episode: r.mean_steps_per_episode,
            seed: Some(r.seed),
        })
        .collect();
    rows.extend(refs.iter().map(|r| CsvRow {
        label: r.label.clone(),
        milestone_step: None,
        episodes: None,
        mean_total_reward: r.reward,
        mean_steps_per_episode: r.steps,
        seed: None,
    }));
    rows
}

/// Writes the report. CSV columns are `label, milestone_step, episodes,
/// mean_total_reward, mean_steps_per_episode, seed`; floats use the
/// shortest round-tripping representation.
pub fn export_report(
    reports: &[MilestoneReport],
    human: Option<&HumanReference>,
    table1: &[Table1Row],
    path: &Path,
    format: ReportFormat,
) -> Result<(), EvalError> {
    if reports.is_empty() {
        return Err(EvalError::NoReports);
    }
    let refs = reference_rows(human, table1);
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(&mut file);
            for row in csv_rows(reports, &refs) {
                w.serialize(row)?;
            }
            w.flush()?;
        }
        ReportFormat::Json => {
            let doc = ReportDoc {
                header: REPORT_HEADER.to_string(),
                milestones: reports.to_vec(),
                references: refs,
            };
            serde_json::to_writer_pretty(&mut file, &doc)?;
            file.write_all(b"\n")?;
        }
    }
    file.flush()?;
    Ok(())
}

pub fn read_csv_report(path: &Path) -> Result<Vec<CsvRow>, EvalError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<Vec<CsvRow>, _>>()?)
}

pub fn read_json_report(path: &Path) -> Result<ReportDoc, EvalError> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}
