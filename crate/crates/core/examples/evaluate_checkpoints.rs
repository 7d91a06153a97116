//! Short training run followed by the milestone evaluation protocol, with the
//! report written as CSV and JSON alongside the published reference rows.
//!
//!     cargo run --release --example evaluate_checkpoints -- /tmp/eval

use std::path::PathBuf;

use tankdef::a3c::{train, Hyperparams, TrainConfig};
use tankdef::eval::{evaluate, export_report, ReportFormat, TABLE1};
use tankdef::mts::StrategyConfig;
use tankdef::nn::CheckpointSet;
use tankdef::scenario::Scenario;

fn main() {
    let out: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "evaluate_out".into()).into();
    let cfg = TrainConfig {
        scenario: Scenario::small(StrategyConfig::baseline_pair()),
        hyper: Hyperparams {
            workers: 2,
            total_steps: 4000,
            seed: 3,
            ..Hyperparams::default()
        },
        out_dir: out.join("run"),
    };
    let run = train(&cfg).unwrap();

    // every fifth milestone keeps the example quick
    let mut reports = Vec::new();
    for (step, path) in run.checkpoints.iter().skip(4).step_by(5) {
        let set = CheckpointSet::load(path).unwrap();
        let r = evaluate(&set, &cfg.scenario, 1000, 11).unwrap();
        println!("milestone {step:>5}: reward {:.2}, steps/episode {:.1}", r.mean_total_reward, r.mean_steps_per_episode);
        reports.push(r);
    }
    for row in &TABLE1 {
        println!("reference {:?}: reward {}, steps {}", row.scheme, row.reward, row.steps);
    }
    export_report(&reports, None, &TABLE1, &out.join("report.csv"), ReportFormat::Csv).unwrap();
    export_report(&reports, None, &TABLE1, &out.join("report.json"), ReportFormat::Json).unwrap();
    println!("wrote {}", out.display());
}
