use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::time::Instant;

use dsrl_core::adversary::NoisePrior;
use dsrl_core::config::RunConfig;
use dsrl_core::ddpg::{ambiguity_ball, train, Checkpoint, EpisodeMetrics, TrainMode};

use crate::{create_dir, load_config, write_config_copy, write_file, CliError, CliResult, METRICS_FILE, TIMING_FILE};

/// Arguments shared by `train` and `baseline`.
#[derive(Debug, Clone, Default)]
pub struct RunArgs {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub checkpoint_every: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub metrics: Vec<EpisodeMetrics>,
    pub final_checkpoint: PathBuf,
}

pub fn cmd_train(args: &RunArgs) -> CliResult<RunSummary> {
    run(args, TrainMode::Dsrl)
}

pub fn cmd_baseline(args: &RunArgs) -> CliResult<RunSummary> {
    run(args, TrainMode::Baseline)
}

fn json_line<T: serde::Serialize>(w: &mut impl Write, value: &T) -> CliResult<()> {
    let line = serde_json::to_string(value).map_err(|e| CliError::Usage(e.to_string()))?;
    writeln!(w, "{line}").map_err(|e| CliError::io("writing metrics", e))
}

fn save_checkpoint(path: &std::path::Path, ck: &Checkpoint) -> CliResult<()> {
    write_file(path, ck.to_json()?.as_bytes())
}

fn run(args: &RunArgs, mode: TrainMode) -> CliResult<RunSummary> {
    let mut cfg: RunConfig = load_config(&args.config, args.seed, args.out.as_ref())?;
    if let Some(k) = args.checkpoint_every {
        cfg.checkpoint_every = k;
    }
    let out = PathBuf::from(&cfg.output_dir);
    let (ck_dir, traj_dir) = (out.join("checkpoints"), out.join("trajectories"));
    for dir in [&out, &ck_dir, &traj_dir] {
        create_dir(dir)?;
    }
    write_config_copy(&out, &cfg)?;
    let model = cfg.env_model()?;
    let ball = ambiguity_ball(&cfg, &NoisePrior::from_config(&cfg.noise)?)?;

    let open = |name: &str| {
        File::create(out.join(name)).map(BufWriter::new).map_err(|e| CliError::io(format!("creating {name}"), e))
    };
    let mut metrics_out = open(METRICS_FILE)?;
    let mut timing_out = open(TIMING_FILE)?;
    let started = Instant::now();
    let mut hook_error: Option<CliError> = None;
    let every = cfg.checkpoint_every;

    let mut on_episode = |m: &EpisodeMetrics,
                          traj: &dsrl_core::envs::Trajectory,
                          nets: &dsrl_core::ddpg::AgentNets,
                          adv: &dsrl_core::adversary::AdversaryState|
     -> dsrl_core::Result<()> {
        let step = (|| -> CliResult<()> {
            json_line(&mut metrics_out, m)?;
            let timing = serde_json::json!({ "episode": m.episode, "wall_seconds": started.elapsed().as_secs_f64() });
            json_line(&mut timing_out, &timing)?;
            let done = m.episode + 1;
            if every > 0 && done % every == 0 {
                let ck = Checkpoint::capture(&cfg, mode, done, nets, adv, &ball);
                save_checkpoint(&ck_dir.join(format!("episode_{done:05}.json")), &ck)?;
                traj.write_csv(&model, &traj_dir.join(format!("episode_{done:05}.csv")))?;
            }
            if done == cfg.episodes {
                traj.write_csv(&model, &traj_dir.join("final.csv"))?;
            }
            Ok(())
        })();
        step.map_err(|e| {
            let msg = e.to_string();
            hook_error = Some(e);
            dsrl_core::DsrlError::Io(msg)
        })
    };
    let result = train(&cfg, mode, &mut on_episode);
    drop(on_episode);
    if let Some(e) = hook_error {
        return Err(e);
    }
    let outcome = result?;
    metrics_out.flush().map_err(|e| CliError::io("flushing metrics", e))?;
    timing_out.flush().map_err(|e| CliError::io("flushing timing", e))?;

    let final_checkpoint = out.join("checkpoint.json");
    save_checkpoint(&final_checkpoint, &outcome.checkpoint(&cfg, mode))?;
    if let Some(failure) = outcome.failure {
        log::error!("numeric failure after {} episodes; state saved to {}", outcome.metrics.len(), final_checkpoint.display());
        return Err(CliError::Core(failure));
    }
    Ok(RunSummary { out_dir: out, metrics: outcome.metrics, final_checkpoint })
}
