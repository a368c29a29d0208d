use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use dsrl_core::adversary::NoisePrior;
use dsrl_core::config::RunConfig;
use dsrl_core::ddpg::{rng_stream, run_episode, AgentNets, Checkpoint, NoiseSource, OuNoise, RngStream, RolloutPlan, TrainMode};
use dsrl_core::envs::{recover_attitude, EnvKind, EnvModel, Trajectory};
use dsrl_core::DsrlError;
use serde::Serialize;

use crate::{create_dir, load_config, read_file, write_config_copy, write_file, CliError, CliResult};

/// Executed dynamics noise during evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalNoise {
    /// The prior mean every step.
    Nominal,
    /// The checkpointed adversary ω every step.
    Worst,
    /// A fresh prior draw every step.
    Sample,
}

impl FromStr for EvalNoise {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "nominal" => Ok(EvalNoise::Nominal),
            "worst" => Ok(EvalNoise::Worst),
            "sample" => Ok(EvalNoise::Sample),
            other => Err(CliError::Usage(format!("unknown noise mode `{other}` (nominal, worst, sample)"))),
        }
    }
}

impl std::fmt::Display for EvalNoise {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EvalNoise::Nominal => "nominal",
            EvalNoise::Worst => "worst",
            EvalNoise::Sample => "sample",
        })
    }
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub config: PathBuf,
    pub noise: EvalNoise,
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
    /// Take the worst-case ω from this checkpoint instead (e.g. evaluate a
    /// baseline policy under noise learned by an adversarial run).
    pub omega_from: Option<PathBuf>,
}

/// One row of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRecord {
    pub seed: u64,
    pub noise: EvalNoise,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub min_h: f64,
    pub reached_goal: bool,
    pub violations: usize,
    pub steps: usize,
    pub qp_fallbacks: usize,
}

pub(crate) fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    Ok(Checkpoint::from_json(&read_file(path)?)?)
}

fn worker_count(jobs: usize) -> usize {
    let cap = std::env::var("DSRL_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&t| t > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |p| p.get()));
    cap.min(jobs).max(1)
}

fn attitude_csv(traj: &Trajectory, model: &EnvModel) -> String {
    let mut out = String::from("t,thrust,pitch,roll\n");
    for (k, v) in traj.actions_rect.iter().enumerate() {
        let t = k as f64 * model.dt;
        match recover_attitude(v, model.gravity) {
            Ok(a) => {
                let _ = writeln!(out, "{t},{},{},{}", a.thrust, a.pitch, a.roll);
            }
            Err(_) => {
                let _ = writeln!(out, "{t},0,,");
            }
        }
    }
    out
}

pub fn cmd_eval(args: &EvalArgs) -> CliResult<Vec<EvalRecord>> {
    let cfg: RunConfig = load_config(&args.config, None, None)?;
    let ck = load_checkpoint(&args.checkpoint)?;
    if ck.env != cfg.env {
        return Err(DsrlError::Shape(format!("checkpoint is for {}, config for {}", ck.env, cfg.env)).into());
    }
    let model = cfg.env_model()?;
    if ck.actor.output_size() != model.m() || ck.critic.input_size() != model.n() + model.m() {
        return Err(DsrlError::Shape("checkpoint network sizes do not match the environment".into()).into());
    }
    let worst = match &args.omega_from {
        Some(path) => {
            let src = load_checkpoint(path)?;
            if src.env != cfg.env {
                return Err(DsrlError::Shape(format!("--omega-from checkpoint is for {}", src.env)).into());
            }
            src.omega
        }
        None => ck.omega.clone(),
    };
    if args.seeds.is_empty() {
        return Err(CliError::Usage("--seeds must list at least one seed".into()));
    }
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&cfg.output_dir).join(format!("eval_{}", args.noise)));
    create_dir(&out)?;
    write_config_copy(&out, &cfg)?;

    let prior = NoisePrior::from_config(&cfg.noise)?;
    let barriers = model.barriers(cfg.cbf.kappa1, cfg.cbf.kappa2);
    let assembly = match ck.mode {
        TrainMode::Dsrl => ck.omega.clone(),
        TrainMode::Baseline => ck.omega_center.clone(),
    };
    let executed = match args.noise {
        EvalNoise::Nominal => NoiseSource::Fixed(ck.omega_center.clone()),
        EvalNoise::Worst => NoiseSource::Fixed(worst),
        EvalNoise::Sample => NoiseSource::Sampled { shift: vec![0.0; model.n()] },
    };
    let plan = RolloutPlan {
        model: &model,
        barriers: &barriers,
        prior: &prior,
        samples_per_step: cfg.noise.samples_per_step,
        assembly: NoiseSource::Fixed(assembly),
        executed,
        record_jacobians: false,
    };
    let base_nets = AgentNets::from_parts(ck.actor.clone(), ck.critic.clone(), &cfg.ddpg);

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<CliResult<EvalRecord>>>> =
        Mutex::new((0..args.seeds.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..worker_count(args.seeds.len()) {
            scope.spawn(|| loop {
                let job = next.fetch_add(1, Ordering::SeqCst);
                let Some(&seed) = args.seeds.get(job) else { break };
                let record = eval_seed(seed, args.noise, &base_nets, &plan, &model, &out);
                results.lock().expect("worker panicked")[job] = Some(record);
            });
        }
    });
    let records = results
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect::<CliResult<Vec<_>>>()?;

    let mut summary = String::from("seed,noise,return,min_h,reached_goal,violations,steps,qp_fallbacks\n");
    for r in &records {
        let _ = writeln!(
            summary,
            "{},{},{},{},{},{},{},{}",
            r.seed, r.noise, r.episode_return, r.min_h, r.reached_goal, r.violations, r.steps, r.qp_fallbacks
        );
    }
    write_file(&out.join("summary.csv"), summary.as_bytes())?;
    Ok(records)
}

fn eval_seed(
    seed: u64,
    noise: EvalNoise,
    base: &AgentNets,
    plan: &RolloutPlan<'_>,
    model: &EnvModel,
    out: &Path,
) -> CliResult<EvalRecord> {
    let mut nets = base.clone();
    let mut quiet = OuNoise::new(model.m(), 0.0, 0.0)?;
    let mut explore_rng = rng_stream(seed, RngStream::Exploration);
    let mut noise_rng = rng_stream(seed, RngStream::Dynamics);
    let (traj, _) = run_episode(&mut nets, plan, &mut quiet, &mut explore_rng, &mut noise_rng, &mut |_, _| Ok(()))?;
    traj.write_csv(model, &out.join(format!("traj_seed{seed}.csv")))?;
    if model.kind == EnvKind::Quad {
        write_file(&out.join(format!("attitude_seed{seed}.csv")), attitude_csv(&traj, model).as_bytes())?;
    }
    if let Some(reason) = &traj.aborted {
        log::warn!("seed {seed}: rollout aborted ({reason})");
    }
    Ok(EvalRecord {
        seed,
        noise,
        episode_return: traj.undiscounted_return(),
        min_h: traj.min_h(),
        reached_goal: traj.reached_goal,
        violations: traj.violations(),
        steps: traj.len(),
        qp_fallbacks: traj.qp_fallbacks,
    })
}
