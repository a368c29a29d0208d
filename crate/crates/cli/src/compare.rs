use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dsrl_core::config::RunConfig;
use dsrl_core::ddpg::EpisodeMetrics;
use dsrl_core::DsrlError;

use crate::{create_dir, read_file, write_config_copy, write_file, CliError, CliResult, CONFIG_COPY, METRICS_FILE};

#[derive(Debug, Clone)]
pub struct CompareArgs {
    pub runs: Vec<PathBuf>,
    pub out: PathBuf,
}

/// Per-episode aggregate over runs.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnRow {
    pub episode: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    /// `max − min`.
    pub spread: f64,
}

fn read_metrics(dir: &Path) -> CliResult<Vec<EpisodeMetrics>> {
    read_file(&dir.join(METRICS_FILE))?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| CliError::Core(DsrlError::from(e))))
        .collect()
}

fn run_label(dir: &Path, index: usize) -> String {
    dir.file_name().map_or_else(|| format!("run{index}"), |n| n.to_string_lossy().into_owned())
}

/// Aggregates returns of several runs episode by episode.
pub fn aggregate(returns: &[Vec<f64>]) -> Vec<ReturnRow> {
    let episodes = returns.iter().map(Vec::len).min().unwrap_or(0);
    (0..episodes)
        .map(|e| {
            let vals: Vec<f64> = returns.iter().map(|r| r[e]).collect();
            let count = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / count;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count;
            let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            ReturnRow { episode: e, mean, std: var.sqrt(), min, max, spread: max - min }
        })
        .collect()
}

pub fn cmd_compare(args: &CompareArgs) -> CliResult<Vec<ReturnRow>> {
    if args.runs.is_empty() {
        return Err(CliError::Usage("compare needs at least one run directory".into()));
    }
    let mut configs = Vec::new();
    let mut returns = Vec::new();
    for dir in &args.runs {
        let cfg = RunConfig::from_toml_str(&read_file(&dir.join(CONFIG_COPY))?)?;
        if let Some(first) = configs.first() {
            let first: &RunConfig = first;
            if first.env != cfg.env {
                return Err(CliError::Usage(format!(
                    "{} is a {} run but {} is {}",
                    dir.display(),
                    cfg.env,
                    args.runs[0].display(),
                    first.env
                )));
            }
        }
        returns.push(read_metrics(dir)?.iter().map(|m| m.episode_return).collect::<Vec<_>>());
        configs.push(cfg);
    }
    if returns.iter().any(|r| r.len() != returns[0].len()) {
        log::warn!("runs have different lengths; aggregating the common prefix");
    }
    let rows = aggregate(&returns);
    create_dir(&args.out)?;
    write_config_copy(&args.out, &configs[0])?;

    let mut csv = String::from("episode,mean,std,min,max,spread");
    for (i, dir) in args.runs.iter().enumerate() {
        let _ = write!(csv, ",{}", run_label(dir, i));
    }
    csv.push('\n');
    for row in &rows {
        let _ = write!(csv, "{},{},{},{},{},{}", row.episode, row.mean, row.std, row.min, row.max, row.spread);
        for r in &returns {
            let _ = write!(csv, ",{}", r[row.episode]);
        }
        csv.push('\n');
    }
    write_file(&args.out.join("returns.csv"), csv.as_bytes())?;

    let mut overlay = String::new();
    for (i, dir) in args.runs.iter().enumerate() {
        let path = dir.join("trajectories").join("final.csv");
        let Ok(text) = std::fs::read_to_string(&path) else { continue };
        let mut lines = text.lines();
        let Some(header) = lines.next() else { continue };
        if overlay.is_empty() {
            let _ = writeln!(overlay, "run,{header}");
        }
        let label = run_label(dir, i);
        for line in lines {
            let _ = writeln!(overlay, "{label},{line}");
        }
    }
    if !overlay.is_empty() {
        write_file(&args.out.join("overlay.csv"), overlay.as_bytes())?;
    }
    Ok(rows)
}
