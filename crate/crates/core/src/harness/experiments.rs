//! The built-in experiments and their artifacts.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::checkpoint::save_checkpoint;
use super::config::{Experiment, ExperimentConfig, SweepConfig};
use super::csvlog::{self, write_table};
use super::manifest::write_manifest;
use super::plot::{render_svg, Series};
use crate::attacks::AttackSpec;
use crate::cartpole::CartPoleEnv;
use crate::neural::QNetwork;
use crate::resilience::{train_adversary, AdversaryConfig, AdversaryOutcome};
use crate::rng::SplitMix64;
use crate::tabular::{convergence_rates, threshold_sweep, SweepRow, ToyMdp};
use crate::trainer::{evaluate, ConvergencePoint, EvalStats, TrainLog, Trainer, TrainerConfig};
use crate::{Error, Result};

pub const OUTPUT_ROOT_VAR: &str = "AGELAB_OUTPUT_ROOT";
pub const RECOVERY_THRESHOLD: f64 = 400.0;
pub const RECOVERY_WINDOW_STEPS: u64 = 50_000;

pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

#[derive(Debug, Clone)]
pub struct RunArtifact {
    pub dir: PathBuf,
    pub files: Vec<String>,
}

/// Standard deviation of the moving average from convergence to the end.
pub fn post_convergence_std(log: &TrainLog, convergence: ConvergencePoint) -> f64 {
    let values: Vec<f64> = log.episodes[convergence.episode - 1..]
        .iter()
        .filter_map(|e| e.ma100)
        .collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Steps after `attack_step` until a 100-episode window lying entirely after
/// the attack averages at least `threshold`.
pub fn recovery_after(log: &TrainLog, attack_episode: usize, attack_step: u64, threshold: f64) -> Option<u64> {
    const W: usize = 100;
    let rewards: Vec<f64> = log.episodes[attack_episode.min(log.episodes.len())..]
        .iter()
        .map(|e| e.reward)
        .collect();
    if rewards.len() < W {
        return None;
    }
    let mut sum: f64 = rewards[..W].iter().sum();
    for k in W - 1..rewards.len() {
        if k >= W {
            sum += rewards[k] - rewards[k - W];
        }
        if sum / W as f64 >= threshold {
            return Some(log.episodes[attack_episode + k].end_step - attack_step);
        }
    }
    None
}

#[derive(Debug, Clone)]
pub struct NominalResult {
    pub seed: u64,
    pub log: TrainLog,
    pub policy: QNetwork,
    pub convergence: Option<ConvergencePoint>,
    pub post_convergence_std: Option<f64>,
    pub eval: EvalStats,
}

impl NominalResult {
    pub fn final_ma100(&self) -> Option<f64> {
        self.log.episodes.last().and_then(|e| e.ma100)
    }
}

#[derive(Debug, Clone)]
pub struct AttackResult {
    pub seed: u64,
    pub p_attack: f64,
    pub log: TrainLog,
    pub attack_step: u64,
    pub attack_episode: usize,
    pub recovered_after: Option<u64>,
    pub pre_attack_cleared_after: Option<u64>,
    pub peak_post_attack_ma100: Option<f64>,
    pub final_ma100: Option<f64>,
    pub post_attack_steps: u64,
}

impl AttackResult {
    /// Recovery within the window counted from the attack start.
    pub fn recovered_within(&self, steps: u64) -> bool {
        self.recovered_after.is_some_and(|s| s <= steps)
    }

    /// Whether the moving average ends below both the recovery threshold and
    /// its post-attack high.
    pub fn peak_decays(&self) -> bool {
        match (self.final_ma100, self.peak_post_attack_ma100) {
            (Some(f), Some(p)) => f < RECOVERY_THRESHOLD && f <= p,
            _ => false,
        }
    }
}

fn eval_stats(net: &QNetwork, episodes: usize, seed: u64) -> Result<EvalStats> {
    evaluate(net, episodes, &mut SplitMix64::derive(seed, "evaluation"))
}

/// Trains a nominal run and, at its convergence point, branches one attacked
/// continuation per entry of `attack_ps`. The nominal run itself continues
/// without attack to `total_timesteps`.
pub fn nominal_with_branches(
    config: &TrainerConfig,
    attack: &AttackSpec,
    attack_ps: &[f64],
    seed: u64,
    eval_episodes: usize,
) -> Result<(NominalResult, Vec<AttackResult>)> {
    let config = TrainerConfig {
        attack: None,
        ..config.clone()
    };
    let mut trainer = Trainer::new(config.clone(), CartPoleEnv::new(), seed)?;
    while trainer.steps() < config.total_timesteps && trainer.convergence().is_none() {
        trainer.step()?;
    }
    let mut branches = Vec::new();
    if trainer.convergence().is_some() {
        for &p in attack_ps {
            let mut branch = trainer.clone();
            branch.start_attack(AttackSpec { p_attack: p, ..*attack });
            branch.run_steps(config.post_attack_steps)?;
            let window = *branch.attack_window().expect("attack started");
            let log = branch.log().clone();
            let attack_episode = window.started_at_episode as usize;
            let post: Vec<f64> = log.episodes[attack_episode..].iter().filter_map(|e| e.ma100).collect();
            branches.push(AttackResult {
                seed,
                p_attack: p,
                recovered_after: recovery_after(&log, attack_episode, window.started_at_step, RECOVERY_THRESHOLD),
                pre_attack_cleared_after: window.pre_attack_cleared_after,
                peak_post_attack_ma100: post.iter().copied().reduce(f64::max),
                final_ma100: log.episodes.last().and_then(|e| e.ma100),
                attack_step: window.started_at_step,
                attack_episode,
                post_attack_steps: config.post_attack_steps,
                log,
            });
        }
    }
    while trainer.steps() < config.total_timesteps {
        trainer.step()?;
    }
    let convergence = trainer.convergence();
    let (policy, log, _) = trainer.into_parts();
    let eval = eval_stats(&policy, eval_episodes, seed)?;
    Ok((
        NominalResult {
            seed,
            post_convergence_std: convergence.map(|c| post_convergence_std(&log, c)),
            convergence,
            log,
            policy,
            eval,
        },
        branches,
    ))
}

#[derive(Debug, Clone)]
pub struct ResilienceResult {
    pub victim: NominalResult,
    pub adversary: AdversaryOutcome,
}

pub fn resilience_run(
    victim_config: &TrainerConfig,
    adversary: &AdversaryConfig,
    seed: u64,
    eval_episodes: usize,
) -> Result<ResilienceResult> {
    let (victim, _) = nominal_with_branches(victim_config, &AttackSpec::default(), &[], seed, eval_episodes)?;
    let adversary = train_adversary(&victim.policy, adversary, seed)?;
    Ok(ResilienceResult { victim, adversary })
}

pub fn mdp_by_name(name: &str, gamma: f64) -> Result<ToyMdp> {
    match name {
        "chain" => ToyMdp::chain(5, gamma),
        "gridworld" => ToyMdp::gridworld(gamma),
        other => Err(Error::InvalidValue {
            field: "mdp",
            reason: format!("unknown MDP `{other}`"),
        }),
    }
}

pub fn tabular_sweep(sweep: &SweepConfig, seeds: &[u64]) -> Result<Vec<(String, Vec<SweepRow>)>> {
    sweep
        .mdps
        .iter()
        .map(|name| {
            let mdp = mdp_by_name(name, sweep.gamma)?;
            let rows = threshold_sweep(&mdp, &sweep.p_values, seeds, &sweep.modes, &sweep.tabular)?;
            Ok((name.clone(), rows))
        })
        .collect()
}

fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn ma_series(log: &TrainLog) -> Vec<(f64, f64)> {
    log.episodes
        .iter()
        .filter_map(|e| e.ma100.map(|m| (e.end_step as f64, m)))
        .collect()
}

fn write_svg(path: &Path, svg: &str) -> Result<()> {
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}

fn write_nominal(dir: &Path, r: &NominalResult, prefix: &str) -> Result<()> {
    let seed_dir = dir.join(format!("seed-{}", r.seed));
    csvlog::write_episodes(&seed_dir.join(format!("{prefix}episodes.csv")), &r.log)?;
    if !r.log.steps.is_empty() {
        csvlog::write_steps(&seed_dir.join(format!("{prefix}steps.csv")), &r.log)?;
    }
    save_checkpoint(&r.policy, &seed_dir.join(format!("{prefix}policy.ageq")))
}

fn write_nominal_summary(dir: &Path, results: &[NominalResult], title: &str) -> Result<()> {
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|r| {
            vec![
                r.seed.to_string(),
                fmt_opt(r.convergence.map(|c| c.episode)),
                fmt_opt(r.convergence.map(|c| c.step)),
                fmt_opt(r.post_convergence_std),
                fmt_opt(r.final_ma100()),
                r.eval.mean.to_string(),
                r.eval.std.to_string(),
            ]
        })
        .collect();
    write_table(
        &dir.join("summary.csv"),
        "nominal-summary",
        &[
            "seed",
            "converged_episode",
            "converged_step",
            "post_convergence_ma100_std",
            "final_ma100",
            "eval_mean",
            "eval_std",
        ],
        &rows,
    )?;
    let labels: Vec<String> = results.iter().map(|r| format!("seed {}", r.seed)).collect();
    let series: Vec<Series> = results
        .iter()
        .zip(&labels)
        .map(|(r, l)| Series {
            label: l,
            points: ma_series(&r.log),
        })
        .collect();
    write_svg(
        &dir.join("learning-curves.svg"),
        &render_svg(title, "step", "100-episode mean reward", &series),
    )
}

/// Runs the configured experiment into `dir`, replacing earlier artifacts
/// with the same names, and writes the manifest last.
pub fn run_in(config: &ExperimentConfig, dir: &Path) -> Result<RunArtifact> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let snapshot = dir.join("config.toml");
    std::fs::write(&snapshot, &config.source).map_err(|e| Error::io(&snapshot, e))?;
    let seeds = &config.seeds;
    let evals = config.eval_episodes;
    match &config.experiment {
        Experiment::Nominal(_) => {
            let results: Vec<NominalResult> = seeds
                .par_iter()
                .map(|&s| nominal_with_branches(&config.trainer, &config.attack, &[], s, evals).map(|r| r.0))
                .collect::<Result<_>>()?;
            for r in &results {
                write_nominal(dir, r, "")?;
            }
            write_nominal_summary(dir, &results, &config.id)?;
        }
        Experiment::AttackTrain(ps) => {
            let results: Vec<(NominalResult, Vec<AttackResult>)> = seeds
                .par_iter()
                .map(|&s| nominal_with_branches(&config.trainer, &config.attack, ps, s, evals))
                .collect::<Result<_>>()?;
            let mut rows = Vec::new();
            for (nominal, branches) in &results {
                write_nominal(dir, nominal, "nominal-")?;
                for b in branches {
                    csvlog::write_episodes(
                        &dir.join(format!("seed-{}/p{}-episodes.csv", b.seed, b.p_attack)),
                        &b.log,
                    )?;
                    rows.push(vec![
                        b.p_attack.to_string(),
                        b.seed.to_string(),
                        b.attack_step.to_string(),
                        fmt_opt(b.recovered_after),
                        u8::from(b.recovered_within(RECOVERY_WINDOW_STEPS)).to_string(),
                        fmt_opt(b.pre_attack_cleared_after),
                        fmt_opt(b.peak_post_attack_ma100),
                        fmt_opt(b.final_ma100),
                    ]);
                }
            }
            write_table(
                &dir.join("summary.csv"),
                "attack-summary",
                &[
                    "p_attack",
                    "seed",
                    "attack_step",
                    "recovered_after_steps",
                    "recovered_within_50000",
                    "pre_attack_cleared_after_pushes",
                    "peak_post_attack_ma100",
                    "final_ma100",
                ],
                &rows,
            )?;
            for &p in ps {
                let mut labels = Vec::new();
                let mut points = Vec::new();
                for (_, branches) in &results {
                    for b in branches.iter().filter(|b| b.p_attack == p) {
                        labels.push(format!("seed {}", b.seed));
                        points.push(ma_series(&b.log));
                    }
                }
                let series: Vec<Series> = labels
                    .iter()
                    .zip(points)
                    .map(|(label, points)| Series { label, points })
                    .collect();
                write_svg(
                    &dir.join(format!("p{p}-learning-curves.svg")),
                    &render_svg(
                        &format!("Training under attack, p(attack) = {p}"),
                        "step",
                        "100-episode mean reward",
                        &series,
                    ),
                )?;
            }
        }
        Experiment::Resilience(_) => {
            let results: Vec<ResilienceResult> = seeds
                .par_iter()
                .map(|&s| resilience_run(&config.trainer, &config.adversary, s, evals))
                .collect::<Result<_>>()?;
            let mut rows = Vec::new();
            for r in &results {
                let seed = r.victim.seed;
                write_nominal(dir, &r.victim, "victim-")?;
                csvlog::write_regret(&dir.join(format!("seed-{seed}/regret.csv")), &r.adversary.log)?;
                save_checkpoint(&r.adversary.adversary, &dir.join(format!("seed-{seed}/adversary.ageq")))?;
                rows.push(vec![
                    seed.to_string(),
                    fmt_opt(r.victim.convergence.map(|c| c.step)),
                    r.victim.eval.mean.to_string(),
                    fmt_opt(r.adversary.log.final_ma100_regret()),
                    fmt_opt(r.adversary.log.final_ma100_perturbations()),
                    fmt_opt(r.adversary.quasi_stable_at),
                    fmt_opt(r.adversary.terminated_at_step),
                ]);
            }
            write_table(
                &dir.join("summary.csv"),
                "resilience-summary",
                &[
                    "seed",
                    "victim_converged_step",
                    "victim_eval_mean",
                    "final_ma100_regret",
                    "final_ma100_perturbations",
                    "quasi_stable_episode",
                    "terminated_at_step",
                ],
                &rows,
            )?;
            let mut labels = Vec::new();
            let mut regret = Vec::new();
            let mut perturb = Vec::new();
            for r in &results {
                labels.push(format!("seed {}", r.victim.seed));
                regret.push(r.adversary.log.rows.iter().map(|x| (x.episode as f64, x.ma100_regret)).collect());
                perturb.push(
                    r.adversary
                        .log
                        .rows
                        .iter()
                        .map(|x| (x.episode as f64, x.ma100_perturbations))
                        .collect(),
                );
            }
            for (name, data, y) in [
                ("regret.svg", regret, "100-episode mean regret"),
                ("perturbations.svg", perturb, "100-episode mean perturbations"),
            ] {
                let series: Vec<Series> = labels
                    .iter()
                    .zip(data)
                    .map(|(label, points)| Series { label, points })
                    .collect();
                write_svg(&dir.join(name), &render_svg(&config.id, "episode", y, &series))?;
            }
        }
        Experiment::TabularSweep => {
            let sweeps = tabular_sweep(&config.sweep, seeds)?;
            let mut rate_rows = Vec::new();
            let mut labels = Vec::new();
            let mut points = Vec::new();
            for (name, rows) in &sweeps {
                csvlog::write_sweep(&dir.join(format!("sweep-{name}.csv")), rows)?;
                for mode in &config.sweep.modes {
                    let subset: Vec<SweepRow> = rows.iter().filter(|r| r.mode == *mode).cloned().collect();
                    let rates = convergence_rates(&subset);
                    for (p, rate) in &rates {
                        rate_rows.push(vec![name.clone(), mode.to_string(), p.to_string(), rate.to_string()]);
                    }
                    labels.push(format!("{name} ({mode})"));
                    points.push(rates);
                }
            }
            write_table(
                &dir.join("rates.csv"),
                "sweep-rates",
                &["mdp", "mode", "p_attack", "convergence_rate"],
                &rate_rows,
            )?;
            let series: Vec<Series> = labels
                .iter()
                .zip(points)
                .map(|(label, points)| Series { label, points })
                .collect();
            write_svg(
                &dir.join("rates.svg"),
                &render_svg("Tabular convergence under attack", "p(attack)", "convergence rate", &series),
            )?;
        }
    }
    write_manifest(dir)?;
    Ok(RunArtifact {
        dir: dir.to_path_buf(),
        files: super::manifest::list_files(dir)?,
    })
}

pub fn run(config: &ExperimentConfig) -> Result<RunArtifact> {
    let dir = config
        .output_dir
        .clone()
        .unwrap_or_else(|| output_root().join(config.slug()));
    run_in(config, &dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::EpisodeRecord;

    fn log_of(rewards: &[f64]) -> TrainLog {
        let mut log = TrainLog::default();
        for (i, &r) in rewards.iter().enumerate() {
            log.episodes.push(EpisodeRecord {
                episode: i as u64,
                end_step: (i as u64 + 1) * 100,
                reward: r,
                ma100: None,
                attacked_steps: 0,
                perturbed_fraction: 0.0,
                pre_attack_remaining: None,
            });
        }
        log
    }

    #[test]
    fn recovery_needs_a_fully_post_attack_window() {
        // 100 good episodes, attack at episode 100, 50 bad ones, then good.
        let mut r = vec![500.0; 100];
        r.extend(vec![10.0; 50]);
        r.extend(vec![500.0; 200]);
        let log = log_of(&r);
        let after = recovery_after(&log, 100, 10_000, 400.0).unwrap();
        // Window [100, 199] averages (50*10 + 50*500)/100 = 255; the first
        // passing window ends at episode k with (k - 149) * 490 >= 39_000.
        let k = 149 + (39_000.0f64 / 490.0).ceil() as u64;
        assert_eq!(after, (k + 1) * 100 - 10_000);
        assert!(recovery_after(&log_of(&[10.0; 300]), 100, 10_000, 400.0).is_none());
    }
}
