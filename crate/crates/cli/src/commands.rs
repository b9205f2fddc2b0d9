use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use trainguard_core::drl::{imitation_error, AgentConfig};
use trainguard_core::trainer::{self, stats, Disturbance, Rollout, TrainOutput};
use trainguard_core::{Checkpoint, ControlCommand, EpisodeMetrics, Scenario, ScenarioConfig, Variant};

use crate::output::{self, CurveRow, EpisodeSummary, MetricsRow};
use crate::Common;

fn load_config(path: Option<&Path>) -> Result<ScenarioConfig> {
    match path {
        Some(p) => ScenarioConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(ScenarioConfig::bundled()),
    }
}

/// The validated scenario with the command-line overrides applied.
fn scenario(common: &Common) -> Result<Scenario> {
    let mut cfg = load_config(common.config.as_deref())?;
    if let Some(seeds) = &common.seeds {
        cfg.run.seeds = seeds.clone();
    }
    if let Some(agent) = common.agent {
        cfg.run.agent = agent;
    }
    if common.episodes.is_some() {
        cfg.run.episodes = common.episodes;
    }
    Ok(cfg.build()?)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

/// Runs `f` on every seed, `jobs` seeds at a time, keeping seed order.
fn per_seed<T, F>(seeds: &[u64], jobs: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    let mut out = Vec::with_capacity(seeds.len());
    for chunk in seeds.chunks(jobs.max(1)) {
        let results: Vec<Result<T>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk.iter().map(|&seed| { let f = &f; s.spawn(move || f(seed)) }).collect();
            handles.into_iter().map(|h| h.join().expect("seed worker panicked")).collect()
        });
        for r in results {
            out.push(r?);
        }
    }
    Ok(out)
}

fn metric_rows(seed: u64, ms: &[EpisodeMetrics]) -> Vec<MetricsRow> {
    ms.iter().map(|m| MetricsRow::new(seed, m)).collect()
}

fn rollout_metrics(rs: &[Rollout]) -> Vec<EpisodeMetrics> {
    rs.iter().map(|r| r.metrics.clone()).collect()
}

pub fn validate(config: Option<&Path>, print: bool) -> Result<()> {
    let cfg = match config {
        Some(p) => ScenarioConfig::parse(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => ScenarioConfig::bundled(),
    };
    let errs = cfg.validate();
    if !errs.is_empty() {
        for e in &errs {
            eprintln!("{e}");
        }
        bail!("{} invariant violation(s)", errs.len());
    }
    if print {
        print!("{}", cfg.to_toml());
    } else {
        println!("ok");
    }
    Ok(())
}

#[derive(Serialize)]
struct SeedReport {
    seed: u64,
    episodes: usize,
    training: EpisodeSummary,
    execution: EpisodeSummary,
    additional_converged: Option<bool>,
    /// Smoothed reward means of the first and last quarter of training.
    curve_quartiles: (f64, f64),
    checkpoint: PathBuf,
}

#[derive(Serialize)]
struct AgentReport {
    agent: Variant,
    seeds: Vec<SeedReport>,
    training: EpisodeSummary,
    execution: EpisodeSummary,
}

#[derive(Serialize)]
struct Decline {
    baseline: Variant,
    /// Percentage decline of mean training protect times.
    training_percent: Option<f64>,
    /// Percentage decline of mean execution protect times.
    execution_percent: Option<f64>,
}

#[derive(Serialize)]
struct TrainSummary {
    agents: Vec<AgentReport>,
    decline: Option<Decline>,
}

struct SeedRun {
    out: TrainOutput,
    exec: Vec<Rollout>,
}

fn train_agent(scn: &Scenario, agent: Variant, common: &Common, dir: &Path) -> Result<AgentReport> {
    let episodes = scn.run.episodes_for(agent);
    let eps = scn.agent.convergence_eps;
    let runs = per_seed(&scn.run.seeds, common.jobs, |seed| {
        let out = trainer::train(scn, agent, episodes, seed).with_context(|| format!("training {agent} seed {seed}"))?;
        let ck = out.checkpoint(eps);
        let exec = trainer::execute(scn, &ck, agent.uses_additional(), scn.run.execution_episodes, seed)
            .with_context(|| format!("executing {agent} seed {seed}"))?;
        Ok(SeedRun { out, exec })
    })?;

    let mut seeds = Vec::new();
    for SeedRun { out, exec } in &runs {
        let seed = out.seed;
        let stem = format!("{agent}-seed{seed}");
        output::write_csv(&dir.join(format!("{stem}-metrics.csv")), &metric_rows(seed, &out.metrics))?;
        let exec_ms = rollout_metrics(exec);
        output::write_csv(&dir.join(format!("{stem}-exec.csv")), &metric_rows(seed, &exec_ms))?;
        let rewards: Vec<f64> = out.metrics.iter().map(|m| m.total_reward).collect();
        let curve = output::curve(&rewards);
        output::write_csv(&dir.join(format!("{stem}-curve.csv")), &curve)?;
        let ck_path = dir.join(format!("{stem}.ckpt.json"));
        out.checkpoint(eps).save(&ck_path)?;
        let smoothed: Vec<f64> = curve.iter().map(|c| c.smoothed).collect();
        seeds.push(SeedReport {
            seed,
            episodes: out.metrics.len(),
            training: EpisodeSummary::of(&out.metrics),
            execution: EpisodeSummary::of(&exec_ms),
            additional_converged: agent.uses_additional().then(|| out.converged(eps)),
            curve_quartiles: stats::quartile_means(&smoothed),
            checkpoint: ck_path,
        });
    }
    let all_exec: Vec<EpisodeMetrics> = runs.iter().flat_map(|r| rollout_metrics(&r.exec)).collect();
    Ok(AgentReport {
        agent,
        training: EpisodeSummary::of(runs.iter().flat_map(|r| &r.out.metrics)),
        execution: EpisodeSummary::of(&all_exec),
        seeds,
    })
}

pub fn train(common: &Common, compare: bool) -> Result<()> {
    let scn = scenario(common)?;
    let dir = output::out_dir(&common.out)?;
    let agent = scn.run.agent;
    let mut agents = vec![train_agent(&scn, agent, common, &dir)?];
    let baseline = agent.shield_counterpart();
    let mut decline = None;
    if compare && baseline != agent {
        let base = train_agent(&scn, baseline, common, &dir)?;
        decline = Some(Decline {
            baseline,
            training_percent: stats::decline_percent(
                agents[0].training.mean_protect_times,
                base.training.mean_protect_times,
            ),
            execution_percent: stats::decline_percent(
                agents[0].execution.mean_protect_times,
                base.execution.mean_protect_times,
            ),
        });
        agents.push(base);
    }
    for a in &agents {
        println!(
            "{}: training protect {:.2}, execution protect {:.2}, overspeed {}",
            a.agent,
            a.training.mean_protect_times,
            a.execution.mean_protect_times,
            a.training.overspeed_steps + a.execution.overspeed_steps
        );
    }
    output::write_json(&dir.join("summary.json"), &TrainSummary { agents, decline })
}

#[derive(Serialize)]
struct ExecSummary {
    checkpoint: PathBuf,
    agent: Variant,
    additional_actor: bool,
    seeds: Vec<u64>,
    execution: EpisodeSummary,
}

fn run_executions(scn: &Scenario, common: &Common, ck: &Checkpoint, use_additional: bool) -> Result<Vec<MetricsRow>> {
    let episodes = common.episodes.unwrap_or(scn.run.execution_episodes);
    let per = per_seed(&scn.run.seeds, common.jobs, |seed| {
        let rs = trainer::execute(scn, ck, use_additional, episodes, seed)?;
        Ok(metric_rows(seed, &rollout_metrics(&rs)))
    })?;
    Ok(per.into_iter().flatten().collect())
}

fn rows_summary(rows: &[MetricsRow]) -> EpisodeSummary {
    let ms: Vec<EpisodeMetrics> = rows
        .iter()
        .map(|r| EpisodeMetrics {
            episode: r.episode,
            total_reward: r.reward,
            protect_times: r.protect_times,
            overspeed_steps: r.overspeed,
            traction_energy: r.energy,
            run_time: r.time,
            schedule_deviation: r.deviation,
            arrived: r.arrived,
            ..Default::default()
        })
        .collect();
    EpisodeSummary::of(&ms)
}

pub fn execute(common: &Common, checkpoint: &Path, use_additional: bool) -> Result<()> {
    let scn = scenario(common)?;
    let ck = load_checkpoint(checkpoint)?;
    let dir = output::out_dir(&common.out)?;
    let use_additional = use_additional && ck.additional.is_some();
    let rows = run_executions(&scn, common, &ck, use_additional)?;
    output::write_csv(&dir.join("execute-metrics.csv"), &rows)?;
    let summary = ExecSummary {
        checkpoint: checkpoint.to_path_buf(),
        agent: ck.variant,
        additional_actor: use_additional,
        seeds: scn.run.seeds.clone(),
        execution: rows_summary(&rows),
    };
    println!(
        "{}: execution protect {:.2}, overspeed {}, arrived {}/{}",
        ck.variant,
        summary.execution.mean_protect_times,
        summary.execution.overspeed_steps,
        summary.execution.arrived,
        summary.execution.episodes
    );
    output::write_json(&dir.join("execute-summary.json"), &summary)
}

#[derive(Serialize)]
struct NoiseSummary {
    command: f64,
    result: EpisodeSummary,
}

fn noise_rows(scn: &Scenario, common: &Common, cmd: ControlCommand) -> Result<Vec<MetricsRow>> {
    let episodes = common.episodes.unwrap_or(1);
    let per = per_seed(&scn.run.seeds, common.jobs, |seed| {
        let rs = trainer::noise_test(scn, cmd, episodes, seed)?;
        Ok(metric_rows(seed, &rollout_metrics(&rs)))
    })?;
    Ok(per.into_iter().flatten().collect())
}

pub fn noise_test(common: &Common, command: f64) -> Result<()> {
    let scn = scenario(common)?;
    let cmd = ControlCommand::new(command)?;
    let dir = output::out_dir(&common.out)?;
    let rows = noise_rows(&scn, common, cmd)?;
    output::write_csv(&dir.join("noise-metrics.csv"), &rows)?;
    let summary = NoiseSummary { command, result: rows_summary(&rows) };
    println!(
        "noise test {command:+}: protect {:.2}, arrived {}/{}",
        summary.result.mean_protect_times, summary.result.arrived, summary.result.episodes
    );
    output::write_json(&dir.join("noise-summary.json"), &summary)
}

#[derive(Serialize)]
struct RobustnessRow {
    seed: u64,
    probability: f64,
    magnitude: f64,
    pcc_speed: Option<f64>,
    pcc_action: Option<f64>,
    pcc_accel: Option<f64>,
    arrived: bool,
    overspeed: usize,
    protect_times: usize,
}

pub fn robustness(common: &Common, checkpoint: &Path, grid: &[f64], use_additional: bool) -> Result<()> {
    let scn = scenario(common)?;
    let ck = load_checkpoint(checkpoint)?;
    let dir = output::out_dir(&common.out)?;
    if let Some(bad) = grid.iter().find(|g| !(0.0..=1.0).contains(*g)) {
        bail!("grid value {bad} outside [0, 1]");
    }
    let per = per_seed(&scn.run.seeds, common.jobs, |seed| {
        let mut rows = Vec::new();
        for &probability in grid {
            for &magnitude in grid {
                let r = trainer::robustness_run(&scn, &ck, use_additional, Disturbance { probability, magnitude }, seed)?;
                rows.push(RobustnessRow {
                    seed,
                    probability,
                    magnitude,
                    pcc_speed: r.pcc.speed,
                    pcc_action: r.pcc.action,
                    pcc_accel: r.pcc.accel,
                    arrived: r.disturbed.metrics.arrived,
                    overspeed: r.disturbed.metrics.overspeed_steps,
                    protect_times: r.disturbed.metrics.protect_times,
                });
            }
        }
        Ok(rows)
    })?;
    let rows: Vec<RobustnessRow> = per.into_iter().flatten().collect();
    let min_speed = rows.iter().filter_map(|r| r.pcc_speed).fold(f64::INFINITY, f64::min);
    println!("{} disturbed runs, minimum speed PCC {min_speed:.4}", rows.len());
    output::write_csv(&dir.join("robustness.csv"), &rows)
}

/// Hidden layers of the ablated additional actors.
pub fn ablation_structures(base: &[usize]) -> Vec<(&'static str, Vec<usize>)> {
    let scale = |num: usize, den: usize| base.iter().map(|w| (w * num / den).max(1)).collect::<Vec<_>>();
    let mut deeper = base.to_vec();
    deeper.push(*base.last().unwrap_or(&64));
    let shallower = if base.len() > 1 { base[..base.len() - 1].to_vec() } else { base.to_vec() };
    vec![
        ("half", scale(1, 2)),
        ("quarter", scale(1, 4)),
        ("double", scale(2, 1)),
        ("quadruple", scale(4, 1)),
        ("deeper", deeper),
        ("shallower", shallower),
    ]
}

#[derive(Serialize)]
struct AblationRow {
    structure: String,
    hidden: String,
    seed: u64,
    converged: bool,
    /// Largest per-trajectory imitation error over the elite buffer.
    max_imitation_error: Option<f64>,
    exec_protect_times: f64,
    exec_reward: f64,
    exec_arrived: usize,
    exec_overspeed: usize,
}

pub fn ablation(common: &Common) -> Result<()> {
    let scn = scenario(common)?;
    let agent = scn.run.agent;
    if !agent.uses_additional() {
        bail!("ablation needs an SSA agent, got {agent}");
    }
    let dir = output::out_dir(&common.out)?;
    let base = scn.agent.additional_hidden_layers.clone().unwrap_or_else(|| scn.agent.hidden_layers.clone());
    let episodes = scn.run.episodes_for(agent);
    let eps = scn.agent.convergence_eps;
    let mut structures = vec![("base", base.clone())];
    structures.extend(ablation_structures(&base));
    let mut rows = Vec::new();
    for (name, hidden) in structures {
        let mut s = scn.clone();
        s.agent = AgentConfig { additional_hidden_layers: Some(hidden.clone()), ..scn.agent.clone() };
        let per = per_seed(&scn.run.seeds, common.jobs, |seed| {
            let out = trainer::train(&s, agent, episodes, seed)?;
            let ck = out.checkpoint(eps);
            let exec = rollout_metrics(&trainer::execute(&s, &ck, true, s.run.execution_episodes, seed)?);
            output::write_csv(&dir.join(format!("ablation-{name}-seed{seed}-metrics.csv")), &metric_rows(seed, &out.metrics))?;
            let max_err = out.additional.as_ref().and_then(|a| {
                out.elite.trajectories().iter().map(|t| imitation_error(&a.net, t)).reduce(f64::max)
            });
            let sum = EpisodeSummary::of(&exec);
            Ok(AblationRow {
                structure: name.to_string(),
                hidden: hidden.iter().map(|w| w.to_string()).collect::<Vec<_>>().join("x"),
                seed,
                converged: out.converged(eps),
                max_imitation_error: max_err,
                exec_protect_times: sum.mean_protect_times,
                exec_reward: sum.mean_reward,
                exec_arrived: sum.arrived,
                exec_overspeed: sum.overspeed_steps,
            })
        })?;
        for r in &per {
            println!("{:10} seed {}: converged {}, execution protect {:.2}", r.structure, r.seed, r.converged, r.exec_protect_times);
        }
        rows.extend(per);
    }
    output::write_csv(&dir.join("ablation.csv"), &rows)
}

#[derive(Serialize)]
struct TransferSummary {
    checkpoint: PathBuf,
    agent: Variant,
    execution: EpisodeSummary,
    noise_test: EpisodeSummary,
    /// Execution protect times at most half of the all-traction noise test.
    far_less_than_noise_test: bool,
}

pub fn transfer(common: &Common, checkpoint: &Path, use_additional: bool) -> Result<()> {
    let scn = scenario(common)?;
    let ck = load_checkpoint(checkpoint)?;
    let dir = output::out_dir(&common.out)?;
    let use_additional = use_additional && ck.additional.is_some();
    let rows = run_executions(&scn, common, &ck, use_additional)?;
    output::write_csv(&dir.join("transfer-metrics.csv"), &rows)?;
    let noise_common = Common { episodes: None, ..common.clone() };
    let noise = noise_rows(&scn, &noise_common, ControlCommand::FULL_TRACTION)?;
    output::write_csv(&dir.join("transfer-noise-metrics.csv"), &noise)?;
    let execution = rows_summary(&rows);
    let noise_test = rows_summary(&noise);
    let flag = execution.mean_protect_times <= 0.5 * noise_test.mean_protect_times;
    println!(
        "transfer: execution protect {:.2} vs noise test {:.2} -> far less: {flag}",
        execution.mean_protect_times, noise_test.mean_protect_times
    );
    output::write_json(
        &dir.join("transfer-summary.json"),
        &TransferSummary {
            checkpoint: checkpoint.to_path_buf(),
            agent: ck.variant,
            execution,
            noise_test,
            far_less_than_noise_test: flag,
        },
    )
}

pub fn report(path: &Path) -> Result<()> {
    let rows: Vec<MetricsRow> = output::read_csv(path)?;
    if rows.is_empty() {
        bail!("{} has no rows", path.display());
    }
    let mut seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
    seeds.dedup();
    for seed in seeds {
        let sub: Vec<MetricsRow> = rows.iter().filter(|r| r.seed == seed).cloned().collect();
        let s = rows_summary(&sub);
        let rewards: Vec<f64> = sub.iter().map(|r| r.reward).collect();
        let smoothed: Vec<f64> = output::curve(&rewards).into_iter().map(|c: CurveRow| c.smoothed).collect();
        let (q1, q4) = stats::quartile_means(&smoothed);
        println!(
            "seed {seed}: {} episodes, reward {:.2}, protect {:.2}, overspeed {}, arrived {}, smoothed quartiles {q1:.2} -> {q4:.2}",
            s.episodes, s.mean_reward, s.mean_protect_times, s.overspeed_steps, s.arrived
        );
    }
    Ok(())
}
