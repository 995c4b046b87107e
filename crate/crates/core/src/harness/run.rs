//! The training loop: environment stepping, replay storage, update bursts,
//! periodic deterministic evaluation, and JSON-lines run logs.

use super::{ConfigError, ExperimentConfig};
use crate::agent::Ensemble;
use crate::envs::{make_wrapped, Env, EnvError, RunningNormalizer, WrapperChain};
use crate::metrics::{self, EvalPhase, RunSeries};
use crate::replay::{ere_window, EreState, ReplayBuffer, ReplayError};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufRead, BufWriter, Write as _};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Phase lag used for the end-of-run deterioration measure.
pub const RMSD_LAG: usize = 20;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("environment error at step {step}: {source}")]
    Env { step: u64, source: EnvError },
    #[error("replay rejected a transition at step {step}: {source}")]
    Replay { step: u64, source: ReplayError },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("training diverged at env step {step}: {what}")]
    Diverged { step: u64, what: String },
    #[error("bad run log {path}: {what}")]
    LogParse { path: String, what: String },
    #[error("all {0} seeds failed")]
    AllSeedsFailed(usize),
}

/// One line of a run log. Serialized field order is fixed by the declaration,
/// which keeps re-runs byte-identical.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogRecord {
    Header {
        config_hash: String,
        seed: u64,
        env: String,
        variant: String,
        total_steps: usize,
        eval_episodes: usize,
    },
    /// A finished training episode.
    Episode {
        env_step: u64,
        #[serde(rename = "return")]
        ret: f64,
        len: usize,
    },
    /// One evaluation phase: the greedy ensemble policy and every member
    /// rolled out on fresh episodes with a dedicated seed stream.
    Eval {
        env_step: u64,
        returns: Vec<f64>,
        mean: f64,
        std: f64,
        member_mean: Vec<f64>,
        member_std: Vec<f64>,
        solved_episodes: usize,
    },
    Final {
        env_steps: u64,
        updates: u64,
        episodes: usize,
        rmsd: Option<f64>,
        /// Losses from the last update burst; absent when no update ran.
        critic_loss: Option<f64>,
        actor_loss: Option<f64>,
    },
    Abort {
        env_step: u64,
        reason: String,
    },
}

/// Everything a finished run hands back to suites and summaries.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub seed: u64,
    pub config_hash: String,
    pub env: String,
    pub variant: String,
    pub log_path: PathBuf,
    pub phases: Vec<EvalPhase>,
    /// Per phase, per member: sample std of that member's eval returns.
    pub member_stds: Vec<Vec<f64>>,
    pub member_means: Vec<Vec<f64>>,
    pub episode_returns: Vec<(u64, f64)>,
    /// First env step whose evaluation phase contained a solved episode.
    pub solved_first_step: Option<u64>,
    pub rmsd: Option<f64>,
    pub critic_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub updates: u64,
}

impl RunOutcome {
    pub fn series(&self) -> RunSeries {
        RunSeries {
            seed: self.seed,
            config_hash: self.config_hash.clone(),
            phases: self.phases.clone(),
        }
    }
}

/// Splitmix64 folded over a label sequence; every RNG stream and episode seed
/// in a run is derived this way from the run seed, so streams never alias.
pub fn mix(parts: &[u64]) -> u64 {
    let mut h = 0x9e3779b97f4a7c15u64;
    for &p in parts {
        let mut z = h ^ p.wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        h = z ^ (z >> 31);
    }
    h
}

// stream labels for mix()
const STREAM_AGENT: u64 = 1;
const STREAM_EXPLORE: u64 = 2;
const STREAM_ACTOR_PICK: u64 = 3;
const STREAM_UPDATE: u64 = 4;
const STREAM_MASKS: u64 = 5;
const STREAM_EPISODE: u64 = 6;
const STREAM_EVAL: u64 = 7;

fn sample_std(values: &[f64]) -> f64 {
    metrics::mean_std(values).map(|(_, s)| s).unwrap_or(0.0)
}

struct Normalizers {
    obs: Option<RunningNormalizer>,
    rew: Option<RunningNormalizer>,
}

impl Normalizers {
    fn new(chain: &WrapperChain, obs_dim: usize) -> Normalizers {
        Normalizers {
            obs: chain.obs_norm.then(|| RunningNormalizer::new(obs_dim)),
            rew: chain.rew_norm.then(|| RunningNormalizer::new(1)),
        }
    }

    fn observe(&mut self, s: &[f64]) {
        if let Some(n) = &mut self.obs {
            n.update(s);
        }
    }

    fn policy_input(&self, s: &[f64]) -> Vec<f64> {
        match &self.obs {
            Some(n) => n.normalize(s),
            None => s.to_vec(),
        }
    }
}

fn rollout(
    env: &mut dyn Env,
    seed: u64,
    obs_norm: Option<&RunningNormalizer>,
    mut policy: impl FnMut(&[f64]) -> Vec<f64>,
) -> Result<(f64, bool), EnvError> {
    let mut s = env.reset(seed);
    let mut total = 0.0;
    let mut solved = false;
    loop {
        let input = match obs_norm {
            Some(n) => n.normalize(&s),
            None => s.clone(),
        };
        let r = env.step(&policy(&input))?;
        total += r.reward;
        solved = solved || env.solved();
        s = r.next_state;
        if r.done || r.truncated {
            return Ok((total, solved));
        }
    }
}

/// Rolls the greedy ensemble policy and each member over fresh episodes.
/// Borrows the agent immutably and works on frozen normalizer copies, so
/// evaluation cannot disturb training state.
fn eval_phase(
    cfg: &ExperimentConfig,
    chain: &WrapperChain,
    ens: &Ensemble,
    norms: &Normalizers,
    run_seed: u64,
    phase_idx: u64,
    env_step: u64,
) -> Result<LogRecord, RunError> {
    let mut env = make_wrapped(&cfg.env, chain).expect("config validated");
    let frozen = norms.obs.as_ref();
    let wrap = |e: EnvError| RunError::Env { step: env_step, source: e };

    let mut returns = Vec::with_capacity(cfg.eval_episodes);
    let mut solved_episodes = 0;
    for ep in 0..cfg.eval_episodes {
        let seed = mix(&[run_seed, STREAM_EVAL, phase_idx, 0, ep as u64]);
        let (ret, solved) =
            rollout(&mut *env, seed, frozen, |s| ens.evaluate_action(s)).map_err(wrap)?;
        returns.push(ret);
        solved_episodes += solved as usize;
    }

    let mut member_mean = Vec::with_capacity(ens.k());
    let mut member_std = Vec::with_capacity(ens.k());
    for i in 0..ens.k() {
        let mut rets = Vec::with_capacity(cfg.eval_episodes);
        for ep in 0..cfg.eval_episodes {
            let seed = mix(&[run_seed, STREAM_EVAL, phase_idx, 1 + i as u64, ep as u64]);
            let (ret, _) =
                rollout(&mut *env, seed, frozen, |s| ens.member_action(i, s)).map_err(wrap)?;
            rets.push(ret);
        }
        member_mean.push(metrics::mean(&rets));
        member_std.push(sample_std(&rets));
    }

    Ok(LogRecord::Eval {
        env_step,
        mean: metrics::mean(&returns),
        std: sample_std(&returns),
        returns,
        member_mean,
        member_std,
        solved_episodes,
    })
}

/// Trains one seed to completion and writes its log under `out_dir`.
///
/// Cadence: one uniform-random action per step during warm-up, then the
/// exploration policy; a burst of updates every `update_interval` steps sized
/// to the steps since the last burst (so update count tracks env steps); the
/// recency window is re-annealed from the whole buffer within each burst;
/// evaluation every `eval_every` steps. Identical config and seed give a
/// byte-identical log file.
pub fn train_run(
    cfg: &ExperimentConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<RunOutcome, RunError> {
    cfg.validate()?;
    let chain = crate::envs::parse_wrappers(&cfg.wrappers).expect("config validated");
    let mut env = make_wrapped(&cfg.env, &chain).expect("config validated");
    let spec = env.spec().clone();
    let max_action = spec.max_action;

    let hash = cfg.hash();
    fs::create_dir_all(out_dir)?;
    let log_path = out_dir.join(format!("run_{hash}_s{seed}.jsonl"));
    let mut log = BufWriter::new(fs::File::create(&log_path)?);
    let emit = |log: &mut BufWriter<fs::File>, rec: &LogRecord| -> Result<(), RunError> {
        let line = serde_json::to_string(rec).expect("record serializes");
        log.write_all(line.as_bytes())?;
        log.write_all(b"\n")?;
        Ok(())
    };

    emit(
        &mut log,
        &LogRecord::Header {
            config_hash: hash.clone(),
            seed,
            env: cfg.env.clone(),
            variant: cfg.variant_label(),
            total_steps: cfg.total_steps,
            eval_episodes: cfg.eval_episodes,
        },
    )?;

    let mut ens = Ensemble::new(
        spec.state_dim,
        spec.action_dim,
        max_action,
        &cfg.agent_hyper(),
        cfg.flags.clone(),
        mix(&[seed, STREAM_AGENT]),
    );
    let n_masks = if cfg.flags.data_bootstrap { cfg.k } else { 0 };
    let mut buffer = ReplayBuffer::new(cfg.buffer_size, spec.state_dim, spec.action_dim, n_masks);
    let mut norms = Normalizers::new(&chain, spec.state_dim);
    let mut ere = EreState::new(cfg.eta0);

    let mut explore_rng = ChaCha8Rng::seed_from_u64(mix(&[seed, STREAM_EXPLORE]));
    let mut actor_rng = ChaCha8Rng::seed_from_u64(mix(&[seed, STREAM_ACTOR_PICK]));
    let mut update_rng = ChaCha8Rng::seed_from_u64(mix(&[seed, STREAM_UPDATE]));
    let mut mask_rng = ChaCha8Rng::seed_from_u64(mix(&[seed, STREAM_MASKS]));

    let mut episode_idx: u64 = 0;
    let mut state = env.reset(mix(&[seed, STREAM_EPISODE, episode_idx]));
    norms.observe(&state);
    ens.select_episode_actor(&mut actor_rng);
    let mut ep_return = 0.0;
    let mut ep_len = 0usize;

    let mut phases: Vec<EvalPhase> = Vec::new();
    let mut member_stds: Vec<Vec<f64>> = Vec::new();
    let mut member_means: Vec<Vec<f64>> = Vec::new();
    let mut episode_returns: Vec<(u64, f64)> = Vec::new();
    let mut solved_first_step: Option<u64> = None;
    let mut episodes_done = 0usize;
    let mut last_burst = 0usize;
    let mut phase_idx = 0u64;
    let mut last_losses: Option<(f64, f64)> = None;

    for step in 1..=cfg.total_steps {
        let action = if step <= cfg.warmup_steps {
            (0..spec.action_dim)
                .map(|_| explore_rng.random_range(-max_action..=max_action))
                .collect::<Vec<f64>>()
        } else {
            ens.explore_action(&norms.policy_input(&state), &mut explore_rng)
        };

        let res = env.step(&action).map_err(|e| RunError::Env { step: step as u64, source: e })?;
        if let Some(rn) = &mut norms.rew {
            rn.update(&[res.reward]);
        }
        ep_return += res.reward;
        ep_len += 1;

        let mask = cfg
            .flags
            .data_bootstrap
            .then_some((&mut mask_rng, 0.5));
        buffer
            .store(&state, &action, res.reward, &res.next_state, res.done, mask)
            .map_err(|e| RunError::Replay { step: step as u64, source: e })?;
        norms.observe(&res.next_state);
        state = res.next_state;

        if res.done || res.truncated {
            emit(
                &mut log,
                &LogRecord::Episode { env_step: step as u64, ret: ep_return, len: ep_len },
            )?;
            episode_returns.push((step as u64, ep_return));
            ere.on_episode_end(ep_return, buffer.len(), spec.episode_length);
            episodes_done += 1;
            episode_idx += 1;
            state = env.reset(mix(&[seed, STREAM_EPISODE, episode_idx]));
            norms.observe(&state);
            ens.select_episode_actor(&mut actor_rng);
            ep_return = 0.0;
            ep_len = 0;
        }

        if step % cfg.update_interval == 0 {
            let burst = step - last_burst;
            last_burst = step;
            let eta = ere.eta();
            let c_min = buffer.min_window(cfg.batch_size);
            for b in 1..=burst {
                let window = ere_window(buffer.len(), eta, b, burst, c_min);
                let idx = buffer.sample_recent_indices(cfg.batch_size, window, &mut update_rng);
                let mut batch = buffer.gather(&idx);
                if let Some(n) = &norms.obs {
                    for row in batch.obs.chunks_mut(spec.state_dim) {
                        n.normalize_into(row);
                    }
                    for row in batch.next_obs.chunks_mut(spec.state_dim) {
                        n.normalize_into(row);
                    }
                }
                if let Some(rn) = &norms.rew {
                    for r in &mut batch.rew {
                        *r = rn.scale(*r);
                    }
                }
                let losses = ens.update_step(&batch, &mut update_rng);
                last_losses = Some((losses.critic, losses.actor));
                if !losses.critic.is_finite() || !losses.actor.is_finite() {
                    let reason = format!(
                        "non-finite loss (critic {}, actor {})",
                        losses.critic, losses.actor
                    );
                    emit(
                        &mut log,
                        &LogRecord::Abort { env_step: step as u64, reason: reason.clone() },
                    )?;
                    log.flush()?;
                    return Err(RunError::Diverged { step: step as u64, what: reason });
                }
            }
        }

        if step % cfg.eval_every == 0 {
            let rec = eval_phase(cfg, &chain, &ens, &norms, seed, phase_idx, step as u64)?;
            if let LogRecord::Eval {
                env_step,
                returns,
                member_mean,
                member_std,
                solved_episodes,
                ..
            } = &rec
            {
                phases.push(EvalPhase { env_step: *env_step, returns: returns.clone() });
                member_means.push(member_mean.clone());
                member_stds.push(member_std.clone());
                if *solved_episodes > 0 && solved_first_step.is_none() {
                    solved_first_step = Some(*env_step);
                }
            }
            emit(&mut log, &rec)?;
            phase_idx += 1;
        }
    }

    let phase_means: Vec<f64> = phases.iter().map(|p| metrics::mean(&p.returns)).collect();
    let rmsd = metrics::rmsd(&phase_means, RMSD_LAG).ok();
    emit(
        &mut log,
        &LogRecord::Final {
            env_steps: cfg.total_steps as u64,
            updates: ens.updates_done(),
            episodes: episodes_done,
            rmsd,
            critic_loss: last_losses.map(|l| l.0),
            actor_loss: last_losses.map(|l| l.1),
        },
    )?;
    log.flush()?;

    Ok(RunOutcome {
        seed,
        config_hash: hash,
        env: cfg.env.clone(),
        variant: cfg.variant_label(),
        log_path,
        phases,
        member_stds,
        member_means,
        episode_returns,
        solved_first_step,
        rmsd,
        critic_loss: last_losses.map(|l| l.0),
        actor_loss: last_losses.map(|l| l.1),
        updates: ens.updates_done(),
    })
}

/// Outcome of a multi-seed suite. Failed seeds are reported, not fatal,
/// unless every seed failed.
#[derive(Debug)]
pub struct SuiteOutcome {
    pub outcomes: Vec<RunOutcome>,
    pub failures: Vec<(u64, String)>,
    pub summary_path: PathBuf,
    pub summary_csv: String,
}

/// Runs each seed in its own worker thread (each run owns its env, buffer and
/// ensemble) and writes one summary CSV. The summary depends only on the set
/// of seeds, not their order.
pub fn run_suite(
    cfg: &ExperimentConfig,
    seeds: &[u64],
    out_dir: &Path,
) -> Result<SuiteOutcome, RunError> {
    cfg.validate()?;
    assert!(!seeds.is_empty(), "suite needs at least one seed");

    let mut results: Vec<(u64, Result<RunOutcome, RunError>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| (seed, scope.spawn(move || train_run(cfg, seed, out_dir))))
            .collect();
        handles
            .into_iter()
            .map(|(seed, h)| (seed, h.join().expect("run thread panicked")))
            .collect()
    });
    results.sort_by_key(|(seed, _)| *seed);

    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    for (seed, res) in results {
        match res {
            Ok(o) => outcomes.push(o),
            Err(e) => failures.push((seed, e.to_string())),
        }
    }
    if outcomes.is_empty() {
        return Err(RunError::AllSeedsFailed(failures.len()));
    }

    let summary_csv = super::plot::summary_from_outcomes(&outcomes);
    let summary_path = out_dir.join(format!("summary_{}.csv", cfg.hash()));
    fs::write(&summary_path, &summary_csv)?;
    Ok(SuiteOutcome { outcomes, failures, summary_path, summary_csv })
}

/// A run log read back from disk; the shape the metrics and plot-data
/// commands consume.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub path: PathBuf,
    pub config_hash: String,
    pub seed: u64,
    pub env: String,
    pub variant: String,
    pub phases: Vec<EvalPhase>,
    pub member_stds: Vec<Vec<f64>>,
    pub solved_first_step: Option<u64>,
    pub rmsd: Option<f64>,
    pub critic_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub aborted: Option<String>,
}

impl LoadedRun {
    pub fn series(&self) -> RunSeries {
        RunSeries {
            seed: self.seed,
            config_hash: self.config_hash.clone(),
            phases: self.phases.clone(),
        }
    }
}

/// Parses JSON-lines run logs. Ordering of the result is by (config hash,
/// seed, path) so downstream output is independent of argument order.
pub fn load_run_series(paths: &[PathBuf]) -> Result<Vec<LoadedRun>, RunError> {
    let mut runs = Vec::with_capacity(paths.len());
    for path in paths {
        let bad = |what: String| RunError::LogParse { path: path.display().to_string(), what };
        let file = fs::File::open(path)?;
        let mut lines = std::io::BufReader::new(file).lines();
        let first = lines
            .next()
            .ok_or_else(|| bad("empty log".into()))??;
        let header: LogRecord =
            serde_json::from_str(&first).map_err(|e| bad(format!("bad header: {e}")))?;
        let LogRecord::Header { config_hash, seed, env, variant, .. } = header else {
            return Err(bad("first record is not a header".into()));
        };
        let mut run = LoadedRun {
            path: path.clone(),
            config_hash,
            seed,
            env,
            variant,
            phases: Vec::new(),
            member_stds: Vec::new(),
            solved_first_step: None,
            rmsd: None,
            critic_loss: None,
            actor_loss: None,
            aborted: None,
        };
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: LogRecord = serde_json::from_str(&line)
                .map_err(|e| bad(format!("line {}: {e}", lineno + 2)))?;
            match rec {
                LogRecord::Header { .. } => {
                    return Err(bad(format!("line {}: duplicate header", lineno + 2)))
                }
                LogRecord::Eval { env_step, returns, member_std, solved_episodes, .. } => {
                    if solved_episodes > 0 && run.solved_first_step.is_none() {
                        run.solved_first_step = Some(env_step);
                    }
                    run.phases.push(EvalPhase { env_step, returns });
                    run.member_stds.push(member_std);
                }
                LogRecord::Final { rmsd, critic_loss, actor_loss, .. } => {
                    run.rmsd = rmsd;
                    run.critic_loss = critic_loss;
                    run.actor_loss = actor_loss;
                }
                LogRecord::Abort { reason, .. } => run.aborted = Some(reason),
                LogRecord::Episode { .. } => {}
            }
        }
        runs.push(run);
    }
    runs.sort_by(|a, b| {
        (&a.config_hash, a.seed, &a.path).cmp(&(&b.config_hash, b.seed, &b.path))
    });
    Ok(runs)
}
