//! Experiment orchestration: config file handling, the training loop with
//! its evaluation cadence, multi-seed suites, and the log/CSV emitters the
//! command-line tools are built on.

mod plot;
mod run;

pub use plot::{emit_plot_data, metrics_csv, PlotError, LATE_PHASES};
pub use run::{
    load_run_series, mix, run_suite, train_run, LoadedRun, LogRecord, RunError, RunOutcome,
    SuiteOutcome, RMSD_LAG,
};

use crate::agent::{AgentHyper, VariantFlags, VoteMode};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("bad value for {key}: {reason}")]
    BadValue { key: String, reason: String },
    #[error("line {0} is not a key = value pair")]
    BadLine(usize),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Everything one run needs, parseable from a flat key = value file.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: String,
    pub wrappers: String,
    pub k: usize,
    pub hidden_width: usize,
    pub gamma: f64,
    pub lr: f64,
    pub buffer_size: usize,
    pub batch_size: usize,
    pub update_interval: usize,
    pub eta0: f64,
    pub sigma_smooth: f64,
    pub rho: f64,
    pub total_steps: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub warmup_steps: usize,
    /// Seeds a suite runs; single-run commands pick one explicitly.
    pub seeds: Vec<u64>,
    pub flags: VariantFlags,
}

impl Default for ExperimentConfig {
    /// Desk-scale defaults: small nets and buffers sized so a full run fits
    /// in minutes on one core.
    fn default() -> ExperimentConfig {
        ExperimentConfig {
            env: "pendulum".into(),
            wrappers: String::new(),
            k: 5,
            hidden_width: 64,
            gamma: 0.99,
            lr: 1e-4,
            buffer_size: 100_000,
            batch_size: 256,
            update_interval: 50,
            eta0: 0.995,
            sigma_smooth: 0.2,
            rho: 0.995,
            total_steps: 50_000,
            eval_every: 2_000,
            eval_episodes: 30,
            warmup_steps: 1_000,
            seeds: vec![0, 1, 2, 3, 4],
            flags: VariantFlags::default(),
        }
    }
}

fn vote_mode_str(m: VoteMode) -> &'static str {
    match m {
        VoteMode::Off => "off",
        VoteMode::ArbitraryCritic => "arbitrary_critic",
        VoteMode::EnsembleCritic => "ensemble_critic",
    }
}

impl ExperimentConfig {
    /// Switch the scale-dependent fields to the published full-scale values.
    pub fn apply_paper_scale(&mut self) {
        self.hidden_width = 256;
        self.buffer_size = 1_000_000;
        self.total_steps = 1_000_000;
        self.eval_every = 10_000;
    }

    pub fn agent_hyper(&self) -> AgentHyper {
        AgentHyper {
            k: self.k,
            hidden: vec![self.hidden_width, self.hidden_width],
            gamma: self.gamma,
            lr: self.lr,
            sigma_smooth: self.sigma_smooth,
            rho: self.rho,
        }
    }

    /// Canonical text form; parsing it back yields an equal config.
    pub fn to_text(&self) -> String {
        let f = &self.flags;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("env", self.env.clone());
        kv("wrappers", self.wrappers.clone());
        kv("k", self.k.to_string());
        kv("hidden_width", self.hidden_width.to_string());
        kv("gamma", self.gamma.to_string());
        kv("lr", self.lr.to_string());
        kv("buffer_size", self.buffer_size.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("update_interval", self.update_interval.to_string());
        kv("eta0", self.eta0.to_string());
        kv("sigma_smooth", self.sigma_smooth.to_string());
        kv("rho", self.rho.to_string());
        kv("total_steps", self.total_steps.to_string());
        kv("eval_every", self.eval_every.to_string());
        kv("eval_episodes", self.eval_episodes.to_string());
        kv("warmup_steps", self.warmup_steps.to_string());
        kv(
            "seeds",
            self.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","),
        );
        kv("gaussian_noise_std", f.gaussian_noise_std.to_string());
        kv("ucb_enabled", f.ucb_enabled.to_string());
        kv("lambda_ucb", f.lambda_ucb.to_string());
        kv("weighted_backup", f.weighted_backup_enabled.to_string());
        kv("eps_w", f.eps_w.to_string());
        kv("t_w", f.t_w.to_string());
        kv("clipped_double_q", f.clipped_double_q.to_string());
        kv("vote_mode", vote_mode_str(f.vote_mode).to_string());
        kv("prior_nets", f.prior_nets_enabled.to_string());
        kv("prior_beta", f.prior_beta.to_string());
        kv("data_bootstrap", f.data_bootstrap.to_string());
        kv("single_critic", f.single_critic.to_string());
        kv("shared_actor_init", f.shared_actor_init.to_string());
        kv("single_actor_explore", f.single_actor_explore.to_string());
        kv("single_actor_eval", f.single_actor_eval.to_string());
        kv("action_norm", f.action_norm.to_string());
        kv("huber", f.huber.to_string());
        s
    }

    /// Parse overrides on top of the defaults. Unknown keys and malformed
    /// values are rejected, never ignored.
    pub fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::BadLine(lineno + 1))?;
            let key = key.trim();
            let value = value.trim();
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            v.parse().map_err(|e| ConfigError::BadValue {
                key: key.to_string(),
                reason: format!("{e}"),
            })
        }
        let f = &mut self.flags;
        match key {
            "env" => self.env = value.to_string(),
            "wrappers" => self.wrappers = value.to_string(),
            "k" => self.k = num(key, value)?,
            "hidden_width" => self.hidden_width = num(key, value)?,
            "gamma" => self.gamma = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "buffer_size" => self.buffer_size = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "update_interval" => self.update_interval = num(key, value)?,
            "eta0" => self.eta0 = num(key, value)?,
            "sigma_smooth" => self.sigma_smooth = num(key, value)?,
            "rho" => self.rho = num(key, value)?,
            "total_steps" => self.total_steps = num(key, value)?,
            "eval_every" => self.eval_every = num(key, value)?,
            "eval_episodes" => self.eval_episodes = num(key, value)?,
            "warmup_steps" => self.warmup_steps = num(key, value)?,
            "seeds" => {
                self.seeds = value
                    .split(',')
                    .map(str::trim)
                    .filter(|t| !t.is_empty())
                    .map(|t| num(key, t))
                    .collect::<Result<_, _>>()?;
            }
            "gaussian_noise_std" => f.gaussian_noise_std = num(key, value)?,
            "ucb_enabled" => f.ucb_enabled = num(key, value)?,
            "lambda_ucb" => f.lambda_ucb = num(key, value)?,
            "weighted_backup" => f.weighted_backup_enabled = num(key, value)?,
            "eps_w" => f.eps_w = num(key, value)?,
            "t_w" => f.t_w = num(key, value)?,
            "clipped_double_q" => f.clipped_double_q = num(key, value)?,
            "vote_mode" => {
                f.vote_mode = match value {
                    "off" => VoteMode::Off,
                    "arbitrary_critic" => VoteMode::ArbitraryCritic,
                    "ensemble_critic" => VoteMode::EnsembleCritic,
                    other => {
                        return Err(ConfigError::BadValue {
                            key: key.to_string(),
                            reason: format!("unknown vote mode {other:?}"),
                        })
                    }
                }
            }
            "prior_nets" => f.prior_nets_enabled = num(key, value)?,
            "prior_beta" => f.prior_beta = num(key, value)?,
            "data_bootstrap" => f.data_bootstrap = num(key, value)?,
            "single_critic" => f.single_critic = num(key, value)?,
            "shared_actor_init" => f.shared_actor_init = num(key, value)?,
            "single_actor_explore" => f.single_actor_explore = num(key, value)?,
            "single_actor_eval" => f.single_actor_eval = num(key, value)?,
            "action_norm" => f.action_norm = num(key, value)?,
            "huber" => f.huber = num(key, value)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.k < 1 {
            return bad("k must be at least 1");
        }
        if self.hidden_width < 1 {
            return bad("hidden_width must be at least 1");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.eta0) {
            return bad("eta0 must lie in [0, 1]");
        }
        if self.lr < 0.0 || !self.lr.is_finite() {
            return bad("lr must be finite and nonnegative");
        }
        if self.buffer_size == 0 || self.batch_size == 0 {
            return bad("buffer_size and batch_size must be positive");
        }
        if self.update_interval == 0 {
            return bad("update_interval must be positive");
        }
        if self.total_steps == 0 || self.eval_every == 0 || self.eval_episodes == 0 {
            return bad("total_steps, eval_every and eval_episodes must be positive");
        }
        if self.seeds.is_empty() {
            return bad("need at least one seed");
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return bad("rho must lie in [0, 1]");
        }
        if self.sigma_smooth < 0.0 || self.flags.gaussian_noise_std < 0.0 {
            return bad("noise levels must be nonnegative");
        }
        if self.flags.lambda_ucb < 0.0 || self.flags.prior_beta < 0.0 {
            return bad("lambda_ucb and prior_beta must be nonnegative");
        }
        if !(0.0..1.0).contains(&self.flags.eps_w) {
            return bad("eps_w must lie in [0, 1)");
        }
        crate::envs::parse_wrappers(&self.wrappers)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        crate::envs::make_env(&self.env).map_err(ConfigError::Invalid)?;
        Ok(())
    }

    /// Hash of the canonical text; two configs agree on behaviour iff the
    /// digests agree.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.to_text().as_bytes());
        let digest = h.finalize();
        let mut s = String::with_capacity(16);
        for b in &digest[..8] {
            s.push_str(&format!("{b:02x}"));
        }
        s
    }

    /// Short human-readable tag of the enabled deviations from the base
    /// algorithm ("base" when there are none).
    pub fn variant_label(&self) -> String {
        let f = &self.flags;
        let mut parts = Vec::new();
        if f.gaussian_noise_std > 0.0 {
            parts.push("noise");
        }
        if f.ucb_enabled {
            parts.push("ucb");
        }
        if f.weighted_backup_enabled {
            parts.push("weighted");
        }
        if !f.clipped_double_q {
            parts.push("no_clip");
        }
        match f.vote_mode {
            VoteMode::Off => {}
            VoteMode::ArbitraryCritic => parts.push("vote_arbitrary"),
            VoteMode::EnsembleCritic => parts.push("vote_ensemble"),
        }
        if f.prior_nets_enabled {
            parts.push("prior");
        }
        if f.data_bootstrap {
            parts.push("bootstrap");
        }
        if f.single_critic {
            parts.push("single_critic");
        }
        if f.shared_actor_init {
            parts.push("shared_init");
        }
        if f.single_actor_explore {
            parts.push("single_explore");
        }
        if f.single_actor_eval {
            parts.push("single_eval");
        }
        if !f.action_norm {
            parts.push("no_action_norm");
        }
        if f.huber {
            parts.push("huber");
        }
        if parts.is_empty() {
            "base".to_string()
        } else {
            parts.join("+")
        }
    }
}
