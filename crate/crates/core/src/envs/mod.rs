//! Desk-scale continuous-control environments with deterministic seeded
//! resets, plus reward-structure wrappers and running input normalization.

mod normalize;
mod pendulum;
mod pointmass;
mod rings;
mod wrappers;

pub use normalize::RunningNormalizer;
pub use pendulum::Pendulum;
pub use pointmass::PointMass;
pub use rings::Rings;
pub use wrappers::{Delayed, Sparse};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("action has {got} components, environment expects {expected}")]
    BadActionLen { expected: usize, got: usize },
    #[error("action contains a non-finite component")]
    NonFiniteAction,
    #[error("step called on a finished episode; reset first")]
    EpisodeOver,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    /// Symmetric action bound M; policies emit actions in [-M, M].
    pub max_action: f64,
    /// Steps before truncation.
    pub episode_length: usize,
    /// Multiplier on the environment's per-dimension reset noise ranges.
    pub init_noise_scale: f64,
}

pub trait Env: Send {
    fn spec(&self) -> &EnvSpec;

    /// Starts a new episode: nominal state plus uniform noise drawn from a
    /// generator seeded with `seed`. Equal seeds give equal episodes.
    fn reset(&mut self, seed: u64) -> Vec<f64>;

    fn step(&mut self, action: &[f64]) -> Result<StepResult, EnvError>;

    /// Whether the current episode has met the task's success condition.
    fn solved(&self) -> bool {
        false
    }

    /// Task progress coordinate (used by the sparse gate), if the env has one.
    fn progress(&self) -> Option<f64> {
        None
    }

    /// Split of the last step's reward into (gated forward term, remainder),
    /// for envs whose reward has a forward-motion component.
    fn forward_split(&self) -> Option<(f64, f64)> {
        None
    }

    /// Per-dimension observation bounds (lo, hi), infinite when unbounded.
    fn state_bounds(&self) -> Vec<(f64, f64)>;

    fn name(&self) -> &'static str;
}

/// Environment-level wrappers parsed from a config wrapper string.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvWrap {
    Delayed(usize),
    Sparse(f64),
}

/// Full parse of a wrapper list such as `"delayed:10,obs_norm"`. Environment
/// wrappers keep their listed order; normalization flags are routed to the
/// training pipeline rather than the env.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WrapperChain {
    pub env_wraps: Vec<EnvWrap>,
    pub obs_norm: bool,
    pub rew_norm: bool,
}

pub fn parse_wrappers(s: &str) -> Result<WrapperChain, String> {
    let mut out = WrapperChain::default();
    for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        if tok == "obs_norm" {
            out.obs_norm = true;
        } else if tok == "rew_norm" {
            out.rew_norm = true;
        } else if let Some(arg) = tok.strip_prefix("delayed:") {
            let k: usize = arg.parse().map_err(|_| format!("bad delayed period {arg:?}"))?;
            if k == 0 {
                return Err("delayed period must be at least 1".into());
            }
            out.env_wraps.push(EnvWrap::Delayed(k));
        } else if let Some(arg) = tok.strip_prefix("sparse:") {
            let t: f64 = arg.parse().map_err(|_| format!("bad sparse threshold {arg:?}"))?;
            out.env_wraps.push(EnvWrap::Sparse(t));
        } else {
            return Err(format!("unknown wrapper {tok:?}"));
        }
    }
    Ok(out)
}

pub fn make_env(name: &str) -> Result<Box<dyn Env>, String> {
    match name {
        "pendulum" => Ok(Box::new(Pendulum::new())),
        "pointmass" => Ok(Box::new(PointMass::new())),
        "rings" => Ok(Box::new(Rings::new_default())),
        other => Err(format!("unknown environment {other:?}")),
    }
}

/// Builds the wrapped environment named by `name` and the env-level wrappers
/// of `chain`, applied in listed order (later entries wrap earlier ones).
pub fn make_wrapped(name: &str, chain: &WrapperChain) -> Result<Box<dyn Env>, String> {
    let mut env = make_env(name)?;
    for w in &chain.env_wraps {
        env = match w {
            EnvWrap::Delayed(k) => Box::new(Delayed::new(env, *k)),
            EnvWrap::Sparse(t) => Box::new(Sparse::new(env, *t)?),
        };
    }
    Ok(env)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrapper_parsing() {
        let c = parse_wrappers("delayed:10, sparse:1.0 ,obs_norm,rew_norm").unwrap();
        assert_eq!(c.env_wraps, vec![EnvWrap::Delayed(10), EnvWrap::Sparse(1.0)]);
        assert!(c.obs_norm && c.rew_norm);
        assert_eq!(parse_wrappers("").unwrap(), WrapperChain::default());
        assert!(parse_wrappers("delayed:0").is_err());
        assert!(parse_wrappers("delayed:x").is_err());
        assert!(parse_wrappers("fancy").unwrap_err().contains("fancy"));
    }

    #[test]
    fn make_env_dispatch() {
        for name in ["pendulum", "pointmass", "rings"] {
            let env = make_env(name).unwrap();
            assert_eq!(env.name(), name);
        }
        assert!(make_env("cartpole").is_err());
    }

    #[test]
    fn sparse_requires_forward_component() {
        let chain = parse_wrappers("sparse:1.0").unwrap();
        assert!(make_wrapped("pendulum", &chain).is_err());
        assert!(make_wrapped("pointmass", &chain).is_ok());
    }

    #[test]
    fn resets_are_deterministic_per_seed() {
        for name in ["pendulum", "pointmass", "rings"] {
            let mut env = make_env(name).unwrap();
            let a = env.reset(123);
            let b = env.reset(123);
            assert_eq!(a, b, "{name} reset not reproducible");
            let c = env.reset(124);
            assert_ne!(a, c, "{name} reset ignores seed");
        }
    }

    #[test]
    fn rejects_bad_actions() {
        let mut env = make_env("pendulum").unwrap();
        env.reset(0);
        assert_eq!(
            env.step(&[0.0, 0.0]).unwrap_err(),
            EnvError::BadActionLen { expected: 1, got: 2 }
        );
        assert_eq!(env.step(&[f64::NAN]).unwrap_err(), EnvError::NonFiniteAction);
    }

    #[test]
    fn states_stay_in_declared_bounds() {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for name in ["pendulum", "pointmass", "rings"] {
            let mut env = make_env(name).unwrap();
            let bounds = env.state_bounds();
            let m = env.spec().max_action;
            let adim = env.spec().action_dim;
            let mut s = env.reset(5);
            for _ in 0..500 {
                let a: Vec<f64> = (0..adim).map(|_| rng.random_range(-m..m)).collect();
                let r = env.step(&a).unwrap();
                s = r.next_state;
                for (v, (lo, hi)) in s.iter().zip(&bounds) {
                    assert!(v >= lo && v <= hi, "{name}: {v} outside [{lo}, {hi}]");
                }
                if r.done || r.truncated {
                    s = env.reset(6);
                }
            }
            let _ = s;
        }
    }
}
