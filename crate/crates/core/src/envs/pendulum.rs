use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Env, EnvError, EnvSpec, StepResult};

const G: f64 = 10.0;
const MASS: f64 = 1.0;
const LEN: f64 = 1.0;
const DT: f64 = 0.05;
const MAX_SPEED: f64 = 8.0;
const MAX_TORQUE: f64 = 2.0;

/// Torque-limited pendulum swing-up. Observation [cos th, sin th, omega];
/// th = 0 is upright. Cost is squared angle, velocity and torque; episodes
/// only truncate.
pub struct Pendulum {
    spec: EnvSpec,
    theta: f64,
    omega: f64,
    steps: usize,
    ended: bool,
}

impl Pendulum {
    pub fn new() -> Pendulum {
        Pendulum {
            spec: EnvSpec {
                state_dim: 3,
                action_dim: 1,
                max_action: MAX_TORQUE,
                episode_length: 200,
                init_noise_scale: 1.0,
            },
            theta: std::f64::consts::PI,
            omega: 0.0,
            steps: 0,
            ended: false,
        }
    }

    /// Direct state control for tests and diagnostics.
    pub fn set_state(&mut self, theta: f64, omega: f64) {
        self.theta = theta;
        self.omega = omega;
        self.steps = 0;
        self.ended = false;
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.omega]
    }
}

impl Default for Pendulum {
    fn default() -> Self {
        Pendulum::new()
    }
}

/// Maps an angle to [-pi, pi).
fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut t = (theta + std::f64::consts::PI) % two_pi;
    if t < 0.0 {
        t += two_pi;
    }
    t - std::f64::consts::PI
}

impl Env for Pendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = self.spec.init_noise_scale;
        // nominal hanging-down state (pi, 0); noise ranges (pi, 1)
        self.theta = std::f64::consts::PI + s * std::f64::consts::PI * rng.random_range(-1.0..1.0);
        self.omega = s * rng.random_range(-1.0..1.0);
        self.steps = 0;
        self.ended = false;
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult, EnvError> {
        if action.len() != 1 {
            return Err(EnvError::BadActionLen { expected: 1, got: action.len() });
        }
        if !action[0].is_finite() {
            return Err(EnvError::NonFiniteAction);
        }
        if self.ended {
            return Err(EnvError::EpisodeOver);
        }
        let u = action[0].clamp(-MAX_TORQUE, MAX_TORQUE);
        let th = wrap_angle(self.theta);
        let reward = -(th * th + 0.1 * self.omega * self.omega + 0.001 * u * u);

        // semi-implicit Euler: velocity first, then position with new velocity
        self.omega += (3.0 * G / (2.0 * LEN) * self.theta.sin()
            + 3.0 / (MASS * LEN * LEN) * u)
            * DT;
        self.omega = self.omega.clamp(-MAX_SPEED, MAX_SPEED);
        self.theta += self.omega * DT;

        self.steps += 1;
        let truncated = self.steps >= self.spec.episode_length;
        self.ended = truncated;
        Ok(StepResult { next_state: self.observe(), reward, done: false, truncated })
    }

    fn state_bounds(&self) -> Vec<(f64, f64)> {
        vec![(-1.0, 1.0), (-1.0, 1.0), (-MAX_SPEED, MAX_SPEED)]
    }

    fn name(&self) -> &'static str {
        "pendulum"
    }
}
