use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Env, EnvError, EnvSpec, StepResult};

const DT: f64 = 0.1;
const MAX_FORCE: f64 = 1.0;
const MAX_SPEED: f64 = 10.0;
const POS_BOUND: f64 = 400.0;

/// Planar double-integrator runner. Observation [x, y, vx, vy]; reward is the
/// forward velocity minus a small control cost, so steady +x motion pays.
pub struct PointMass {
    spec: EnvSpec,
    pos: [f64; 2],
    vel: [f64; 2],
    steps: usize,
    ended: bool,
    last_split: (f64, f64),
}

impl PointMass {
    pub fn new() -> PointMass {
        PointMass {
            spec: EnvSpec {
                state_dim: 4,
                action_dim: 2,
                max_action: MAX_FORCE,
                episode_length: 300,
                init_noise_scale: 1.0,
            },
            pos: [0.0; 2],
            vel: [0.0; 2],
            steps: 0,
            ended: false,
            last_split: (0.0, 0.0),
        }
    }

    pub fn set_state(&mut self, x: f64, y: f64, vx: f64, vy: f64) {
        self.pos = [x, y];
        self.vel = [vx, vy];
        self.steps = 0;
        self.ended = false;
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.pos[0], self.pos[1], self.vel[0], self.vel[1]]
    }

    pub(super) fn integrate(&mut self, action: &[f64]) -> f64 {
        let mut cost = 0.0;
        for i in 0..2 {
            let u = action[i].clamp(-MAX_FORCE, MAX_FORCE);
            cost += u * u;
            self.vel[i] = (self.vel[i] + u * DT).clamp(-MAX_SPEED, MAX_SPEED);
            self.pos[i] = (self.pos[i] + self.vel[i] * DT).clamp(-POS_BOUND, POS_BOUND);
        }
        cost
    }
}

impl Default for PointMass {
    fn default() -> Self {
        PointMass::new()
    }
}

impl Env for PointMass {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = self.spec.init_noise_scale * 0.1;
        for p in &mut self.pos {
            *p = s * rng.random_range(-1.0..1.0);
        }
        for v in &mut self.vel {
            *v = s * rng.random_range(-1.0..1.0);
        }
        self.steps = 0;
        self.ended = false;
        self.last_split = (0.0, 0.0);
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult, EnvError> {
        if action.len() != 2 {
            return Err(EnvError::BadActionLen { expected: 2, got: action.len() });
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(EnvError::NonFiniteAction);
        }
        if self.ended {
            return Err(EnvError::EpisodeOver);
        }
        let cost = self.integrate(action);
        let forward = self.vel[0];
        let rest = -0.001 * cost;
        self.last_split = (forward, rest);

        self.steps += 1;
        let truncated = self.steps >= self.spec.episode_length;
        self.ended = truncated;
        Ok(StepResult {
            next_state: self.observe(),
            reward: forward + rest,
            done: false,
            truncated,
        })
    }

    fn progress(&self) -> Option<f64> {
        Some(self.pos[0])
    }

    fn forward_split(&self) -> Option<(f64, f64)> {
        Some(self.last_split)
    }

    fn state_bounds(&self) -> Vec<(f64, f64)> {
        vec![
            (-POS_BOUND, POS_BOUND),
            (-POS_BOUND, POS_BOUND),
            (-MAX_SPEED, MAX_SPEED),
            (-MAX_SPEED, MAX_SPEED),
        ]
    }

    fn name(&self) -> &'static str {
        "pointmass"
    }
}
