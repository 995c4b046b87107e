use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Env, EnvError, EnvSpec, StepResult};

const DT: f64 = 0.1;
const MAX_FORCE: f64 = 1.0;
const MAX_SPEED: f64 = 10.0;
const POS_BOUND: f64 = 400.0;

/// A stack of concentric circles; radii sorted descending, innermost last.
#[derive(Debug, Clone)]
pub struct RingStack {
    pub center: (f64, f64),
    pub radii: Vec<f64>,
}

/// Point-mass navigation over concentric ring stacks. Each step pays the
/// number of circles containing the agent; entering any stack's innermost
/// circle solves (and ends) the episode.
pub struct Rings {
    spec: EnvSpec,
    stacks: Vec<RingStack>,
    pos: [f64; 2],
    vel: [f64; 2],
    steps: usize,
    ended: bool,
    solved: bool,
}

impl Rings {
    pub fn new(stacks: Vec<RingStack>) -> Rings {
        assert!(!stacks.is_empty(), "need at least one ring stack");
        for s in &stacks {
            assert!(!s.radii.is_empty(), "ring stack needs at least one radius");
            assert!(
                s.radii.windows(2).all(|w| w[0] > w[1]),
                "radii must be strictly descending"
            );
        }
        Rings {
            spec: EnvSpec {
                state_dim: 4,
                action_dim: 2,
                max_action: MAX_FORCE,
                episode_length: 300,
                init_noise_scale: 1.0,
            },
            stacks,
            pos: [0.0; 2],
            vel: [0.0; 2],
            steps: 0,
            ended: false,
            solved: false,
        }
    }

    /// Two three-ring stacks ahead of the start, one per side.
    pub fn new_default() -> Rings {
        Rings::new(vec![
            RingStack { center: (3.0, 2.0), radii: vec![2.0, 1.0, 0.5] },
            RingStack { center: (3.0, -2.0), radii: vec![2.0, 1.0, 0.5] },
        ])
    }

    pub fn set_state(&mut self, x: f64, y: f64, vx: f64, vy: f64) {
        self.pos = [x, y];
        self.vel = [vx, vy];
        self.steps = 0;
        self.ended = false;
        self.solved = false;
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.pos[0], self.pos[1], self.vel[0], self.vel[1]]
    }

    fn containment_count(&self) -> usize {
        let mut count = 0;
        for s in &self.stacks {
            let d2 = (self.pos[0] - s.center.0).powi(2) + (self.pos[1] - s.center.1).powi(2);
            count += s.radii.iter().filter(|r| d2 <= *r * *r).count();
        }
        count
    }

    fn in_innermost(&self) -> bool {
        self.stacks.iter().any(|s| {
            let d2 = (self.pos[0] - s.center.0).powi(2) + (self.pos[1] - s.center.1).powi(2);
            let r = *s.radii.last().unwrap();
            d2 <= r * r
        })
    }
}

impl Env for Rings {
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
        self.solved = false;
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
        for i in 0..2 {
            let u = action[i].clamp(-MAX_FORCE, MAX_FORCE);
            self.vel[i] = (self.vel[i] + u * DT).clamp(-MAX_SPEED, MAX_SPEED);
            self.pos[i] = (self.pos[i] + self.vel[i] * DT).clamp(-POS_BOUND, POS_BOUND);
        }
        let reward = self.containment_count() as f64;
        self.steps += 1;
        let done = self.in_innermost();
        self.solved = done;
        let truncated = !done && self.steps >= self.spec.episode_length;
        self.ended = done || truncated;
        Ok(StepResult { next_state: self.observe(), reward, done, truncated })
    }

    fn solved(&self) -> bool {
        self.solved
    }

    fn progress(&self) -> Option<f64> {
        Some(self.pos[0])
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
        "rings"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn still(env: &mut Rings, x: f64, y: f64) -> StepResult {
        env.set_state(x, y, 0.0, 0.0);
        env.step(&[0.0, 0.0]).unwrap()
    }

    #[test]
    fn reward_counts_containing_circles() {
        let mut env = Rings::new_default();
        env.reset(0);
        // far away: nothing contains the agent
        assert_eq!(still(&mut env, -50.0, 0.0).reward, 0.0);
        // just inside the outer circle of the upper stack only
        assert_eq!(still(&mut env, 3.0, 3.8).reward, 1.0);
        // between stacks at (3, 0): distance 2 to both centers, on both outer rims
        assert_eq!(still(&mut env, 3.0, 0.0).reward, 2.0);
    }

    #[test]
    fn innermost_circle_solves_and_ends() {
        let mut env = Rings::new_default();
        env.reset(0);
        let r = still(&mut env, 3.0, 2.0);
        assert_eq!(r.reward, 3.0);
        assert!(r.done && !r.truncated);
        assert!(env.solved());
        assert_eq!(env.step(&[0.0, 0.0]).unwrap_err(), EnvError::EpisodeOver);
    }

    #[test]
    fn middle_ring_does_not_solve() {
        let mut env = Rings::new_default();
        env.reset(0);
        let r = still(&mut env, 3.0, 2.75);
        assert_eq!(r.reward, 2.0);
        assert!(!r.done);
        assert!(!env.solved());
    }

    #[test]
    fn geometry_validation() {
        let r = std::panic::catch_unwind(|| {
            Rings::new(vec![RingStack { center: (0.0, 0.0), radii: vec![1.0, 2.0] }])
        });
        assert!(r.is_err());
    }
}
