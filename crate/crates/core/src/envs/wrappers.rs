use super::{Env, EnvError, EnvSpec, StepResult};

/// Accumulates rewards and emits the running block sum every `k` steps, with a
/// flush on episode end; all other steps emit zero. Per-episode reward sums
/// are conserved.
pub struct Delayed {
    inner: Box<dyn Env>,
    k: usize,
    acc: f64,
    since_flush: usize,
}

impl Delayed {
    pub fn new(inner: Box<dyn Env>, k: usize) -> Delayed {
        assert!(k >= 1, "delay period must be at least 1");
        Delayed { inner, k, acc: 0.0, since_flush: 0 }
    }
}

impl Env for Delayed {
    fn spec(&self) -> &EnvSpec {
        self.inner.spec()
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.acc = 0.0;
        self.since_flush = 0;
        self.inner.reset(seed)
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult, EnvError> {
        let mut r = self.inner.step(action)?;
        self.acc += r.reward;
        self.since_flush += 1;
        if self.since_flush == self.k || r.done || r.truncated {
            r.reward = self.acc;
            self.acc = 0.0;
            self.since_flush = 0;
        } else {
            r.reward = 0.0;
        }
        Ok(r)
    }

    fn solved(&self) -> bool {
        self.inner.solved()
    }

    fn progress(&self) -> Option<f64> {
        self.inner.progress()
    }

    fn state_bounds(&self) -> Vec<(f64, f64)> {
        self.inner.state_bounds()
    }

    fn name(&self) -> &'static str {
        self.inner.name()
    }
}

/// Withholds the forward-motion reward component until the progress coordinate
/// exceeds `threshold`; the gate latches for the rest of the episode. Control
/// costs and other terms always pass through.
pub struct Sparse {
    inner: Box<dyn Env>,
    threshold: f64,
    latched: bool,
}

impl Sparse {
    pub fn new(inner: Box<dyn Env>, threshold: f64) -> Result<Sparse, String> {
        if inner.progress().is_none() || inner.forward_split().is_none() {
            return Err(format!(
                "sparse wrapper needs a progress coordinate and a forward reward component; {} has neither",
                inner.name()
            ));
        }
        Ok(Sparse { inner, threshold, latched: false })
    }

    pub fn latched(&self) -> bool {
        self.latched
    }
}

impl Env for Sparse {
    fn spec(&self) -> &EnvSpec {
        self.inner.spec()
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let s = self.inner.reset(seed);
        // a start beyond the gate makes the wrapper an identity
        self.latched = self.inner.progress().unwrap() > self.threshold;
        s
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult, EnvError> {
        let mut r = self.inner.step(action)?;
        if !self.latched && self.inner.progress().unwrap() > self.threshold {
            self.latched = true;
        }
        if !self.latched {
            let (_, rest) = self.inner.forward_split().unwrap();
            r.reward = rest;
        }
        Ok(r)
    }

    /// Crossing the gate is the task's success condition.
    fn solved(&self) -> bool {
        self.latched || self.inner.solved()
    }

    fn progress(&self) -> Option<f64> {
        self.inner.progress()
    }

    fn state_bounds(&self) -> Vec<(f64, f64)> {
        self.inner.state_bounds()
    }

    fn name(&self) -> &'static str {
        self.inner.name()
    }
}
