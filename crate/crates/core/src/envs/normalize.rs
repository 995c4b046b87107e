/// Streaming per-dimension mean/variance (Welford), used to normalize
/// observations and scale rewards with statistics gathered during training.
#[derive(Debug, Clone)]
pub struct RunningNormalizer {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
    eps: f64,
}

impl RunningNormalizer {
    pub fn new(dim: usize) -> RunningNormalizer {
        RunningNormalizer { count: 0.0, mean: vec![0.0; dim], m2: vec![0.0; dim], eps: 1e-8 }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> f64 {
        self.count
    }

    pub fn update(&mut self, x: &[f64]) {
        assert_eq!(x.len(), self.mean.len(), "normalizer dimension mismatch");
        self.count += 1.0;
        for i in 0..x.len() {
            let delta = x[i] - self.mean[i];
            self.mean[i] += delta / self.count;
            self.m2[i] += delta * (x[i] - self.mean[i]);
        }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Population standard deviation per dimension; zeros before two samples.
    pub fn std(&self) -> Vec<f64> {
        if self.count < 2.0 {
            return vec![0.0; self.mean.len()];
        }
        self.m2.iter().map(|&m| (m / self.count).sqrt()).collect()
    }

    /// Centers and scales; the identity until two samples have been seen, and
    /// per-dimension divisors are floored at eps.
    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        self.normalize_into(&mut out);
        out
    }

    pub fn normalize_into(&self, x: &mut [f64]) {
        assert_eq!(x.len(), self.mean.len(), "normalizer dimension mismatch");
        if self.count < 2.0 {
            return;
        }
        for i in 0..x.len() {
            let std = (self.m2[i] / self.count).sqrt();
            x[i] = (x[i] - self.mean[i]) / std.max(self.eps);
        }
    }

    /// Scale-only transform for rewards: divides by the running standard
    /// deviation without centering, so reward signs are preserved.
    pub fn scale(&self, x: f64) -> f64 {
        assert_eq!(self.mean.len(), 1, "reward scaling is one-dimensional");
        if self.count < 2.0 {
            return x;
        }
        let std = (self.m2[0] / self.count).sqrt();
        x / std.max(self.eps)
    }
}
