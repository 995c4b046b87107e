//! Transition storage and emphasizing-recent-experience sampling: uniform
//! draws from a shrinking window of the most recent entries, with the decay
//! adapted to the trend of training returns.

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ReplayError {
    #[error("transition contains a non-finite field")]
    NonFinite,
}

/// Fixed-capacity ring buffer of transitions in structure-of-arrays layout.
/// Logical index 0 is the oldest stored transition.
pub struct ReplayBuffer {
    capacity: usize,
    obs_dim: usize,
    act_dim: usize,
    len: usize,
    head: usize, // physical slot of the next write
    obs: Vec<f64>,
    act: Vec<f64>,
    rew: Vec<f64>,
    next_obs: Vec<f64>,
    done: Vec<f64>,
    /// Bernoulli inclusion masks, `n_masks` per transition, for ensembles
    /// trained on bootstrapped subsets.
    masks: Vec<u8>,
    n_masks: usize,
}

/// Sampled minibatch in row-major batch layout, plus per-member inclusion
/// masks when the buffer stores them.
pub struct Batch {
    pub m: usize,
    pub obs: Vec<f64>,
    pub act: Vec<f64>,
    pub rew: Vec<f64>,
    pub next_obs: Vec<f64>,
    pub done: Vec<f64>,
    /// row-major (m, n_masks)
    pub masks: Option<Vec<f64>>,
    pub n_masks: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_dim: usize, act_dim: usize, n_masks: usize) -> ReplayBuffer {
        assert!(capacity > 0);
        ReplayBuffer {
            capacity,
            obs_dim,
            act_dim,
            len: 0,
            head: 0,
            obs: vec![0.0; capacity * obs_dim],
            act: vec![0.0; capacity * act_dim],
            rew: vec![0.0; capacity],
            next_obs: vec![0.0; capacity * obs_dim],
            done: vec![0.0; capacity],
            masks: vec![0; capacity * n_masks],
            n_masks,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Smallest sampling window: the published floor of 5000 at one-million
    /// capacity, rescaled to this buffer's capacity and never below the batch.
    pub fn min_window(&self, batch_size: usize) -> usize {
        let floor = (5000.0 * self.capacity as f64 / 1e6).round() as usize;
        batch_size.max(floor)
    }

    pub fn store<R: Rng>(
        &mut self,
        obs: &[f64],
        act: &[f64],
        rew: f64,
        next_obs: &[f64],
        done: bool,
        mask_rng: Option<(&mut R, f64)>,
    ) -> Result<(), ReplayError> {
        assert_eq!(obs.len(), self.obs_dim);
        assert_eq!(next_obs.len(), self.obs_dim);
        assert_eq!(act.len(), self.act_dim);
        let finite = obs.iter().chain(next_obs).chain(act).all(|v| v.is_finite())
            && rew.is_finite();
        if !finite {
            return Err(ReplayError::NonFinite);
        }
        let i = self.head;
        self.obs[i * self.obs_dim..(i + 1) * self.obs_dim].copy_from_slice(obs);
        self.next_obs[i * self.obs_dim..(i + 1) * self.obs_dim].copy_from_slice(next_obs);
        self.act[i * self.act_dim..(i + 1) * self.act_dim].copy_from_slice(act);
        self.rew[i] = rew;
        self.done[i] = if done { 1.0 } else { 0.0 };
        if self.n_masks > 0 {
            let slot = &mut self.masks[i * self.n_masks..(i + 1) * self.n_masks];
            if let Some((rng, p)) = mask_rng {
                for m in slot.iter_mut() {
                    *m = if rng.random_range(0.0..1.0) < p { 1 } else { 0 };
                }
            } else {
                slot.fill(1);
            }
        }
        self.head = (self.head + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
        Ok(())
    }

    fn physical(&self, logical: usize) -> usize {
        debug_assert!(logical < self.len);
        if self.len < self.capacity {
            logical
        } else {
            (self.head + logical) % self.capacity
        }
    }

    /// Uniform-with-replacement draw of `m` logical indices from the most
    /// recent `window` transitions.
    pub fn sample_recent_indices<R: Rng>(&self, m: usize, window: usize, rng: &mut R) -> Vec<usize> {
        assert!(self.len > 0, "cannot sample from an empty buffer");
        let w = window.clamp(1, self.len);
        let start = self.len - w;
        (0..m).map(|_| start + rng.random_range(0..w)).collect()
    }

    pub fn gather(&self, indices: &[usize]) -> Batch {
        let m = indices.len();
        let mut batch = Batch {
            m,
            obs: Vec::with_capacity(m * self.obs_dim),
            act: Vec::with_capacity(m * self.act_dim),
            rew: Vec::with_capacity(m),
            next_obs: Vec::with_capacity(m * self.obs_dim),
            done: Vec::with_capacity(m),
            masks: if self.n_masks > 0 { Some(Vec::with_capacity(m * self.n_masks)) } else { None },
            n_masks: self.n_masks,
        };
        for &li in indices {
            let i = self.physical(li);
            batch.obs.extend_from_slice(&self.obs[i * self.obs_dim..(i + 1) * self.obs_dim]);
            batch
                .next_obs
                .extend_from_slice(&self.next_obs[i * self.obs_dim..(i + 1) * self.obs_dim]);
            batch.act.extend_from_slice(&self.act[i * self.act_dim..(i + 1) * self.act_dim]);
            batch.rew.push(self.rew[i]);
            batch.done.push(self.done[i]);
            if let Some(ms) = &mut batch.masks {
                ms.extend(
                    self.masks[i * self.n_masks..(i + 1) * self.n_masks]
                        .iter()
                        .map(|&b| b as f64),
                );
            }
        }
        batch
    }

    /// Logical index of the oldest transition that a recency window of size
    /// `window` may touch; used by tests.
    pub fn window_start(&self, window: usize) -> usize {
        self.len - window.clamp(1, self.len)
    }
}

/// Sampling-window size for the b-th update of a burst of `big_b` updates:
/// round(|D| * eta^(b*1000/B)), clamped to [c_min, |D|].
pub fn ere_window(d_current: usize, eta: f64, b: usize, big_b: usize, c_min: usize) -> usize {
    assert!(big_b >= 1 && b >= 1 && b <= big_b, "burst index {b} outside 1..={big_b}");
    let ck = (d_current as f64 * eta.powf(b as f64 * 1000.0 / big_b as f64)).round() as usize;
    ck.clamp(c_min.min(d_current), d_current)
}

/// Return-trend adaptation of the recency parameter eta. Two exponential
/// moving averages of training returns with different horizons estimate the
/// recent improvement; eta interpolates between eta0 (max improvement) and
/// 1.0 (uniform sampling, no improvement).
#[derive(Debug, Clone)]
pub struct EreState {
    eta0: f64,
    eta: f64,
    r_recent: f64,
    r_prev: f64,
    i_max: f64,
    seen_any: bool,
}

impl EreState {
    pub fn new(eta0: f64) -> EreState {
        assert!((0.0..=1.0).contains(&eta0), "eta0 must be in [0, 1]");
        EreState { eta0, eta: eta0, r_recent: 0.0, r_prev: 0.0, i_max: 0.0, seen_any: false }
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn improvement(&self) -> f64 {
        self.r_recent - self.r_prev
    }

    /// Feeds one finished training episode. `episode_len` is the env's episode
    /// horizon T and `buffer_len` the current replay size; the slow EWMA spans
    /// about half the buffer (lambda = T/floor(len/2)) and the fast one is ten
    /// times quicker.
    pub fn on_episode_end(&mut self, ep_return: f64, buffer_len: usize, episode_len: usize) {
        if !self.seen_any {
            self.r_recent = ep_return;
            self.r_prev = ep_return;
            self.seen_any = true;
            return;
        }
        let half = (buffer_len / 2).max(1);
        let l_prev = (episode_len as f64 / half as f64).min(1.0);
        let l_recent = (10.0 * l_prev).min(1.0);
        self.r_prev = l_prev * ep_return + (1.0 - l_prev) * self.r_prev;
        self.r_recent = l_recent * ep_return + (1.0 - l_recent) * self.r_recent;

        let imp = self.r_recent - self.r_prev;
        if imp > self.i_max {
            self.i_max = imp;
        }
        if self.i_max > 0.0 {
            let ratio = (imp / self.i_max).clamp(0.0, 1.0);
            self.eta = self.eta0 * ratio + (1.0 - ratio);
        } else {
            // no positive improvement observed yet: keep the initial decay
            self.eta = self.eta0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn filled(n: usize, capacity: usize) -> ReplayBuffer {
        let mut buf = ReplayBuffer::new(capacity, 2, 1, 0);
        for t in 0..n {
            let v = t as f64;
            buf.store::<ChaCha8Rng>(&[v, v], &[v], v, &[v + 1.0, v + 1.0], false, None)
                .unwrap();
        }
        buf
    }

    #[test]
    fn ring_overwrites_oldest() {
        let buf = filled(13, 10);
        assert_eq!(buf.len(), 10);
        // logical 0 should be transition 3 (0..2 were overwritten)
        let b = buf.gather(&[0, 9]);
        assert_eq!(b.rew, vec![3.0, 12.0]);
        assert_eq!(b.obs, vec![3.0, 3.0, 12.0, 12.0]);
        assert_eq!(b.next_obs, vec![4.0, 4.0, 13.0, 13.0]);
    }

    #[test]
    fn gather_matches_store_before_wrap() {
        let buf = filled(5, 10);
        let b = buf.gather(&[0, 4]);
        assert_eq!(b.rew, vec![0.0, 4.0]);
        assert_eq!(b.done, vec![0.0, 0.0]);
    }

    #[test]
    fn window_values_match_closed_form() {
        // |D| = 10^6, eta = 0.995: the window shrinks from the full buffer
        // to round(10^6 * 0.995^1000) = 6654 across a thousand-update burst
        assert_eq!(ere_window(1_000_000, 0.995, 1000, 1000, 5000), 6654);
        assert_eq!(ere_window(1_000_000, 0.995, 500, 1000, 5000), 81572);
        // eta = 1 keeps the window at the whole buffer
        assert_eq!(ere_window(1_000_000, 1.0, 777, 1000, 5000), 1_000_000);
        // every burst index matches the closed form within rounding
        for eta in [1.0f64, 0.995] {
            for b in 1..=1000usize {
                let want = (1e6 * eta.powf(b as f64)).round() as usize;
                assert_eq!(ere_window(1_000_000, eta, b, 1000, 1), want.max(1));
            }
        }
    }

    #[test]
    fn window_extremes_pin_sampling_range() {
        let buf = filled(100, 100);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // window of one: every draw is the newest transition
        let idx = buf.sample_recent_indices(64, 1, &mut rng);
        assert!(idx.iter().all(|&i| i == 99));
        // window of half the buffer: nothing from the older half
        let idx = buf.sample_recent_indices(1000, 50, &mut rng);
        assert!(idx.iter().all(|&i| i >= 50));
        // window at (or past) the buffer size: whole range reachable
        let idx = buf.sample_recent_indices(2000, 100, &mut rng);
        assert!(idx.iter().any(|&i| i < 10));
    }

    #[test]
    fn non_finite_transitions_are_rejected() {
        let mut buf = ReplayBuffer::new(10, 2, 1, 0);
        let bad = buf.store::<ChaCha8Rng>(&[f64::NAN, 0.0], &[0.0], 0.0, &[0.0, 0.0], false, None);
        assert_eq!(bad, Err(ReplayError::NonFinite));
        let bad = buf.store::<ChaCha8Rng>(&[0.0, 0.0], &[0.0], f64::INFINITY, &[0.0, 0.0], false, None);
        assert_eq!(bad, Err(ReplayError::NonFinite));
        assert!(buf.is_empty());
    }

    #[test]
    fn window_clamps_to_floor_and_len() {
        // tiny eta would shrink below the floor
        assert_eq!(ere_window(100_000, 0.5, 1000, 1000, 500), 500);
        // small buffers: window never exceeds the buffer
        assert_eq!(ere_window(300, 0.995, 1, 50, 500), 300);
    }

    #[test]
    fn min_window_scales_with_capacity() {
        assert_eq!(ReplayBuffer::new(1_000_000, 1, 1, 0).min_window(256), 5000);
        assert_eq!(ReplayBuffer::new(100_000, 1, 1, 0).min_window(256), 500);
        assert_eq!(ReplayBuffer::new(1000, 1, 1, 0).min_window(256), 256);
    }

    #[test]
    fn sampling_respects_window() {
        let buf = filled(1000, 1000);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let idx = buf.sample_recent_indices(5000, 100, &mut rng);
        assert!(idx.iter().all(|&i| i >= 900 && i < 1000));
        // and with replacement: more draws than distinct slots
        let distinct: std::collections::BTreeSet<_> = idx.iter().collect();
        assert!(distinct.len() <= 100);
    }

    #[test]
    fn masks_are_bernoulli_per_member() {
        let mut buf = ReplayBuffer::new(4000, 1, 1, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..4000 {
            buf.store(&[0.0], &[0.0], 0.0, &[0.0], false, Some((&mut rng, 0.5))).unwrap();
        }
        let b = buf.gather(&(0..4000).collect::<Vec<_>>());
        let ms = b.masks.unwrap();
        assert_eq!(ms.len(), 4000 * 5);
        for k in 0..5 {
            let frac: f64 = (0..4000).map(|i| ms[i * 5 + k]).sum::<f64>() / 4000.0;
            assert!((frac - 0.5).abs() < 0.05, "member {k} inclusion {frac}");
        }
        // masks are not all identical across members
        let same = (0..4000).all(|i| (1..5).all(|k| ms[i * 5 + k] == ms[i * 5]));
        assert!(!same);
    }

    #[test]
    fn eta_adaptation_tracks_improvement() {
        let mut s = EreState::new(0.995);
        assert_eq!(s.eta(), 0.995);
        // flat returns: no positive improvement, eta stays at eta0 until the
        // trend output exists, then goes uniform only when improvement halts
        s.on_episode_end(5.0, 1000, 100);
        assert_eq!(s.eta(), 0.995);
        // strongly increasing returns: improvement becomes the running max,
        // ratio 1 keeps eta at eta0
        for i in 0..50 {
            s.on_episode_end(5.0 + i as f64, 1000, 100);
        }
        assert!(s.improvement() > 0.0);
        assert!(s.eta() < 0.999);
        let eta_growing = s.eta();
        // plateau: improvement decays toward zero, eta drifts to 1 (uniform)
        for _ in 0..400 {
            s.on_episode_end(54.0, 1000, 100);
        }
        assert!(s.eta() > eta_growing);
        assert!(s.eta() > 0.9999);
    }

    #[test]
    fn eta_interpolation_midpoint() {
        // improvement at exactly half the running max must land eta halfway
        // between eta0 and 1; the chosen numbers stay exact in f64
        let mut s = EreState::new(0.995);
        s.seen_any = true;
        s.r_prev = 4.0;
        s.r_recent = 4.0;
        s.i_max = 2.0;
        // T = 10, |D| = 40: lambda_prev = 0.5, lambda_recent = 1.0, so an
        // episode return of 6 gives r_prev 5, r_recent 6, improvement 1
        s.on_episode_end(6.0, 40, 10);
        assert_eq!(s.improvement(), 1.0);
        assert_eq!(s.eta(), 0.995 * 0.5 + 0.5);
        assert!((s.eta() - 0.9975).abs() < 1e-12);
    }

    #[test]
    #[should_panic]
    fn sampling_empty_buffer_panics() {
        let buf = ReplayBuffer::new(10, 1, 1, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        buf.sample_recent_indices(1, 10, &mut rng);
    }
}
