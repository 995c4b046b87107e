//! Target computation and the per-batch gradient step. Critics regress onto
//! clipped double-Q targets built from smoothed target actions; each actor
//! ascends its own first critic through the normalized tanh action path;
//! target networks trail the mains by Polyak averaging.

use super::{normalize_rows_inplace, Ensemble};
use crate::nn::polyak_update;
use crate::replay::Batch;
use rand::Rng;

/// Per-pair regression targets and backup weights for one batch.
pub struct TrainTargets {
    /// y[pair][row]: bootstrapped return estimate.
    pub y: Vec<Vec<f64>>,
    /// w[pair][row]: backup weight in (0, 1]; all ones unless the weighted
    /// backup is enabled.
    pub w: Vec<Vec<f64>>,
}

/// Mean pre-step losses of one update, for logging.
#[derive(Debug, Clone, Copy)]
pub struct Losses {
    pub critic: f64,
    pub actor: f64,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Ensemble {
    /// Batch forward of one target critic (prior-adjusted when enabled).
    fn target_q_batch(&self, pair: usize, side: usize, sa: &[f64], m: usize) -> Vec<f64> {
        let net = if side == 0 { &self.targets1[pair] } else { &self.targets2[pair] };
        let mut q = net.forward_batch(sa, m);
        if self.flags.prior_nets_enabled {
            let prior = if side == 0 { &self.priors1[pair] } else { &self.priors2[pair] };
            let p = prior.forward_batch(sa, m);
            for (qi, pi) in q.iter_mut().zip(&p) {
                *qi += self.flags.prior_beta * pi;
            }
        }
        q
    }

    /// Smoothed target action of one actor over the batch of next states:
    /// tanh(normalize(mu(s')) + eps) * M, eps ~ N(0, sigma).
    fn target_actions<R: Rng>(&self, actor_idx: usize, next_obs: &[f64], m: usize, rng: &mut R) -> Vec<f64> {
        let mut mu = self.actors[actor_idx].forward_batch(next_obs, m);
        if self.flags.action_norm {
            normalize_rows_inplace(&mut mu, self.act_dim);
        }
        if self.hyper.sigma_smooth > 0.0 {
            for v in mu.iter_mut() {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                *v += z * self.hyper.sigma_smooth;
            }
        }
        for v in mu.iter_mut() {
            *v = self.max_action * v.tanh();
        }
        mu
    }

    fn join_batch(&self, s: &[f64], a: &[f64], m: usize) -> Vec<f64> {
        let (od, ad) = (self.obs_dim, self.act_dim);
        let mut sa = Vec::with_capacity(m * (od + ad));
        for r in 0..m {
            sa.extend_from_slice(&s[r * od..(r + 1) * od]);
            sa.extend_from_slice(&a[r * ad..(r + 1) * ad]);
        }
        sa
    }

    /// Regression targets y = r + gamma*(1-d)*min(Q1, Q2) per critic pair,
    /// with the min dropped when clipped double-Q is off. Backup weights come
    /// from the spread of all target critics at the pair's target action.
    pub fn compute_targets<R: Rng>(&self, batch: &Batch, rng: &mut R) -> TrainTargets {
        let m = batch.m;
        let pairs = self.critic_pairs();
        let mut y = Vec::with_capacity(pairs);
        let mut w = Vec::with_capacity(pairs);
        for pair in 0..pairs {
            let a = self.target_actions(pair, &batch.next_obs, m, rng);
            let sa = self.join_batch(&batch.next_obs, &a, m);
            let q1 = self.target_q_batch(pair, 0, &sa, m);
            let q2 = self.target_q_batch(pair, 1, &sa, m);
            let mut yk = Vec::with_capacity(m);
            for r in 0..m {
                let q = if self.flags.clipped_double_q { q1[r].min(q2[r]) } else { q1[r] };
                yk.push(batch.rew[r] + self.hyper.gamma * (1.0 - batch.done[r]) * q);
            }
            y.push(yk);

            if self.flags.weighted_backup_enabled {
                // spread over every target critic in the ensemble at this
                // pair's own target action
                let mut all_q = vec![q1, q2];
                for other in 0..pairs {
                    if other != pair {
                        all_q.push(self.target_q_batch(other, 0, &sa, m));
                        all_q.push(self.target_q_batch(other, 1, &sa, m));
                    }
                }
                let n = all_q.len() as f64;
                let mut wk = Vec::with_capacity(m);
                for r in 0..m {
                    let mean = all_q.iter().map(|q| q[r]).sum::<f64>() / n;
                    let var = all_q.iter().map(|q| (q[r] - mean) * (q[r] - mean)).sum::<f64>() / n;
                    wk.push(
                        self.flags.eps_w
                            + (1.0 - self.flags.eps_w) * sigmoid(-var.sqrt() * self.flags.t_w),
                    );
                }
                w.push(wk);
            } else {
                w.push(vec![1.0; m]);
            }
        }
        TrainTargets { y, w }
    }

    fn mask_column(batch: &Batch, col: usize) -> Vec<f64> {
        let ms = batch.masks.as_ref().expect("data bootstrap needs stored masks");
        assert!(col < batch.n_masks);
        (0..batch.m).map(|r| ms[r * batch.n_masks + col]).collect()
    }

    /// One descent step for one critic of one pair; returns the pre-step loss.
    fn critic_step(&mut self, pair: usize, side: usize, batch: &Batch, tg: &TrainTargets) -> f64 {
        let m = batch.m;
        let weight: Option<Vec<f64>> =
            if self.flags.weighted_backup_enabled || self.flags.data_bootstrap {
                let mut wv = tg.w[pair].clone();
                if self.flags.data_bootstrap {
                    for (v, mk) in wv.iter_mut().zip(Self::mask_column(batch, pair)) {
                        *v *= mk;
                    }
                }
                Some(wv)
            } else {
                None
            };

        let sa_data = self.join_batch(&batch.obs, &batch.act, m);
        let tape = &mut self.tape;
        tape.clear();
        let sa = tape.leaf(m, self.obs_dim + self.act_dim, &sa_data);
        let net = if side == 0 { &self.critics1[pair] } else { &self.critics2[pair] };
        let mut pred = net.forward_tape(tape, sa, true);
        if self.flags.prior_nets_enabled {
            let prior = if side == 0 { &self.priors1[pair] } else { &self.priors2[pair] };
            let mut pv = prior.forward_batch(&sa_data, m);
            for v in pv.iter_mut() {
                *v *= self.flags.prior_beta;
            }
            let pleaf = tape.leaf(m, 1, &pv);
            pred = tape.add(pred, pleaf);
        }
        let loss = if self.flags.huber {
            tape.huber_loss(pred, &tg.y[pair], 1.0, weight.as_deref())
        } else {
            tape.mse_loss(pred, &tg.y[pair], weight.as_deref())
        };
        let value = tape.value(loss)[0];
        tape.backward(loss);
        let opt = if side == 0 { &mut self.critic1_opts[pair] } else { &mut self.critic2_opts[pair] };
        opt.step();
        value
    }

    /// One ascent step for one actor through its first critic (critic weights
    /// frozen); returns the pre-step loss (negative mean Q).
    fn actor_step(&mut self, k: usize, batch: &Batch) -> f64 {
        let m = batch.m;
        let pair = if self.flags.single_critic { 0 } else { k };
        let weight: Option<Vec<f64>> = if self.flags.data_bootstrap {
            Some(Self::mask_column(batch, k))
        } else {
            None
        };

        let tape = &mut self.tape;
        tape.clear();
        let s = tape.leaf(m, self.obs_dim, &batch.obs);
        let raw = self.actors[k].forward_tape(tape, s, true);
        let normed = if self.flags.action_norm { tape.normalize_rows(raw) } else { raw };
        let squashed = tape.tanh(normed);
        let a = tape.scale(squashed, self.max_action);
        let sa = tape.concat_cols(s, a);
        let mut q = self.critics1[pair].forward_tape(tape, sa, false);
        if self.flags.prior_nets_enabled {
            let qp = self.priors1[pair].forward_tape(tape, sa, false);
            let scaled = tape.scale(qp, self.flags.prior_beta);
            q = tape.add(q, scaled);
        }
        let loss = tape.neg_mean(q, weight.as_deref());
        let value = tape.value(loss)[0];
        tape.backward(loss);
        self.actor_opts[k].step();
        value
    }

    /// Move every target net toward its main by the interpolation factor.
    pub fn polyak_targets(&mut self) {
        for pair in 0..self.critic_pairs() {
            polyak_update(&self.targets1[pair], &self.critics1[pair], self.hyper.rho).unwrap();
            polyak_update(&self.targets2[pair], &self.critics2[pair], self.hyper.rho).unwrap();
        }
    }

    /// One full update: fresh targets, a descent step for every critic, an
    /// ascent step for every actor, then the target drag.
    pub fn update_step<R: Rng>(&mut self, batch: &Batch, rng: &mut R) -> Losses {
        assert!(batch.m > 0, "update needs a nonempty batch");
        if self.flags.data_bootstrap {
            assert!(
                batch.masks.is_some() && batch.n_masks >= self.k,
                "data bootstrap needs one mask column per member"
            );
        }
        let tg = self.compute_targets(batch, rng);
        let pairs = self.critic_pairs();
        let mut critic_sum = 0.0;
        for pair in 0..pairs {
            for side in 0..2 {
                critic_sum += self.critic_step(pair, side, batch, &tg);
            }
        }
        let mut actor_sum = 0.0;
        for k in 0..self.k {
            actor_sum += self.actor_step(k, batch);
        }
        self.polyak_targets();
        self.updates_done += 1;
        Losses {
            critic: critic_sum / (2 * pairs) as f64,
            actor: actor_sum / self.k as f64,
        }
    }

    /// Critic squared error against externally fixed targets, no parameter
    /// movement; lets tests and diagnostics measure descent on a frozen batch.
    pub fn critic_loss_eval(&self, batch: &Batch, tg: &TrainTargets) -> f64 {
        let m = batch.m;
        let sa = self.join_batch(&batch.obs, &batch.act, m);
        let pairs = self.critic_pairs();
        let mut total = 0.0;
        for pair in 0..pairs {
            for side in 0..2 {
                let net = if side == 0 { &self.critics1[pair] } else { &self.critics2[pair] };
                let mut q = net.forward_batch(&sa, m);
                if self.flags.prior_nets_enabled {
                    let prior = if side == 0 { &self.priors1[pair] } else { &self.priors2[pair] };
                    let p = prior.forward_batch(&sa, m);
                    for (qi, pi) in q.iter_mut().zip(&p) {
                        *qi += self.flags.prior_beta * pi;
                    }
                }
                let mse = q
                    .iter()
                    .zip(&tg.y[pair])
                    .map(|(qi, yi)| (qi - yi) * (qi - yi))
                    .sum::<f64>()
                    / m as f64;
                total += mse;
            }
        }
        total / (2 * pairs) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::tests::{make_const, tiny_hyper};
    use crate::agent::{AgentHyper, Ensemble, VariantFlags};
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_batch(m: usize, od: usize, ad: usize, seed: u64) -> Batch {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
        };
        Batch {
            m,
            obs: draw(m * od),
            act: draw(m * ad),
            rew: draw(m),
            next_obs: draw(m * od),
            done: vec![0.0; m],
            masks: None,
            n_masks: 0,
        }
    }

    fn with_masks(mut batch: Batch, k: usize, value: f64) -> Batch {
        batch.masks = Some(vec![value; batch.m * k]);
        batch.n_masks = k;
        batch
    }

    #[test]
    fn terminal_rows_regress_to_reward() {
        let ens = Ensemble::new(2, 1, 1.0, &tiny_hyper(3), VariantFlags::default(), 4);
        let mut batch = random_batch(8, 2, 1, 0);
        batch.done = vec![1.0; 8];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tg = ens.compute_targets(&batch, &mut rng);
        for yk in &tg.y {
            assert_eq!(yk, &batch.rew);
        }
    }

    #[test]
    fn min_backup_arithmetic() {
        let hyper = AgentHyper { sigma_smooth: 0.0, ..tiny_hyper(1) };
        let ens = Ensemble::new(2, 1, 1.0, &hyper, VariantFlags::default(), 4);
        make_const(&ens.targets1[0], &[10.0]);
        make_const(&ens.targets2[0], &[12.0]);
        let mut batch = random_batch(4, 2, 1, 1);
        batch.rew = vec![1.0; 4];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tg = ens.compute_targets(&batch, &mut rng);
        for &y in &tg.y[0] {
            assert!((y - (1.0 + 0.99 * 10.0)).abs() < 1e-12, "clipped backup takes the min");
        }

        let flags = VariantFlags { clipped_double_q: false, ..VariantFlags::default() };
        let ens = Ensemble::new(2, 1, 1.0, &hyper, flags, 4);
        make_const(&ens.targets1[0], &[12.0]);
        make_const(&ens.targets2[0], &[10.0]);
        let tg = ens.compute_targets(&batch, &mut rng);
        for &y in &tg.y[0] {
            assert!((y - (1.0 + 0.99 * 12.0)).abs() < 1e-12, "unclipped backup takes the first critic");
        }
    }

    #[test]
    fn clipping_never_raises_targets() {
        let batch = random_batch(32, 3, 2, 7);
        for seed in 0..3u64 {
            let clipped = Ensemble::new(3, 2, 1.0, &tiny_hyper(3), VariantFlags::default(), seed);
            let flags = VariantFlags { clipped_double_q: false, ..VariantFlags::default() };
            let open = Ensemble::new(3, 2, 1.0, &tiny_hyper(3), flags, seed);
            // identical noise streams make the target actions coincide
            let mut ra = ChaCha8Rng::seed_from_u64(seed + 50);
            let mut rb = ChaCha8Rng::seed_from_u64(seed + 50);
            let yc = clipped.compute_targets(&batch, &mut ra);
            let yo = open.compute_targets(&batch, &mut rb);
            for (a, b) in yc.y.iter().flatten().zip(yo.y.iter().flatten()) {
                assert!(a <= b, "clipped target {a} above unclipped {b}");
            }
        }
    }

    #[test]
    fn equal_critics_make_clipping_irrelevant() {
        let hyper = tiny_hyper(2);
        let mut ens = Ensemble::new(2, 1, 1.0, &hyper, VariantFlags::default(), 9);
        for pair in 0..2 {
            ens.targets2[pair] = ens.targets1[pair].deep_clone();
        }
        let batch = random_batch(16, 2, 1, 3);
        let mut ra = ChaCha8Rng::seed_from_u64(1);
        let mut rb = ChaCha8Rng::seed_from_u64(1);
        let yc = ens.compute_targets(&batch, &mut ra);
        ens.flags.clipped_double_q = false;
        let yo = ens.compute_targets(&batch, &mut rb);
        assert_eq!(yc.y, yo.y);
    }

    #[test]
    fn backup_weights_shrink_with_disagreement() {
        let flags = VariantFlags { weighted_backup_enabled: true, ..VariantFlags::default() };
        let hyper = AgentHyper { sigma_smooth: 0.0, ..tiny_hyper(2) };
        let batch = random_batch(6, 2, 1, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);

        // all four target critics agree: std 0, w = eps + (1-eps)/2 exactly
        let agree = Ensemble::new(2, 1, 1.0, &hyper, flags.clone(), 2);
        for pair in 0..2 {
            make_const(&agree.targets1[pair], &[3.0]);
            make_const(&agree.targets2[pair], &[3.0]);
        }
        let tg = agree.compute_targets(&batch, &mut rng);
        for &w in tg.w.iter().flatten() {
            assert_eq!(w, 0.75);
        }

        // wide disagreement pushes w toward the floor
        let split = Ensemble::new(2, 1, 1.0, &hyper, flags.clone(), 2);
        make_const(&split.targets1[0], &[10.0]);
        make_const(&split.targets2[0], &[-10.0]);
        make_const(&split.targets1[1], &[10.0]);
        make_const(&split.targets2[1], &[-10.0]);
        let tg = split.compute_targets(&batch, &mut rng);
        for &w in tg.w.iter().flatten() {
            // sigmoid(-100) underflows below one ulp of 0.5, so the floor is
            // reached exactly here
            assert!((0.5..0.5001).contains(&w), "w = {w} should hug the floor");
        }

        // random critics stay inside the admissible band
        let rand_ens = Ensemble::new(2, 1, 1.0, &hyper, flags, 12);
        let tg = rand_ens.compute_targets(&batch, &mut rng);
        for &w in tg.w.iter().flatten() {
            assert!(w > 0.5 && w <= 0.75, "w = {w} outside (eps, eps + (1-eps)/2]");
        }
    }

    #[test]
    fn critic_loss_descends_on_frozen_batch() {
        let hyper = AgentHyper { sigma_smooth: 0.0, rho: 1.0, ..tiny_hyper(2) };
        let mut ens = Ensemble::new(3, 1, 1.0, &hyper, VariantFlags::default(), 20);
        let batch = random_batch(32, 3, 1, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tg = ens.compute_targets(&batch, &mut rng);
        let before = ens.critic_loss_eval(&batch, &tg);
        let losses = ens.update_step(&batch, &mut rng);
        let after = ens.critic_loss_eval(&batch, &tg);
        assert!((losses.critic - before).abs() < 1e-12, "reported loss is the pre-step loss");
        assert!(after < before, "one step must reduce the frozen-target loss");
        assert!(losses.actor.is_finite());
        assert_eq!(ens.updates_done(), 1);
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let hyper = AgentHyper { lr: 0.0, ..tiny_hyper(2) };
        let mut ens = Ensemble::new(2, 1, 1.0, &hyper, VariantFlags::default(), 6);
        let batch = random_batch(16, 2, 1, 2);
        let before = ens.params_digest();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let losses = ens.update_step(&batch, &mut rng);
        assert!(losses.critic.is_finite() && losses.actor.is_finite());
        assert_eq!(ens.params_digest(), before);
    }

    #[test]
    fn single_critic_drives_all_actors() {
        let flags = VariantFlags { single_critic: true, ..VariantFlags::default() };
        let mut ens = Ensemble::new(2, 1, 1.0, &tiny_hyper(3), flags, 14);
        assert_eq!(ens.critic_pairs(), 1);
        let batch = random_batch(16, 2, 1, 4);
        let actors_before: Vec<Vec<f64>> =
            ens.actors.iter().map(|a| a.params()[0].borrow().data.clone()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tg = ens.compute_targets(&batch, &mut rng);
        assert_eq!(tg.y.len(), 1, "one critic pair, one target vector");
        ens.update_step(&batch, &mut rng);
        for (k, before) in actors_before.iter().enumerate() {
            assert_ne!(&ens.actors[k].params()[0].borrow().data, before, "actor {k} must move");
        }
    }

    #[test]
    fn all_zero_masks_freeze_the_ensemble() {
        let flags = VariantFlags { data_bootstrap: true, ..VariantFlags::default() };
        let mut ens = Ensemble::new(2, 1, 1.0, &tiny_hyper(3), flags.clone(), 14);
        let batch = with_masks(random_batch(16, 2, 1, 4), 3, 0.0);
        let before = ens.params_digest();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        ens.update_step(&batch, &mut rng);
        assert_eq!(ens.params_digest(), before, "no transition assigned, nothing may move");

        let mut ens = Ensemble::new(2, 1, 1.0, &tiny_hyper(3), flags, 14);
        let batch = with_masks(random_batch(16, 2, 1, 4), 3, 1.0);
        let before = ens.params_digest();
        ens.update_step(&batch, &mut rng);
        assert_ne!(ens.params_digest(), before);
    }

    #[test]
    fn targets_decay_toward_mains_at_rho_rate() {
        let hyper = AgentHyper { rho: 0.9, ..tiny_hyper(2) };
        let mut ens = Ensemble::new(2, 1, 1.0, &hyper, VariantFlags::default(), 3);
        let p = ens.targets1[0].params()[0].clone();
        let main = ens.critics1[0].params()[0].borrow().data[0];
        p.borrow_mut().data[0] = main + 0.5;
        for _ in 0..5 {
            ens.polyak_targets();
        }
        let drifted = p.borrow().data[0] - main;
        assert!((drifted - 0.5 * 0.9f64.powi(5)).abs() < 1e-12);
    }

    #[test]
    fn identical_seeds_train_identically() {
        let flags = VariantFlags { prior_nets_enabled: true, ..VariantFlags::default() };
        let hyper = tiny_hyper(3);
        let mut a = Ensemble::new(2, 1, 1.0, &hyper, flags.clone(), 77);
        let mut b = Ensemble::new(2, 1, 1.0, &hyper, flags, 77);
        let mut ra = ChaCha8Rng::seed_from_u64(5);
        let mut rb = ChaCha8Rng::seed_from_u64(5);
        for step in 0..3 {
            let batch = random_batch(16, 2, 1, step);
            a.update_step(&batch, &mut ra);
            b.update_step(&batch, &mut rb);
        }
        assert_eq!(a.params_digest(), b.params_digest());
    }
}
