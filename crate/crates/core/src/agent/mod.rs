//! Ensemble of deterministic actor-critic agents: K tanh actors, two critics
//! per agent with Polyak-averaged targets, and the exploration/evaluation
//! policies built on them. Every behavioural variant sits behind a flag so a
//! single config switch reproduces each ablation.

mod update;

pub use update::{Losses, TrainTargets};

use crate::nn::{load_params, save_params, Adam, Mlp, NnError, Tape};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteMode {
    Off,
    ArbitraryCritic,
    EnsembleCritic,
}

/// Behaviour switches. Defaults reproduce the base algorithm: deterministic
/// ensemble exploration, clipped double-Q targets, independent nets, action
/// normalization on, squared-error critic loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantFlags {
    /// Additive exploration noise on the final action; 0 disables.
    pub gaussian_noise_std: f64,
    pub ucb_enabled: bool,
    pub lambda_ucb: f64,
    pub weighted_backup_enabled: bool,
    /// Weighted-backup floor and temperature: w = eps_w + (1-eps_w)*sigmoid(-std*t_w).
    pub eps_w: f64,
    pub t_w: f64,
    pub clipped_double_q: bool,
    pub vote_mode: VoteMode,
    pub prior_nets_enabled: bool,
    pub prior_beta: f64,
    pub data_bootstrap: bool,
    pub single_critic: bool,
    pub shared_actor_init: bool,
    pub single_actor_explore: bool,
    pub single_actor_eval: bool,
    pub action_norm: bool,
    pub huber: bool,
}

impl Default for VariantFlags {
    fn default() -> VariantFlags {
        VariantFlags {
            gaussian_noise_std: 0.0,
            ucb_enabled: false,
            lambda_ucb: 1.0,
            weighted_backup_enabled: false,
            eps_w: 0.5,
            t_w: 10.0,
            clipped_double_q: true,
            vote_mode: VoteMode::Off,
            prior_nets_enabled: false,
            prior_beta: 1.0,
            data_bootstrap: false,
            single_critic: false,
            shared_actor_init: false,
            single_actor_explore: false,
            single_actor_eval: false,
            action_norm: true,
            huber: false,
        }
    }
}

/// Learning constants shared by every member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentHyper {
    pub k: usize,
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub lr: f64,
    /// Std of the Gaussian smoothing noise on target actions (pre-tanh).
    pub sigma_smooth: f64,
    /// Polyak interpolation factor for target networks.
    pub rho: f64,
}

impl Default for AgentHyper {
    fn default() -> AgentHyper {
        AgentHyper {
            k: 5,
            hidden: vec![256, 256],
            gamma: 0.99,
            lr: 1e-4,
            sigma_smooth: 0.2,
            rho: 0.995,
        }
    }
}

/// Divide the raw actor output by its mean magnitude G = sum|mu_i|/A when
/// G > 1; leave it unchanged otherwise. Keeps the pre-tanh activations from
/// drifting into the saturated region.
pub fn normalize_action(mu: &[f64]) -> Vec<f64> {
    let mut out = mu.to_vec();
    normalize_rows_inplace(&mut out, mu.len());
    out
}

pub(crate) fn normalize_rows_inplace(x: &mut [f64], cols: usize) {
    for row in x.chunks_mut(cols) {
        let g = row.iter().map(|v| v.abs()).sum::<f64>() / cols as f64;
        if g > 1.0 {
            for v in row.iter_mut() {
                *v /= g;
            }
        }
    }
}

/// Combine a trainable head with a frozen random prior: Q = f + beta * prior.
pub fn prior_q(trainable: f64, prior: f64, beta: f64) -> f64 {
    trainable + beta * prior
}

pub struct Ensemble {
    k: usize,
    obs_dim: usize,
    act_dim: usize,
    max_action: f64,
    hyper: AgentHyper,
    flags: VariantFlags,
    actors: Vec<Mlp>,
    critics1: Vec<Mlp>,
    critics2: Vec<Mlp>,
    targets1: Vec<Mlp>,
    targets2: Vec<Mlp>,
    priors1: Vec<Mlp>,
    priors2: Vec<Mlp>,
    actor_opts: Vec<Adam>,
    critic1_opts: Vec<Adam>,
    critic2_opts: Vec<Adam>,
    episode_actor: usize,
    updates_done: u64,
    tape: Tape,
}

impl Ensemble {
    pub fn new(
        obs_dim: usize,
        act_dim: usize,
        max_action: f64,
        hyper: &AgentHyper,
        flags: VariantFlags,
        seed: u64,
    ) -> Ensemble {
        assert!(hyper.k >= 1, "ensemble needs at least one member");
        assert!(max_action > 0.0);
        assert!((0.0..1.0).contains(&hyper.gamma));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut actor_sizes = vec![obs_dim];
        actor_sizes.extend_from_slice(&hyper.hidden);
        actor_sizes.push(act_dim);
        let mut critic_sizes = vec![obs_dim + act_dim];
        critic_sizes.extend_from_slice(&hyper.hidden);
        critic_sizes.push(1);

        let actors: Vec<Mlp> = if flags.shared_actor_init {
            let first = Mlp::new(&actor_sizes, &mut rng);
            (0..hyper.k).map(|_| first.deep_clone()).collect()
        } else {
            (0..hyper.k).map(|_| Mlp::new(&actor_sizes, &mut rng)).collect()
        };
        let pairs = if flags.single_critic { 1 } else { hyper.k };
        let critics1: Vec<Mlp> = (0..pairs).map(|_| Mlp::new(&critic_sizes, &mut rng)).collect();
        let critics2: Vec<Mlp> = (0..pairs).map(|_| Mlp::new(&critic_sizes, &mut rng)).collect();
        let targets1: Vec<Mlp> = critics1.iter().map(Mlp::deep_clone).collect();
        let targets2: Vec<Mlp> = critics2.iter().map(Mlp::deep_clone).collect();
        let (priors1, priors2) = if flags.prior_nets_enabled {
            (
                (0..pairs).map(|_| Mlp::new(&critic_sizes, &mut rng)).collect(),
                (0..pairs).map(|_| Mlp::new(&critic_sizes, &mut rng)).collect(),
            )
        } else {
            (Vec::new(), Vec::new())
        };

        let actor_opts = actors.iter().map(|n| Adam::new(n.params(), hyper.lr)).collect();
        let critic1_opts = critics1.iter().map(|n| Adam::new(n.params(), hyper.lr)).collect();
        let critic2_opts = critics2.iter().map(|n| Adam::new(n.params(), hyper.lr)).collect();

        Ensemble {
            k: hyper.k,
            obs_dim,
            act_dim,
            max_action,
            hyper: hyper.clone(),
            flags,
            actors,
            critics1,
            critics2,
            targets1,
            targets2,
            priors1,
            priors2,
            actor_opts,
            critic1_opts,
            critic2_opts,
            episode_actor: 0,
            updates_done: 0,
            tape: Tape::new(),
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn flags(&self) -> &VariantFlags {
        &self.flags
    }

    pub fn max_action(&self) -> f64 {
        self.max_action
    }

    pub fn episode_actor(&self) -> usize {
        self.episode_actor
    }

    pub fn updates_done(&self) -> u64 {
        self.updates_done
    }

    pub(crate) fn critic_pairs(&self) -> usize {
        self.critics1.len()
    }

    /// Draw the actor that acts for the next episode, uniformly over members.
    pub fn select_episode_actor<R: Rng>(&mut self, rng: &mut R) -> usize {
        self.episode_actor = if self.flags.single_actor_explore || self.k == 1 {
            0
        } else {
            rng.random_range(0..self.k)
        };
        self.episode_actor
    }

    /// Final (normalized, squashed, scaled) action of one actor.
    fn final_action(&self, actor: &Mlp, s: &[f64]) -> Vec<f64> {
        let raw = actor.forward1(s);
        let normed = if self.flags.action_norm { normalize_action(&raw) } else { raw };
        normed.iter().map(|v| self.max_action * v.tanh()).collect()
    }

    /// Per-member candidate actions at a state.
    pub fn candidate_actions(&self, s: &[f64]) -> Vec<Vec<f64>> {
        self.actors.iter().map(|a| self.final_action(a, s)).collect()
    }

    pub fn member_action(&self, member: usize, s: &[f64]) -> Vec<f64> {
        self.final_action(&self.actors[member], s)
    }

    /// First-critic value of one pair, prior included when enabled.
    fn q1_value(&self, pair: usize, sa: &[f64]) -> f64 {
        let f = self.critics1[pair].forward1(sa)[0];
        if self.flags.prior_nets_enabled {
            prior_q(f, self.priors1[pair].forward1(sa)[0], self.flags.prior_beta)
        } else {
            f
        }
    }

    fn join(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let mut sa = Vec::with_capacity(s.len() + a.len());
        sa.extend_from_slice(s);
        sa.extend_from_slice(a);
        sa
    }

    /// Candidate of the argmax-scoring actor; scores come from the episode
    /// critic or the critic ensemble mean. Ties go to the lowest index.
    pub fn vote_action(&self, s: &[f64]) -> Vec<f64> {
        let cands = self.candidate_actions(s);
        let pairs = self.critic_pairs();
        let scores: Vec<f64> = match self.flags.vote_mode {
            VoteMode::ArbitraryCritic => {
                let c = self.episode_actor.min(pairs - 1);
                cands.iter().map(|a| self.q1_value(c, &self.join(s, a))).collect()
            }
            _ => cands
                .iter()
                .map(|a| {
                    let sa = self.join(s, a);
                    (0..pairs).map(|p| self.q1_value(p, &sa)).sum::<f64>() / pairs as f64
                })
                .collect(),
        };
        cands.into_iter().nth(argmax(&scores)).unwrap()
    }

    /// Candidate with the highest mean-plus-lambda-std score over the first
    /// critics (population std).
    pub fn ucb_action(&self, s: &[f64]) -> Vec<f64> {
        let cands = self.candidate_actions(s);
        let pairs = self.critic_pairs();
        let scores: Vec<f64> = cands
            .iter()
            .map(|a| {
                let sa = self.join(s, a);
                let qs: Vec<f64> = (0..pairs).map(|p| self.q1_value(p, &sa)).collect();
                let mean = qs.iter().sum::<f64>() / qs.len() as f64;
                let var = qs.iter().map(|q| (q - mean) * (q - mean)).sum::<f64>() / qs.len() as f64;
                mean + self.flags.lambda_ucb * var.sqrt()
            })
            .collect();
        cands.into_iter().nth(argmax(&scores)).unwrap()
    }

    /// Behaviour action for training rollouts. The episode actor acts unless
    /// a vote or UCB selector is switched on; optional Gaussian noise is added
    /// to the final action and re-clamped.
    pub fn explore_action<R: Rng>(&self, s: &[f64], rng: &mut R) -> Vec<f64> {
        let mut a = if self.flags.ucb_enabled {
            self.ucb_action(s)
        } else if self.flags.vote_mode != VoteMode::Off {
            self.vote_action(s)
        } else {
            let idx = if self.flags.single_actor_explore { 0 } else { self.episode_actor };
            self.final_action(&self.actors[idx], s)
        };
        if self.flags.gaussian_noise_std > 0.0 {
            for v in a.iter_mut() {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                *v = (*v + z * self.flags.gaussian_noise_std)
                    .clamp(-self.max_action, self.max_action);
            }
        }
        a
    }

    /// Deterministic evaluation action: the mean of all members' actions.
    pub fn evaluate_action(&self, s: &[f64]) -> Vec<f64> {
        if self.flags.single_actor_eval {
            return self.final_action(&self.actors[0], s);
        }
        let mut mean = vec![0.0; self.act_dim];
        for actor in &self.actors {
            let a = self.final_action(actor, s);
            for (m, v) in mean.iter_mut().zip(&a) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= self.k as f64;
        }
        mean
    }

    fn net_names(&self) -> Vec<(String, &Mlp)> {
        let mut out = Vec::new();
        for (i, n) in self.actors.iter().enumerate() {
            out.push((format!("actor{i}"), n));
        }
        for (i, n) in self.critics1.iter().enumerate() {
            out.push((format!("critic1_{i}"), n));
        }
        for (i, n) in self.critics2.iter().enumerate() {
            out.push((format!("critic2_{i}"), n));
        }
        for (i, n) in self.targets1.iter().enumerate() {
            out.push((format!("target1_{i}"), n));
        }
        for (i, n) in self.targets2.iter().enumerate() {
            out.push((format!("target2_{i}"), n));
        }
        for (i, n) in self.priors1.iter().enumerate() {
            out.push((format!("prior1_{i}"), n));
        }
        for (i, n) in self.priors2.iter().enumerate() {
            out.push((format!("prior2_{i}"), n));
        }
        out
    }

    /// Hex digest over every parameter byte; equal digests mean bitwise-equal
    /// ensembles.
    pub fn params_digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, net) in self.net_names() {
            h.update(name.as_bytes());
            for (pname, p) in net.named_params() {
                h.update(pname.as_bytes());
                for v in &p.borrow().data {
                    h.update(v.to_le_bytes());
                }
            }
        }
        hex(&h.finalize())
    }

    /// Write all network parameters plus a manifest into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), NnError> {
        std::fs::create_dir_all(dir)?;
        let mut named = Vec::new();
        for (net_name, net) in self.net_names() {
            for (pname, p) in net.named_params() {
                named.push((format!("{net_name}.{pname}"), p));
            }
        }
        let borrows: Vec<_> = named.iter().map(|(n, p)| (n.clone(), p.borrow())).collect();
        let entries: Vec<(String, &crate::nn::Tensor)> =
            borrows.iter().map(|(n, r)| (n.clone(), &**r)).collect();
        save_params(&dir.join("params.bin"), &entries)?;
        let manifest = Manifest {
            k: self.k,
            obs_dim: self.obs_dim,
            act_dim: self.act_dim,
            max_action: self.max_action,
            hyper: self.hyper.clone(),
            flags: self.flags.clone(),
            episode_actor: self.episode_actor,
            updates_done: self.updates_done,
        };
        let text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| NnError::Checkpoint(format!("manifest encode: {e}")))?;
        std::fs::write(dir.join("manifest.json"), text)?;
        Ok(())
    }

    /// Rebuild an ensemble from `save` output. Optimizer moments are not part
    /// of a checkpoint; they restart fresh.
    pub fn load(dir: &Path) -> Result<Ensemble, NnError> {
        let mpath = dir.join("manifest.json");
        let text = std::fs::read_to_string(&mpath)?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| NnError::Checkpoint(format!("{}: {e}", mpath.display())))?;
        let entries = load_params(&dir.join("params.bin"))?;

        let mut ens = Ensemble::new(
            manifest.obs_dim,
            manifest.act_dim,
            manifest.max_action,
            &manifest.hyper,
            manifest.flags,
            0,
        );
        ens.episode_actor = manifest.episode_actor;
        ens.updates_done = manifest.updates_done;

        let mut by_name: std::collections::BTreeMap<String, crate::nn::Tensor> =
            entries.into_iter().collect();
        // params are Rc-shared cells, so clone the handles out first and then
        // write through them without holding a borrow of the ensemble
        let mut slots = Vec::new();
        for (net_name, net) in ens.net_names() {
            for (pname, p) in net.named_params() {
                slots.push((format!("{net_name}.{pname}"), p));
            }
        }
        for (key, p) in slots {
            let t = by_name.remove(&key).ok_or_else(|| {
                NnError::Checkpoint(format!("missing parameter {key} in checkpoint"))
            })?;
            let mut cell = p.borrow_mut();
            if cell.shape != t.shape {
                return Err(NnError::Checkpoint(format!(
                    "parameter {key} has shape {:?}, expected {:?}",
                    t.shape, cell.shape
                )));
            }
            cell.data = t.data;
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(NnError::Checkpoint(format!("unknown parameter {extra} in checkpoint")));
        }
        Ok(ens)
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    k: usize,
    obs_dim: usize,
    act_dim: usize,
    max_action: f64,
    hyper: AgentHyper,
    flags: VariantFlags,
    episode_actor: usize,
    updates_done: u64,
}

fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in scores.iter().enumerate().skip(1) {
        if v > scores[best] {
            best = i;
        }
    }
    best
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}
