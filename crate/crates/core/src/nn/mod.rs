//! Tensors, a per-call reverse-mode tape, MLPs, Adam, soft target updates and
//! parameter file IO. Everything is f64; batches are row-major.

mod checkpoint;
mod mlp;
mod optim;
mod tape;
mod tensor;

pub use checkpoint::{load_params, save_params};
pub use mlp::{Linear, Mlp};
pub use optim::{polyak_update, Adam};
pub use tape::{NodeId, Tape};
pub use tensor::{param, Param, Tensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("coefficient {0} outside [0, 1]")]
    InvalidCoefficient(f64),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Central finite differences of `f` with respect to every element of `p`.
/// `f` must re-evaluate the objective at the parameter's current values.
pub fn numerical_grad<F: FnMut() -> f64>(mut f: F, p: &Param, h: f64) -> Vec<f64> {
    let n = p.borrow().len();
    let mut out = vec![0.0; n];
    for i in 0..n {
        let orig = p.borrow().data[i];
        p.borrow_mut().data[i] = orig + h;
        let fp = f();
        p.borrow_mut().data[i] = orig - h;
        let fm = f();
        p.borrow_mut().data[i] = orig;
        out[i] = (fp - fm) / (2.0 * h);
    }
    out
}

/// Relative error between two gradient estimates, sized for comparing
/// analytic and finite-difference values.
pub fn grad_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / (a.abs() + n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod grad_tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Builds the full critic-style loss on the tape and returns it, so the
    /// same construction serves both value re-evaluation and backward.
    fn critic_loss(net: &Mlp, tape: &mut Tape, x: &[f64], m: usize, y: &[f64], huber: bool) -> f64 {
        tape.clear();
        let input = tape.leaf(m, net.in_dim(), x);
        let q = net.forward_tape(tape, input, true);
        let loss = if huber {
            tape.huber_loss(q, y, 1.0, None)
        } else {
            tape.mse_loss(q, y, None)
        };
        tape.value(loss)[0]
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for huber in [false, true] {
            let net = Mlp::new(&[5, 8, 8, 1], &mut rng);
            let m = 4;
            let x: Vec<f64> = (0..m * 5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();

            let mut tape = Tape::new();
            let loss = {
                tape.clear();
                let input = tape.leaf(m, 5, &x);
                let q = net.forward_tape(&mut tape, input, true);
                if huber {
                    tape.huber_loss(q, &y, 1.0, None)
                } else {
                    tape.mse_loss(q, &y, None)
                }
            };
            tape.backward(loss);

            for p in net.params() {
                let analytic = p.borrow().grad.clone().unwrap();
                let mut scratch = Tape::new();
                let numeric = numerical_grad(
                    || critic_loss(&net, &mut scratch, &x, m, &y, huber),
                    &p,
                    1e-5,
                );
                let err = grad_rel_err(&analytic, &numeric);
                assert!(err < 1e-6, "huber={huber} rel err {err}");
                p.borrow_mut().zero_grad();
            }
        }
    }

    #[test]
    fn actor_path_gradients_match_finite_differences() {
        // actor -> normalize -> tanh -> scale -> concat with state -> frozen
        // critic -> negated mean, differentiated w.r.t. actor parameters.
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let obs_dim = 4;
        let act_dim = 3;
        let actor = Mlp::new(&[obs_dim, 8, act_dim], &mut rng);
        let critic = Mlp::new(&[obs_dim + act_dim, 8, 1], &mut rng);
        let m = 4;
        // scale some rows up so both normalization branches are exercised
        let s: Vec<f64> = (0..m * obs_dim).map(|_| rng.random_range(-2.0..2.0)).collect();

        let build = |tape: &mut Tape| -> f64 {
            tape.clear();
            let sn = tape.leaf(m, obs_dim, &s);
            let raw = actor.forward_tape(tape, sn, true);
            let mu = tape.normalize_rows(raw);
            let th = tape.tanh(mu);
            let a = tape.scale(th, 2.0);
            let x = tape.concat_cols(sn, a);
            let q = critic.forward_tape(tape, x, false);
            let obj = tape.neg_mean(q, None);
            tape.value(obj)[0]
        };

        let mut tape = Tape::new();
        {
            tape.clear();
            let sn = tape.leaf(m, obs_dim, &s);
            let raw = actor.forward_tape(&mut tape, sn, true);
            let mu = tape.normalize_rows(raw);
            let th = tape.tanh(mu);
            let a = tape.scale(th, 2.0);
            let x = tape.concat_cols(sn, a);
            let q = critic.forward_tape(&mut tape, x, false);
            let obj = tape.neg_mean(q, None);
            tape.backward(obj);
        }

        for p in actor.params() {
            let analytic = p.borrow().grad.clone().unwrap();
            let mut scratch = Tape::new();
            let numeric = numerical_grad(|| build(&mut scratch), &p, 1e-5);
            let err = grad_rel_err(&analytic, &numeric);
            assert!(err < 1e-6, "rel err {err}");
            p.borrow_mut().zero_grad();
        }
        // frozen critic must stay untouched
        for p in critic.params() {
            assert!(p.borrow().grad.as_ref().unwrap().iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn weighted_losses_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let net = Mlp::new(&[3, 6, 1], &mut rng);
        let m = 5;
        let x: Vec<f64> = (0..m * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();

        let build = |tape: &mut Tape| -> f64 {
            tape.clear();
            let input = tape.leaf(m, 3, &x);
            let q = net.forward_tape(tape, input, true);
            let loss = tape.mse_loss(q, &y, Some(&w));
            tape.value(loss)[0]
        };
        let mut tape = Tape::new();
        {
            tape.clear();
            let input = tape.leaf(m, 3, &x);
            let q = net.forward_tape(&mut tape, input, true);
            let loss = tape.mse_loss(q, &y, Some(&w));
            tape.backward(loss);
        }
        for p in net.params() {
            let analytic = p.borrow().grad.clone().unwrap();
            let mut scratch = Tape::new();
            let numeric = numerical_grad(|| build(&mut scratch), &p, 1e-5);
            assert!(grad_rel_err(&analytic, &numeric) < 1e-6);
            p.borrow_mut().zero_grad();
        }
    }
}
