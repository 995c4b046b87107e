use super::mlp::Mlp;
use super::tensor::Param;
use super::NnError;

/// Adam over a fixed parameter list. `step` consumes and zeroes the
/// accumulated gradients.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    params: Vec<Param>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: Vec<Param>, lr: f64) -> Adam {
        let m = params.iter().map(|p| vec![0.0; p.borrow().len()]).collect();
        let v = params.iter().map(|p| vec![0.0; p.borrow().len()]).collect();
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, params, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (p, (m, v)) in self.params.iter().zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let mut t = p.borrow_mut();
            let grad = t.grad.as_mut().expect("parameter lacks grad buffer");
            for i in 0..grad.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                grad[i] = 0.0;
            }
            for ((d, &mi), &vi) in t.data.iter_mut().zip(m.iter()).zip(v.iter()) {
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                *d -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// In-place soft update: target <- rho*target + (1-rho)*main.
pub fn polyak_update(target: &Mlp, main: &Mlp, rho: f64) -> Result<(), NnError> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(NnError::InvalidCoefficient(rho));
    }
    assert_eq!(target.sizes, main.sizes, "polyak between different architectures");
    for (tl, ml) in target.layers.iter().zip(&main.layers) {
        for (tp, mp) in [(&tl.w, &ml.w), (&tl.b, &ml.b)] {
            let mut t = tp.borrow_mut();
            let m = mp.borrow();
            for (tv, &mv) in t.data.iter_mut().zip(m.data.iter()) {
                *tv = rho * *tv + (1.0 - rho) * mv;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::tensor::{param, Tensor};
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn first_adam_step_moves_by_about_lr() {
        // With a unit gradient, bias correction makes the first update
        // lr * g/(|g| + eps) ~= lr.
        let p = param(Tensor::from_vec(&[1], vec![1.0]));
        p.borrow_mut().grad.as_mut().unwrap()[0] = 1.0;
        let mut opt = Adam::new(vec![p.clone()], 1e-3);
        opt.step();
        let got = p.borrow().data[0];
        assert!((got - (1.0 - 1e-3)).abs() < 1e-9, "got {got}");
        // gradient consumed
        assert_eq!(p.borrow().grad.as_ref().unwrap()[0], 0.0);
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let p = param(Tensor::from_vec(&[1], vec![3.0]));
        let mut opt = Adam::new(vec![p.clone()], 0.05);
        for _ in 0..500 {
            let x = p.borrow().data[0];
            p.borrow_mut().grad.as_mut().unwrap()[0] = 2.0 * x;
            opt.step();
        }
        assert!(p.borrow().data[0].abs() < 0.05);
    }

    #[test]
    fn polyak_midpoint_and_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let main = Mlp::new(&[2, 3, 1], &mut rng);
        let target = main.deep_clone();
        // identical nets are a fixed point for any rho (up to rounding)
        polyak_update(&target, &main, 0.3).unwrap();
        for (tl, ml) in target.layers.iter().zip(&main.layers) {
            for (t, m) in tl.w.borrow().data.iter().zip(ml.w.borrow().data.iter()) {
                assert!((t - m).abs() <= 1e-15 * m.abs());
            }
        }
        // rho = 0.5 is the midpoint
        let t2 = Mlp::new(&[1, 1], &mut rng);
        t2.layers[0].w.borrow_mut().data[0] = 0.0;
        t2.layers[0].b.borrow_mut().data[0] = 0.0;
        let m2 = t2.deep_clone();
        m2.layers[0].w.borrow_mut().data[0] = 2.0;
        polyak_update(&t2, &m2, 0.5).unwrap();
        assert_eq!(t2.layers[0].w.borrow().data[0], 1.0);
    }

    #[test]
    fn polyak_rejects_bad_rho() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let main = Mlp::new(&[2, 3, 1], &mut rng);
        let target = main.deep_clone();
        assert!(polyak_update(&target, &main, 1.5).is_err());
        assert!(polyak_update(&target, &main, -0.1).is_err());
    }
}
