use rand::Rng;

use super::tape::{NodeId, Tape};
use super::tensor::{param, Param, Tensor};
use super::NnError;

/// One dense layer. `w` is (in, out) row-major, `b` is (out).
pub struct Linear {
    pub w: Param,
    pub b: Param,
}

/// Fully-connected net with ReLU hidden activations and a linear output.
/// Output squashing (tanh, scaling) is composed by callers.
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// Weights and biases drawn from U(-1/sqrt(fan_in), +1/sqrt(fan_in)),
    /// layer by layer, weights (row-major) before biases.
    pub fn new<R: Rng>(sizes: &[usize], rng: &mut R) -> Mlp {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for win in sizes.windows(2) {
            let (nin, nout) = (win[0], win[1]);
            let bound = 1.0 / (nin as f64).sqrt();
            let w: Vec<f64> = (0..nin * nout).map(|_| rng.random_range(-bound..bound)).collect();
            let b: Vec<f64> = (0..nout).map(|_| rng.random_range(-bound..bound)).collect();
            layers.push(Linear {
                w: param(Tensor::from_vec(&[nin, nout], w)),
                b: param(Tensor::from_vec(&[nout], b)),
            });
        }
        Mlp { sizes: sizes.to_vec(), layers }
    }

    pub fn in_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// Single-sample forward pass.
    pub fn forward1(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.in_dim(), "input size mismatch");
        let mut cur = x.to_vec();
        for (li, layer) in self.layers.iter().enumerate() {
            let w = layer.w.borrow();
            let b = layer.b.borrow();
            let (nin, nout) = (w.rows(), w.cols());
            let mut next = b.data.clone();
            for (i, &xi) in cur.iter().enumerate() {
                if xi != 0.0 {
                    let wrow = &w.data[i * nout..(i + 1) * nout];
                    for (n, &wv) in next.iter_mut().zip(wrow) {
                        *n += xi * wv;
                    }
                }
            }
            debug_assert_eq!(cur.len(), nin);
            if li + 1 < self.layers.len() {
                next.iter_mut().for_each(|v| {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                });
            }
            cur = next;
        }
        cur
    }

    /// Batched forward pass without a graph (m rows), for target computation
    /// and evaluation paths that never need gradients.
    pub fn forward_batch(&self, x: &[f64], m: usize) -> Vec<f64> {
        assert_eq!(x.len(), m * self.in_dim(), "input size mismatch");
        let mut cur = x.to_vec();
        let mut ncur = self.in_dim();
        for (li, layer) in self.layers.iter().enumerate() {
            let w = layer.w.borrow();
            let b = layer.b.borrow();
            let nout = w.cols();
            let mut next = vec![0.0; m * nout];
            unsafe {
                matrixmultiply::dgemm(
                    m, ncur, nout, 1.0,
                    cur.as_ptr(), ncur as isize, 1,
                    w.data.as_ptr(), nout as isize, 1,
                    0.0,
                    next.as_mut_ptr(), nout as isize, 1,
                );
            }
            let last = li + 1 == self.layers.len();
            for row in next.chunks_exact_mut(nout) {
                for (v, &bv) in row.iter_mut().zip(b.data.iter()) {
                    *v += bv;
                    if !last && *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            cur = next;
            ncur = nout;
        }
        cur
    }

    /// Graph-building forward pass. With `tracked` false the weights enter as
    /// constants, so backward reaches only the inputs.
    pub fn forward_tape(&self, tape: &mut Tape, x: NodeId, tracked: bool) -> NodeId {
        let mut cur = x;
        for (li, layer) in self.layers.iter().enumerate() {
            let w = tape.param(&layer.w, tracked);
            let b = tape.param(&layer.b, tracked);
            cur = tape.matmul(cur, w);
            cur = tape.add_row(cur, b);
            if li + 1 < self.layers.len() {
                cur = tape.relu(cur);
            }
        }
        cur
    }

    pub fn params(&self) -> Vec<Param> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for layer in &self.layers {
            out.push(layer.w.clone());
            out.push(layer.b.clone());
        }
        out
    }

    /// Stable parameter naming, used by checkpoints: `layer{i}.w`, `layer{i}.b`.
    pub fn named_params(&self) -> Vec<(String, Param)> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for (i, layer) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.w"), layer.w.clone()));
            out.push((format!("layer{i}.b"), layer.b.clone()));
        }
        out
    }

    /// Independent copy with fresh parameter cells holding the same values.
    pub fn deep_clone(&self) -> Mlp {
        let layers = self
            .layers
            .iter()
            .map(|l| Linear {
                w: param(l.w.borrow().clone()),
                b: param(l.b.borrow().clone()),
            })
            .collect();
        Mlp { sizes: self.sizes.clone(), layers }
    }

    /// Rebuilds a net of the given sizes from named tensors (checkpoint load).
    pub fn from_named(sizes: &[usize], entries: &[(String, Tensor)]) -> Result<Mlp, NnError> {
        let mut layers = Vec::new();
        for (i, win) in sizes.windows(2).enumerate() {
            let (nin, nout) = (win[0], win[1]);
            let find = |suffix: &str, want: &[usize]| -> Result<Tensor, NnError> {
                let name = format!("layer{i}.{suffix}");
                let t = entries
                    .iter()
                    .find(|(n, _)| *n == name)
                    .map(|(_, t)| t.clone())
                    .ok_or_else(|| NnError::Checkpoint(format!("missing tensor {name}")))?;
                if t.shape != want {
                    return Err(NnError::Checkpoint(format!(
                        "tensor {name} has shape {:?}, expected {:?}",
                        t.shape, want
                    )));
                }
                Ok(t)
            };
            layers.push(Linear {
                w: param(find("w", &[nin, nout])?),
                b: param(find("b", &[nout])?),
            });
        }
        Ok(Mlp { sizes: sizes.to_vec(), layers })
    }
}
