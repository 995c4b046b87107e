use std::cell::RefCell;
use std::rc::Rc;

/// Dense row-major array of f64 with an optional gradient buffer of the same
/// length. Rank is 1 (vectors, biases) or 2 (weight matrices, batches).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; n], grad: None }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        let n: usize = shape.iter().product();
        assert_eq!(n, data.len(), "shape {:?} does not match data length {}", shape, data.len());
        Tensor { shape: shape.to_vec(), data, grad: None }
    }

    /// Enables gradient accumulation (zero-initialized).
    pub fn with_grad(mut self) -> Self {
        self.grad = Some(vec![0.0; self.data.len()]);
        self
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows of a rank-2 tensor; a rank-1 tensor is one row.
    pub fn rows(&self) -> usize {
        if self.shape.len() == 2 { self.shape[0] } else { 1 }
    }

    /// Columns of a rank-2 tensor; a rank-1 tensor is all columns.
    pub fn cols(&self) -> usize {
        *self.shape.last().expect("tensor has no shape")
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// Shared, mutable parameter cell. Persistent across training steps; the tape
/// accumulates into its gradient buffer on backward passes.
pub type Param = Rc<RefCell<Tensor>>;

pub fn param(t: Tensor) -> Param {
    Rc::new(RefCell::new(t.with_grad()))
}
