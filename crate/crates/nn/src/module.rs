use crate::param::Param;
use crate::tensor::Tensor;

/// Whether a forward pass must retain activations for a later backward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// What a backward pass must produce.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Backward {
    /// Gradient with respect to the module input.
    pub input: bool,
    /// Accumulate gradients into parameters.
    pub params: bool,
}

impl Backward {
    pub const FULL: Backward = Backward { input: true, params: true };
    pub const INPUT_ONLY: Backward = Backward { input: true, params: false };
    pub const PARAMS_ONLY: Backward = Backward { input: false, params: true };
}

/// A differentiable layer.
///
/// `backward` consumes the activations cached by the most recent
/// `forward(.., Mode::Train)`; calling it without one panics. When
/// `opts.input` is false the returned tensor is empty and must be ignored.
pub trait Module: Send {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor;
    fn backward(&mut self, grad: &Tensor, opts: Backward) -> Tensor;
    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }
}

#[derive(Default)]
pub struct Sequential {
    layers: Vec<Box<dyn Module>>,
}

impl Sequential {
    pub fn new() -> Self {
        Sequential { layers: Vec::new() }
    }

    pub fn push(&mut self, layer: impl Module + 'static) -> &mut Self {
        self.layers.push(Box::new(layer));
        self
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

impl Module for Sequential {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        let mut iter = self.layers.iter_mut();
        let mut h = match iter.next() {
            Some(first) => first.forward(x, mode),
            None => return x.clone(),
        };
        for layer in iter {
            h = layer.forward(&h, mode);
        }
        h
    }

    fn backward(&mut self, grad: &Tensor, opts: Backward) -> Tensor {
        let n = self.layers.len();
        if n == 0 {
            return grad.clone();
        }
        let mut g = grad.clone();
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            let input = if i == 0 { opts.input } else { true };
            g = layer.backward(&g, Backward { input, params: opts.params });
        }
        g
    }

    fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}
