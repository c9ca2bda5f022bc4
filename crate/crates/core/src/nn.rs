//! Basic trainable layers built on the autodiff graph.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, ParamId, ParamStore, Var};
use crate::tensor::{Real, Tensor};

pub const LN_EPS: f64 = 1e-5;

/// Parameter initialization context: a store plus a deterministic RNG.
pub struct Init<'a, T> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut ChaCha8Rng,
}

impl<T: Real> Init<'_, T> {
    pub fn uniform(&mut self, name: &str, rows: usize, cols: usize, bound: f64) -> ParamId {
        let t = Tensor::from_fn(rows, cols, |_, _| {
            T::lit(self.rng.random_range(-bound..=bound))
        });
        self.store.add(name, t)
    }

    pub fn constant(&mut self, name: &str, rows: usize, cols: usize, value: f64) -> ParamId {
        self.store
            .add(name, Tensor::full(rows, cols, T::lit(value)))
    }
}

/// `y = x·W + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<T: Real>(init: &mut Init<T>, name: &str, input: usize, output: usize) -> Self {
        let bound = (6.0 / (input + output) as f64).sqrt();
        Self::with_bound(init, name, input, output, bound)
    }

    pub fn with_bound<T: Real>(
        init: &mut Init<T>,
        name: &str,
        input: usize,
        output: usize,
        bound: f64,
    ) -> Self {
        Self {
            w: init.uniform(&format!("{name}.w"), input, output, bound),
            b: init.constant(&format!("{name}.b"), 1, output, 0.0),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Var {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }
}

/// 1-D convolution over the row (time) axis with "same" padding.
///
/// Weights are stored as `(kernel·in) × out` so the forward pass is an
/// im2col followed by a single matrix product.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub kernel: usize,
}

impl Conv1d {
    pub fn new<T: Real>(
        init: &mut Init<T>,
        name: &str,
        input: usize,
        output: usize,
        kernel: usize,
    ) -> Self {
        assert!(kernel % 2 == 1, "odd kernels only");
        let bound = (6.0 / ((input + output) * kernel) as f64).sqrt();
        Self::with_bound(init, name, input, output, kernel, bound)
    }

    pub fn with_bound<T: Real>(
        init: &mut Init<T>,
        name: &str,
        input: usize,
        output: usize,
        kernel: usize,
        bound: f64,
    ) -> Self {
        Self {
            w: init.uniform(&format!("{name}.w"), kernel * input, output, bound),
            b: init.constant(&format!("{name}.b"), 1, output, 0.0),
            kernel,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Var {
        let cols = if self.kernel == 1 {
            x
        } else {
            g.unfold(x, self.kernel, self.kernel / 2)
        };
        let w = g.param(self.w);
        let b = g.param(self.b);
        let y = g.matmul(cols, w);
        g.add_row(y, b)
    }
}

/// Layer normalization with a learned per-channel gain and shift.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub shift: ParamId,
}

impl LayerNorm {
    pub fn new<T: Real>(init: &mut Init<T>, name: &str, dim: usize) -> Self {
        Self {
            gain: init.constant(&format!("{name}.gain"), 1, dim, 1.0),
            shift: init.constant(&format!("{name}.shift"), 1, dim, 0.0),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Var {
        let n = g.layer_norm(x, LN_EPS);
        let gain = g.param(self.gain);
        let shift = g.param(self.shift);
        let y = g.mul_row(n, gain);
        g.add_row(y, shift)
    }
}

/// Sinusoidal position table, `len × dim`.
pub fn positional_encoding<T: Real>(len: usize, dim: usize) -> Tensor<T> {
    Tensor::from_fn(len, dim, |pos, i| {
        let pair = (i / 2) as f64;
        let angle = pos as f64 / 10_000f64.powf(2.0 * pair / dim as f64);
        T::lit(if i % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}
