//! Layers the agents are assembled from, plus parameter traversal.
//!
//! Parameters live in plain structs owned by the model; each optimisation
//! step "binds" them onto a fresh tape (copying the current values in) and
//! reads gradients back out by the same canonical order. `HasParams` fixes
//! that order once for the optimiser, checkpointing, and gradient tests.

use alloc::string::String;
use alloc::vec::Vec;
use core::cell::Cell;

use rand::Rng;

use super::matrix::Matrix;
use super::tape::{Tape, Var};
use crate::fmath;

/// Visits every parameter tensor in a fixed, documented order.
pub trait HasParams {
    fn for_each_param(&self, f: &mut dyn FnMut(&str, &Matrix));
    fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.for_each_param(&mut |_, _| n += 1);
        n
    }

    /// Total number of scalar entries across all parameters.
    fn scalar_count(&self) -> usize {
        let mut n = 0;
        self.for_each_param(&mut |_, m| n += m.data().len());
        n
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.for_each_param(&mut |name, _| names.push(String::from(name)));
        names
    }
}

/// Uniform init in `[−1/√fan_in, +1/√fan_in]`.
pub(crate) fn init_weight(rows: usize, cols: usize, fan_in: usize, rng: &mut impl Rng) -> Matrix {
    let bound = 1.0 / fmath::sqrt(fan_in as f64);
    let mut m = Matrix::zeros(rows, cols);
    for v in m.data_mut() {
        *v = rng.random::<f64>() * 2.0 * bound - bound;
    }
    m
}

/// Affine map `x·w + b` with `w: in×out`, `b: 1×out`.
#[derive(Clone, Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Linear {
    pub w: Matrix,
    pub b: Matrix,
}

impl Linear {
    pub fn init(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        Linear {
            w: init_weight(input, output, input, rng),
            b: Matrix::zeros(1, output),
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundLinear {
        BoundLinear {
            w: tape.param(self.w.clone()),
            b: tape.param(self.b.clone()),
        }
    }
}

#[derive(Clone, Copy)]
pub struct BoundLinear {
    pub w: Var,
    pub b: Var,
}

impl BoundLinear {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let y = tape.matmul(x, self.w);
        tape.add_bias(y, self.b)
    }

    pub fn param_vars(&self) -> [Var; 2] {
        [self.w, self.b]
    }
}

/// LSTM cell with separate weights per gate, order `[input, forget, cell, output]`.
#[derive(Clone, Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LstmCell {
    pub wx: [Matrix; 4],
    pub wh: [Matrix; 4],
    pub b: [Matrix; 4],
}

impl LstmCell {
    pub fn init(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        LstmCell {
            wx: core::array::from_fn(|_| init_weight(input, hidden, input, rng)),
            wh: core::array::from_fn(|_| init_weight(hidden, hidden, hidden, rng)),
            b: core::array::from_fn(|_| Matrix::zeros(1, hidden)),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.wh[0].rows()
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundLstmCell {
        BoundLstmCell {
            wx: core::array::from_fn(|i| tape.param(self.wx[i].clone())),
            wh: core::array::from_fn(|i| tape.param(self.wh[i].clone())),
            b: core::array::from_fn(|i| tape.param(self.b[i].clone())),
        }
    }
}

#[derive(Clone, Copy)]
pub struct BoundLstmCell {
    pub wx: [Var; 4],
    pub wh: [Var; 4],
    pub b: [Var; 4],
}

impl BoundLstmCell {
    /// One step: consumes input `x` and state `(h, c)`, returns the new state.
    pub fn step(&self, tape: &mut Tape, x: Var, h: Var, c: Var) -> (Var, Var) {
        let pre = |tape: &mut Tape, gate: usize| {
            let xi = tape.matmul(x, self.wx[gate]);
            let hi = tape.matmul(h, self.wh[gate]);
            let s = tape.add(xi, hi);
            tape.add_bias(s, self.b[gate])
        };
        let zi = pre(tape, 0);
        let i = tape.sigmoid(zi);
        let zf = pre(tape, 1);
        let f = tape.sigmoid(zf);
        let zg = pre(tape, 2);
        let g = tape.tanh(zg);
        let zo = pre(tape, 3);
        let o = tape.sigmoid(zo);
        let fc = tape.mul(f, c);
        let ig = tape.mul(i, g);
        let c_next = tape.add(fc, ig);
        let ct = tape.tanh(c_next);
        let h_next = tape.mul(o, ct);
        (h_next, c_next)
    }

    pub fn param_vars(&self) -> Vec<Var> {
        let mut out = Vec::with_capacity(12);
        out.extend_from_slice(&self.wx);
        out.extend_from_slice(&self.wh);
        out.extend_from_slice(&self.b);
        out
    }
}

/// Meaning encoder `tanh(x·w + b)`, used both as the listener's candidate
/// encoder and the speaker's perception module. Tracks how many input rows
/// it has embedded, which makes the contrastive-vs-conventional memory
/// contrast directly observable.
#[derive(Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Encoder {
    pub linear: Linear,
    #[cfg_attr(feature = "serde", serde(skip))]
    rows_encoded: Cell<u64>,
}

impl Clone for Encoder {
    fn clone(&self) -> Self {
        Encoder {
            linear: self.linear.clone(),
            rows_encoded: Cell::new(self.rows_encoded.get()),
        }
    }
}

impl Encoder {
    pub fn init(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        Encoder {
            linear: Linear::init(input, output, rng),
            rows_encoded: Cell::new(0),
        }
    }

    /// Cumulative number of rows passed through `forward`.
    pub fn rows_encoded(&self) -> u64 {
        self.rows_encoded.get()
    }

    pub fn reset_row_count(&self) {
        self.rows_encoded.set(0);
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundEncoder<'_> {
        BoundEncoder {
            linear: self.linear.bind(tape),
            rows_encoded: &self.rows_encoded,
        }
    }
}

#[derive(Clone, Copy)]
pub struct BoundEncoder<'a> {
    pub linear: BoundLinear,
    rows_encoded: &'a Cell<u64>,
}

impl BoundEncoder<'_> {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        self.rows_encoded
            .set(self.rows_encoded.get() + tape.value(x).rows() as u64);
        let y = self.linear.forward(tape, x);
        tape.tanh(y)
    }

    pub fn param_vars(&self) -> [Var; 2] {
        self.linear.param_vars()
    }
}
