//! Layer helpers. Each layer is a naming convention over a [`ParameterSet`]:
//! `init_*` registers tensors under a prefix and the matching forward
//! function binds them from a graph.

use rand::Rng;

use crate::graph::{Graph, Var};
use crate::init::{orthogonal, xavier_uniform};
use crate::params::ParameterSet;
use crate::tensor::Tensor;

pub fn init_linear<R: Rng + ?Sized>(ps: &mut ParameterSet, prefix: &str, input: usize, output: usize, rng: &mut R) {
    ps.insert(format!("{prefix}.w"), xavier_uniform(&[input, output], input, output, rng));
    ps.insert(format!("{prefix}.b"), Tensor::zeros(&[output]));
}

/// `x W + b` for `x` of shape `[N, in]`.
pub fn linear<'g>(g: &'g Graph<'g>, prefix: &str, x: Var<'g>) -> Var<'g> {
    x.matmul(g.param(&format!("{prefix}.w"))) + g.param(&format!("{prefix}.b"))
}

pub fn init_conv2d<R: Rng + ?Sized>(
    ps: &mut ParameterSet,
    prefix: &str,
    cin: usize,
    cout: usize,
    k: usize,
    rng: &mut R,
) {
    ps.insert(format!("{prefix}.w"), xavier_uniform(&[cout, cin, k, k], cin * k * k, cout * k * k, rng));
    ps.insert(format!("{prefix}.b"), Tensor::zeros(&[cout]));
}

pub fn conv2d<'g>(g: &'g Graph<'g>, prefix: &str, x: Var<'g>, stride: usize, pad: usize) -> Var<'g> {
    x.conv2d(g.param(&format!("{prefix}.w")), g.param(&format!("{prefix}.b")), stride, pad)
}

/// Gate order in the stacked weights is reset, update, candidate.
pub fn init_gru<R: Rng + ?Sized>(ps: &mut ParameterSet, prefix: &str, input: usize, hidden: usize, rng: &mut R) {
    let mut w_ih = Tensor::zeros(&[input, 3 * hidden]);
    let mut w_hh = Tensor::zeros(&[hidden, 3 * hidden]);
    for gate in 0..3 {
        let wi = xavier_uniform(&[input, hidden], input, hidden, rng);
        let wh = orthogonal(hidden, rng);
        for r in 0..input {
            for c in 0..hidden {
                w_ih.data_mut()[r * 3 * hidden + gate * hidden + c] = wi.data()[r * hidden + c];
            }
        }
        for r in 0..hidden {
            for c in 0..hidden {
                w_hh.data_mut()[r * 3 * hidden + gate * hidden + c] = wh.data()[r * hidden + c];
            }
        }
    }
    ps.insert(format!("{prefix}.w_ih"), w_ih);
    ps.insert(format!("{prefix}.w_hh"), w_hh);
    ps.insert(format!("{prefix}.b_ih"), Tensor::zeros(&[3 * hidden]));
    ps.insert(format!("{prefix}.b_hh"), Tensor::zeros(&[3 * hidden]));
}

/// One GRU step: `x` is `[N, in]`, `h` is `[N, H]`.
pub fn gru_cell<'g>(g: &'g Graph<'g>, prefix: &str, x: Var<'g>, h: Var<'g>) -> Var<'g> {
    let hidden = h.shape()[1];
    let gi = x.matmul(g.param(&format!("{prefix}.w_ih"))) + g.param(&format!("{prefix}.b_ih"));
    let gh = h.matmul(g.param(&format!("{prefix}.w_hh"))) + g.param(&format!("{prefix}.b_hh"));
    let r = (gi.slice(1, 0, hidden) + gh.slice(1, 0, hidden)).sigmoid();
    let z = (gi.slice(1, hidden, 2 * hidden) + gh.slice(1, hidden, 2 * hidden)).sigmoid();
    let n = (gi.slice(1, 2 * hidden, 3 * hidden) + r * gh.slice(1, 2 * hidden, 3 * hidden)).tanh();
    // h' = (1 - z) n + z h
    n + z * (h - n)
}

/// Runs a GRU over `steps` (each `[N, in]`) from a zero state and returns
/// the final hidden state.
pub fn gru_last<'g>(g: &'g Graph<'g>, prefix: &str, steps: &[Var<'g>], hidden: usize) -> Var<'g> {
    let n = steps.first().map(|s| s.shape()[0]).unwrap_or(0);
    let mut h = g.constant(Tensor::zeros(&[n, hidden]));
    for &x in steps {
        h = gru_cell(g, prefix, x, h);
    }
    h
}
