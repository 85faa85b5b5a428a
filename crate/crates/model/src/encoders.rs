use rand::Rng;

use cab_autodiff::nn::{conv2d, gru_last, init_conv2d, init_gru, init_linear, linear};
use cab_autodiff::{Graph, ParameterSet, Tensor, Var};

use crate::batch::{Batch, STATE_FEATURES};
use crate::config::ModelConfig;

pub fn init_encoders<R: Rng + ?Sized>(ps: &mut ParameterSet, cfg: &ModelConfig, rng: &mut R) {
    init_gru(ps, "motion", STATE_FEATURES, cfg.d_x, rng);
    let [c1, c2, c3] = cfg.conv_channels;
    init_conv2d(ps, "map.conv1", cfg.map_channels, c1, 3, rng);
    init_conv2d(ps, "map.conv2", c1, c2, 3, rng);
    init_conv2d(ps, "map.conv3", c2, c3, 3, rng);
    init_linear(ps, "map.out", cfg.conv_flat(), cfg.d_m, rng);
    init_linear(ps, "nbr.embed", STATE_FEATURES, cfg.neighbor_hidden, rng);
    init_linear(ps, "nbr.out", cfg.neighbor_hidden, cfg.d_g, rng);
}

/// Final hidden state of a GRU over the history features, `[N, d_x]`.
pub fn encode_motion<'g>(g: &'g Graph<'g>, cfg: &ModelConfig, history: &[Tensor]) -> Var<'g> {
    let steps: Vec<Var<'g>> = history.iter().map(|t| g.constant(t.clone())).collect();
    gru_last(g, "motion", &steps, cfg.d_x)
}

/// Three stride-2 convolutions with ReLU, flattened and projected to `[N, d_m]`.
pub fn encode_map<'g>(g: &'g Graph<'g>, cfg: &ModelConfig, map: &Tensor) -> Var<'g> {
    let n = map.shape()[0];
    let h = conv2d(g, "map.conv1", g.constant(map.clone()), 2, 1).relu();
    let h = conv2d(g, "map.conv2", h, 2, 1).relu();
    let h = conv2d(g, "map.conv3", h, 2, 1).relu();
    linear(g, "map.out", h.reshape(&[n, cfg.conv_flat()]))
}

/// Shared per-neighbor embedding, mean-pooled per instance, then projected
/// to `[N, d_g]`. `pool` is the `[N, M]` averaging matrix.
pub fn encode_neighbors<'g>(g: &'g Graph<'g>, neighbors: &Tensor, pool: &Tensor) -> Var<'g> {
    let e = linear(g, "nbr.embed", g.constant(neighbors.clone())).tanh();
    let pooled = g.constant(pool.clone()).matmul(e);
    linear(g, "nbr.out", pooled)
}

/// `[m ; g]` for every instance of the batch.
pub fn encode_context<'g>(g: &'g Graph<'g>, cfg: &ModelConfig, batch: &Batch) -> Var<'g> {
    let m = encode_map(g, cfg, &batch.map);
    let gv = encode_neighbors(g, &batch.neighbors, &batch.pool);
    g.concat(&[m, gv], 1)
}

/// Context vector of the null context (zero raster, no neighbors), `[1, d_c]`.
pub fn encode_null_context<'g>(g: &'g Graph<'g>, cfg: &ModelConfig) -> Var<'g> {
    let s = cfg.map_size;
    let m = encode_map(g, cfg, &Tensor::zeros(&[1, cfg.map_channels, s, s]));
    let gv = encode_neighbors(g, &Tensor::zeros(&[0, STATE_FEATURES]), &Tensor::zeros(&[1, 0]));
    g.concat(&[m, gv], 1)
}

/// Encoded inputs of a batch. `context` is what the model conditions on:
/// the real context, or the null context for a context-free model.
#[derive(Debug, Clone, Copy)]
pub struct Encoded<'g> {
    pub x: Var<'g>,
    pub context: Var<'g>,
    /// Null-context vector broadcast to `[N, d_c]`.
    pub blind: Var<'g>,
}

pub fn encode_batch<'g>(g: &'g Graph<'g>, cfg: &ModelConfig, batch: &Batch) -> Encoded<'g> {
    let n = batch.len();
    let x = encode_motion(g, cfg, &batch.history);
    let blind = encode_null_context(g, cfg).gather_rows(&vec![0; n]);
    let context = if cfg.use_context { encode_context(g, cfg, batch) } else { blind };
    Encoded { x, context, blind }
}
