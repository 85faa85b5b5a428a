use rand::Rng;

use cab_autodiff::nn::{gru_cell, gru_last, init_gru, init_linear, linear};
use cab_autodiff::{Graph, ParameterSet, Tensor, Var};

use crate::batch::InitialStates;
use crate::config::{LossConfig, ModelConfig};
use crate::dynamics::{integrate_dynamics, ControlGaussians};

pub fn init_cvae<R: Rng + ?Sized>(ps: &mut ParameterSet, cfg: &ModelConfig, rng: &mut R) {
    let xc = cfg.d_x + cfg.d_c();
    init_linear(ps, "prior.l1", xc, cfg.mlp_hidden, rng);
    init_linear(ps, "prior.l2", cfg.mlp_hidden, cfg.num_modes, rng);
    init_gru(ps, "future", 2, cfg.future_hidden, rng);
    init_linear(ps, "post.l1", xc + cfg.future_hidden, cfg.mlp_hidden, rng);
    init_linear(ps, "post.l2", cfg.mlp_hidden, cfg.num_modes, rng);
    init_linear(ps, "dec.init", xc + cfg.num_modes, cfg.decoder_hidden, rng);
    init_gru(ps, "dec.gru", 3, cfg.decoder_hidden, rng);
    init_linear(ps, "dec.out", cfg.decoder_hidden, 5, rng);
}

/// Latent prior logits `[N, |Z|]` from `[x ; c]`.
pub fn prior_logits<'g>(g: &'g Graph<'g>, x: Var<'g>, c: Var<'g>) -> Var<'g> {
    let h = linear(g, "prior.l1", g.concat(&[x, c], 1)).tanh();
    linear(g, "prior.l2", h)
}

/// Posterior logits `[N, |Z|]` from `[x ; c ; enc(y)]`; `future` is `[N, T, 2]`.
pub fn posterior_logits<'g>(g: &'g Graph<'g>, cfg: &ModelConfig, x: Var<'g>, c: Var<'g>, future: &Tensor) -> Var<'g> {
    let (n, t) = (future.shape()[0], future.shape()[1]);
    let steps: Vec<Var<'g>> = (0..t)
        .map(|k| {
            let mut d = Vec::with_capacity(2 * n);
            for i in 0..n {
                let p = &future.data()[(i * t + k) * 2..(i * t + k) * 2 + 2];
                d.extend_from_slice(&[p[0] / 10.0, p[1] / 10.0]);
            }
            g.constant(Tensor::new(vec![n, 2], d).expect("n × 2"))
        })
        .collect();
    let ey = gru_last(g, "future", &steps, cfg.future_hidden);
    let h = linear(g, "post.l1", g.concat(&[x, c, ey], 1)).tanh();
    linear(g, "post.l2", h)
}

/// Position Gaussians for a set of decoded `(instance, mode)` rows.
///
/// `mean` is `[R·T, 2]` and `cov` is `[R·T, 3]` holding `(σxx, σxy, σyy)`,
/// ordered row-major over `(row, step)`.
#[derive(Debug, Clone, Copy)]
pub struct ModeGaussians<'g> {
    pub rows: usize,
    pub steps: usize,
    pub mean: Var<'g>,
    pub cov: Var<'g>,
}

fn stack_steps<'g>(g: &'g Graph<'g>, per_step: &[Var<'g>], rows: usize) -> Var<'g> {
    let cols: Vec<Var<'g>> = per_step.iter().map(|v| v.reshape(&[rows, 1])).collect();
    g.concat(&cols, 1).reshape(&[rows * per_step.len(), 1])
}

/// Decodes the given `(instance, mode)` pairs. `x`, `c` and `s0` are indexed
/// by instance.
pub fn decode<'g>(
    g: &'g Graph<'g>,
    cfg: &ModelConfig,
    x: Var<'g>,
    c: Var<'g>,
    s0: &InitialStates,
    pairs: &[(usize, usize)],
) -> ModeGaussians<'g> {
    let rows = pairs.len();
    let inst: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let mut onehot = Tensor::zeros(&[rows, cfg.num_modes]);
    for (r, &(_, z)) in pairs.iter().enumerate() {
        onehot.data_mut()[r * cfg.num_modes + z] = 1.0;
    }
    let inputs = g.concat(&[x.gather_rows(&inst), c.gather_rows(&inst), g.constant(onehot)], 1);
    let mut h = linear(g, "dec.init", inputs).tanh();
    let mut prev = g.constant(Tensor::zeros(&[rows, 2]));
    let (ls_a, ls_w) = (cfg.accel_sigma.map(f64::ln), cfg.yaw_rate_sigma.map(f64::ln));
    let mut ctl = ControlGaussians {
        accel: Vec::new(),
        yaw_rate: Vec::new(),
        var_accel: Vec::new(),
        var_yaw_rate: Vec::new(),
        cov_accel_yaw_rate: Vec::new(),
    };
    for t in 0..cfg.horizon_steps {
        let phase = g.constant(Tensor::full(&[rows, 1], (t as f64) / cfg.horizon_steps as f64));
        h = gru_cell(g, "dec.gru", g.concat(&[prev, phase], 1), h);
        let out = linear(g, "dec.out", h);
        let bounded = out.slice(1, 0, 2).tanh();
        let a = bounded.col(0).scale(cfg.accel_max);
        let w = bounded.col(1).scale(cfg.yaw_rate_max);
        let log_sa = out.col(2).sigmoid().scale(ls_a[1] - ls_a[0]).add_scalar(ls_a[0]);
        let log_sw = out.col(3).sigmoid().scale(ls_w[1] - ls_w[0]).add_scalar(ls_w[0]);
        let rho = out.col(4).tanh().scale(0.95);
        ctl.var_accel.push(log_sa.scale(2.0).exp());
        ctl.var_yaw_rate.push(log_sw.scale(2.0).exp());
        ctl.cov_accel_yaw_rate.push(rho * (log_sa + log_sw).exp());
        ctl.accel.push(a);
        ctl.yaw_rate.push(w);
        prev = bounded;
    }
    let pos = integrate_dynamics(g, &s0.gather(&inst), &ctl, cfg.dt);
    let mean = g.concat(&[stack_steps(g, &pos.mean_x, rows), stack_steps(g, &pos.mean_y, rows)], 1);
    let floor = cfg.pos_var_floor;
    let cov = g.concat(
        &[
            stack_steps(g, &pos.var_x, rows).add_scalar(floor),
            stack_steps(g, &pos.cov_xy, rows),
            stack_steps(g, &pos.var_y, rows).add_scalar(floor),
        ],
        1,
    );
    ModeGaussians { rows, steps: cfg.horizon_steps, mean, cov }
}

/// Every `(instance, mode)` pair, instance-major.
pub fn all_pairs(n: usize, modes: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (0..modes).map(move |z| (i, z))).collect()
}

/// `Σ_t log N(y_t; μ_{z,t}, Σ_{z,t})` as `[N, |Z|]` for modes decoded with
/// [`all_pairs`]; `future` is `[N, T, 2]`.
pub fn mode_log_likelihoods<'g>(g: &'g Graph<'g>, modes: &ModeGaussians<'g>, future: &Tensor, num_modes: usize) -> Var<'g> {
    let (n, t) = (future.shape()[0], future.shape()[1]);
    let mut y = Vec::with_capacity(n * num_modes * t * 2);
    for i in 0..n {
        let row = &future.data()[i * t * 2..(i + 1) * t * 2];
        for _ in 0..num_modes {
            y.extend_from_slice(row);
        }
    }
    let target = g.constant(Tensor::new(vec![n * num_modes * t, 2], y).expect("sized"));
    g.gaussian2_log_density(target - modes.mean, modes.cov)
        .reshape(&[n, num_modes, t])
        .sum_axis(2)
}

/// Mixture log-likelihood `log Σ_z w_z exp(ll_z)`, `[N]`, given log-weights
/// and per-mode log-likelihoods, both `[N, |Z|]`.
pub fn gmm_log_likelihood<'g>(log_weights: Var<'g>, mode_ll: Var<'g>) -> Var<'g> {
    (log_weights + mode_ll).logsumexp()
}

/// `KL(p ‖ q)` per row from log-probabilities `[N, |Z|]`, giving `[N]`.
pub fn kl_categorical<'g>(log_p: Var<'g>, log_q: Var<'g>) -> Var<'g> {
    (log_p.exp() * (log_p - log_q)).sum_axis(1)
}

/// Batch-marginal estimate `H(mean q) − mean H(q)` from log-probabilities.
pub fn mutual_information<'g>(log_q: Var<'g>) -> Var<'g> {
    let n = log_q.shape()[0] as f64;
    let q = log_q.exp();
    let marginal = q.sum_axis(0).scale(1.0 / n);
    let h_marginal = -(marginal * marginal.ln()).sum();
    let h_each = -(q * log_q).sum().scale(1.0 / n);
    h_marginal - h_each
}

/// Forward quantities of one branch (real or null context).
#[derive(Debug, Clone, Copy)]
pub struct Branch<'g> {
    pub prior_logits: Var<'g>,
    pub log_prior: Var<'g>,
    pub log_posterior: Var<'g>,
    /// Per-mode trajectory log-likelihoods `[N, |Z|]`.
    pub mode_ll: Var<'g>,
}

pub fn run_branch<'g>(
    g: &'g Graph<'g>,
    cfg: &ModelConfig,
    x: Var<'g>,
    c: Var<'g>,
    s0: &InitialStates,
    future: &Tensor,
) -> Branch<'g> {
    let n = s0.len();
    let prior_logits = prior_logits(g, x, c);
    let log_posterior = posterior_logits(g, cfg, x, c, future).log_softmax();
    let modes = decode(g, cfg, x, c, s0, &all_pairs(n, cfg.num_modes));
    let mode_ll = mode_log_likelihoods(g, &modes, future, cfg.num_modes);
    Branch { prior_logits, log_prior: prior_logits.log_softmax(), log_posterior, mode_ll }
}

/// Terms of the CVAE objective for one branch.
#[derive(Debug, Clone, Copy)]
pub struct CvaeTerms<'g> {
    pub loss: Var<'g>,
    /// `−log Σ_z q(z) p(y|z)`, `[N]`.
    pub nll: Var<'g>,
    /// `KL(q ‖ prior)`, `[N]`.
    pub kl: Var<'g>,
    pub mi: Var<'g>,
}

/// `mean(NLL + α·KL(q ‖ p)) − β·I_q`. The likelihood weights modes by the
/// posterior, so all modes are decoded and no latent is sampled. `log_prior`
/// is usually the branch prior; fusion schemes substitute their own.
pub fn loss_cvae<'g>(branch: &Branch<'g>, log_prior: Var<'g>, cfg: &LossConfig, alpha: f64) -> CvaeTerms<'g> {
    let nll = -gmm_log_likelihood(branch.log_posterior, branch.mode_ll);
    let kl = kl_categorical(branch.log_posterior, log_prior);
    let mi = mutual_information(branch.log_posterior);
    let loss = (nll + kl.scale(alpha)).mean() - mi.scale(cfg.beta_mi);
    CvaeTerms { loss, nll, kl, mi }
}

/// Plain-number helpers for inspecting distributions outside a graph.
pub mod categorical {
    pub fn softmax(logits: &[f64]) -> Vec<f64> {
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|v| v / z).collect()
    }

    /// Lowest index among the maxima.
    pub fn argmax(v: &[f64]) -> usize {
        let mut best = 0;
        for (i, &x) in v.iter().enumerate() {
            if x > v[best] {
                best = i;
            }
        }
        best
    }

    /// `Σ p ln(p/q)` with `0·ln 0 = 0`; `None` when `q` misses mass of `p`.
    pub fn kl(p: &[f64], q: &[f64]) -> Option<f64> {
        let mut s = 0.0;
        for (&pi, &qi) in p.iter().zip(q) {
            if pi == 0.0 {
                continue;
            }
            if qi == 0.0 {
                return None;
            }
            s += pi * (pi / qi).ln();
        }
        Some(s)
    }

    pub fn entropy(p: &[f64]) -> f64 {
        -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
    }

    /// `H(mean p) − mean H(p)`.
    pub fn mutual_information(batch: &[Vec<f64>]) -> f64 {
        let n = batch.len() as f64;
        let k = batch[0].len();
        let mean: Vec<f64> = (0..k).map(|j| batch.iter().map(|p| p[j]).sum::<f64>() / n).collect();
        entropy(&mean) - batch.iter().map(|p| entropy(p)).sum::<f64>() / n
    }
}
