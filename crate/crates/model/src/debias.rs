//! Blind-branch objectives. The blind branch is the same network evaluated
//! on the null context, so none of these methods add parameters.

use cab_autodiff::{Graph, Tensor, Var};
use cab_core::{Context, NeighborSet, SemanticMap};

use crate::batch::Batch;
use crate::config::{DebiasConfig, LossConfig, Method, ModelConfig};
use crate::cvae::{gmm_log_likelihood, kl_categorical, loss_cvae, run_branch, Branch, CvaeTerms};
use crate::encoders::encode_batch;
use crate::error::ModelError;

/// All-zero raster and no neighbors.
pub fn make_null_context(cfg: &ModelConfig, resolution: f64) -> Context {
    Context {
        map: SemanticMap::agent_centered(cfg.map_size, cfg.map_size, resolution),
        neighbors: NeighborSet::empty(),
    }
}

/// `−min(KL(p_ctx ‖ sg(p_blind)), κ)` per instance, from prior log-probabilities.
/// Gradient reaches only the context branch.
pub fn loss_cab_kl<'g>(log_prior: Var<'g>, log_prior_blind: Var<'g>, kappa: f64) -> Var<'g> {
    -kl_categorical(log_prior, log_prior_blind.stop_gradient()).min_scalar(kappa)
}

/// Log-probabilities of `softmax(σ(l) ⊙ σ(l̃))`.
pub fn rubiz_fuse<'g>(logits: Var<'g>, blind_logits: Var<'g>) -> Var<'g> {
    (logits.sigmoid() * blind_logits.sigmoid()).log_softmax()
}

/// Per-instance weights `σ(blind NLL)`, detached from the graph.
pub fn reweight_weights<'g>(blind_nll: Var<'g>) -> Var<'g> {
    blind_nll.stop_gradient().sigmoid()
}

/// `−log p(y | X, C)` under the prior-weighted mixture, `[N]`.
pub fn marginal_nll<'g>(branch: &Branch<'g>) -> Var<'g> {
    -gmm_log_likelihood(branch.log_prior, branch.mode_ll)
}

/// Every term of a training objective, kept for diagnostics and audits.
#[derive(Debug, Clone, Copy)]
pub struct Objective<'g> {
    pub total: Var<'g>,
    pub main: CvaeTerms<'g>,
    pub main_branch: Branch<'g>,
    pub blind: Option<CvaeTerms<'g>>,
    pub blind_branch: Option<Branch<'g>>,
    /// Per-instance clamped negative divergence, `[N]`.
    pub cab_kl: Option<Var<'g>>,
    /// `(weights [N], weighted NLL term)`.
    pub reweight: Option<(Var<'g>, Var<'g>)>,
}

impl Objective<'_> {
    /// Named scalar values of every term present.
    pub fn components(&self) -> Vec<(&'static str, f64)> {
        let mut out = vec![
            ("total", self.total.item()),
            ("nll", self.main.nll.mean().item()),
            ("kl", self.main.kl.mean().item()),
            ("mi", self.main.mi.item()),
        ];
        if let Some(b) = &self.blind {
            out.push(("blind_loss", b.loss.item()));
        }
        if let Some(k) = self.cab_kl {
            out.push(("cab_kl", k.mean().item()));
        }
        if let Some((w, t)) = self.reweight {
            out.push(("reweight_mean_w", w.mean().item()));
            out.push(("reweight_term", t.item()));
        }
        out
    }
}

/// Values that enter an objective only through a stop-gradient.
///
/// Pinning them as constants leaves the objective's value and gradient
/// unchanged at the parameters they were taken from, but makes the objective
/// an ordinary function of the parameters, which finite differences need.
#[derive(Debug, Clone, PartialEq)]
pub struct Detached {
    pub blind_prior_logits: Tensor,
    pub blind_nll: Tensor,
}

impl Objective<'_> {
    pub fn detached(&self) -> Option<Detached> {
        let bb = self.blind_branch?;
        Some(Detached { blind_prior_logits: bb.prior_logits.value(), blind_nll: marginal_nll(&bb).value() })
    }
}

/// Builds the method-selected training loss for one batch.
pub fn training_objective<'g>(
    g: &'g Graph<'g>,
    model: &ModelConfig,
    loss: &LossConfig,
    debias: &DebiasConfig,
    batch: &Batch,
    step: u64,
) -> Result<Objective<'g>, ModelError> {
    training_objective_pinned(g, model, loss, debias, batch, step, None)
}

/// [`training_objective`] with the stop-gradient inputs optionally replaced
/// by constants.
pub fn training_objective_pinned<'g>(
    g: &'g Graph<'g>,
    model: &ModelConfig,
    loss: &LossConfig,
    debias: &DebiasConfig,
    batch: &Batch,
    step: u64,
    pinned: Option<&Detached>,
) -> Result<Objective<'g>, ModelError> {
    let future = batch.require_future()?;
    let alpha = loss.alpha_at(step);
    let enc = encode_batch(g, model, batch);
    let main_branch = run_branch(g, model, enc.x, enc.context, &batch.initial, future);
    let blind_branch = (debias.method != Method::None)
        .then(|| run_branch(g, model, enc.x, enc.blind, &batch.initial, future));
    let blind = blind_branch.as_ref().map(|b| loss_cvae(b, b.log_prior, loss, alpha));

    let mut obj = Objective {
        total: enc.x,
        main: loss_cvae(&main_branch, main_branch.log_prior, loss, alpha),
        main_branch,
        blind,
        blind_branch,
        cab_kl: None,
        reweight: None,
    };
    obj.total = match (debias.method, blind_branch, blind) {
        (Method::None, _, _) => obj.main.loss,
        (Method::Cab, Some(bb), Some(bt)) => {
            let blind_log_prior = match pinned {
                Some(p) => g.constant(p.blind_prior_logits.clone()).log_softmax(),
                None => bb.log_prior,
            };
            let cab = loss_cab_kl(main_branch.log_prior, blind_log_prior, debias.kl_clamp);
            obj.cab_kl = Some(cab);
            obj.main.loss + cab.mean().scale(debias.lambda_kl) + bt.loss.scale(debias.lambda)
        }
        (Method::Reweight, Some(bb), Some(bt)) => {
            let blind_nll = match pinned {
                Some(p) => g.constant(p.blind_nll.clone()),
                None => marginal_nll(&bb),
            };
            let w = reweight_weights(blind_nll);
            let term = (w * marginal_nll(&main_branch)).mean();
            obj.reweight = Some((w, term));
            obj.main.loss + bt.loss + term
        }
        (Method::Rubiz, Some(bb), Some(bt)) => {
            let blind_logits = match pinned {
                Some(p) => g.constant(p.blind_prior_logits.clone()),
                None => bb.prior_logits.stop_gradient(),
            };
            let fused = rubiz_fuse(main_branch.prior_logits, blind_logits);
            obj.main = loss_cvae(&main_branch, fused, loss, alpha);
            obj.main.loss + bt.loss.scale(debias.lambda)
        }
        _ => unreachable!("blind branch exists for every de-biasing method"),
    };
    Ok(obj)
}
