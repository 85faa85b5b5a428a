use rand::seq::index::sample;
use rand::SeedableRng;

use crate::error::AdError;
use crate::graph::{Graph, Var};
use crate::params::ParameterSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Central-difference step.
    pub eps: f64,
    /// Check at most this many coordinates per parameter tensor, chosen at
    /// random; `None` checks every coordinate.
    pub coords_per_param: Option<usize>,
    pub seed: u64,
    /// Use the fourth-order stencil
    /// `(8(f(x+h) − f(x−h)) − (f(x+2h) − f(x−2h))) / 12h`, which allows a
    /// larger step (less roundoff) without the truncation error growing.
    pub five_point: bool,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self { eps: 1e-5, coords_per_param: None, seed: 0, five_point: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose stencil crossed a `relu`/`min_scalar` breakpoint;
    /// these are excluded from `max_rel_error`.
    pub kinks: usize,
    /// `(name, flat index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn eval<F>(params: &ParameterSet, f: &F) -> Result<(f64, Vec<bool>), AdError>
where
    F: for<'g> Fn(&'g Graph<'g>) -> Var<'g>,
{
    let g = Graph::with_params(params);
    let root = f(&g);
    Ok((g.forward(root)?.item(), g.branches()))
}

/// Compares analytic gradients of the scalar built by `f` against central
/// finite differences over every trainable parameter. A coordinate whose
/// stencil changes the branch pattern of a piecewise op straddles a point
/// where the function is not differentiable; it is counted in `kinks`
/// instead of being compared.
pub fn grad_check<F>(params: &ParameterSet, f: F, cfg: GradCheck) -> Result<GradCheckReport, AdError>
where
    F: for<'g> Fn(&'g Graph<'g>) -> Var<'g>,
{
    let (analytic, base) = {
        let g = Graph::with_params(params);
        let root = f(&g);
        (g.backward(root)?.param_grads(params), g.branches())
    };
    let mut work = params.clone();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport { max_rel_error: 0.0, checked: 0, kinks: 0, worst: None };
    let names: Vec<String> = analytic.keys().cloned().collect();
    for name in names {
        let n = params.get(&name).map(|p| p.value.numel()).unwrap_or(0);
        let coords: Vec<usize> = match cfg.coords_per_param {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for i in coords {
            let orig = params.get(&name).expect("listed").value.data()[i];
            let set = |w: &mut ParameterSet, v: f64| w.get_mut(&name).expect("listed").value.data_mut()[i] = v;
            let mut kinked = false;
            let mut at = |delta: f64| -> Result<f64, AdError> {
                set(&mut work, orig + delta);
                let v = eval(&work, &f);
                set(&mut work, orig);
                let (v, branches) = v?;
                kinked |= branches != base;
                Ok(v)
            };
            let h = cfg.eps;
            let numeric = if cfg.five_point {
                let near = at(h)? - at(-h)?;
                let far = at(2.0 * h)? - at(-2.0 * h)?;
                (8.0 * near - far) / (12.0 * h)
            } else {
                (at(h)? - at(-h)?) / (2.0 * h)
            };
            if kinked {
                report.kinks += 1;
                continue;
            }
            let a = analytic[&name].data()[i];
            let err = rel_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((name.clone(), i, a, numeric));
            }
        }
    }
    Ok(report)
}
