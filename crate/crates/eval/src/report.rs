//! Full metric suite for one forecaster on one dataset, and CSV export.

use std::io::Write;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use cab_core::{Forecaster, Instance, Trajectory};

use crate::attribution::ShapleyResult;
use crate::baselines::{hardness_scores, rank_hardness, KalmanConfig};
use crate::error::EvalError;
use crate::metrics::{ade, build_rolling, fde, leaves_road, mean, mean_convergence, mean_dispersion, stratified_mean};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub horizons_s: Vec<f64>,
    pub n_samples: usize,
    pub taus: Vec<f64>,
    pub strata_pct: Vec<f64>,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            horizons_s: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            n_samples: 2000,
            taus: vec![0.2, 1.0, 5.0],
            strata_pct: vec![1.0, 2.0, 3.0, 10.0, 100.0],
            seed: 0,
        }
    }
}

impl EvalConfig {
    /// Rows per report: four displacement metrics per horizon, two off-road
    /// rates, dispersion, one convergence row per τ and one FDE row per
    /// stratum.
    pub fn row_count(&self) -> usize {
        4 * self.horizons_s.len() + 2 + 1 + self.taus.len() + self.strata_pct.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub model: String,
    pub metric: String,
    pub key: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub model: String,
    pub rows: Vec<MetricRow>,
    /// Most-likely FDE at the longest horizon, per instance.
    pub fde_per_instance: Vec<f64>,
    pub hardness: Vec<f64>,
}

impl MetricReport {
    pub fn get(&self, metric: &str, key: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.metric == metric && r.key == key).map(|r| r.value)
    }
}

pub fn horizon_key(seconds: f64) -> String {
    format!("{seconds}s")
}

pub fn tau_key(tau: f64) -> String {
    format!("tau={tau}")
}

pub fn stratum_key(pct: f64) -> String {
    format!("top{pct}%")
}

struct SampleStats {
    ade: Vec<f64>,
    fde: Vec<f64>,
    offroad: usize,
    n: usize,
}

fn sample_stats(f: &dyn Forecaster, inst: &Instance, ml: &Trajectory, steps: &[usize], n: usize, seed: u64) -> Result<SampleStats, EvalError> {
    let samples = f.sample(inst, n, seed).unwrap_or_else(|| vec![ml.clone()]);
    if samples.is_empty() {
        return Err(EvalError::Empty("sample set"));
    }
    let mut st = SampleStats { ade: vec![0.0; steps.len()], fde: vec![0.0; steps.len()], offroad: 0, n: samples.len() };
    for s in &samples {
        for (j, &h) in steps.iter().enumerate() {
            st.ade[j] += ade(s, &inst.future, h)?;
            st.fde[j] += fde(s, &inst.future, h)?;
        }
        st.offroad += leaves_road(s, &inst.context.map) as usize;
    }
    let m = samples.len() as f64;
    st.ade.iter_mut().chain(st.fde.iter_mut()).for_each(|x| *x /= m);
    Ok(st)
}

fn require(v: Option<f64>, what: &'static str) -> Result<f64, EvalError> {
    v.ok_or(EvalError::Empty(what))
}

/// Evaluates `f` on `insts`, stratifying by Kalman hardness. Deterministic
/// forecasters count as a point-mass distribution for the full-distribution
/// metrics.
pub fn evaluate(
    f: &dyn Forecaster,
    insts: &[Instance],
    cfg: &EvalConfig,
    kalman: &KalmanConfig,
) -> Result<MetricReport, EvalError> {
    if insts.is_empty() {
        return Err(EvalError::Empty("evaluation set"));
    }
    if cfg.n_samples < 1 {
        return Err(EvalError::Config("at least one sample is required".into()));
    }
    let dt = insts[0].future.dt;
    let horizon = insts[0].future.len();
    let steps: Vec<usize> = cfg.horizons_s.iter().map(|h| (h / dt).round() as usize).collect();
    if let Some(&bad) = steps.iter().find(|&&s| s == 0 || s > horizon) {
        return Err(EvalError::Length { what: "horizon", got: bad, expected: horizon });
    }
    let refs: Vec<&Instance> = insts.iter().collect();
    let ml = f.predict_ml_batch(&refs);
    if ml.len() != insts.len() {
        return Err(EvalError::Length { what: "predictions", got: ml.len(), expected: insts.len() });
    }

    let mut seeder = ChaCha8Rng::seed_from_u64(cfg.seed);
    let seeds: Vec<u64> = insts.iter().map(|_| seeder.next_u64()).collect();
    let stats: Vec<SampleStats> = insts
        .par_iter()
        .zip(&ml)
        .zip(&seeds)
        .map(|((inst, m), &seed)| sample_stats(f, inst, m, &steps, cfg.n_samples, seed))
        .collect::<Result<_, _>>()?;

    let model = f.name().to_string();
    let mut rows = Vec::with_capacity(cfg.row_count());
    let mut push = |metric: &str, key: String, value: f64| {
        rows.push(MetricRow { model: model.clone(), metric: metric.to_string(), key, value })
    };
    let n = insts.len() as f64;
    for (j, (&h, &secs)) in steps.iter().zip(&cfg.horizons_s).enumerate() {
        let mut a = 0.0;
        let mut d = 0.0;
        for (inst, p) in insts.iter().zip(&ml) {
            a += ade(p, &inst.future, h)?;
            d += fde(p, &inst.future, h)?;
        }
        push("ADE-ML", horizon_key(secs), a / n);
        push("FDE-ML", horizon_key(secs), d / n);
        push("ADE-f", horizon_key(secs), stats.iter().map(|s| s.ade[j]).sum::<f64>() / n);
        push("FDE-f", horizon_key(secs), stats.iter().map(|s| s.fde[j]).sum::<f64>() / n);
    }
    let off_ml = insts.iter().zip(&ml).filter(|(i, p)| leaves_road(p, &i.context.map)).count() as f64 / n;
    let off_f = stats.iter().map(|s| s.offroad).sum::<usize>() as f64 / stats.iter().map(|s| s.n).sum::<usize>() as f64;
    push("OffR-ML", "all".into(), off_ml);
    push("OffR-f", "all".into(), off_f);

    let rolling = build_rolling(insts, &ml)?;
    push("D", "all".into(), require(mean_dispersion(&rolling), "dispersion set")?);
    for &tau in &cfg.taus {
        push("C", tau_key(tau), require(mean_convergence(&rolling, tau), "convergence set")?);
    }

    let fde_per_instance: Vec<f64> =
        insts.iter().zip(&ml).map(|(i, p)| fde(p, &i.future, horizon)).collect::<Result<_, _>>()?;
    let hardness = hardness_scores(insts, kalman)?;
    let ids: Vec<u64> = insts.iter().map(|i| i.id).collect();
    let strata = rank_hardness(&ids, &hardness, &cfg.strata_pct)?;
    for (&pct, m) in cfg.strata_pct.iter().zip(stratified_mean(&fde_per_instance, &strata)) {
        push("FDE-ML-strat", stratum_key(pct), require(m, "stratum")?);
    }
    Ok(MetricReport { model: f.name().to_string(), rows, fde_per_instance, hardness })
}

/// Header `model,metric,key,value`.
pub fn write_metrics_csv<W: Write>(w: W, rows: &[MetricRow]) -> Result<(), EvalError> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_metrics_csv<R: std::io::Read>(r: R) -> Result<Vec<MetricRow>, EvalError> {
    csv::Reader::from_reader(r).deserialize().map(|r| r.map_err(EvalError::from)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyRow {
    pub model: String,
    pub id: u64,
    pub phi_state: f64,
    pub phi_map: f64,
    pub phi_neighbors: f64,
    pub v_full: f64,
    pub v_empty: f64,
}

impl ShapleyRow {
    pub fn new(model: &str, id: u64, r: &ShapleyResult) -> Self {
        Self {
            model: model.to_string(),
            id,
            phi_state: r.phi[0],
            phi_map: r.phi[1],
            phi_neighbors: r.phi[2],
            v_full: r.v_full,
            v_empty: r.v_empty,
        }
    }
}

/// Header `model,id,phi_state,phi_map,phi_neighbors,v_full,v_empty`.
pub fn write_shapley_csv<W: Write>(w: W, rows: &[ShapleyRow]) -> Result<(), EvalError> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Mean of `|φ_map| + |φ_neighbors|`.
pub fn mean_context_attribution(rows: &[ShapleyRow]) -> Option<f64> {
    mean(rows.iter().map(|r| r.phi_map.abs() + r.phi_neighbors.abs()))
}
