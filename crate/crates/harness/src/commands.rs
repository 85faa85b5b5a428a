//! The work behind each subcommand. Every function writes its outputs under
//! an output directory and returns what it wrote.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context as _, Result};

use cab_core::{Forecaster, Instance};
use cab_eval::report::{mean_context_attribution, read_metrics_csv, write_metrics_csv, write_shapley_csv};
use cab_eval::{evaluate, rank_hardness, shapley_batch, MetricReport, MetricRow, PhysicsForecaster, PhysicsKind, PhysicsOracle, ShapleyRow};
use cab_model::CvaeModel;
use cab_synthworld::{build_dataset, read_jsonl, split_path, DatasetConfig, Split};

use crate::config::Config;
use crate::manifest::{sha256_files, write_atomic, RunManifest};
use crate::train::{train, EpochLog};

pub fn parse_split(s: &str) -> Result<Split> {
    Split::ALL.into_iter().find(|x| x.as_str() == s).with_context(|| format!("unknown split {s:?}, expected train, val or test"))
}

/// A forecaster named on the command line.
pub enum ModelSpec {
    Physics(PhysicsKind),
    Oracle,
    Checkpoint(PathBuf),
}

impl std::str::FromStr for ModelSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.strip_prefix("physics:") {
            Some("oracle") => Ok(Self::Oracle),
            Some(kind) => kind.parse().map(Self::Physics),
            None => Ok(Self::Checkpoint(PathBuf::from(s))),
        }
    }
}

impl ModelSpec {
    /// Loads the forecaster, rejecting checkpoints whose input or output
    /// layout differs from the dataset's.
    pub fn load(&self, data: &DatasetConfig) -> Result<Box<dyn Forecaster>> {
        Ok(match self {
            Self::Physics(k) => Box::new(PhysicsForecaster { kind: *k }),
            Self::Oracle => Box::new(PhysicsOracle),
            Self::Checkpoint(p) => {
                let m = CvaeModel::load(p).with_context(|| format!("loading checkpoint {}", p.display()))?;
                check_layout(&m, data)?;
                Box::new(m)
            }
        })
    }
}

pub fn check_layout(m: &CvaeModel, data: &DatasetConfig) -> Result<()> {
    let c = &m.config;
    let want = (c.history_steps, c.horizon_steps, c.dt, c.map_size);
    let have = (data.history_steps, data.horizon_steps, data.sim.dt, data.raster.size);
    if want != have {
        bail!(
            "checkpoint {} expects (history, horizon, dt, map) = {want:?} but the dataset has {have:?}",
            m.name
        );
    }
    Ok(())
}

pub fn dataset_config(data_dir: &Path) -> Result<DatasetConfig> {
    let p = data_dir.join("dataset.json");
    let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn load_split(data_dir: &Path, split: Split) -> Result<Vec<Instance>> {
    let p = split_path(data_dir, split);
    read_jsonl(&p).with_context(|| format!("reading {}", p.display()))
}

fn dataset_hash(data_dir: &Path) -> Result<String> {
    let paths: Vec<PathBuf> = Split::ALL.iter().map(|&s| split_path(data_dir, s)).collect();
    let refs: Vec<&Path> = paths.iter().map(|p| p.as_path()).collect();
    Ok(sha256_files(&refs)?)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

pub fn generate_data(cfg: &Config, out: &Path) -> Result<RunManifest> {
    let start = Instant::now();
    let files = build_dataset(&cfg.data, out)?;
    let mut man = RunManifest::new("generate-data", cfg);
    for (split, _, n) in &files.splits {
        man.metrics.insert(format!("n_{}", split.as_str()), *n as f64);
    }
    man.dataset_sha256 = Some(dataset_hash(out)?);
    man.wall_time_s = start.elapsed().as_secs_f64();
    man.write(&out.join("manifest.json"))?;
    Ok(man)
}

pub struct TrainResult {
    pub checkpoint: PathBuf,
    pub manifest: RunManifest,
}

/// Trains one model on `data_dir` and writes `checkpoint.json` (best
/// validation epoch), `train_log.jsonl` and `manifest.json` to `out`.
pub fn train_model(cfg: &Config, data_dir: &Path, out: &Path, name: &str, mut progress: impl FnMut(&EpochLog)) -> Result<TrainResult> {
    let start = Instant::now();
    let data = dataset_config(data_dir)?;
    let train_set = load_split(data_dir, Split::Train)?;
    let val_set = load_split(data_dir, Split::Val)?;
    let model = CvaeModel::new(cfg.model.clone(), cfg.train.seed).with_name(name);
    check_layout(&model, &data)?;
    std::fs::create_dir_all(out)?;

    let mut log = create(&out.join("train_log.jsonl"))?;
    let mut io_err = None;
    let last = out.join("last.json");
    let every = cfg.train.checkpoint_every;
    let outcome = train(model, cfg.loss, cfg.debias, cfg.train.clone(), &train_set, &val_set, |e, m| {
        progress(e);
        let r = serde_json::to_string(e)
            .map_err(anyhow::Error::from)
            .and_then(|line| writeln!(log, "{line}").map_err(Into::into))
            .and_then(|_| if every > 0 && e.epoch % every == 0 { m.save(&last).map_err(Into::into) } else { Ok(()) });
        if let Err(err) = r {
            io_err.get_or_insert(err);
        }
    })?;
    if let Some(e) = io_err {
        return Err(e);
    }
    log.flush()?;

    let checkpoint = out.join("checkpoint.json");
    let text = serde_json::to_string(&outcome.best.to_json())?;
    write_atomic(&checkpoint, text.as_bytes())?;

    let mut man = RunManifest::new("train", cfg);
    man.dataset_sha256 = Some(dataset_hash(data_dir)?);
    man.metrics.insert("best_epoch".into(), outcome.best_epoch as f64);
    if let Some(a) = outcome.best_val_ade {
        man.metrics.insert("best_val_ade_ml".into(), a);
    }
    if let Some(last) = outcome.log.last() {
        for (k, v) in &last.train {
            man.metrics.insert(format!("final_train_{k}"), *v);
        }
        man.metrics.insert("steps".into(), last.steps as f64);
    }
    man.wall_time_s = start.elapsed().as_secs_f64();
    man.write(&out.join("manifest.json"))?;
    Ok(TrainResult { checkpoint, manifest: man })
}

pub struct EvalResult {
    pub report: MetricReport,
    pub csv: PathBuf,
}

/// Writes `metrics_<model>.csv` and `metrics_<model>.manifest.json`.
pub fn evaluate_model(cfg: &Config, data_dir: &Path, spec: &ModelSpec, split: Split, out: &Path) -> Result<EvalResult> {
    let start = Instant::now();
    let data = dataset_config(data_dir)?;
    let f = spec.load(&data)?;
    let insts = load_split(data_dir, split)?;
    let report = evaluate(f.as_ref(), &insts, &cfg.eval, &cfg.kalman)?;
    std::fs::create_dir_all(out)?;
    let csv = out.join(format!("metrics_{}.csv", report.model));
    let mut buf = Vec::new();
    write_metrics_csv(&mut buf, &report.rows)?;
    write_atomic(&csv, &buf)?;

    let mut man = RunManifest::new("evaluate", cfg);
    man.dataset_sha256 = Some(dataset_hash(data_dir)?);
    for r in &report.rows {
        man.metrics.insert(format!("{}@{}", r.metric, r.key), r.value);
    }
    man.wall_time_s = start.elapsed().as_secs_f64();
    man.write(&out.join(format!("metrics_{}.manifest.json", report.model)))?;
    Ok(EvalResult { report, csv })
}

/// Writes `hardness_<split>.csv` with columns `id,kalman_fde,rank,stratum`,
/// hardest first; `stratum` is the smallest configured top-percentage that
/// contains the instance.
pub fn rank_hardness_cmd(cfg: &Config, data_dir: &Path, split: Split, out: &Path) -> Result<PathBuf> {
    let insts = load_split(data_dir, split)?;
    let scores = cab_eval::baselines::hardness_scores(&insts, &cfg.kalman)?;
    let ids: Vec<u64> = insts.iter().map(|i| i.id).collect();
    let mut pcts = cfg.eval.strata_pct.clone();
    pcts.sort_by(f64::total_cmp);
    let strata = rank_hardness(&ids, &scores, &pcts)?;
    let all = rank_hardness(&ids, &scores, &[100.0])?.remove(0);
    std::fs::create_dir_all(out)?;
    let path = out.join(format!("hardness_{}.csv", split.as_str()));
    let mut w = create(&path)?;
    writeln!(w, "id,kalman_fde,rank,stratum")?;
    for (rank, &i) in all.iter().enumerate() {
        let stratum = pcts.iter().zip(&strata).find(|(_, s)| rank < s.len()).map(|(p, _)| *p).unwrap_or(100.0);
        writeln!(w, "{},{},{},top{}%", ids[i], scores[i], rank + 1, stratum)?;
    }
    w.flush()?;
    Ok(path)
}

pub struct ShapleyOutput {
    pub rows: Vec<ShapleyRow>,
    pub csv: PathBuf,
    pub mean_context: f64,
    pub max_efficiency_error: f64,
}

/// Exact three-player attributions on the first `shapley.max_instances`
/// instances of `split`, written to `shapley_<model>.csv`.
pub fn shapley_cmd(cfg: &Config, data_dir: &Path, spec: &ModelSpec, split: Split, out: &Path) -> Result<ShapleyOutput> {
    let data = dataset_config(data_dir)?;
    let f = spec.load(&data)?;
    let mut insts = load_split(data_dir, split)?;
    if cfg.shapley.max_instances > 0 {
        insts.truncate(cfg.shapley.max_instances);
    }
    let results = shapley_batch(f.as_ref(), &insts);
    let rows: Vec<ShapleyRow> = insts.iter().zip(&results).map(|(i, r)| ShapleyRow::new(f.name(), i.id, r)).collect();
    let max_efficiency_error = results
        .iter()
        .map(|r| (r.phi.iter().sum::<f64>() - (r.v_full - r.v_empty)).abs())
        .fold(0.0, f64::max);
    std::fs::create_dir_all(out)?;
    let csv = out.join(format!("shapley_{}.csv", f.name()));
    let mut buf = Vec::new();
    write_shapley_csv(&mut buf, &rows)?;
    write_atomic(&csv, &buf)?;
    let mean_context = mean_context_attribution(&rows).context("no instances to attribute")?;
    Ok(ShapleyOutput { rows, csv, mean_context, max_efficiency_error })
}

/// Joins metric CSVs into one table with a column per model, in input
/// order. Rows follow the first file's order; metrics missing for a model
/// are left blank.
pub fn report(inputs: &[PathBuf], out: &Path) -> Result<String> {
    let mut models: Vec<String> = Vec::new();
    let mut keys: Vec<(String, String)> = Vec::new();
    let mut cells: BTreeMap<(String, String, String), f64> = BTreeMap::new();
    for p in inputs {
        let rows: Vec<MetricRow> = read_metrics_csv(File::open(p).with_context(|| format!("opening {}", p.display()))?)?;
        let mut seen_here = Vec::new();
        for r in rows {
            if !seen_here.contains(&r.model) {
                if models.contains(&r.model) {
                    bail!("model {:?} appears in more than one report", r.model);
                }
                seen_here.push(r.model.clone());
            }
            let k = (r.metric.clone(), r.key.clone());
            if !keys.contains(&k) {
                keys.push(k);
            }
            cells.insert((r.metric, r.key, r.model), r.value);
        }
        models.extend(seen_here);
    }
    let mut text = format!("metric,key,{}\n", models.join(","));
    for (metric, key) in &keys {
        let vals: Vec<String> = models
            .iter()
            .map(|m| cells.get(&(metric.clone(), key.clone(), m.clone())).map(|v| v.to_string()).unwrap_or_default())
            .collect();
        text.push_str(&format!("{metric},{key},{}\n", vals.join(",")));
    }
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir)?;
    }
    write_atomic(out, text.as_bytes())?;
    Ok(text)
}
