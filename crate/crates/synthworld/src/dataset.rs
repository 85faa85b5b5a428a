//! Sliding-window instance extraction, paired probes and JSON-Lines files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use cab_core::{
    validate_instance, AgentState, Context, Frame, Instance, MotionHistory, NeighborSet, Pose2, Protocol, SemanticMap,
    Trajectory,
};

use crate::error::SynthError;
use crate::geometry::dist;
use crate::raster::{rasterize, RasterConfig};
use crate::sim::{simulate_episode, simulate_episode_with, Episode, EpisodeOptions, SimConfig};
use crate::world::{generate_world, ScenarioKind, World};

/// Scenario weights, in [`ScenarioKind::ALL`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioMix {
    pub straight: f64,
    pub curve_left: f64,
    pub curve_right: f64,
    pub t_intersection: f64,
    pub lead_vehicle_stop: f64,
}

impl Default for ScenarioMix {
    fn default() -> Self {
        Self { straight: 0.3, curve_left: 0.2, curve_right: 0.2, t_intersection: 0.15, lead_vehicle_stop: 0.15 }
    }
}

impl ScenarioMix {
    pub fn weights(&self) -> [f64; 5] {
        [self.straight, self.curve_left, self.curve_right, self.t_intersection, self.lead_vehicle_stop]
    }

    pub fn only(kind: ScenarioKind) -> Self {
        let mut w = [0.0; 5];
        w[ScenarioKind::ALL.iter().position(|&k| k == kind).expect("listed")] = 1.0;
        Self { straight: w[0], curve_left: w[1], curve_right: w[2], t_intersection: w[3], lead_vehicle_stop: w[4] }
    }

    fn pick(&self, u: f64) -> ScenarioKind {
        let w = self.weights();
        let total: f64 = w.iter().sum();
        let mut acc = 0.0;
        for (k, wk) in ScenarioKind::ALL.into_iter().zip(w) {
            acc += wk / total;
            if u < acc {
                return k;
            }
        }
        let last = w.iter().rposition(|&x| x > 0.0).expect("some positive weight");
        ScenarioKind::ALL[last]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub n_probe_pairs: usize,
    pub mix: ScenarioMix,
    pub seed: u64,
    pub history_steps: usize,
    pub horizon_steps: usize,
    pub neighbor_radius: f64,
    pub raster: RasterConfig,
    pub sim: SimConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_train: 3000,
            n_val: 600,
            n_test: 600,
            n_probe_pairs: 40,
            mix: ScenarioMix::default(),
            seed: 0,
            history_steps: 4,
            horizon_steps: 12,
            neighbor_radius: 20.0,
            raster: RasterConfig::default(),
            sim: SimConfig::default(),
        }
    }
}

impl DatasetConfig {
    pub fn protocol(&self) -> Protocol {
        Protocol {
            history_steps: self.history_steps,
            horizon_steps: self.horizon_steps,
            dt: self.sim.dt,
            map_h: self.raster.size,
            map_w: self.raster.size,
            resolution: self.raster.resolution,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let w = self.mix.weights();
        if w.iter().any(|&x| !(x >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(SynthError::Config(format!("scenario weights must be non-negative and sum to 1, got {w:?}")));
        }
        if self.sim.steps < self.history_steps + self.horizon_steps + 1 {
            return Err(SynthError::Config(format!(
                "episodes of {} steps cannot hold H + T + 1 = {}",
                self.sim.steps,
                self.history_steps + self.horizon_steps + 1
            )));
        }
        if !(self.sim.dt > 0.0) || self.sim.substeps == 0 || !(self.raster.resolution > 0.0) || self.raster.size == 0 {
            return Err(SynthError::Config("dt, substeps, raster size and resolution must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn stream(&self) -> u64 {
        *self as u64
    }

    fn size(&self, cfg: &DatasetConfig) -> usize {
        match self {
            Split::Train => cfg.n_train,
            Split::Val => cfg.n_val,
            Split::Test => cfg.n_test,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent seed for item `index` of stream `stream`.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ stream) ^ index)
}

/// Instance at timestep `t0` of `episode`, in the ego's frame at `t0`.
pub fn make_instance(
    world: &World,
    episode: &Episode,
    t0: usize,
    cfg: &DatasetConfig,
    id: u64,
    episode_id: u64,
) -> Instance {
    let (h, t) = (cfg.history_steps, cfg.horizon_steps);
    let ego = &episode.ego().states;
    let cur = ego[t0];
    let pose = Pose2::new(cur.position[0], cur.position[1], cur.heading);
    let history = ego[t0 - h..=t0].iter().map(|s| pose.state_to_local(s)).collect();
    let future = ego[t0 + 1..=t0 + t].iter().map(|s| pose.point_to_local(s.position)).collect();
    let neighbors = episode.agents[1..]
        .iter()
        .map(|a| a.states[t0])
        .filter(|s| dist(s.position, cur.position) <= cfg.neighbor_radius)
        .map(|s| pose.state_to_local(&s))
        .collect();
    Instance {
        id,
        episode_id,
        agent_id: episode.ego().agent_id,
        t0: t0 as u32,
        history: MotionHistory { states: history, dt: episode.dt },
        context: Context { map: rasterize(world, pose, &cfg.raster), neighbors: NeighborSet { neighbors } },
        future: Trajectory::new(future, episode.dt),
        frame: Frame::Agent(pose),
    }
}

/// Every full window of an episode: `len − H − T` instances.
pub fn episode_instances(world: &World, episode: &Episode, cfg: &DatasetConfig, episode_id: u64) -> Vec<Instance> {
    let (h, t) = (cfg.history_steps, cfg.horizon_steps);
    (h..episode.len().saturating_sub(t)).map(|t0| make_instance(world, episode, t0, cfg, 0, episode_id)).collect()
}

/// World and episode for item `index` of a split.
pub fn split_episode(cfg: &DatasetConfig, split: Split, index: u64) -> (World, Episode) {
    let seed = derive_seed(cfg.seed, split.stream(), index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kind = cfg.mix.pick(rng.random::<f64>());
    let world = generate_world(kind, derive_seed(seed, 1, 0));
    let episode = simulate_episode(&world, derive_seed(seed, 2, 0), &cfg.sim);
    (world, episode)
}

/// Instances of one split, in episode order with ids `0..n`. Aborts on the
/// first instance that fails validation.
pub fn generate_split(cfg: &DatasetConfig, split: Split) -> Result<Vec<Instance>, SynthError> {
    cfg.validate()?;
    let n = split.size(cfg);
    let proto = cfg.protocol();
    let mut out: Vec<Instance> = Vec::with_capacity(n);
    let mut next = 0u64;
    const CHUNK: u64 = 16;
    while out.len() < n {
        let chunk: Vec<Vec<Instance>> = (next..next + CHUNK)
            .into_par_iter()
            .map(|e| {
                let (world, episode) = split_episode(cfg, split, e);
                episode_instances(&world, &episode, cfg, e)
            })
            .collect();
        next += CHUNK;
        for inst in chunk.into_iter().flatten() {
            if out.len() == n {
                break;
            }
            let mut inst = inst;
            inst.id = out.len() as u64;
            if let Err(v) = validate_instance(&inst, &proto) {
                return Err(SynthError::Invalid { id: inst.id, detail: join_violations(&v) });
            }
            out.push(inst);
        }
    }
    Ok(out)
}

fn join_violations(v: &[cab_core::Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// Two instances with the same history but different context and future.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbePair {
    pub kind: ScenarioKind,
    pub a: Instance,
    pub b: Instance,
}

impl ProbePair {
    /// Any predictor that sees only the shared history makes one prediction
    /// `p` for both; `(|p − a| + |p − b|) / 2 ≥ |a − b| / 2` at the horizon.
    pub fn fde_lower_bound(&self) -> f64 {
        match (self.a.future.last(), self.b.future.last()) {
            (Some(&a), Some(&b)) => dist(a, b) / 2.0,
            _ => 0.0,
        }
    }
}

/// Latest `t0` at which both episodes have an identical ego history and a
/// full future.
fn last_shared_t0(a: &Episode, b: &Episode, h: usize, t: usize) -> Option<usize> {
    let max_t0 = a.len().min(b.len()).checked_sub(t + 1)?;
    (h..=max_t0).rev().find(|&t0| a.ego().states[t0 - h..=t0] == b.ego().states[t0 - h..=t0])
}

/// Paired probes alternating mirrored curves and a toggled stopped lead.
pub fn generate_probes(cfg: &DatasetConfig) -> Result<Vec<ProbePair>, SynthError> {
    cfg.validate()?;
    let (h, t) = (cfg.history_steps, cfg.horizon_steps);
    let mut pairs = Vec::new();
    let mut index = 0u64;
    while pairs.len() < cfg.n_probe_pairs {
        let seed = derive_seed(cfg.seed, 3, index);
        let (ws, es) = (derive_seed(seed, 1, 0), derive_seed(seed, 2, 0));
        let curve = pairs.len() % 2 == 0;
        let (kind, wa, wb, ea, eb) = if curve {
            let (wa, wb) = (generate_world(ScenarioKind::CurveLeft, ws), generate_world(ScenarioKind::CurveRight, ws));
            let (ea, eb) = (simulate_episode(&wa, es, &cfg.sim), simulate_episode(&wb, es, &cfg.sim));
            (ScenarioKind::CurveLeft, wa, wb, ea, eb)
        } else {
            let w = generate_world(ScenarioKind::LeadVehicleStop, ws);
            let ea = simulate_episode_with(&w, es, &cfg.sim, EpisodeOptions { stopped_lead: true });
            let eb = simulate_episode_with(&w, es, &cfg.sim, EpisodeOptions { stopped_lead: false });
            (ScenarioKind::LeadVehicleStop, w.clone(), w, ea, eb)
        };
        index += 1;
        let Some(t0) = last_shared_t0(&ea, &eb, h, t) else { continue };
        let id = 2 * pairs.len() as u64;
        let a = make_instance(&wa, &ea, t0, cfg, id, id);
        let b = make_instance(&wb, &eb, t0, cfg, id + 1, id + 1);
        let pair = ProbePair { kind, a, b };
        if pair.fde_lower_bound() > 0.0 {
            pairs.push(pair);
        }
    }
    Ok(pairs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub n_pairs: usize,
    /// Lower bound on the mean FDE at the horizon of any predictor that
    /// ignores context, over the probe pairs.
    pub mean_fde_lower_bound: f64,
    pub min_fde_lower_bound: f64,
    pub pair_bounds: Vec<f64>,
}

impl Certificate {
    pub fn from_pairs(pairs: &[ProbePair]) -> Self {
        let b: Vec<f64> = pairs.iter().map(|p| p.fde_lower_bound()).collect();
        Self {
            n_pairs: b.len(),
            mean_fde_lower_bound: b.iter().sum::<f64>() / b.len().max(1) as f64,
            min_fde_lower_bound: b.iter().copied().fold(f64::INFINITY, f64::min),
            pair_bounds: b,
        }
    }
}

// ---------------------------------------------------------------------------
// JSON Lines

/// Rounds to 9 significant digits.
pub fn round9(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { 0.0 } else { v };
    }
    format!("{v:.8e}").parse().expect("formatted float parses")
}

#[derive(Serialize, Deserialize)]
struct MapRecord {
    h: usize,
    w: usize,
    layers: Vec<String>,
    res: f64,
    origin: [f64; 2],
    data: Vec<Vec<u8>>,
}

#[derive(Serialize, Deserialize)]
struct Record {
    id: u64,
    episode_id: u64,
    agent_id: u32,
    t0: u32,
    dt: f64,
    history: Vec<[f64; 8]>,
    future: Vec<[f64; 2]>,
    neighbors: Vec<[f64; 8]>,
    map: MapRecord,
    pose: [f64; 3],
}

fn r8(s: &AgentState) -> [f64; 8] {
    s.to_array().map(round9)
}

pub fn to_json_line(inst: &Instance) -> Result<String, SynthError> {
    let pose = match inst.frame {
        Frame::Agent(p) => [p.x, p.y, p.heading],
        Frame::World => [0.0; 3],
    };
    let m = &inst.context.map;
    let plane = m.h * m.w;
    let rec = Record {
        id: inst.id,
        episode_id: inst.episode_id,
        agent_id: inst.agent_id,
        t0: inst.t0,
        dt: round9(inst.history.dt),
        history: inst.history.states.iter().map(r8).collect(),
        future: inst.future.points.iter().map(|p| p.map(round9)).collect(),
        neighbors: inst.context.neighbors.neighbors.iter().map(r8).collect(),
        map: MapRecord {
            h: m.h,
            w: m.w,
            layers: m.layer_names.clone(),
            res: round9(m.resolution),
            origin: m.origin.map(round9),
            data: m.data.chunks(plane.max(1)).map(|c| c.to_vec()).collect(),
        },
        pose: pose.map(round9),
    };
    Ok(serde_json::to_string(&rec)?)
}

pub fn from_json_line(line: &str) -> Result<Instance, SynthError> {
    let rec: Record = serde_json::from_str(line)?;
    let data: Vec<u8> = rec.map.data.concat();
    let map = SemanticMap::from_data(rec.map.h, rec.map.w, rec.map.res, rec.map.origin, data)
        .map_err(|e| SynthError::Format(format!("instance {}: {e}", rec.id)))?;
    Ok(Instance {
        id: rec.id,
        episode_id: rec.episode_id,
        agent_id: rec.agent_id,
        t0: rec.t0,
        history: MotionHistory { states: rec.history.into_iter().map(AgentState::from_array).collect(), dt: rec.dt },
        context: Context {
            map,
            neighbors: NeighborSet { neighbors: rec.neighbors.into_iter().map(AgentState::from_array).collect() },
        },
        future: Trajectory::new(rec.future, rec.dt),
        frame: Frame::Agent(Pose2::new(rec.pose[0], rec.pose[1], rec.pose[2])),
    })
}

pub fn write_jsonl(path: &Path, insts: &[Instance]) -> Result<(), SynthError> {
    let mut w = BufWriter::new(File::create(path)?);
    for inst in insts {
        w.write_all(to_json_line(inst)?.as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<Instance>, SynthError> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(from_json_line(&line)?);
        }
    }
    Ok(out)
}

pub fn split_path(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("{}.jsonl", split.as_str()))
}

/// Paths written by [`build_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFiles {
    pub splits: Vec<(Split, PathBuf, usize)>,
    pub probes: PathBuf,
    pub certificate: PathBuf,
    pub config: PathBuf,
}

/// Writes every split, the probe pairs and their certificate to `dir`.
pub fn build_dataset(cfg: &DatasetConfig, dir: &Path) -> Result<DatasetFiles, SynthError> {
    cfg.validate()?;
    std::fs::create_dir_all(dir)?;
    let mut splits = Vec::new();
    for split in Split::ALL {
        let insts = generate_split(cfg, split)?;
        let path = split_path(dir, split);
        write_jsonl(&path, &insts)?;
        splits.push((split, path, insts.len()));
    }
    let pairs = generate_probes(cfg)?;
    let probes = dir.join("probes.jsonl");
    let flat: Vec<Instance> = pairs.iter().flat_map(|p| [p.a.clone(), p.b.clone()]).collect();
    write_jsonl(&probes, &flat)?;
    let certificate = dir.join("certificate.json");
    std::fs::write(&certificate, serde_json::to_string_pretty(&Certificate::from_pairs(&pairs))? + "\n")?;
    let config = dir.join("dataset.json");
    std::fs::write(&config, serde_json::to_string_pretty(cfg)? + "\n")?;
    Ok(DatasetFiles { splits, probes, certificate, config })
}

/// Reads `probes.jsonl` back into pairs (consecutive lines).
pub fn read_probes(path: &Path) -> Result<Vec<(Instance, Instance)>, SynthError> {
    let insts = read_jsonl(path)?;
    if insts.len() % 2 != 0 {
        return Err(SynthError::Format(format!("{} probe instances is not a whole number of pairs", insts.len())));
    }
    let mut it = insts.into_iter();
    let mut out = Vec::new();
    while let (Some(a), Some(b)) = (it.next(), it.next()) {
        out.push((a, b));
    }
    Ok(out)
}
