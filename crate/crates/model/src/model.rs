use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use cab_autodiff::{Graph, ParameterSet};
use cab_core::{Forecaster, Frame, Instance, Point2, Pose2, Trajectory};

use crate::batch::Batch;
use crate::config::{LossConfig, ModelConfig};
use crate::cvae::{all_pairs, categorical, decode, init_cvae, prior_logits};
use crate::encoders::{encode_batch, init_encoders};
use crate::error::ModelError;

pub const DYNAMICS_KIND: &str = "unicycle-exact-arc";

/// Inference batch size used by [`Forecaster::predict_ml_batch`].
const CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct CvaeModel {
    pub name: String,
    pub config: ModelConfig,
    pub loss: LossConfig,
    pub params: ParameterSet,
}

/// Full predicted mixture for one instance, in the instance's own frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedDistribution {
    pub probs: Vec<f64>,
    /// `[mode][step]` means.
    pub means: Vec<Vec<Point2>>,
    /// `[mode][step]` covariances `(σxx, σxy, σyy)`.
    pub covs: Vec<Vec<[f64; 3]>>,
    pub dt: f64,
}

impl PredictedDistribution {
    pub fn most_likely_mode(&self) -> usize {
        categorical::argmax(&self.probs)
    }

    pub fn most_likely(&self) -> Trajectory {
        Trajectory::new(self.means[self.most_likely_mode()].clone(), self.dt)
    }

    /// Mode drawn from the prior, then an independent Gaussian draw per step.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Trajectory> {
        (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut z = self.probs.len() - 1;
                for (i, p) in self.probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        z = i;
                        break;
                    }
                }
                let points = self.means[z]
                    .iter()
                    .zip(&self.covs[z])
                    .map(|(m, c)| {
                        let l11 = c[0].sqrt();
                        let l21 = c[1] / l11;
                        let l22 = (c[2] - l21 * l21).max(0.0).sqrt();
                        let e1: f64 = rng.sample(StandardNormal);
                        let e2: f64 = rng.sample(StandardNormal);
                        [m[0] + l11 * e1, m[1] + l21 * e1 + l22 * e2]
                    })
                    .collect();
                Trajectory::new(points, self.dt)
            })
            .collect()
    }

    fn to_world(&mut self, pose: &Pose2) {
        let (s, c) = pose.heading.sin_cos();
        for (ms, cs) in self.means.iter_mut().zip(self.covs.iter_mut()) {
            for (m, cov) in ms.iter_mut().zip(cs.iter_mut()) {
                *m = pose.point_to_world(*m);
                let (a, b, d) = (cov[0], cov[1], cov[2]);
                // R Σ Rᵀ
                cov[0] = c * c * a - 2.0 * s * c * b + s * s * d;
                cov[1] = s * c * (a - d) + (c * c - s * s) * b;
                cov[2] = s * s * a + 2.0 * s * c * b + c * c * d;
            }
        }
    }
}

/// Pose that maps agent-frame outputs back to the instance's frame, if any.
fn output_pose(inst: &Instance) -> Option<Pose2> {
    match inst.frame {
        Frame::Agent(_) => None,
        Frame::World => {
            let s = inst.current();
            Some(Pose2::new(s.position[0], s.position[1], s.heading))
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    name: String,
    config: ModelConfig,
    loss: LossConfig,
    dynamics: String,
    parameters: serde_json::Value,
}

impl CvaeModel {
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParameterSet::new();
        init_encoders(&mut params, &config, &mut rng);
        init_cvae(&mut params, &config, &mut rng);
        Self { name: "cvae".into(), config, loss: LossConfig::default(), params }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Prior probabilities and the Gaussians of every mode.
    pub fn predict_distribution(&self, insts: &[&Instance]) -> Result<Vec<PredictedDistribution>, ModelError> {
        let cfg = &self.config;
        let batch = Batch::new(insts, cfg)?;
        let g = Graph::with_params(&self.params);
        let enc = encode_batch(&g, cfg, &batch);
        let logits = prior_logits(&g, enc.x, enc.context);
        let modes = decode(&g, cfg, enc.x, enc.context, &batch.initial, &all_pairs(insts.len(), cfg.num_modes));
        let logits = g.forward(logits)?;
        let mean = g.forward(modes.mean)?;
        let cov = g.forward(modes.cov)?;
        let (z, t) = (cfg.num_modes, cfg.horizon_steps);
        let out = insts
            .iter()
            .enumerate()
            .map(|(i, inst)| {
                let probs = categorical::softmax(&logits.data()[i * z..(i + 1) * z]);
                let mut means = Vec::with_capacity(z);
                let mut covs = Vec::with_capacity(z);
                for k in 0..z {
                    let base = (i * z + k) * t;
                    means.push((0..t).map(|s| [mean.data()[2 * (base + s)], mean.data()[2 * (base + s) + 1]]).collect());
                    covs.push(
                        (0..t)
                            .map(|s| {
                                let c = &cov.data()[3 * (base + s)..3 * (base + s) + 3];
                                [c[0], c[1], c[2]]
                            })
                            .collect(),
                    );
                }
                let mut d = PredictedDistribution { probs, means, covs, dt: cfg.dt };
                if let Some(pose) = output_pose(inst) {
                    d.to_world(&pose);
                }
                d
            })
            .collect();
        Ok(out)
    }

    /// Means of the highest-prior mode, decoding only that mode.
    pub fn predict_most_likely(&self, insts: &[&Instance]) -> Result<Vec<Trajectory>, ModelError> {
        let cfg = &self.config;
        let batch = Batch::new(insts, cfg)?;
        let g = Graph::with_params(&self.params);
        let enc = encode_batch(&g, cfg, &batch);
        let logits = g.forward(prior_logits(&g, enc.x, enc.context))?;
        let z = cfg.num_modes;
        let pairs: Vec<(usize, usize)> =
            (0..insts.len()).map(|i| (i, categorical::argmax(&logits.data()[i * z..(i + 1) * z]))).collect();
        let modes = decode(&g, cfg, enc.x, enc.context, &batch.initial, &pairs);
        let mean = g.forward(modes.mean)?;
        let t = cfg.horizon_steps;
        Ok(insts
            .iter()
            .enumerate()
            .map(|(i, inst)| {
                let mut pts: Vec<Point2> =
                    (0..t).map(|s| [mean.data()[2 * (i * t + s)], mean.data()[2 * (i * t + s) + 1]]).collect();
                if let Some(pose) = output_pose(inst) {
                    pts.iter_mut().for_each(|p| *p = pose.point_to_world(*p));
                }
                Trajectory::new(pts, cfg.dt)
            })
            .collect())
    }

    pub fn to_json(&self) -> serde_json::Value {
        let ck = Checkpoint {
            name: self.name.clone(),
            config: self.config.clone(),
            loss: self.loss,
            dynamics: DYNAMICS_KIND.into(),
            parameters: self.params.to_json(),
        };
        serde_json::to_value(ck).expect("checkpoint serializes")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self, ModelError> {
        let ck: Checkpoint =
            serde_json::from_value(value.clone()).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        if ck.dynamics != DYNAMICS_KIND {
            return Err(ModelError::Checkpoint(format!("unsupported dynamics `{}`", ck.dynamics)));
        }
        let stored = ParameterSet::from_json(&ck.parameters)?;
        let mut model = Self::new(ck.config, 0).with_name(ck.name);
        model.loss = ck.loss;
        model.params.load_values(&stored)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let text = serde_json::to_string(&self.to_json()).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
        let value = serde_json::from_str(&text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        Self::from_json(&value)
    }
}

impl Forecaster for CvaeModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn predict_ml(&self, inst: &Instance) -> Trajectory {
        self.predict_ml_batch(&[inst]).remove(0)
    }

    fn predict_ml_batch(&self, insts: &[&Instance]) -> Vec<Trajectory> {
        insts
            .chunks(CHUNK)
            .flat_map(|c| self.predict_most_likely(c).unwrap_or_else(|e| panic!("{}: {e}", self.name)))
            .collect()
    }

    fn sample(&self, inst: &Instance, n: usize, seed: u64) -> Option<Vec<Trajectory>> {
        let dist = self.predict_distribution(&[inst]).unwrap_or_else(|e| panic!("{}: {e}", self.name));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Some(dist[0].sample(n, &mut rng))
    }
}
