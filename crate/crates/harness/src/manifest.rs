//! Run manifests: what was run, on which data, with which result.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;

pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// Conventions a reader needs to interpret the numbers in a report.
pub fn conventions(cfg: &Config) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert(
        "kappa".into(),
        format!("per-instance negative prior KL clamped at {} before averaging", cfg.debias.kl_clamp),
    );
    m.insert(
        "kalman".into(),
        format!(
            "constant-velocity filter, white-acceleration q={} m^2/s^3, r={} m^2, P0={}·I, velocity initialised from the first two observations; hardness = FDE of the open-loop forecast",
            cfg.kalman.q, cfg.kalman.r, cfg.kalman.p0
        ),
    );
    m.insert("dispersion".into(), "population standard deviation (divide by n) of distances to the barycenter".into());
    m.insert("full_metrics".into(), format!("{} samples; deterministic forecasters count as a point mass", cfg.eval.n_samples));
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub code_version: String,
    pub config: Config,
    pub dataset_sha256: Option<String>,
    pub metrics: BTreeMap<String, f64>,
    pub conventions: BTreeMap<String, String>,
    pub wall_time_s: f64,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &Config) -> Self {
        Self {
            command: command.to_string(),
            code_version: CODE_VERSION.to_string(),
            config: cfg.clone(),
            dataset_sha256: None,
            metrics: BTreeMap::new(),
            conventions: conventions(cfg),
            wall_time_s: 0.0,
        }
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        write_atomic(path, (text + "\n").as_bytes())
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Writes to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

/// SHA-256 over the concatenated contents of `paths`, in order.
pub fn sha256_files(paths: &[&Path]) -> std::io::Result<String> {
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    for p in paths {
        let mut f = std::fs::File::open(p)?;
        loop {
            let n = f.read(&mut buf)?;
            if n == 0 {
                break;
            }
            h.update(&buf[..n]);
        }
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}
