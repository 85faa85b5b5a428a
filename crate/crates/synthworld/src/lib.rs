//! Synthetic driving worlds whose futures depend on road layout and other
//! agents in controlled ways.

pub mod dataset;
pub mod error;
pub mod geometry;
pub mod raster;
pub mod sim;
pub mod world;

pub use dataset::{
    build_dataset, derive_seed, generate_probes, generate_split, read_jsonl, read_probes, split_path, write_jsonl,
    Certificate, DatasetConfig, ProbePair, ScenarioMix, Split,
};
pub use error::SynthError;
pub use raster::{rasterize, RasterConfig};
pub use sim::{simulate_episode, simulate_episode_with, Episode, EpisodeOptions, SimConfig};
pub use world::{generate_world, ScenarioKind, World};
