use serde::{Deserialize, Serialize};

use cab_core::Protocol;

/// Architecture and dynamics settings. Everything needed to rebuild the
/// parameter layout lives here and is stored with every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub history_steps: usize,
    pub horizon_steps: usize,
    pub dt: f64,
    /// Raster side length in cells; rasters are square.
    pub map_size: usize,
    pub map_channels: usize,
    pub conv_channels: [usize; 3],
    pub d_x: usize,
    pub d_m: usize,
    pub d_g: usize,
    pub neighbor_hidden: usize,
    pub mlp_hidden: usize,
    pub future_hidden: usize,
    pub decoder_hidden: usize,
    pub num_modes: usize,
    /// When false the model only ever sees the null context.
    pub use_context: bool,
    pub accel_max: f64,
    pub yaw_rate_max: f64,
    pub accel_sigma: [f64; 2],
    pub yaw_rate_sigma: [f64; 2],
    /// Added to the diagonal of every position covariance, m².
    pub pos_var_floor: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            history_steps: 4,
            horizon_steps: 12,
            dt: 0.5,
            map_size: 64,
            map_channels: 3,
            conv_channels: [4, 8, 8],
            d_x: 32,
            d_m: 32,
            d_g: 16,
            neighbor_hidden: 16,
            mlp_hidden: 64,
            future_hidden: 16,
            decoder_hidden: 16,
            num_modes: 8,
            use_context: true,
            accel_max: 4.0,
            yaw_rate_max: 1.5,
            accel_sigma: [0.02, 4.0],
            yaw_rate_sigma: [0.005, 1.0],
            pos_var_floor: 1e-2,
        }
    }
}

impl ModelConfig {
    pub fn d_c(&self) -> usize {
        self.d_m + self.d_g
    }

    pub fn conv_output_side(&self) -> usize {
        (0..3).fold(self.map_size, |n, _| (n + 2 - 3) / 2 + 1)
    }

    pub fn conv_flat(&self) -> usize {
        let s = self.conv_output_side();
        self.conv_channels[2] * s * s
    }

    pub fn protocol(&self, resolution: f64) -> Protocol {
        Protocol {
            history_steps: self.history_steps,
            horizon_steps: self.horizon_steps,
            dt: self.dt,
            map_h: self.map_size,
            map_w: self.map_size,
            resolution,
        }
    }

    /// A small network for fast tests and gradient checks.
    pub fn tiny() -> Self {
        Self {
            horizon_steps: 4,
            map_size: 8,
            conv_channels: [2, 2, 2],
            d_x: 4,
            d_m: 3,
            d_g: 3,
            neighbor_hidden: 3,
            mlp_hidden: 5,
            future_hidden: 3,
            decoder_hidden: 4,
            num_modes: 3,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Weight of the posterior-to-prior divergence.
    pub alpha: f64,
    /// Weight of the mutual-information bonus.
    pub beta_mi: f64,
    /// Linear ramp of `alpha` from 0 over this many optimizer steps.
    pub kl_warmup_steps: u64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { alpha: 1.0, beta_mi: 1.0, kl_warmup_steps: 500 }
    }
}

impl LossConfig {
    pub fn alpha_at(&self, step: u64) -> f64 {
        if self.kl_warmup_steps == 0 {
            return self.alpha;
        }
        self.alpha * ((step + 1) as f64 / self.kl_warmup_steps as f64).min(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    None,
    Cab,
    Reweight,
    Rubiz,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Cab => "cab",
            Method::Reweight => "reweight",
            Method::Rubiz => "rubiz",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(Method::None),
            "cab" => Ok(Method::Cab),
            "reweight" => Ok(Method::Reweight),
            "rubiz" => Ok(Method::Rubiz),
            other => Err(format!("unknown method `{other}` (none, cab, reweight, rubiz)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DebiasConfig {
    pub method: Method,
    /// Weight of the blind-branch CVAE loss.
    pub lambda: f64,
    /// Weight of the prior-divergence reward.
    pub lambda_kl: f64,
    /// Largest divergence the reward counts.
    pub kl_clamp: f64,
}

impl Default for DebiasConfig {
    fn default() -> Self {
        Self { method: Method::None, lambda: 1.0, lambda_kl: 5.0, kl_clamp: 10.0 }
    }
}

impl DebiasConfig {
    pub fn with_method(method: Method) -> Self {
        Self { method, ..Self::default() }
    }
}
