//! Multi-cell RAN simulator with an online diffusion-policy agent that learns
//! per-UE RB-group preferences for inter-cell interference management.

pub mod agent;
pub mod baselines;
pub mod diffusion;
pub mod domain;
pub mod env;
pub mod error;
pub mod experiment;
pub mod mac;
pub mod nn;
pub mod radio;
pub mod reward;
pub mod scalar;

pub use domain::{
    NetworkConfig, PolicyMode, PreferencePolicy, QosSample, RbGrouping, RewardBreakdown,
    TrafficPattern, UeDemand, UeProfile,
};
pub use error::{Error, Result};
pub use scalar::Scalar;

/// Single-precision network used for training and deployment.
pub type Mlp32 = nn::Mlp<f32>;
/// Double-precision network used for gradient verification.
pub type Mlp64 = nn::Mlp<f64>;
