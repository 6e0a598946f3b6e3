//! Deep deterministic policy gradient from scratch: batch-normalized MLPs,
//! Adam, uniform replay, Ornstein–Uhlenbeck exploration, and the
//! actor–critic training and deployment loops.

pub mod adam;
mod agent;
pub mod mlp;
pub mod noise;
pub mod replay;

pub use adam::{adam_step, AdamState};
pub use agent::{ActionBounds, AgentConfig, DdpgAgent, EpisodeLog, TrainingLog};
pub use mlp::{MlpNet, Mode, OutputActivation};
pub use noise::OuNoise;
pub use replay::{Experience, ReplayBuffer};
