//! Discrete-time co-simulation of a multi-zone building HVAC system and a
//! renewable microgrid, driven by one of three controllers:
//!
//! * `mpc`: receding-horizon economic MPC with full model knowledge,
//! * `combo`: a DDPG agent that dispatches the battery and tunes the MPC
//!   weights,
//! * `drl`: a DDPG agent that commands the battery and zone airflow directly.
//!
//! The physical models live in [`microgrid`] and [`thermal`], the controllers
//! in [`mpc`] and [`ddpg`], the MDP wrappers in [`envs`], and the experiment
//! orchestration plus metrics in [`harness`].

pub mod data;
pub mod ddpg;
pub mod envs;
pub mod error;
pub mod exec;
pub mod harness;
pub mod microgrid;
pub mod mpc;
pub mod thermal;

pub use error::{Error, Result};
pub use exec::Exec;

/// Control slot length used throughout, in hours.
pub const DEFAULT_SLOT_HOURS: f64 = 0.5;
/// Slots per simulated day at the default slot length.
pub const SLOTS_PER_DAY: usize = 48;
