//! spikeforge: train spiking neural networks against an analog neuromorphic
//! device model, compile them to device configurations, and run those
//! configurations on a virtual device.
//!
//! The crate covers the full loop:
//!
//! 1. [`network`] simulates recurrent spiking networks with
//!    differential-pair-integrator dynamics ([`neuron`], [`params`],
//!    [`constants`]).
//! 2. [`training`] fits weights by surrogate-gradient backpropagation
//!    through time while [`mismatch`] injects frozen device noise, so the
//!    result tolerates analog parameter spread.
//! 3. [`graph`] extracts a hardware-neutral graph which [`mapper`] places
//!    onto cores, [`quantizer`] compresses to 4-bit masks over four shared
//!    base weights, and [`hwconfig`] translates to bias codes.
//! 4. [`device`] executes a configuration on a virtual device speaking
//!    address-event (AER) streams; [`experiment`] ties everything into the
//!    frozen-noise classification task with firing-rate-ratio reporting.
//!
//! See the `examples/` directory for runnable walkthroughs of each stage.

pub mod constants;
pub mod device;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod hwconfig;
pub mod mapper;
pub mod mismatch;
pub mod network;
pub mod neuron;
pub mod params;
pub mod quantizer;
pub mod raster;
pub mod runconfig;
pub mod training;

pub use constants::{derive_time_constant, PhysicalConstants};
pub use error::{Error, Result};
pub use network::Network;
pub use params::{SimParams, Synapse};
pub use raster::SpikeRaster;
