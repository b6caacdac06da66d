//! Modeling toolkit for a photon-number-resolving detector made from a single
//! click detector behind a variable-ratio coupler and a fiber delay loop.
//!
//! * [`model`]: per-channel transmissions and total transmission
//! * [`stats`]: click statistics and multi-photon content
//! * [`entropy`]: entropy of the channel profile and its optimal coupler ratio
//! * [`mc`]: pulse-level Monte Carlo with dead time, dark counts and afterpulses
//! * [`calibration`]: loss estimates from measured channel shares
//! * [`postselect`]: heralded multi-photon suppression

pub mod calibration;
pub mod entropy;
pub mod error;
pub mod mc;
pub mod model;
pub mod postselect;
pub mod stats;

pub use error::{ModelError, Result};
pub use model::{ChannelProfile, CouplerSetting, DeviceParams};
pub use stats::{ClickDistribution, PhotonSource, ReferencePlane};
