//! Hybrid spiking/conventional object tracking on simulated DAVIS streams.

pub mod ann;
pub mod attention;
pub mod bbox;
pub mod bench;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod event_sim;
pub mod frame;
pub mod fusion;
pub mod interp;
pub mod io;
pub mod layers;
pub mod optim;
pub mod snn;
pub mod synth;
pub mod tracker;

pub use bbox::BBox;
pub use error::{Error, Result};
pub use frame::Frame;
