pub mod audit;
pub mod bpa;
pub mod bundle;
pub mod cla;
pub mod config;
pub mod daemon;
pub mod discovery;
pub mod framing;
pub mod harness;
pub mod time;
