//! Command-line front end: model generation, forward modeling, inversion, denoising,
//! metrics, previews and the toy problem, each run leaving a hash manifest behind.

pub mod cli;
pub mod commands;
pub mod config;
pub mod exit;
pub mod external;
pub mod manifest;
pub mod preview;
