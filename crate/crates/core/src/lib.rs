pub mod cache;
pub mod config;
pub mod dataset;
#[cfg(feature = "service")]
pub mod env;
#[cfg(feature = "service")]
pub mod eval;
pub mod geo;
pub mod pipeline;
pub mod reward;
pub mod toolbox;
pub mod trajectory;
