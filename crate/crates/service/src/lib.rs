//! Service and command-line front end for topic analytics over dialogue
//! transcripts: artifact loading, cached per-session scores, image
//! generation and the JSON API consumed by the dashboard.

pub mod api;
pub mod cli;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod state;

pub use config::{Config, DataLayout};
pub use error::{ApiError, ErrorCode, ServiceError};
pub use state::{load_state, AppState};
