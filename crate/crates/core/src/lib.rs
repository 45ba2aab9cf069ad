pub mod backends;
pub mod config;
pub mod error;
pub mod frames;
pub mod metrics;
pub mod pipeline;
pub mod prompt_agents;
pub mod shot_detector;
pub mod style_artist;
pub mod style_search;
pub mod style_tree;
pub mod templates;
pub mod util;

pub use error::{Error, Result};
