//! Context spaces engine: an event-sourced knowledge graph of information
//! items and contexts, managed forgetting, per-application views, and the
//! protocol facades that serve them.

pub mod api;
pub mod blobs;
pub mod clock;
pub mod config;
pub mod context;
pub mod desk;
pub mod error;
pub mod events;
pub mod facade;
pub mod forgetting;
pub mod graph;
pub mod inference;
pub mod ingest;
pub mod mail;
pub mod par;
pub mod scenario;
pub mod views;

pub use context::{ContextSpace, ContextState, Membership, Origin};
pub use desk::{Desk, DeskConfig};
pub use error::{Error, Result};
pub use forgetting::{ForgettingPolicy, Measure, ReorgReport};
pub use graph::{NodeId, NodeKind};
pub use views::{ViewKind, ViewTree};
