//! Session server for the splat4d engine: scene uploads, the viewer wire
//! protocol, per-session state and the frame-streaming loop.

pub mod app;
pub mod connection;
pub mod outbox;
pub mod protocol;
pub mod registry;
pub mod scene_store;
pub mod session;
