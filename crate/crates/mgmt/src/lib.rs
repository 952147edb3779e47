//! Remote management of a live [`fluxvm::patch::Engine`].
//!
//! [`protocol`] maps JSON requests onto patch operations, [`server`] exposes
//! them over HTTP and [`client`] is the blocking counterpart used by
//! `fluxctl`.

pub mod client;
pub mod protocol;
pub mod server;

pub use client::{Client, ClientError};
pub use protocol::{handle_request, handle_value, ErrorBody, Response};
pub use server::{serve, Server, DEFAULT_BIND};
