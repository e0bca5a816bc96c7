//! Instrumented tool proxy, replay driver, session store and HTTP API.

pub mod harness;
pub mod store;
pub mod api;
