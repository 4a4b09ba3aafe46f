//! Network side of the audit: executing query sets against chat-completion
//! endpoints, and a mock endpoint backed by the synthetic judge.

pub mod llm_client;
pub mod mock;

pub use llm_client::{cache_key, execute, execute_async, ModelConfig, RawResponse, ResponseStatus};
pub use mock::{serve_mock, MockOptions, MockServer};
