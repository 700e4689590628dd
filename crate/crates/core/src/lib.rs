//! Taxonomy-based service discovery driven by a chat-completion model.
//!
//! [`builder`] organises a registry of service descriptions into a category
//! tree, [`search`] answers queries by descending that tree, [`baselines`]
//! holds comparison retrievers and [`eval`] scores any of them.

pub mod baselines;
pub mod builder;
pub mod eval;
pub mod gateway;
pub mod par;
pub mod prompts;
pub mod registry;
pub mod search;
pub mod taxonomy;
