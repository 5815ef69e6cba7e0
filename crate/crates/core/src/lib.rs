//! Natural-language command interface for controlled text generation.

pub mod bundled;
pub mod command;
pub mod corpus;
pub mod decode;
pub mod experiment;
pub mod grammar;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod schema;
pub mod synthetic;
pub mod tokenize;
