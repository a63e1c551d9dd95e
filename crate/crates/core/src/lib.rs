pub mod agent;
pub mod aggregation;
pub mod cli;
pub mod client;
pub mod dataset;
pub mod domain;
pub mod inference;
pub mod metrics;
mod seed;
pub mod study;
pub mod synthetic;
pub mod text;
pub mod training;
