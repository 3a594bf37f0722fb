pub mod analyzer;
pub mod corpus;
pub mod sparse;
pub mod text;
pub mod chunk_query;
pub mod backend;
pub mod dense;
pub mod infill;
pub mod ranker;
pub mod metrics;
pub mod config;
pub mod pipeline;
pub mod synthetic;
