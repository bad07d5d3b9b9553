pub mod api;
pub mod cli;
pub mod error;
pub mod ingest;
pub mod jobs;
pub mod report;
pub mod server;
