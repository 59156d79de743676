//! File formats, reports, the command-line tool and the HTTP exchange
//! service built on `hybrid-core`.

pub mod commands;
pub mod fixtures;
pub mod http;
pub mod ingest;
pub mod manifest;
pub mod report;
pub mod service;
