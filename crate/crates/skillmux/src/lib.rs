//! File formats, HTTP providers, configuration and reporting around
//! `skillmux-core`, plus the `skillmux` command-line tool.

pub mod bench;
pub mod cli;
pub mod config;
pub mod http;
pub mod io;
pub mod manifest;
pub mod pipeline;
pub mod prompts;
pub mod report;
