//! File formats, reports, and the batch CLI around `blindsight-core`.
//!
//! * [`capture`]: the on-disk capture contract (JSON manifest plus raw
//!   little-endian f32 tensor files) with a streaming reader and writer.
//! * [`report`]: verdict/head-map/layout file schemas, CSV and PBM output.
//! * [`run`]: rayon-parallel characterization driver.
//! * [`synthio`]: synthetic capture sets with ground-truth sidecars.
//! * [`cli`]: the `blindsight` binary's subcommands.

pub mod capture;
pub mod cli;
pub mod report;
pub mod run;
pub mod synthio;
