//! Core algorithms for template-derived sparse attention masks in
//! vision-language prompts.
//!
//! The crate is organized around an offline characterization pipeline:
//!
//! 1. [`layout`] parses the interleaved text/image token structure of a
//!    prompt and locates per-image attention-sink regions.
//! 2. [`mask`] turns a layout into one of four block-structured attention
//!    masks (dense, sink, document, document-sink) under a causal or
//!    bidirectional-within-image base visibility.
//! 3. [`attention`] evaluates numerically stable masked attention and the
//!    NMSE metric comparing a sparse candidate against dense output.
//! 4. [`characterize`] picks the cheapest qualifying mask per attention head
//!    for one prompt; [`aggregate`] collapses per-prompt verdicts into a
//!    fixed per-head mask map across a dataset.
//! 5. [`flops`] accounts for the theoretical attention FLOPs each mask
//!    saves, both with a closed-form area estimator and an exact cell
//!    counting oracle.
//! 6. [`sinkfind`] discovers fixed sink offsets from attention-score
//!    statistics, and [`synth`] manufactures Q/K/V tensors with planted
//!    sparsity patterns for end-to-end validation.
//!
//! Everything here is pure computation over in-memory values; file formats
//! and the CLI live in the companion `blindsight` crate. The crate is
//! `no_std` (with `alloc`) outside of tests.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod aggregate;
pub mod attention;
pub mod capture;
pub mod characterize;
pub mod flops;
pub mod layout;
pub mod mask;
pub mod reference;
pub mod sinkfind;
pub mod synth;

pub use aggregate::{AggregatorConfig, HeadMap, MaskDistribution, MaskFractions};
pub use attention::{AttentionOutput, HeadTensor};
pub use capture::PromptCapture;
pub use characterize::{CharacterizerConfig, HeadVerdict, OrderPolicy, PromptVerdicts};
pub use layout::{Segment, SegmentKind, SinkSpec, TokenLayout};
pub use mask::{AttentionMask, BaseVisibility, MaskType};
