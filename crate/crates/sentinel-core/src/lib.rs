//! Core algorithms for building in-domain, sentence-level preference data
//! for object-hallucination mitigation, and for checking the context-aware
//! DPO objective on a small autoregressive model.
//!
//! The crate is `no_std` and only needs `alloc`. Everything that talks to the
//! outside world (wire transports, files, the CLI) lives in the `sentinel`
//! crate; here the external capabilities are the [`protocol`] traits plus the
//! deterministic mocks in [`mock`].
//!
//! Module map:
//!
//! - [`protocol`]: sampler / detector / triplet-parser contracts and payloads
//! - [`segmenter`]: sentence boundaries with abbreviation guards
//! - [`grammar`]: built-in pattern grammar producing scene-graph triplets
//! - [`lemma`], [`lexnames`], [`extractor`]: triplets to concrete object lemmas
//! - [`validator`]: two-detector cross-checking and sentence tags
//! - [`pipeline`]: iterative contextual bootstrapping of preference pairs
//! - [`cdpo`]: C-DPO loss, micro bigram model, gradient and cancellation checks
//! - [`analysis`], [`metrics`]: position statistics, early-intervention
//!   decoding and the AMBER generative metrics
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod analysis;
pub mod cdpo;
pub mod extractor;
pub mod grammar;
pub mod lemma;
pub mod lexnames;
pub mod metrics;
pub mod mock;
pub mod pipeline;
pub mod protocol;
pub mod rng;
pub mod segmenter;
pub mod validator;

pub use protocol::{
    BackendError, Candidate, DetectionQuery, DetectionResult, Detector, DetectorSlot, Sampler, SamplerRequest,
    SamplerResponse, Triplet, TripletParseResult, TripletParser,
};
