//! Corner-case pipeline: expert registry to ontology metrics, dataset
//! extraction, detector matching and a-posteriori statistics.

pub mod dataset;
pub mod evaluation;
pub mod extraction;
pub mod fixtures;
pub mod jsonio;
pub mod matching;
pub mod metrics;
pub mod ontology;
pub mod registry;
pub mod synthgen;
pub mod taxonomy;
pub mod textsearch;
