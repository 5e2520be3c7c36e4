//! Reference inputs: the seven implemented corner cases, a base ontology
//! with their scene descriptions, a label mapping for the synthetic
//! dataset and a 50-scene synth spec.

pub const REGISTRY_CSV: &str = include_str!("../fixtures/registry.csv");
pub const ONTOLOGY_JSON: &str = include_str!("../fixtures/ontology.json");
pub const MAPPING_JSON: &str = include_str!("../fixtures/mapping.json");
pub const SYNTHSPEC_JSON: &str = include_str!("../fixtures/synthspec.json");
