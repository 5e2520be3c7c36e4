//! Normalized perception dataset: scenes contain samples (annotated frames),
//! samples contain annotations (3D boxes). Also holds the user-supplied
//! mapping from ontology classes to dataset labels.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::metrics::MetricsFile;
use crate::ontology::CornerCaseOntology;

pub const DATASET_VERSION: &str = "1";
pub const MAPPING_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DatasetError {
    #[error("dataset JSON: {0}")]
    Json(String),
    #[error("unsupported {kind} version `{found}`")]
    VersionMismatch { kind: &'static str, found: String },
    #[error("duplicate {kind} id `{id}`")]
    DuplicateId { kind: &'static str, id: String },
    #[error("{kind} `{id}` references unknown {target} `{target_id}`")]
    DanglingReference {
        kind: &'static str,
        id: String,
        target: &'static str,
        target_id: String,
    },
    #[error("scene `{scene}`: sample timestamps are not strictly increasing at `{sample}`")]
    NonMonotonicTimestamps { scene: String, sample: String },
    #[error("{kind} `{id}`: {message}")]
    InvalidValue {
        kind: &'static str,
        id: String,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MappingError {
    #[error("mapping JSON: {0}")]
    Json(String),
    #[error("unsupported mapping version `{0}`")]
    VersionMismatch(String),
    #[error("no dataset labels mapped for ontology classes: {}", .0.join(", "))]
    MissingMapping(Vec<String>),
    #[error("unknown ontology class `{0}`")]
    UnknownClass(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: String,
    #[serde(default)]
    pub description: String,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    /// m/s
    pub speed: f64,
    /// radians in (-pi, pi]
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub scene_id: String,
    /// microseconds
    pub timestamp: i64,
    pub ego: EgoState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: String,
    pub sample_id: String,
    pub label: String,
    /// (x, y, z) in meters
    pub center: [f64; 3],
    /// (width, length, height) in meters
    pub size: [f64; 3],
    pub heading: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetDocument {
    pub version: String,
    pub scenes: Vec<Scene>,
    pub samples: Vec<Sample>,
    pub annotations: Vec<Annotation>,
}

impl DatasetDocument {
    pub fn to_json(&self) -> String {
        crate::jsonio::to_canonical_json(self)
    }
}

/// Validated, indexed dataset. Scenes, samples and annotations are stored
/// sorted by id; each scene's samples are ordered by timestamp.
#[derive(Debug, Clone)]
pub struct DatasetIndex {
    scenes: Vec<Scene>,
    samples: Vec<Sample>,
    annotations: Vec<Annotation>,
    scene_pos: HashMap<String, usize>,
    sample_pos: HashMap<String, usize>,
    annotation_pos: HashMap<String, usize>,
    scene_samples: Vec<Vec<usize>>,
    sample_annotations: Vec<Vec<usize>>,
}

fn index_by_id<T>(
    items: &[T],
    kind: &'static str,
    id: impl Fn(&T) -> &str,
) -> Result<HashMap<String, usize>, DatasetError> {
    let mut map = HashMap::with_capacity(items.len());
    for (pos, item) in items.iter().enumerate() {
        if map.insert(id(item).to_string(), pos).is_some() {
            return Err(DatasetError::DuplicateId {
                kind,
                id: id(item).to_string(),
            });
        }
    }
    Ok(map)
}

impl DatasetIndex {
    pub fn from_document(doc: DatasetDocument) -> Result<Self, DatasetError> {
        if doc.version != DATASET_VERSION {
            return Err(DatasetError::VersionMismatch {
                kind: "dataset",
                found: doc.version,
            });
        }
        let DatasetDocument {
            mut scenes,
            mut samples,
            mut annotations,
            ..
        } = doc;
        scenes.sort_by(|a, b| a.id.cmp(&b.id));
        samples.sort_by(|a, b| a.id.cmp(&b.id));
        annotations.sort_by(|a, b| a.id.cmp(&b.id));

        let scene_pos = index_by_id(&scenes, "scene", |s| &s.id)?;
        let sample_pos = index_by_id(&samples, "sample", |s| &s.id)?;
        let annotation_pos = index_by_id(&annotations, "annotation", |a| &a.id)?;

        let mut scene_samples = vec![Vec::new(); scenes.len()];
        for (pos, sample) in samples.iter().enumerate() {
            let scene = *scene_pos.get(&sample.scene_id).ok_or_else(|| {
                DatasetError::DanglingReference {
                    kind: "sample",
                    id: sample.id.clone(),
                    target: "scene",
                    target_id: sample.scene_id.clone(),
                }
            })?;
            let ego = sample.ego;
            if !(ego.speed.is_finite() && ego.speed >= 0.0) {
                return Err(DatasetError::InvalidValue {
                    kind: "sample",
                    id: sample.id.clone(),
                    message: format!("ego speed {} must be finite and >= 0", ego.speed),
                });
            }
            if !(ego.heading > -PI && ego.heading <= PI) {
                return Err(DatasetError::InvalidValue {
                    kind: "sample",
                    id: sample.id.clone(),
                    message: format!("ego heading {} outside (-pi, pi]", ego.heading),
                });
            }
            scene_samples[scene].push(pos);
        }
        for (scene, members) in scene_samples.iter_mut().enumerate() {
            members.sort_by_key(|&p| samples[p].timestamp);
            for pair in members.windows(2) {
                if samples[pair[0]].timestamp >= samples[pair[1]].timestamp {
                    return Err(DatasetError::NonMonotonicTimestamps {
                        scene: scenes[scene].id.clone(),
                        sample: samples[pair[1]].id.clone(),
                    });
                }
            }
        }

        let mut sample_annotations = vec![Vec::new(); samples.len()];
        for (pos, ann) in annotations.iter().enumerate() {
            let sample =
                *sample_pos
                    .get(&ann.sample_id)
                    .ok_or_else(|| DatasetError::DanglingReference {
                        kind: "annotation",
                        id: ann.id.clone(),
                        target: "sample",
                        target_id: ann.sample_id.clone(),
                    })?;
            if !ann.size.iter().all(|s| s.is_finite() && *s > 0.0) {
                return Err(DatasetError::InvalidValue {
                    kind: "annotation",
                    id: ann.id.clone(),
                    message: "box size must be strictly positive".into(),
                });
            }
            if !(ann.center.iter().all(|c| c.is_finite()) && ann.heading.is_finite()) {
                return Err(DatasetError::InvalidValue {
                    kind: "annotation",
                    id: ann.id.clone(),
                    message: "center and heading must be finite".into(),
                });
            }
            sample_annotations[sample].push(pos);
        }

        Ok(DatasetIndex {
            scenes,
            samples,
            annotations,
            scene_pos,
            sample_pos,
            annotation_pos,
            scene_samples,
            sample_annotations,
        })
    }

    pub fn scenes(&self) -> &[Scene] {
        &self.scenes
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn annotations(&self) -> &[Annotation] {
        &self.annotations
    }

    pub fn scene(&self, id: &str) -> Option<&Scene> {
        self.scene_pos.get(id).map(|&p| &self.scenes[p])
    }

    pub fn sample(&self, id: &str) -> Option<&Sample> {
        self.sample_pos.get(id).map(|&p| &self.samples[p])
    }

    pub fn annotation(&self, id: &str) -> Option<&Annotation> {
        self.annotation_pos.get(id).map(|&p| &self.annotations[p])
    }

    /// Samples of a scene in timestamp order.
    pub fn samples_of(&self, scene_id: &str) -> impl Iterator<Item = &Sample> {
        self.scene_pos
            .get(scene_id)
            .into_iter()
            .flat_map(move |&p| self.scene_samples[p].iter().map(move |&s| &self.samples[s]))
    }

    /// Annotations of a sample in id order.
    pub fn annotations_of(&self, sample_id: &str) -> impl Iterator<Item = &Annotation> {
        self.sample_pos
            .get(sample_id)
            .into_iter()
            .flat_map(move |&p| {
                self.sample_annotations[p]
                    .iter()
                    .map(move |&a| &self.annotations[a])
            })
    }

    pub fn to_document(&self) -> DatasetDocument {
        DatasetDocument {
            version: DATASET_VERSION.to_string(),
            scenes: self.scenes.clone(),
            samples: self.samples.clone(),
            annotations: self.annotations.clone(),
        }
    }
}

pub fn load_dataset(document: &str) -> Result<DatasetIndex, DatasetError> {
    let doc: DatasetDocument =
        serde_json::from_str(document).map_err(|e| DatasetError::Json(e.to_string()))?;
    DatasetIndex::from_document(doc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingDocument {
    pub version: String,
    /// Ontology class -> dataset labels.
    pub classes: BTreeMap<String, BTreeSet<String>>,
    /// Ontology attribute name -> dataset attribute name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, String>,
}

/// Ontology-class to dataset-label mapping with subclass closure applied:
/// a class without its own entry inherits its nearest mapped ancestor's.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMapping {
    resolved: BTreeMap<String, BTreeSet<String>>,
    known: BTreeSet<String>,
    attributes: BTreeMap<String, String>,
}

impl LabelMapping {
    /// Dataset attribute name for an ontology attribute.
    pub fn attribute<'a>(&'a self, name: &'a str) -> &'a str {
        self.attributes.get(name).map_or(name, String::as_str)
    }
}

pub fn load_mapping(
    document: &str,
    ontology: &CornerCaseOntology,
    metrics: &MetricsFile,
) -> Result<LabelMapping, MappingError> {
    let doc: MappingDocument =
        serde_json::from_str(document).map_err(|e| MappingError::Json(e.to_string()))?;
    build_mapping(doc, ontology, metrics)
}

pub fn build_mapping(
    doc: MappingDocument,
    ontology: &CornerCaseOntology,
    metrics: &MetricsFile,
) -> Result<LabelMapping, MappingError> {
    if doc.version != MAPPING_VERSION {
        return Err(MappingError::VersionMismatch(doc.version));
    }
    for class in doc.classes.keys() {
        if !ontology.has_class(class) {
            return Err(MappingError::UnknownClass(class.clone()));
        }
    }
    let mut resolved = BTreeMap::new();
    for class in ontology.class_names() {
        let chain = ontology.ancestors(class).expect("class from ontology");
        if let Some(labels) = chain.iter().find_map(|c| doc.classes.get(*c)) {
            resolved.insert(class.to_string(), labels.clone());
        }
    }
    let mut missing = Vec::new();
    for class in metrics.required_classes() {
        if !ontology.has_class(class) {
            return Err(MappingError::UnknownClass(class.to_string()));
        }
        if !resolved.contains_key(class) {
            missing.push(class.to_string());
        }
    }
    if !missing.is_empty() {
        return Err(MappingError::MissingMapping(missing));
    }
    Ok(LabelMapping {
        resolved,
        known: ontology.class_names().map(str::to_string).collect(),
        attributes: doc.attributes,
    })
}

/// Dataset labels for an ontology class.
pub fn resolve_labels<'a>(
    mapping: &'a LabelMapping,
    class: &str,
) -> Result<&'a BTreeSet<String>, MappingError> {
    match mapping.resolved.get(class) {
        Some(labels) => Ok(labels),
        None if mapping.known.contains(class) => {
            Err(MappingError::MissingMapping(vec![class.to_string()]))
        }
        None => Err(MappingError::UnknownClass(class.to_string())),
    }
}
