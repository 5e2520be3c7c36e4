//! Compact ontology: a class forest, named value ranges, scene descriptions
//! and corner-case meta links.
//!
//! [`inject_meta_classes`] extends a base ontology with the corner-case
//! meta vocabulary (layers, levels, sublevels, sensor sources, fusion stages)
//! and one class per (corner case, cause), linked to its meta information
//! and, when given, its scene description.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::registry::CornerCaseSpec;
use crate::taxonomy::{
    Classification, FusionStage, Layer, Level, SensorSource, SensorSources, SubLevel,
};
use crate::textsearch::tokenize;

pub const ONTOLOGY_VERSION: &str = "1";

pub const META_ROOT: &str = "CornerCaseMeta";
pub const CAUSE_ROOT: &str = "CornerCaseCause";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OntologyError {
    #[error("ontology JSON: {0}")]
    Json(String),
    #[error("unsupported ontology version `{0}`")]
    VersionMismatch(String),
    #[error("duplicate {kind} `{name}`")]
    Duplicate { kind: &'static str, name: String },
    #[error("{context} references unknown {kind} `{name}`")]
    DanglingReference {
        context: String,
        kind: &'static str,
        name: String,
    },
    #[error("subclass cycle through `{0}`")]
    CyclicSubclass(String),
    #[error("malformed range `{0}`")]
    MalformedRange(String),
    #[error("malformed predicate in scene `{scene}`: {message}")]
    MalformedPredicate { scene: String, message: String },
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("corner case {id} cause `{cause}` references unknown scene description `{scene}`")]
    UnresolvedSceneRef {
        id: u32,
        cause: String,
        scene: String,
    },
    #[error(
        "class `{name}` already exists under parent {existing:?}, cannot re-parent to `{wanted}`"
    )]
    MetaClassConflict {
        name: String,
        existing: Option<String>,
        wanted: String,
    },
}

/// Units accepted in ranges. Everything is converted to a base unit
/// (m/s, m, rad, count, unitless) when metrics are compiled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Unit {
    KilometersPerHour,
    MetersPerSecond,
    Meters,
    Radians,
    Count,
    Unitless,
}

impl Unit {
    pub fn as_str(self) -> &'static str {
        match self {
            Unit::KilometersPerHour => "km/h",
            Unit::MetersPerSecond => "m/s",
            Unit::Meters => "m",
            Unit::Radians => "rad",
            Unit::Count => "count",
            Unit::Unitless => "unitless",
        }
    }

    pub fn base(self) -> Unit {
        match self {
            Unit::KilometersPerHour => Unit::MetersPerSecond,
            other => other,
        }
    }

    /// Converts a value in this unit into [`Unit::base`].
    pub fn to_base(self, value: f64) -> f64 {
        match self {
            Unit::KilometersPerHour => value / 3.6,
            _ => value,
        }
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Unit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "km/h" | "kmh" => Ok(Unit::KilometersPerHour),
            "m/s" => Ok(Unit::MetersPerSecond),
            "m" => Ok(Unit::Meters),
            "rad" => Ok(Unit::Radians),
            "count" => Ok(Unit::Count),
            "unitless" => Ok(Unit::Unitless),
            _ => Err(format!("unknown unit `{s}`")),
        }
    }
}

impl Serialize for Unit {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Unit {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OntologyClass {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
}

/// Closed interval `[min, max]` over one attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedRange {
    pub name: String,
    pub attribute: String,
    pub min: f64,
    pub max: f64,
    pub unit: Unit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InlineRange {
    pub attribute: String,
    pub min: f64,
    pub max: f64,
    pub unit: Unit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RangeRef {
    Named(String),
    Inline(InlineRange),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Filter {
    AttributeRange {
        attribute: String,
        min: f64,
        max: f64,
        unit: Unit,
    },
    /// Passes when the wrapped heading difference between an annotation
    /// and the ego vehicle lies in `[min_abs_delta, max_abs_delta]`.
    RelativeHeading {
        #[serde(default)]
        min_abs_delta: f64,
        max_abs_delta: f64,
    },
}

/// Tokens that negate a keyword hit when they occur just before it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegationRule {
    pub window: usize,
    pub words: Vec<String>,
}

impl Default for NegationRule {
    fn default() -> Self {
        NegationRule {
            window: 2,
            words: vec!["no".into(), "not".into(), "without".into()],
        }
    }
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predicate {
    ClassPresence {
        class: String,
        #[serde(default = "one")]
        min_count: u32,
    },
    CountWithFilter {
        class: String,
        #[serde(default)]
        filters: Vec<Filter>,
        min_count: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_count: Option<u32>,
    },
    EgoAttributeRange {
        range: RangeRef,
    },
    SceneTextKeyword {
        keywords: Vec<String>,
        max_edit_distance: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        negation: Option<NegationRule>,
    },
}

/// Conjunction of predicates describing the data that shows a corner case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDescription {
    pub name: String,
    pub predicates: Vec<Predicate>,
}

/// Links one cause class to its corner case meta information.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaLink {
    pub cause_class: String,
    pub corner_case_id: u32,
    pub description: String,
    pub cause: String,
    pub classifications: BTreeSet<Classification>,
    pub sources: SensorSources,
    pub fusion: FusionStage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OntologyDocument {
    #[serde(default)]
    version: Option<String>,
    #[serde(default)]
    classes: Vec<OntologyClass>,
    #[serde(default)]
    ranges: Vec<NamedRange>,
    #[serde(default)]
    scenes: Vec<SceneDescription>,
    #[serde(default)]
    meta: Vec<MetaLink>,
}

/// Validated ontology. Collections are kept sorted by name so that equal
/// ontologies serialize to equal bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct CornerCaseOntology {
    classes: BTreeMap<String, Option<String>>,
    ranges: BTreeMap<String, NamedRange>,
    scenes: BTreeMap<String, SceneDescription>,
    meta: BTreeMap<String, MetaLink>,
}

impl CornerCaseOntology {
    pub fn has_class(&self, name: &str) -> bool {
        self.classes.contains_key(name)
    }

    pub fn parent(&self, name: &str) -> Option<&str> {
        self.classes.get(name).and_then(|p| p.as_deref())
    }

    pub fn class_names(&self) -> impl Iterator<Item = &str> {
        self.classes.keys().map(String::as_str)
    }

    pub fn range(&self, name: &str) -> Option<&NamedRange> {
        self.ranges.get(name)
    }

    pub fn scene(&self, name: &str) -> Option<&SceneDescription> {
        self.scenes.get(name)
    }

    pub fn meta_links(&self) -> impl Iterator<Item = &MetaLink> {
        self.meta.values()
    }

    pub fn meta_link(&self, corner_case_id: u32, cause: &str) -> Option<&MetaLink> {
        self.meta
            .values()
            .find(|m| m.corner_case_id == corner_case_id && m.cause == cause)
    }

    /// The class itself followed by its ancestors, nearest first.
    pub fn ancestors(&self, class: &str) -> Result<Vec<&str>, OntologyError> {
        let (mut current, _) = self
            .classes
            .get_key_value(class)
            .ok_or_else(|| OntologyError::UnknownClass(class.to_string()))?;
        let mut chain = vec![current.as_str()];
        while let Some(Some(parent)) = self.classes.get(current) {
            let (key, _) = self
                .classes
                .get_key_value(parent)
                .expect("validated parent");
            chain.push(key.as_str());
            current = key;
        }
        Ok(chain)
    }

    pub fn to_json(&self) -> String {
        crate::jsonio::to_canonical_json(&self.document())
    }

    fn document(&self) -> OntologyDocument {
        OntologyDocument {
            version: Some(ONTOLOGY_VERSION.to_string()),
            classes: self
                .classes
                .iter()
                .map(|(name, parent)| OntologyClass {
                    name: name.clone(),
                    parent: parent.clone(),
                })
                .collect(),
            ranges: self.ranges.values().cloned().collect(),
            scenes: self.scenes.values().cloned().collect(),
            meta: self.meta.values().cloned().collect(),
        }
    }

    fn from_document(doc: OntologyDocument) -> Result<Self, OntologyError> {
        if let Some(version) = &doc.version {
            if version != ONTOLOGY_VERSION {
                return Err(OntologyError::VersionMismatch(version.clone()));
            }
        }
        let mut classes = BTreeMap::new();
        for class in doc.classes {
            if classes.insert(class.name.clone(), class.parent).is_some() {
                return Err(OntologyError::Duplicate {
                    kind: "class",
                    name: class.name,
                });
            }
        }
        let mut ranges = BTreeMap::new();
        for range in doc.ranges {
            if ranges.insert(range.name.clone(), range.clone()).is_some() {
                return Err(OntologyError::Duplicate {
                    kind: "range",
                    name: range.name,
                });
            }
        }
        let mut scenes = BTreeMap::new();
        for scene in doc.scenes {
            if scenes.insert(scene.name.clone(), scene.clone()).is_some() {
                return Err(OntologyError::Duplicate {
                    kind: "scene",
                    name: scene.name,
                });
            }
        }
        let mut meta = BTreeMap::new();
        for link in doc.meta {
            if meta
                .insert(link.cause_class.clone(), link.clone())
                .is_some()
            {
                return Err(OntologyError::Duplicate {
                    kind: "meta link",
                    name: link.cause_class,
                });
            }
        }
        let ontology = CornerCaseOntology {
            classes,
            ranges,
            scenes,
            meta,
        };
        ontology.validate()?;
        Ok(ontology)
    }

    fn validate(&self) -> Result<(), OntologyError> {
        for (name, parent) in &self.classes {
            if let Some(parent) = parent {
                if !self.classes.contains_key(parent) {
                    return Err(OntologyError::DanglingReference {
                        context: format!("class `{name}`"),
                        kind: "parent class",
                        name: parent.clone(),
                    });
                }
            }
        }
        for start in self.classes.keys() {
            let mut seen = BTreeSet::new();
            let mut current = start;
            while let Some(Some(parent)) = self.classes.get(current) {
                if !seen.insert(current) || parent == start {
                    return Err(OntologyError::CyclicSubclass(start.clone()));
                }
                current = parent;
            }
        }
        for range in self.ranges.values() {
            check_interval(&range.name, range.min, range.max)?;
        }
        for scene in self.scenes.values() {
            self.validate_scene(scene)?;
        }
        for link in self.meta.values() {
            self.validate_link(link)?;
        }
        Ok(())
    }

    fn validate_scene(&self, scene: &SceneDescription) -> Result<(), OntologyError> {
        let malformed = |message: String| OntologyError::MalformedPredicate {
            scene: scene.name.clone(),
            message,
        };
        if scene.predicates.is_empty() {
            return Err(malformed("scene description has no predicates".into()));
        }
        let class_ref = |class: &str| {
            if self.classes.contains_key(class) {
                Ok(())
            } else {
                Err(OntologyError::DanglingReference {
                    context: format!("scene `{}`", scene.name),
                    kind: "class",
                    name: class.to_string(),
                })
            }
        };
        for predicate in &scene.predicates {
            match predicate {
                Predicate::ClassPresence { class, min_count } => {
                    class_ref(class)?;
                    if *min_count == 0 {
                        return Err(malformed(format!(
                            "min_count of `{class}` must be positive"
                        )));
                    }
                }
                Predicate::CountWithFilter {
                    class,
                    filters,
                    min_count,
                    max_count,
                } => {
                    class_ref(class)?;
                    if *min_count == 0 {
                        return Err(malformed(format!(
                            "min_count of `{class}` must be positive"
                        )));
                    }
                    if let Some(max) = max_count {
                        if max < min_count {
                            return Err(malformed(format!(
                                "max_count {max} below min_count {min_count}"
                            )));
                        }
                    }
                    for filter in filters {
                        match filter {
                            Filter::AttributeRange {
                                attribute,
                                min,
                                max,
                                ..
                            } => check_interval(attribute, *min, *max)?,
                            Filter::RelativeHeading {
                                min_abs_delta,
                                max_abs_delta,
                            } => {
                                let ok = min_abs_delta.is_finite()
                                    && max_abs_delta.is_finite()
                                    && 0.0 <= *min_abs_delta
                                    && min_abs_delta <= max_abs_delta
                                    && *max_abs_delta <= PI;
                                if !ok {
                                    return Err(malformed(format!(
                                        "relative heading bounds [{min_abs_delta}, {max_abs_delta}] outside [0, pi]"
                                    )));
                                }
                            }
                        }
                    }
                }
                Predicate::EgoAttributeRange { range } => match range {
                    RangeRef::Named(name) => {
                        if !self.ranges.contains_key(name) {
                            return Err(OntologyError::DanglingReference {
                                context: format!("scene `{}`", scene.name),
                                kind: "range",
                                name: name.clone(),
                            });
                        }
                    }
                    RangeRef::Inline(r) => check_interval(&r.attribute, r.min, r.max)?,
                },
                Predicate::SceneTextKeyword {
                    keywords, negation, ..
                } => {
                    if keywords.is_empty() {
                        return Err(malformed("keyword list is empty".into()));
                    }
                    let negation_words = negation.iter().flat_map(|n| n.words.iter());
                    for word in keywords.iter().chain(negation_words) {
                        if tokenize(word).as_slice() != [word.as_str()] {
                            return Err(malformed(format!(
                                "`{word}` must be a single lowercase alphanumeric token"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn validate_link(&self, link: &MetaLink) -> Result<(), OntologyError> {
        let context = format!("meta link `{}`", link.cause_class);
        let require = |kind: &'static str, name: &str| {
            if self.classes.contains_key(name) {
                Ok(())
            } else {
                Err(OntologyError::DanglingReference {
                    context: context.clone(),
                    kind,
                    name: name.to_string(),
                })
            }
        };
        require("cause class", &link.cause_class)?;
        for c in &link.classifications {
            require("classification class", &classification_class(c))?;
        }
        for s in link.sources.iter() {
            require("sensor source class", source_class(s))?;
        }
        require("fusion class", fusion_class(link.fusion))?;
        if let Some(scene) = &link.scene {
            if !self.scenes.contains_key(scene) {
                return Err(OntologyError::DanglingReference {
                    context,
                    kind: "scene",
                    name: scene.clone(),
                });
            }
        }
        Ok(())
    }
}

fn check_interval(name: &str, min: f64, max: f64) -> Result<(), OntologyError> {
    if min.is_finite() && max.is_finite() && min <= max {
        Ok(())
    } else {
        Err(OntologyError::MalformedRange(name.to_string()))
    }
}

/// Parses and validates an ontology document.
pub fn load_ontology(document: &str) -> Result<CornerCaseOntology, OntologyError> {
    let doc: OntologyDocument =
        serde_json::from_str(document).map_err(|e| OntologyError::Json(e.to_string()))?;
    CornerCaseOntology::from_document(doc)
}

/// Transitive subclass closure of `class`, including `class` itself.
pub fn descendants(
    ontology: &CornerCaseOntology,
    class: &str,
) -> Result<BTreeSet<String>, OntologyError> {
    if !ontology.has_class(class) {
        return Err(OntologyError::UnknownClass(class.to_string()));
    }
    let mut children: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (name, parent) in &ontology.classes {
        if let Some(parent) = parent {
            children
                .entry(parent.as_str())
                .or_default()
                .push(name.as_str());
        }
    }
    let mut out = BTreeSet::new();
    let mut stack = vec![class];
    while let Some(next) = stack.pop() {
        if out.insert(next.to_string()) {
            stack.extend(children.get(next).into_iter().flatten().copied());
        }
    }
    Ok(out)
}

pub fn layer_class(layer: Layer) -> &'static str {
    match layer {
        Layer::Sensor => "SensorLayer",
        Layer::Content => "ContentLayer",
    }
}

pub fn level_class(level: Level) -> &'static str {
    match level {
        Level::Physical => "PhysicalLevel",
        Level::Hardware => "HardwareLevel",
        Level::Domain => "DomainLevel",
        Level::Object => "ObjectLevel",
        Level::Scene => "SceneLevel",
    }
}

/// Most specific meta class of a classification.
pub fn classification_class(c: &Classification) -> String {
    match c.sublevel() {
        None => level_class(c.level()).to_string(),
        Some(sub) => {
            let sub = match sub {
                SubLevel::GlobalOutlier => "GlobalOutlier",
                SubLevel::LocalOutlier => "LocalOutlier",
                SubLevel::Collective => "Collective",
                SubLevel::Contextual => "Contextual",
            };
            format!("{}{}", c.level().as_str(), sub)
        }
    }
}

pub fn source_class(source: SensorSource) -> &'static str {
    match source {
        SensorSource::Radar => "RadarSource",
        SensorSource::Video => "VideoSource",
        SensorSource::Lidar => "LidarSource",
    }
}

pub fn fusion_class(fusion: FusionStage) -> &'static str {
    match fusion {
        FusionStage::Single => "SingleSource",
        FusionStage::Multi => "MultiSource",
    }
}

/// Class name for one cause, e.g. `Cause2_TrafficJamRushHour`.
pub fn cause_class_name(corner_case_id: u32, cause: &str) -> String {
    let camel: String = tokenize(cause)
        .iter()
        .map(|t| {
            let mut chars = t.chars();
            match chars.next() {
                Some(first) => first.to_uppercase().chain(chars).collect::<String>(),
                None => String::new(),
            }
        })
        .collect();
    format!("Cause{corner_case_id}_{camel}")
}

/// The fixed meta-class forest, parents listed before children.
fn meta_vocabulary() -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = vec![
        ("Classification".into(), META_ROOT.into()),
        ("SensorSourceOption".into(), META_ROOT.into()),
        ("FusionOption".into(), META_ROOT.into()),
        (CAUSE_ROOT.into(), META_ROOT.into()),
    ];
    for layer in [Layer::Sensor, Layer::Content] {
        out.push((layer_class(layer).into(), "Classification".into()));
    }
    for level in Level::ALL {
        out.push((level_class(level).into(), layer_class(level.layer()).into()));
    }
    for c in Classification::all() {
        if c.sublevel().is_some() {
            out.push((classification_class(&c), level_class(c.level()).into()));
        }
    }
    for s in [
        SensorSource::Radar,
        SensorSource::Video,
        SensorSource::Lidar,
    ] {
        out.push((source_class(s).into(), "SensorSourceOption".into()));
    }
    for f in [FusionStage::Single, FusionStage::Multi] {
        out.push((fusion_class(f).into(), "FusionOption".into()));
    }
    out
}

fn ensure_class(
    classes: &mut BTreeMap<String, Option<String>>,
    name: &str,
    parent: Option<&str>,
) -> Result<(), OntologyError> {
    match classes.get(name) {
        Some(existing) if existing.as_deref() == parent => Ok(()),
        Some(existing) => Err(OntologyError::MetaClassConflict {
            name: name.to_string(),
            existing: existing.clone(),
            wanted: parent.unwrap_or("<root>").to_string(),
        }),
        None => {
            classes.insert(name.to_string(), parent.map(str::to_string));
            Ok(())
        }
    }
}

/// Adds the corner-case meta classes and one linked class per cause.
///
/// Existing classes are never removed or re-parented. Injecting the same
/// registry twice yields an equal ontology.
pub fn inject_meta_classes(
    ontology: &CornerCaseOntology,
    specs: &[CornerCaseSpec],
) -> Result<CornerCaseOntology, OntologyError> {
    let mut next = ontology.clone();
    ensure_class(&mut next.classes, META_ROOT, None)?;
    for (name, parent) in meta_vocabulary() {
        ensure_class(&mut next.classes, &name, Some(&parent))?;
    }
    for spec in specs {
        for cause in &spec.causes {
            if let Some(scene) = &cause.scene_ref {
                if !next.scenes.contains_key(scene) {
                    return Err(OntologyError::UnresolvedSceneRef {
                        id: spec.id,
                        cause: cause.text.clone(),
                        scene: scene.clone(),
                    });
                }
            }
            let class = cause_class_name(spec.id, &cause.text);
            if let Some(other) = next.meta.get(&class) {
                if other.corner_case_id != spec.id || other.cause != cause.text {
                    return Err(OntologyError::Duplicate {
                        kind: "cause class",
                        name: class,
                    });
                }
            }
            ensure_class(&mut next.classes, &class, Some(CAUSE_ROOT))?;
            next.meta.insert(
                class.clone(),
                MetaLink {
                    cause_class: class,
                    corner_case_id: spec.id,
                    description: spec.description.clone(),
                    cause: cause.text.clone(),
                    classifications: spec.classifications.clone(),
                    sources: spec.sources.clone(),
                    fusion: spec.fusion,
                    scene: cause.scene_ref.clone(),
                },
            );
        }
    }
    next.validate()?;
    Ok(next)
}
