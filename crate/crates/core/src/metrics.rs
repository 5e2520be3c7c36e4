//! Compilation of scene descriptions into executable search metrics, and the
//! versioned metrics file that hands them to the dataset side.
//!
//! All ranges are converted to base units here so that extraction never
//! deals with units.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::ontology::{
    CornerCaseOntology, Filter, NegationRule, OntologyError, Predicate, RangeRef, Unit,
};
use crate::registry::{CornerCaseSpec, RangeOverride};
use crate::taxonomy::{Classification, FusionStage, SensorSources};

pub const METRICS_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("corner case {id} cause `{cause}` references unknown scene description `{scene}`")]
    UnresolvedSceneRef {
        id: u32,
        cause: String,
        scene: String,
    },
    #[error("corner case {id} cause `{cause}` is not in the ontology; run ingest first")]
    NotInjected { id: u32, cause: String },
    #[error("corner case {id}: override unit `{given}` differs from range unit `{expected}`")]
    UnitMismatch {
        id: u32,
        given: String,
        expected: String,
    },
    #[error(
        "corner case {id}: override attribute `{attribute}` matches no range in scene `{scene}`"
    )]
    OverrideTargetMissing {
        id: u32,
        attribute: String,
        scene: String,
    },
    #[error("corner case {id}: range for `{attribute}` is empty after override")]
    InvalidOverride { id: u32, attribute: String },
    #[error("malformed metrics document: {0}")]
    Malformed(String),
    #[error("unsupported metrics version `{0}` (expected `{METRICS_VERSION}`)")]
    VersionMismatch(String),
    #[error(transparent)]
    Ontology(#[from] OntologyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HitMode {
    /// Only annotations selected by class-presence predicates are hits.
    AnnotationTargeted,
    /// Every annotation of every qualifying sample is a hit.
    SceneWide,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricFilter {
    AttributeRange {
        attribute: String,
        min: f64,
        max: f64,
        unit: Unit,
    },
    RelativeHeading {
        min_abs_delta: f64,
        max_abs_delta: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricPredicate {
    ClassPresence {
        class: String,
        min_count: u32,
    },
    CountWithFilter {
        class: String,
        filters: Vec<MetricFilter>,
        min_count: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_count: Option<u32>,
    },
    EgoAttributeRange {
        attribute: String,
        min: f64,
        max: f64,
        unit: Unit,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        range_name: Option<String>,
    },
    SceneTextKeyword {
        keywords: Vec<String>,
        max_edit_distance: u32,
        negation: NegationRule,
    },
}

impl MetricPredicate {
    /// Ontology class this predicate counts, if any.
    pub fn class(&self) -> Option<&str> {
        match self {
            MetricPredicate::ClassPresence { class, .. }
            | MetricPredicate::CountWithFilter { class, .. } => Some(class),
            _ => None,
        }
    }

    pub fn is_scene_level(&self) -> bool {
        matches!(self, MetricPredicate::SceneTextKeyword { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompiledMetric {
    pub corner_case_id: u32,
    pub description: String,
    pub cause: String,
    pub cause_class: String,
    pub scene: String,
    pub classifications: BTreeSet<Classification>,
    pub sources: SensorSources,
    pub fusion: FusionStage,
    pub predicates: Vec<MetricPredicate>,
    pub hit_mode: HitMode,
}

impl CompiledMetric {
    pub fn key(&self) -> (u32, &str) {
        (self.corner_case_id, &self.cause)
    }

    pub fn required_classes(&self) -> impl Iterator<Item = &str> {
        self.predicates.iter().filter_map(MetricPredicate::class)
    }
}

pub fn derive_hit_mode(predicates: &[MetricPredicate]) -> HitMode {
    if predicates
        .iter()
        .any(|p| matches!(p, MetricPredicate::ClassPresence { .. }))
    {
        HitMode::AnnotationTargeted
    } else {
        HitMode::SceneWide
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub version: String,
    pub metrics: Vec<CompiledMetric>,
}

impl MetricsFile {
    pub fn empty() -> Self {
        MetricsFile {
            version: METRICS_VERSION.to_string(),
            metrics: Vec::new(),
        }
    }

    pub fn required_classes(&self) -> BTreeSet<&str> {
        self.metrics
            .iter()
            .flat_map(CompiledMetric::required_classes)
            .collect()
    }

    fn validate(&self) -> Result<(), MetricsError> {
        if self.version != METRICS_VERSION {
            return Err(MetricsError::VersionMismatch(self.version.clone()));
        }
        let mut keys = BTreeSet::new();
        for metric in &self.metrics {
            if !keys.insert(metric.key()) {
                return Err(MetricsError::Malformed(format!(
                    "duplicate metric for corner case {} cause `{}`",
                    metric.corner_case_id, metric.cause
                )));
            }
            if metric.predicates.is_empty() {
                return Err(MetricsError::Malformed(format!(
                    "metric {} `{}` has no predicates",
                    metric.corner_case_id, metric.cause
                )));
            }
            if metric.classifications.is_empty() {
                return Err(MetricsError::Malformed(format!(
                    "metric {} `{}` has no classifications",
                    metric.corner_case_id, metric.cause
                )));
            }
            if derive_hit_mode(&metric.predicates) != metric.hit_mode {
                return Err(MetricsError::Malformed(format!(
                    "metric {} `{}` has inconsistent hit_mode",
                    metric.corner_case_id, metric.cause
                )));
            }
            for p in &metric.predicates {
                let bad_range = match p {
                    MetricPredicate::EgoAttributeRange { min, max, unit, .. } => {
                        !(min <= max) || unit.base() != *unit
                    }
                    MetricPredicate::CountWithFilter { filters, .. } => {
                        filters.iter().any(|f| match f {
                            MetricFilter::AttributeRange { min, max, unit, .. } => {
                                !(min <= max) || unit.base() != *unit
                            }
                            MetricFilter::RelativeHeading {
                                min_abs_delta,
                                max_abs_delta,
                            } => !(min_abs_delta <= max_abs_delta),
                        })
                    }
                    _ => false,
                };
                if bad_range {
                    return Err(MetricsError::Malformed(format!(
                        "metric {} `{}` has a range that is empty or not in base units",
                        metric.corner_case_id, metric.cause
                    )));
                }
            }
        }
        Ok(())
    }
}

struct RangeSlot {
    attribute: String,
    min: f64,
    max: f64,
    unit: Unit,
}

impl RangeSlot {
    fn apply(&mut self, id: u32, ov: &RangeOverride) -> Result<bool, MetricsError> {
        if self.attribute != ov.attribute {
            return Ok(false);
        }
        if let Some(given) = &ov.unit {
            let parsed: Result<Unit, _> = given.parse();
            if parsed != Ok(self.unit) {
                return Err(MetricsError::UnitMismatch {
                    id,
                    given: given.clone(),
                    expected: self.unit.to_string(),
                });
            }
        }
        if let Some(min) = ov.min {
            self.min = min;
        }
        if let Some(max) = ov.max {
            self.max = max;
        }
        if !(self.min <= self.max) {
            return Err(MetricsError::InvalidOverride {
                id,
                attribute: self.attribute.clone(),
            });
        }
        Ok(true)
    }

    fn base(&self) -> (f64, f64, Unit) {
        (
            self.unit.to_base(self.min),
            self.unit.to_base(self.max),
            self.unit.base(),
        )
    }
}

fn compile_predicates(
    ontology: &CornerCaseOntology,
    id: u32,
    scene: &str,
    predicates: &[Predicate],
    range_override: Option<&RangeOverride>,
) -> Result<Vec<MetricPredicate>, MetricsError> {
    let mut applied = false;
    let mut out = Vec::with_capacity(predicates.len());
    let mut apply = |slot: &mut RangeSlot| -> Result<(), MetricsError> {
        if let Some(ov) = range_override {
            applied |= slot.apply(id, ov)?;
        }
        Ok(())
    };
    for predicate in predicates {
        let compiled = match predicate {
            Predicate::ClassPresence { class, min_count } => MetricPredicate::ClassPresence {
                class: class.clone(),
                min_count: *min_count,
            },
            Predicate::CountWithFilter {
                class,
                filters,
                min_count,
                max_count,
            } => {
                let mut resolved = Vec::with_capacity(filters.len());
                for filter in filters {
                    resolved.push(match filter {
                        Filter::AttributeRange {
                            attribute,
                            min,
                            max,
                            unit,
                        } => {
                            let mut slot = RangeSlot {
                                attribute: attribute.clone(),
                                min: *min,
                                max: *max,
                                unit: *unit,
                            };
                            apply(&mut slot)?;
                            let (min, max, unit) = slot.base();
                            MetricFilter::AttributeRange {
                                attribute: attribute.clone(),
                                min,
                                max,
                                unit,
                            }
                        }
                        Filter::RelativeHeading {
                            min_abs_delta,
                            max_abs_delta,
                        } => MetricFilter::RelativeHeading {
                            min_abs_delta: *min_abs_delta,
                            max_abs_delta: *max_abs_delta,
                        },
                    });
                }
                MetricPredicate::CountWithFilter {
                    class: class.clone(),
                    filters: resolved,
                    min_count: *min_count,
                    max_count: *max_count,
                }
            }
            Predicate::EgoAttributeRange { range } => {
                let (mut slot, range_name) = match range {
                    RangeRef::Named(name) => {
                        let r = ontology.range(name).ok_or_else(|| {
                            OntologyError::DanglingReference {
                                context: format!("scene `{scene}`"),
                                kind: "range",
                                name: name.clone(),
                            }
                        })?;
                        (
                            RangeSlot {
                                attribute: r.attribute.clone(),
                                min: r.min,
                                max: r.max,
                                unit: r.unit,
                            },
                            Some(name.clone()),
                        )
                    }
                    RangeRef::Inline(r) => (
                        RangeSlot {
                            attribute: r.attribute.clone(),
                            min: r.min,
                            max: r.max,
                            unit: r.unit,
                        },
                        None,
                    ),
                };
                apply(&mut slot)?;
                let (min, max, unit) = slot.base();
                MetricPredicate::EgoAttributeRange {
                    attribute: slot.attribute,
                    min,
                    max,
                    unit,
                    range_name,
                }
            }
            Predicate::SceneTextKeyword {
                keywords,
                max_edit_distance,
                negation,
            } => MetricPredicate::SceneTextKeyword {
                keywords: keywords.clone(),
                max_edit_distance: *max_edit_distance,
                negation: negation.clone().unwrap_or_default(),
            },
        };
        out.push(compiled);
    }
    if let Some(ov) = range_override {
        if !applied {
            return Err(MetricsError::OverrideTargetMissing {
                id,
                attribute: ov.attribute.clone(),
                scene: scene.to_string(),
            });
        }
    }
    Ok(out)
}

/// Compiles one metric per cause that has a scene description.
///
/// Meta information is read back from the ontology's meta links; range
/// bounds given in the registry replace the ontology's. Output is sorted by
/// corner case id, then cause text.
pub fn compile(
    ontology: &CornerCaseOntology,
    specs: &[CornerCaseSpec],
) -> Result<MetricsFile, MetricsError> {
    let mut metrics = BTreeMap::new();
    for spec in specs {
        for cause in &spec.causes {
            let Some(scene_ref) = &cause.scene_ref else {
                continue;
            };
            let link = ontology.meta_link(spec.id, &cause.text).ok_or_else(|| {
                MetricsError::NotInjected {
                    id: spec.id,
                    cause: cause.text.clone(),
                }
            })?;
            let scene_name = link.scene.as_ref().unwrap_or(scene_ref);
            let scene =
                ontology
                    .scene(scene_name)
                    .ok_or_else(|| MetricsError::UnresolvedSceneRef {
                        id: spec.id,
                        cause: cause.text.clone(),
                        scene: scene_name.clone(),
                    })?;
            let predicates = compile_predicates(
                ontology,
                spec.id,
                &scene.name,
                &scene.predicates,
                cause.range_override.as_ref(),
            )?;
            let metric = CompiledMetric {
                corner_case_id: link.corner_case_id,
                description: link.description.clone(),
                cause: link.cause.clone(),
                cause_class: link.cause_class.clone(),
                scene: scene.name.clone(),
                classifications: link.classifications.clone(),
                sources: link.sources.clone(),
                fusion: link.fusion,
                hit_mode: derive_hit_mode(&predicates),
                predicates,
            };
            metrics.insert((spec.id, cause.text.clone()), metric);
        }
    }
    Ok(MetricsFile {
        version: METRICS_VERSION.to_string(),
        metrics: metrics.into_values().collect(),
    })
}

pub fn write_metrics(file: &MetricsFile) -> String {
    crate::jsonio::to_canonical_json(file)
}

pub fn read_metrics(source: &str) -> Result<MetricsFile, MetricsError> {
    let value: serde_json::Value =
        serde_json::from_str(source).map_err(|e| MetricsError::Malformed(e.to_string()))?;
    if let Some(version) = value.get("version").and_then(|v| v.as_str()) {
        if version != METRICS_VERSION {
            return Err(MetricsError::VersionMismatch(version.to_string()));
        }
    }
    let file: MetricsFile =
        serde_json::from_value(value).map_err(|e| MetricsError::Malformed(e.to_string()))?;
    file.validate()?;
    Ok(file)
}
