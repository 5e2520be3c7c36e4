//! A-priori corner-case sheet ingestion.
//!
//! The sheet is a CSV with one row per (corner case, cause, classification).
//! Rows sharing an `id` are merged into a single [`CornerCaseSpec`].

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::taxonomy::{
    parse_classification, parse_sources, Classification, FusionStage, SensorSources, TaxonomyError,
};

pub const REQUIRED_COLUMNS: [&str; 7] = [
    "id",
    "description",
    "cause",
    "ravioli",
    "source",
    "layer",
    "level",
];

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("registry CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("registry is missing column `{0}`")]
    MissingColumn(String),
    #[error("corner case {id}: rows disagree on {field}")]
    DuplicateConflict { id: u32, field: String },
    #[error("registry line {line}: {source}")]
    Taxonomy {
        line: u64,
        #[source]
        source: TaxonomyError,
    },
    #[error("registry line {line}: {message}")]
    InvalidField { line: u64, message: String },
}

/// Sheet-supplied replacement for a range in the linked scene description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeOverride {
    pub attribute: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cause {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range_override: Option<RangeOverride>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CornerCaseSpec {
    pub id: u32,
    pub description: String,
    pub causes: Vec<Cause>,
    pub sources: SensorSources,
    pub fusion: FusionStage,
    pub classifications: BTreeSet<Classification>,
}

impl CornerCaseSpec {
    pub fn cause(&self, text: &str) -> Option<&Cause> {
        self.causes.iter().find(|c| c.text == text)
    }
}

#[derive(Debug, Deserialize)]
struct Row {
    id: String,
    description: String,
    cause: String,
    ravioli: String,
    source: String,
    layer: String,
    level: String,
    #[serde(default)]
    scene_ref: Option<String>,
    #[serde(default)]
    override_attr: Option<String>,
    #[serde(default)]
    override_min: Option<String>,
    #[serde(default)]
    override_max: Option<String>,
    #[serde(default)]
    override_unit: Option<String>,
}

fn non_empty(value: Option<String>) -> Option<String> {
    value
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
}

fn parse_bound(
    value: Option<String>,
    line: u64,
    column: &str,
) -> Result<Option<f64>, RegistryError> {
    match non_empty(value) {
        None => Ok(None),
        Some(text) => text
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(Some)
            .ok_or_else(|| RegistryError::InvalidField {
                line,
                message: format!("{column} `{text}` is not a finite number"),
            }),
    }
}

/// Reads the corner-case sheet and groups its rows by id.
///
/// Output is sorted by id; causes are sorted by text. The result does not
/// depend on row order.
pub fn load_registry<R: Read>(source: R) -> Result<Vec<CornerCaseSpec>, RegistryError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    for column in REQUIRED_COLUMNS {
        if !headers.iter().any(|h| h == column) {
            return Err(RegistryError::MissingColumn(column.to_string()));
        }
    }

    let mut grouped: BTreeMap<u32, CornerCaseSpec> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let row: Row = record.deserialize(Some(&headers))?;
        let taxonomy = |source| RegistryError::Taxonomy { line, source };

        let id: u32 = row.id.parse().ok().filter(|id| *id > 0).ok_or_else(|| {
            RegistryError::InvalidField {
                line,
                message: format!("id `{}` is not a positive integer", row.id),
            }
        })?;
        if row.cause.is_empty() {
            return Err(RegistryError::InvalidField {
                line,
                message: "cause is empty".into(),
            });
        }
        let sources = parse_sources(&row.ravioli).map_err(taxonomy)?;
        let fusion: FusionStage = row.source.parse().map_err(taxonomy)?;
        let classification = parse_classification(&row.layer, &row.level).map_err(taxonomy)?;

        let range_override = match non_empty(row.override_attr) {
            Some(attribute) => Some(RangeOverride {
                attribute,
                min: parse_bound(row.override_min, line, "override_min")?,
                max: parse_bound(row.override_max, line, "override_max")?,
                unit: non_empty(row.override_unit),
            }),
            None => {
                if non_empty(row.override_min.clone()).is_some()
                    || non_empty(row.override_max.clone()).is_some()
                {
                    return Err(RegistryError::InvalidField {
                        line,
                        message: "override bounds given without override_attr".into(),
                    });
                }
                None
            }
        };
        let cause = Cause {
            text: row.cause,
            scene_ref: non_empty(row.scene_ref),
            range_override,
        };

        match grouped.get_mut(&id) {
            None => {
                grouped.insert(
                    id,
                    CornerCaseSpec {
                        id,
                        description: row.description,
                        causes: vec![cause],
                        sources,
                        fusion,
                        classifications: BTreeSet::from([classification]),
                    },
                );
            }
            Some(spec) => {
                let conflict = |field: &str| RegistryError::DuplicateConflict {
                    id,
                    field: field.to_string(),
                };
                if spec.description != row.description {
                    return Err(conflict("description"));
                }
                if spec.sources != sources {
                    return Err(conflict("ravioli"));
                }
                if spec.fusion != fusion {
                    return Err(conflict("source"));
                }
                match spec.causes.iter().find(|c| c.text == cause.text) {
                    Some(existing) => {
                        // A cause row without link columns inherits the links of
                        // its sibling rows; two different links are a conflict.
                        let merged = merge_cause(existing, &cause)
                            .ok_or_else(|| conflict(&format!("links of cause `{}`", cause.text)))?;
                        let slot = spec
                            .causes
                            .iter_mut()
                            .find(|c| c.text == cause.text)
                            .expect("cause present");
                        *slot = merged;
                    }
                    None => spec.causes.push(cause),
                }
                spec.classifications.insert(classification);
            }
        }
    }

    let mut specs: Vec<CornerCaseSpec> = grouped.into_values().collect();
    for spec in &mut specs {
        spec.causes.sort_by(|a, b| a.text.cmp(&b.text));
    }
    Ok(specs)
}

fn merge_cause(a: &Cause, b: &Cause) -> Option<Cause> {
    fn pick<T: PartialEq + Clone>(x: &Option<T>, y: &Option<T>) -> Option<Option<T>> {
        match (x, y) {
            (Some(l), Some(r)) if l != r => None,
            (Some(v), _) | (None, Some(v)) => Some(Some(v.clone())),
            (None, None) => Some(None),
        }
    }
    Some(Cause {
        text: a.text.clone(),
        scene_ref: pick(&a.scene_ref, &b.scene_ref)?,
        range_override: pick(&a.range_override, &b.range_override)?,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub corner_case_id: u32,
    pub cause: String,
    pub message: String,
}

/// Reports causes that have no scene description and therefore cannot be
/// compiled into a search metric.
pub fn validate_registry(specs: &[CornerCaseSpec]) -> Vec<Diagnostic> {
    specs
        .iter()
        .flat_map(|spec| {
            spec.causes
                .iter()
                .filter(|cause| cause.scene_ref.is_none())
                .map(move |cause| Diagnostic {
                    corner_case_id: spec.id,
                    cause: cause.text.clone(),
                    message: format!(
                        "corner case {} cause `{}` has no scene_ref; it will be reported but not searched",
                        spec.id, cause.text
                    ),
                })
        })
        .collect()
}
