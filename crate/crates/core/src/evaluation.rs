//! A-posteriori corner cases (a-priori hits the detector missed) and the
//! per-corner-case, per-layer and per-level statistics built from them.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::extraction::{ExtractionResult, Totals};
use crate::matching::{Enrichment, GroundTruthFlag, OutcomeTotals};
use crate::registry::CornerCaseSpec;
use crate::taxonomy::{Classification, Layer};

pub const APOSTERIORI_VERSION: &str = "1";
pub const REPORT_VERSION: &str = "1";
pub const CSV_HEADER: [&str; 5] = ["scope", "key", "a_priori", "a_posteriori", "ratio"];

#[derive(Debug, thiserror::Error)]
pub enum EvaluationError {
    #[error("{kind} `{id}` from the hit sets is absent from the enriched results")]
    IdMismatch { kind: &'static str, id: String },
    #[error("unsupported report format `{0}` (expected json or csv)")]
    UnsupportedFormat(String),
    #[error("malformed {kind} document: {message}")]
    Malformed { kind: &'static str, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct APosterioriEntry {
    pub corner_case_id: u32,
    pub cause: String,
    pub a_priori_annotations: BTreeSet<String>,
    /// a-priori annotations flagged FN
    pub a_posteriori_annotations: BTreeSet<String>,
    pub a_priori_scenes: BTreeSet<String>,
    /// scenes with at least one FN among their a-priori annotations
    pub a_posteriori_scenes: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct APosterioriResult {
    pub version: String,
    pub totals: Totals,
    pub detector: OutcomeTotals,
    pub entries: Vec<APosterioriEntry>,
}

impl APosterioriResult {
    pub fn entry(&self, corner_case_id: u32, cause: &str) -> Option<&APosterioriEntry> {
        self.entries
            .iter()
            .find(|e| e.corner_case_id == corner_case_id && e.cause == cause)
    }
}

/// Intersects every hit set with the FN annotations of the enrichment.
pub fn derive_a_posteriori(
    hits: &ExtractionResult,
    enrichment: &Enrichment,
) -> Result<APosterioriResult, EvaluationError> {
    let scene_of: HashMap<&str, &str> = enrichment
        .annotations
        .iter()
        .map(|a| (a.annotation.id.as_str(), a.scene_id.as_str()))
        .collect();
    let false_negatives: BTreeSet<&str> = enrichment
        .annotations
        .iter()
        .filter(|a| a.outcome == GroundTruthFlag::FN)
        .map(|a| a.annotation.id.as_str())
        .collect();
    let samples: BTreeSet<&str> = enrichment
        .samples
        .iter()
        .map(|s| s.sample_id.as_str())
        .collect();

    let mut entries = Vec::with_capacity(hits.hits.len());
    for hit in &hits.hits {
        if let Some(id) = hit
            .annotation_ids
            .iter()
            .find(|id| !scene_of.contains_key(id.as_str()))
        {
            return Err(EvaluationError::IdMismatch {
                kind: "annotation",
                id: id.clone(),
            });
        }
        if let Some(id) = hit
            .sample_ids
            .iter()
            .find(|id| !samples.contains(id.as_str()))
        {
            return Err(EvaluationError::IdMismatch {
                kind: "sample",
                id: id.clone(),
            });
        }
        let a_posteriori_annotations: BTreeSet<String> = hit
            .annotation_ids
            .iter()
            .filter(|id| false_negatives.contains(id.as_str()))
            .cloned()
            .collect();
        let a_posteriori_scenes = a_posteriori_annotations
            .iter()
            .map(|id| scene_of[id.as_str()].to_string())
            .collect();
        entries.push(APosterioriEntry {
            corner_case_id: hit.corner_case_id,
            cause: hit.cause.clone(),
            a_priori_annotations: hit.annotation_ids.clone(),
            a_posteriori_annotations,
            a_priori_scenes: hit.scene_ids.clone(),
            a_posteriori_scenes,
        });
    }
    entries.sort_by(|a, b| (a.corner_case_id, &a.cause).cmp(&(b.corner_case_id, &b.cause)));
    Ok(APosterioriResult {
        version: APOSTERIORI_VERSION.to_string(),
        totals: hits.totals,
        detector: enrichment.totals,
        entries,
    })
}

pub fn write_a_posteriori(result: &APosterioriResult) -> String {
    crate::jsonio::to_canonical_json(result)
}

pub fn read_a_posteriori(source: &str) -> Result<APosterioriResult, EvaluationError> {
    let result: APosterioriResult =
        serde_json::from_str(source).map_err(|e| EvaluationError::Malformed {
            kind: "a-posteriori",
            message: e.to_string(),
        })?;
    if result.version != APOSTERIORI_VERSION {
        return Err(EvaluationError::Malformed {
            kind: "a-posteriori",
            message: format!("unsupported version `{}`", result.version),
        });
    }
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    CornerCase,
    Layer,
    Level,
}

impl Scope {
    pub fn as_str(self) -> &'static str {
        match self {
            Scope::CornerCase => "corner_case",
            Scope::Layer => "layer",
            Scope::Level => "level",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scope: Scope,
    pub key: String,
    pub label: String,
    /// Annotation count; layer and level rows count an annotation once per
    /// (corner case, classification) pair.
    pub a_priori: usize,
    pub a_posteriori: usize,
    /// Absent when `a_priori` is zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
    /// Same counts deduplicated by annotation id within the row.
    pub unique_a_priori: usize,
    pub unique_a_posteriori: usize,
    pub a_priori_scenes: usize,
    pub a_posteriori_scenes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub dataset: Totals,
    pub detector: OutcomeTotals,
    pub corner_cases: usize,
    pub corner_cases_with_data: usize,
    /// Mean of the defined corner-case ratios.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CornerCaseReport {
    pub version: String,
    pub corner_cases: Vec<ReportRow>,
    pub layers: Vec<ReportRow>,
    pub levels: Vec<ReportRow>,
    pub summary: ReportSummary,
}

impl CornerCaseReport {
    pub fn rows(&self) -> impl Iterator<Item = &ReportRow> {
        self.corner_cases
            .iter()
            .chain(&self.layers)
            .chain(&self.levels)
    }

    pub fn row(&self, scope: Scope, key: &str) -> Option<&ReportRow> {
        self.rows().find(|r| r.scope == scope && r.key == key)
    }
}

fn ratio(a_priori: usize, a_posteriori: usize) -> Option<f64> {
    (a_priori > 0).then(|| a_posteriori as f64 / a_priori as f64)
}

#[derive(Default)]
struct Accumulator<'a> {
    a_priori: usize,
    a_posteriori: usize,
    unique_a_priori: BTreeSet<&'a str>,
    unique_a_posteriori: BTreeSet<&'a str>,
    scenes: BTreeSet<&'a str>,
    fn_scenes: BTreeSet<&'a str>,
}

impl<'a> Accumulator<'a> {
    fn add(&mut self, sets: &CaseSets<'a>) {
        self.a_priori += sets.a_priori.len();
        self.a_posteriori += sets.a_posteriori.len();
        self.unique_a_priori.extend(&sets.a_priori);
        self.unique_a_posteriori.extend(&sets.a_posteriori);
        self.scenes.extend(&sets.scenes);
        self.fn_scenes.extend(&sets.fn_scenes);
    }

    fn row(&self, scope: Scope, key: String, label: String) -> ReportRow {
        ReportRow {
            scope,
            key,
            label,
            a_priori: self.a_priori,
            a_posteriori: self.a_posteriori,
            ratio: ratio(self.a_priori, self.a_posteriori),
            unique_a_priori: self.unique_a_priori.len(),
            unique_a_posteriori: self.unique_a_posteriori.len(),
            a_priori_scenes: self.scenes.len(),
            a_posteriori_scenes: self.fn_scenes.len(),
        }
    }
}

/// Union of all cause entries of one corner case.
#[derive(Default)]
struct CaseSets<'a> {
    a_priori: BTreeSet<&'a str>,
    a_posteriori: BTreeSet<&'a str>,
    scenes: BTreeSet<&'a str>,
    fn_scenes: BTreeSet<&'a str>,
}

/// Builds report rows for every registry corner case (including those
/// without any hit) and for every layer and classification in use.
pub fn aggregate(result: &APosterioriResult, specs: &[CornerCaseSpec]) -> CornerCaseReport {
    let mut per_case: BTreeMap<u32, CaseSets> = BTreeMap::new();
    for spec in specs {
        per_case.entry(spec.id).or_default();
    }
    for entry in &result.entries {
        let Some(sets) = per_case.get_mut(&entry.corner_case_id) else {
            log::warn!(
                "a-posteriori entry for unknown corner case {} ignored",
                entry.corner_case_id
            );
            continue;
        };
        sets.a_priori
            .extend(entry.a_priori_annotations.iter().map(String::as_str));
        sets.a_posteriori
            .extend(entry.a_posteriori_annotations.iter().map(String::as_str));
        sets.scenes
            .extend(entry.a_priori_scenes.iter().map(String::as_str));
        sets.fn_scenes
            .extend(entry.a_posteriori_scenes.iter().map(String::as_str));
    }

    let mut sorted: Vec<&CornerCaseSpec> = specs.iter().collect();
    sorted.sort_by_key(|s| s.id);
    sorted.dedup_by_key(|s| s.id);

    let mut corner_cases = Vec::new();
    let mut layers: BTreeMap<Layer, Accumulator> = BTreeMap::new();
    let mut levels: BTreeMap<Classification, Accumulator> = BTreeMap::new();
    for spec in &sorted {
        let sets = &per_case[&spec.id];
        let mut single = Accumulator::default();
        single.add(sets);
        corner_cases.push(single.row(
            Scope::CornerCase,
            spec.id.to_string(),
            spec.description.clone(),
        ));
        for class in &spec.classifications {
            layers.entry(class.layer()).or_default().add(sets);
            levels.entry(*class).or_default().add(sets);
        }
    }

    let ratios: Vec<f64> = corner_cases.iter().filter_map(|r| r.ratio).collect();
    let summary = ReportSummary {
        dataset: result.totals,
        detector: result.detector,
        corner_cases: corner_cases.len(),
        corner_cases_with_data: ratios.len(),
        mean_ratio: (!ratios.is_empty()).then(|| ratios.iter().sum::<f64>() / ratios.len() as f64),
    };
    CornerCaseReport {
        version: REPORT_VERSION.to_string(),
        corner_cases,
        layers: layers
            .iter()
            .map(|(layer, acc)| {
                acc.row(
                    Scope::Layer,
                    layer.as_str().to_string(),
                    layer.as_str().to_string(),
                )
            })
            .collect(),
        levels: levels
            .iter()
            .map(|(class, acc)| acc.row(Scope::Level, class.to_string(), class.level_text()))
            .collect(),
        summary,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = EvaluationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            _ => Err(EvaluationError::UnsupportedFormat(s.to_string())),
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
        })
    }
}

pub fn write_report(report: &CornerCaseReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => crate::jsonio::to_canonical_json(report),
        ReportFormat::Csv => {
            let mut writer = csv::Writer::from_writer(Vec::new());
            writer.write_record(CSV_HEADER).expect("in-memory write");
            for row in report.rows() {
                writer
                    .write_record([
                        row.scope.as_str().to_string(),
                        row.key.clone(),
                        row.a_priori.to_string(),
                        row.a_posteriori.to_string(),
                        row.ratio.map(|r| r.to_string()).unwrap_or_default(),
                    ])
                    .expect("in-memory write");
            }
            String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("utf-8 fields")
        }
    }
}

pub fn read_report(source: &str) -> Result<CornerCaseReport, EvaluationError> {
    let report: CornerCaseReport =
        serde_json::from_str(source).map_err(|e| EvaluationError::Malformed {
            kind: "report",
            message: e.to_string(),
        })?;
    if report.version != REPORT_VERSION {
        return Err(EvaluationError::Malformed {
            kind: "report",
            message: format!("unsupported version `{}`", report.version),
        });
    }
    Ok(report)
}
