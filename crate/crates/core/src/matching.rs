//! Class-wise optimal assignment of detections to ground-truth annotations
//! on the xy plane, TP/FP/FN classification and result enrichment.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Annotation, DatasetIndex};

pub const DETECTIONS_VERSION: &str = "1";
pub const ENRICHED_VERSION: &str = "1";
pub const DEFAULT_THRESHOLD_M: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MatchingError {
    #[error("cost matrix row {row} has {found} columns, expected {expected}")]
    Ragged {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("cost at ({row}, {col}) is not a finite non-negative number: {value}")]
    NonFinite { row: usize, col: usize, value: f64 },
    #[error("matching threshold must be a positive finite distance, got {0}")]
    InvalidThreshold(f64),
    #[error("detection `{detection}` references unknown sample `{sample}`")]
    UnknownSample { detection: String, sample: String },
    #[error("duplicate detection id `{0}`")]
    DuplicateId(String),
    #[error("detection `{0}`: score must be in [0, 1] and center finite")]
    InvalidDetection(String),
    #[error("malformed {kind} document: {message}")]
    Malformed { kind: &'static str, message: String },
}

/// Dual potentials and row assignment for a square cost matrix
/// (shortest augmenting path form of the Hungarian method).
struct Hungarian {
    row_potential: Vec<f64>,
    col_potential: Vec<f64>,
    row_of_col: Vec<usize>,
}

fn hungarian_square(a: &[Vec<f64>]) -> Hungarian {
    let n = a.len();
    // 1-based; index 0 is the virtual source column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = a[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    Hungarian {
        row_potential: u[1..].to_vec(),
        col_potential: v[1..].to_vec(),
        row_of_col: p[1..].iter().map(|r| r - 1).collect(),
    }
}

/// Tries to move `row` onto `col` inside the tight subgraph by re-routing
/// the displaced row along an alternating path. Leaves the matching
/// untouched when that is impossible.
fn reroute(
    row: usize,
    col: usize,
    tight: &[Vec<bool>],
    fixed: &[bool],
    col_of_row: &mut [usize],
    row_of_col: &mut [usize],
) -> bool {
    #[allow(clippy::too_many_arguments)]
    fn augment(
        r: usize,
        banned: usize,
        tight: &[Vec<bool>],
        fixed: &[bool],
        visited: &mut [bool],
        col_of_row: &mut [usize],
        row_of_col: &mut [usize],
        free_col: usize,
    ) -> bool {
        for c in 0..tight[r].len() {
            if !tight[r][c] || visited[c] {
                continue;
            }
            visited[c] = true;
            let owner = row_of_col[c];
            let reachable = if c == free_col {
                true
            } else if owner == banned || fixed[owner] {
                false
            } else {
                augment(
                    owner, banned, tight, fixed, visited, col_of_row, row_of_col, free_col,
                )
            };
            if reachable {
                col_of_row[r] = c;
                row_of_col[c] = r;
                return true;
            }
        }
        false
    }

    let displaced = row_of_col[col];
    if fixed[displaced] {
        return false;
    }
    let freed = col_of_row[row];
    let backup = (col_of_row.to_vec(), row_of_col.to_vec());
    col_of_row[row] = col;
    row_of_col[col] = row;
    let mut visited = vec![false; tight.len()];
    visited[col] = true;
    if augment(
        displaced,
        row,
        tight,
        fixed,
        &mut visited,
        col_of_row,
        row_of_col,
        freed,
    ) {
        true
    } else {
        col_of_row.copy_from_slice(&backup.0);
        row_of_col.copy_from_slice(&backup.1);
        false
    }
}

/// Minimum-cost maximum matching of an `n x m` cost matrix.
///
/// Returns `min(n, m)` (row, col) pairs sorted by row. Rectangular inputs
/// are padded with a cost strictly larger than every entry. Among optimal
/// assignments the one whose sorted pair list is lexicographically smallest
/// is returned.
pub fn solve_assignment(cost: &[Vec<f64>]) -> Result<Vec<(usize, usize)>, MatchingError> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    let mut max_entry: f64 = 0.0;
    for (row, line) in cost.iter().enumerate() {
        if line.len() != cols {
            return Err(MatchingError::Ragged {
                row,
                expected: cols,
                found: line.len(),
            });
        }
        for (col, &value) in line.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(MatchingError::NonFinite { row, col, value });
            }
            max_entry = max_entry.max(value);
        }
    }
    if rows == 0 || cols == 0 {
        return Ok(Vec::new());
    }

    let k = rows.max(cols);
    let pad = max_entry + 1.0;
    let square: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| {
                    if i < rows && j < cols {
                        cost[i][j]
                    } else {
                        pad
                    }
                })
                .collect()
        })
        .collect();
    let solved = hungarian_square(&square);

    let eps = 1e-9 * (1.0 + pad);
    let tight: Vec<Vec<bool>> = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| square[i][j] - solved.row_potential[i] - solved.col_potential[j] <= eps)
                .collect()
        })
        .collect();
    let mut row_of_col = solved.row_of_col;
    let mut col_of_row = vec![0; k];
    for (c, &r) in row_of_col.iter().enumerate() {
        col_of_row[r] = c;
    }

    let mut fixed = vec![false; k];
    for row in 0..rows {
        for col in 0..cols {
            if !tight[row][col] {
                continue;
            }
            if col_of_row[row] == col
                || reroute(row, col, &tight, &fixed, &mut col_of_row, &mut row_of_col)
            {
                break;
            }
        }
        fixed[row] = true;
    }

    Ok((0..rows)
        .filter(|&r| col_of_row[r] < cols)
        .map(|r| (r, col_of_row[r]))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub id: String,
    pub sample_id: String,
    pub label: String,
    pub center: [f64; 3],
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruePositive {
    pub annotation_id: String,
    pub detection_id: String,
    /// xy center distance in meters
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchOutcome {
    pub sample_id: String,
    pub tp: Vec<TruePositive>,
    pub fn_annotations: Vec<String>,
    pub fp_detections: Vec<String>,
}

fn xy_distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn check_threshold(threshold_m: f64) -> Result<(), MatchingError> {
    if threshold_m.is_finite() && threshold_m > 0.0 {
        Ok(())
    } else {
        Err(MatchingError::InvalidThreshold(threshold_m))
    }
}

/// Matches the annotations and detections of one sample.
///
/// Both sides are grouped by label and assigned optimally on xy center
/// distance; assigned pairs farther apart than `threshold_m` are dropped
/// afterwards. A pair exactly at the threshold is a true positive.
pub fn match_sample(
    sample_id: &str,
    gts: &[&Annotation],
    dets: &[&Detection],
    threshold_m: f64,
) -> Result<MatchOutcome, MatchingError> {
    check_threshold(threshold_m)?;
    if let Some(det) = dets.iter().find(|d| d.sample_id != sample_id) {
        return Err(MatchingError::UnknownSample {
            detection: det.id.clone(),
            sample: det.sample_id.clone(),
        });
    }
    let mut by_label: BTreeMap<&str, (Vec<&Annotation>, Vec<&Detection>)> = BTreeMap::new();
    for gt in gts {
        by_label.entry(&gt.label).or_default().0.push(gt);
    }
    for det in dets {
        by_label.entry(&det.label).or_default().1.push(det);
    }

    let mut outcome = MatchOutcome {
        sample_id: sample_id.to_string(),
        tp: Vec::new(),
        fn_annotations: Vec::new(),
        fp_detections: Vec::new(),
    };
    for (_, (mut g, mut d)) in by_label {
        g.sort_by(|a, b| a.id.cmp(&b.id));
        d.sort_by(|a, b| a.id.cmp(&b.id));
        let cost: Vec<Vec<f64>> = g
            .iter()
            .map(|gt| {
                d.iter()
                    .map(|det| xy_distance(&gt.center, &det.center))
                    .collect()
            })
            .collect();
        let mut gt_used = vec![false; g.len()];
        let mut det_used = vec![false; d.len()];
        for (r, c) in solve_assignment(&cost)? {
            if cost[r][c] <= threshold_m {
                gt_used[r] = true;
                det_used[c] = true;
                outcome.tp.push(TruePositive {
                    annotation_id: g[r].id.clone(),
                    detection_id: d[c].id.clone(),
                    distance: cost[r][c],
                });
            }
        }
        outcome.fn_annotations.extend(
            g.iter()
                .zip(&gt_used)
                .filter(|(_, u)| !**u)
                .map(|(a, _)| a.id.clone()),
        );
        outcome.fp_detections.extend(
            d.iter()
                .zip(&det_used)
                .filter(|(_, u)| !**u)
                .map(|(x, _)| x.id.clone()),
        );
    }
    outcome
        .tp
        .sort_by(|a, b| a.annotation_id.cmp(&b.annotation_id));
    outcome.fn_annotations.sort();
    outcome.fp_detections.sort();
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionsDocument {
    pub version: String,
    pub detections: Vec<Detection>,
}

impl DetectionsDocument {
    pub fn to_json(&self) -> String {
        crate::jsonio::to_canonical_json(self)
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum DetectionsInput {
    Document(DetectionsDocument),
    List(Vec<Detection>),
}

/// Reads detections (either a bare list or a versioned document) and
/// checks them against the dataset.
pub fn load_detections(
    source: &str,
    dataset: &DatasetIndex,
) -> Result<Vec<Detection>, MatchingError> {
    let input: DetectionsInput =
        serde_json::from_str(source).map_err(|e| MatchingError::Malformed {
            kind: "detections",
            message: e.to_string(),
        })?;
    let detections = match input {
        DetectionsInput::List(list) => list,
        DetectionsInput::Document(doc) => {
            if doc.version != DETECTIONS_VERSION {
                return Err(MatchingError::Malformed {
                    kind: "detections",
                    message: format!("unsupported version `{}`", doc.version),
                });
            }
            doc.detections
        }
    };
    validate_detections(&detections, dataset)?;
    Ok(detections)
}

pub fn validate_detections(
    detections: &[Detection],
    dataset: &DatasetIndex,
) -> Result<(), MatchingError> {
    let mut ids = BTreeSet::new();
    for det in detections {
        if !ids.insert(det.id.as_str()) {
            return Err(MatchingError::DuplicateId(det.id.clone()));
        }
        if dataset.sample(&det.sample_id).is_none() {
            return Err(MatchingError::UnknownSample {
                detection: det.id.clone(),
                sample: det.sample_id.clone(),
            });
        }
        let valid = (0.0..=1.0).contains(&det.score) && det.center.iter().all(|c| c.is_finite());
        if !valid {
            return Err(MatchingError::InvalidDetection(det.id.clone()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroundTruthFlag {
    TP,
    FN,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DetectionFlag {
    TP,
    FP,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedDetection {
    pub detection_id: String,
    pub score: f64,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrichedAnnotation {
    #[serde(flatten)]
    pub annotation: Annotation,
    pub scene_id: String,
    pub timestamp: i64,
    pub ego_speed: f64,
    pub ego_heading: f64,
    pub outcome: GroundTruthFlag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched: Option<MatchedDetection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrichedDetection {
    #[serde(flatten)]
    pub detection: Detection,
    pub scene_id: String,
    pub outcome: DetectionFlag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched_annotation: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OutcomeTotals {
    pub annotations: usize,
    pub detections: usize,
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub fp: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Enrichment {
    pub version: String,
    pub threshold_m: f64,
    pub totals: OutcomeTotals,
    pub samples: Vec<MatchOutcome>,
    pub annotations: Vec<EnrichedAnnotation>,
    pub detections: Vec<EnrichedDetection>,
}

impl Enrichment {
    pub fn false_negatives(&self) -> BTreeSet<&str> {
        self.samples
            .iter()
            .flat_map(|s| s.fn_annotations.iter().map(String::as_str))
            .collect()
    }
}

/// Matches every sample and flags every annotation and detection.
/// Samples are processed in parallel on the current rayon pool; output is
/// ordered by sample id, then annotation/detection id.
pub fn enrich(
    dataset: &DatasetIndex,
    detections: &[Detection],
    threshold_m: f64,
) -> Result<Enrichment, MatchingError> {
    check_threshold(threshold_m)?;
    validate_detections(detections, dataset)?;
    let mut by_sample: HashMap<&str, Vec<&Detection>> = HashMap::new();
    for det in detections {
        by_sample
            .entry(det.sample_id.as_str())
            .or_default()
            .push(det);
    }
    let outcomes: Vec<MatchOutcome> = dataset
        .samples()
        .par_iter()
        .map(|sample| {
            let gts: Vec<&Annotation> = dataset.annotations_of(&sample.id).collect();
            let dets = by_sample
                .get(sample.id.as_str())
                .map_or(&[][..], Vec::as_slice);
            match_sample(&sample.id, &gts, dets, threshold_m)
        })
        .collect::<Result<_, _>>()?;

    let det_by_id: HashMap<&str, &Detection> =
        detections.iter().map(|d| (d.id.as_str(), d)).collect();
    let mut gt_match: HashMap<&str, &TruePositive> = HashMap::new();
    let mut det_match: HashMap<&str, &TruePositive> = HashMap::new();
    for tp in outcomes.iter().flat_map(|o| &o.tp) {
        gt_match.insert(&tp.annotation_id, tp);
        det_match.insert(&tp.detection_id, tp);
    }

    let annotations: Vec<EnrichedAnnotation> = dataset
        .annotations()
        .iter()
        .map(|ann| {
            let sample = dataset.sample(&ann.sample_id).expect("validated dataset");
            let matched = gt_match.get(ann.id.as_str()).map(|tp| MatchedDetection {
                detection_id: tp.detection_id.clone(),
                score: det_by_id[tp.detection_id.as_str()].score,
                distance: tp.distance,
            });
            EnrichedAnnotation {
                annotation: ann.clone(),
                scene_id: sample.scene_id.clone(),
                timestamp: sample.timestamp,
                ego_speed: sample.ego.speed,
                ego_heading: sample.ego.heading,
                outcome: if matched.is_some() {
                    GroundTruthFlag::TP
                } else {
                    GroundTruthFlag::FN
                },
                matched,
            }
        })
        .collect();

    let mut sorted_dets: Vec<&Detection> = detections.iter().collect();
    sorted_dets.sort_by(|a, b| a.id.cmp(&b.id));
    let detections: Vec<EnrichedDetection> = sorted_dets
        .into_iter()
        .map(|det| {
            let sample = dataset
                .sample(&det.sample_id)
                .expect("validated detections");
            let matched = det_match.get(det.id.as_str());
            EnrichedDetection {
                detection: det.clone(),
                scene_id: sample.scene_id.clone(),
                outcome: if matched.is_some() {
                    DetectionFlag::TP
                } else {
                    DetectionFlag::FP
                },
                matched_annotation: matched.map(|tp| tp.annotation_id.clone()),
            }
        })
        .collect();

    let totals = OutcomeTotals {
        annotations: annotations.len(),
        detections: detections.len(),
        tp: outcomes.iter().map(|o| o.tp.len()).sum(),
        fn_: outcomes.iter().map(|o| o.fn_annotations.len()).sum(),
        fp: outcomes.iter().map(|o| o.fp_detections.len()).sum(),
    };
    debug_assert_eq!(totals.annotations, totals.tp + totals.fn_);
    debug_assert_eq!(totals.detections, totals.tp + totals.fp);
    log::info!(
        "matched {} samples: tp={} fn={} fp={}",
        outcomes.len(),
        totals.tp,
        totals.fn_,
        totals.fp
    );
    Ok(Enrichment {
        version: ENRICHED_VERSION.to_string(),
        threshold_m,
        totals,
        samples: outcomes,
        annotations,
        detections,
    })
}

pub fn write_enriched(enrichment: &Enrichment) -> String {
    crate::jsonio::to_canonical_json(enrichment)
}

pub fn read_enriched(source: &str) -> Result<Enrichment, MatchingError> {
    let e: Enrichment = serde_json::from_str(source).map_err(|e| MatchingError::Malformed {
        kind: "enriched",
        message: e.to_string(),
    })?;
    if e.version != ENRICHED_VERSION {
        return Err(MatchingError::Malformed {
            kind: "enriched",
            message: format!("unsupported version `{}`", e.version),
        });
    }
    Ok(e)
}
