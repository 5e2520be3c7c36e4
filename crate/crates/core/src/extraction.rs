//! Evaluates compiled metrics over a dataset, producing the a-priori
//! corner-case hit sets at scene, sample and annotation granularity.

use std::collections::BTreeSet;
use std::f64::consts::{PI, TAU};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    resolve_labels, Annotation, DatasetIndex, LabelMapping, MappingError, Sample, Scene,
};
use crate::metrics::{CompiledMetric, HitMode, MetricFilter, MetricPredicate, MetricsFile};
use crate::textsearch::{keyword_match_with, tokenize};

pub const HITS_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExtractionError {
    #[error("{kind} `{id}` has no attribute `{attribute}`")]
    MissingAttribute {
        kind: &'static str,
        id: String,
        attribute: String,
    },
    #[error("annotation `{id}` attribute `{attribute}` is not numeric: `{value}`")]
    NonNumericAttribute {
        id: String,
        attribute: String,
        value: String,
    },
    #[error(transparent)]
    Mapping(#[from] MappingError),
    #[error("hit set for corner case {0} violates upward closure")]
    ClosureViolation(u32),
    #[error("malformed hits document: {0}")]
    Malformed(String),
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(angle: f64) -> f64 {
    let r = angle.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PredicateValue {
    Bool(bool),
    /// Annotations selected by a class-presence predicate, and whether
    /// enough of them were found.
    Matches {
        ids: BTreeSet<String>,
        satisfied: bool,
    },
}

impl PredicateValue {
    pub fn satisfied(&self) -> bool {
        match self {
            PredicateValue::Bool(b) => *b,
            PredicateValue::Matches { satisfied, .. } => *satisfied,
        }
    }
}

fn ego_attribute(sample: &Sample, name: &str) -> Result<f64, ExtractionError> {
    match name {
        "speed" => Ok(sample.ego.speed),
        "heading" => Ok(sample.ego.heading),
        _ => Err(ExtractionError::MissingAttribute {
            kind: "sample",
            id: sample.id.clone(),
            attribute: name.to_string(),
        }),
    }
}

fn annotation_attribute(ann: &Annotation, name: &str) -> Result<f64, ExtractionError> {
    let builtin = match name {
        "x" => Some(ann.center[0]),
        "y" => Some(ann.center[1]),
        "z" => Some(ann.center[2]),
        "width" => Some(ann.size[0]),
        "length" => Some(ann.size[1]),
        "height" => Some(ann.size[2]),
        "heading" => Some(ann.heading),
        _ => None,
    };
    if let Some(v) = builtin {
        return Ok(v);
    }
    let raw = ann
        .attributes
        .get(name)
        .ok_or_else(|| ExtractionError::MissingAttribute {
            kind: "annotation",
            id: ann.id.clone(),
            attribute: name.to_string(),
        })?;
    raw.trim()
        .parse()
        .map_err(|_| ExtractionError::NonNumericAttribute {
            id: ann.id.clone(),
            attribute: name.to_string(),
            value: raw.clone(),
        })
}

fn passes_filter(
    filter: &MetricFilter,
    ann: &Annotation,
    sample: &Sample,
    mapping: &LabelMapping,
) -> Result<bool, ExtractionError> {
    match filter {
        MetricFilter::AttributeRange {
            attribute,
            min,
            max,
            ..
        } => {
            let v = annotation_attribute(ann, mapping.attribute(attribute))?;
            Ok(*min <= v && v <= *max)
        }
        MetricFilter::RelativeHeading {
            min_abs_delta,
            max_abs_delta,
        } => {
            let delta = wrap_angle(ann.heading - sample.ego.heading).abs();
            Ok(*min_abs_delta <= delta && delta <= *max_abs_delta)
        }
    }
}

/// Evaluates one predicate on one sample of `scene`.
pub fn evaluate_predicate(
    predicate: &MetricPredicate,
    sample: &Sample,
    scene: &Scene,
    dataset: &DatasetIndex,
    mapping: &LabelMapping,
) -> Result<PredicateValue, ExtractionError> {
    match predicate {
        MetricPredicate::SceneTextKeyword { .. } => Ok(PredicateValue::Bool(scene_text_holds(
            predicate,
            &tokenize(&scene.description),
        ))),
        MetricPredicate::EgoAttributeRange {
            attribute,
            min,
            max,
            ..
        } => {
            let v = ego_attribute(sample, mapping.attribute(attribute))?;
            Ok(PredicateValue::Bool(*min <= v && v <= *max))
        }
        MetricPredicate::CountWithFilter {
            class,
            filters,
            min_count,
            max_count,
        } => {
            let labels = resolve_labels(mapping, class)?;
            let mut count = 0u64;
            for ann in dataset.annotations_of(&sample.id) {
                if !labels.contains(&ann.label) {
                    continue;
                }
                let mut pass = true;
                for f in filters {
                    if !passes_filter(f, ann, sample, mapping)? {
                        pass = false;
                        break;
                    }
                }
                if pass {
                    count += 1;
                }
            }
            let within =
                count >= u64::from(*min_count) && max_count.is_none_or(|m| count <= u64::from(m));
            Ok(PredicateValue::Bool(within))
        }
        MetricPredicate::ClassPresence { class, min_count } => {
            let labels = resolve_labels(mapping, class)?;
            let ids: BTreeSet<String> = dataset
                .annotations_of(&sample.id)
                .filter(|a| labels.contains(&a.label))
                .map(|a| a.id.clone())
                .collect();
            let satisfied = ids.len() as u64 >= u64::from(*min_count);
            Ok(PredicateValue::Matches { ids, satisfied })
        }
    }
}

fn scene_text_holds(predicate: &MetricPredicate, tokens: &[String]) -> bool {
    match predicate {
        MetricPredicate::SceneTextKeyword {
            keywords,
            max_edit_distance,
            negation,
        } => keywords
            .iter()
            .any(|k| keyword_match_with(tokens, k, *max_edit_distance as usize, negation)),
        _ => unreachable!("only scene-level predicates"),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HitSet {
    pub corner_case_id: u32,
    pub cause: String,
    pub scene_ids: BTreeSet<String>,
    pub sample_ids: BTreeSet<String>,
    pub annotation_ids: BTreeSet<String>,
}

impl HitSet {
    pub fn is_empty(&self) -> bool {
        self.scene_ids.is_empty() && self.sample_ids.is_empty() && self.annotation_ids.is_empty()
    }

    /// Every hit annotation's sample and every hit sample's scene are hits.
    pub fn is_upward_closed(&self, dataset: &DatasetIndex) -> bool {
        self.annotation_ids.iter().all(|a| {
            dataset
                .annotation(a)
                .is_some_and(|ann| self.sample_ids.contains(&ann.sample_id))
        }) && self.sample_ids.iter().all(|s| {
            dataset
                .sample(s)
                .is_some_and(|sample| self.scene_ids.contains(&sample.scene_id))
        })
    }
}

struct SceneHits {
    samples: Vec<String>,
    annotations: Vec<String>,
}

fn evaluate_scene(
    metric: &CompiledMetric,
    scene: &Scene,
    dataset: &DatasetIndex,
    mapping: &LabelMapping,
) -> Result<SceneHits, ExtractionError> {
    let mut hits = SceneHits {
        samples: Vec::new(),
        annotations: Vec::new(),
    };
    let tokens = tokenize(&scene.description);
    let scene_ok = metric
        .predicates
        .iter()
        .filter(|p| p.is_scene_level())
        .all(|p| scene_text_holds(p, &tokens));
    if !scene_ok {
        return Ok(hits);
    }
    'samples: for sample in dataset.samples_of(&scene.id) {
        let mut targeted = BTreeSet::new();
        for predicate in metric.predicates.iter().filter(|p| !p.is_scene_level()) {
            let value = evaluate_predicate(predicate, sample, scene, dataset, mapping)?;
            if !value.satisfied() {
                continue 'samples;
            }
            if let PredicateValue::Matches { ids, .. } = value {
                targeted.extend(ids);
            }
        }
        hits.samples.push(sample.id.clone());
        match metric.hit_mode {
            HitMode::SceneWide => hits
                .annotations
                .extend(dataset.annotations_of(&sample.id).map(|a| a.id.clone())),
            HitMode::AnnotationTargeted => hits.annotations.extend(targeted),
        }
    }
    Ok(hits)
}

/// All data of `dataset` matched by one metric.
///
/// A sample qualifies when every predicate holds for it; scene-level
/// predicates are evaluated once per scene.
pub fn evaluate_metric(
    metric: &CompiledMetric,
    dataset: &DatasetIndex,
    mapping: &LabelMapping,
) -> Result<HitSet, ExtractionError> {
    let per_scene: Vec<(String, SceneHits)> = dataset
        .scenes()
        .par_iter()
        .map(|scene| {
            Ok((
                scene.id.clone(),
                evaluate_scene(metric, scene, dataset, mapping)?,
            ))
        })
        .collect::<Result<_, ExtractionError>>()?;
    let mut set = HitSet {
        corner_case_id: metric.corner_case_id,
        cause: metric.cause.clone(),
        scene_ids: BTreeSet::new(),
        sample_ids: BTreeSet::new(),
        annotation_ids: BTreeSet::new(),
    };
    for (scene_id, hits) in per_scene {
        if hits.samples.is_empty() {
            continue;
        }
        set.scene_ids.insert(scene_id);
        set.sample_ids.extend(hits.samples);
        set.annotation_ids.extend(hits.annotations);
    }
    if !set.is_upward_closed(dataset) {
        return Err(ExtractionError::ClosureViolation(metric.corner_case_id));
    }
    Ok(set)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Totals {
    pub scenes: usize,
    pub samples: usize,
    pub annotations: usize,
}

/// Fractions of the dataset covered by the union of all hit sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub scenes: f64,
    pub samples: f64,
    pub annotations: f64,
    pub hit_scenes: usize,
    pub hit_samples: usize,
    pub hit_annotations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub version: String,
    pub totals: Totals,
    pub coverage: Coverage,
    pub hits: Vec<HitSet>,
}

fn fraction(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        part as f64 / whole as f64
    }
}

impl ExtractionResult {
    pub fn new(hits: Vec<HitSet>, totals: Totals) -> Self {
        let union = |f: fn(&HitSet) -> &BTreeSet<String>| -> usize {
            hits.iter().flat_map(f).collect::<BTreeSet<_>>().len()
        };
        let (hit_scenes, hit_samples, hit_annotations) = (
            union(|h| &h.scene_ids),
            union(|h| &h.sample_ids),
            union(|h| &h.annotation_ids),
        );
        ExtractionResult {
            version: HITS_VERSION.to_string(),
            coverage: Coverage {
                scenes: fraction(hit_scenes, totals.scenes),
                samples: fraction(hit_samples, totals.samples),
                annotations: fraction(hit_annotations, totals.annotations),
                hit_scenes,
                hit_samples,
                hit_annotations,
            },
            totals,
            hits,
        }
    }

    pub fn hit(&self, corner_case_id: u32, cause: &str) -> Option<&HitSet> {
        self.hits
            .iter()
            .find(|h| h.corner_case_id == corner_case_id && h.cause == cause)
    }
}

/// Evaluates every metric. Metrics run in parallel on the current rayon
/// pool; the result is identical for any pool size.
pub fn extract_all(
    metrics: &MetricsFile,
    dataset: &DatasetIndex,
    mapping: &LabelMapping,
) -> Result<ExtractionResult, ExtractionError> {
    let hits = metrics
        .metrics
        .par_iter()
        .map(|m| evaluate_metric(m, dataset, mapping))
        .collect::<Result<Vec<_>, _>>()?;
    let totals = Totals {
        scenes: dataset.scenes().len(),
        samples: dataset.samples().len(),
        annotations: dataset.annotations().len(),
    };
    log::info!(
        "extracted {} metrics over {} annotations",
        hits.len(),
        totals.annotations
    );
    Ok(ExtractionResult::new(hits, totals))
}

pub fn write_hits(result: &ExtractionResult) -> String {
    crate::jsonio::to_canonical_json(result)
}

pub fn read_hits(source: &str) -> Result<ExtractionResult, ExtractionError> {
    let result: ExtractionResult =
        serde_json::from_str(source).map_err(|e| ExtractionError::Malformed(e.to_string()))?;
    if result.version != HITS_VERSION {
        return Err(ExtractionError::Malformed(format!(
            "unsupported hits version `{}`",
            result.version
        )));
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_mapping, load_dataset, MappingDocument};
    use crate::metrics::METRICS_VERSION;
    use crate::ontology::{load_ontology, NegationRule};
    use crate::taxonomy::{parse_classification, parse_sources, FusionStage};
    use std::collections::BTreeMap;
    use std::f64::consts::FRAC_PI_4;

    fn ann(id: &str, sample: &str, label: &str, heading: f64) -> String {
        format!(
            r#"{{"id":"{id}","sample_id":"{sample}","label":"{label}","center":[0,0,0],"size":[1,1,1],"heading":{heading}}}"#
        )
    }

    /// Scene `rainy` (two samples) and scene `dry` (one sample). Sample
    /// `r1` holds 10 same-heading cars, 3 oncoming cars and 2 cones.
    fn dataset() -> DatasetIndex {
        let mut anns = Vec::new();
        for i in 0..10 {
            anns.push(ann(
                &format!("a{i:02}"),
                "r1",
                "car",
                0.1 * (i as f64 - 5.0),
            ));
        }
        for i in 10..13 {
            anns.push(ann(&format!("a{i:02}"), "r1", "car", PI));
        }
        anns.push(ann("c1", "r1", "traffic_cone", 0.0));
        anns.push(ann("c2", "r1", "traffic_cone", 0.0));
        anns.push(ann("b1", "r2", "car", 0.0));
        anns.push(ann("d1", "d1", "traffic_cone", 0.0));
        let text = format!(
            r#"{{"version":"1",
            "scenes":[{{"id":"rainy","description":"Heavy rain, lots of cones","split":"val"}},
                      {{"id":"dry","description":"sunny","split":"val"}}],
            "samples":[{{"id":"r1","scene_id":"rainy","timestamp":0,"ego":{{"speed":0.15,"heading":0}}}},
                       {{"id":"r2","scene_id":"rainy","timestamp":1,"ego":{{"speed":0.1500001,"heading":0}}}},
                       {{"id":"d1","scene_id":"dry","timestamp":0,"ego":{{"speed":3,"heading":0}}}}],
            "annotations":[{}]}}"#,
            anns.join(",")
        );
        load_dataset(&text).unwrap()
    }

    fn mapping(metrics: &MetricsFile) -> LabelMapping {
        let o =
            load_ontology(r#"{"classes":[{"name":"Vehicle"},{"name":"TrafficCone"}]}"#).unwrap();
        let doc = MappingDocument {
            version: "1".into(),
            classes: BTreeMap::from([
                ("Vehicle".into(), BTreeSet::from(["car".into()])),
                (
                    "TrafficCone".into(),
                    BTreeSet::from(["traffic_cone".into()]),
                ),
            ]),
            attributes: BTreeMap::new(),
        };
        build_mapping(doc, &o, metrics).unwrap()
    }

    fn metric(id: u32, predicates: Vec<MetricPredicate>) -> CompiledMetric {
        CompiledMetric {
            corner_case_id: id,
            description: "d".into(),
            cause: format!("cause {id}"),
            cause_class: format!("Cause{id}"),
            scene: "S".into(),
            classifications: [parse_classification("Content", "Domain").unwrap()].into(),
            sources: parse_sources("V").unwrap(),
            fusion: FusionStage::Single,
            hit_mode: crate::metrics::derive_hit_mode(&predicates),
            predicates,
        }
    }

    fn rain() -> MetricPredicate {
        MetricPredicate::SceneTextKeyword {
            keywords: vec!["rain".into()],
            max_edit_distance: 1,
            negation: NegationRule::default(),
        }
    }

    fn cones() -> MetricPredicate {
        MetricPredicate::ClassPresence {
            class: "TrafficCone".into(),
            min_count: 1,
        }
    }

    fn run(m: &CompiledMetric) -> HitSet {
        let file = MetricsFile {
            version: METRICS_VERSION.into(),
            metrics: vec![m.clone()],
        };
        evaluate_metric(m, &dataset(), &mapping(&file)).unwrap()
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap_angle(0.25) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn ego_range_is_closed() {
        let ds = dataset();
        let p = MetricPredicate::EgoAttributeRange {
            attribute: "speed".into(),
            min: 0.0,
            max: 0.15,
            unit: crate::ontology::Unit::MetersPerSecond,
            range_name: None,
        };
        let m = mapping(&MetricsFile::empty());
        let scene = ds.scene("rainy").unwrap();
        let at = evaluate_predicate(&p, ds.sample("r1").unwrap(), scene, &ds, &m).unwrap();
        let above = evaluate_predicate(&p, ds.sample("r2").unwrap(), scene, &ds, &m).unwrap();
        assert_eq!(at, PredicateValue::Bool(true));
        assert_eq!(above, PredicateValue::Bool(false));
    }

    #[test]
    fn count_with_heading_filter() {
        let ds = dataset();
        let m = mapping(&MetricsFile::empty());
        let sample = ds.sample("r1").unwrap();
        let scene = ds.scene("rainy").unwrap();
        // Brute force: cars in r1 whose wrapped heading delta is within pi/4.
        let expected = ds
            .annotations()
            .iter()
            .filter(|a| a.sample_id == "r1" && a.label == "car")
            .filter(|a| wrap_angle(a.heading - sample.ego.heading).abs() <= FRAC_PI_4)
            .count();
        assert_eq!(expected, 10);
        let count = |min, max| MetricPredicate::CountWithFilter {
            class: "Vehicle".into(),
            filters: vec![MetricFilter::RelativeHeading {
                min_abs_delta: 0.0,
                max_abs_delta: FRAC_PI_4,
            }],
            min_count: min,
            max_count: max,
        };
        let eval = |p| evaluate_predicate(&p, sample, scene, &ds, &m).unwrap();
        assert_eq!(eval(count(10, None)), PredicateValue::Bool(true));
        assert_eq!(eval(count(11, None)), PredicateValue::Bool(false));
        assert_eq!(eval(count(1, Some(9))), PredicateValue::Bool(false));
    }

    #[test]
    fn class_presence_returns_ids() {
        let ds = dataset();
        let m = mapping(&MetricsFile::empty());
        let v = evaluate_predicate(
            &cones(),
            ds.sample("r1").unwrap(),
            ds.scene("rainy").unwrap(),
            &ds,
            &m,
        )
        .unwrap();
        assert_eq!(
            v,
            PredicateValue::Matches {
                ids: BTreeSet::from(["c1".to_string(), "c2".to_string()]),
                satisfied: true
            }
        );
    }

    #[test]
    fn missing_attribute() {
        let ds = dataset();
        let m = mapping(&MetricsFile::empty());
        let p = MetricPredicate::EgoAttributeRange {
            attribute: "yaw_rate".into(),
            min: 0.0,
            max: 1.0,
            unit: crate::ontology::Unit::Radians,
            range_name: None,
        };
        let err = evaluate_predicate(
            &p,
            ds.sample("r1").unwrap(),
            ds.scene("rainy").unwrap(),
            &ds,
            &m,
        );
        assert!(matches!(err, Err(ExtractionError::MissingAttribute { .. })));
    }

    #[test]
    fn rain_flags_every_annotation_of_the_scene() {
        let hits = run(&metric(5, vec![rain()]));
        assert_eq!(hits.scene_ids, BTreeSet::from(["rainy".to_string()]));
        assert_eq!(hits.sample_ids.len(), 2);
        assert_eq!(hits.annotation_ids.len(), 16);
    }

    #[test]
    fn cones_flag_only_cones() {
        let hits = run(&metric(4, vec![rain(), cones()]));
        assert_eq!(
            hits.annotation_ids,
            BTreeSet::from(["c1".to_string(), "c2".to_string()])
        );
        assert_eq!(hits.sample_ids, BTreeSet::from(["r1".to_string()]));

        let all = run(&metric(4, vec![cones()]));
        assert_eq!(all.annotation_ids.len(), 3);
        assert_eq!(all.scene_ids.len(), 2);
    }

    #[test]
    fn no_data_is_empty_not_error() {
        let m = metric(
            3,
            vec![MetricPredicate::SceneTextKeyword {
                keywords: vec!["wheelchair".into()],
                max_edit_distance: 1,
                negation: NegationRule::default(),
            }],
        );
        assert!(run(&m).is_empty());
    }

    #[test]
    fn empty_metrics_file() {
        let ds = dataset();
        let file = MetricsFile::empty();
        let result = extract_all(&file, &ds, &mapping(&file)).unwrap();
        assert!(result.hits.is_empty());
        assert_eq!(result.coverage.annotations, 0.0);
        assert_eq!(result.totals.annotations, 17);
        assert_eq!(read_hits(&write_hits(&result)).unwrap(), result);
    }

    #[test]
    fn coverage_counts_union() {
        let ds = dataset();
        let file = MetricsFile {
            version: METRICS_VERSION.into(),
            metrics: vec![metric(4, vec![cones()]), metric(5, vec![rain()])],
        };
        let result = extract_all(&file, &ds, &mapping(&file)).unwrap();
        assert_eq!(result.coverage.hit_annotations, 17);
        assert_eq!(result.coverage.annotations, 1.0);
        assert_eq!(result.coverage.hit_scenes, 2);
    }
}
