//! Seeded generator for small driving datasets with planted corner cases
//! and matching detector outputs.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    Annotation, DatasetDocument, EgoState, Sample, Scene, Split, DATASET_VERSION,
};
use crate::extraction::wrap_angle;
use crate::matching::{Detection, DetectionsDocument, DETECTIONS_VERSION};

pub const PLANTLOG_VERSION: &str = "1";

/// Sample spacing in microseconds (2 Hz).
const SAMPLE_PERIOD_US: i64 = 500_000;
const SCENE_PERIOD_US: i64 = 60_000_000;
const AREA_HALF_WIDTH_M: f64 = 60.0;
const MIN_SPACING_M: f64 = 3.0;
const MAX_PLACEMENT_TRIES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("planted scenes ({planted}) exceed the number of scenes ({n_scenes})")]
    InfeasibleSpec { planted: usize, n_scenes: usize },
    #[error("invalid synth spec: {0}")]
    InvalidSpec(String),
    #[error("synth spec JSON: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantKind {
    TrafficJam,
    RainText,
    RainMisspelled,
    NegatedRain,
    NightOncoming,
    TrafficCones,
}

impl PlantKind {
    pub const ALL: [PlantKind; 6] = [
        PlantKind::TrafficJam,
        PlantKind::RainText,
        PlantKind::RainMisspelled,
        PlantKind::NegatedRain,
        PlantKind::NightOncoming,
        PlantKind::TrafficCones,
    ];
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedCounts {
    #[serde(default)]
    pub traffic_jam: usize,
    #[serde(default)]
    pub rain_text: usize,
    #[serde(default)]
    pub rain_misspelled: usize,
    #[serde(default)]
    pub negated_rain: usize,
    #[serde(default)]
    pub night_oncoming: usize,
    #[serde(default)]
    pub traffic_cones: usize,
}

impl PlantedCounts {
    pub fn get(&self, kind: PlantKind) -> usize {
        match kind {
            PlantKind::TrafficJam => self.traffic_jam,
            PlantKind::RainText => self.rain_text,
            PlantKind::RainMisspelled => self.rain_misspelled,
            PlantKind::NegatedRain => self.negated_rain,
            PlantKind::NightOncoming => self.night_oncoming,
            PlantKind::TrafficCones => self.traffic_cones,
        }
    }

    pub fn total(&self) -> usize {
        PlantKind::ALL.iter().map(|k| self.get(*k)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    Perfect,
    Null,
    Degraded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSpec {
    pub kind: DetectorKind,
    #[serde(default)]
    pub drop_fraction: f64,
    #[serde(default)]
    pub jitter_max_m: f64,
}

fn default_samples_per_scene() -> usize {
    4
}

fn default_density() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_scenes: usize,
    #[serde(default = "default_samples_per_scene")]
    pub samples_per_scene: usize,
    #[serde(default)]
    pub planted: PlantedCounts,
    /// Mean number of background annotations per sample.
    #[serde(default = "default_density")]
    pub background_density: usize,
    pub detector: DetectorSpec,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let planted = self.planted.total();
        if planted > self.n_scenes {
            return Err(SynthError::InfeasibleSpec {
                planted,
                n_scenes: self.n_scenes,
            });
        }
        if self.samples_per_scene == 0 {
            return Err(SynthError::InvalidSpec(
                "samples_per_scene must be at least 1".into(),
            ));
        }
        if self.samples_per_scene > 99 {
            return Err(SynthError::InvalidSpec(
                "samples_per_scene must be at most 99".into(),
            ));
        }
        if self.background_density > 40 {
            return Err(SynthError::InvalidSpec(
                "background_density must be at most 40".into(),
            ));
        }
        let d = &self.detector;
        if !(0.0..=1.0).contains(&d.drop_fraction) {
            return Err(SynthError::InvalidSpec(
                "drop_fraction must be in [0, 1]".into(),
            ));
        }
        if !d.jitter_max_m.is_finite() || d.jitter_max_m < 0.0 {
            return Err(SynthError::InvalidSpec(
                "jitter_max_m must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

pub fn parse_spec(source: &str) -> Result<SynthSpec, SynthError> {
    let spec: SynthSpec =
        serde_json::from_str(source).map_err(|e| SynthError::Json(e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedScene {
    pub scene_id: String,
    pub sample_ids: BTreeSet<String>,
    /// Annotations a matching metric is expected to flag: every annotation
    /// of the scene, or only the cones for cone scenes.
    pub annotation_ids: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantLog {
    pub version: String,
    pub seed: u64,
    pub detector: DetectorKind,
    pub planted: BTreeMap<PlantKind, Vec<PlantedScene>>,
    pub dropped_annotation_ids: BTreeSet<String>,
}

impl PlantLog {
    pub fn scenes(&self, kind: PlantKind) -> &[PlantedScene] {
        self.planted.get(&kind).map_or(&[], Vec::as_slice)
    }

    pub fn scene_ids(&self, kinds: &[PlantKind]) -> BTreeSet<String> {
        kinds
            .iter()
            .flat_map(|k| self.scenes(*k))
            .map(|p| p.scene_id.clone())
            .collect()
    }

    pub fn sample_ids(&self, kinds: &[PlantKind]) -> BTreeSet<String> {
        kinds
            .iter()
            .flat_map(|k| self.scenes(*k))
            .flat_map(|p| p.sample_ids.iter().cloned())
            .collect()
    }

    pub fn annotation_ids(&self, kinds: &[PlantKind]) -> BTreeSet<String> {
        kinds
            .iter()
            .flat_map(|k| self.scenes(*k))
            .flat_map(|p| p.annotation_ids.iter().cloned())
            .collect()
    }

    pub fn to_json(&self) -> String {
        crate::jsonio::to_canonical_json(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub dataset: DatasetDocument,
    pub detections: DetectionsDocument,
    pub plant_log: PlantLog,
}

const BACKGROUND_LABELS: [&str; 6] = ["car", "truck", "bus", "pedestrian", "barrier", "bicycle"];
const VEHICLE_LABELS: [&str; 3] = ["car", "truck", "bus"];

const BACKGROUND_TEXT: [&str; 8] = [
    "city street, parked cars",
    "highway cruise, light traffic",
    "intersection with pedestrians crossing",
    "bus stop, cyclists on the lane",
    "sunny, wide avenue",
    "overcast, suburban road",
    "construction zone, barriers ahead",
    "roundabout, moderate traffic",
];
const JAM_TEXT: [&str; 3] = [
    "dense traffic, rush hour",
    "stop and go on the highway",
    "congested arterial road",
];
const RAIN_TEXT: [&str; 3] = [
    "heavy rain, wet road",
    "light rain at the intersection",
    "rain, wipers on, city street",
];
const RAIN_MISSPELLED_TEXT: [&str; 2] = ["heavy raim, wet road", "city street in raim"];
const NEGATED_RAIN_TEXT: [&str; 2] = ["no rain, clear sky", "dry road, no rain today"];
const NIGHT_TEXT: [&str; 2] = [
    "night drive, oncoming headlights",
    "night, city street, glare",
];

fn box_size(label: &str) -> [f64; 3] {
    match label {
        "car" => [1.9, 4.6, 1.6],
        "truck" => [2.5, 9.0, 3.2],
        "bus" => [2.9, 11.0, 3.3],
        "pedestrian" => [0.7, 0.7, 1.8],
        "wheelchair" => [0.8, 1.1, 1.3],
        "barrier" => [0.5, 2.5, 1.0],
        "bicycle" => [0.6, 1.8, 1.3],
        "traffic_cone" => [0.4, 0.4, 0.8],
        _ => [1.0, 1.0, 1.0],
    }
}

fn uniform_heading(rng: &mut ChaCha8Rng) -> f64 {
    wrap_angle(rng.gen_range(-PI..PI))
}

/// Places centers with pairwise xy spacing of at least [`MIN_SPACING_M`].
struct Placer {
    taken: Vec<[f64; 2]>,
}

impl Placer {
    fn place(&mut self, rng: &mut ChaCha8Rng) -> [f64; 3] {
        for _ in 0..MAX_PLACEMENT_TRIES {
            let x = rng.gen_range(-AREA_HALF_WIDTH_M..AREA_HALF_WIDTH_M);
            let y = rng.gen_range(-AREA_HALF_WIDTH_M..AREA_HALF_WIDTH_M);
            let clear = self
                .taken
                .iter()
                .all(|p| (p[0] - x).hypot(p[1] - y) >= MIN_SPACING_M);
            if clear {
                self.taken.push([x, y]);
                return [x, y, 0.0];
            }
        }
        unreachable!("placement area saturated; density limits prevent this")
    }
}

struct Builder {
    rng: ChaCha8Rng,
    annotations: Vec<Annotation>,
}

impl Builder {
    fn annotate(
        &mut self,
        sample_id: &str,
        placer: &mut Placer,
        label: &str,
        heading: f64,
    ) -> String {
        let id = format!("ann-{:06}", self.annotations.len() + 1);
        let mut center = placer.place(&mut self.rng);
        center[2] = box_size(label)[2] / 2.0;
        self.annotations.push(Annotation {
            id: id.clone(),
            sample_id: sample_id.to_string(),
            label: label.to_string(),
            center,
            size: box_size(label),
            heading: wrap_angle(heading),
            attributes: BTreeMap::new(),
        });
        id
    }

    fn background(&mut self, sample_id: &str, placer: &mut Placer, density: usize) {
        let spread = density.min(3);
        let n = self.rng.gen_range(density - spread..=density + spread);
        for _ in 0..n {
            let label = *BACKGROUND_LABELS.choose(&mut self.rng).expect("non-empty");
            let heading = uniform_heading(&mut self.rng);
            self.annotate(sample_id, placer, label, heading);
        }
    }
}

/// Generates a dataset, detector output and plant log from a spec.
/// Identical specs yield identical output.
pub fn generate(spec: &SynthSpec) -> Result<SynthOutput, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut kinds: Vec<Option<PlantKind>> = PlantKind::ALL
        .iter()
        .flat_map(|k| std::iter::repeat_n(Some(*k), spec.planted.get(*k)))
        .collect();
    kinds.resize(spec.n_scenes, None);
    kinds.shuffle(&mut rng);

    let mut builder = Builder {
        rng,
        annotations: Vec::new(),
    };
    let mut scenes = Vec::with_capacity(spec.n_scenes);
    let mut samples = Vec::new();
    let mut planted: BTreeMap<PlantKind, Vec<PlantedScene>> =
        PlantKind::ALL.iter().map(|k| (*k, Vec::new())).collect();

    for (index, kind) in kinds.iter().enumerate() {
        let scene_no = index + 1;
        let scene_id = format!("scene-{scene_no:04}");
        let rng = &mut builder.rng;
        let texts: &[&str] = match kind {
            None | Some(PlantKind::TrafficCones) => &BACKGROUND_TEXT,
            Some(PlantKind::TrafficJam) => &JAM_TEXT,
            Some(PlantKind::RainText) => &RAIN_TEXT,
            Some(PlantKind::RainMisspelled) => &RAIN_MISSPELLED_TEXT,
            Some(PlantKind::NegatedRain) => &NEGATED_RAIN_TEXT,
            Some(PlantKind::NightOncoming) => &NIGHT_TEXT,
        };
        let description = texts.choose(rng).expect("non-empty").to_string();
        scenes.push(Scene {
            id: scene_id.clone(),
            description,
            split: if scene_no % 5 == 0 {
                Split::Val
            } else {
                Split::Train
            },
        });

        let base_heading = uniform_heading(rng);
        let mut record = PlantedScene {
            scene_id: scene_id.clone(),
            sample_ids: BTreeSet::new(),
            annotation_ids: BTreeSet::new(),
        };
        for k in 0..spec.samples_per_scene {
            let sample_id = format!("sample-{scene_no:04}-{:02}", k + 1);
            let rng = &mut builder.rng;
            let heading = wrap_angle(base_heading + rng.gen_range(-0.05..0.05));
            // Only jam scenes drive below the low-speed range (20 km/h).
            let speed = match kind {
                Some(PlantKind::TrafficJam) => rng.gen_range(0.5..4.0),
                _ => rng.gen_range(8.0..15.0),
            };
            samples.push(Sample {
                id: sample_id.clone(),
                scene_id: scene_id.clone(),
                timestamp: index as i64 * SCENE_PERIOD_US + k as i64 * SAMPLE_PERIOD_US,
                ego: EgoState { speed, heading },
            });

            let mut placer = Placer { taken: Vec::new() };
            let first = builder.annotations.len();
            let mut cones = Vec::new();
            match kind {
                Some(PlantKind::TrafficJam) => {
                    let n = builder.rng.gen_range(10..=14);
                    for _ in 0..n {
                        let label = *VEHICLE_LABELS.choose(&mut builder.rng).expect("non-empty");
                        let h = heading + builder.rng.gen_range(-0.3..0.3);
                        builder.annotate(&sample_id, &mut placer, label, h);
                    }
                    for _ in 0..2 {
                        let h = heading + PI + builder.rng.gen_range(-0.2..0.2);
                        builder.annotate(&sample_id, &mut placer, "car", h);
                    }
                    builder.background(&sample_id, &mut placer, spec.background_density / 2);
                }
                Some(PlantKind::NightOncoming) => {
                    let h = heading + PI + builder.rng.gen_range(-0.2..0.2);
                    builder.annotate(&sample_id, &mut placer, "car", h);
                    builder.background(&sample_id, &mut placer, spec.background_density);
                }
                Some(PlantKind::TrafficCones) => {
                    let n = builder.rng.gen_range(2..=4);
                    for _ in 0..n {
                        let h = uniform_heading(&mut builder.rng);
                        cones.push(builder.annotate(&sample_id, &mut placer, "traffic_cone", h));
                    }
                    builder.background(&sample_id, &mut placer, spec.background_density);
                }
                _ => builder.background(&sample_id, &mut placer, spec.background_density),
            }

            if kind.is_some() {
                record.sample_ids.insert(sample_id.clone());
                if kind == &Some(PlantKind::TrafficCones) {
                    record.annotation_ids.extend(cones);
                } else {
                    record
                        .annotation_ids
                        .extend(builder.annotations[first..].iter().map(|a| a.id.clone()));
                }
            }
        }
        if let Some(kind) = kind {
            planted
                .get_mut(kind)
                .expect("all kinds present")
                .push(record);
        }
    }

    let Builder {
        mut rng,
        annotations,
    } = builder;
    let (detections, dropped) = detect(&spec.detector, &annotations, &mut rng);
    log::info!(
        "generated {} scenes, {} samples, {} annotations, {} detections",
        scenes.len(),
        samples.len(),
        annotations.len(),
        detections.len()
    );
    Ok(SynthOutput {
        dataset: DatasetDocument {
            version: DATASET_VERSION.to_string(),
            scenes,
            samples,
            annotations,
        },
        detections: DetectionsDocument {
            version: DETECTIONS_VERSION.to_string(),
            detections,
        },
        plant_log: PlantLog {
            version: PLANTLOG_VERSION.to_string(),
            seed: spec.seed,
            detector: spec.detector.kind,
            planted,
            dropped_annotation_ids: dropped,
        },
    })
}

/// Number of annotations a degraded detector drops: `floor(p * n)`.
pub fn drop_count(drop_fraction: f64, n: usize) -> usize {
    (drop_fraction * n as f64).floor() as usize
}

fn detect(
    spec: &DetectorSpec,
    annotations: &[Annotation],
    rng: &mut ChaCha8Rng,
) -> (Vec<Detection>, BTreeSet<String>) {
    let mut dropped = BTreeSet::new();
    let (kept, jitter): (Vec<&Annotation>, f64) = match spec.kind {
        DetectorKind::Null => (Vec::new(), 0.0),
        DetectorKind::Perfect => (annotations.iter().collect(), 0.0),
        DetectorKind::Degraded => {
            let mut order: Vec<usize> = (0..annotations.len()).collect();
            order.sort_by(|a, b| annotations[*a].id.cmp(&annotations[*b].id));
            order.shuffle(rng);
            let n_drop = drop_count(spec.drop_fraction, annotations.len());
            let drop: BTreeSet<usize> = order[..n_drop].iter().copied().collect();
            dropped.extend(drop.iter().map(|i| annotations[*i].id.clone()));
            let kept = (0..annotations.len())
                .filter(|i| !drop.contains(i))
                .map(|i| &annotations[i])
                .collect();
            (kept, spec.jitter_max_m)
        }
    };
    let detections = kept
        .into_iter()
        .enumerate()
        .map(|(i, ann)| {
            let mut center = ann.center;
            if jitter > 0.0 {
                let r = jitter * rng.gen::<f64>().sqrt();
                let phi = rng.gen_range(-PI..PI);
                center[0] += r * phi.cos();
                center[1] += r * phi.sin();
            }
            Detection {
                id: format!("det-{:06}", i + 1),
                sample_id: ann.sample_id.clone(),
                label: ann.label.clone(),
                center,
                score: if spec.kind == DetectorKind::Perfect {
                    1.0
                } else {
                    rng.gen_range(0.3..1.0)
                },
            }
        })
        .collect();
    (detections, dropped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DatasetIndex;
    use crate::textsearch::{keyword_match, tokenize};

    fn spec(kind: DetectorKind) -> SynthSpec {
        SynthSpec {
            seed: 42,
            n_scenes: 50,
            samples_per_scene: 4,
            planted: PlantedCounts {
                traffic_jam: 5,
                rain_text: 3,
                rain_misspelled: 2,
                negated_rain: 1,
                night_oncoming: 3,
                traffic_cones: 4,
            },
            background_density: 10,
            detector: DetectorSpec {
                kind,
                drop_fraction: 0.3,
                jitter_max_m: 0.2,
            },
        }
    }

    #[test]
    fn deterministic_bytes() {
        let a = generate(&spec(DetectorKind::Degraded)).unwrap();
        let b = generate(&spec(DetectorKind::Degraded)).unwrap();
        assert_eq!(a.dataset.to_json(), b.dataset.to_json());
        assert_eq!(a.detections.to_json(), b.detections.to_json());
        assert_eq!(a.plant_log.to_json(), b.plant_log.to_json());
    }

    #[test]
    fn dataset_is_valid_and_detector_independent() {
        let a = generate(&spec(DetectorKind::Perfect)).unwrap();
        let b = generate(&spec(DetectorKind::Null)).unwrap();
        assert_eq!(a.dataset, b.dataset);
        DatasetIndex::from_document(a.dataset.clone()).unwrap();
        let n = a.dataset.annotations.len();
        assert!((1500..2500).contains(&n), "{n} annotations");
    }

    #[test]
    fn perfect_detector_is_bijective() {
        let out = generate(&spec(DetectorKind::Perfect)).unwrap();
        assert_eq!(
            out.detections.detections.len(),
            out.dataset.annotations.len()
        );
        for (det, ann) in out
            .detections
            .detections
            .iter()
            .zip(&out.dataset.annotations)
        {
            assert_eq!(
                (&det.sample_id, &det.label, det.center),
                (&ann.sample_id, &ann.label, ann.center)
            );
        }
        assert!(out.plant_log.dropped_annotation_ids.is_empty());
    }

    #[test]
    fn degraded_drops_exact_count() {
        let mut s = spec(DetectorKind::Degraded);
        s.n_scenes = 10;
        s.planted = PlantedCounts::default();
        s.background_density = 2;
        s.samples_per_scene = 5;
        let out = generate(&s).unwrap();
        let n = out.dataset.annotations.len();
        let dropped = &out.plant_log.dropped_annotation_ids;
        assert_eq!(dropped.len(), drop_count(0.3, n));
        assert_eq!(out.detections.detections.len(), n - dropped.len());
        for ann in &out.dataset.annotations {
            if dropped.contains(&ann.id) {
                continue;
            }
            let det = out
                .detections
                .detections
                .iter()
                .find(|d| {
                    d.sample_id == ann.sample_id
                        && (d.center[0] - ann.center[0]).hypot(d.center[1] - ann.center[1]) <= 0.2
                })
                .expect("kept annotation has a detection within the jitter radius");
            assert_eq!(det.label, ann.label);
        }
    }

    #[test]
    fn drop_count_examples() {
        assert_eq!(drop_count(0.3, 100), 30);
        assert_eq!(drop_count(0.0, 100), 0);
        assert_eq!(drop_count(1.0, 7), 7);
        assert_eq!(drop_count(0.5, 7), 3);
    }

    #[test]
    fn planted_scene_texture() {
        let out = generate(&spec(DetectorKind::Null)).unwrap();
        let index = DatasetIndex::from_document(out.dataset.clone()).unwrap();
        let log = &out.plant_log;
        for p in log.scenes(PlantKind::TrafficJam) {
            for sample in index.samples_of(&p.scene_id) {
                assert!(sample.ego.speed <= 20.0 / 3.6);
                let aligned = index
                    .annotations_of(&sample.id)
                    .filter(|a| VEHICLE_LABELS.contains(&a.label.as_str()))
                    .filter(|a| wrap_angle(a.heading - sample.ego.heading).abs() <= PI / 4.0)
                    .count();
                assert!(aligned >= 10);
            }
        }
        let rain =
            |id: &str| keyword_match(&tokenize(&index.scene(id).unwrap().description), "rain", 1);
        for p in log
            .scenes(PlantKind::RainText)
            .iter()
            .chain(log.scenes(PlantKind::RainMisspelled))
        {
            assert!(rain(&p.scene_id));
        }
        for p in log.scenes(PlantKind::NegatedRain) {
            assert!(index
                .scene(&p.scene_id)
                .unwrap()
                .description
                .contains("no rain"));
            assert!(!rain(&p.scene_id));
        }
        for p in log.scenes(PlantKind::TrafficCones) {
            assert!(p
                .annotation_ids
                .iter()
                .all(|id| index.annotation(id).unwrap().label == "traffic_cone"));
            assert!(!p.annotation_ids.is_empty());
        }
        let planted = log.scene_ids(&PlantKind::ALL);
        for scene in index.scenes().iter().filter(|s| !planted.contains(&s.id)) {
            let tokens = tokenize(&scene.description);
            assert!(!keyword_match(&tokens, "rain", 1) && !keyword_match(&tokens, "night", 1));
        }
        let cones: usize = index
            .annotations()
            .iter()
            .filter(|a| a.label == "traffic_cone")
            .count();
        assert_eq!(cones, log.annotation_ids(&[PlantKind::TrafficCones]).len());
    }

    #[test]
    fn infeasible_spec() {
        let mut s = spec(DetectorKind::Null);
        s.n_scenes = 10;
        assert_eq!(
            generate(&s).unwrap_err(),
            SynthError::InfeasibleSpec {
                planted: 18,
                n_scenes: 10
            }
        );
    }

    #[test]
    fn spec_json() {
        let s = parse_spec(
            r#"{"seed":1,"n_scenes":3,"planted":{"traffic_jam":1},"detector":{"kind":"null"}}"#,
        )
        .unwrap();
        assert_eq!((s.samples_per_scene, s.background_density), (4, 10));
        assert!(matches!(
            parse_spec(
                r#"{"seed":1,"n_scenes":3,"detector":{"kind":"degraded","drop_fraction":1.5}}"#
            ),
            Err(SynthError::InvalidSpec(_))
        ));
    }
}
