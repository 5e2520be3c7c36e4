//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cornerforge::{compile_metrics, evaluate, extract, ingest, match_detections, RUN_ALL_OUTPUTS};
use cornerforge_core::dataset::load_mapping;
use cornerforge_core::dataset::{load_dataset, Annotation, DatasetIndex};
use cornerforge_core::evaluation::{
    aggregate, read_report, write_report, CornerCaseReport, ReportFormat, Scope,
};
use cornerforge_core::extraction::{evaluate_metric, ExtractionResult, HitSet};
use cornerforge_core::fixtures;
use cornerforge_core::matching::{
    match_sample, solve_assignment, Detection, MatchOutcome, DEFAULT_THRESHOLD_M,
};
use cornerforge_core::metrics::{read_metrics, write_metrics, MetricPredicate, MetricsFile};
use cornerforge_core::ontology::{load_ontology, CornerCaseOntology, Unit};
use cornerforge_core::registry::{load_registry, CornerCaseSpec};
use cornerforge_core::synthgen::{generate, parse_spec, DetectorKind, PlantKind, SynthOutput};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_cornerforge")
}

struct Stage {
    specs: Vec<CornerCaseSpec>,
    ontology: CornerCaseOntology,
    metrics: MetricsFile,
}

fn stage() -> Stage {
    let specs = load_registry(fixtures::REGISTRY_CSV.as_bytes()).unwrap();
    let base = load_ontology(fixtures::ONTOLOGY_JSON).unwrap();
    let ontology = ingest(&specs, &base).unwrap();
    let metrics = compile_metrics(&ontology, &specs).unwrap();
    Stage {
        specs,
        ontology,
        metrics,
    }
}

fn synth(kind: DetectorKind) -> SynthOutput {
    let mut spec = parse_spec(fixtures::SYNTHSPEC_JSON).unwrap();
    spec.detector.kind = kind;
    generate(&spec).unwrap()
}

struct Run {
    dataset: DatasetIndex,
    hits: ExtractionResult,
    report: CornerCaseReport,
    synth: SynthOutput,
    fns: BTreeSet<String>,
    a_posteriori: BTreeMap<u32, BTreeSet<String>>,
}

fn run_pipeline(stage: &Stage, kind: DetectorKind) -> Run {
    let synth = synth(kind);
    let dataset = DatasetIndex::from_document(synth.dataset.clone()).unwrap();
    let hits = extract(
        &stage.metrics,
        &stage.ontology,
        fixtures::MAPPING_JSON,
        &dataset,
    )
    .unwrap();
    let enriched =
        match_detections(&dataset, &synth.detections.to_json(), DEFAULT_THRESHOLD_M).unwrap();
    let result = evaluate(&hits, &enriched).unwrap();
    let report = aggregate(&result, &stage.specs);
    let fns = enriched
        .false_negatives()
        .into_iter()
        .map(String::from)
        .collect();
    let a_posteriori = result
        .entries
        .iter()
        .map(|e| (e.corner_case_id, e.a_posteriori_annotations.clone()))
        .collect();
    Run {
        dataset,
        hits,
        report,
        synth,
        fns,
        a_posteriori,
    }
}

fn hit(hits: &ExtractionResult, id: u32) -> &HitSet {
    hits.hits
        .iter()
        .find(|h| h.corner_case_id == id)
        .expect("metric present")
}

/// Minimum total over all injective maps of the smaller side into the larger.
fn brute_force_min(cost: &[Vec<f64>]) -> f64 {
    let (n, m) = (cost.len(), cost[0].len());
    let (small, large, at): (usize, usize, Box<dyn Fn(usize, usize) -> f64>) = if n <= m {
        (n, m, Box::new(|i, j| cost[i][j]))
    } else {
        (m, n, Box::new(|i, j| cost[j][i]))
    };
    fn go(
        i: usize,
        small: usize,
        large: usize,
        used: &mut [bool],
        acc: f64,
        at: &dyn Fn(usize, usize) -> f64,
        best: &mut f64,
    ) {
        if i == small {
            *best = best.min(acc);
            return;
        }
        for j in 0..large {
            if !used[j] {
                used[j] = true;
                go(i + 1, small, large, used, acc + at(i, j), at, best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(
        0,
        small,
        large,
        &mut vec![false; large],
        0.0,
        &*at,
        &mut best,
    );
    best
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut solver_time = Duration::ZERO;
    let mut checked = 0;
    for n in 1..=6 {
        for m in 1..=6 {
            for trial in 0..200 {
                for integer in [true, false] {
                    let cost: Vec<Vec<f64>> = (0..n)
                        .map(|_| {
                            (0..m)
                                .map(|_| {
                                    if integer {
                                        f64::from(rng.gen_range(0..20))
                                    } else {
                                        rng.gen_range(0.0..10.0)
                                    }
                                })
                                .collect()
                        })
                        .collect();
                    let start = Instant::now();
                    let pairs = solve_assignment(&cost).map_err(|e| e.to_string())?;
                    solver_time += start.elapsed();
                    ensure!(
                        pairs.len() == n.min(m),
                        "{n}x{m} trial {trial}: {} pairs",
                        pairs.len()
                    );
                    let rows: BTreeSet<_> = pairs.iter().map(|p| p.0).collect();
                    let cols: BTreeSet<_> = pairs.iter().map(|p| p.1).collect();
                    ensure!(
                        rows.len() == pairs.len() && cols.len() == pairs.len(),
                        "{n}x{m}: not a matching"
                    );
                    let total: f64 = pairs.iter().map(|&(r, c)| cost[r][c]).sum();
                    let best = brute_force_min(&cost);
                    if integer {
                        ensure!(total == best, "{n}x{m} trial {trial}: {total} != {best}");
                    } else {
                        ensure!(
                            (total - best).abs() <= 1e-9,
                            "{n}x{m} trial {trial}: {total} vs {best}"
                        );
                    }
                    checked += 1;
                }
            }
        }
    }
    ensure!(
        solver_time < Duration::from_secs(5),
        "solver took {solver_time:?}"
    );
    Ok(format!(
        "{checked} matrices optimal, solver time {solver_time:.2?}"
    ))
}

fn ann(id: &str, label: &str, x: f64, y: f64) -> Annotation {
    Annotation {
        id: id.into(),
        sample_id: "s".into(),
        label: label.into(),
        center: [x, y, 0.0],
        size: [1.0, 1.0, 1.0],
        heading: 0.0,
        attributes: BTreeMap::new(),
    }
}

fn det(id: &str, label: &str, x: f64, y: f64) -> Detection {
    Detection {
        id: id.into(),
        sample_id: "s".into(),
        label: label.into(),
        center: [x, y, 0.0],
        score: 0.5,
    }
}

fn outcome(gts: &[Annotation], dets: &[Detection]) -> Result<MatchOutcome, String> {
    let g: Vec<&Annotation> = gts.iter().collect();
    let d: Vec<&Detection> = dets.iter().collect();
    match_sample("s", &g, &d, DEFAULT_THRESHOLD_M).map_err(|e| e.to_string())
}

fn sets(o: &MatchOutcome) -> (Vec<(String, String)>, Vec<String>, Vec<String>) {
    (
        o.tp.iter()
            .map(|t| (t.annotation_id.clone(), t.detection_id.clone()))
            .collect(),
        o.fn_annotations.clone(),
        o.fp_detections.clone(),
    )
}

fn criterion_2() -> Outcome {
    let s = |x: &str| x.to_string();
    let cases = [
        (
            "gate pass",
            vec![ann("g", "car", 0.0, 0.0)],
            vec![det("d", "car", 0.3, 0.0)],
            (vec![(s("g"), s("d"))], vec![], vec![]),
        ),
        (
            "gate fail",
            vec![ann("g", "car", 0.0, 0.0)],
            vec![det("d", "car", 1.0, 0.0)],
            (vec![], vec![s("g")], vec![s("d")]),
        ),
        (
            "class mismatch",
            vec![ann("g", "car", 0.0, 0.0)],
            vec![det("d", "pedestrian", 0.1, 0.0)],
            (vec![], vec![s("g")], vec![s("d")]),
        ),
        (
            "nearest assignment",
            vec![ann("g1", "car", 0.0, 0.0), ann("g2", "car", 0.6, 0.0)],
            vec![det("d", "car", 0.35, 0.0)],
            (vec![(s("g2"), s("d"))], vec![s("g1")], vec![]),
        ),
    ];
    for (name, gts, dets, expected) in cases {
        let got = sets(&outcome(&gts, &dets)?);
        ensure!(
            got == expected,
            "{name}: got {got:?}, expected {expected:?}"
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let labels = ["car", "truck", "pedestrian"];
    for trial in 0..1000 {
        let gts: Vec<Annotation> = (0..rng.gen_range(0..12))
            .map(|i| {
                ann(
                    &format!("g{i}"),
                    labels[rng.gen_range(0..3)],
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                )
            })
            .collect();
        let dets: Vec<Detection> = (0..rng.gen_range(0..12))
            .map(|i| {
                det(
                    &format!("d{i}"),
                    labels[rng.gen_range(0..3)],
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                )
            })
            .collect();
        let o = outcome(&gts, &dets)?;
        ensure!(
            gts.len() == o.tp.len() + o.fn_annotations.len(),
            "trial {trial}: |GT| != TP + FN"
        );
        ensure!(
            dets.len() == o.tp.len() + o.fp_detections.len(),
            "trial {trial}: |dets| != TP + FP"
        );
    }
    Ok("4 examples exact, conservation on 1000 random samples".into())
}

fn criterion_3(stage: &Stage) -> Outcome {
    let run = run_pipeline(stage, DetectorKind::Null);
    let log = &run.synth.plant_log;
    let counts: Vec<usize> = PlantKind::ALL
        .iter()
        .map(|k| log.scenes(*k).len())
        .collect();
    ensure!(counts == [5, 3, 2, 1, 3, 4], "planted counts {counts:?}");

    let jam = hit(&run.hits, 2);
    ensure!(
        jam.scene_ids == log.scene_ids(&[PlantKind::TrafficJam]),
        "traffic jam scenes {:?}",
        jam.scene_ids
    );
    ensure!(
        jam.scene_ids.len() == 5,
        "traffic jam scene count {}",
        jam.scene_ids.len()
    );

    let affirmative = [PlantKind::RainText, PlantKind::RainMisspelled];
    for id in [5, 6] {
        let rain = hit(&run.hits, id);
        ensure!(
            rain.scene_ids == log.scene_ids(&affirmative),
            "rain metric {id} scenes {:?}",
            rain.scene_ids
        );
        ensure!(
            rain.annotation_ids == log.annotation_ids(&affirmative),
            "rain metric {id} annotations differ"
        );
        let every: BTreeSet<String> = rain
            .scene_ids
            .iter()
            .flat_map(|s| run.dataset.samples_of(s).collect::<Vec<_>>())
            .flat_map(|s| {
                run.dataset
                    .annotations_of(&s.id)
                    .map(|a| a.id.clone())
                    .collect::<Vec<_>>()
            })
            .collect();
        ensure!(
            rain.annotation_ids == every,
            "rain metric {id} does not flag every annotation"
        );
    }
    let (h5, h6) = (hit(&run.hits, 5), hit(&run.hits, 6));
    ensure!(
        (&h5.scene_ids, &h5.sample_ids, &h5.annotation_ids)
            == (&h6.scene_ids, &h6.sample_ids, &h6.annotation_ids),
        "metrics 5 and 6 differ"
    );
    let cones = hit(&run.hits, 4);
    ensure!(
        cones.annotation_ids == log.annotation_ids(&[PlantKind::TrafficCones]),
        "cone annotations differ"
    );
    let night = hit(&run.hits, 1);
    ensure!(
        night.scene_ids == log.scene_ids(&[PlantKind::NightOncoming]),
        "night scenes {:?}",
        night.scene_ids
    );
    Ok(format!(
        "jam 5/5 scenes, rain {} scenes, {} cone annotations, night {} scenes",
        h5.scene_ids.len(),
        cones.annotation_ids.len(),
        night.scene_ids.len()
    ))
}

fn criterion_4(stage: &Stage) -> Outcome {
    let perfect = run_pipeline(stage, DetectorKind::Perfect);
    for row in perfect.report.rows() {
        ensure!(
            row.a_posteriori == 0 && row.unique_a_posteriori == 0,
            "perfect: row {}/{} has {}",
            row.scope.as_str(),
            row.key,
            row.a_posteriori
        );
    }
    let null = run_pipeline(stage, DetectorKind::Null);
    ensure!(
        null.fns.len() == null.dataset.annotations().len(),
        "null detector: not every annotation is FN"
    );
    for row in null.report.rows() {
        ensure!(
            row.a_posteriori == row.a_priori,
            "null: row {}/{} {} != {}",
            row.scope.as_str(),
            row.key,
            row.a_posteriori,
            row.a_priori
        );
    }
    Ok(format!(
        "{} rows at both endpoints",
        null.report.rows().count()
    ))
}

fn criterion_5(stage: &Stage) -> Outcome {
    let run = run_pipeline(stage, DetectorKind::Degraded);
    let n = run.dataset.annotations().len();
    let expected = (0.3 * n as f64).floor() as usize;
    ensure!(
        run.fns.len() == expected,
        "FN count {} != floor(0.3 x {n}) = {expected}",
        run.fns.len()
    );
    let dropped = &run.synth.plant_log.dropped_annotation_ids;
    ensure!(&run.fns == dropped, "FN set differs from drop log");
    for h in &run.hits.hits {
        let oracle: BTreeSet<String> = h.annotation_ids.intersection(dropped).cloned().collect();
        ensure!(
            run.a_posteriori[&h.corner_case_id] == oracle,
            "corner case {} a-posteriori set differs",
            h.corner_case_id
        );
    }
    Ok(format!(
        "{expected} FN of {n} annotations, all a-posteriori sets match"
    ))
}

fn criterion_6(stage: &Stage) -> Outcome {
    let run = run_pipeline(stage, DetectorKind::Degraded);
    ensure!(
        !run.dataset
            .annotations()
            .iter()
            .any(|a| a.label == "wheelchair"),
        "synthetic data contains wheelchairs"
    );
    let row = run
        .report
        .row(Scope::CornerCase, "3")
        .ok_or("wheelchair row missing")?;
    ensure!(
        row.a_priori == 0 && row.a_posteriori == 0 && row.ratio.is_none(),
        "wheelchair row {row:?}"
    );
    let csv = write_report(&run.report, ReportFormat::Csv);
    ensure!(
        csv.lines().any(|l| l == "corner_case,3,0,0,"),
        "CSV wheelchair row missing or has a ratio"
    );
    Ok("wheelchair row (0, 0) without ratio".into())
}

fn criterion_7() -> Outcome {
    let registry = format!(
        "{}8,Ego standstill,ego not moving,V,Single,Content,Domain,Standstill,,,,\n",
        fixtures::REGISTRY_CSV
    );
    let specs = load_registry(registry.as_bytes()).map_err(|e| e.to_string())?;
    let ontology = ingest(&specs, &load_ontology(fixtures::ONTOLOGY_JSON).unwrap())
        .map_err(|e| e.to_string())?;
    let metrics = compile_metrics(&ontology, &specs).map_err(|e| e.to_string())?;
    let metric = metrics
        .metrics
        .iter()
        .find(|m| m.corner_case_id == 8)
        .ok_or("standstill metric missing")?;
    let (min, max) = match &metric.predicates[..] {
        [MetricPredicate::EgoAttributeRange {
            min,
            max,
            unit: Unit::MetersPerSecond,
            ..
        }] => (*min, *max),
        other => return Err(format!("unexpected predicates {other:?}")),
    };
    ensure!(min == 0.0 && max == 0.15, "compiled range [{min}, {max}]");

    let dataset = load_dataset(
        r#"{"version":"1","scenes":[{"id":"a","split":"val"},{"id":"b","split":"val"}],
            "samples":[{"id":"a1","scene_id":"a","timestamp":0,"ego":{"speed":0.15,"heading":0}},
                       {"id":"b1","scene_id":"b","timestamp":0,"ego":{"speed":0.1500001,"heading":0}}],
            "annotations":[{"id":"x","sample_id":"a1","label":"car","center":[1,0,0],"size":[1,1,1],"heading":0},
                           {"id":"y","sample_id":"b1","label":"car","center":[1,0,0],"size":[1,1,1],"heading":0}]}"#,
    )
    .map_err(|e| e.to_string())?;
    let mapping =
        load_mapping(fixtures::MAPPING_JSON, &ontology, &metrics).map_err(|e| e.to_string())?;
    let hits = evaluate_metric(metric, &dataset, &mapping).map_err(|e| e.to_string())?;
    ensure!(
        hits.sample_ids == BTreeSet::from(["a1".to_string()]),
        "hit samples {:?}",
        hits.sample_ids
    );
    Ok("[0, 0.15] m/s; 0.15 in, 0.1500001 out".into())
}

fn write_inputs(dir: &Path, detector: DetectorKind) -> PathBuf {
    let input = dir.join("input");
    fs::create_dir_all(&input).unwrap();
    let out = synth(detector);
    fs::write(input.join("registry.csv"), fixtures::REGISTRY_CSV).unwrap();
    fs::write(input.join("ontology.json"), fixtures::ONTOLOGY_JSON).unwrap();
    fs::write(input.join("mapping.json"), fixtures::MAPPING_JSON).unwrap();
    fs::write(input.join("dataset.json"), out.dataset.to_json()).unwrap();
    fs::write(input.join("detections.json"), out.detections.to_json()).unwrap();
    input
}

fn run_all(input: &Path, out: &Path, jobs: u32) -> Result<Duration, String> {
    let start = Instant::now();
    let status = Command::new(bin())
        .env("CORNERFORGE_LOG", "error")
        .arg("--jobs")
        .arg(jobs.to_string())
        .arg("run-all")
        .args(["--registry", input.join("registry.csv").to_str().unwrap()])
        .args(["--ontology", input.join("ontology.json").to_str().unwrap()])
        .args(["--mapping", input.join("mapping.json").to_str().unwrap()])
        .args(["--dataset", input.join("dataset.json").to_str().unwrap()])
        .args([
            "--detections",
            input.join("detections.json").to_str().unwrap(),
        ])
        .args(["--out", out.to_str().unwrap()])
        .status()
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure!(status.success(), "run-all exited with {status}");
    Ok(elapsed)
}

fn criterion_8(stage: &Stage) -> Outcome {
    for spec in &stage.specs {
        for m in stage
            .metrics
            .metrics
            .iter()
            .filter(|m| m.corner_case_id == spec.id)
        {
            ensure!(
                m.classifications == spec.classifications
                    && m.sources == spec.sources
                    && m.fusion == spec.fusion,
                "metric {} lost taxonomy data",
                spec.id
            );
        }
        for cause in &spec.causes {
            let link = stage
                .ontology
                .meta_link(spec.id, &cause.text)
                .ok_or(format!("no link for {}", spec.id))?;
            ensure!(
                link.classifications == spec.classifications
                    && link.sources == spec.sources
                    && link.fusion == spec.fusion,
                "ontology link {} lost taxonomy data",
                spec.id
            );
        }
    }
    let text = write_metrics(&stage.metrics);
    let back = read_metrics(&text).map_err(|e| e.to_string())?;
    ensure!(
        back == stage.metrics && write_metrics(&back) == text,
        "metrics round-trip differs"
    );
    let report = run_pipeline(stage, DetectorKind::Degraded).report;
    let json = write_report(&report, ReportFormat::Json);
    let back = read_report(&json).map_err(|e| e.to_string())?;
    ensure!(
        back == report && write_report(&back, ReportFormat::Json) == json,
        "report round-trip differs"
    );

    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let input = write_inputs(tmp.path(), DetectorKind::Degraded);
    let dirs = [("run1", 1), ("run2", 1), ("run4", 4)];
    for (name, jobs) in dirs {
        run_all(&input, &tmp.path().join(name), jobs)?;
    }
    for file in RUN_ALL_OUTPUTS {
        let reference = fs::read(tmp.path().join("run1").join(file)).map_err(|e| e.to_string())?;
        for (name, _) in &dirs[1..] {
            let other = fs::read(tmp.path().join(name).join(file)).map_err(|e| e.to_string())?;
            ensure!(reference == other, "{file} differs between run1 and {name}");
        }
    }
    Ok(format!(
        "{} run-all outputs byte-identical across runs and --jobs 1/4",
        RUN_ALL_OUTPUTS.len()
    ))
}

fn criterion_9() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let input = write_inputs(tmp.path(), DetectorKind::Degraded);
    let n = synth(DetectorKind::Degraded).dataset.annotations.len();
    let elapsed = run_all(&input, &tmp.path().join("out"), 1)?;
    ensure!(elapsed < Duration::from_secs(5), "run-all took {elapsed:?}");
    Ok(format!("run-all over {n} annotations in {elapsed:.2?}"))
}

fn main() {
    let stage = stage();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("assignment optimality", Box::new(criterion_1)),
        ("matching semantics", Box::new(criterion_2)),
        ("planted extraction", Box::new(|| criterion_3(&stage))),
        ("detector endpoints", Box::new(|| criterion_4(&stage))),
        ("degraded detector", Box::new(|| criterion_5(&stage))),
        ("missing corner case", Box::new(|| criterion_6(&stage))),
        ("unit and boundary fidelity", Box::new(criterion_7)),
        (
            "round-trips and reproducibility",
            Box::new(|| criterion_8(&stage)),
        ),
        ("run-all runtime", Box::new(criterion_9)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS criterion {}: {name} ({detail})", i + 1),
            Err(reason) => {
                failed += 1;
                println!("FAIL criterion {}: {name} ({reason})", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
