//! One function per subcommand: read inputs, run the core stage, write
//! outputs atomically with the effective config echoed.

use std::path::{Path, PathBuf};

use aeg_core::eval::{generate_messy_scene, run_benchmark, MessyScene, TruthRow};
use aeg_core::scenegraph::assign_keyframes;
use aeg_core::tidy::{activity_heatmap, detect_misplaced, plan_rearrangement};
use aeg_core::{build_hierarchy, build_scene_graph, enhance, Backend, SceneGraph, Warning};

use crate::config::RunConfig;
use crate::error::AegError;
use crate::format::{
    annotations, warning_dtos, AnnotationDto, GraphFile, HeatmapFile, MisplacedFile, PlanFile, PlanItemDto, ReportFile,
    ScoreDto, TruthFile, TruthRowDto, WarningsFile,
};
use crate::io::{read_json, warnings_path, write_atomic, write_json};

pub const TRUTH_FILE: &str = "truth.json";

/// What a command produced, for the success line.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Summary {
    pub outputs: Vec<PathBuf>,
    pub warnings: usize,
}

impl Summary {
    fn one(out: &Path) -> Self {
        Self { outputs: vec![out.to_path_buf()], warnings: 0 }
    }
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

/// Loads a graph file; `edges` and `keyframes` must be present.
pub fn load_graph(path: &Path) -> Result<SceneGraph, AegError> {
    read_json::<GraphFile>(path)?.to_graph(&display(path))
}

/// Loads a graph file, or builds a scene graph when given a raw scene.
pub fn load_or_build(path: &Path, cfg: &RunConfig) -> Result<SceneGraph, AegError> {
    let file: GraphFile = read_json(path)?;
    if file.is_graph() {
        return file.to_graph(&display(path));
    }
    build_graph(&file, &display(path), cfg)
}

fn build_graph(file: &GraphFile, name: &str, cfg: &RunConfig) -> Result<SceneGraph, AegError> {
    let mut graph = build_scene_graph(file.instances(name)?, file.frames.clone(), &cfg.relation_config())?;
    if cfg.keyframe_strategy() != aeg_core::KeyframeStrategy::NeighborSum {
        assign_keyframes(&mut graph, &cfg.keyframe_strategy())?;
    }
    Ok(graph)
}

fn write_graph(out: &Path, graph: &SceneGraph, cfg: &RunConfig) -> Result<(), AegError> {
    write_json(out, &GraphFile::from_graph(graph, Some(cfg.echo())))
}

fn write_warnings(out: &Path, stage: &str, warnings: &[Warning], failed: Vec<String>) -> Result<PathBuf, AegError> {
    let path = warnings_path(out);
    write_json(&path, &WarningsFile { stage: stage.to_string(), warnings: warning_dtos(warnings), failed })?;
    for w in warnings {
        log::warn!("{}: {}", w.subject, w.message);
    }
    Ok(path)
}

fn with_warnings(out: &Path, stage: &str, warnings: &[Warning], failed: Vec<String>) -> Result<Summary, AegError> {
    let w = write_warnings(out, stage, warnings, failed)?;
    Ok(Summary { outputs: vec![out.to_path_buf(), w], warnings: warnings.len() })
}

pub fn build(scene: &Path, out: &Path, cfg: &RunConfig) -> Result<Summary, AegError> {
    let file: GraphFile = read_json(scene)?;
    let graph = build_graph(&file, &display(scene), cfg)?;
    write_graph(out, &graph, cfg)?;
    Ok(Summary::one(out))
}

pub fn cluster(sg: &Path, out: &Path, cfg: &RunConfig) -> Result<Summary, AegError> {
    let mut graph = load_graph(sg)?;
    graph.hierarchy = Some(build_hierarchy(&graph, cfg.tau)?);
    // Areas changed, so any earlier enhancement no longer applies.
    graph.enhanced = false;
    write_graph(out, &graph, cfg)?;
    Ok(Summary::one(out))
}

pub fn enhance_graph<B: Backend + ?Sized>(sg: &Path, out: &Path, cfg: &RunConfig, backend: &B) -> Result<Summary, AegError> {
    let graph = load_graph(sg)?;
    let outcome = enhance(&graph, backend, &cfg.enhance_config())?;
    write_graph(out, &outcome.graph, cfg)?;
    with_warnings(out, "enhance", &outcome.warnings, outcome.failed)
}

pub fn detect<B: Backend + ?Sized>(aeg: &Path, out: &Path, cfg: &RunConfig, backend: &B) -> Result<Summary, AegError> {
    let graph = load_graph(aeg)?;
    let d = detect_misplaced(&graph, backend, &cfg.tidy_config())?;
    let file = MisplacedFile {
        config: cfg.echo(),
        misplaced: d.misplaced.iter().map(ScoreDto::from).collect(),
        scores: d.all.iter().map(ScoreDto::from).collect(),
    };
    write_json(out, &file)?;
    with_warnings(out, "detect", &d.warnings, Vec::new())
}

pub fn plan<B: Backend + ?Sized>(aeg: &Path, out: &Path, cfg: &RunConfig, backend: &B) -> Result<Summary, AegError> {
    let graph = load_graph(aeg)?;
    let p = plan_rearrangement(&graph, backend, &cfg.tidy_config())?;
    write_json(out, &PlanFile { config: cfg.echo(), plan: p.plan.iter().map(PlanItemDto::from).collect() })?;
    with_warnings(out, "plan", &p.warnings, Vec::new())
}

pub fn heatmap<B: Backend + ?Sized>(
    aeg: &Path,
    activity: &str,
    out: &Path,
    cfg: &RunConfig,
    backend: &B,
) -> Result<Summary, AegError> {
    if activity.trim().is_empty() {
        return Err(AegError::Usage("activity must not be empty".into()));
    }
    let graph = load_graph(aeg)?;
    let (scores, warnings) = activity_heatmap(&graph, activity, backend, &cfg.tidy_config())?;
    write_json(out, &HeatmapFile { config: cfg.echo(), activity: activity.to_string(), scores })?;
    with_warnings(out, "heatmap", &warnings, Vec::new())
}

pub fn read_annotations(path: &Path) -> Result<Vec<aeg_core::eval::GroundTruthAnnotation>, AegError> {
    annotations(read_json::<Vec<AnnotationDto>>(path)?, &display(path))
}

pub fn scene_id(i: usize) -> String {
    format!("scene_{i:03}")
}

/// Generates `cfg.messy.scenes` messy scenes of `n` items each into `dir`.
pub fn messy(scene: &Path, pool: &Path, n: usize, dir: &Path, cfg: &RunConfig) -> Result<Summary, AegError> {
    let base = load_or_build(scene, cfg)?;
    let pool = read_annotations(pool)?;
    let mut truth = TruthFile { config: Some(cfg.echo()), scenes: Default::default() };
    let mut outputs = Vec::new();
    for i in 0..cfg.messy.scenes {
        let id = scene_id(i);
        let m = generate_messy_scene(&id, &base, &pool, n, cfg.seed, cfg.messy.half_extent)?;
        let path = dir.join(format!("{id}.json"));
        write_graph(&path, &m.graph, cfg)?;
        truth.scenes.insert(id, m.truth.iter().map(TruthRowDto::from).collect());
        outputs.push(path);
    }
    let index = dir.join(TRUTH_FILE);
    write_json(&index, &truth)?;
    outputs.push(index);
    Ok(Summary { outputs, warnings: 0 })
}

pub fn load_scenes(dir: &Path) -> Result<Vec<MessyScene>, AegError> {
    let index_path = dir.join(TRUTH_FILE);
    let index: TruthFile = read_json(&index_path)?;
    index
        .scenes
        .into_iter()
        .map(|(id, rows)| {
            let path = dir.join(format!("{id}.json"));
            let graph = load_graph(&path)?;
            for (i, r) in rows.iter().enumerate() {
                if !graph.nodes.contains_key(&r.carriable_id) || !graph.nodes.contains_key(&r.receptacle_id) {
                    return Err(AegError::schema(
                        display(&index_path),
                        format!("scenes.{id}[{i}]"),
                        "truth row references a node missing from the scene",
                    ));
                }
            }
            Ok(MessyScene { id, graph, truth: rows.into_iter().map(TruthRow::from).collect() })
        })
        .collect()
}

pub fn eval<B: Backend + ?Sized>(
    scenes: &Path,
    gt: &Path,
    out: &Path,
    csv_out: Option<&Path>,
    cfg: &RunConfig,
    backend: &B,
) -> Result<Summary, AegError> {
    let scenes = load_scenes(scenes)?;
    let annotations = read_annotations(gt)?;
    let report = run_benchmark(&scenes, &annotations, backend, &cfg.benchmark_config())?;
    let file = ReportFile::new(&report, cfg.echo());
    write_json(out, &file)?;
    let mut summary = with_warnings(out, "eval", &report.failures, Vec::new())?;
    if let Some(path) = csv_out {
        write_atomic(path, &report_csv(&file, cfg.max_k))?;
        summary.outputs.push(path.to_path_buf());
    }
    Ok(summary)
}

/// One row per evaluated carriable with `ndcg@1..ndcg@max_k` columns.
pub fn report_csv(report: &ReportFile, max_k: usize) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> =
        ["scene_id", "carriable_id", "category", "receptacle_id", "score", "predicted_misplaced", "actually_misplaced"]
            .map(String::from)
            .to_vec();
    header.extend((1..=max_k).map(|k| format!("ndcg@{k}")));
    w.write_record(&header).expect("in-memory write");
    for r in &report.rows {
        let mut rec = vec![
            r.scene_id.clone(),
            r.carriable_id.clone(),
            r.category.clone(),
            r.receptacle_id.clone(),
            r.score.to_string(),
            r.predicted_misplaced.to_string(),
            r.actually_misplaced.to_string(),
        ];
        rec.extend((0..max_k).map(|i| r.ndcg.get(i).map(f64::to_string).unwrap_or_default()));
        w.write_record(&rec).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}
