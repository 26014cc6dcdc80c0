//! Benchmark metrics, messy-scene generation and the benchmark runner.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use thiserror::Error;

use crate::affordance::{carriable_request, enhance, parse_carriable, AffordanceError, EnhanceConfig};
use crate::geometry::OrientedBox;
use crate::hierarchy::{build_hierarchy, HierarchyError};
use crate::llm::Backend;
use crate::rng::seeded_for;
use crate::scenegraph::{Edge, EdgeKind, NodeAffordance, ObjectInstance, RearrangementType, SceneGraph, SceneNode};
use crate::tidy::{build_receptacle_db, detect_misplaced, rank_receptacles, Query, Scorer, ScorerMode, TidyConfig, TidyError};
use crate::Warning;

pub const MAX_GT_RECEPTACLES: usize = 5;
pub const DEFAULT_MAX_K: usize = 8;
pub const DEFAULT_MESSY_HALF_EXTENT: f64 = 0.1;
pub const RELEVANCE_SCHEME: &str = "reversed-rank";
pub const NDCG_AVERAGING: &str = "per-carriable";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("k must be at least 1")]
    InvalidK,
    #[error("empty input")]
    EmptyInput,
    #[error("half extent must be positive and finite")]
    InvalidHalfExtent,
    #[error("scene has no receptacles")]
    NoReceptacles,
    #[error("invalid annotation for `{carriable}`: {reason}")]
    InvalidAnnotation { carriable: String, reason: String },
    #[error(transparent)]
    Tidy(#[from] TidyError),
    #[error(transparent)]
    Affordance(#[from] AffordanceError),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
}

/// Ranked placements for a carriable id or a carriable category.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruthAnnotation {
    pub carriable: String,
    pub ranked_receptacles: Vec<String>,
}

impl GroundTruthAnnotation {
    pub fn validate(&self, graph: &SceneGraph) -> Result<(), EvalError> {
        let bad = |reason: String| Err(EvalError::InvalidAnnotation { carriable: self.carriable.clone(), reason });
        if self.ranked_receptacles.is_empty() || self.ranked_receptacles.len() > MAX_GT_RECEPTACLES {
            return bad(format!("needs 1 to {MAX_GT_RECEPTACLES} receptacles, got {}", self.ranked_receptacles.len()));
        }
        let mut seen = BTreeSet::new();
        for r in &self.ranked_receptacles {
            if !seen.insert(r) {
                return bad(format!("duplicate receptacle `{r}`"));
            }
            if !graph.nodes.contains_key(r) {
                return bad(format!("unknown receptacle `{r}`"));
            }
        }
        Ok(())
    }
}

/// Annotation for a carriable: by id first, then by category.
pub fn annotation_for<'a>(annotations: &'a [GroundTruthAnnotation], id: &str, category: &str) -> Option<&'a GroundTruthAnnotation> {
    annotations
        .iter()
        .find(|a| a.carriable == id)
        .or_else(|| annotations.iter().find(|a| a.carriable.eq_ignore_ascii_case(category)))
}

/// NDCG@k with reversed-rank relevance: the ground-truth item at 1-based
/// rank r of L gets L − r + 1, anything else 0. Predictions shorter than k
/// count as padded with irrelevant items; repeated items count once.
pub fn ndcg_at_k<S: AsRef<str>>(predicted: &[S], gt: &[String], k: usize) -> Result<f64, EvalError> {
    if k == 0 {
        return Err(EvalError::InvalidK);
    }
    let l = gt.len();
    let rel = |item: &str| gt.iter().position(|g| g == item).map_or(0.0, |r| (l - r) as f64);
    let mut seen = BTreeSet::new();
    let mut dcg = 0.0;
    for (i, p) in predicted.iter().take(k).enumerate() {
        let p = p.as_ref();
        if seen.insert(p) {
            dcg += rel(p) / libm::log2(i as f64 + 2.0);
        }
    }
    let idcg: f64 = (0..k.min(l)).map(|i| (l - i) as f64 / libm::log2(i as f64 + 2.0)).sum();
    Ok(if idcg == 0.0 { 0.0 } else { dcg / idcg })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetectionOutcome {
    pub predicted_misplaced: bool,
    pub actually_misplaced: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionMetrics {
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

/// Confusion-matrix metrics with misplaced as the positive class.
pub fn detection_metrics(outcomes: &[DetectionOutcome]) -> Result<DetectionMetrics, EvalError> {
    if outcomes.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for o in outcomes {
        match (o.predicted_misplaced, o.actually_misplaced) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    Ok(DetectionMetrics { accuracy: ratio(tp + tn, outcomes.len()), recall, precision, f1, tp, fp, fn_, tn })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruthRow {
    pub carriable_id: String,
    pub category: String,
    pub receptacle_id: String,
    pub actually_misplaced: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MessyScene {
    pub id: String,
    pub graph: SceneGraph,
    pub truth: Vec<TruthRow>,
}

fn fresh_id(graph: &SceneGraph, category: &str, index: usize) -> String {
    let stem: String = category.chars().map(|c| if c.is_alphanumeric() { c.to_ascii_lowercase() } else { '_' }).collect();
    let mut id = format!("{stem}_m{index:03}");
    while graph.nodes.contains_key(&id) {
        id.push('x');
    }
    id
}

/// Drops `n_place` pool items onto receptacles drawn uniformly with
/// replacement. Each new carriable is an axis-aligned cube centred on the
/// receptacle's top face with explicit on/support edges, and joins the
/// receptacle's room, area and keyframe.
pub fn generate_messy_scene(
    id: &str,
    base: &SceneGraph,
    pool: &[GroundTruthAnnotation],
    n_place: usize,
    seed: u64,
    half_extent: f64,
) -> Result<MessyScene, EvalError> {
    if n_place == 0 || pool.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    if !(half_extent.is_finite() && half_extent > 0.0) {
        return Err(EvalError::InvalidHalfExtent);
    }
    let receptacles: Vec<&SceneNode> =
        base.nodes.values().filter(|n| n.instance.rtype == RearrangementType::Receptacle).collect();
    if receptacles.is_empty() {
        return Err(EvalError::NoReceptacles);
    }
    let receptacle_ids: Vec<String> = receptacles.iter().map(|n| n.id().to_string()).collect();
    let mut rng = seeded_for(seed, id);
    let mut graph = base.clone();
    let mut truth = Vec::with_capacity(n_place);
    for i in 0..n_place {
        let item = &pool[rng.gen_range(0..pool.len())];
        let rec = &graph.nodes[&receptacle_ids[rng.gen_range(0..receptacle_ids.len())]];
        let new_id = fresh_id(&graph, &item.carriable, i);
        let bbox = &rec.instance.bbox;
        let center = [bbox.center[0], bbox.center[1], bbox.top_z() + half_extent];
        let pixel_counts = rec.instance.pixel_counts.iter().map(|(f, c)| (f.clone(), if *c == 0 { 0 } else { (c / 10).max(1) })).collect();
        let instance = ObjectInstance {
            id: new_id.clone(),
            category: item.carriable.clone(),
            room: rec.instance.room.clone(),
            rtype: RearrangementType::Carriable,
            bbox: OrientedBox::axis_aligned(center, [half_extent; 3]).map_err(|_| EvalError::InvalidHalfExtent)?,
            pixel_counts,
            pixel_centroids: rec.instance.pixel_centroids.clone(),
        };
        let node = SceneNode { instance, keyframe: rec.keyframe.clone(), affordance: None };
        let rec_id = rec.id().to_string();
        graph.edges.insert(Edge::new(new_id.clone(), rec_id.clone(), EdgeKind::On));
        graph.edges.insert(Edge::new(rec_id.clone(), new_id.clone(), EdgeKind::Support));
        if let Some(h) = graph.hierarchy.as_mut() {
            if let Some(area) = h.rooms.values_mut().flatten().find(|a| a.member_ids.contains(&rec_id)) {
                let pos = area.member_ids.binary_search(&new_id).unwrap_or_else(|p| p);
                area.member_ids.insert(pos, new_id.clone());
            }
        }
        graph.nodes.insert(new_id.clone(), node);
        truth.push(TruthRow {
            carriable_id: new_id,
            category: item.carriable.clone(),
            actually_misplaced: !item.ranked_receptacles.contains(&rec_id),
            receptacle_id: rec_id,
        });
    }
    Ok(MessyScene { id: id.to_string(), graph, truth })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    pub tidy: TidyConfig,
    pub enhance: EnhanceConfig,
    /// Used when a scene arrives without a hierarchy.
    pub tau: f64,
    pub max_k: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            tidy: TidyConfig::default(),
            enhance: EnhanceConfig::default(),
            tau: crate::hierarchy::DEFAULT_TAU,
            max_k: DEFAULT_MAX_K,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub scene_id: String,
    pub carriable_id: String,
    pub category: String,
    pub receptacle_id: String,
    pub score: u8,
    pub predicted_misplaced: bool,
    pub actually_misplaced: bool,
    /// NDCG@1..=max_k.
    pub ndcg: Vec<f64>,
    /// Predicted ranking, truncated to max_k.
    pub ranked: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    /// Mean NDCG@k over carriables, k = 1..=max_k.
    pub ndcg: BTreeMap<usize, f64>,
    pub detection: DetectionMetrics,
    pub rows: Vec<ReportRow>,
    pub failures: Vec<Warning>,
    pub scenes: usize,
}

/// Brings a scene to an enhanced state: clusters and enhances it if needed,
/// or only analyses carriables that lack an affordance.
pub fn prepare_aeg<B: Backend + ?Sized>(graph: &SceneGraph, backend: &B, config: &BenchmarkConfig) -> Result<(SceneGraph, Vec<Warning>), EvalError> {
    let mut g = graph.clone();
    if g.hierarchy.is_none() {
        g.hierarchy = Some(build_hierarchy(&g, config.tau)?);
        g.enhanced = false;
    }
    if !g.enhanced {
        let out = enhance(&g, backend, &config.enhance)?;
        return Ok((out.graph, out.warnings));
    }
    let prompter = &config.enhance.prompter;
    let missing: Vec<&SceneNode> = g
        .nodes
        .values()
        .filter(|n| n.instance.rtype == RearrangementType::Carriable && n.affordance.is_none())
        .collect();
    let reqs = missing.iter().map(|n| carriable_request(n, &g, prompter)).collect::<Result<Vec<_>, _>>()?;
    let ids: Vec<String> = missing.iter().map(|n| n.id().to_string()).collect();
    let results = prompter.run_batch(backend, &reqs, parse_carriable);
    let mut warnings = Vec::new();
    for (id, r) in ids.into_iter().zip(results) {
        match r {
            Ok((c, _)) => g.nodes.get_mut(&id).expect("node exists").affordance = Some(NodeAffordance::Carriable(c)),
            Err(e) => warnings.push(Warning::new(id, format!("carriable analysis failed: {e}"))),
        }
    }
    Ok((g, warnings))
}

fn evaluate_scene<B: Backend + ?Sized>(
    scene: &MessyScene,
    annotations: &[GroundTruthAnnotation],
    backend: &B,
    config: &BenchmarkConfig,
    failures: &mut Vec<Warning>,
) -> Result<Vec<ReportRow>, EvalError> {
    let (aeg, warnings) = prepare_aeg(&scene.graph, backend, config)?;
    failures.extend(warnings.into_iter().map(|w| Warning::new(format!("{}/{}", scene.id, w.subject), w.message)));
    let detection = detect_misplaced(&aeg, backend, &config.tidy)?;
    let scores: BTreeMap<&str, u8> = detection.all.iter().map(|s| (s.carriable_id.as_str(), s.score)).collect();
    let db = build_receptacle_db(&aeg, config.tidy.allow_local_fallback)?;
    let mut scorer = Scorer::new(&config.tidy.prompter, ScorerMode::RetrievalRating, config.tidy.variant);
    let mut rows = Vec::new();
    for t in &scene.truth {
        let subject = format!("{}/{}", scene.id, t.carriable_id);
        let Some(gt) = annotation_for(annotations, &t.carriable_id, &t.category) else {
            failures.push(Warning::new(subject, "no annotation"));
            continue;
        };
        let Some(&score) = scores.get(t.carriable_id.as_str()) else {
            failures.push(Warning::new(subject, "detection failed"));
            continue;
        };
        let Some(node) = aeg.nodes.get(&t.carriable_id) else {
            failures.push(Warning::new(subject, "carriable missing from scene"));
            continue;
        };
        let ranked = match rank_receptacles(&Query::carriable(node), &db, &mut scorer, &config.tidy.task, backend) {
            Ok(r) => r,
            Err(e) => {
                failures.push(Warning::new(subject, format!("retrieval failed: {e}")));
                continue;
            }
        };
        let ids: Vec<String> = ranked.into_iter().map(|(id, _)| id).collect();
        let ndcg = (1..=config.max_k).map(|k| ndcg_at_k(&ids, &gt.ranked_receptacles, k)).collect::<Result<Vec<_>, _>>()?;
        rows.push(ReportRow {
            scene_id: scene.id.clone(),
            carriable_id: t.carriable_id.clone(),
            category: t.category.clone(),
            receptacle_id: t.receptacle_id.clone(),
            score,
            predicted_misplaced: score <= config.tidy.threshold,
            actually_misplaced: t.actually_misplaced,
            ndcg,
            ranked: ids.into_iter().take(config.max_k).collect(),
        });
    }
    failures.extend(scorer.warnings.into_iter().map(|w| Warning::new(format!("{}/{}", scene.id, w.subject), w.message)));
    Ok(rows)
}

/// Enhances each scene as needed, runs detection, ranks every receptacle for
/// each annotated carriable and aggregates NDCG@1..=max_k and detection
/// metrics. Failed scenes are skipped and listed in `failures`.
pub fn run_benchmark<B: Backend + ?Sized>(
    scenes: &[MessyScene],
    annotations: &[GroundTruthAnnotation],
    backend: &B,
    config: &BenchmarkConfig,
) -> Result<BenchmarkReport, EvalError> {
    if scenes.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    if config.max_k == 0 {
        return Err(EvalError::InvalidK);
    }
    let mut order: Vec<&MessyScene> = scenes.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for scene in order {
        match evaluate_scene(scene, annotations, backend, config, &mut failures) {
            Ok(r) => rows.extend(r),
            Err(e) => {
                log::warn!("scene {} skipped: {e}", scene.id);
                failures.push(Warning::new(scene.id.clone(), format!("scene skipped: {e}")));
            }
        }
    }
    if rows.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let n = rows.len() as f64;
    let ndcg = (1..=config.max_k).map(|k| (k, rows.iter().map(|r| r.ndcg[k - 1]).sum::<f64>() / n)).collect();
    let outcomes: Vec<DetectionOutcome> = rows
        .iter()
        .map(|r| DetectionOutcome { predicted_misplaced: r.predicted_misplaced, actually_misplaced: r.actually_misplaced })
        .collect();
    Ok(BenchmarkReport { ndcg, detection: detection_metrics(&outcomes)?, rows, failures, scenes: scenes.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{MockBackend, MockRules, ScoreRule};
    use crate::scenegraph::tests::inst;
    use crate::scenegraph::{build_scene_graph, RelationConfig};
    use alloc::vec;
    use proptest::prelude::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn ndcg_examples() {
        let gt = s(&["A", "B", "C"]);
        assert!((ndcg_at_k(&s(&["A", "B", "C", "D"]), &gt, 3).unwrap() - 1.0).abs() < 1e-12);
        // dcg 3 + 0 + 2/2 = 4, idcg 3 + 2/log2(3) + 1/2
        let idcg = 3.0 + 2.0 / libm::log2(3.0) + 0.5;
        let v = ndcg_at_k(&s(&["A", "X", "B"]), &gt, 3).unwrap();
        assert!((v - 4.0 / idcg).abs() < 1e-12);
        assert!((v - 0.8400).abs() < 1e-4);
        assert_eq!(ndcg_at_k(&s(&["X", "Y"]), &gt, 2).unwrap(), 0.0);
        assert_eq!(ndcg_at_k(&s(&["A"]), &gt, 0).unwrap_err(), EvalError::InvalidK);
        // padding and repeats
        assert!((ndcg_at_k(&s(&["A"]), &s(&["A"]), 8).unwrap() - 1.0).abs() < 1e-12);
        assert!(ndcg_at_k(&s(&["A", "A"]), &s(&["A", "B"]), 2).unwrap() < 1.0);
    }

    #[test]
    fn metric_examples() {
        let mk = |p, a, n| core::iter::repeat_n(DetectionOutcome { predicted_misplaced: p, actually_misplaced: a }, n);
        let v: Vec<_> = mk(true, true, 8).chain(mk(true, false, 2)).chain(mk(false, true, 2)).chain(mk(false, false, 8)).collect();
        let m = detection_metrics(&v).unwrap();
        for x in [m.precision, m.recall, m.f1, m.accuracy] {
            assert!((x - 0.8).abs() < 1e-12);
        }
        let v: Vec<_> = mk(false, true, 3).chain(mk(false, false, 1)).collect();
        let m = detection_metrics(&v).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        assert_eq!(detection_metrics(&[]).unwrap_err(), EvalError::EmptyInput);
    }

    fn base(n_receptacles: usize) -> SceneGraph {
        let instances = (0..n_receptacles)
            .map(|i| inst(&format!("rec_{i}"), RearrangementType::Receptacle, [i as f64 * 3.0, 0.0, 0.4], [0.5, 0.5, 0.4]))
            .collect();
        let frames = [("f1".to_string(), "f1.png".to_string())].into_iter().collect();
        build_scene_graph(instances, frames, &RelationConfig::default()).unwrap()
    }

    fn pool() -> Vec<GroundTruthAnnotation> {
        vec![
            GroundTruthAnnotation { carriable: "book".into(), ranked_receptacles: s(&["rec_0", "rec_1"]) },
            GroundTruthAnnotation { carriable: "cup".into(), ranked_receptacles: s(&["rec_2"]) },
        ]
    }

    #[test]
    fn messy_scene_construction() {
        let b = base(5);
        let p = pool();
        let m = generate_messy_scene("s0", &b, &p, 10, 7, 0.1).unwrap();
        assert_eq!(m.graph.nodes.len(), 15);
        m.graph.validate().unwrap();
        for t in &m.truth {
            let on: Vec<&str> = m.graph.targets(&t.carriable_id, &EdgeKind::On).collect();
            assert_eq!(on, [t.receptacle_id.as_str()]);
            let gt = annotation_for(&p, &t.carriable_id, &t.category).unwrap();
            assert_eq!(t.actually_misplaced, !gt.ranked_receptacles.contains(&t.receptacle_id));
            let n = &m.graph.nodes[&t.carriable_id];
            let r = &m.graph.nodes[&t.receptacle_id];
            assert!((n.instance.bbox.bottom_z() - r.instance.bbox.top_z()).abs() < 1e-12);
        }
        assert_eq!(m, generate_messy_scene("s0", &b, &pool(), 10, 7, 0.1).unwrap());
        assert_ne!(m, generate_messy_scene("s0", &b, &pool(), 10, 8, 0.1).unwrap());
        let only_other = build_scene_graph(
            vec![inst("lamp_1", RearrangementType::Other, [0.0; 3], [0.2; 3])],
            [("f1".to_string(), "f1.png".to_string())].into_iter().collect(),
            &RelationConfig::default(),
        )
        .unwrap();
        assert_eq!(generate_messy_scene("s", &only_other, &pool(), 1, 0, 0.1).unwrap_err(), EvalError::NoReceptacles);
    }

    #[test]
    fn misplacement_rate_converges() {
        let b = base(5);
        let book = vec![pool()[0].clone()];
        let n = 10_000;
        let m = generate_messy_scene("rate", &b, &book, n, 11, 0.1).unwrap();
        let rate = m.truth.iter().filter(|t| t.actually_misplaced).count() as f64 / n as f64;
        let p = 1.0 - 2.0 / 5.0;
        let sigma = libm::sqrt(p * (1.0 - p) / n as f64);
        assert!((rate - p).abs() <= 3.0 * sigma, "rate {rate}");
    }

    fn scored(pool: &[GroundTruthAnnotation], receptacles: usize, inverted: bool) -> MockRules {
        let mut r = MockRules::default();
        for a in pool {
            for i in 0..receptacles {
                let id = format!("rec_{i}");
                let score = match a.ranked_receptacles.iter().position(|x| x == &id) {
                    Some(rank) if !inverted => 100 - 10 * rank as i64,
                    Some(_) => 0,
                    None if inverted => 90,
                    None => 0,
                };
                r.score_rules.push(ScoreRule { carriable: a.carriable.clone(), receptacle: id, score });
            }
        }
        r
    }

    #[test]
    fn benchmark_with_perfect_and_inverted_rules() {
        let b = base(4);
        let scenes: Vec<MessyScene> =
            (0..3).map(|i| generate_messy_scene(&format!("s{i}"), &b, &pool(), 4, 1, 0.1).unwrap()).collect();
        let cfg = BenchmarkConfig::default();
        let report = run_benchmark(&scenes, &pool(), &MockBackend::new(scored(&pool(), 4, false)), &cfg).unwrap();
        assert_eq!(report.rows.len(), 12);
        assert!((report.ndcg[&1] - 1.0).abs() < 1e-12);
        assert!((report.detection.f1 - 1.0).abs() < 1e-12, "{:?}", report.detection);
        let report = run_benchmark(&scenes, &pool(), &MockBackend::new(scored(&pool(), 4, true)), &cfg).unwrap();
        assert_eq!(report.ndcg[&1], 0.0);
        assert_eq!(run_benchmark(&[], &pool(), &MockBackend::new(MockRules::default()), &cfg).unwrap_err(), EvalError::EmptyInput);
    }

    #[test]
    fn annotation_validation() {
        let b = base(2);
        let ok = GroundTruthAnnotation { carriable: "x".into(), ranked_receptacles: s(&["rec_0"]) };
        ok.validate(&b).unwrap();
        for bad in [vec![], s(&["rec_0", "rec_0"]), s(&["nope"]), s(&["rec_0", "rec_1", "a", "b", "c", "d"])] {
            assert!(GroundTruthAnnotation { carriable: "x".into(), ranked_receptacles: bad }.validate(&b).is_err());
        }
    }

    fn confusion() -> impl Strategy<Value = Vec<DetectionOutcome>> {
        proptest::collection::vec(
            (any::<bool>(), any::<bool>()).prop_map(|(p, a)| DetectionOutcome { predicted_misplaced: p, actually_misplaced: a }),
            1..60,
        )
    }

    proptest! {
        #[test]
        fn metrics_match_direct_count(v in confusion()) {
            let m = detection_metrics(&v).unwrap();
            let count = |p: bool, a: bool| v.iter().filter(|o| o.predicted_misplaced == p && o.actually_misplaced == a).count();
            let (tp, fp, fn_, tn) = (count(true, true), count(true, false), count(false, true), count(false, false));
            prop_assert_eq!((m.tp, m.fp, m.fn_, m.tn), (tp, fp, fn_, tn));
            prop_assert_eq!(m.accuracy, (tp + tn) as f64 / v.len() as f64);
            if m.precision + m.recall > 0.0 {
                prop_assert_eq!(m.f1, 2.0 * m.precision * m.recall / (m.precision + m.recall));
            }
            for x in [m.accuracy, m.precision, m.recall, m.f1] {
                prop_assert!((0.0..=1.0).contains(&x));
            }
        }

        #[test]
        fn adjacent_swap_never_helps(l in 1usize..6, extra in 0usize..4, perm_seed in any::<u64>(), k in 1usize..9, pos in 0usize..8) {
            let gt: Vec<String> = (0..l).map(|i| format!("g{i}")).collect();
            let mut pred: Vec<String> = gt.iter().cloned().chain((0..extra).map(|i| format!("x{i}"))).collect();
            let mut rng = crate::rng::seeded(perm_seed);
            for i in (1..pred.len()).rev() {
                pred.swap(i, rand::Rng::gen_range(&mut rng, 0..=i));
            }
            prop_assume!(pos + 1 < pred.len());
            let rel = |x: &String| gt.iter().position(|g| g == x).map_or(0, |r| l - r);
            let mut swapped = pred.clone();
            swapped.swap(pos, pos + 1);
            let before = ndcg_at_k(&pred, &gt, k).unwrap();
            let after = ndcg_at_k(&swapped, &gt, k).unwrap();
            if rel(&pred[pos]) >= rel(&pred[pos + 1]) {
                prop_assert!(after <= before + 1e-12);
            }
            let perfect = pred.iter().take(k.min(l)).eq(gt.iter().take(k.min(l)));
            prop_assert_eq!(perfect, (before - 1.0).abs() < 1e-12);
        }
    }
}
