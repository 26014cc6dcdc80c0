//! On-disk JSON formats and their conversion to core types.
//!
//! One graph file layout covers the raw scene input, the scene graph, the
//! clustered graph and the AEG; later stages add keys.

use std::collections::{BTreeMap, BTreeSet};

use aeg_core::affordance::Stage;
use aeg_core::eval::{BenchmarkReport, GroundTruthAnnotation, TruthRow};
use aeg_core::hierarchy::{Area, Hierarchy};
use aeg_core::llm::{CannedAffordance, ScoreRule, SemanticRule};
use aeg_core::scenegraph::{Edge, NodeAffordance};
use aeg_core::tidy::{PlacementScore, PlanEntry};
use aeg_core::{
    AffordanceRecord, AreaProfile, CarriableAffordance, EdgeKind, MockRules, ObjectInstance, OrientedBox,
    RearrangementType, SceneGraph, SceneNode, Warning,
};
use serde::{Deserialize, Serialize};

use crate::error::AegError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RtypeDto {
    Carriable,
    Receptacle,
    Other,
}

impl From<RtypeDto> for RearrangementType {
    fn from(r: RtypeDto) -> Self {
        match r {
            RtypeDto::Carriable => Self::Carriable,
            RtypeDto::Receptacle => Self::Receptacle,
            RtypeDto::Other => Self::Other,
        }
    }
}

impl From<RearrangementType> for RtypeDto {
    fn from(r: RearrangementType) -> Self {
        match r {
            RearrangementType::Carriable => Self::Carriable,
            RearrangementType::Receptacle => Self::Receptacle,
            RearrangementType::Other => Self::Other,
        }
    }
}

fn identity9() -> [f64; 9] {
    [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxDto {
    pub center: [f64; 3],
    pub half_extents: [f64; 3],
    /// Row-major.
    #[serde(default = "identity9")]
    pub rotation: [f64; 9],
}

impl BoxDto {
    pub fn to_core(&self) -> Result<OrientedBox, String> {
        let r = &self.rotation;
        let rot = [[r[0], r[1], r[2]], [r[3], r[4], r[5]], [r[6], r[7], r[8]]];
        OrientedBox::new(self.center, self.half_extents, rot).map_err(|e| e.to_string())
    }

    pub fn from_core(b: &OrientedBox) -> Self {
        let m = &b.rotation;
        Self {
            center: b.center,
            half_extents: b.half_extents,
            rotation: [m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2]],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageDto {
    Local,
    Updated,
}

/// Affordance attached to a node. `record` is used for receptacles and
/// other objects, `carriable` for carriables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum AffordanceDto {
    Record {
        geometry_position: String,
        relationship: String,
        unique_usage: String,
        fine_grained_category: String,
        stage: StageDto,
    },
    Carriable {
        geometry_functionality: String,
        fine_grained_category: String,
    },
}

impl AffordanceDto {
    fn to_core(&self) -> NodeAffordance {
        match self.clone() {
            Self::Record { geometry_position, relationship, unique_usage, fine_grained_category, stage } => {
                NodeAffordance::Receptacle(AffordanceRecord {
                    geometry_position,
                    relationship,
                    unique_usage,
                    fine_grained_category,
                    stage: match stage {
                        StageDto::Local => Stage::Local,
                        StageDto::Updated => Stage::Updated,
                    },
                })
            }
            Self::Carriable { geometry_functionality, fine_grained_category } => {
                NodeAffordance::Carriable(CarriableAffordance { geometry_functionality, fine_grained_category })
            }
        }
    }

    fn from_core(a: &NodeAffordance) -> Self {
        match a.clone() {
            NodeAffordance::Receptacle(r) => Self::Record {
                geometry_position: r.geometry_position,
                relationship: r.relationship,
                unique_usage: r.unique_usage,
                fine_grained_category: r.fine_grained_category,
                stage: match r.stage {
                    Stage::Local => StageDto::Local,
                    Stage::Updated => StageDto::Updated,
                },
            },
            NodeAffordance::Carriable(c) => Self::Carriable {
                geometry_functionality: c.geometry_functionality,
                fine_grained_category: c.fine_grained_category,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceDto {
    pub id: String,
    pub category: String,
    pub room: String,
    pub rtype: RtypeDto,
    #[serde(rename = "box")]
    pub bbox: BoxDto,
    pub pixel_counts: BTreeMap<String, u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixel_centroids: Option<BTreeMap<String, [f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub affordance: Option<AffordanceDto>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeDto {
    pub src: String,
    pub dst: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl EdgeDto {
    fn from_core(e: &Edge) -> Self {
        let label = match &e.kind {
            EdgeKind::Semantic(l) => Some(l.clone()),
            _ => None,
        };
        Self { src: e.src.clone(), dst: e.dst.clone(), kind: e.kind.name().to_string(), label }
    }

    fn to_core(&self) -> Result<Edge, String> {
        let kind = match (self.kind.as_str(), &self.label) {
            ("near", _) => EdgeKind::Near,
            ("on", _) => EdgeKind::On,
            ("support", _) => EdgeKind::Support,
            ("semantic", Some(l)) => EdgeKind::Semantic(l.clone()),
            ("semantic", None) => return Err("semantic edge needs a label".into()),
            (other, _) => return Err(format!("unknown edge kind `{other}`")),
        };
        Ok(Edge::new(self.src.clone(), self.dst.clone(), kind))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileDto {
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AreaDto {
    pub id: String,
    pub members: Vec<String>,
    pub keyframe: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<ProfileDto>,
}

/// Scene input, scene graph, clustered graph or AEG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFile {
    /// Effective run configuration of the stage that wrote the file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
    pub frames: BTreeMap<String, String>,
    pub instances: Vec<InstanceDto>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<EdgeDto>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keyframes: Option<BTreeMap<String, String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hierarchy: Option<BTreeMap<String, Vec<AreaDto>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic_edges: Option<Vec<EdgeDto>>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub enhanced: bool,
}

impl GraphFile {
    /// True when the file already carries relations and keyframes.
    pub fn is_graph(&self) -> bool {
        self.edges.is_some() && self.keyframes.is_some()
    }

    pub fn instances(&self, file: &str) -> Result<Vec<ObjectInstance>, AegError> {
        self.instances
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let bbox = d.bbox.to_core().map_err(|m| AegError::schema(file, format!("instances[{i}].box"), m))?;
                Ok(ObjectInstance {
                    id: d.id.clone(),
                    category: d.category.clone(),
                    room: d.room.clone(),
                    rtype: d.rtype.into(),
                    bbox,
                    pixel_counts: d.pixel_counts.clone(),
                    pixel_centroids: d.pixel_centroids.clone(),
                })
            })
            .collect()
    }

    /// Converts a graph file; `file` names it in errors.
    pub fn to_graph(&self, file: &str) -> Result<SceneGraph, AegError> {
        let schema = |field: String, msg: String| AegError::schema(file, field, msg);
        let (Some(edges), Some(keyframes)) = (&self.edges, &self.keyframes) else {
            return Err(schema(String::new(), "not a scene graph: `edges` and `keyframes` are required".into()));
        };
        let mut graph = SceneGraph { frames: self.frames.clone(), enhanced: self.enhanced, ..SceneGraph::default() };
        for (i, (inst, dto)) in self.instances(file)?.into_iter().zip(&self.instances).enumerate() {
            let keyframe = keyframes
                .get(&inst.id)
                .cloned()
                .ok_or_else(|| schema("keyframes".into(), format!("missing keyframe for `{}`", inst.id)))?;
            let affordance = dto.affordance.as_ref().map(AffordanceDto::to_core);
            let carriable = inst.rtype == RearrangementType::Carriable;
            if let Some(a) = &affordance {
                if carriable != matches!(a, NodeAffordance::Carriable(_)) {
                    return Err(schema(
                        format!("instances[{i}].affordance.kind"),
                        format!("affordance kind does not match rtype `{}`", inst.rtype),
                    ));
                }
            }
            let id = inst.id.clone();
            if graph.nodes.insert(id.clone(), SceneNode { instance: inst, keyframe, affordance }).is_some() {
                return Err(schema(format!("instances[{i}].id"), format!("duplicate id `{id}`")));
            }
        }
        if let Some(extra) = keyframes.keys().find(|k| !graph.nodes.contains_key(*k)) {
            return Err(schema("keyframes".into(), format!("keyframe for unknown node `{extra}`")));
        }
        let semantic = self.semantic_edges.iter().flatten().enumerate().map(|(i, e)| (format!("semantic_edges[{i}]"), e));
        for (field, dto) in edges.iter().enumerate().map(|(i, e)| (format!("edges[{i}]"), e)).chain(semantic) {
            let edge = dto.to_core().map_err(|m| schema(format!("{field}.kind"), m))?;
            for (end, id) in [("src", &edge.src), ("dst", &edge.dst)] {
                if !graph.nodes.contains_key(id) {
                    return Err(schema(format!("{field}.{end}"), format!("unknown node `{id}`")));
                }
            }
            if field.starts_with("edges") != edge.kind.is_spatial() {
                return Err(schema(format!("{field}.kind"), "semantic edges belong in `semantic_edges`".into()));
            }
            graph.edges.insert(edge);
        }
        if let Some(rooms) = &self.hierarchy {
            let mut h = Hierarchy::default();
            for (room, areas) in rooms {
                let areas = areas
                    .iter()
                    .map(|a| Area {
                        id: a.id.clone(),
                        room: room.clone(),
                        member_ids: a.members.clone(),
                        keyframe: a.keyframe.clone(),
                        profile: a.profile.as_ref().map(|p| AreaProfile { name: p.name.clone(), description: p.description.clone() }),
                    })
                    .collect();
                h.rooms.insert(room.clone(), areas);
            }
            graph.hierarchy = Some(h);
        }
        graph.validate().map_err(|e| schema(String::new(), e.to_string()))?;
        Ok(graph)
    }

    pub fn from_graph(graph: &SceneGraph, config: Option<serde_json::Value>) -> Self {
        let instances = graph
            .nodes
            .values()
            .map(|n| {
                let i = &n.instance;
                InstanceDto {
                    id: i.id.clone(),
                    category: i.category.clone(),
                    room: i.room.clone(),
                    rtype: i.rtype.into(),
                    bbox: BoxDto::from_core(&i.bbox),
                    pixel_counts: i.pixel_counts.clone(),
                    pixel_centroids: i.pixel_centroids.clone(),
                    affordance: n.affordance.as_ref().map(AffordanceDto::from_core),
                }
            })
            .collect();
        let edges = graph.edges.iter().filter(|e| e.kind.is_spatial()).map(EdgeDto::from_core).collect();
        let semantic: Vec<EdgeDto> = graph.semantic_edges().map(EdgeDto::from_core).collect();
        let hierarchy = graph.hierarchy.as_ref().map(|h| {
            h.rooms
                .iter()
                .map(|(room, areas)| {
                    let areas = areas
                        .iter()
                        .map(|a| AreaDto {
                            id: a.id.clone(),
                            members: a.member_ids.clone(),
                            keyframe: a.keyframe.clone(),
                            profile: a.profile.as_ref().map(|p| ProfileDto { name: p.name.clone(), description: p.description.clone() }),
                        })
                        .collect();
                    (room.clone(), areas)
                })
                .collect()
        });
        Self {
            config,
            frames: graph.frames.clone(),
            instances,
            edges: Some(edges),
            keyframes: Some(graph.nodes.iter().map(|(id, n)| (id.clone(), n.keyframe.clone())).collect()),
            hierarchy,
            semantic_edges: (graph.enhanced || !semantic.is_empty()).then_some(semantic),
            enhanced: graph.enhanced,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationDto {
    pub carriable: String,
    pub ranked_receptacles: Vec<String>,
}

/// Reads an annotation array, rejecting empty or duplicate ranked lists.
pub fn annotations(dtos: Vec<AnnotationDto>, file: &str) -> Result<Vec<GroundTruthAnnotation>, AegError> {
    let mut seen = BTreeSet::new();
    dtos.into_iter()
        .enumerate()
        .map(|(i, d)| {
            if d.carriable.trim().is_empty() {
                return Err(AegError::schema(file, format!("[{i}].carriable"), "empty carriable"));
            }
            if !seen.insert(d.carriable.clone()) {
                return Err(AegError::schema(file, format!("[{i}].carriable"), format!("duplicate entry `{}`", d.carriable)));
            }
            let unique: BTreeSet<&String> = d.ranked_receptacles.iter().collect();
            if d.ranked_receptacles.is_empty() || unique.len() != d.ranked_receptacles.len() {
                return Err(AegError::schema(file, format!("[{i}].ranked_receptacles"), "must be non-empty without repeats"));
            }
            Ok(GroundTruthAnnotation { carriable: d.carriable, ranked_receptacles: d.ranked_receptacles })
        })
        .collect()
}

fn default_mock_score() -> i64 {
    MockRules::default().default_score
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRuleDto {
    pub carriable: String,
    pub receptacle: String,
    pub score: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CannedDto {
    pub geometry_position: String,
    pub relationship: String,
    pub unique_usage: String,
    pub fine_grained_category: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemanticRuleDto {
    pub target: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRulesFile {
    #[serde(default = "default_mock_score")]
    pub default_score: i64,
    #[serde(default)]
    pub score_rules: Vec<ScoreRuleDto>,
    #[serde(default)]
    pub affordance_rules: BTreeMap<String, CannedDto>,
    #[serde(default)]
    pub semantic_rules: BTreeMap<String, Vec<SemanticRuleDto>>,
}

impl From<MockRulesFile> for MockRules {
    fn from(f: MockRulesFile) -> Self {
        MockRules {
            default_score: f.default_score,
            score_rules: f
                .score_rules
                .into_iter()
                .map(|r| ScoreRule { carriable: r.carriable, receptacle: r.receptacle, score: r.score })
                .collect(),
            affordance_rules: f
                .affordance_rules
                .into_iter()
                .map(|(k, a)| {
                    (
                        k,
                        CannedAffordance {
                            geometry_position: a.geometry_position,
                            relationship: a.relationship,
                            unique_usage: a.unique_usage,
                            fine_grained_category: a.fine_grained_category,
                        },
                    )
                })
                .collect(),
            semantic_rules: f
                .semantic_rules
                .into_iter()
                .map(|(k, v)| (k, v.into_iter().map(|r| SemanticRule { target: r.target, label: r.label }).collect()))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WarningDto {
    pub subject: String,
    pub message: String,
}

impl From<&Warning> for WarningDto {
    fn from(w: &Warning) -> Self {
        Self { subject: w.subject.clone(), message: w.message.clone() }
    }
}

pub fn warning_dtos(ws: &[Warning]) -> Vec<WarningDto> {
    ws.iter().map(WarningDto::from).collect()
}

/// Sibling report of non-fatal issues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarningsFile {
    pub stage: String,
    pub warnings: Vec<WarningDto>,
    /// Nodes or items that were skipped.
    #[serde(default)]
    pub failed: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreDto {
    pub carriable_id: String,
    pub receptacle_id: String,
    pub score: u8,
    pub analysis: String,
}

impl From<&PlacementScore> for ScoreDto {
    fn from(s: &PlacementScore) -> Self {
        Self {
            carriable_id: s.carriable_id.clone(),
            receptacle_id: s.receptacle_id.clone(),
            score: s.score,
            analysis: s.analysis.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisplacedFile {
    pub config: serde_json::Value,
    /// Carriables scored at or below the threshold, ascending by score.
    pub misplaced: Vec<ScoreDto>,
    /// Every carriable's score for its current receptacle.
    pub scores: Vec<ScoreDto>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedDto {
    pub receptacle_id: String,
    pub score: u8,
}

fn ranked(list: &[(String, u8)]) -> Vec<RankedDto> {
    list.iter().map(|(id, s)| RankedDto { receptacle_id: id.clone(), score: *s }).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanItemDto {
    pub carriable_id: String,
    pub chosen_receptacle_id: String,
    pub analysis: String,
    /// Top-k receptacles shown to the decision prompt.
    pub candidates: Vec<RankedDto>,
    pub ranked: Vec<RankedDto>,
}

impl From<&PlanEntry> for PlanItemDto {
    fn from(p: &PlanEntry) -> Self {
        let d = &p.decision;
        Self {
            carriable_id: d.carriable_id.clone(),
            chosen_receptacle_id: d.chosen_receptacle_id.clone(),
            analysis: d.analysis.clone(),
            candidates: ranked(&d.candidates),
            ranked: ranked(&p.ranked),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanFile {
    pub config: serde_json::Value,
    pub plan: Vec<PlanItemDto>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapFile {
    pub config: serde_json::Value,
    pub activity: String,
    pub scores: BTreeMap<String, u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthRowDto {
    pub carriable_id: String,
    pub category: String,
    pub receptacle_id: String,
    pub actually_misplaced: bool,
}

impl From<&TruthRow> for TruthRowDto {
    fn from(t: &TruthRow) -> Self {
        Self {
            carriable_id: t.carriable_id.clone(),
            category: t.category.clone(),
            receptacle_id: t.receptacle_id.clone(),
            actually_misplaced: t.actually_misplaced,
        }
    }
}

impl From<TruthRowDto> for TruthRow {
    fn from(t: TruthRowDto) -> Self {
        Self {
            carriable_id: t.carriable_id,
            category: t.category,
            receptacle_id: t.receptacle_id,
            actually_misplaced: t.actually_misplaced,
        }
    }
}

/// Index of a generated benchmark directory: scene id → truth rows. Each
/// scene graph sits next to it as `<scene id>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
    pub scenes: BTreeMap<String, Vec<TruthRowDto>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionDto {
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRowDto {
    pub scene_id: String,
    pub carriable_id: String,
    pub category: String,
    pub receptacle_id: String,
    pub score: u8,
    pub predicted_misplaced: bool,
    pub actually_misplaced: bool,
    /// NDCG@1..=max_k; empty when the carriable has no annotation.
    pub ndcg: Vec<f64>,
    pub ranked: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub config: serde_json::Value,
    pub relevance: String,
    pub averaging: String,
    pub scenes: usize,
    /// Mean NDCG keyed by k.
    pub ndcg: BTreeMap<usize, f64>,
    pub detection: DetectionDto,
    pub failures: Vec<WarningDto>,
    pub rows: Vec<ReportRowDto>,
}

impl ReportFile {
    pub fn new(report: &BenchmarkReport, config: serde_json::Value) -> Self {
        let d = &report.detection;
        Self {
            config,
            relevance: aeg_core::eval::RELEVANCE_SCHEME.to_string(),
            averaging: aeg_core::eval::NDCG_AVERAGING.to_string(),
            scenes: report.scenes,
            ndcg: report.ndcg.clone(),
            detection: DetectionDto {
                accuracy: d.accuracy,
                recall: d.recall,
                precision: d.precision,
                f1: d.f1,
                tp: d.tp,
                fp: d.fp,
                fn_: d.fn_,
                tn: d.tn,
            },
            failures: warning_dtos(&report.failures),
            rows: report
                .rows
                .iter()
                .map(|r| ReportRowDto {
                    scene_id: r.scene_id.clone(),
                    carriable_id: r.carriable_id.clone(),
                    category: r.category.clone(),
                    receptacle_id: r.receptacle_id.clone(),
                    score: r.score,
                    predicted_misplaced: r.predicted_misplaced,
                    actually_misplaced: r.actually_misplaced,
                    ndcg: r.ndcg.clone(),
                    ranked: r.ranked.clone(),
                })
                .collect(),
        }
    }
}
