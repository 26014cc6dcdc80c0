//! Context-induced affordance analysis: local analysis per node, area
//! profiles, room context, semantic edges and the global update pass.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

use crate::hierarchy::Area;
use crate::llm::prompts::fields;
use crate::llm::{fields_parser, hints, slots, Backend, LlmError, PromptRequest, Prompter, StructuredFields, TemplateId};
use crate::scenegraph::{Edge, EdgeKind, NodeAffordance, RearrangementType, SceneGraph, SceneNode};
use crate::Warning;

pub const MAX_FINE_GRAINED_WORDS: usize = 8;
pub const MAX_EDGE_LABEL_WORDS: usize = 10;

/// `(dst id, label)` pairs found for one node.
pub type SemanticLinks = Vec<(String, String)>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Local,
    Updated,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Local => "local",
            Self::Updated => "updated",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AffordanceRecord {
    pub geometry_position: String,
    pub relationship: String,
    pub unique_usage: String,
    pub fine_grained_category: String,
    pub stage: Stage,
}

impl AffordanceRecord {
    /// Text block used as context in later prompts.
    pub fn render(&self) -> String {
        format!(
            "Geometry & Position: {}\nRelationship: {}\nUnique Usage: {}\nFine-Grained Category: {}",
            self.geometry_position, self.relationship, self.unique_usage, self.fine_grained_category
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CarriableAffordance {
    pub geometry_functionality: String,
    pub fine_grained_category: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AreaProfile {
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AreaMember {
    pub id: String,
    pub category: String,
    pub fine_grained_category: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AreaContext {
    pub area_id: String,
    pub profile: AreaProfile,
    pub members: Vec<AreaMember>,
}

/// Aggregated area profiles of one room, in area-id order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoomContext {
    pub room: String,
    pub areas: Vec<AreaContext>,
}

impl RoomContext {
    pub fn render(&self) -> String {
        let mut out = format!("Room: {}\n", self.room);
        for (i, a) in self.areas.iter().enumerate() {
            let members: Vec<String> =
                a.members.iter().map(|m| format!("{} ({}: {})", m.id, m.category, m.fine_grained_category)).collect();
            out.push_str(&format!(
                "Area {}: {}\nDescription: {}\nObjects: {}\n",
                i + 1,
                a.profile.name,
                a.profile.description,
                members.join(", ")
            ));
        }
        out
    }

    pub fn members(&self) -> impl Iterator<Item = &AreaMember> {
        self.areas.iter().flat_map(|a| &a.members)
    }

    /// Resolves a name given by the model to a node id in this room:
    /// exact case-insensitive match on id first, then on category.
    pub fn resolve(&self, name: &str) -> Option<&str> {
        let name = name.trim();
        let mut by_id = self.members().filter(|m| m.id.eq_ignore_ascii_case(name));
        if let Some(m) = by_id.next() {
            return Some(&m.id);
        }
        self.members().filter(|m| m.category.eq_ignore_ascii_case(name)).map(|m| m.id.as_str()).min()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FailurePolicy {
    FailFast,
    /// Record a warning and continue. Nodes whose update fails keep their local record.
    #[default]
    SkipAndReport,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EnhanceConfig {
    pub prompter: Prompter,
    pub failure_policy: FailurePolicy,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AffordanceError {
    #[error("node `{0}` is a carriable; expected a receptacle or other object")]
    NotReceptacle(String),
    #[error("node `{0}` is not a carriable")]
    NotCarriable(String),
    #[error("graph has no hierarchy; cluster it first")]
    NoHierarchy,
    #[error("node `{0}` has no keyframe")]
    NoKeyframe(String),
    #[error("area `{0}` is empty")]
    EmptyArea(String),
    #[error("area `{0}` has no profile")]
    MissingProfile(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("affordance of `{0}` is not at the local stage")]
    NotLocal(String),
    #[error("LLM call for `{subject}` failed: {source}")]
    Llm { subject: String, source: LlmError },
}

fn llm_err(subject: &str) -> impl FnOnce(LlmError) -> AffordanceError + '_ {
    move |source| AffordanceError::Llm { subject: subject.to_string(), source }
}

fn truncate_words(text: &str, max: usize) -> (String, bool) {
    let words: Vec<&str> = text.split_whitespace().collect();
    (words.iter().take(max).copied().collect::<Vec<_>>().join(" "), words.len() > max)
}

fn list_sentence(label: &str, ids: &[&str]) -> String {
    format!(", {label}: [{}]", ids.join(", "))
}

/// Natural-language summary of a node and its spatial relations. Relation
/// clauses with no members are left out.
pub fn describe_node_context(node: &SceneNode, graph: &SceneGraph) -> String {
    let id = node.id();
    let near: Vec<&str> = graph.targets(id, &EdgeKind::Near).collect();
    let supports: Vec<&str> = graph.targets(id, &EdgeKind::Support).collect();
    let supported_by: Vec<&str> = graph.targets(id, &EdgeKind::On).collect();
    let mut out = format!(
        "The name of this receptacle is {id}, its category is {}, it is located in the room {}",
        node.instance.category, node.instance.room
    );
    if !(near.is_empty() && supports.is_empty() && supported_by.is_empty()) {
        out.push_str(", its relationships with surrounding objects are:");
        let mut first = true;
        for (label, ids) in [
            ("it is near these objects", &near),
            ("it supports these objects", &supports),
            ("it is supported by these objects", &supported_by),
        ] {
            if ids.is_empty() {
                continue;
            }
            let sentence = list_sentence(label, ids);
            out.push_str(if first { &sentence[1..] } else { &sentence });
            first = false;
        }
    }
    out.push('.');
    out
}

fn image_of(graph: &SceneGraph, frame: &str) -> Option<String> {
    graph.frames.get(frame).cloned()
}

fn require_receptacle(node: &SceneNode) -> Result<(), AffordanceError> {
    if node.instance.rtype == RearrangementType::Carriable {
        return Err(AffordanceError::NotReceptacle(node.id().to_string()));
    }
    Ok(())
}

pub fn local_request(node: &SceneNode, graph: &SceneGraph, prompter: &Prompter) -> Result<PromptRequest, AffordanceError> {
    require_receptacle(node)?;
    let description = describe_node_context(node, graph);
    let req = prompter
        .request(TemplateId::LocalAffordance, &slots(&[("description", description)]), image_of(graph, &node.keyframe))
        .map_err(llm_err(node.id()))?;
    Ok(req
        .with_hint(hints::NODE_ID, node.id())
        .with_hint(hints::CATEGORY, node.instance.category.as_str())
        .with_hint(hints::ROOM, node.instance.room.as_str()))
}

pub fn record_from_fields(f: &StructuredFields, stage: Stage) -> (AffordanceRecord, bool) {
    let get = |name| f.text(name).unwrap_or_default().to_string();
    let (fine, truncated) = truncate_words(&get(fields::FINE_GRAINED_CATEGORY), MAX_FINE_GRAINED_WORDS);
    let rec = AffordanceRecord {
        geometry_position: get(fields::GEOMETRY_POSITION),
        relationship: get(fields::RELATIONSHIP),
        unique_usage: get(fields::UNIQUE_USAGE),
        fine_grained_category: fine,
        stage,
    };
    (rec, truncated)
}

fn parse_record(stage: Stage) -> impl Fn(&PromptRequest, &str) -> Result<(AffordanceRecord, bool), LlmError> {
    move |req, text| fields_parser(req, text).map(|f| record_from_fields(&f, stage))
}

pub fn analyze_local<B: Backend + ?Sized>(
    node: &SceneNode,
    graph: &SceneGraph,
    backend: &B,
    prompter: &Prompter,
) -> Result<AffordanceRecord, AffordanceError> {
    let req = local_request(node, graph, prompter)?;
    prompter.run(backend, req, parse_record(Stage::Local)).map(|(r, _)| r).map_err(llm_err(node.id()))
}

pub fn carriable_request(node: &SceneNode, graph: &SceneGraph, prompter: &Prompter) -> Result<PromptRequest, AffordanceError> {
    if node.instance.rtype != RearrangementType::Carriable {
        return Err(AffordanceError::NotCarriable(node.id().to_string()));
    }
    let req = prompter
        .request(
            TemplateId::CarriableAffordance,
            &slots(&[("category", node.instance.category.as_str())]),
            image_of(graph, &node.keyframe),
        )
        .map_err(llm_err(node.id()))?;
    Ok(req.with_hint(hints::NODE_ID, node.id()).with_hint(hints::CATEGORY, node.instance.category.as_str()))
}

pub fn parse_carriable(req: &PromptRequest, text: &str) -> Result<(CarriableAffordance, bool), LlmError> {
    let f = fields_parser(req, text)?;
    let (fine, truncated) =
        truncate_words(f.text(fields::FINE_GRAINED_CATEGORY).unwrap_or_default(), MAX_FINE_GRAINED_WORDS);
    Ok((
        CarriableAffordance {
            geometry_functionality: f.text(fields::GEOMETRY_FUNCTIONALITY).unwrap_or_default().to_string(),
            fine_grained_category: fine,
        },
        truncated,
    ))
}

pub fn analyze_carriable<B: Backend + ?Sized>(
    node: &SceneNode,
    graph: &SceneGraph,
    backend: &B,
    prompter: &Prompter,
) -> Result<CarriableAffordance, AffordanceError> {
    let req = carriable_request(node, graph, prompter)?;
    prompter.run(backend, req, parse_carriable).map(|(c, _)| c).map_err(llm_err(node.id()))
}

fn area_members(area: &Area, graph: &SceneGraph) -> Result<Vec<AreaMember>, AffordanceError> {
    area.member_ids
        .iter()
        .map(|id| {
            let n = graph.nodes.get(id).ok_or_else(|| AffordanceError::UnknownNode(id.clone()))?;
            Ok(AreaMember {
                id: id.clone(),
                category: n.instance.category.clone(),
                fine_grained_category: n.fine_grained_category().to_string(),
            })
        })
        .collect()
}

pub fn area_request(area: &Area, graph: &SceneGraph, prompter: &Prompter) -> Result<PromptRequest, AffordanceError> {
    if area.member_ids.is_empty() {
        return Err(AffordanceError::EmptyArea(area.id.clone()));
    }
    let members = area_members(area, graph)?;
    let objects: Vec<String> = members.iter().map(|m| format!("- {}: {}", m.category, m.fine_grained_category)).collect();
    let cats: Vec<&str> = members.iter().map(|m| m.category.as_str()).collect();
    let req = prompter
        .request(
            TemplateId::AreaAnalysis,
            &slots(&[("room", area.room.clone()), ("objects", objects.join("\n"))]),
            image_of(graph, &area.keyframe),
        )
        .map_err(llm_err(&area.id))?;
    Ok(req.with_hint(hints::MEMBER_CATEGORIES, cats.join("\n")).with_hint(hints::ROOM, area.room.as_str()))
}

fn parse_area(req: &PromptRequest, text: &str) -> Result<AreaProfile, LlmError> {
    let f = fields_parser(req, text)?;
    Ok(AreaProfile {
        name: f.text(fields::NAME).unwrap_or_default().to_string(),
        description: f.text(fields::DESCRIPTION).unwrap_or_default().to_string(),
    })
}

pub fn analyze_area<B: Backend + ?Sized>(
    area: &Area,
    graph: &SceneGraph,
    backend: &B,
    prompter: &Prompter,
) -> Result<AreaProfile, AffordanceError> {
    let req = area_request(area, graph, prompter)?;
    prompter.run(backend, req, parse_area).map_err(llm_err(&area.id))
}

/// Collects the profiled areas of a room in area-id order.
pub fn aggregate_room_context(room: &str, areas: &[&Area], graph: &SceneGraph) -> Result<RoomContext, AffordanceError> {
    let mut sorted: Vec<&Area> = areas.to_vec();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let areas = sorted
        .into_iter()
        .map(|a| {
            let profile = a.profile.clone().ok_or_else(|| AffordanceError::MissingProfile(a.id.clone()))?;
            Ok(AreaContext { area_id: a.id.clone(), profile, members: area_members(a, graph)? })
        })
        .collect::<Result<Vec<_>, AffordanceError>>()?;
    Ok(RoomContext { room: room.to_string(), areas })
}

pub fn edges_request(
    node: &SceneNode,
    ctx: &RoomContext,
    local: &AffordanceRecord,
    graph: &SceneGraph,
    prompter: &Prompter,
) -> Result<PromptRequest, AffordanceError> {
    require_receptacle(node)?;
    let room_objects: Vec<String> = ctx.members().map(|m| format!("{}\t{}", m.id, m.category)).collect();
    let req = prompter
        .request(
            TemplateId::SemanticEdges,
            &slots(&[
                ("description", describe_node_context(node, graph)),
                ("local_analysis", local.render()),
                ("room_context", ctx.render()),
            ]),
            None,
        )
        .map_err(llm_err(node.id()))?;
    Ok(req
        .with_hint(hints::NODE_ID, node.id())
        .with_hint(hints::CATEGORY, node.instance.category.as_str())
        .with_hint(hints::ROOM, node.instance.room.as_str())
        .with_hint(hints::ROOM_OBJECTS, room_objects.join("\n")))
}

/// Related names and labels as answered by the model.
fn parse_edges(req: &PromptRequest, text: &str) -> Result<(Vec<String>, Vec<String>), LlmError> {
    let f = fields_parser(req, text)?;
    Ok((
        f.list(fields::RELATED_OBJECTS).unwrap_or_default().to_vec(),
        f.list(fields::FUNCTIONAL_EDGES).unwrap_or_default().to_vec(),
    ))
}

/// Maps model answers to `(dst id, label)` pairs within the room. Unknown
/// names and self references are dropped with a warning.
pub fn resolve_semantic_edges(
    node_id: &str,
    ctx: &RoomContext,
    names: &[String],
    labels: &[String],
    warnings: &mut Vec<Warning>,
) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, name) in names.iter().enumerate() {
        let Some(dst) = ctx.resolve(name) else {
            warnings.push(Warning::new(node_id, format!("dropped related object `{name}`: not in room `{}`", ctx.room)));
            continue;
        };
        if dst == node_id || out.iter().any(|(d, _)| d == dst) {
            continue;
        }
        let raw = labels.get(i).map(String::as_str).unwrap_or("");
        let (label, truncated) = truncate_words(raw, MAX_EDGE_LABEL_WORDS);
        let label = if label.is_empty() {
            warnings.push(Warning::new(node_id, format!("no relation label for `{dst}`")));
            "functionally related".to_string()
        } else {
            label
        };
        if truncated {
            warnings.push(Warning::new(node_id, format!("relation label for `{dst}` cut to {MAX_EDGE_LABEL_WORDS} words")));
        }
        out.push((dst.to_string(), label));
    }
    out
}

pub fn discover_semantic_edges<B: Backend + ?Sized>(
    node: &SceneNode,
    ctx: &RoomContext,
    local: &AffordanceRecord,
    graph: &SceneGraph,
    backend: &B,
    prompter: &Prompter,
) -> Result<(SemanticLinks, Vec<Warning>), AffordanceError> {
    let req = edges_request(node, ctx, local, graph, prompter)?;
    let (names, labels) = prompter.run(backend, req, parse_edges).map_err(llm_err(node.id()))?;
    let mut warnings = Vec::new();
    let edges = resolve_semantic_edges(node.id(), ctx, &names, &labels, &mut warnings);
    Ok((edges, warnings))
}

pub fn update_request(
    node: &SceneNode,
    ctx: &RoomContext,
    edges: &[(String, String)],
    local: &AffordanceRecord,
    graph: &SceneGraph,
    prompter: &Prompter,
) -> Result<PromptRequest, AffordanceError> {
    require_receptacle(node)?;
    if local.stage != Stage::Local {
        return Err(AffordanceError::NotLocal(node.id().to_string()));
    }
    let edge_text = if edges.is_empty() {
        "None".to_string()
    } else {
        edges.iter().map(|(dst, label)| format!("{} -> {dst}: {label}", node.id())).collect::<Vec<_>>().join("\n")
    };
    let req = prompter
        .request(
            TemplateId::AffordanceUpdate,
            &slots(&[
                ("description", describe_node_context(node, graph)),
                ("local_analysis", local.render()),
                ("room_context", ctx.render()),
                ("semantic_edges", edge_text),
            ]),
            image_of(graph, &node.keyframe),
        )
        .map_err(llm_err(node.id()))?;
    Ok(req
        .with_hint(hints::NODE_ID, node.id())
        .with_hint(hints::CATEGORY, node.instance.category.as_str())
        .with_hint(hints::ROOM, node.instance.room.as_str()))
}

pub fn update_affordance<B: Backend + ?Sized>(
    node: &SceneNode,
    ctx: &RoomContext,
    edges: &[(String, String)],
    local: &AffordanceRecord,
    graph: &SceneGraph,
    backend: &B,
    prompter: &Prompter,
) -> Result<AffordanceRecord, AffordanceError> {
    let req = update_request(node, ctx, edges, local, graph, prompter)?;
    prompter.run(backend, req, parse_record(Stage::Updated)).map(|(r, _)| r).map_err(llm_err(node.id()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnhanceOutcome {
    pub graph: SceneGraph,
    pub warnings: Vec<Warning>,
    /// Nodes or areas whose analysis failed under skip-and-report.
    pub failed: Vec<String>,
}

struct Run {
    policy: FailurePolicy,
    warnings: Vec<Warning>,
    failed: BTreeSet<String>,
}

impl Run {
    /// Applies the failure policy to one result.
    fn check<T>(&mut self, subject: &str, res: Result<T, AffordanceError>) -> Result<Option<T>, AffordanceError> {
        match res {
            Ok(v) => Ok(Some(v)),
            Err(e) if self.policy == FailurePolicy::FailFast => Err(e),
            Err(e) => {
                log::warn!("skipping `{subject}`: {e}");
                self.warnings.push(Warning::new(subject, format!("skipped: {e}")));
                self.failed.insert(subject.to_string());
                Ok(None)
            }
        }
    }

    fn truncation(&mut self, subject: &str, truncated: bool) {
        if truncated {
            self.warnings
                .push(Warning::new(subject, format!("fine-grained category cut to {MAX_FINE_GRAINED_WORDS} words")));
        }
    }
}

fn clear_enhancement(graph: &mut SceneGraph) {
    for node in graph.nodes.values_mut() {
        node.affordance = None;
    }
    graph.edges.retain(|e| e.kind.is_spatial());
    if let Some(h) = graph.hierarchy.as_mut() {
        for areas in h.rooms.values_mut() {
            for a in areas {
                a.profile = None;
            }
        }
    }
    graph.enhanced = false;
}

/// Turns a clustered scene graph into an affordance-enhanced one.
///
/// Requests are issued in batches: every local and carriable analysis first,
/// then per room the area analyses, the semantic edge queries and the updates.
/// Existing affordances and semantic edges are discarded first, so enhancing an
/// enhanced graph reproduces it under a deterministic backend.
pub fn enhance<B: Backend + ?Sized>(
    graph: &SceneGraph,
    backend: &B,
    config: &EnhanceConfig,
) -> Result<EnhanceOutcome, AffordanceError> {
    if graph.hierarchy.is_none() {
        return Err(AffordanceError::NoHierarchy);
    }
    if let Some(n) = graph.nodes.values().find(|n| !graph.frames.contains_key(&n.keyframe)) {
        return Err(AffordanceError::NoKeyframe(n.id().to_string()));
    }
    let prompter = &config.prompter;
    let mut g = graph.clone();
    clear_enhancement(&mut g);
    let mut run = Run { policy: config.failure_policy, warnings: Vec::new(), failed: BTreeSet::new() };

    let (carriables, others): (Vec<&SceneNode>, Vec<&SceneNode>) =
        graph.nodes.values().partition(|n| n.instance.rtype == RearrangementType::Carriable);

    // local pass
    let mut local_reqs = Vec::new();
    let mut local_ids = Vec::new();
    for n in &others {
        if let Some(req) = run.check(n.id(), local_request(n, &g, prompter))? {
            local_reqs.push(req);
            local_ids.push(n.id().to_string());
        }
    }
    let mut carriable_reqs = Vec::new();
    let mut carriable_ids = Vec::new();
    for n in &carriables {
        if let Some(req) = run.check(n.id(), carriable_request(n, &g, prompter))? {
            carriable_reqs.push(req);
            carriable_ids.push(n.id().to_string());
        }
    }
    let local_results = prompter.run_batch(backend, &local_reqs, parse_record(Stage::Local));
    let carriable_results = prompter.run_batch(backend, &carriable_reqs, parse_carriable);
    let mut locals: BTreeMap<String, AffordanceRecord> = BTreeMap::new();
    for (id, res) in local_ids.iter().zip(local_results) {
        if let Some((rec, truncated)) = run.check(id, res.map_err(llm_err(id)))? {
            run.truncation(id, truncated);
            locals.insert(id.clone(), rec.clone());
            g.nodes.get_mut(id).expect("node exists").affordance = Some(NodeAffordance::Receptacle(rec));
        }
    }
    for (id, res) in carriable_ids.iter().zip(carriable_results) {
        if let Some((c, truncated)) = run.check(id, res.map_err(llm_err(id)))? {
            run.truncation(id, truncated);
            g.nodes.get_mut(id).expect("node exists").affordance = Some(NodeAffordance::Carriable(c));
        }
    }

    let rooms: Vec<String> = g.hierarchy.as_ref().expect("checked above").rooms.keys().cloned().collect();
    for room in rooms {
        // area pass
        let areas: Vec<Area> = g.hierarchy.as_ref().expect("checked above").rooms[&room].clone();
        if areas.is_empty() {
            continue;
        }
        let mut area_reqs = Vec::new();
        let mut area_idx = Vec::new();
        for (i, a) in areas.iter().enumerate() {
            if let Some(req) = run.check(&a.id, area_request(a, &g, prompter))? {
                area_reqs.push(req);
                area_idx.push(i);
            }
        }
        let results = prompter.run_batch(backend, &area_reqs, parse_area);
        let mut profiled: Vec<Area> = Vec::new();
        for (i, res) in area_idx.into_iter().zip(results) {
            let id = areas[i].id.clone();
            if let Some(profile) = run.check(&id, res.map_err(llm_err(&id)))? {
                let mut a = areas[i].clone();
                a.profile = Some(profile);
                profiled.push(a);
            }
        }
        {
            let h = g.hierarchy.as_mut().expect("checked above");
            for a in h.rooms.get_mut(&room).expect("room exists") {
                if let Some(p) = profiled.iter().find(|p| p.id == a.id) {
                    a.profile.clone_from(&p.profile);
                }
            }
        }
        let refs: Vec<&Area> = profiled.iter().collect();
        let ctx = aggregate_room_context(&room, &refs, &g)?;

        // semantic edges
        let room_nodes: Vec<String> = locals
            .keys()
            .filter(|id| g.nodes[id.as_str()].instance.room == room)
            .cloned()
            .collect();
        let mut edge_reqs = Vec::new();
        let mut edge_ids = Vec::new();
        for id in &room_nodes {
            let req = edges_request(&g.nodes[id.as_str()], &ctx, &locals[id], &g, prompter);
            if let Some(req) = run.check(id, req)? {
                edge_reqs.push(req);
                edge_ids.push(id.clone());
            }
        }
        let results = prompter.run_batch(backend, &edge_reqs, parse_edges);
        let mut found: BTreeMap<String, Vec<(String, String)>> = BTreeMap::new();
        for (id, res) in edge_ids.iter().zip(results) {
            if let Some((names, labels)) = run.check(id, res.map_err(llm_err(id)))? {
                let edges = resolve_semantic_edges(id, &ctx, &names, &labels, &mut run.warnings);
                found.insert(id.clone(), edges);
            }
        }
        for (src, edges) in &found {
            for (dst, label) in edges {
                g.edges.insert(Edge::new(src.clone(), dst.clone(), EdgeKind::Semantic(label.clone())));
            }
        }

        // update pass
        let mut update_reqs = Vec::new();
        let mut update_ids = Vec::new();
        for (id, edges) in &found {
            let req = update_request(&g.nodes[id.as_str()], &ctx, edges, &locals[id], &g, prompter);
            if let Some(req) = run.check(id, req)? {
                update_reqs.push(req);
                update_ids.push(id.clone());
            }
        }
        let results = prompter.run_batch(backend, &update_reqs, parse_record(Stage::Updated));
        for (id, res) in update_ids.iter().zip(results) {
            if let Some((rec, truncated)) = run.check(id, res.map_err(llm_err(id)))? {
                run.truncation(id, truncated);
                g.nodes.get_mut(id).expect("node exists").affordance = Some(NodeAffordance::Receptacle(rec));
            }
        }
    }
    g.enhanced = true;
    run.warnings.sort();
    Ok(EnhanceOutcome { graph: g, warnings: run.warnings, failed: run.failed.into_iter().collect() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::build_hierarchy;
    use crate::llm::{CannedAffordance, CountingBackend, MockBackend, MockRules, SemanticRule};
    use crate::scenegraph::tests::inst;
    use crate::scenegraph::{build_scene_graph, RelationConfig};
    use alloc::vec;

    /// table with a cup on it, chair nearby, lamp far away.
    fn toy() -> SceneGraph {
        let instances = vec![
            inst("table_1", RearrangementType::Receptacle, [0.0, 0.0, 0.4], [0.5, 0.5, 0.4]),
            inst("cup_1", RearrangementType::Carriable, [0.0, 0.0, 0.85], [0.45, 0.45, 0.05]),
            inst("chair_1", RearrangementType::Receptacle, [1.2, 0.0, 0.4], [0.3, 0.3, 0.4]),
            inst("lamp_1", RearrangementType::Other, [9.0, 9.0, 0.5], [0.2, 0.2, 0.5]),
        ];
        let frames = [("f1".to_string(), "f1.png".to_string())].into_iter().collect();
        let mut g = build_scene_graph(instances, frames, &RelationConfig::default()).unwrap();
        g.hierarchy = Some(build_hierarchy(&g, 2.0).unwrap());
        g
    }

    fn rules() -> MockRules {
        let mut r = MockRules::default();
        r.affordance_rules.insert(
            "table".into(),
            CannedAffordance {
                geometry_position: "Square wooden table".into(),
                relationship: "Holds a cup".into(),
                unique_usage: "Dining".into(),
                fine_grained_category: "dining table".into(),
            },
        );
        r.semantic_rules.insert("table".into(), vec![SemanticRule { target: "chair".into(), label: "people sit on the chair to eat".into() }]);
        r
    }

    #[test]
    fn context_sentences() {
        let g = toy();
        let table = describe_node_context(&g.nodes["table_1"], &g);
        assert_eq!(
            table,
            "The name of this receptacle is table_1, its category is table, it is located in the room room, its relationships with surrounding objects are: it is near these objects: [chair_1], it supports these objects: [cup_1]."
        );
        let cup = describe_node_context(&g.nodes["cup_1"], &g);
        assert!(cup.contains("it is supported by these objects: [table_1]"));
        assert!(!cup.contains("it supports"));
        let lamp = describe_node_context(&g.nodes["lamp_1"], &g);
        assert_eq!(lamp, "The name of this receptacle is lamp_1, its category is lamp, it is located in the room room.");
    }

    #[test]
    fn local_and_carriable_preconditions() {
        let g = toy();
        let m = MockBackend::new(rules());
        let p = Prompter::default();
        let rec = analyze_local(&g.nodes["table_1"], &g, &m, &p).unwrap();
        assert_eq!(rec.fine_grained_category, "dining table");
        assert_eq!(rec.geometry_position, "Square wooden table");
        assert_eq!(rec.stage, Stage::Local);
        assert!(matches!(analyze_local(&g.nodes["cup_1"], &g, &m, &p), Err(AffordanceError::NotReceptacle(_))));
        let c = analyze_carriable(&g.nodes["cup_1"], &g, &m, &p).unwrap();
        assert_eq!(c.fine_grained_category, "cup");
        assert!(matches!(analyze_carriable(&g.nodes["table_1"], &g, &m, &p), Err(AffordanceError::NotCarriable(_))));
    }

    #[test]
    fn room_context_needs_profiles() {
        let g = toy();
        let areas: Vec<&Area> = g.hierarchy.as_ref().unwrap().areas().collect();
        assert!(matches!(aggregate_room_context("room", &areas, &g), Err(AffordanceError::MissingProfile(_))));
    }

    #[test]
    fn hallucinated_names_dropped() {
        let ctx = RoomContext {
            room: "kitchen".into(),
            areas: vec![AreaContext {
                area_id: "kitchen/area_0".into(),
                profile: AreaProfile { name: "n".into(), description: "d".into() },
                members: vec![
                    AreaMember { id: "counter_1".into(), category: "counter".into(), fine_grained_category: "c".into() },
                    AreaMember { id: "fridge_1".into(), category: "fridge".into(), fine_grained_category: "f".into() },
                ],
            }],
        };
        let mut w = Vec::new();
        let edges = resolve_semantic_edges(
            "counter_1",
            &ctx,
            &["Fridge".into(), "unicorn".into(), "counter_1".into()],
            &["keeps food cold".into(), "x".into(), "y".into()],
            &mut w,
        );
        assert_eq!(edges, vec![("fridge_1".to_string(), "keeps food cold".to_string())]);
        assert_eq!(w.len(), 1);
        assert!(w[0].message.contains("unicorn"));
    }

    #[test]
    fn enhance_toy_scene() {
        let g = toy();
        let counting = CountingBackend::new(MockBackend::new(rules()));
        let out = enhance(&g, &counting, &EnhanceConfig::default()).unwrap();
        let aeg = &out.graph;
        assert!(aeg.enhanced);
        aeg.validate().unwrap();
        for n in aeg.nodes.values() {
            match n.instance.rtype {
                RearrangementType::Carriable => assert!(n.carriable_affordance().is_some()),
                _ => assert_eq!(n.record().unwrap().stage, Stage::Updated),
            }
        }
        assert!(aeg.nodes["table_1"].record().unwrap().unique_usage.starts_with("UPDATED"));
        let semantic: Vec<&Edge> = aeg.semantic_edges().collect();
        assert_eq!(semantic.len(), 1);
        assert_eq!((semantic[0].src.as_str(), semantic[0].dst.as_str()), ("table_1", "chair_1"));
        let areas = aeg.hierarchy.as_ref().unwrap().areas().count();
        assert_eq!(counting.total(), 3 * 3 + 1 + areas);
        assert!(aeg.hierarchy.as_ref().unwrap().areas().all(|a| a.profile.is_some()));

        let again = enhance(aeg, &MockBackend::new(rules()), &EnhanceConfig::default()).unwrap();
        assert_eq!(&again.graph, aeg);
    }

    #[test]
    fn enhance_requires_hierarchy() {
        let mut g = toy();
        g.hierarchy = None;
        let m = MockBackend::new(rules());
        assert_eq!(enhance(&g, &m, &EnhanceConfig::default()).unwrap_err(), AffordanceError::NoHierarchy);
    }

    struct Broken;
    impl Backend for Broken {
        fn complete(&self, _: &PromptRequest) -> Result<String, LlmError> {
            Ok("nothing useful".into())
        }
    }

    #[test]
    fn failure_policies() {
        let g = toy();
        let out = enhance(&g, &Broken, &EnhanceConfig::default()).unwrap();
        assert_eq!(out.failed.len(), g.nodes.len() + g.hierarchy.as_ref().unwrap().areas().count());
        assert!(out.graph.nodes.values().all(|n| n.affordance.is_none()));
        let cfg = EnhanceConfig { failure_policy: FailurePolicy::FailFast, ..EnhanceConfig::default() };
        assert!(matches!(enhance(&g, &Broken, &cfg), Err(AffordanceError::Llm { .. })));
    }
}
