//! The vanilla scene graph: object nodes, spatial edges derived from
//! oriented boxes, and a keyframe per node.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::affordance::{AffordanceRecord, CarriableAffordance};
use crate::geometry::{
    boxes_intersect_3d, closest_vertex_distance, containment_fraction, xy_intersection_over_min, xy_iou,
    GeometryError, OrientedBox,
};
use crate::hierarchy::Hierarchy;
use crate::rng::seeded_for;

/// Minimum pixel count for a frame to be a candidate of the random and
/// centering keyframe strategies.
pub const MIN_STRATEGY_PIXELS: u64 = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SceneGraphError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("instance `{id}`: {source}")]
    InvalidBox { id: String, source: GeometryError },
    #[error("duplicate instance id `{0}`")]
    DuplicateId(String),
    #[error("instance `{id}` references unknown frame `{frame}`")]
    UnknownFrame { id: String, frame: String },
    #[error("instance `{0}` has no frame with a positive pixel count")]
    NoVisibleFrame(String),
    #[error("instance `{0}` has no pixel centroids; centering keyframe selection needs them")]
    MissingCentroids(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("invalid relation config: {0}")]
    InvalidConfig(&'static str),
    #[error("inconsistent graph: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RearrangementType {
    Carriable,
    Receptacle,
    Other,
}

impl RearrangementType {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Carriable => "carriable",
            Self::Receptacle => "receptacle",
            Self::Other => "other",
        }
    }
}

impl fmt::Display for RearrangementType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RearrangementType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "carriable" => Ok(Self::Carriable),
            "receptacle" => Ok(Self::Receptacle),
            "other" => Ok(Self::Other),
            other => Err(alloc::format!("unknown rearrangement type `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectInstance {
    pub id: String,
    pub category: String,
    pub room: String,
    pub rtype: RearrangementType,
    pub bbox: OrientedBox,
    /// Visible pixels per frame id (one row of the object-to-pixel matrix).
    pub pixel_counts: BTreeMap<String, u64>,
    pub pixel_centroids: Option<BTreeMap<String, [f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeKind {
    Near,
    /// `src` rests on `dst`.
    On,
    /// `src` supports `dst`.
    Support,
    /// Functional relation found by the LLM; short free-text label.
    Semantic(String),
}

impl EdgeKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Near => "near",
            Self::On => "on",
            Self::Support => "support",
            Self::Semantic(_) => "semantic",
        }
    }

    pub fn is_spatial(&self) -> bool {
        !matches!(self, Self::Semantic(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub src: String,
    pub dst: String,
    pub kind: EdgeKind,
}

impl Edge {
    pub fn new(src: impl Into<String>, dst: impl Into<String>, kind: EdgeKind) -> Self {
        Self { src: src.into(), dst: dst.into(), kind }
    }
}

/// Affordance attached to a node after enhancement.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeAffordance {
    Receptacle(AffordanceRecord),
    Carriable(CarriableAffordance),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneNode {
    pub instance: ObjectInstance,
    pub keyframe: String,
    pub affordance: Option<NodeAffordance>,
}

impl SceneNode {
    pub fn id(&self) -> &str {
        &self.instance.id
    }

    pub fn record(&self) -> Option<&AffordanceRecord> {
        match &self.affordance {
            Some(NodeAffordance::Receptacle(r)) => Some(r),
            _ => None,
        }
    }

    pub fn carriable_affordance(&self) -> Option<&CarriableAffordance> {
        match &self.affordance {
            Some(NodeAffordance::Carriable(c)) => Some(c),
            _ => None,
        }
    }

    /// Fine-grained category if the node has been analysed, else its category.
    pub fn fine_grained_category(&self) -> &str {
        match &self.affordance {
            Some(NodeAffordance::Receptacle(r)) => &r.fine_grained_category,
            Some(NodeAffordance::Carriable(c)) => &c.fine_grained_category,
            None => &self.instance.category,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneGraph {
    pub nodes: BTreeMap<String, SceneNode>,
    pub edges: BTreeSet<Edge>,
    /// Frame id to image path.
    pub frames: BTreeMap<String, String>,
    pub hierarchy: Option<Hierarchy>,
    pub enhanced: bool,
}

impl SceneGraph {
    pub fn node(&self, id: &str) -> Result<&SceneNode, SceneGraphError> {
        self.nodes.get(id).ok_or_else(|| SceneGraphError::UnknownNode(id.to_string()))
    }

    /// Ids of `dst` over edges `id --kind--> dst`, ascending.
    pub fn targets<'a>(&'a self, id: &'a str, kind: &'a EdgeKind) -> impl Iterator<Item = &'a str> + 'a {
        self.edges.iter().filter(move |e| e.src == id && &e.kind == kind).map(|e| e.dst.as_str())
    }

    /// Neighbours over spatial edges (near, on, support), ascending and unique.
    pub fn spatial_neighbors(&self, id: &str) -> BTreeSet<&str> {
        self.edges
            .iter()
            .filter(|e| e.kind.is_spatial())
            .filter_map(|e| {
                if e.src == id {
                    Some(e.dst.as_str())
                } else if e.dst == id {
                    Some(e.src.as_str())
                } else {
                    None
                }
            })
            .collect()
    }

    pub fn semantic_edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(|e| !e.kind.is_spatial())
    }

    /// Checks the structural invariants: endpoints exist, no self edges,
    /// on/support edges mirrored, keyframes and pixel frames known.
    pub fn validate(&self) -> Result<(), SceneGraphError> {
        for (id, node) in &self.nodes {
            if id != &node.instance.id {
                return Err(SceneGraphError::Inconsistent(alloc::format!("node key `{id}` != id `{}`", node.instance.id)));
            }
            node.instance
                .bbox
                .validate()
                .map_err(|source| SceneGraphError::InvalidBox { id: id.clone(), source })?;
            for frame in node.instance.pixel_counts.keys() {
                if !self.frames.contains_key(frame) {
                    return Err(SceneGraphError::UnknownFrame { id: id.clone(), frame: frame.clone() });
                }
            }
            if !self.frames.contains_key(&node.keyframe) {
                return Err(SceneGraphError::UnknownFrame { id: id.clone(), frame: node.keyframe.clone() });
            }
        }
        for e in &self.edges {
            for end in [&e.src, &e.dst] {
                if !self.nodes.contains_key(end) {
                    return Err(SceneGraphError::Inconsistent(alloc::format!("edge references unknown node `{end}`")));
                }
            }
            if e.src == e.dst {
                return Err(SceneGraphError::Inconsistent(alloc::format!("self edge on `{}`", e.src)));
            }
            let mirror = match e.kind {
                EdgeKind::On => Some(EdgeKind::Support),
                EdgeKind::Support => Some(EdgeKind::On),
                _ => None,
            };
            if let Some(kind) = mirror {
                if !self.edges.contains(&Edge::new(e.dst.clone(), e.src.clone(), kind)) {
                    return Err(SceneGraphError::Inconsistent(alloc::format!(
                        "{} edge {} -> {} has no mirror",
                        e.kind.name(),
                        e.src,
                        e.dst
                    )));
                }
            }
            if let EdgeKind::Semantic(label) = &e.kind {
                if label.trim().is_empty() {
                    return Err(SceneGraphError::Inconsistent(alloc::format!(
                        "semantic edge {} -> {} has an empty label",
                        e.src,
                        e.dst
                    )));
                }
            }
        }
        if let Some(h) = &self.hierarchy {
            h.validate(self).map_err(SceneGraphError::Inconsistent)?;
        }
        Ok(())
    }
}

fn sq(x: f64) -> f64 {
    x * x
}

/// How footprint overlap is measured for the stacked rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FootprintOverlap {
    /// Intersection over union of the two footprints.
    #[default]
    Iou,
    /// Intersection over the smaller footprint, so small items on large
    /// surfaces qualify.
    IntersectionOverMin,
}

impl FootprintOverlap {
    pub fn measure(self, a: &OrientedBox, b: &OrientedBox) -> f64 {
        match self {
            Self::Iou => xy_iou(a, b),
            Self::IntersectionOverMin => xy_intersection_over_min(a, b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelationConfig {
    pub xy_iou_threshold: f64,
    pub overlap: FootprintOverlap,
    /// Metres between the lower box's top and the upper box's bottom.
    pub support_gap: f64,
    pub containment_threshold: f64,
    /// Closest-vertex distance below which a pair is near.
    pub near_threshold: f64,
    pub containment_resolution: usize,
}

impl Default for RelationConfig {
    fn default() -> Self {
        Self {
            xy_iou_threshold: 0.8,
            overlap: FootprintOverlap::Iou,
            support_gap: 0.2,
            containment_threshold: 0.8,
            near_threshold: 1.0,
            containment_resolution: 16,
        }
    }
}

impl RelationConfig {
    pub fn validate(&self) -> Result<(), SceneGraphError> {
        let ratio = |v: f64| v > 0.0 && v <= 1.0;
        if !ratio(self.xy_iou_threshold) {
            return Err(SceneGraphError::InvalidConfig("xy_iou_threshold must be in (0, 1]"));
        }
        if !ratio(self.containment_threshold) {
            return Err(SceneGraphError::InvalidConfig("containment_threshold must be in (0, 1]"));
        }
        if self.support_gap.is_nan() || self.support_gap <= 0.0 {
            return Err(SceneGraphError::InvalidConfig("support_gap must be positive"));
        }
        // Zero is allowed: it disables near edges.
        if self.near_threshold.is_nan() || self.near_threshold < 0.0 {
            return Err(SceneGraphError::InvalidConfig("near_threshold must be non-negative"));
        }
        if self.containment_resolution < 4 {
            return Err(SceneGraphError::InvalidConfig("containment_resolution must be at least 4"));
        }
        Ok(())
    }
}

/// Which rule produced a pair's relation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairRelation<'a> {
    /// Stacked footprints: `lower` supports `upper`.
    Stacked { lower: &'a str, upper: &'a str },
    /// Volume containment: `container` supports `contained`.
    Contained { container: &'a str, contained: &'a str },
    Near,
    None,
}

fn bounding_radius(b: &OrientedBox) -> f64 {
    let h = b.half_extents;
    libm::sqrt(h[0] * h[0] + h[1] * h[1] + h[2] * h[2])
}

/// Classifies one pair. `a.id < b.id` is not required; roles are decided by
/// geometry with id order as the final tie-break, so the result is
/// independent of argument order.
pub fn classify_pair<'a>(a: &'a ObjectInstance, b: &'a ObjectInstance, cfg: &RelationConfig) -> PairRelation<'a> {
    let (a, b) = if a.id <= b.id { (a, b) } else { (b, a) };

    if cfg.overlap.measure(&a.bbox, &b.bbox) >= cfg.xy_iou_threshold && !boxes_intersect_3d(&a.bbox, &b.bbox) {
        let (lower, upper) = match a.bbox.bottom_z().total_cmp(&b.bbox.bottom_z()) {
            core::cmp::Ordering::Greater => (b, a),
            _ => (a, b),
        };
        let gap = upper.bbox.bottom_z() - lower.bbox.top_z();
        if gap < cfg.support_gap {
            return PairRelation::Stacked { lower: &lower.id, upper: &upper.id };
        }
    }

    let center_gap = {
        let (p, q) = (a.bbox.center, b.bbox.center);
        libm::sqrt(sq(p[0] - q[0]) + sq(p[1] - q[1]) + sq(p[2] - q[2]))
    };
    if center_gap <= bounding_radius(&a.bbox) + bounding_radius(&b.bbox) {
        let a_holds_b = containment_fraction(&a.bbox, &b.bbox, cfg.containment_resolution) >= cfg.containment_threshold;
        let b_holds_a = containment_fraction(&b.bbox, &a.bbox, cfg.containment_resolution) >= cfg.containment_threshold;
        let container = match (a_holds_b, b_holds_a) {
            (true, true) => Some(if b.bbox.volume() > a.bbox.volume() { b } else { a }),
            (true, false) => Some(a),
            (false, true) => Some(b),
            (false, false) => None,
        };
        if let Some(container) = container {
            let contained = if core::ptr::eq(container, a) { b } else { a };
            return PairRelation::Contained { container: &container.id, contained: &contained.id };
        }
    }

    if closest_vertex_distance(&a.bbox, &b.bbox) < cfg.near_threshold {
        return PairRelation::Near;
    }
    PairRelation::None
}

/// Spatial edges for every unordered pair, applying the stacked, contained
/// and near rules in that priority. Output is sorted.
pub fn derive_relations(instances: &[ObjectInstance], cfg: &RelationConfig) -> Result<Vec<Edge>, SceneGraphError> {
    if instances.is_empty() {
        return Err(SceneGraphError::InvalidInput("no instances".into()));
    }
    cfg.validate()?;
    for inst in instances {
        inst.bbox
            .validate()
            .map_err(|source| SceneGraphError::InvalidBox { id: inst.id.clone(), source })?;
    }
    let mut edges = BTreeSet::new();
    for (i, a) in instances.iter().enumerate() {
        for b in &instances[i + 1..] {
            match classify_pair(a, b, cfg) {
                PairRelation::Stacked { lower: s, upper: t } | PairRelation::Contained { container: s, contained: t } => {
                    edges.insert(Edge::new(s, t, EdgeKind::Support));
                    edges.insert(Edge::new(t, s, EdgeKind::On));
                }
                PairRelation::Near => {
                    edges.insert(Edge::new(a.id.clone(), b.id.clone(), EdgeKind::Near));
                    edges.insert(Edge::new(b.id.clone(), a.id.clone(), EdgeKind::Near));
                }
                PairRelation::None => {}
            }
        }
    }
    Ok(edges.into_iter().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum KeyframeStrategy {
    /// Frame maximising the node's plus its spatial neighbours' pixels.
    #[default]
    NeighborSum,
    /// Uniform over frames with at least 100 pixels, seeded per node.
    Random { seed: u64 },
    /// Frame (≥ 100 pixels) whose centroid is nearest the image centre.
    Centering { image_center: [f64; 2] },
    /// Frame with the most own pixels.
    MaxSelf,
}

/// Frame with the largest value, ties to the smallest frame id.
fn argmax_frame<'a>(scores: impl Iterator<Item = (&'a String, u64)>) -> Option<&'a String> {
    let mut best: Option<(&String, u64)> = None;
    for (frame, v) in scores {
        match best {
            Some((_, bv)) if v <= bv => {}
            _ => best = Some((frame, v)),
        }
    }
    best.map(|(f, _)| f)
}

fn strategy_candidates(inst: &ObjectInstance) -> Vec<&String> {
    let strong: Vec<&String> =
        inst.pixel_counts.iter().filter(|(_, c)| **c >= MIN_STRATEGY_PIXELS).map(|(f, _)| f).collect();
    if !strong.is_empty() {
        return strong;
    }
    inst.pixel_counts.iter().filter(|(_, c)| **c > 0).map(|(f, _)| f).collect()
}

/// Keyframe for `inst` given the instances adjacent to it in the graph.
///
/// Only frames where the node itself is visible are candidates.
pub fn select_keyframe_for(
    inst: &ObjectInstance,
    neighbors: &[&ObjectInstance],
    strategy: &KeyframeStrategy,
) -> Result<String, SceneGraphError> {
    if !inst.pixel_counts.values().any(|c| *c > 0) {
        return Err(SceneGraphError::NoVisibleFrame(inst.id.clone()));
    }
    let visible = || inst.pixel_counts.iter().filter(|(_, c)| **c > 0);
    let chosen = match strategy {
        KeyframeStrategy::NeighborSum => argmax_frame(visible().map(|(frame, own)| {
            let others: u64 = neighbors.iter().map(|n| n.pixel_counts.get(frame).copied().unwrap_or(0)).sum();
            (frame, own + others)
        })),
        KeyframeStrategy::MaxSelf => argmax_frame(visible().map(|(f, c)| (f, *c))),
        KeyframeStrategy::Random { seed } => {
            let candidates = strategy_candidates(inst);
            let mut rng = seeded_for(*seed, &inst.id);
            let idx = rng.gen_range(0..candidates.len());
            Some(candidates[idx])
        }
        KeyframeStrategy::Centering { image_center } => {
            let centroids =
                inst.pixel_centroids.as_ref().ok_or_else(|| SceneGraphError::MissingCentroids(inst.id.clone()))?;
            let mut best: Option<(&String, f64)> = None;
            for frame in strategy_candidates(inst) {
                let Some(c) = centroids.get(frame) else { continue };
                let d = libm::sqrt(sq(c[0] - image_center[0]) + sq(c[1] - image_center[1]));
                match best {
                    Some((_, bd)) if d >= bd => {}
                    _ => best = Some((frame, d)),
                }
            }
            if best.is_none() {
                return Err(SceneGraphError::MissingCentroids(inst.id.clone()));
            }
            best.map(|(f, _)| f)
        }
    };
    chosen.cloned().ok_or_else(|| SceneGraphError::NoVisibleFrame(inst.id.clone()))
}

/// Keyframe for a node already in `graph`.
pub fn select_keyframe(node: &SceneNode, graph: &SceneGraph, strategy: &KeyframeStrategy) -> Result<String, SceneGraphError> {
    let neighbors: Vec<&ObjectInstance> = graph
        .spatial_neighbors(node.id())
        .into_iter()
        .filter_map(|id| graph.nodes.get(id).map(|n| &n.instance))
        .collect();
    select_keyframe_for(&node.instance, &neighbors, strategy)
}

/// Re-selects every node's keyframe with `strategy`.
pub fn assign_keyframes(graph: &mut SceneGraph, strategy: &KeyframeStrategy) -> Result<(), SceneGraphError> {
    let mut chosen = Vec::with_capacity(graph.nodes.len());
    for node in graph.nodes.values() {
        chosen.push((node.id().to_string(), select_keyframe(node, graph, strategy)?));
    }
    for (id, frame) in chosen {
        if let Some(node) = graph.nodes.get_mut(&id) {
            node.keyframe = frame;
        }
    }
    Ok(())
}

/// Builds the vanilla scene graph: spatial relations plus neighbour-sum
/// keyframes. Hierarchy and affordances are left unset.
pub fn build_scene_graph(
    instances: Vec<ObjectInstance>,
    frames: BTreeMap<String, String>,
    cfg: &RelationConfig,
) -> Result<SceneGraph, SceneGraphError> {
    if instances.is_empty() {
        return Err(SceneGraphError::InvalidInput("scene has no instances".into()));
    }
    let mut seen = BTreeSet::new();
    for inst in &instances {
        if inst.id.is_empty() {
            return Err(SceneGraphError::InvalidInput("instance with empty id".into()));
        }
        if !seen.insert(inst.id.as_str()) {
            return Err(SceneGraphError::DuplicateId(inst.id.clone()));
        }
        for frame in inst.pixel_counts.keys() {
            if !frames.contains_key(frame) {
                return Err(SceneGraphError::UnknownFrame { id: inst.id.clone(), frame: frame.clone() });
            }
        }
    }
    let edges: BTreeSet<Edge> = derive_relations(&instances, cfg)?.into_iter().collect();
    let mut graph = SceneGraph { edges, frames, ..SceneGraph::default() };
    for inst in instances {
        graph
            .nodes
            .insert(inst.id.clone(), SceneNode { instance: inst, keyframe: String::new(), affordance: None });
    }
    assign_keyframes(&mut graph, &KeyframeStrategy::NeighborSum)?;
    Ok(graph)
}
