//! Affordance-enhanced scene graphs for household rearrangement.
//!
//! The crate turns a pre-segmented, instance-level scene description into a
//! scene graph with spatial relations, clusters each room into areas, enhances
//! every node with an LLM-derived affordance record, and uses an LLM scorer to
//! detect misplaced carriables and plan where to put them.
//!
//! Everything here is pure computation over `alloc` collections. File formats,
//! the HTTP backend, the response cache and the command line live in the `aeg`
//! companion crate.
//!
//! Pipeline, in order:
//!
//! ```text
//! instances ──build_scene_graph──▶ SceneGraph ──build_hierarchy──▶ SceneGraph + Hierarchy
//!        ──enhance──▶ AEG ──detect_misplaced / plan_rearrangement / activity_heatmap──▶ results
//! ```

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod affordance;
pub mod eval;
pub mod geometry;
pub mod hierarchy;
pub mod llm;
pub mod scenegraph;
pub mod tidy;

mod rng;

pub use affordance::{enhance, AffordanceRecord, AreaProfile, CarriableAffordance, EnhanceConfig};
pub use geometry::{ConvexPolygon2D, OrientedBox};
pub use hierarchy::{build_hierarchy, Area, Hierarchy};
pub use llm::{Backend, LlmError, MockBackend, MockRules, PromptRequest, Prompter, TemplateId};
pub use scenegraph::{
    build_scene_graph, EdgeKind, KeyframeStrategy, ObjectInstance, RearrangementType, RelationConfig,
    SceneGraph, SceneNode,
};

/// Non-fatal issue recorded while running a pipeline stage.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Warning {
    /// Node, area or carriable the warning is about.
    pub subject: alloc::string::String,
    pub message: alloc::string::String,
}

impl Warning {
    pub fn new(subject: impl Into<alloc::string::String>, message: impl Into<alloc::string::String>) -> Self {
        Self { subject: subject.into(), message: message.into() }
    }
}
