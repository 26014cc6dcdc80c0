//! Prompt registry. System texts are the published prompt texts, kept
//! verbatim (typos included) so runs stay comparable with reported numbers.
//! User texts are filled from named `{slot}` placeholders.

use super::parse::FieldSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TemplateId {
    /// Local context-induced affordance analysis of a receptacle or other object.
    LocalAffordance,
    /// Simplified analysis for carriables: geometry & functionality only.
    CarriableAffordance,
    AreaAnalysis,
    SemanticEdges,
    AffordanceUpdate,
    PlacementScore,
    PlacementDecision,
}

impl TemplateId {
    pub const ALL: [TemplateId; 7] = [
        Self::LocalAffordance,
        Self::CarriableAffordance,
        Self::AreaAnalysis,
        Self::SemanticEdges,
        Self::AffordanceUpdate,
        Self::PlacementScore,
        Self::PlacementDecision,
    ];

    /// Stable short code, used in cache keys and reports.
    pub fn code(self) -> &'static str {
        match self {
            Self::LocalAffordance => "p1",
            Self::CarriableAffordance => "p1c",
            Self::AreaAnalysis => "p2",
            Self::SemanticEdges => "p3",
            Self::AffordanceUpdate => "p4",
            Self::PlacementScore => "p5",
            Self::PlacementDecision => "p6",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.code() == code)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn template(self) -> &'static Template {
        match self {
            Self::LocalAffordance => &LOCAL_AFFORDANCE,
            Self::CarriableAffordance => &CARRIABLE_AFFORDANCE,
            Self::AreaAnalysis => &AREA_ANALYSIS,
            Self::SemanticEdges => &SEMANTIC_EDGES,
            Self::AffordanceUpdate => &AFFORDANCE_UPDATE,
            Self::PlacementScore => &PLACEMENT_SCORE,
            Self::PlacementDecision => &PLACEMENT_DECISION,
        }
    }
}

#[derive(Debug)]
pub struct Template {
    pub id: TemplateId,
    pub system: &'static str,
    /// User text with `{slot}` placeholders.
    pub user: &'static str,
    /// Output fields, in order.
    pub fields: &'static [FieldSpec],
}

pub mod fields {
    use super::FieldSpec;

    pub const GEOMETRY_POSITION: &str = "Geometry & Position";
    pub const RELATIONSHIP: &str = "Relationship";
    pub const UNIQUE_USAGE: &str = "Unique Usage";
    pub const FINE_GRAINED_CATEGORY: &str = "Fine-Grained Category";
    pub const GEOMETRY_FUNCTIONALITY: &str = "Geometry & Functionality";
    pub const NAME: &str = "Name";
    pub const DESCRIPTION: &str = "Description";
    pub const GIVEN_RECEPTACLE: &str = "Given Receptacle";
    pub const RELATED_OBJECTS: &str = "objects that have functional relationships";
    pub const FUNCTIONAL_EDGES: &str = "additional functional edge";
    pub const CARRIABLE_NAME: &str = "name of the carriable";
    pub const RECEPTACLE_NAME: &str = "name of the receptacle";
    pub const SCORE: &str = "Score";
    pub const ANALYSIS: &str = "Analysis";
    pub const BEST_RECEPTACLE: &str = "The best receptacle";

    pub const AFFORDANCE: &[FieldSpec] = &[
        FieldSpec::text(GEOMETRY_POSITION),
        FieldSpec::text(RELATIONSHIP),
        FieldSpec::text(UNIQUE_USAGE),
        FieldSpec::text(FINE_GRAINED_CATEGORY),
    ];
    pub const CARRIABLE: &[FieldSpec] = &[FieldSpec::text(GEOMETRY_FUNCTIONALITY), FieldSpec::text(FINE_GRAINED_CATEGORY)];
    pub const AREA: &[FieldSpec] = &[FieldSpec::text(NAME), FieldSpec::text(DESCRIPTION)];
    pub const SEMANTIC: &[FieldSpec] =
        &[FieldSpec::text(GIVEN_RECEPTACLE), FieldSpec::list(RELATED_OBJECTS), FieldSpec::list(FUNCTIONAL_EDGES)];
    pub const SCORE_FIELDS: &[FieldSpec] = &[
        FieldSpec::text(CARRIABLE_NAME),
        FieldSpec::text(RECEPTACLE_NAME),
        FieldSpec::text(SCORE),
        FieldSpec::text(ANALYSIS),
    ];
    pub const DECISION: &[FieldSpec] = &[FieldSpec::text(BEST_RECEPTACLE), FieldSpec::text(ANALYSIS)];
}

/// Slot names read by the rule-based mock backend. They are passed alongside
/// the rendered slots but do not appear in the prompt text.
pub mod hints {
    pub const NODE_ID: &str = "hint_node_id";
    pub const CATEGORY: &str = "hint_category";
    pub const ROOM: &str = "hint_room";
    /// Newline-separated categories of an area's members.
    pub const MEMBER_CATEGORIES: &str = "hint_member_categories";
    /// Newline-separated `id<TAB>category` of the objects in a room.
    pub const ROOM_OBJECTS: &str = "hint_room_objects";
    /// Carriable category, or the activity text for relevance scoring.
    pub const QUERY_KEY: &str = "hint_query_key";
    pub const RECEPTACLE_ID: &str = "hint_receptacle_id";
    pub const RECEPTACLE_CATEGORY: &str = "hint_receptacle_category";
    pub const RECEPTACLE_FINE: &str = "hint_receptacle_fine";
    /// Newline-separated `id<TAB>category<TAB>fine-grained` of decision candidates.
    pub const CANDIDATES: &str = "hint_candidates";
}

pub const AGENT_PREAMBLE: &str = "You are an intelligent home service agent that is professional in understanding contextual information of room layouts and analyzing objects usages in a particular house.";

pub const ROBOT_PREAMBLE: &str = "You are an intelligent home service robot tasked with house tidying.  you are professional in understanding the usage of the object in a particular house based on semantic and visual description and find a appropriate receptacle to place it for house tidying purpose.";

macro_rules! agent_prompt {
    ($body:expr) => {
        concat!(
            "You are an intelligent home service agent that is professional in understanding contextual information of room layouts and analyzing objects usages in a particular house.",
            "\n\n",
            $body
        )
    };
}

macro_rules! robot_prompt {
    ($body:expr) => {
        concat!(
            "You are an intelligent home service robot tasked with house tidying.  you are professional in understanding the usage of the object in a particular house based on semantic and visual description and find a appropriate receptacle to place it for house tidying purpose.",
            "\n\n",
            $body
        )
    };
}

pub static LOCAL_AFFORDANCE: Template = Template {
    id: TemplateId::LocalAffordance,
    system: agent_prompt!(
        r#"Given a short semantic description as well as a image of a receptacle (the receptacle object is highlighted by a red bounding box). You need to:

1. Describe the geometry and position of this receptacle in the house
2. Describe the relationship between this receptacle and its surrounding objects, including objects it is supporting. (ignore the decorative objects)
3. Based on your previous description, analyze the unique usage of this object as a receptacle and describe some possible items that can be placed on this receptacle.
4. Assign this receptacle a new fine-grained Category as its unique characteristic in the house

Output your analysis as following format:
"""
1. "Geometry & Position": [your description about Geometry & Position]
2. "Relationship": [your description about Relationships]
3. "Unique Usage": [your analysis for Unique Usage ]
4. "Fine-Grained Category": [the Fine-grained Name you give]
"""

Make your output concise. (It would be great if your output is under 150 words)"#
    ),
    user: "Semantic description: {description}",
    fields: fields::AFFORDANCE,
};

pub static CARRIABLE_AFFORDANCE: Template = Template {
    id: TemplateId::CarriableAffordance,
    system: agent_prompt!(
        r#"Given the category as well as a image of a carriable object (the object is highlighted by a red bounding box). You need to:

1. Describe the geometry of this object and analyze its functionality in a household
2. Assign this object a new fine-grained Category

Output your analysis as following format:
"""
1. "Geometry & Functionality": [your description about Geometry & Functionality]
2. "Fine-Grained Category": [the Fine-grained Name you give]
"""

Make your output concise. (It would be great if your output is under 80 words)"#
    ),
    user: "Category of the carriable object: {category}",
    fields: fields::CARRIABLE,
};

pub static AREA_ANALYSIS: Template = Template {
    id: TemplateId::AreaAnalysis,
    system: agent_prompt!(
        r#"You will receive a text description of a list of objects that locate in an area of a particular room, se well as an image of this area.
You need to analyze and summary the unique functionality of this area among areas in the particular room.

Output your analysis as following format:
"""
1. "Name": [assign a name of this given area in the room]
2. "Description": [Describe the layout and functionality of this area in one sentence]
"""

Make your output concise. (It would be great if your output is under 50 words)"#
    ),
    user: "Room: {room}\nObjects in this area (category: fine-grained category):\n{objects}",
    fields: fields::AREA,
};

pub static SEMANTIC_EDGES: Template = Template {
    id: TemplateId::SemanticEdges,
    system: agent_prompt!(
        r#"Given a short semantic description of a receptacle from the scene graph of a particular room as well as some additional information about this room. You need to:

1.  analyze the description and find some objects from the additional information that have relationship with the given receptacle in functionality perspective
2. add additional semantic edge between the finded objects and the given receptacle in the scene graph.

Output your analysis as following format:
"""
1. "Given Receptacle": [name of the given receptacle in scene graph]
2. "objects that have functional relationships":
    (1) [name of the first related object you find]
    (2) [name of the second related object you find]
    (3) ...
3. "additional functional edge":
    (1) [the functional relationship between receptacle and the first related object] (no more than 10 words)
    (2) [the functional relationship between receptacle and the second related object] (no more than 10 words)
    (3) ...
"""
Name of the related object should be consistent with the name in given object list from additional information.Ignore the decorative functional relationship.
If you do not find any objects that have functional relationship, you can say "(1) No object" in related subject.
Make your output concise. (It would be great if your output is under 150 words)"#
    ),
    user: "Semantic description: {description}\nLocal analysis of the receptacle:\n{local_analysis}\nAdditional information:\n{room_context}",
    fields: fields::SEMANTIC,
};

pub static AFFORDANCE_UPDATE: Template = Template {
    id: TemplateId::AffordanceUpdate,
    system: agent_prompt!(
        r#"Given a short semantic description as well as a image of a receptacle. You need to:

1. Describe the geometry and position of this receptacle in the house
2. Describe the relationship between this receptacle and its surrounding objects, including objects it is supporting. (ignore the decorative objects)
3. Analyze the unique usage of this receptacle as a receptacle based on your previous contextual description and describe some possible interaction between human and this receptacle in the house.
4. Assign this receptacle a new fine-grained Category as its unique characteristic in the house

Output your analysis as following format:
"""
1. "Geometry & Position": [your analysis about Geometry & Position]
2. "Relationship": [your analysis for Relationships]
3. "Unique Usage": [your analysis for Unique Usage ]
4. "Fine-Grained Category": [the Fine-grained Name you give]
"""
Make your output concise. (It would be great if your output is under 150 words)"#
    ),
    user: "Semantic description: {description}\nPrevious analysis:\n{local_analysis}\nAdditional information:\n{room_context}\nFunctional relationships:\n{semantic_edges}",
    fields: fields::AFFORDANCE,
};

pub static PLACEMENT_SCORE: Template = Template {
    id: TemplateId::PlacementScore,
    system: robot_prompt!(
        r#"Given the semantic description of a carriable object to place and a possible receptacles in the house, you need to rate this receptacles on whether it is suitable to place the object for housekeep purpose.
you can rate each receptacle at 0 to 100 score, where 100 means you think this receptacle might be the best position in the house to place the carriable object for house keep purpose , while 0 means that you do not recommend to place the object here for any reason. (As a reference, you can score the receptacle as 50 if you think it is only reasonable under some special conditions to place the object on this receptacle for kousekeep purpose.) Sometimes you will be given more reference to support your rating, these reference are placements that you have rated before .Make sure your scoring criteria are consistent compared to these references.

Output your analysis as following format:
"""
1. "name of the carriable": [name of the carriable object you need to place]
2. "name of the receptacle": [name of the give receptacle as the placement target]
3. "Score": [the score you give for this placement]
4. "Analysis": [your Analysis about why you give this placemnt this score for housekeep purpose]
"""
Make your output concise. (It would be great if your output is under 50 words)"#
    ),
    user: "Task: {task}\n{calibration}{references}Carriable object:\n{carriable}\nReceptacle:\n{receptacle}",
    fields: fields::SCORE_FIELDS,
};

pub static PLACEMENT_DECISION: Template = Template {
    id: TemplateId::PlacementDecision,
    system: robot_prompt!(
        r#"Given the semantic description of carriable object to place and some possible receptacles in the house as placement target, you need to choose the best (the most suitable) place to place the carriable object on top of that place for house tidying purpose.Think this question in multiple perspective like feasibility, necessity and significance of the placement for house tidying purpose.
Output your analysis as following format:
"""
1. "The best receptacle": [the exact name of the best place among the given receptacles].
2. "Analysis": [your Analysis about why it is the best one to place the object (why is it better than others)]
"""
Make your output concise. (It would be great if your output is under 100 words)"#
    ),
    user: "Task: {task}\nCarriable object:\n{carriable}\nCandidate receptacles:\n{candidates}",
    fields: fields::DECISION,
};

/// Placeholder names in a user template, in order of appearance.
pub fn placeholders(user: &str) -> impl Iterator<Item = &str> {
    user.split('{').skip(1).filter_map(|chunk| chunk.split_once('}').map(|(name, _)| name))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preambles_match_templates() {
        for t in TemplateId::ALL {
            let sys = t.template().system;
            assert!(sys.starts_with(AGENT_PREAMBLE) || sys.starts_with(ROBOT_PREAMBLE), "{t:?}");
            assert_eq!(TemplateId::from_code(t.code()), Some(t));
            assert_eq!(t.template().id, t);
        }
    }

    #[test]
    fn every_output_field_is_named_in_system_text() {
        for t in TemplateId::ALL {
            let tpl = t.template();
            for f in tpl.fields {
                assert!(tpl.system.contains(&alloc::format!("\"{}\"", f.name)), "{t:?} {}", f.name);
            }
        }
    }

    #[test]
    fn placeholder_scan() {
        let names: alloc::vec::Vec<&str> = placeholders(PLACEMENT_SCORE.user).collect();
        assert_eq!(names, ["task", "calibration", "references", "carriable", "receptacle"]);
    }
}
