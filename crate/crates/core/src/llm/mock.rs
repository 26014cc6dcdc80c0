//! Deterministic rule-based backend for offline runs and tests.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::prompts::{fields, hints};
use super::{Backend, LlmError, PromptRequest, TemplateId};

pub const DEFAULT_MOCK_SCORE: i64 = 50;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoreRule {
    /// Carriable category, or an activity text for relevance scoring.
    pub carriable: String,
    /// Receptacle id, fine-grained category or base category.
    pub receptacle: String,
    pub score: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CannedAffordance {
    pub geometry_position: String,
    pub relationship: String,
    pub unique_usage: String,
    pub fine_grained_category: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticRule {
    /// Category or id of the related object.
    pub target: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockRules {
    pub default_score: i64,
    pub score_rules: Vec<ScoreRule>,
    pub affordance_rules: BTreeMap<String, CannedAffordance>,
    pub semantic_rules: BTreeMap<String, Vec<SemanticRule>>,
}

impl Default for MockRules {
    fn default() -> Self {
        Self {
            default_score: DEFAULT_MOCK_SCORE,
            score_rules: Vec::new(),
            affordance_rules: BTreeMap::new(),
            semantic_rules: BTreeMap::new(),
        }
    }
}

impl MockRules {
    /// Score for placing `query` on the first of `keys` that has a rule.
    /// Keys are tried in order (id, fine-grained category, base category).
    pub fn score(&self, query: &str, keys: &[&str]) -> i64 {
        keys.iter()
            .filter(|k| !k.is_empty())
            .find_map(|k| {
                self.score_rules
                    .iter()
                    .find(|r| r.carriable.eq_ignore_ascii_case(query) && r.receptacle.eq_ignore_ascii_case(k))
                    .map(|r| r.score)
            })
            .unwrap_or(self.default_score)
    }

    pub fn affordance(&self, category: &str) -> CannedAffordance {
        let found = self
            .affordance_rules
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(category))
            .map(|(_, v)| v.clone());
        found.unwrap_or_else(|| CannedAffordance {
            geometry_position: format!("A {category} in the room."),
            relationship: "Placed among nearby objects.".to_string(),
            unique_usage: format!("Used as a {category}."),
            fine_grained_category: category.to_string(),
        })
    }
}

/// Makes a value safe to emit on a single field line.
fn sanitize(value: &str) -> String {
    let joined = value.split_whitespace().collect::<Vec<_>>().join(" ");
    let cleaned: String = joined.chars().map(|c| if c == '"' { '\'' } else { c }).collect();
    let trimmed = cleaned.trim_matches(|c: char| matches!(c, '[' | ']' | '*' | '_' | '\'' | '.' | ' ' | '"'));
    if trimmed.is_empty() {
        "unspecified".to_string()
    } else {
        trimmed.to_string()
    }
}

fn sanitize_item(value: &str) -> String {
    sanitize(&value.replace(['(', ')'], " "))
}

fn emit(pairs: &[(&str, String)]) -> String {
    let mut out = String::from("\"\"\"\n");
    for (i, (name, value)) in pairs.iter().enumerate() {
        out.push_str(&format!("{}. \"{}\": {}\n", i + 1, name, value));
    }
    out.push_str("\"\"\"");
    out
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    rules: MockRules,
}

impl MockBackend {
    pub fn new(rules: MockRules) -> Self {
        Self { rules }
    }

    pub fn rules(&self) -> &MockRules {
        &self.rules
    }

    fn affordance_text(&self, req: &PromptRequest, tag: Option<&str>) -> String {
        let category = req.hint(hints::CATEGORY).unwrap_or("object");
        let a = self.rules.affordance(category);
        let tagged = |v: &str| match tag {
            Some(t) => format!("{t} {}", sanitize(v)),
            None => sanitize(v),
        };
        emit(&[
            (fields::GEOMETRY_POSITION, tagged(&a.geometry_position)),
            (fields::RELATIONSHIP, tagged(&a.relationship)),
            (fields::UNIQUE_USAGE, tagged(&a.unique_usage)),
            (fields::FINE_GRAINED_CATEGORY, sanitize(&a.fine_grained_category)),
        ])
    }

    fn carriable_text(&self, req: &PromptRequest) -> String {
        let category = req.hint(hints::CATEGORY).unwrap_or("object");
        let a = self.rules.affordance(category);
        emit(&[
            (fields::GEOMETRY_FUNCTIONALITY, sanitize(&format!("{} {}", a.geometry_position, a.unique_usage))),
            (fields::FINE_GRAINED_CATEGORY, sanitize(&a.fine_grained_category)),
        ])
    }

    fn area_text(&self, req: &PromptRequest) -> String {
        let cats: BTreeSet<&str> =
            req.hint(hints::MEMBER_CATEGORIES).unwrap_or("").lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        let list: Vec<&str> = cats.into_iter().collect();
        let name = if list.is_empty() { "open area".to_string() } else { format!("{} area", list.join(" and ")) };
        emit(&[
            (fields::NAME, sanitize(&name)),
            (fields::DESCRIPTION, sanitize(&format!("An area containing {}.", list.join(", ")))),
        ])
    }

    fn semantic_text(&self, req: &PromptRequest) -> String {
        let category = req.hint(hints::CATEGORY).unwrap_or("object");
        let me = req.hint(hints::NODE_ID).unwrap_or("");
        let rules = self
            .rules
            .semantic_rules
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(category))
            .map(|(_, v)| v.as_slice())
            .unwrap_or(&[]);
        let mut names = Vec::new();
        let mut labels = Vec::new();
        for line in req.hint(hints::ROOM_OBJECTS).unwrap_or("").lines() {
            let (id, cat) = line.split_once('\t').unwrap_or((line, line));
            if id == me || id.is_empty() {
                continue;
            }
            if let Some(rule) = rules.iter().find(|r| r.target.eq_ignore_ascii_case(cat) || r.target.eq_ignore_ascii_case(id)) {
                names.push(sanitize_item(id));
                labels.push(sanitize_item(&rule.label));
            }
        }
        let list = |items: &[String]| -> String {
            if items.is_empty() {
                return "\n    (1) No object".to_string();
            }
            items.iter().enumerate().map(|(i, v)| format!("\n    ({}) {}", i + 1, v)).collect()
        };
        let mut out = String::from("\"\"\"\n");
        out.push_str(&format!("1. \"{}\": {}\n", fields::GIVEN_RECEPTACLE, sanitize(if me.is_empty() { category } else { me })));
        out.push_str(&format!("2. \"{}\":{}\n", fields::RELATED_OBJECTS, list(&names)));
        out.push_str(&format!("3. \"{}\":{}\n", fields::FUNCTIONAL_EDGES, list(&labels)));
        out.push_str("\"\"\"");
        out
    }

    fn receptacle_keys(id: &str, fine: &str, category: &str) -> [String; 3] {
        [id.to_string(), fine.to_string(), category.to_string()]
    }

    fn score_text(&self, req: &PromptRequest) -> String {
        let query = req.hint(hints::QUERY_KEY).unwrap_or("");
        let id = req.hint(hints::RECEPTACLE_ID).unwrap_or("");
        let fine = req.hint(hints::RECEPTACLE_FINE).unwrap_or("");
        let cat = req.hint(hints::RECEPTACLE_CATEGORY).unwrap_or("");
        let keys = Self::receptacle_keys(id, fine, cat);
        let score = self.rules.score(query, &[&keys[0], &keys[1], &keys[2]]);
        let receptacle = if fine.is_empty() { id } else { fine };
        emit(&[
            (fields::CARRIABLE_NAME, sanitize(query)),
            (fields::RECEPTACLE_NAME, sanitize(receptacle)),
            (fields::SCORE, score.to_string()),
            (fields::ANALYSIS, sanitize(&format!("Rule-based score for {query} on {receptacle}."))),
        ])
    }

    fn decision_text(&self, req: &PromptRequest) -> String {
        let query = req.hint(hints::QUERY_KEY).unwrap_or("");
        let mut best: Option<(i64, &str)> = None;
        for line in req.hint(hints::CANDIDATES).unwrap_or("").lines() {
            let mut parts = line.split('\t');
            let id = parts.next().unwrap_or("");
            if id.is_empty() {
                continue;
            }
            let cat = parts.next().unwrap_or("");
            let fine = parts.next().unwrap_or("");
            let score = self.rules.score(query, &[id, fine, cat]);
            if best.is_none_or(|(s, _)| score > s) {
                best = Some((score, id));
            }
        }
        let (score, id) = best.unwrap_or((self.rules.default_score, "unspecified"));
        emit(&[
            (fields::BEST_RECEPTACLE, sanitize(id)),
            (fields::ANALYSIS, sanitize(&format!("It has the highest rule score ({score}) for {query}."))),
        ])
    }
}

impl Backend for MockBackend {
    fn complete(&self, req: &PromptRequest) -> Result<String, LlmError> {
        Ok(match req.template {
            TemplateId::LocalAffordance => self.affordance_text(req, None),
            TemplateId::AffordanceUpdate => {
                let tag = match req.hint(hints::ROOM) {
                    Some(room) if !room.is_empty() => format!("UPDATED ({}):", sanitize_item(room)),
                    _ => "UPDATED:".to_string(),
                };
                self.affordance_text(req, Some(&tag))
            }
            TemplateId::CarriableAffordance => self.carriable_text(req),
            TemplateId::AreaAnalysis => self.area_text(req),
            TemplateId::SemanticEdges => self.semantic_text(req),
            TemplateId::PlacementScore => self.score_text(req),
            TemplateId::PlacementDecision => self.decision_text(req),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{fields_parser, parse_score, placeholders, render_prompt, Slots};
    use alloc::vec;
    use proptest::prelude::*;

    fn rules() -> MockRules {
        MockRules {
            default_score: 50,
            score_rules: vec![
                ScoreRule { carriable: "book".into(), receptacle: "bookshelf".into(), score: 95 },
                ScoreRule { carriable: "cup".into(), receptacle: "kitchen counter".into(), score: 90 },
                ScoreRule { carriable: "cup".into(), receptacle: "shelf_1".into(), score: 40 },
            ],
            affordance_rules: BTreeMap::new(),
            semantic_rules: BTreeMap::new(),
        }
    }

    fn blank(t: TemplateId) -> PromptRequest {
        let s: Slots = placeholders(t.template().user).map(|n| (n.to_string(), "x".to_string())).collect();
        render_prompt(t, &s, None).unwrap()
    }

    fn score_req(q: &str, id: &str, fine: &str, cat: &str) -> PromptRequest {
        blank(TemplateId::PlacementScore)
            .with_hint(hints::QUERY_KEY, q)
            .with_hint(hints::RECEPTACLE_ID, id)
            .with_hint(hints::RECEPTACLE_FINE, fine)
            .with_hint(hints::RECEPTACLE_CATEGORY, cat)
    }

    #[test]
    fn scores_from_rules() {
        let m = MockBackend::new(rules());
        let text = m.complete(&score_req("cup", "counter_1", "kitchen counter", "counter")).unwrap();
        assert!(text.contains("\"Score\": 90"));
        let text = m.complete(&score_req("book", "bs", "tall shelf", "bookshelf")).unwrap();
        assert!(text.contains("\"Score\": 95"));
        let text = m.complete(&score_req("sock", "bs", "", "bookshelf")).unwrap();
        assert!(text.contains("\"Score\": 50"));
        // id rules take precedence over categories
        assert_eq!(m.rules().score("cup", &["shelf_1", "kitchen counter"]), 40);
    }

    #[test]
    fn decision_is_argmax() {
        let mut r = rules();
        r.score_rules = vec![
            ScoreRule { carriable: "cup".into(), receptacle: "a".into(), score: 40 },
            ScoreRule { carriable: "cup".into(), receptacle: "b".into(), score: 95 },
            ScoreRule { carriable: "cup".into(), receptacle: "c".into(), score: 70 },
        ];
        let m = MockBackend::new(r);
        let req = blank(TemplateId::PlacementDecision)
            .with_hint(hints::QUERY_KEY, "cup")
            .with_hint(hints::CANDIDATES, "r1\ta\ta\nr2\tb\tb\nr3\tc\tc");
        let f = fields_parser(&req, &m.complete(&req).unwrap()).unwrap();
        assert_eq!(f.text(fields::BEST_RECEPTACLE), Some("r2"));
    }

    #[test]
    fn semantic_rules_emit_lists() {
        let mut r = rules();
        r.semantic_rules.insert("counter".into(), vec![SemanticRule { target: "fridge".into(), label: "stores food for prep".into() }]);
        let m = MockBackend::new(r);
        let req = blank(TemplateId::SemanticEdges)
            .with_hint(hints::CATEGORY, "counter")
            .with_hint(hints::NODE_ID, "counter_1")
            .with_hint(hints::ROOM_OBJECTS, "counter_1\tcounter\nfridge_1\tfridge\nmug_1\tcup");
        let f = fields_parser(&req, &m.complete(&req).unwrap()).unwrap();
        assert_eq!(f.list(fields::RELATED_OBJECTS).unwrap(), ["fridge_1"]);
        assert_eq!(f.list(fields::FUNCTIONAL_EDGES).unwrap(), ["stores food for prep"]);
        let req = req.with_hint(hints::CATEGORY, "sofa");
        let f = fields_parser(&req, &m.complete(&req).unwrap()).unwrap();
        assert!(f.list(fields::RELATED_OBJECTS).unwrap().is_empty());
    }

    fn text() -> impl Strategy<Value = String> {
        "[ -~]{0,30}"
    }

    fn rule_table() -> impl Strategy<Value = MockRules> {
        let canned = (text(), text(), text(), text()).prop_map(|(a, b, c, d)| CannedAffordance {
            geometry_position: a,
            relationship: b,
            unique_usage: c,
            fine_grained_category: d,
        });
        (
            -200i64..300,
            proptest::collection::vec((text(), text(), -200i64..300), 0..6),
            proptest::collection::btree_map("[a-z]{1,6}", canned, 0..4),
            proptest::collection::btree_map("[a-z]{1,6}", proptest::collection::vec((text(), text()), 0..3), 0..3),
        )
            .prop_map(|(d, sr, ar, sem)| MockRules {
                default_score: d,
                score_rules: sr.into_iter().map(|(c, r, s)| ScoreRule { carriable: c, receptacle: r, score: s }).collect(),
                affordance_rules: ar,
                semantic_rules: sem
                    .into_iter()
                    .map(|(k, v)| (k, v.into_iter().map(|(t, l)| SemanticRule { target: t, label: l }).collect()))
                    .collect(),
            })
    }

    proptest! {
        #[test]
        fn every_emission_parses(rules in rule_table(), cat in "[a-z]{1,6}", other in text(), room in text()) {
            let m = MockBackend::new(rules.clone());
            let objects = format!("n1\t{cat}\nn2\t{other}");
            let first_rule = rules.score_rules.first().map(|r| (r.carriable.clone(), r.receptacle.clone()));
            let (q, rc) = first_rule.unwrap_or_else(|| (cat.clone(), other.clone()));
            for t in TemplateId::ALL {
                let req = blank(t)
                    .with_hint(hints::CATEGORY, cat.clone())
                    .with_hint(hints::NODE_ID, "n1")
                    .with_hint(hints::ROOM, room.clone())
                    .with_hint(hints::MEMBER_CATEGORIES, objects.clone())
                    .with_hint(hints::ROOM_OBJECTS, objects.clone())
                    .with_hint(hints::QUERY_KEY, q.clone())
                    .with_hint(hints::RECEPTACLE_CATEGORY, rc.clone())
                    .with_hint(hints::CANDIDATES, format!("r1\t{rc}\t{other}\nr2\t{cat}\t{cat}"));
                let out = m.complete(&req).unwrap();
                let f = fields_parser(&req, &out);
                prop_assert!(f.is_ok(), "{:?} failed on {}", t, out);
                if t == TemplateId::PlacementScore {
                    let s = f.unwrap();
                    parse_score(s.text(fields::SCORE).unwrap()).unwrap();
                }
            }
        }
    }
}
