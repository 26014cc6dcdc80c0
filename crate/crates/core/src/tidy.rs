//! Misplacement detection, receptacle retrieval, placement decisions and the
//! activity heatmap, all driven by the LLM placement scorer.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::index::sample;
use thiserror::Error;

use crate::affordance::{AffordanceRecord, Stage};
use crate::llm::prompts::fields;
use crate::llm::{fields_parser, hints, parse_score, slots, Backend, LlmError, PromptRequest, Prompter, TemplateId};
use crate::rng::seeded_for;
use crate::scenegraph::{EdgeKind, NodeAffordance, RearrangementType, SceneGraph, SceneNode};
use crate::Warning;

pub const DEFAULT_TASK: &str = "tidy the house";
pub const DEFAULT_THRESHOLD: u8 = 50;
pub const DEFAULT_K: usize = 4;
pub const FLOOR_ID: &str = "floor";

/// `(receptacle id, score)`, best first.
pub type Ranking = Vec<(String, u8)>;

const MISPLACEMENT_STANDARD: &str = "Scoring standard:
- 100 points: the placement perfectly meets the task requirements;
- 0 points: the placement contradicts the task requirements and might negatively impact the task, and thus needs to be rearranged;
- 50 points: It is difficult to judge whether rearranging this object is related to the task.
";

const RETRIEVAL_STANDARD: &str = "Scoring standard:
- 100 points: this receptacle is the most appropriate location in the entire house for placing the carriable to fulfill the task;
- 0 points: this receptacle is entirely unsuitable for placing the carriable, under any circumstances from the task's perspective;
- 50 points: this receptacle is a plausible option only under specific conditions.
";

const ACTIVITY_STANDARD: &str = "Scoring standard:
- 100 points: this object is where the activity takes place or is essential to carrying it out;
- 0 points: this object has nothing to do with the activity;
- 50 points: this object is useful for the activity only under specific conditions.
";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScorerMode {
    MisplacementCheck,
    RetrievalRating,
    ActivityRelevance,
}

impl ScorerMode {
    pub fn standard(self) -> &'static str {
        match self {
            Self::MisplacementCheck => MISPLACEMENT_STANDARD,
            Self::RetrievalRating => RETRIEVAL_STANDARD,
            Self::ActivityRelevance => ACTIVITY_STANDARD,
        }
    }
}

/// How the scorer prompt is calibrated. Example-bearing variants add two
/// scored examples after the standard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CalibrationVariant {
    #[default]
    FixedStandard,
    FixedExample,
    RandomExample {
        seed: u64,
    },
    /// Two of the scorer's own earlier ratings, or the fixed examples until
    /// two exist.
    SelfGeneratedExample,
    NoCalibration,
}

impl CalibrationVariant {
    pub fn name(self) -> &'static str {
        match self {
            Self::FixedStandard => "fixed-standard",
            Self::FixedExample => "fixed-example",
            Self::RandomExample { .. } => "random-example",
            Self::SelfGeneratedExample => "self-generated-example",
            Self::NoCalibration => "no-calibration",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoringExample {
    pub carriable: String,
    pub receptacle: String,
    pub score: u8,
    pub analysis: String,
}

impl ScoringExample {
    fn new(carriable: &str, receptacle: &str, score: u8, analysis: &str) -> Self {
        Self { carriable: carriable.into(), receptacle: receptacle.into(), score, analysis: analysis.into() }
    }

    fn render(&self) -> String {
        format!("- {} on {}: score {}. {}", self.carriable, self.receptacle, self.score, self.analysis)
    }
}

/// Library the example-bearing calibration variants draw from. The first
/// two are the fixed examples.
pub fn case_library() -> Vec<ScoringExample> {
    alloc::vec![
        ScoringExample::new("toothbrush", "bathroom sink counter", 95, "Toothbrushes are used and stored at the sink."),
        ScoringExample::new("frying pan", "bed", 0, "Cookware on a bed is unhygienic and out of place."),
        ScoringExample::new("remote control", "sofa side table", 90, "Within reach of the seating area facing the TV."),
        ScoringExample::new("laptop", "kitchen counter", 50, "Acceptable while cooking with a recipe, otherwise clutter."),
        ScoringExample::new("towel", "laundry shelf", 85, "Clean towels are kept with laundry supplies."),
        ScoringExample::new("shoes", "dining table", 5, "Footwear on an eating surface is unsanitary."),
        ScoringExample::new("book", "bedside table", 75, "Reasonable for bedtime reading."),
        ScoringExample::new("keys", "entryway console", 95, "Keys are picked up and dropped at the entrance."),
    ]
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlacementScore {
    pub carriable_id: String,
    pub receptacle_id: String,
    pub score: u8,
    pub analysis: String,
}

/// Context for one placement target.
#[derive(Debug, Clone, PartialEq)]
pub struct DbEntry {
    pub id: String,
    pub category: String,
    pub fine_grained_category: String,
    pub room: String,
    /// Name of the area profile, or the area id.
    pub area: Option<String>,
    pub record: Option<AffordanceRecord>,
    /// Free-text context used when no record exists.
    pub note: Option<String>,
}

impl DbEntry {
    pub fn from_node(node: &SceneNode, graph: &SceneGraph) -> Self {
        let area = graph.hierarchy.as_ref().and_then(|h| h.area_of(node.id())).map(|a| match &a.profile {
            Some(p) => p.name.clone(),
            None => a.id.clone(),
        });
        let note = match &node.affordance {
            Some(NodeAffordance::Carriable(c)) => Some(c.geometry_functionality.clone()),
            _ => None,
        };
        Self {
            id: node.id().to_string(),
            category: node.instance.category.clone(),
            fine_grained_category: node.fine_grained_category().to_string(),
            room: node.instance.room.clone(),
            area,
            record: node.record().cloned(),
            note,
        }
    }

    pub fn floor(room: &str) -> Self {
        Self {
            id: FLOOR_ID.to_string(),
            category: FLOOR_ID.to_string(),
            fine_grained_category: FLOOR_ID.to_string(),
            room: room.to_string(),
            area: None,
            record: None,
            note: Some("The object is lying on the floor, not on any receptacle.".to_string()),
        }
    }

    pub fn render(&self) -> String {
        let mut out = format!("Name: {}\nCategory: {}\nRoom: {}\n", self.id, self.category, self.room);
        if let Some(area) = &self.area {
            out.push_str(&format!("Area: {area}\n"));
        }
        match &self.record {
            Some(r) => out.push_str(&r.render()),
            None => out.push_str(&format!("Fine-Grained Category: {}", self.fine_grained_category)),
        }
        if let Some(note) = &self.note {
            out.push('\n');
            out.push_str(note);
        }
        out
    }
}

/// Updated affordance records of every receptacle, by id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReceptacleDatabase {
    pub entries: BTreeMap<String, DbEntry>,
}

impl ReceptacleDatabase {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlacementDecision {
    pub carriable_id: String,
    pub chosen_receptacle_id: String,
    pub analysis: String,
    pub candidates: Vec<(String, u8)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanEntry {
    pub decision: PlacementDecision,
    /// Every database entry ranked by retrieval score.
    pub ranked: Vec<(String, u8)>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TidyError {
    #[error("graph not enhanced; run enhance first")]
    NotEnhanced,
    #[error("node `{0}` is not a carriable")]
    NotCarriable(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("receptacle database is empty")]
    EmptyDatabase,
    #[error("no candidates to choose from")]
    NoCandidates,
    #[error("receptacles without affordance records: {0:?}")]
    MissingAffordance(Vec<String>),
    #[error("{failed} of {total} ratings failed")]
    RetrievalDegraded { failed: usize, total: usize },
    #[error("LLM call for `{subject}` failed: {source}")]
    Llm { subject: String, source: LlmError },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TidyConfig {
    pub prompter: Prompter,
    pub task: String,
    pub threshold: u8,
    pub k: usize,
    pub variant: CalibrationVariant,
    /// Let receptacles whose update failed enter the database with their local record.
    pub allow_local_fallback: bool,
}

impl Default for TidyConfig {
    fn default() -> Self {
        Self {
            prompter: Prompter::default(),
            task: DEFAULT_TASK.to_string(),
            threshold: DEFAULT_THRESHOLD,
            k: DEFAULT_K,
            variant: CalibrationVariant::default(),
            allow_local_fallback: false,
        }
    }
}

/// What is being placed: a carriable, or an activity for the heatmap.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    /// Carriable id or activity text.
    pub subject: String,
    /// Key the mock rules match on: carriable category or activity.
    pub key: String,
    pub text: String,
}

impl Query {
    pub fn carriable(node: &SceneNode) -> Self {
        let mut text = format!("Name: {}\nCategory: {}\n", node.id(), node.instance.category);
        match node.carriable_affordance() {
            Some(c) => text.push_str(&format!(
                "Fine-Grained Category: {}\nGeometry & Functionality: {}",
                c.fine_grained_category, c.geometry_functionality
            )),
            None => text.push_str(&format!("Fine-Grained Category: {}", node.fine_grained_category())),
        }
        Self { subject: node.id().to_string(), key: node.instance.category.clone(), text }
    }

    pub fn activity(activity: &str) -> Self {
        Self { subject: activity.to_string(), key: activity.to_string(), text: format!("Human activity: {activity}") }
    }
}

/// Placement scorer for one mode and calibration variant. Keeps the history
/// needed by the self-generated variant.
#[derive(Debug, Clone)]
pub struct Scorer<'p> {
    prompter: &'p Prompter,
    mode: ScorerMode,
    variant: CalibrationVariant,
    history: Vec<ScoringExample>,
    pub warnings: Vec<Warning>,
}

impl<'p> Scorer<'p> {
    pub fn new(prompter: &'p Prompter, mode: ScorerMode, variant: CalibrationVariant) -> Self {
        Self { prompter, mode, variant, history: Vec::new(), warnings: Vec::new() }
    }

    fn examples(&self, query: &Query, entry: &DbEntry) -> Vec<ScoringExample> {
        let lib = case_library();
        match self.variant {
            CalibrationVariant::FixedStandard | CalibrationVariant::NoCalibration => Vec::new(),
            CalibrationVariant::FixedExample => lib[..2].to_vec(),
            CalibrationVariant::RandomExample { seed } => {
                let mut rng = seeded_for(seed, &format!("{}\u{1f}{}", query.subject, entry.id));
                sample(&mut rng, lib.len(), 2).into_iter().map(|i| lib[i].clone()).collect()
            }
            CalibrationVariant::SelfGeneratedExample => {
                if self.history.len() >= 2 {
                    self.history[self.history.len() - 2..].to_vec()
                } else {
                    lib[..2].to_vec()
                }
            }
        }
    }

    pub fn request(&self, task: &str, query: &Query, entry: &DbEntry) -> Result<PromptRequest, LlmError> {
        let calibration = match self.variant {
            CalibrationVariant::NoCalibration => String::new(),
            _ => self.mode.standard().to_string(),
        };
        let examples = self.examples(query, entry);
        let references = if examples.is_empty() {
            String::new()
        } else {
            let lines: Vec<String> = examples.iter().map(ScoringExample::render).collect();
            let head = if self.variant == CalibrationVariant::SelfGeneratedExample && self.history.len() >= 2 {
                "References (placements you have rated before):"
            } else {
                "Examples:"
            };
            format!("{head}\n{}\n", lines.join("\n"))
        };
        let req = self.prompter.request(
            TemplateId::PlacementScore,
            &slots(&[
                ("task", task.to_string()),
                ("calibration", calibration),
                ("references", references),
                ("carriable", query.text.clone()),
                ("receptacle", entry.render()),
            ]),
            None,
        )?;
        Ok(req
            .with_hint(hints::QUERY_KEY, query.key.as_str())
            .with_hint(hints::RECEPTACLE_ID, entry.id.as_str())
            .with_hint(hints::RECEPTACLE_CATEGORY, entry.category.as_str())
            .with_hint(hints::RECEPTACLE_FINE, entry.fine_grained_category.as_str()))
    }

    /// Scores `query` against each entry. Results follow `entries`.
    pub fn score_batch<B: Backend + ?Sized>(
        &mut self,
        backend: &B,
        task: &str,
        query: &Query,
        entries: &[&DbEntry],
    ) -> Vec<Result<PlacementScore, LlmError>> {
        let pairs: Vec<(&Query, &DbEntry)> = entries.iter().map(|e| (query, *e)).collect();
        self.score_pairs(backend, task, &pairs)
    }

    /// Scores each (query, entry) pair. Requests go out as one batch, except
    /// under the self-generated variant where each rating must see the ones
    /// before it.
    pub fn score_pairs<B: Backend + ?Sized>(
        &mut self,
        backend: &B,
        task: &str,
        pairs: &[(&Query, &DbEntry)],
    ) -> Vec<Result<PlacementScore, LlmError>> {
        if self.variant == CalibrationVariant::SelfGeneratedExample && pairs.len() > 1 {
            return pairs.iter().flat_map(|p| self.score_pairs(backend, task, core::slice::from_ref(p))).collect();
        }
        let mut reqs = Vec::with_capacity(pairs.len());
        let mut index: Vec<Result<usize, LlmError>> = Vec::with_capacity(pairs.len());
        for (q, e) in pairs {
            match self.request(task, q, e) {
                Ok(r) => {
                    index.push(Ok(reqs.len()));
                    reqs.push(r);
                }
                Err(err) => index.push(Err(err)),
            }
        }
        let parsed = self.prompter.run_batch(backend, &reqs, |req, text| {
            let f = fields_parser(req, text)?;
            let raw = f.text(fields::SCORE).unwrap_or_default();
            let (score, clamped) = parse_score(raw)?;
            Ok((score, clamped, raw.to_string(), f.text(fields::ANALYSIS).unwrap_or_default().to_string()))
        });
        let mut parsed: Vec<Option<Result<_, LlmError>>> = parsed.into_iter().map(Some).collect();
        let mut out = Vec::with_capacity(pairs.len());
        for ((q, e), slot) in pairs.iter().zip(index) {
            let res = slot.and_then(|i| parsed[i].take().expect("each result taken once"));
            out.push(res.map(|(score, clamped, raw, analysis)| {
                if clamped {
                    log::warn!("score {raw:?} for {} on {} clamped to {score}", q.subject, e.id);
                    self.warnings.push(Warning::new(&q.subject, format!("score {raw:?} on `{}` clamped to {score}", e.id)));
                }
                PlacementScore { carriable_id: q.subject.clone(), receptacle_id: e.id.clone(), score, analysis }
            }));
        }
        for ((q, e), r) in pairs.iter().zip(&out) {
            if let Ok(s) = r {
                self.history.push(ScoringExample {
                    carriable: q.key.clone(),
                    receptacle: e.fine_grained_category.clone(),
                    score: s.score,
                    analysis: s.analysis.clone(),
                });
            }
        }
        out
    }
}

pub fn score_placement<B: Backend + ?Sized>(
    query: &Query,
    entry: &DbEntry,
    task: &str,
    mode: ScorerMode,
    variant: CalibrationVariant,
    backend: &B,
    prompter: &Prompter,
) -> Result<(PlacementScore, Vec<Warning>), TidyError> {
    let mut scorer = Scorer::new(prompter, mode, variant);
    let res = scorer.score_batch(backend, task, query, &[entry]).pop().expect("one result");
    res.map(|s| (s, scorer.warnings)).map_err(|source| TidyError::Llm { subject: query.subject.clone(), source })
}

/// Where a carriable currently sits: its `on` target with the smallest id,
/// or a synthetic floor entry.
pub fn current_receptacle(node: &SceneNode, graph: &SceneGraph) -> DbEntry {
    match graph.targets(node.id(), &EdgeKind::On).next() {
        Some(id) => DbEntry::from_node(&graph.nodes[id], graph),
        None => DbEntry::floor(&node.instance.room),
    }
}

fn carriables(graph: &SceneGraph) -> impl Iterator<Item = &SceneNode> {
    graph.nodes.values().filter(|n| n.instance.rtype == RearrangementType::Carriable)
}

fn sort_scores(items: &mut [PlacementScore]) {
    items.sort_by(|a, b| a.score.cmp(&b.score).then_with(|| a.carriable_id.cmp(&b.carriable_id)));
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    /// Carriables scoring at or below the threshold, ascending by score.
    pub misplaced: Vec<PlacementScore>,
    /// Every successful score, by carriable id.
    pub all: Vec<PlacementScore>,
    pub warnings: Vec<Warning>,
}

/// Scores every carriable against where it currently sits.
pub fn detect_misplaced<B: Backend + ?Sized>(graph: &SceneGraph, backend: &B, config: &TidyConfig) -> Result<Detection, TidyError> {
    if !graph.enhanced {
        return Err(TidyError::NotEnhanced);
    }
    let mut scorer = Scorer::new(&config.prompter, ScorerMode::MisplacementCheck, config.variant);
    let queries: Vec<(Query, DbEntry)> = carriables(graph).map(|n| (Query::carriable(n), current_receptacle(n, graph))).collect();
    let pairs: Vec<(&Query, &DbEntry)> = queries.iter().map(|(q, e)| (q, e)).collect();
    let results = scorer.score_pairs(backend, &config.task, &pairs);
    let mut all = Vec::new();
    for ((q, _), res) in queries.iter().zip(results) {
        match res {
            Ok(s) => all.push(s),
            Err(e) => {
                log::warn!("skipping `{}`: {e}", q.subject);
                scorer.warnings.push(Warning::new(&q.subject, format!("skipped: {e}")));
            }
        }
    }
    let mut misplaced: Vec<PlacementScore> = all.iter().filter(|s| s.score <= config.threshold).cloned().collect();
    sort_scores(&mut misplaced);
    Ok(Detection { misplaced, all, warnings: scorer.warnings })
}

/// Collects receptacles with updated records (local ones too when allowed).
pub fn build_receptacle_db(graph: &SceneGraph, allow_local_fallback: bool) -> Result<ReceptacleDatabase, TidyError> {
    if !graph.enhanced {
        return Err(TidyError::NotEnhanced);
    }
    let mut entries = BTreeMap::new();
    let mut missing = Vec::new();
    for node in graph.nodes.values().filter(|n| n.instance.rtype == RearrangementType::Receptacle) {
        let ok = match node.record() {
            Some(r) => r.stage == Stage::Updated || allow_local_fallback,
            None => false,
        };
        if ok {
            entries.insert(node.id().to_string(), DbEntry::from_node(node, graph));
        } else {
            missing.push(node.id().to_string());
        }
    }
    if !missing.is_empty() {
        return Err(TidyError::MissingAffordance(missing));
    }
    Ok(ReceptacleDatabase { entries })
}

/// Ranks by score descending, ties by id.
pub fn rank(scores: &[(String, u8)]) -> Vec<(String, u8)> {
    let mut out = scores.to_vec();
    out.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

/// Rates every database entry for `query` and returns the full ranking.
pub fn rank_receptacles<B: Backend + ?Sized>(
    query: &Query,
    db: &ReceptacleDatabase,
    scorer: &mut Scorer<'_>,
    task: &str,
    backend: &B,
) -> Result<Vec<(String, u8)>, TidyError> {
    if db.is_empty() {
        return Err(TidyError::EmptyDatabase);
    }
    let entries: Vec<&DbEntry> = db.entries.values().collect();
    let results = scorer.score_batch(backend, task, query, &entries);
    let total = results.len();
    let mut scores = Vec::with_capacity(total);
    let mut failed = 0;
    for (e, r) in entries.iter().zip(results) {
        match r {
            Ok(s) => scores.push((e.id.clone(), s.score)),
            Err(err) => {
                failed += 1;
                scorer.warnings.push(Warning::new(&query.subject, format!("rating of `{}` failed: {err}", e.id)));
            }
        }
    }
    if failed * 2 > total {
        return Err(TidyError::RetrievalDegraded { failed, total });
    }
    Ok(rank(&scores))
}

/// Top `k` receptacles for `query`, ties by id.
pub fn retrieve_candidates<B: Backend + ?Sized>(
    query: &Query,
    db: &ReceptacleDatabase,
    task: &str,
    k: usize,
    backend: &B,
    prompter: &Prompter,
    variant: CalibrationVariant,
) -> Result<(Ranking, Vec<Warning>), TidyError> {
    if k == 0 {
        return Err(TidyError::InvalidK);
    }
    let mut scorer = Scorer::new(prompter, ScorerMode::RetrievalRating, variant);
    let mut ranked = rank_receptacles(query, db, &mut scorer, task, backend)?;
    ranked.truncate(k);
    Ok((ranked, scorer.warnings))
}

fn match_candidate(answer: &str, candidates: &[(String, u8)], db: &ReceptacleDatabase) -> Option<String> {
    let a = answer.trim().trim_end_matches('.').trim();
    let names = |id: &String| {
        let fine = db.entries.get(id).map(|e| e.fine_grained_category.as_str()).unwrap_or("");
        (id.clone(), fine.to_string())
    };
    for (id, _) in candidates {
        let (id, fine) = names(id);
        if id.eq_ignore_ascii_case(a) || (!fine.is_empty() && fine.eq_ignore_ascii_case(a)) {
            return Some(id);
        }
    }
    let lower = a.to_ascii_lowercase();
    let mut contained = candidates.iter().filter(|(id, _)| lower.contains(&id.to_ascii_lowercase()));
    match (contained.next(), contained.next()) {
        (Some((id, _)), None) => Some(id.clone()),
        _ => None,
    }
}

pub fn decision_request(
    query: &Query,
    candidates: &[(String, u8)],
    db: &ReceptacleDatabase,
    task: &str,
    prompter: &Prompter,
) -> Result<PromptRequest, LlmError> {
    let mut text = String::new();
    let mut hint = Vec::new();
    for (i, (id, _)) in candidates.iter().enumerate() {
        let entry = db.entries.get(id);
        let block = entry.map(DbEntry::render).unwrap_or_else(|| format!("Name: {id}"));
        text.push_str(&format!("({}) {}\n", i + 1, block.replace('\n', "\n    ")));
        let (cat, fine) = entry.map_or(("", ""), |e| (e.category.as_str(), e.fine_grained_category.as_str()));
        hint.push(format!("{id}\t{cat}\t{fine}"));
    }
    let req = prompter.request(
        TemplateId::PlacementDecision,
        &slots(&[("task", task.to_string()), ("carriable", query.text.clone()), ("candidates", text)]),
        None,
    )?;
    Ok(req.with_hint(hints::QUERY_KEY, query.key.as_str()).with_hint(hints::CANDIDATES, hint.join("\n")))
}

/// Asks the model to pick among `candidates`. Unmatched answers are retried
/// once, then the top-scored candidate is used.
pub fn decide_placement<B: Backend + ?Sized>(
    query: &Query,
    candidates: &[(String, u8)],
    db: &ReceptacleDatabase,
    task: &str,
    backend: &B,
    prompter: &Prompter,
) -> Result<(PlacementDecision, Vec<Warning>), TidyError> {
    let top = candidates.first().ok_or(TidyError::NoCandidates)?;
    let mut warnings = Vec::new();
    let req = decision_request(query, candidates, db, task, prompter)
        .map_err(|source| TidyError::Llm { subject: query.subject.clone(), source })?;
    let answer = prompter.run(backend, req, |req, text| {
        let f = fields_parser(req, text)?;
        let best = f.text(fields::BEST_RECEPTACLE).unwrap_or_default();
        match match_candidate(best, candidates, db) {
            Some(id) => Ok((id, f.text(fields::ANALYSIS).unwrap_or_default().to_string())),
            None => Err(LlmError::ParseFailure(alloc::vec![fields::BEST_RECEPTACLE.to_string()])),
        }
    });
    let (chosen, analysis) = match answer {
        Ok(v) => v,
        Err(e) => {
            log::warn!("decision for {} fell back to top candidate: {e}", query.subject);
            warnings.push(Warning::new(&query.subject, format!("decision fell back to top candidate `{}`: {e}", top.0)));
            (top.0.clone(), "Fallback to the highest-rated candidate.".to_string())
        }
    };
    Ok((
        PlacementDecision {
            carriable_id: query.subject.clone(),
            chosen_receptacle_id: chosen,
            analysis,
            candidates: candidates.to_vec(),
        },
        warnings,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutcome {
    pub detection: Detection,
    pub plan: Vec<PlanEntry>,
    pub warnings: Vec<Warning>,
}

/// Detection, retrieval and decision for every misplaced carriable, in
/// ascending score order. All scoring is against the input snapshot.
pub fn plan_rearrangement<B: Backend + ?Sized>(graph: &SceneGraph, backend: &B, config: &TidyConfig) -> Result<PlanOutcome, TidyError> {
    if config.k == 0 {
        return Err(TidyError::InvalidK);
    }
    let detection = detect_misplaced(graph, backend, config)?;
    let db = build_receptacle_db(graph, config.allow_local_fallback)?;
    if db.is_empty() && !detection.misplaced.is_empty() {
        return Err(TidyError::EmptyDatabase);
    }
    let mut warnings = detection.warnings.clone();
    let mut plan = Vec::new();
    let mut scorer = Scorer::new(&config.prompter, ScorerMode::RetrievalRating, config.variant);
    for item in &detection.misplaced {
        let node = &graph.nodes[&item.carriable_id];
        let query = Query::carriable(node);
        let ranked = match rank_receptacles(&query, &db, &mut scorer, &config.task, backend) {
            Ok(r) => r,
            Err(e) => {
                warnings.push(Warning::new(&item.carriable_id, format!("skipped: {e}")));
                continue;
            }
        };
        let candidates: Vec<(String, u8)> = ranked.iter().take(config.k).cloned().collect();
        match decide_placement(&query, &candidates, &db, &config.task, backend, &config.prompter) {
            Ok((decision, w)) => {
                warnings.extend(w);
                plan.push(PlanEntry { decision, ranked });
            }
            Err(e) => warnings.push(Warning::new(&item.carriable_id, format!("skipped: {e}"))),
        }
    }
    warnings.append(&mut scorer.warnings);
    warnings.sort();
    Ok(PlanOutcome { detection, plan, warnings })
}

/// Relevance of every node to a human activity, by node id.
pub fn activity_heatmap<B: Backend + ?Sized>(
    graph: &SceneGraph,
    activity: &str,
    backend: &B,
    config: &TidyConfig,
) -> Result<(BTreeMap<String, u8>, Vec<Warning>), TidyError> {
    if !graph.enhanced {
        return Err(TidyError::NotEnhanced);
    }
    let entries: Vec<DbEntry> = graph.nodes.values().map(|n| DbEntry::from_node(n, graph)).collect();
    let refs: Vec<&DbEntry> = entries.iter().collect();
    let mut scorer = Scorer::new(&config.prompter, ScorerMode::ActivityRelevance, config.variant);
    let query = Query::activity(activity);
    let task = format!("find a suitable place for a human activity: {activity}");
    let results = scorer.score_batch(backend, &task, &query, &refs);
    let mut out = BTreeMap::new();
    for (e, r) in entries.iter().zip(results) {
        match r {
            Ok(s) => {
                out.insert(e.id.clone(), s.score);
            }
            Err(err) => scorer.warnings.push(Warning::new(&e.id, format!("skipped: {err}"))),
        }
    }
    Ok((out, scorer.warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affordance::{enhance, EnhanceConfig};
    use crate::hierarchy::build_hierarchy;
    use crate::llm::{CountingBackend, MockBackend, MockRules, ScoreRule};
    use crate::scenegraph::tests::inst;
    use crate::scenegraph::{build_scene_graph, FootprintOverlap, RelationConfig};
    use alloc::vec;
    use core::cell::Cell;
    use proptest::prelude::*;

    fn rule(c: &str, r: &str, s: i64) -> ScoreRule {
        ScoreRule { carriable: c.into(), receptacle: r.into(), score: s }
    }

    fn rules() -> MockRules {
        MockRules {
            score_rules: vec![
                rule("book", "shelf", 95),
                rule("book", "counter", 20),
                rule("book", "bed", 10),
                rule("cup", "counter", 90),
                rule("cup", "shelf", 30),
                rule("make coffee", "counter", 95),
                rule("make coffee", "bed", 5),
            ],
            ..MockRules::default()
        }
    }

    fn aeg(book_on: &str) -> SceneGraph {
        let book_x = if book_on == "counter" { 0.0 } else { 5.0 };
        let instances = vec![
            inst("counter_1", RearrangementType::Receptacle, [0.0, 0.0, 0.45], [0.6, 0.4, 0.45]),
            inst("shelf_1", RearrangementType::Receptacle, [5.0, 0.0, 0.5], [0.4, 0.3, 0.5]),
            inst("bed_1", RearrangementType::Receptacle, [9.0, 4.0, 0.25], [1.0, 0.8, 0.25]),
            inst("book_1", RearrangementType::Carriable, [book_x, 0.1, 1.05], [0.1, 0.08, 0.02]),
            inst("cup_1", RearrangementType::Carriable, [0.3, -0.1, 0.95], [0.04, 0.04, 0.05]),
        ];
        let frames = [("f1".to_string(), "f1.png".to_string())].into_iter().collect();
        let cfg = RelationConfig { overlap: FootprintOverlap::IntersectionOverMin, ..RelationConfig::default() };
        let mut g = build_scene_graph(instances, frames, &cfg).unwrap();
        g.hierarchy = Some(build_hierarchy(&g, 2.0).unwrap());
        enhance(&g, &MockBackend::new(rules()), &EnhanceConfig::default()).unwrap().graph
    }

    #[test]
    fn detection_threshold_and_order() {
        let g = aeg("counter");
        assert_eq!(g.targets("book_1", &EdgeKind::On).collect::<Vec<_>>(), ["counter_1"]);
        let m = MockBackend::new(rules());
        let d = detect_misplaced(&g, &m, &TidyConfig::default()).unwrap();
        assert_eq!(d.misplaced.len(), 1);
        assert_eq!(d.misplaced[0].carriable_id, "book_1");
        assert_eq!(d.misplaced[0].score, 20);

        let mut r = rules();
        r.score_rules.push(rule("cup", "counter_1", 50));
        let d = detect_misplaced(&g, &MockBackend::new(r.clone()), &TidyConfig::default()).unwrap();
        assert_eq!(d.misplaced.iter().map(|s| s.score).collect::<Vec<_>>(), [20, 50]);
        r.score_rules.insert(0, rule("cup", "counter_1", 51));
        let d = detect_misplaced(&g, &MockBackend::new(r), &TidyConfig::default()).unwrap();
        assert_eq!(d.misplaced.len(), 1);
    }

    #[test]
    fn floor_entry_for_unsupported_carriable() {
        let g = aeg("counter");
        let mut g2 = g.clone();
        g2.edges.retain(|e| !(e.src == "cup_1" || e.dst == "cup_1") || e.kind == EdgeKind::Near);
        let e = current_receptacle(&g2.nodes["cup_1"], &g2);
        assert_eq!(e.id, FLOOR_ID);
        let d = detect_misplaced(&g2, &MockBackend::new(rules()), &TidyConfig::default()).unwrap();
        let cup = d.all.iter().find(|s| s.carriable_id == "cup_1").unwrap();
        assert_eq!((cup.receptacle_id.as_str(), cup.score), (FLOOR_ID, 50));
    }

    #[test]
    fn retrieval_top_k() {
        let g = aeg("counter");
        let db = build_receptacle_db(&g, false).unwrap();
        assert_eq!(db.len(), 3);
        let m = MockBackend::new(rules());
        let q = Query::carriable(&g.nodes["book_1"]);
        let p = Prompter::default();
        let (top, _) = retrieve_candidates(&q, &db, DEFAULT_TASK, 2, &m, &p, CalibrationVariant::default()).unwrap();
        assert_eq!(top, vec![("shelf_1".to_string(), 95), ("counter_1".to_string(), 20)]);
        let (all, _) = retrieve_candidates(&q, &db, DEFAULT_TASK, 10, &m, &p, CalibrationVariant::default()).unwrap();
        assert_eq!(all.len(), 3);
        let (one, _) = retrieve_candidates(&q, &db, DEFAULT_TASK, 1, &m, &p, CalibrationVariant::default()).unwrap();
        assert_eq!(one[0].0, "shelf_1");
        assert_eq!(
            retrieve_candidates(&q, &db, DEFAULT_TASK, 0, &m, &p, CalibrationVariant::default()).unwrap_err(),
            TidyError::InvalidK
        );
    }

    #[test]
    fn db_fallback_flag() {
        let mut g = aeg("counter");
        if let Some(NodeAffordance::Receptacle(r)) = &mut g.nodes.get_mut("bed_1").unwrap().affordance {
            r.stage = Stage::Local;
        }
        assert_eq!(build_receptacle_db(&g, false).unwrap_err(), TidyError::MissingAffordance(vec!["bed_1".into()]));
        assert_eq!(build_receptacle_db(&g, true).unwrap().len(), 3);
    }

    #[test]
    fn plan_moves_book_to_shelf() {
        let g = aeg("counter");
        let counting = CountingBackend::new(MockBackend::new(rules()));
        let out = plan_rearrangement(&g, &counting, &TidyConfig::default()).unwrap();
        assert_eq!(out.plan.len(), 1);
        assert_eq!(out.plan[0].decision.chosen_receptacle_id, "shelf_1");
        assert_eq!(out.plan[0].ranked.len(), 3);
        assert_eq!(counting.total(), 2 + 3 + 1);

        let tidy = aeg("shelf");
        let out = plan_rearrangement(&tidy, &MockBackend::new(rules()), &TidyConfig::default()).unwrap();
        assert!(out.plan.is_empty());
    }

    struct Answers {
        reply: &'static str,
        calls: Cell<usize>,
    }

    impl Backend for Answers {
        fn complete(&self, _: &PromptRequest) -> Result<String, LlmError> {
            self.calls.set(self.calls.get() + 1);
            Ok(self.reply.into())
        }
    }

    #[test]
    fn decision_fallback_and_matching() {
        let g = aeg("counter");
        let db = build_receptacle_db(&g, false).unwrap();
        let q = Query::carriable(&g.nodes["book_1"]);
        let cands = vec![("shelf_1".to_string(), 95), ("counter_1".to_string(), 20)];
        let p = Prompter::default();
        let b = Answers { reply: "1. \"The best receptacle\": the moon\n2. \"Analysis\": x", calls: Cell::new(0) };
        let (d, w) = decide_placement(&q, &cands, &db, DEFAULT_TASK, &b, &p).unwrap();
        assert_eq!(d.chosen_receptacle_id, "shelf_1");
        assert_eq!(b.calls.get(), 2);
        assert_eq!(w.len(), 1);
        let b = Answers { reply: "1. \"The best receptacle\": [Counter_1].\n2. \"Analysis\": x", calls: Cell::new(0) };
        let (d, w) = decide_placement(&q, &cands, &db, DEFAULT_TASK, &b, &p).unwrap();
        assert_eq!(d.chosen_receptacle_id, "counter_1");
        assert!(w.is_empty());
        let (d, _) = decide_placement(&q, &cands[1..], &db, DEFAULT_TASK, &MockBackend::new(rules()), &p).unwrap();
        assert_eq!(d.chosen_receptacle_id, "counter_1");
        assert_eq!(decide_placement(&q, &[], &db, DEFAULT_TASK, &b, &p).unwrap_err(), TidyError::NoCandidates);
    }

    #[test]
    fn clamped_scores_warn() {
        let g = aeg("counter");
        let b = Answers {
            reply: "1. \"name of the carriable\": a\n2. \"name of the receptacle\": b\nScore: 150\n4. \"Analysis\": c",
            calls: Cell::new(0),
        };
        let entry = DbEntry::from_node(&g.nodes["shelf_1"], &g);
        let q = Query::carriable(&g.nodes["book_1"]);
        let p = Prompter::default();
        let (s, w) =
            score_placement(&q, &entry, DEFAULT_TASK, ScorerMode::MisplacementCheck, CalibrationVariant::default(), &b, &p).unwrap();
        assert_eq!(s.score, 100);
        assert_eq!(w.len(), 1);
    }

    #[test]
    fn heatmap_scores_all_nodes() {
        let g = aeg("counter");
        let (map, _) = activity_heatmap(&g, "make coffee", &MockBackend::new(rules()), &TidyConfig::default()).unwrap();
        assert_eq!(map.len(), g.nodes.len());
        assert!(map["counter_1"] > map["bed_1"]);
        let (empty, _) =
            activity_heatmap(&SceneGraph { enhanced: true, ..SceneGraph::default() }, "x", &MockBackend::new(rules()), &TidyConfig::default())
                .unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn calibration_variants_render() {
        let g = aeg("counter");
        let p = Prompter::default();
        let entry = DbEntry::from_node(&g.nodes["shelf_1"], &g);
        let q = Query::carriable(&g.nodes["book_1"]);
        let text = |v| Scorer::new(&p, ScorerMode::MisplacementCheck, v).request(DEFAULT_TASK, &q, &entry).unwrap().user_text;
        assert!(text(CalibrationVariant::FixedStandard).contains("100 points: the placement perfectly meets"));
        assert!(!text(CalibrationVariant::NoCalibration).contains("100 points"));
        let fixed = text(CalibrationVariant::FixedExample);
        assert!(fixed.contains("toothbrush") && fixed.contains("frying pan"));
        let r1 = text(CalibrationVariant::RandomExample { seed: 3 });
        assert_eq!(r1, text(CalibrationVariant::RandomExample { seed: 3 }));
        assert_eq!(r1.matches("\n- ").count() - fixed.matches("\n- ").count() + 2, 2);
        let retrieval = Scorer::new(&p, ScorerMode::RetrievalRating, CalibrationVariant::default()).request(DEFAULT_TASK, &q, &entry).unwrap();
        assert!(retrieval.user_text.contains("most appropriate location in the entire house"));

        let m = MockBackend::new(rules());
        let mut s = Scorer::new(&p, ScorerMode::MisplacementCheck, CalibrationVariant::SelfGeneratedExample);
        let e2 = DbEntry::from_node(&g.nodes["bed_1"], &g);
        let _ = s.score_batch(&m, DEFAULT_TASK, &q, &[&entry, &e2]);
        let req = s.request(DEFAULT_TASK, &q, &entry).unwrap();
        assert!(req.user_text.contains("placements you have rated before"));
    }

    proptest! {
        #[test]
        fn retrieval_matches_sort_oracle(scores in proptest::collection::vec(0i64..=100, 1..8), k in 1usize..10) {
            let mut db = ReceptacleDatabase::default();
            let mut r = MockRules::default();
            for (i, s) in scores.iter().enumerate() {
                let id = format!("r{i}");
                r.score_rules.push(rule("thing", &id, *s));
                db.entries.insert(id.clone(), DbEntry {
                    id, category: "box".into(), fine_grained_category: "box".into(), room: "room".into(),
                    area: None, record: None, note: None,
                });
            }
            let q = Query { subject: "t".into(), key: "thing".into(), text: "thing".into() };
            let (top, _) = retrieve_candidates(&q, &db, DEFAULT_TASK, k, &MockBackend::new(r), &Prompter::default(), CalibrationVariant::default()).unwrap();
            let mut oracle: Vec<(String, u8)> = scores.iter().enumerate().map(|(i, s)| (format!("r{i}"), *s as u8)).collect();
            oracle.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            oracle.truncate(k);
            prop_assert_eq!(top.len(), k.min(scores.len()));
            prop_assert_eq!(top, oracle);
        }

        #[test]
        fn detection_sorted_and_exact(scores in proptest::collection::vec(0u8..=100, 1..6), threshold in 0u8..=100) {
            let all: Vec<PlacementScore> = scores.iter().enumerate().map(|(i, s)| PlacementScore {
                carriable_id: format!("c{i}"), receptacle_id: "r".into(), score: *s, analysis: String::new(),
            }).collect();
            let mut misplaced: Vec<PlacementScore> = all.iter().filter(|s| s.score <= threshold).cloned().collect();
            sort_scores(&mut misplaced);
            prop_assert!(misplaced.windows(2).all(|w| w[0].score <= w[1].score));
            prop_assert_eq!(misplaced.len(), scores.iter().filter(|s| **s <= threshold).count());
        }
    }
}
