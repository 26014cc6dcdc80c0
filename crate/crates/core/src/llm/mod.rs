//! LLM backend contract, prompt rendering and response parsing.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

mod mock;
pub mod parse;
pub mod prompts;

pub use mock::{CannedAffordance, MockBackend, MockRules, ScoreRule, SemanticRule};
pub use parse::{parse_numbered_fields, parse_score, FieldSpec, FieldValue, StructuredFields};
pub use prompts::{hints, placeholders, Template, TemplateId};

pub type Slots = BTreeMap<String, String>;

pub const DEFAULT_TOKEN_BUDGET: usize = 8000;
pub const RETRY_SUFFIX: &str = "Follow the output format exactly.";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LlmError {
    #[error("transport error (status {status}): {excerpt}")]
    Transport { status: u16, excerpt: String },
    #[error("API key missing: environment variable {0} is not set")]
    AuthMissing(String),
    #[error("rate limited after exhausting retries")]
    RateLimited,
    #[error("missing prompt slot `{0}`")]
    MissingSlot(String),
    #[error("could not parse fields: {0:?}")]
    ParseFailure(Vec<String>),
    #[error("score is not numeric: {0:?}")]
    NonNumericScore(String),
    #[error("prompt estimate of {estimate} tokens exceeds budget {budget}")]
    TokenBudget { estimate: usize, budget: usize },
    #[error("image error: {0}")]
    Image(String),
    #[error("backend error: {0}")]
    Backend(String),
}

impl LlmError {
    /// Errors worth one re-issue with [`RETRY_SUFFIX`].
    pub fn is_format_error(&self) -> bool {
        matches!(self, Self::ParseFailure(_) | Self::NonNumericScore(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptRequest {
    pub template: TemplateId,
    pub system_text: String,
    pub user_text: String,
    /// Path of an image file, resolved by the backend.
    pub image: Option<String>,
    pub model_id: String,
    pub temperature: f64,
    /// Structured side information for offline backends. Never sent to a model.
    pub hints: Slots,
}

impl PromptRequest {
    pub fn with_hint(mut self, key: &str, value: impl Into<String>) -> Self {
        self.hints.insert(key.to_string(), value.into());
        self
    }

    pub fn hint(&self, key: &str) -> Option<&str> {
        self.hints.get(key).map(String::as_str)
    }

    /// Rough token estimate: characters / 4.
    pub fn token_estimate(&self) -> usize {
        (self.system_text.chars().count() + self.user_text.chars().count()).div_ceil(4)
    }

    fn retried(&self) -> Self {
        let mut req = self.clone();
        req.user_text.push('\n');
        req.user_text.push_str(RETRY_SUFFIX);
        req
    }
}

pub fn slots<K: AsRef<str>, V: AsRef<str>>(pairs: &[(K, V)]) -> Slots {
    pairs.iter().map(|(k, v)| (k.as_ref().to_string(), v.as_ref().to_string())).collect()
}

/// Fills the template's user text. Every placeholder must be present in
/// `slots`; values may be empty. Extra slots are ignored.
pub fn render_prompt(template: TemplateId, slots: &Slots, image: Option<String>) -> Result<PromptRequest, LlmError> {
    let tpl = template.template();
    let mut user = String::with_capacity(tpl.user.len() + 64);
    let mut rest = tpl.user;
    while let Some(open) = rest.find('{') {
        user.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after.find('}').expect("unterminated placeholder in template");
        let name = &after[..close];
        let value = slots.get(name).ok_or_else(|| LlmError::MissingSlot(name.to_string()))?;
        user.push_str(value);
        rest = &after[close + 1..];
    }
    user.push_str(rest);
    Ok(PromptRequest {
        template,
        system_text: tpl.system.to_string(),
        user_text: user,
        image,
        model_id: String::new(),
        temperature: 0.0,
        hints: Slots::new(),
    })
}

pub trait Backend {
    fn complete(&self, request: &PromptRequest) -> Result<String, LlmError>;

    /// Completes independent requests. Results are in request order.
    fn complete_batch(&self, requests: &[PromptRequest]) -> Vec<Result<String, LlmError>> {
        requests.iter().map(|r| self.complete(r)).collect()
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn complete(&self, request: &PromptRequest) -> Result<String, LlmError> {
        (**self).complete(request)
    }

    fn complete_batch(&self, requests: &[PromptRequest]) -> Vec<Result<String, LlmError>> {
        (**self).complete_batch(requests)
    }
}

impl<B: Backend + ?Sized> Backend for alloc::boxed::Box<B> {
    fn complete(&self, request: &PromptRequest) -> Result<String, LlmError> {
        (**self).complete(request)
    }

    fn complete_batch(&self, requests: &[PromptRequest]) -> Vec<Result<String, LlmError>> {
        (**self).complete_batch(requests)
    }
}

/// Counts requests per template, forwarding to an inner backend.
#[derive(Debug)]
pub struct CountingBackend<B> {
    inner: B,
    counts: [AtomicUsize; 7],
}

impl<B> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self { inner, counts: Default::default() }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().map(|c| c.load(Ordering::Relaxed)).sum()
    }

    pub fn count(&self, template: TemplateId) -> usize {
        self.counts[template.index()].load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        for c in &self.counts {
            c.store(0, Ordering::Relaxed);
        }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: Backend> Backend for CountingBackend<B> {
    fn complete(&self, request: &PromptRequest) -> Result<String, LlmError> {
        self.counts[request.template.index()].fetch_add(1, Ordering::Relaxed);
        self.inner.complete(request)
    }

    fn complete_batch(&self, requests: &[PromptRequest]) -> Vec<Result<String, LlmError>> {
        for r in requests {
            self.counts[r.template.index()].fetch_add(1, Ordering::Relaxed);
        }
        self.inner.complete_batch(requests)
    }
}

/// Request settings shared by every prompt of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Prompter {
    pub model_id: String,
    pub temperature: f64,
    pub token_budget: usize,
}

impl Default for Prompter {
    fn default() -> Self {
        Self { model_id: "mock".to_string(), temperature: 0.0, token_budget: DEFAULT_TOKEN_BUDGET }
    }
}

impl Prompter {
    pub fn new(model_id: impl Into<String>) -> Self {
        Self { model_id: model_id.into(), ..Self::default() }
    }

    /// Renders a request with this prompter's settings and checks the token budget.
    pub fn request(&self, template: TemplateId, slots: &Slots, image: Option<String>) -> Result<PromptRequest, LlmError> {
        let mut req = render_prompt(template, slots, image)?;
        req.model_id.clone_from(&self.model_id);
        req.temperature = self.temperature;
        let estimate = req.token_estimate();
        if estimate > self.token_budget {
            return Err(LlmError::TokenBudget { estimate, budget: self.token_budget });
        }
        Ok(req)
    }

    /// Issues `requests` as one batch and parses each response. Responses that
    /// fail to parse are re-issued once with [`RETRY_SUFFIX`] appended.
    pub fn run_batch<B, T, F>(&self, backend: &B, requests: &[PromptRequest], parse: F) -> Vec<Result<T, LlmError>>
    where
        B: Backend + ?Sized,
        F: Fn(&PromptRequest, &str) -> Result<T, LlmError>,
    {
        let mut out: Vec<Result<T, LlmError>> = backend
            .complete_batch(requests)
            .into_iter()
            .zip(requests)
            .map(|(res, req)| res.and_then(|text| parse(req, &text)))
            .collect();
        let retry_idx: Vec<usize> =
            out.iter().enumerate().filter(|(_, r)| matches!(r, Err(e) if e.is_format_error())).map(|(i, _)| i).collect();
        if retry_idx.is_empty() {
            return out;
        }
        for i in &retry_idx {
            log::warn!("{} response did not follow the output format, retrying once", requests[*i].template.code());
        }
        let retries: Vec<PromptRequest> = retry_idx.iter().map(|&i| requests[i].retried()).collect();
        for (k, res) in backend.complete_batch(&retries).into_iter().enumerate() {
            out[retry_idx[k]] = res.and_then(|text| parse(&retries[k], &text));
        }
        out
    }

    /// Single request counterpart of [`Prompter::run_batch`].
    pub fn run<B, T, F>(&self, backend: &B, request: PromptRequest, parse: F) -> Result<T, LlmError>
    where
        B: Backend + ?Sized,
        F: Fn(&PromptRequest, &str) -> Result<T, LlmError>,
    {
        self.run_batch(backend, core::slice::from_ref(&request), parse).pop().expect("one result per request")
    }
}

/// Parser for a template's declared fields.
pub fn fields_parser(req: &PromptRequest, text: &str) -> Result<StructuredFields, LlmError> {
    parse_numbered_fields(text, req.template.template().fields)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;
    use core::cell::Cell;
    use proptest::prelude::*;

    fn p5_slots() -> Slots {
        slots(&[
            ("task", "tidy the house"),
            ("calibration", ""),
            ("references", ""),
            ("carriable", "a mug"),
            ("receptacle", "kitchen counter"),
        ])
    }

    #[test]
    fn render_examples() {
        let req = render_prompt(TemplateId::LocalAffordance, &slots(&[("description", "a table")]), Some("f1.png".into())).unwrap();
        assert!(req.system_text.contains("Fine-Grained Category"));
        assert_eq!(req.user_text, "Semantic description: a table");
        let req = render_prompt(TemplateId::PlacementScore, &p5_slots(), None).unwrap();
        assert!(req.system_text.contains("0 to 100 score"));
        assert!(!req.user_text.contains('{'));
        let req = render_prompt(TemplateId::PlacementDecision, &p5_slots().into_iter().chain([("candidates".into(), "x".into())]).collect(), None).unwrap();
        assert!(req.system_text.contains("choose the best (the most suitable) place"));
        let mut s = p5_slots();
        s.remove("task");
        assert_eq!(render_prompt(TemplateId::PlacementScore, &s, None).unwrap_err(), LlmError::MissingSlot("task".into()));
        assert!(render_prompt(TemplateId::AreaAnalysis, &slots(&[("room", "kitchen")]), None).is_err());
    }

    #[test]
    fn token_budget_enforced() {
        let p = Prompter { token_budget: 100, ..Prompter::default() };
        let long = "x".repeat(4000);
        let err = p.request(TemplateId::LocalAffordance, &slots(&[("description", long.as_str())]), None).unwrap_err();
        assert!(matches!(err, LlmError::TokenBudget { budget: 100, .. }));
        for t in TemplateId::ALL {
            let filled: Slots = placeholders(t.template().user).map(|n| (n.to_string(), String::new())).collect();
            Prompter::default().request(t, &filled, None).unwrap();
        }
    }

    struct Scripted {
        replies: Vec<&'static str>,
        calls: Cell<usize>,
    }

    impl Backend for Scripted {
        fn complete(&self, req: &PromptRequest) -> Result<String, LlmError> {
            let i = self.calls.get();
            self.calls.set(i + 1);
            if i > 0 {
                assert!(req.user_text.ends_with(RETRY_SUFFIX));
            }
            Ok(self.replies[i.min(self.replies.len() - 1)].to_string())
        }
    }

    #[test]
    fn retry_once_then_fail() {
        let req = Prompter::default().request(TemplateId::AreaAnalysis, &slots(&[("room", "r"), ("objects", "o")]), None).unwrap();
        let b = Scripted { replies: vec!["garbage", "1. \"Name\": n\n2. \"Description\": d"], calls: Cell::new(0) };
        let f = Prompter::default().run(&b, req.clone(), fields_parser).unwrap();
        assert_eq!(f.text("Name"), Some("n"));
        assert_eq!(b.calls.get(), 2);
        let b = Scripted { replies: vec!["garbage"], calls: Cell::new(0) };
        assert!(matches!(Prompter::default().run(&b, req, fields_parser), Err(LlmError::ParseFailure(_))));
        assert_eq!(b.calls.get(), 2);
    }

    #[test]
    fn counting_backend_counts_batches() {
        let rules = MockRules::default();
        let b = CountingBackend::new(MockBackend::new(rules));
        let req = render_prompt(TemplateId::AreaAnalysis, &slots(&[("room", "r"), ("objects", "o")]), None).unwrap();
        let _ = b.complete_batch(&[req.clone(), req.clone()]);
        let _ = b.complete(&req);
        assert_eq!(b.total(), 3);
        assert_eq!(b.count(TemplateId::AreaAnalysis), 3);
        assert_eq!(b.count(TemplateId::PlacementScore), 0);
    }

    proptest! {
        #[test]
        fn render_is_injective(a in ".{0,20}", b in ".{0,20}", which in 0usize..5) {
            prop_assume!(a != b);
            let names = ["task", "calibration", "references", "carriable", "receptacle"];
            let mut s1 = p5_slots();
            let mut s2 = p5_slots();
            s1.insert(names[which].into(), a.clone());
            s2.insert(names[which].into(), b.clone());
            let r1 = render_prompt(TemplateId::PlacementScore, &s1, None).unwrap();
            let r2 = render_prompt(TemplateId::PlacementScore, &s2, None).unwrap();
            prop_assert_ne!(r1.user_text, r2.user_text, "{}", format!("{a:?} vs {b:?}"));
        }
    }
}
