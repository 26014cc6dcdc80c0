//! Tolerant parsing of numbered-field responses.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::LlmError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldSpec {
    pub name: &'static str,
    /// Whether the value is a `(1) ... (2) ...` list.
    pub list: bool,
}

impl FieldSpec {
    pub const fn text(name: &'static str) -> Self {
        Self { name, list: false }
    }

    pub const fn list(name: &'static str) -> Self {
        Self { name, list: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FieldValue {
    Text(String),
    List(Vec<String>),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StructuredFields {
    fields: Vec<(String, FieldValue)>,
}

impl StructuredFields {
    pub fn get(&self, name: &str) -> Option<&FieldValue> {
        self.fields.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn text(&self, name: &str) -> Option<&str> {
        match self.get(name)? {
            FieldValue::Text(t) => Some(t),
            FieldValue::List(_) => None,
        }
    }

    pub fn list(&self, name: &str) -> Option<&[String]> {
        match self.get(name)? {
            FieldValue::List(items) => Some(items),
            FieldValue::Text(_) => None,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &FieldValue)> {
        self.fields.iter().map(|(n, v)| (n.as_str(), v))
    }
}

fn normalize_quotes(s: &str) -> String {
    s.chars()
        .map(|c| match c {
            '\u{201c}' | '\u{201d}' | '\u{201e}' | '\u{00ab}' | '\u{00bb}' => '"',
            '\u{2018}' | '\u{2019}' | '`' => '\'',
            c => c,
        })
        .collect()
}

fn strip_emphasis(s: &str) -> &str {
    s.trim_start_matches(['*', '_']).trim_start()
}

/// If `line` is a header for one of the fields, returns (field index, numbered, remainder).
fn match_header<'a>(line: &'a str, schema: &[FieldSpec]) -> Option<(usize, bool, &'a str)> {
    let mut s = line.trim_start();
    s = s.trim_start_matches(['-', '+', '#', '>', ' ']);
    if let Some(rest) = s.strip_prefix("* ") {
        s = rest;
    }
    s = strip_emphasis(s);
    let digits = s.bytes().take_while(u8::is_ascii_digit).count();
    let mut numbered = false;
    if digits > 0 {
        let after = &s[digits..];
        let rest = after.strip_prefix(['.', ')', ':'])?;
        numbered = true;
        s = strip_emphasis(rest.trim_start());
    }
    let s = s.trim_start_matches(['"', '\'', '[']);
    for (idx, spec) in schema.iter().enumerate() {
        let n = spec.name.len();
        if s.len() < n || !s.is_char_boundary(n) || !s[..n].eq_ignore_ascii_case(spec.name) {
            continue;
        }
        let rest = s[n..].trim_start_matches(['"', '\'', ']', '*', '_', ' ']);
        if let Some(rest) = rest.strip_prefix(':') {
            return Some((idx, numbered, rest.trim_start_matches(['*', '_'])));
        }
        // "1. Name - value" style, only accepted on numbered lines
        if numbered {
            if let Some(rest) = rest.strip_prefix(['-', '=']) {
                return Some((idx, numbered, rest));
            }
        }
    }
    None
}

fn is_fence(line: &str) -> bool {
    let t = line.trim();
    t.starts_with("\"\"\"") || t.starts_with("'''") || t.starts_with("```")
}

fn clean_value(raw: &str) -> String {
    let mut v = raw.trim();
    loop {
        let before = v;
        v = v.trim_matches(['*', '_']).trim();
        if v.len() >= 2 && v.starts_with('[') && (v.ends_with(']') || v.ends_with("].")) {
            v = v[1..].trim_end_matches('.').trim_end_matches(']').trim();
        }
        if v.len() >= 2 && v.starts_with('"') && v.ends_with('"') {
            v = v[1..v.len() - 1].trim();
        }
        if v == before {
            break;
        }
    }
    v.to_string()
}

fn is_no_object(item: &str) -> bool {
    let t = item.trim().trim_end_matches('.').trim().to_ascii_lowercase();
    matches!(t.as_str(), "no object" | "no objects" | "none" | "n/a" | "no object found")
}

/// Splits a list value on `(n)` markers.
fn parse_list(raw: &str) -> Vec<String> {
    let mut items = Vec::new();
    let mut current = String::new();
    let mut saw_marker = false;
    let bytes = raw.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'(' {
            let digits = bytes[i + 1..].iter().take_while(|b| b.is_ascii_digit()).count();
            if digits > 0 && bytes.get(i + 1 + digits) == Some(&b')') {
                if saw_marker || !current.trim().is_empty() {
                    items.push(core::mem::take(&mut current));
                }
                saw_marker = true;
                i += digits + 2;
                continue;
            }
        }
        let ch = raw[i..].chars().next().unwrap_or(' ');
        current.push(ch);
        i += ch.len_utf8();
    }
    items.push(current);
    let mut out: Vec<String> = items
        .iter()
        .map(|s| clean_value(&s.split_whitespace().collect::<Vec<_>>().join(" ")))
        .filter(|s| !s.is_empty() && s != "..." && s != "…")
        .collect();
    if out.len() == 1 && is_no_object(&out[0]) {
        out.clear();
    }
    out.retain(|s| !is_no_object(s));
    out
}

/// Parses `1. "Field": value` style output against `schema`.
///
/// Tolerates curly quotes, square brackets around values, markdown bullets or
/// emphasis, missing numbering and prose around the block. Numbered headers win
/// over unnumbered ones when both exist for a field. Fails listing the fields
/// that could not be found.
pub fn parse_numbered_fields(text: &str, schema: &[FieldSpec]) -> Result<StructuredFields, LlmError> {
    let norm = normalize_quotes(text);
    let lines: Vec<&str> = norm.lines().collect();
    let hits: Vec<(usize, usize, bool, &str)> = lines
        .iter()
        .enumerate()
        .filter_map(|(li, l)| match_header(l, schema).map(|(f, num, rest)| (li, f, num, rest)))
        .collect();

    let mut chosen: Vec<Option<(usize, &str)>> = alloc::vec![None; schema.len()];
    for numbered_pass in [true, false] {
        for &(li, f, num, rest) in &hits {
            if num == numbered_pass && chosen[f].is_none() {
                chosen[f] = Some((li, rest));
            }
        }
    }

    let mut fields = Vec::new();
    let mut missing = Vec::new();
    for (f, spec) in schema.iter().enumerate() {
        let Some((li, first)) = chosen[f] else {
            missing.push(spec.name.to_string());
            continue;
        };
        let mut parts: Vec<&str> = alloc::vec![first];
        for line in &lines[li + 1..] {
            if is_fence(line) {
                break;
            }
            let t = line.trim();
            if match_header(line, schema).is_some() {
                break;
            }
            if t.is_empty() {
                if spec.list || parts.iter().all(|p| p.trim().is_empty()) {
                    continue;
                }
                break;
            }
            parts.push(t);
        }
        let joined = parts.iter().map(|p| p.trim()).filter(|p| !p.is_empty()).collect::<Vec<_>>().join(if spec.list { "\n" } else { " " });
        if spec.list {
            fields.push((spec.name.to_string(), FieldValue::List(parse_list(&joined))));
        } else {
            let v = clean_value(&joined);
            if v.is_empty() {
                missing.push(spec.name.to_string());
            } else {
                fields.push((spec.name.to_string(), FieldValue::Text(v)));
            }
        }
    }
    if missing.is_empty() {
        Ok(StructuredFields { fields })
    } else {
        Err(LlmError::ParseFailure(missing))
    }
}

/// First integer in `text`, clamped to [0, 100]. The flag is set when clamping happened.
pub fn parse_score(text: &str) -> Result<(u8, bool), LlmError> {
    let bytes = text.as_bytes();
    let start = bytes.iter().position(u8::is_ascii_digit).ok_or_else(|| LlmError::NonNumericScore(text.to_string()))?;
    let negative = start > 0 && bytes[start - 1] == b'-';
    let digits: String = text[start..].chars().take_while(char::is_ascii_digit).collect();
    let value: i64 = digits.parse().unwrap_or(i64::MAX);
    let value = if negative { -value } else { value };
    let clamped = value.clamp(0, 100);
    Ok((clamped as u8, clamped != value))
}
