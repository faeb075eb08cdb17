//! Tolerant parsers for model output. Models decorate lists with
//! enumeration markers and wrap triples in several bracket styles; the
//! parsers accept the common shapes and count what they had to skip.

use crate::model::KnowledgeTriple;

/// Drops a leading enumeration marker: "1.", "2)", "(3)", "-", "*", "•".
pub fn strip_enumeration(line: &str) -> &str {
    let line = line.trim_start();
    if let Some(rest) = line.strip_prefix(['-', '*', '•']) {
        return rest.trim_start();
    }
    let mut chars = line.char_indices().peekable();
    let mut saw_digit = false;
    if let Some((_, '(')) = chars.peek() {
        chars.next();
    }
    for (i, c) in chars {
        if c.is_ascii_digit() {
            saw_digit = true;
            continue;
        }
        if saw_digit && matches!(c, '.' | ')' | ':' | '>') {
            let rest = &line[i + c.len_utf8()..];
            if rest.is_empty() || rest.starts_with(' ') || rest.starts_with('\t') {
                return rest.trim_start();
            }
        }
        break;
    }
    line
}

fn strip_brackets(line: &str) -> &str {
    let line = line.trim();
    for (open, close) in [('(', ')'), ('⟨', '⟩'), ('<', '>'), ('[', ']')] {
        if line.starts_with(open) && line.ends_with(close) && line.len() > open.len_utf8() {
            return line[open.len_utf8()..line.len() - close.len_utf8()].trim();
        }
    }
    line
}

/// Parses one triple per line. Returns the triples in order plus the
/// number of non-empty lines that failed to parse.
pub fn parse_triples(raw: &str) -> (Vec<KnowledgeTriple>, usize) {
    let mut triples = Vec::new();
    let mut skipped = 0;
    for line in raw.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let body = strip_brackets(strip_enumeration(line));
        let parts: Vec<&str> = body.split(';').map(str::trim).collect();
        if parts.len() == 3 {
            if let Ok(triple) = KnowledgeTriple::new(parts[0], parts[1], parts[2]) {
                triples.push(triple);
                continue;
            }
        }
        skipped += 1;
    }
    (triples, skipped)
}

/// Parses one fact per line, stripping enumeration markers. Returns the
/// facts plus the number of non-empty lines that vanished entirely.
pub fn parse_fact_lines(raw: &str) -> (Vec<String>, usize) {
    let mut facts = Vec::new();
    let mut skipped = 0;
    for line in raw.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let body = strip_enumeration(line).trim();
        if body.is_empty() {
            skipped += 1;
        } else {
            facts.push(body.to_string());
        }
    }
    (facts, skipped)
}

/// Every integer in the text, in order of appearance. Used for rerank
/// responses like "3, 1, 2" or "Ranking: 3 > 1 > 2".
pub fn parse_rank_list(raw: &str) -> Vec<usize> {
    let mut out = Vec::new();
    let mut current: Option<usize> = None;
    for c in raw.chars() {
        if let Some(d) = c.to_digit(10) {
            let next = current
                .unwrap_or(0)
                .saturating_mul(10)
                .saturating_add(d as usize);
            current = Some(next);
        } else if let Some(value) = current.take() {
            out.push(value);
        }
    }
    if let Some(value) = current {
        out.push(value);
    }
    out
}
