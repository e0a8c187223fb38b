//! Line-oriented grammar for profiler answers.
//!
//! ```text
//! Complexity: High|Low
//! Joint Reasoning needed: Yes|No
//! Pieces: <int>
//! Summary range: <int>-<int>
//! ```
//!
//! Keys match case-insensitively by prefix, list markers are ignored and any
//! extra lines are skipped. Out-of-domain numbers are clamped and flagged.

use super::{ProfileField, ProfilerError};
use crate::mapping::IntRange;
use crate::types::TrueProfile;
use std::ops::Range;

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedAnswer {
    pub complexity_high: bool,
    pub needs_joint_reasoning: bool,
    pub pieces_required: u32,
    pub summary_len_range: IntRange,
    /// Fields whose raw value fell outside its domain.
    pub clamped: Vec<ProfileField>,
    /// Byte span of each field's value inside the raw text.
    pub spans: Vec<(ProfileField, Range<usize>)>,
}

fn strip_marker(line: &str) -> &str {
    let t = line.trim_start();
    let t = t.trim_start_matches(['-', '*', '•']);
    let digits = t.len() - t.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    let t = if digits > 0 && t[digits..].starts_with(['.', ')']) { &t[digits + 1..] } else { t };
    t.trim_start()
}

fn classify_key(key: &str) -> Option<ProfileField> {
    let k = key.trim().to_ascii_lowercase();
    if k.starts_with("complexity") || k == "query complexity" {
        Some(ProfileField::Complexity)
    } else if k.starts_with("joint") {
        Some(ProfileField::JointReasoning)
    } else if k.starts_with("pieces") {
        Some(ProfileField::Pieces)
    } else if k.starts_with("summary") || k.starts_with("summarization") {
        Some(ProfileField::SummaryRange)
    } else {
        None
    }
}

fn leading_ints(s: &str) -> Vec<i64> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in s.chars() {
        if c.is_ascii_digit() {
            cur.push(c);
        } else if !cur.is_empty() {
            out.push(cur.parse().unwrap_or(i64::MAX));
            cur.clear();
        }
    }
    if !cur.is_empty() {
        out.push(cur.parse().unwrap_or(i64::MAX));
    }
    out
}

fn clamp_flag(v: i64, lo: u32, hi: u32, field: ProfileField, clamped: &mut Vec<ProfileField>) -> u32 {
    let c = v.clamp(i64::from(lo), i64::from(hi)) as u32;
    if i64::from(c) != v && !clamped.contains(&field) {
        clamped.push(field);
    }
    c
}

pub fn parse_answer(raw: &str) -> Result<ParsedAnswer, ProfilerError> {
    let mut complexity = None;
    let mut joint = None;
    let mut pieces = None;
    let mut summary = None;
    let mut clamped = Vec::new();
    let mut spans = Vec::new();

    let mut offset = 0usize;
    for line in raw.split_inclusive('\n') {
        let line_start = offset;
        offset += line.len();
        let body = strip_marker(line.trim_end());
        let Some((key, value)) = body.split_once(':') else { continue };
        let Some(field) = classify_key(key) else { continue };
        let value_trim = value.trim();
        if value_trim.is_empty() {
            continue;
        }
        // Locate the value inside the original line for log-prob alignment.
        let value_start = line_start + (value_trim.as_ptr() as usize - line.as_ptr() as usize);
        let span = value_start..value_start + value_trim.len();
        let lower = value_trim.to_ascii_lowercase();
        match field {
            ProfileField::Complexity => {
                complexity = if lower.starts_with("high") {
                    Some(true)
                } else if lower.starts_with("low") {
                    Some(false)
                } else {
                    continue;
                };
            }
            ProfileField::JointReasoning => {
                joint = if lower.starts_with("yes") {
                    Some(true)
                } else if lower.starts_with("no") {
                    Some(false)
                } else {
                    continue;
                };
            }
            ProfileField::Pieces => {
                let Some(&v) = leading_ints(value_trim).first() else { continue };
                pieces = Some(clamp_flag(v, TrueProfile::PIECES_MIN, TrueProfile::PIECES_MAX, field, &mut clamped));
            }
            ProfileField::SummaryRange => {
                let nums = leading_ints(value_trim);
                let (a, b) = match nums.as_slice() {
                    [a, b, ..] => (*a, *b),
                    [a] => (*a, *a),
                    [] => continue,
                };
                let (a, b) = if a <= b { (a, b) } else { (b, a) };
                let lo = clamp_flag(a, TrueProfile::SUMMARY_MIN, TrueProfile::SUMMARY_MAX, field, &mut clamped);
                let hi = clamp_flag(b, TrueProfile::SUMMARY_MIN, TrueProfile::SUMMARY_MAX, field, &mut clamped);
                summary = Some(IntRange::new(lo, hi));
            }
        }
        spans.retain(|(f, _)| *f != field);
        spans.push((field, span));
    }

    let missing: Vec<&str> = [
        (complexity.is_none(), "complexity"),
        (joint.is_none(), "joint reasoning"),
        (pieces.is_none(), "pieces"),
        (summary.is_none(), "summary range"),
    ]
    .iter()
    .filter_map(|(m, name)| m.then_some(*name))
    .collect();
    if !missing.is_empty() {
        return Err(ProfilerError::UnparseableAnswer(format!("missing {}", missing.join(", "))));
    }

    Ok(ParsedAnswer {
        complexity_high: complexity.unwrap(),
        needs_joint_reasoning: joint.unwrap(),
        pieces_required: pieces.unwrap(),
        summary_len_range: summary.unwrap(),
        clamped,
        spans,
    })
}

/// Renders profile values in the answer grammar.
pub fn render_answer(complexity_high: bool, joint: bool, pieces: u32, summary: IntRange) -> String {
    format!(
        "Complexity: {}\nJoint Reasoning needed: {}\nPieces: {}\nSummary range: {}-{}\n",
        if complexity_high { "High" } else { "Low" },
        if joint { "Yes" } else { "No" },
        pieces,
        summary.low,
        summary.high
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_canonical_answer() {
        let raw = "Complexity: High\nJoint Reasoning needed: Yes\nPieces: 4\nSummary range: 50-120\n";
        let a = parse_answer(raw).unwrap();
        assert!(a.complexity_high && a.needs_joint_reasoning);
        assert_eq!(a.pieces_required, 4);
        assert_eq!(a.summary_len_range, IntRange::new(50, 120));
        assert!(a.clamped.is_empty());
        let pieces_span = a.spans.iter().find(|(f, _)| *f == ProfileField::Pieces).unwrap().1.clone();
        assert_eq!(&raw[pieces_span], "4");
    }

    #[test]
    fn tolerates_chatty_answers() {
        let raw = "Sure! Here is the profile.\n\n1. Complexity: low\n2. Joint reasoning needed: no \n\
                   - Pieces of information: 2 pieces\n* Summary range: 40 - 80 words\nThanks";
        let a = parse_answer(raw).unwrap();
        assert!(!a.complexity_high && !a.needs_joint_reasoning);
        assert_eq!(a.pieces_required, 2);
        assert_eq!(a.summary_len_range, IntRange::new(40, 80));
    }

    #[test]
    fn clamps_and_flags_out_of_domain() {
        let raw = "Complexity: Low\nJoint Reasoning needed: No\npieces: 15\nSummary range: 10-500";
        let a = parse_answer(raw).unwrap();
        assert_eq!(a.pieces_required, 10);
        assert_eq!(a.summary_len_range, IntRange::new(30, 200));
        assert_eq!(a.clamped, vec![ProfileField::Pieces, ProfileField::SummaryRange]);
    }

    #[test]
    fn rejects_incomplete_answers() {
        let err = parse_answer("Complexity: High\nPieces: 3").unwrap_err();
        assert!(matches!(err, ProfilerError::UnparseableAnswer(ref m) if m.contains("joint")));
        assert!(parse_answer("").is_err());
        assert!(
            parse_answer("Complexity: medium\nJoint Reasoning needed: Yes\nPieces: 3\nSummary range: 40-50").is_err()
        );
    }

    #[test]
    fn render_parse_round_trip() {
        let raw = render_answer(true, false, 7, IntRange::new(30, 200));
        let a = parse_answer(&raw).unwrap();
        assert!(a.complexity_high && !a.needs_joint_reasoning);
        assert_eq!(a.pieces_required, 7);
        assert_eq!(a.summary_len_range, IntRange::new(30, 200));
    }
}
