//! Multiple-choice answer extraction.

use std::sync::OnceLock;

use regex::Regex;

use super::{FailureDetail, FailureKind};
use crate::pareto::TaskInstance;

fn marker_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(?:final\s+answer|answer)\b").expect("valid regex"))
}

fn paren_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\(([^()\s])\)").expect("valid regex"))
}

fn skip_separators(s: &str) -> &str {
    s.trim_start_matches(|c: char| c.is_whitespace() || matches!(c, ':' | '(' | '*'))
}

/// The label named right after a marker phrase, if the text there is
/// `[sep]* ["is" sep*] LABEL` with LABEL followed by a non-alphanumeric.
fn label_after_marker(rest: &str, labels: &[char]) -> Option<char> {
    let mut rest = skip_separators(rest);
    if rest.len() >= 2 && rest.is_char_boundary(2) && rest[..2].eq_ignore_ascii_case("is") {
        let after = &rest[2..];
        if after.chars().next().is_none_or(|c| !c.is_alphanumeric()) {
            rest = skip_separators(after);
        }
    }
    let mut chars = rest.chars();
    let label = chars.next()?;
    let bounded = chars.next().is_none_or(|c| !c.is_alphanumeric());
    (bounded && labels.contains(&label)).then_some(label)
}

/// Find the final answer label in a completion.
///
/// The last marked occurrence wins: "final answer" or "answer"
/// (case-insensitive), then optional colon, whitespace, parenthesis or
/// emphasis, an optional "is", and a valid label not followed by an
/// alphanumeric character. Without any marked occurrence the last
/// parenthesized valid label such as "(C)" is used.
pub fn extract_final_answer(completion: &str, labels: &[char]) -> Option<char> {
    let marked = marker_re()
        .find_iter(completion)
        .filter_map(|m| label_after_marker(&completion[m.end()..], labels))
        .last();
    marked.or_else(|| {
        paren_re()
            .captures_iter(completion)
            .filter_map(|c| c[1].chars().next())
            .filter(|l| labels.contains(l))
            .last()
    })
}

/// Grade a multiple-choice completion against the instance's key.
pub fn check_answer(completion: &str, instance: &TaskInstance) -> Result<(), FailureDetail> {
    let key = instance
        .answer_key
        .as_deref()
        .and_then(|k| k.chars().next())
        .ok_or_else(|| FailureDetail::new(FailureKind::NoAnswerFound, "instance has no answer key"))?;
    match extract_final_answer(completion, &instance.labels()) {
        Some(found) if found == key => Ok(()),
        Some(found) => Err(FailureDetail::new(
            FailureKind::WrongAnswer,
            format!("answered {found}, expected {key}"),
        )),
        None => Err(FailureDetail::new(
            FailureKind::NoAnswerFound,
            "no recognizable final answer",
        )),
    }
}
