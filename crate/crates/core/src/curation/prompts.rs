//! Rewrite and scoring prompt templates.

use crate::error::{Error, Result};
use crate::selfverify::ChoiceOption;

use super::CurationRecord;

pub const REWRITE_SYSTEM: &str = include_str!("../../assets/prompts/rewrite_system.txt");
pub const REWRITE_TEMPLATE: &str = include_str!("../../assets/prompts/rewrite_prompt.txt");
pub const SCORE_SYSTEM: &str = include_str!("../../assets/prompts/score_system.txt");
pub const SCORE_TEMPLATE: &str = include_str!("../../assets/prompts/score_prompt.txt");

/// Used when a record carries no image description.
pub const NO_DESCRIPTION: &str = "(no description provided)";

/// Replaces every `{name}` slot in one left-to-right pass, so slot-like
/// text inside substituted values is never expanded again.
pub fn expand(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'scan: while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        for (name, value) in slots {
            let key_len = name.len() + 2;
            if tail.len() >= key_len && tail[1..].starts_with(name) && tail[key_len - 1..].starts_with('}') {
                out.push_str(value);
                rest = &tail[key_len..];
                continue 'scan;
            }
        }
        out.push('{');
        rest = &tail[1..];
    }
    out.push_str(rest);
    out
}

/// Question on the first line, then one `L. text` line per option.
pub fn question_block(question: &str, options: &[ChoiceOption]) -> String {
    let mut out = question.trim().to_string();
    for o in options {
        out.push('\n');
        out.push_str(&format!("{}. {}", o.letter, o.text));
    }
    out
}

pub fn build_rewrite_prompt(rec: &CurationRecord) -> Result<String> {
    if rec.raw_cot.trim().is_empty() {
        return Err(Error::Config(format!("record {} has no raw CoT", rec.id)));
    }
    let qo = question_block(&rec.question, &rec.options);
    Ok(expand(
        REWRITE_TEMPLATE,
        &[("question_options", &qo), ("cot", rec.raw_cot.trim())],
    ))
}

pub fn build_score_prompt(rec: &CurationRecord, cot: &str) -> Result<String> {
    if cot.trim().is_empty() {
        return Err(Error::Config(format!("record {}: cannot score an empty CoT", rec.id)));
    }
    let qo = question_block(&rec.question, &rec.options);
    let desc = rec
        .image_description
        .as_deref()
        .map(str::trim)
        .filter(|d| !d.is_empty())
        .unwrap_or(NO_DESCRIPTION);
    Ok(expand(
        SCORE_TEMPLATE,
        &[
            ("image_description", desc),
            ("question_options", &qo),
            ("cot", cot.trim()),
        ],
    ))
}
