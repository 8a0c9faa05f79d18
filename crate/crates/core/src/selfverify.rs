//! Inference-time self-verification.
//!
//! A direct response and a chain-of-thought response are scored by
//! cross-modal similarity `S` and generation confidence `C`. If their
//! extracted answers agree the CoT answer is returned; otherwise the branch
//! with the larger `SC = (1 - alpha) * S + alpha * C` wins, ties going to CoT.

use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::cosine_sim;

pub const DEFAULT_ALPHA: f64 = 0.7;

/// Similarity reported when a trace carries no pooled representations.
pub const NEUTRAL_SIMILARITY: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    Direct,
    Cot,
}

impl PromptMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptMode::Direct => "direct",
            PromptMode::Cot => "cot",
        }
    }
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One lettered multiple-choice option.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceOption {
    pub letter: String,
    pub text: String,
}

impl ChoiceOption {
    pub fn new(letter: impl Into<String>, text: impl Into<String>) -> Self {
        ChoiceOption {
            letter: letter.into(),
            text: text.into(),
        }
    }
}

/// Output of one backend call.
///
/// `token_logprobs` covers generated tokens only. Empty `img_rep`/`txt_rep`
/// mean the backend could not supply pooled representations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub text: String,
    pub token_logprobs: Vec<f64>,
    #[serde(default)]
    pub img_rep: Vec<f64>,
    #[serde(default)]
    pub txt_rep: Vec<f64>,
    pub prompt_mode: PromptMode,
}

impl GenerationTrace {
    pub fn has_reps(&self) -> bool {
        !self.img_rep.is_empty() && !self.txt_rep.is_empty()
    }

    /// `S` for this trace, or the neutral midpoint when reps are missing.
    pub fn similarity(&self) -> Result<f64> {
        if self.has_reps() {
            similarity_score(&self.img_rep, &self.txt_rep)
        } else {
            log::warn!(
                "{} trace has no pooled representations; using S = {NEUTRAL_SIMILARITY}",
                self.prompt_mode
            );
            Ok(NEUTRAL_SIMILARITY)
        }
    }
}

/// Normalized-perplexity confidence: `exp(mean(token_logprobs))`, in `(0, 1]`.
pub fn confidence(token_logprobs: &[f64]) -> Result<f64> {
    if token_logprobs.is_empty() {
        return Err(Error::Empty("confidence"));
    }
    for (pos, &value) in token_logprobs.iter().enumerate() {
        if value > 0.0 || value.is_nan() {
            return Err(Error::InvalidLogprob { pos, value });
        }
    }
    let mut sorted = token_logprobs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
    Ok(mean.exp())
}

/// Cosine mapped from `[-1, 1]` onto `[0, 1]`.
pub fn similarity_score(img_rep: &[f64], txt_rep: &[f64]) -> Result<f64> {
    Ok((1.0 + cosine_sim(img_rep, txt_rep)?) / 2.0)
}

pub fn weighted_score(s: f64, c: f64, alpha: f64) -> f64 {
    (1.0 - alpha) * s + alpha * c
}

pub fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::Config(format!("alpha must lie in [0, 1], got {alpha}")))
    }
}

fn declaration_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\banswer(?:\s+is\b|\s*:)").expect("valid regex"))
}

fn letter_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    // a letter, optionally parenthesized, followed by a terminator
    RE.get_or_init(|| Regex::new(r"^\(?([A-Za-z])\)?(?:$|[.,;:!?)\s])").expect("valid regex"))
}

fn strip_decoration(s: &str) -> &str {
    s.trim_matches(|c: char| c.is_whitespace() || matches!(c, '*' | '"' | '\'' | '`' | ':'))
}

fn allowed_letter(letter: &str, options: &[ChoiceOption]) -> Option<String> {
    let up = letter.to_ascii_uppercase();
    let ok = if options.is_empty() {
        matches!(up.as_str(), "A" | "B" | "C" | "D" | "E")
    } else {
        options.iter().any(|o| o.letter.eq_ignore_ascii_case(&up))
    };
    ok.then_some(up)
}

fn option_by_text(text: &str, options: &[ChoiceOption]) -> Option<String> {
    let needle = text.trim().to_lowercase();
    options
        .iter()
        .find(|o| o.text.trim().to_lowercase() == needle)
        .map(|o| o.letter.to_ascii_uppercase())
}

/// Pulls the final answer out of a response.
///
/// Rules, first hit wins:
/// 1. the last "answer is X" / "answer: X" declaration;
/// 2. a trailing standalone option letter;
/// 3. the single option whose text occurs in the final sentence;
/// 4. the whole trimmed text.
///
/// Letters come back upper-cased. Matching is case-insensitive.
pub fn extract_answer(text: &str, options: &[ChoiceOption]) -> String {
    let trimmed = text.trim();

    if let Some(m) = declaration_re().find_iter(trimmed).last() {
        let rest = &trimmed[m.end()..];
        let line = rest.lines().next().unwrap_or("");
        let tail = strip_decoration(line);
        if let Some(c) = letter_re().captures(tail) {
            let raw = c.get(1).expect("group").as_str();
            let after = &tail[c.get(0).expect("match").end()..];
            // "answer is a cat" reads as an article, not option a
            let article = raw == "a" && after.trim_start().chars().next().is_some_and(char::is_alphanumeric);
            if !article {
                if let Some(letter) = allowed_letter(raw, options) {
                    return letter;
                }
            }
        }
        let phrase = sentence_head(tail);
        if !phrase.is_empty() {
            return option_by_text(phrase, options).unwrap_or_else(|| phrase.to_string());
        }
    }

    if let Some(last) = trimmed.split_whitespace().last() {
        let token = last.trim_matches(|c: char| matches!(c, '(' | ')' | '.' | ',' | ':' | '*' | '"'));
        if token.len() == 1 && token.chars().all(|c| c.is_ascii_alphabetic()) {
            let upper = token.chars().all(|c| c.is_ascii_uppercase());
            if upper || !options.is_empty() {
                if let Some(letter) = allowed_letter(token, options) {
                    return letter;
                }
            }
        }
    }

    if !options.is_empty() {
        let final_sentence = trimmed
            .split(['.', '!', '?', '\n'])
            .map(str::trim)
            .rfind(|s| !s.is_empty())
            .unwrap_or("")
            .to_lowercase();
        let hits: Vec<&ChoiceOption> = options
            .iter()
            .filter(|o| {
                let t = o.text.trim().to_lowercase();
                !t.is_empty() && final_sentence.contains(&t)
            })
            .collect();
        if let [only] = hits.as_slice() {
            return only.letter.to_ascii_uppercase();
        }
    }

    trimmed.to_string()
}

/// Text up to the first sentence terminator.
fn sentence_head(s: &str) -> &str {
    let bytes = s.as_bytes();
    let mut end = s.len();
    for (i, ch) in s.char_indices() {
        if matches!(ch, '!' | '?') {
            end = i;
            break;
        }
        if ch == '.' && bytes.get(i + 1).is_none_or(|b| b.is_ascii_whitespace()) {
            end = i;
            break;
        }
    }
    strip_decoration(&s[..end])
}

/// Case-insensitive comparison after trimming.
pub fn answers_match(a: &str, b: &str) -> bool {
    a.trim().to_lowercase() == b.trim().to_lowercase()
}

/// A response with its extracted answer and verification scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredResponse {
    pub trace: GenerationTrace,
    pub answer: String,
    pub s: f64,
    pub c: f64,
    pub sc: f64,
    pub alpha: f64,
}

impl ScoredResponse {
    pub fn score(trace: GenerationTrace, options: &[ChoiceOption], alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        let c = confidence(&trace.token_logprobs)?;
        let s = trace.similarity()?;
        let answer = extract_answer(&trace.text, options);
        Ok(ScoredResponse {
            sc: weighted_score(s, c, alpha),
            trace,
            answer,
            s,
            c,
            alpha,
        })
    }

    /// Same response re-weighted for another `alpha`.
    pub fn with_alpha(&self, alpha: f64) -> Self {
        ScoredResponse {
            sc: weighted_score(self.s, self.c, alpha),
            alpha,
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    CotByAgreement,
    CotByScore,
    DirectByScore,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::CotByAgreement => "cot-by-agreement",
            Branch::CotByScore => "cot-by-score",
            Branch::DirectByScore => "direct-by-score",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyDecision {
    pub final_answer: String,
    pub branch: Branch,
    pub direct: ScoredResponse,
    pub cot: ScoredResponse,
}

pub fn self_verify(direct: &ScoredResponse, cot: &ScoredResponse, alpha: f64) -> Result<VerifyDecision> {
    check_alpha(alpha)?;
    let direct = direct.with_alpha(alpha);
    let cot = cot.with_alpha(alpha);
    let (final_answer, branch) = if answers_match(&cot.answer, &direct.answer) {
        (cot.answer.clone(), Branch::CotByAgreement)
    } else if cot.sc >= direct.sc {
        (cot.answer.clone(), Branch::CotByScore)
    } else {
        (direct.answer.clone(), Branch::DirectByScore)
    };
    Ok(VerifyDecision {
        final_answer,
        branch,
        direct,
        cot,
    })
}

/// Per-branch section of an [`AuditRecord`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchAudit {
    pub text: String,
    pub answer: String,
    pub n_tokens: usize,
    pub mean_logprob: f64,
    pub min_logprob: f64,
    pub has_reps: bool,
    pub s: f64,
    pub c: f64,
    pub sc: f64,
}

impl From<&ScoredResponse> for BranchAudit {
    fn from(r: &ScoredResponse) -> Self {
        let lp = &r.trace.token_logprobs;
        BranchAudit {
            text: r.trace.text.clone(),
            answer: r.answer.clone(),
            n_tokens: lp.len(),
            mean_logprob: lp.iter().sum::<f64>() / lp.len().max(1) as f64,
            min_logprob: lp.iter().cloned().fold(0.0, f64::min),
            has_reps: r.trace.has_reps(),
            s: r.s,
            c: r.c,
            sc: r.sc,
        }
    }
}

/// One JSON object per verified instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub alpha: f64,
    pub branch: Branch,
    pub final_answer: String,
    pub direct: BranchAudit,
    pub cot: BranchAudit,
}

impl From<&VerifyDecision> for AuditRecord {
    fn from(d: &VerifyDecision) -> Self {
        AuditRecord {
            alpha: d.cot.alpha,
            branch: d.branch,
            final_answer: d.final_answer.clone(),
            direct: BranchAudit::from(&d.direct),
            cot: BranchAudit::from(&d.cot),
        }
    }
}
