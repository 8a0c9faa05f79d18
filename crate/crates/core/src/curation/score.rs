use std::sync::LazyLock;

use regex::Regex;

use crate::error::{Error, Result};

static NUMBER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"-?(?:\d+(?:\.\d+)?|\.\d+)").expect("valid regex"));

fn first_number(s: &str) -> Option<&str> {
    NUMBER.find(s).map(|m| m.as_str())
}

/// Overall score from a judge reply: the first number on the `Scoring:`
/// line, else the first number after an `Overall` key. Must lie in `[0, 1]`.
pub fn parse_overall_score(reply: &str) -> Result<f64> {
    let err = || Error::ScoreParse { raw: reply.to_string() };
    let after_key = |line: &str, key: &str| -> Option<String> {
        let lower = line.to_ascii_lowercase();
        let at = lower.find(key)?;
        Some(line[at + key.len()..].to_string())
    };
    let candidate = reply
        .lines()
        .find_map(|l| {
            let t = l.trim_start();
            t.to_ascii_lowercase()
                .starts_with("scoring:")
                .then(|| first_number(&t["scoring:".len()..]).map(str::to_string))
                .flatten()
        })
        .or_else(|| {
            reply.lines().find_map(|l| {
                let rest = after_key(l, "overall")?;
                let rest = rest.trim_start().strip_prefix(':')?;
                first_number(rest).map(str::to_string)
            })
        })
        .ok_or_else(err)?;
    let v: f64 = candidate.parse().map_err(|_| err())?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(err())
    }
}
