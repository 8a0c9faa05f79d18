use std::fs;
use std::path::PathBuf;

use mixverify_core::curation::{build_rewrite_prompt, build_score_prompt, CurationRecord};

fn golden(name: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn record() -> CurationRecord {
    serde_json::from_str(golden("record.json").trim()).unwrap()
}

#[test]
fn rewrite_prompt_matches_golden() {
    assert_eq!(build_rewrite_prompt(&record()).unwrap(), golden("rewrite_prompt.txt"));
}

#[test]
fn score_prompt_matches_golden() {
    let rec = record();
    assert_eq!(build_score_prompt(&rec, &rec.raw_cot).unwrap(), golden("score_prompt.txt"));
}

#[test]
fn prompts_are_byte_stable() {
    let a = record();
    let b = record();
    assert_eq!(build_rewrite_prompt(&a).unwrap(), build_rewrite_prompt(&b).unwrap());
    assert_eq!(
        build_score_prompt(&a, "x").unwrap(),
        build_score_prompt(&b, "x").unwrap()
    );
}

#[test]
fn rewrite_prompt_keeps_the_exemplar_conclusion() {
    let p = build_rewrite_prompt(&record()).unwrap();
    assert!(p.contains("Hence, the correct answer is B.\n\nHere is the example to be rewritten:"));
}
