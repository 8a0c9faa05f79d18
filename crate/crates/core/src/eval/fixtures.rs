//! Constructed mock scenarios with exactly controlled similarity and
//! confidence scores.
//!
//! A trace with similarity `s` and confidence `c` carries the image
//! representation `[1, 0]`, the text representation
//! `[2s - 1, sqrt(1 - (2s - 1)^2)]` (cosine `2s - 1`) and the single token
//! log-probability `ln c`.

use crate::backend::{MockEntry, MockScript};
use crate::selfverify::{ChoiceOption, GenerationTrace, PromptMode};

use super::BenchmarkInstance;

pub fn trace(text: &str, mode: PromptMode, s: f64, c: f64) -> GenerationTrace {
    let cos = 2.0 * s - 1.0;
    GenerationTrace {
        text: text.into(),
        token_logprobs: vec![c.ln()],
        img_rep: vec![1.0, 0.0],
        txt_rep: vec![cos, (1.0 - cos * cos).max(0.0).sqrt()],
        prompt_mode: mode,
    }
}

fn options() -> Vec<ChoiceOption> {
    ["A", "B", "C", "D"]
        .iter()
        .map(|l| ChoiceOption::new(*l, format!("choice {l}")))
        .collect()
}

/// One instance answered by the direct branch with `direct` and by the CoT
/// branch with `cot`; each is `(letter, s, c)`.
pub struct Spec {
    pub id: &'static str,
    pub gold: &'static str,
    pub direct: (&'static str, f64, f64),
    pub cot: (&'static str, f64, f64),
}

pub fn build(specs: &[Spec]) -> (Vec<BenchmarkInstance>, MockScript) {
    let mut instances = Vec::new();
    let mut entries = Vec::new();
    for sp in specs {
        let inst = BenchmarkInstance {
            id: sp.id.into(),
            image_ref: format!("fixture/{}.png", sp.id),
            question: format!("Which choice fits image {}?", sp.id),
            options: options(),
            gold_answer: sp.gold.into(),
            split: Some("test".into()),
        };
        let (dl, ds, dc) = sp.direct;
        let (cl, cs, cc) = sp.cot;
        let cot_text = format!("The image shows the relevant detail. Reasoning over the choices, the answer is {cl}.");
        for (mode, t) in [
            (PromptMode::Direct, trace(dl, PromptMode::Direct, ds, dc)),
            (PromptMode::Cot, trace(&cot_text, PromptMode::Cot, cs, cc)),
        ] {
            entries.push(MockEntry {
                image_ref: inst.image_ref.clone(),
                question: inst.question.clone(),
                prompt_mode: mode,
                trace: Some(t),
                error: None,
            });
        }
        instances.push(inst);
    }
    let script = MockScript {
        default: trace("Z", PromptMode::Direct, 0.5, 0.5),
        entries,
    };
    (instances, script)
}

/// Two easy instances where only the direct answer is right and the direct
/// response scores higher, and two hard instances where only the CoT answer
/// is right and the CoT response scores higher (at alpha = 0.7).
pub fn easy_hard() -> (Vec<BenchmarkInstance>, MockScript) {
    build(&[
        Spec {
            id: "easy-1",
            gold: "A",
            direct: ("A", 0.8, 0.9),
            cot: ("B", 0.6, 0.5),
        },
        Spec {
            id: "easy-2",
            gold: "B",
            direct: ("B", 0.75, 0.85),
            cot: ("D", 0.55, 0.45),
        },
        Spec {
            id: "hard-1",
            gold: "C",
            direct: ("D", 0.5, 0.4),
            cot: ("C", 0.8, 0.85),
        },
        Spec {
            id: "hard-2",
            gold: "D",
            direct: ("A", 0.45, 0.35),
            cot: ("D", 0.7, 0.8),
        },
    ])
}

/// Direct scores `s = c = 0.5`; the CoT scores `s = 0.5 - 0.4a`,
/// `c = 0.5 + 0.4(1 - a)`, so the CoT response wins exactly when
/// `alpha > a`.
fn crossing(id: &'static str, gold: &'static str, cot_right: bool, a: f64) -> Spec {
    let wrong = if gold == "A" { "B" } else { "A" };
    let (d, c) = if cot_right { (wrong, gold) } else { (gold, wrong) };
    Spec {
        id,
        gold,
        direct: (d, 0.5, 0.5),
        cot: (c, 0.5 - 0.4 * a, 0.5 + 0.4 * (1.0 - a)),
    }
}

/// Sweep scenario whose accuracy peaks only at alpha = 0.7: CoT-correct
/// instances cross over at 0.15, 0.35, 0.55 and 0.65, direct-correct ones at
/// 0.75 and 0.85, plus two instances where both branches agree.
pub fn alpha_optimum() -> (Vec<BenchmarkInstance>, MockScript) {
    build(&[
        crossing("cot-15", "C", true, 0.15),
        crossing("cot-35", "B", true, 0.35),
        crossing("cot-55", "D", true, 0.55),
        crossing("cot-65", "A", true, 0.65),
        crossing("direct-75", "B", false, 0.75),
        crossing("direct-85", "C", false, 0.85),
        Spec {
            id: "agree-1",
            gold: "A",
            direct: ("A", 0.6, 0.6),
            cot: ("A", 0.6, 0.6),
        },
        Spec {
            id: "agree-2",
            gold: "D",
            direct: ("D", 0.3, 0.9),
            cot: ("D", 0.9, 0.3),
        },
    ])
}

/// Every instance answered identically and correctly by both branches.
pub fn all_agree() -> (Vec<BenchmarkInstance>, MockScript) {
    build(&[
        Spec {
            id: "same-1",
            gold: "A",
            direct: ("A", 0.9, 0.2),
            cot: ("A", 0.1, 0.3),
        },
        Spec {
            id: "same-2",
            gold: "C",
            direct: ("C", 0.2, 0.9),
            cot: ("C", 0.7, 0.1),
        },
    ])
}
