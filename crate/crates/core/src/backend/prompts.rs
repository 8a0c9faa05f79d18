use crate::selfverify::{ChoiceOption, PromptMode};

/// Task prompt asking for the final answer only.
pub const DIRECT_TASK_PROMPT: &str =
    "Answer the question directly. Reply with only the final answer; if options are given, reply with the option's letter.";

/// Task prompt asking for step-by-step reasoning before the answer.
pub const COT_TASK_PROMPT: &str = "Think step by step. First describe the visual evidence relevant to the question, then reason through it, and finally state the answer on its own line as \"The answer is X\".";

/// `question`, one line per option, then the mode's task prompt.
///
/// The two modes differ only in the final task-prompt section.
pub fn render_prompt(question: &str, options: &[ChoiceOption], mode: PromptMode) -> String {
    let mut out = String::new();
    out.push_str("Question: ");
    out.push_str(question.trim());
    out.push('\n');
    if !options.is_empty() {
        out.push_str("Options:\n");
        for o in options {
            out.push_str(&format!("{}. {}\n", o.letter, o.text));
        }
    }
    out.push_str(match mode {
        PromptMode::Direct => DIRECT_TASK_PROMPT,
        PromptMode::Cot => COT_TASK_PROMPT,
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_share_everything_but_the_task_prompt() {
        let opts = [ChoiceOption::new("A", "red"), ChoiceOption::new("B", "blue")];
        let d = render_prompt("What colour is the ball?", &opts, PromptMode::Direct);
        let c = render_prompt("What colour is the ball?", &opts, PromptMode::Cot);
        let d_head = d.strip_suffix(DIRECT_TASK_PROMPT).unwrap();
        let c_head = c.strip_suffix(COT_TASK_PROMPT).unwrap();
        assert_eq!(d_head, c_head);
        assert!(d.contains("What colour is the ball?"));
        assert!(d.contains("B. blue\n"));
    }
}
