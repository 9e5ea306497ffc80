use serde::{Deserialize, Serialize};

use super::PromptError;

pub const TRANSCRIPTION_SYSTEM: &str = "Extract the text from the image in LaTeX. The output should only contain the text in LaTeX. If no text is identified in the image, return Empty.";

const JUDGE_LEAD: &str = "Determine whether the student answer includes the solution in the grading rule.";
const IGNORE_SENTENCE: &str =
    " Ignore the additional information in the student answer that is irrelevant to the grading rule.";
const MCQ_CHOICES: &str = "Choose from: (A) Yes (B) No (C) I am not sure.";
const EXPLAIN: &str = "Provide a short explanation of your decision.";
const STRICT_TEMPLATE: &str = "The output should strictly use the following template:";

pub const FREE_SYSTEM: &str = "Based on the question and the maximum number of points, determine the number of points to be awarded to the student answer. The number must be an integer. Provide an explanation for your decision.\nThe output should strictly use the following template:\nPoints: [Number of points]\nExplanation: [Explanation]";

pub const PARAPHRASE_INSTRUCTION: &str =
    "generate a variation of the following instruction while keeping the semantic meaning.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum JudgementFormat {
    #[default]
    Verbalized,
    #[serde(alias = "multiple_choice")]
    Mcq,
}

/// A rendered system/user pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub system: String,
    pub user: String,
}

/// Transcription prompt: the system text plus, with question context, a
/// `Question: ...` text block sent before the image.
pub fn render_transcription_prompt(
    include_question: bool,
    question_text: Option<&str>,
) -> Result<(String, Option<String>), PromptError> {
    match (include_question, question_text) {
        (false, _) => Ok((TRANSCRIPTION_SYSTEM.to_string(), None)),
        (true, Some(q)) => Ok((TRANSCRIPTION_SYSTEM.to_string(), Some(format!("Question: {q}")))),
        (true, None) => Err(PromptError::Config(
            "question context requested but no question text given".into(),
        )),
    }
}

pub fn judgement_system(format: JudgementFormat, ignore_statement: bool) -> String {
    let mut s = String::from(JUDGE_LEAD);
    if ignore_statement {
        s.push_str(IGNORE_SENTENCE);
    }
    s.push('\n');
    if format == JudgementFormat::Mcq {
        s.push_str(MCQ_CHOICES);
        s.push('\n');
    }
    s.push_str(EXPLAIN);
    s.push('\n');
    s.push_str(STRICT_TEMPLATE);
    s.push('\n');
    s.push_str(match format {
        JudgementFormat::Verbalized => "Judgement: [Yes/No]",
        JudgementFormat::Mcq => "Judgement: [A/B/C]",
    });
    s.push_str("\nExplanation: [Explanation]");
    s
}

/// Rule prompt. The rule text and answer are inserted byte-for-byte.
pub fn render_rule_prompt(
    rule_text: &str,
    answer: &str,
    format: JudgementFormat,
    ignore_statement: bool,
) -> RenderedPrompt {
    RenderedPrompt {
        system: judgement_system(format, ignore_statement),
        user: format!("Grading rule: {rule_text}\nStudent answer: {answer}"),
    }
}

pub fn render_free_prompt(
    question: &str,
    max_points: i64,
    answer: &str,
) -> Result<RenderedPrompt, PromptError> {
    if max_points < 1 {
        return Err(PromptError::Config(format!(
            "free grading needs max_points >= 1, got {max_points}"
        )));
    }
    Ok(RenderedPrompt {
        system: FREE_SYSTEM.to_string(),
        user: format!("Question: {question}\nMaximum points: {max_points}\nStudent answer: {answer}"),
    })
}

pub fn render_paraphrase_prompt(rule_text: &str) -> Result<String, PromptError> {
    if rule_text.trim().is_empty() {
        return Err(PromptError::Config("rule text must not be empty".into()));
    }
    Ok(format!("{PARAPHRASE_INSTRUCTION}\n{rule_text}"))
}

/// Every template with its placeholders, keyed by a stable file name.
pub fn template_catalog() -> Vec<(&'static str, String)> {
    let rule = render_rule_prompt("[Grading rule]", "[Answer]", JudgementFormat::Verbalized, true);
    vec![
        ("transcription_system.txt", TRANSCRIPTION_SYSTEM.to_string()),
        ("transcription_question_user.txt", "Question: [Question]".to_string()),
        ("rule_user.txt", rule.user),
        ("verbalized_ignore_system.txt", judgement_system(JudgementFormat::Verbalized, true)),
        ("verbalized_system.txt", judgement_system(JudgementFormat::Verbalized, false)),
        ("mcq_ignore_system.txt", judgement_system(JudgementFormat::Mcq, true)),
        ("mcq_system.txt", judgement_system(JudgementFormat::Mcq, false)),
        ("free_system.txt", FREE_SYSTEM.to_string()),
        (
            "free_user.txt",
            "Question: [Question]\nMaximum points: [Number of points]\nStudent answer: [Answer]".to_string(),
        ),
        ("paraphrase.txt", format!("{PARAPHRASE_INSTRUCTION}\n[Grading rule]")),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transcription_without_question() {
        let (system, user) = render_transcription_prompt(false, None).unwrap();
        assert_eq!(system, "Extract the text from the image in LaTeX. The output should only contain the text in LaTeX. If no text is identified in the image, return Empty.");
        assert!(user.is_none());
    }

    #[test]
    fn transcription_with_question() {
        let q = "∫₀^{3π/2} π sin(x) dx = ?";
        let (system, user) = render_transcription_prompt(true, Some(q)).unwrap();
        assert_eq!(system, TRANSCRIPTION_SYSTEM);
        assert_eq!(user.unwrap(), format!("Question: {q}"));
        assert!(matches!(render_transcription_prompt(true, None), Err(PromptError::Config(_))));
    }

    #[test]
    fn rule_prompt_user_block() {
        let p = render_rule_prompt("x=1 is a zero…", "x₀=1, 4i, −4i", JudgementFormat::Verbalized, true);
        assert_eq!(p.user, "Grading rule: x=1 is a zero…\nStudent answer: x₀=1, 4i, −4i");
    }

    #[test]
    fn mcq_lists_choices() {
        let p = render_rule_prompt("r", "a", JudgementFormat::Mcq, true);
        assert!(p.system.contains("Choose from: (A) Yes (B) No (C) I am not sure."));
    }

    #[test]
    fn ignore_flag_only_removes_sentence() {
        for format in [JudgementFormat::Verbalized, JudgementFormat::Mcq] {
            let with = judgement_system(format, true);
            let without = judgement_system(format, false);
            assert!(with.contains("Ignore the additional information"));
            assert!(!without.contains("Ignore"));
            assert_eq!(with.replacen(IGNORE_SENTENCE, "", 1), without);
        }
    }

    #[test]
    fn free_prompt() {
        let p = render_free_prompt("Problem 1", 2, "π").unwrap();
        assert_eq!(p.user, "Question: Problem 1\nMaximum points: 2\nStudent answer: π");
        assert!(render_free_prompt("q", 0, "a").is_err());
        let p = render_free_prompt("q", 3, "line one\nline two\r\n").unwrap();
        assert!(p.user.ends_with("Student answer: line one\nline two\r\n"));
    }

    #[test]
    fn paraphrase_prompt() {
        let p = render_paraphrase_prompt("$x = 1$ is a zero of $p(x)=x^3-x^2+4x-4$").unwrap();
        assert_eq!(
            p,
            "generate a variation of the following instruction while keeping the semantic meaning.\n$x = 1$ is a zero of $p(x)=x^3-x^2+4x-4$"
        );
        assert!(render_paraphrase_prompt("  ").is_err());
    }

    #[test]
    fn substitution_is_verbatim() {
        let answer = "  [Answer] \\frac{1}{2}\t";
        let p = render_rule_prompt("[Grading rule]", answer, JudgementFormat::Verbalized, false);
        assert!(p.user.ends_with(answer));
    }
}
