use serde::{Deserialize, Serialize};

use super::{JudgementFormat, PromptError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Yes,
    No,
    Unsure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgementOutcome {
    pub verdict: Verdict,
    pub explanation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointsOutcome {
    pub points: i64,
    pub explanation: String,
}

/// Strip markdown emphasis, heading marks and bullets around a line.
fn clean(line: &str) -> String {
    line.trim()
        .trim_start_matches(['#', '>', '-', '•'])
        .replace(['*', '_', '`'], "")
        .trim()
        .to_string()
}

/// Find `label:` at the start of a cleaned line, returning the line index
/// and the text after the colon.
fn find_field(lines: &[String], labels: &[&str]) -> Option<(usize, String)> {
    lines.iter().enumerate().find_map(|(i, line)| {
        let lower = line.to_ascii_lowercase();
        labels.iter().find_map(|label| {
            let rest = lower.strip_prefix(label)?;
            let rest = rest.trim_start();
            let rest = rest.strip_prefix(':')?;
            let offset = line.len() - rest.len();
            Some((i, line[offset..].trim().to_string()))
        })
    })
}

fn explanation_after(lines: &[String], raw_lines: &[&str], from: usize) -> String {
    let Some((i, _)) = find_field(&lines[from..], &["explanation"]) else {
        return String::new();
    };
    // Take the first line from the raw text so answer content such as
    // `x_0` or `a*b` survives.
    let raw = raw_lines[from + i];
    let start = raw.to_ascii_lowercase().find("explanation").unwrap_or(0);
    let first = raw[start..]
        .split_once(':')
        .map_or("", |(_, rest)| rest)
        .trim_start_matches(|c: char| matches!(c, '*' | '_') || c.is_whitespace());
    let mut parts = vec![first.to_string()];
    parts.extend(raw_lines[from + i + 1..].iter().map(|l| l.trim_end().to_string()));
    parts.join("\n").trim().to_string()
}

fn split_lines(text: &str) -> (Vec<&str>, Vec<String>) {
    let raw: Vec<&str> = text.lines().map(|l| l.trim_end_matches('\r')).collect();
    let cleaned = raw.iter().map(|l| clean(l)).collect();
    (raw, cleaned)
}

fn verdict_token(token: &str, format: JudgementFormat) -> Option<Verdict> {
    let t = token
        .trim()
        .trim_matches(|c: char| matches!(c, '[' | ']' | '"' | '\'' | '.' | '!'))
        .trim()
        .to_lowercase();
    let word = t.split_whitespace().next().unwrap_or("");
    let word = word.trim_end_matches([',', '.', ';', ':']);
    let choice = word.trim_start_matches('(').split(')').next().unwrap_or("");
    let unsure = t.contains("not sure") || t.contains("unsure");
    match format {
        JudgementFormat::Mcq => match choice {
            "a" => Some(Verdict::Yes),
            "b" => Some(Verdict::No),
            "c" => Some(Verdict::Unsure),
            "yes" | "correct" => Some(Verdict::Yes),
            "no" | "incorrect" => Some(Verdict::No),
            _ if unsure => Some(Verdict::Unsure),
            _ => None,
        },
        JudgementFormat::Verbalized => match word {
            "yes" | "correct" => Some(Verdict::Yes),
            "no" | "incorrect" => Some(Verdict::No),
            _ => None,
        },
    }
}

/// Read a `Judgement:` / `Explanation:` reply.
pub fn parse_judgement(text: &str, format: JudgementFormat) -> Result<JudgementOutcome, PromptError> {
    let (raw, lines) = split_lines(text);
    let (idx, token) = find_field(&lines, &["judgement", "judgment"])
        .ok_or_else(|| PromptError::Parse("no `Judgement:` line".into()))?;
    let verdict = verdict_token(&token, format)
        .ok_or_else(|| PromptError::Parse(format!("unrecognized judgement `{token}`")))?;
    Ok(JudgementOutcome {
        verdict,
        explanation: explanation_after(&lines, &raw, idx + 1),
    })
}

/// Read a `Points:` / `Explanation:` reply; the points must be a
/// non-negative integer.
pub fn parse_points(text: &str) -> Result<PointsOutcome, PromptError> {
    let (raw, lines) = split_lines(text);
    let (idx, token) = find_field(&lines, &["points"])
        .ok_or_else(|| PromptError::Parse("no `Points:` line".into()))?;
    let word = token
        .split_whitespace()
        .next()
        .unwrap_or("")
        .trim_matches(|c: char| matches!(c, '[' | ']'))
        .trim_end_matches(['.', ',', ';']);
    let points: i64 = word
        .parse()
        .ok()
        .filter(|_| word.chars().all(|c| c.is_ascii_digit()))
        .ok_or_else(|| PromptError::Parse(format!("points must be a non-negative integer, got `{token}`")))?;
    Ok(PointsOutcome {
        points,
        explanation: explanation_after(&lines, &raw, idx + 1),
    })
}
