//! Shared domain types and the exam/rubric configuration loader.

mod points;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use points::{snap_to_assignable, GridError, PointGrid, Points, PointsParseError, Snap};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid `{field}`: {message}")]
    Validation { field: String, message: String },
}

impl ConfigError {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Validation {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemSpec {
    #[serde(rename = "id")]
    pub problem_id: String,
    #[serde(rename = "question")]
    pub question_text: String,
    pub max_points: Points,
    #[serde(rename = "assignable")]
    pub assignable_points: PointGrid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExamSpec {
    pub exam_id: String,
    pub problems: Vec<ProblemSpec>,
    #[serde(default)]
    pub language: String,
}

impl ExamSpec {
    pub fn problem(&self, id: &str) -> Option<&ProblemSpec> {
        self.problems.iter().find(|p| p.problem_id == id)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.problems.is_empty() {
            return Err(ConfigError::validation("problems", "must not be empty"));
        }
        let mut seen = BTreeSet::new();
        for (i, p) in self.problems.iter().enumerate() {
            let field = |name: &str| format!("problems[{i}].{name}");
            if p.problem_id.trim().is_empty() {
                return Err(ConfigError::validation(field("id"), "must not be empty"));
            }
            if !seen.insert(p.problem_id.as_str()) {
                return Err(ConfigError::validation(
                    field("id"),
                    format!("duplicate problem id `{}`", p.problem_id),
                ));
            }
            if p.max_points <= Points::ZERO {
                return Err(ConfigError::validation(field("max_points"), "must be positive"));
            }
            let grid = &p.assignable_points;
            if grid.min() != Points::ZERO || !grid.contains(p.max_points) || grid.max() != p.max_points {
                return Err(ConfigError::validation(
                    field("assignable"),
                    "must start at 0 and end at max_points",
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, PartialOrd, Ord, Hash)]
#[serde(rename_all = "snake_case")]
pub enum RubricVariant {
    #[default]
    Original,
    Itemized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CombineMode {
    /// Sum of credited rules.
    #[default]
    Sum,
    /// Rules are summed per group; the best group wins.
    MaxOfGroups,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreCombinator {
    pub mode: CombineMode,
    pub cap: Points,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradingRule {
    #[serde(rename = "id")]
    pub rule_id: String,
    pub text: String,
    pub points: Points,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    #[serde(default)]
    pub paraphrases: Vec<String>,
}

impl GradingRule {
    /// Rule wording for a paraphrase set: `None` is the original text,
    /// `Some(k)` the k-th paraphrase (falling back to the original if absent).
    pub fn wording(&self, paraphrase: Option<usize>) -> &str {
        paraphrase
            .and_then(|k| self.paraphrases.get(k))
            .map(String::as_str)
            .unwrap_or(&self.text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rubric {
    pub problem_id: String,
    pub variant: RubricVariant,
    pub combinator: ScoreCombinator,
    pub rules: Vec<GradingRule>,
}

impl Rubric {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let at = |name: &str| format!("rubrics[{}].{name}", self.problem_id);
        if self.rules.is_empty() {
            return Err(ConfigError::validation(at("rules"), "at least one rule required"));
        }
        let mut seen = BTreeSet::new();
        for rule in &self.rules {
            if rule.text.trim().is_empty() {
                return Err(ConfigError::validation(
                    at(&format!("rules.{}.text", rule.rule_id)),
                    "must not be empty",
                ));
            }
            if rule.points.is_negative() {
                return Err(ConfigError::validation(
                    at(&format!("rules.{}.points", rule.rule_id)),
                    "must not be negative",
                ));
            }
            if !seen.insert(rule.rule_id.as_str()) {
                return Err(ConfigError::validation(
                    at("rules"),
                    format!("duplicate rule id `{}`", rule.rule_id),
                ));
            }
        }
        Ok(())
    }
}

/// Rubric as written in the config file; the cap comes from the problem.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct RubricEntry {
    problem_id: String,
    #[serde(default)]
    variant: RubricVariant,
    #[serde(default)]
    combinator: CombineMode,
    rules: Vec<GradingRule>,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct ExamFile {
    exam_id: String,
    problems: Vec<ProblemSpec>,
    #[serde(default)]
    language: String,
    #[serde(default)]
    rubrics: Vec<RubricEntry>,
}

/// Validated exam with its rubrics. Serializes in the config file format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ExamFile", into = "ExamFile")]
pub struct ExamConfig {
    pub exam: ExamSpec,
    pub rubrics: Vec<Rubric>,
}

impl ExamConfig {
    pub fn rubric(&self, problem_id: &str, variant: RubricVariant) -> Option<&Rubric> {
        self.rubrics
            .iter()
            .find(|r| r.problem_id == problem_id && r.variant == variant)
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let file: ExamFile =
            serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        Self::try_from(file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ExamFile::from(self.clone())).expect("exam config serializes")
    }
}

impl TryFrom<ExamFile> for ExamConfig {
    type Error = ConfigError;

    fn try_from(file: ExamFile) -> Result<Self, ConfigError> {
        let exam = ExamSpec {
            exam_id: file.exam_id,
            problems: file.problems,
            language: file.language,
        };
        exam.validate()?;

        let mut seen = BTreeSet::new();
        let mut rubrics = Vec::with_capacity(file.rubrics.len());
        for entry in file.rubrics {
            let problem = exam.problem(&entry.problem_id).ok_or_else(|| {
                ConfigError::validation(
                    "rubrics.problem_id",
                    format!("unknown problem `{}`", entry.problem_id),
                )
            })?;
            if !seen.insert((entry.problem_id.clone(), entry.variant)) {
                return Err(ConfigError::validation(
                    "rubrics",
                    format!("duplicate {:?} rubric for problem `{}`", entry.variant, entry.problem_id),
                ));
            }
            let rubric = Rubric {
                combinator: ScoreCombinator {
                    mode: entry.combinator,
                    cap: problem.max_points,
                },
                problem_id: entry.problem_id,
                variant: entry.variant,
                rules: entry.rules,
            };
            rubric.validate()?;
            rubrics.push(rubric);
        }
        Ok(ExamConfig { exam, rubrics })
    }

}

impl From<ExamConfig> for ExamFile {
    fn from(c: ExamConfig) -> Self {
        ExamFile {
            exam_id: c.exam.exam_id,
            problems: c.exam.problems,
            language: c.exam.language,
            rubrics: c
                .rubrics
                .into_iter()
                .map(|r| RubricEntry {
                    problem_id: r.problem_id,
                    variant: r.variant,
                    combinator: r.combinator.mode,
                    rules: r.rules,
                })
                .collect(),
        }
    }
}

/// Load and validate an exam/rubric config file.
pub fn load_exam_config(path: &Path) -> Result<ExamConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ExamConfig::from_json(&text)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageImage {
    pub index: usize,
    #[serde(skip)]
    pub bytes: Vec<u8>,
    pub media_type: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Submission {
    pub student_id: String,
    pub pages: Vec<PageImage>,
    pub ground_truth: Option<BTreeMap<String, Points>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptSource {
    pub backend: String,
    pub temperature: f64,
    pub variant_index: usize,
    pub with_question_context: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub student_id: String,
    pub problem_id: String,
    pub text: String,
    pub source: TranscriptSource,
    pub empty: bool,
}

impl Transcript {
    pub fn new(
        student_id: impl Into<String>,
        problem_id: impl Into<String>,
        text: impl Into<String>,
        source: TranscriptSource,
    ) -> Self {
        let text = text.into();
        Transcript {
            empty: crate::extract::detect_empty(&text),
            student_id: student_id.into(),
            problem_id: problem_id.into(),
            text,
            source,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE_PROBLEM: &str = r#"{
        "exam_id": "mock",
        "problems": [
            {"id": "1", "question": "q", "max_points": 2, "assignable": [0, 0.5, 1, 1.5, 2]}
        ],
        "rubrics": [
            {"problem_id": "1", "variant": "itemized", "combinator": "max_of_groups",
             "rules": [{"id": "r1", "text": "answer is pi", "points": 2, "group": "final"}]}
        ]
    }"#;

    #[test]
    fn loads_single_problem() {
        let cfg = ExamConfig::from_json(ONE_PROBLEM).unwrap();
        assert_eq!(cfg.exam.problems.len(), 1);
        let grid = &cfg.exam.problems[0].assignable_points;
        assert_eq!(grid.values().len(), 5);
        assert!(grid.contains("1.5".parse().unwrap()));
        let rubric = cfg.rubric("1", RubricVariant::Itemized).unwrap();
        assert_eq!(rubric.combinator.cap, Points::from_integer(2));
        assert_eq!(rubric.combinator.mode, CombineMode::MaxOfGroups);
    }

    #[test]
    fn rejects_empty_problem_list() {
        let err = ExamConfig::from_json(r#"{"exam_id": "x", "problems": []}"#).unwrap_err();
        assert!(matches!(err, ConfigError::Validation { ref field, .. } if field == "problems"));
    }

    #[test]
    fn rejects_unsorted_grid() {
        let text = r#"{"exam_id": "x", "problems": [
            {"id": "1", "question": "q", "max_points": 2, "assignable": [0, 2, 1]}]}"#;
        let err = ExamConfig::from_json(text).unwrap_err();
        assert!(err.to_string().contains("ascending"), "{err}");
    }

    #[test]
    fn rejects_grid_not_reaching_max() {
        let text = r#"{"exam_id": "x", "problems": [
            {"id": "1", "question": "q", "max_points": 2, "assignable": [0, 1]}]}"#;
        let err = ExamConfig::from_json(text).unwrap_err();
        assert!(matches!(err, ConfigError::Validation { ref field, .. } if field == "problems[0].assignable"));
    }

    #[test]
    fn rejects_dangling_rubric() {
        let text = r#"{"exam_id": "x", "problems": [
            {"id": "1", "question": "q", "max_points": 1, "assignable": [0, 1]}],
            "rubrics": [{"problem_id": "9", "rules": [{"id": "a", "text": "t", "points": 1}]}]}"#;
        let err = ExamConfig::from_json(text).unwrap_err();
        assert!(err.to_string().contains("unknown problem"));
    }

    #[test]
    fn rejects_malformed_file() {
        assert!(matches!(
            ExamConfig::from_json("{not json"),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = ExamConfig::from_json(ONE_PROBLEM).unwrap();
        let again = ExamConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(cfg, again);
    }
}
