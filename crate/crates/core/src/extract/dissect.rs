use std::collections::BTreeMap;
use std::ops::Range;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::model::ExamSpec;

/// Line-anchored patterns that locate problem and solution markers.
///
/// Both patterns must expose a named capture `id`; the problem pattern may
/// also expose `points`.
#[derive(Debug, Clone)]
pub struct MarkerGrammar {
    problem: Regex,
    solution: Regex,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerPatterns {
    pub problem_marker_pattern: String,
    pub solution_marker_pattern: String,
}

#[derive(Debug, thiserror::Error)]
pub enum GrammarError {
    #[error("invalid marker pattern: {0}")]
    Regex(#[from] regex::Error),
    #[error("marker pattern `{0}` must define a named `id` capture")]
    MissingIdCapture(String),
    #[error("marker pattern `{0}` must anchor at line start (begin with `^`)")]
    NotAnchored(String),
}

// Leading decoration a transcription may wrap a marker in: spaces,
// markdown emphasis/headers, or a LaTeX bold/section command.
const LEAD: &str = r"^[ \t]*(?:(?:\*\*|__|#+[ \t]*|\\textbf\{|\\section\*?\{|\\subsection\*?\{)[ \t]*)*";
const ID: &str = r"(?P<id>\d+(?:[ \t]*\.[ \t]*[a-z0-9]+|[a-z])?)";

impl Default for MarkerPatterns {
    fn default() -> Self {
        MarkerPatterns {
            problem_marker_pattern: format!(
                r"(?im){LEAD}problem[ \t]*{ID}[ \t]*(?:\([ \t]*(?P<points>\d+(?:[.,]\d+)?)[ \t]*points?[ \t]*\))?[ \t]*[:.]?[*_}}]*[ \t]*[:.]?"
            ),
            solution_marker_pattern: format!(
                r"(?im){LEAD}solution[ \t]+(?:of[ \t]+)?problem[ \t]*{ID}[ \t]*[*_}}]*[ \t]*[:.;]?[*_}}]*"
            ),
        }
    }
}

impl MarkerGrammar {
    pub fn new(patterns: &MarkerPatterns) -> Result<Self, GrammarError> {
        let compile = |src: &str| -> Result<Regex, GrammarError> {
            let body = match src.strip_prefix("(?") {
                Some(rest) => rest.split_once(')').map_or(src, |(_, b)| b),
                None => src,
            };
            if !body.starts_with('^') {
                return Err(GrammarError::NotAnchored(src.to_string()));
            }
            // Markers are matched per line and case-insensitively.
            let source = format!("(?im){body}");
            let re = Regex::new(&source)?;
            if !re.capture_names().any(|n| n == Some("id")) {
                return Err(GrammarError::MissingIdCapture(src.to_string()));
            }
            Ok(re)
        };
        Ok(MarkerGrammar {
            problem: compile(&patterns.problem_marker_pattern)?,
            solution: compile(&patterns.solution_marker_pattern)?,
        })
    }
}

impl Default for MarkerGrammar {
    fn default() -> Self {
        MarkerGrammar::new(&MarkerPatterns::default()).expect("default marker patterns compile")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
pub enum DissectError {
    #[error("no solution marker for problem `{0}`")]
    MissingMarker(String),
    #[error("solution marker for problem `{0}` appears more than once")]
    DuplicateMarker(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentKind {
    Preamble,
    ProblemMarker,
    Question,
    SolutionMarker,
    Answer,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub kind: SegmentKind,
    pub problem_id: Option<String>,
    pub range: Range<usize>,
}

/// Result of splitting one whole-page transcription.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dissection {
    pub answers: BTreeMap<String, String>,
    pub issues: Vec<DissectError>,
    /// Byte ranges tiling the input, in order.
    pub segments: Vec<Segment>,
}

fn normalize_id(raw: &str) -> String {
    raw.chars()
        .filter(|c| !c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect()
}

struct Marker {
    kind: SegmentKind,
    id: String,
    range: Range<usize>,
}

/// Split a whole-page transcription into per-problem answers.
///
/// Text after a solution marker up to the next marker of either kind (or the
/// end of the document) becomes that problem's answer, trimmed. Question
/// text between a problem marker and its solution marker is dropped.
pub fn dissect_transcript(page_text: &str, grammar: &MarkerGrammar, exam: &ExamSpec) -> Dissection {
    let mut markers: Vec<Marker> = grammar
        .problem
        .captures_iter(page_text)
        .map(|c| (SegmentKind::ProblemMarker, c))
        .chain(
            grammar
                .solution
                .captures_iter(page_text)
                .map(|c| (SegmentKind::SolutionMarker, c)),
        )
        .filter_map(|(kind, caps)| {
            let whole = caps.get(0)?;
            Some(Marker {
                kind,
                id: normalize_id(caps.name("id")?.as_str()),
                range: whole.range(),
            })
        })
        .collect();
    markers.sort_by_key(|m| (m.range.start, m.kind == SegmentKind::ProblemMarker));
    // A line can only hold one marker; keep the first by position.
    let mut kept: Vec<Marker> = Vec::with_capacity(markers.len());
    for m in markers {
        if kept.last().is_some_and(|prev| m.range.start < prev.range.end) {
            continue;
        }
        kept.push(m);
    }

    let known: BTreeMap<String, &str> = exam
        .problems
        .iter()
        .map(|p| (normalize_id(&p.problem_id), p.problem_id.as_str()))
        .collect();

    let mut out = Dissection::default();
    let first = kept.first().map_or(page_text.len(), |m| m.range.start);
    if first > 0 {
        out.segments.push(Segment {
            kind: SegmentKind::Preamble,
            problem_id: None,
            range: 0..first,
        });
    }

    let mut found: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for (i, m) in kept.iter().enumerate() {
        let body_end = kept.get(i + 1).map_or(page_text.len(), |n| n.range.start);
        let exam_id = known.get(&m.id).copied();
        out.segments.push(Segment {
            kind: m.kind,
            problem_id: Some(exam_id.unwrap_or(&m.id).to_string()),
            range: m.range.clone(),
        });
        let body_kind = match m.kind {
            SegmentKind::ProblemMarker => SegmentKind::Question,
            _ => SegmentKind::Answer,
        };
        if m.range.end < body_end {
            out.segments.push(Segment {
                kind: body_kind,
                problem_id: Some(exam_id.unwrap_or(&m.id).to_string()),
                range: m.range.end..body_end,
            });
        }
        if m.kind == SegmentKind::SolutionMarker {
            if let Some(id) = exam_id {
                found
                    .entry(id)
                    .or_default()
                    .push(page_text[m.range.end..body_end].trim().to_string());
            } else {
                tracing::debug!(marker = %m.id, "solution marker for a problem not in the exam");
            }
        }
    }

    for p in &exam.problems {
        match found.remove(p.problem_id.as_str()) {
            None => out.issues.push(DissectError::MissingMarker(p.problem_id.clone())),
            Some(bodies) if bodies.len() > 1 => {
                out.issues.push(DissectError::DuplicateMarker(p.problem_id.clone()))
            }
            Some(mut bodies) => {
                out.answers.insert(p.problem_id.clone(), bodies.remove(0));
            }
        }
    }
    out
}
