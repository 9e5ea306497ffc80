//! Turning scanned pages into per-problem answer text.
//!
//! Two workflows are supported: cropping configured answer boxes out of the
//! page image before transcription, and transcribing whole pages and then
//! splitting the text at line-anchored problem/solution markers.

mod crop;
mod dissect;

pub use crop::{crop_regions, BoxLayout, BoxRegion, LayoutError, Region};
pub use dissect::{
    dissect_transcript, DissectError, Dissection, GrammarError, MarkerGrammar, MarkerPatterns,
    Segment, SegmentKind,
};

/// Sentinel a transcription backend returns for a blank answer.
pub const EMPTY_SENTINEL: &str = "Empty";

/// True when a transcription carries no answer: blank, or exactly the
/// `Empty` sentinel (ignoring case and surrounding whitespace).
pub fn detect_empty(transcript_text: &str) -> bool {
    let t = transcript_text.trim();
    t.is_empty() || t.eq_ignore_ascii_case(EMPTY_SENTINEL)
}
