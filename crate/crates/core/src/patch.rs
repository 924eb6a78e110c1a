//! Minimal edit sets and patch application.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::source::{SourceDocument, Span};

/// One replacement: the bytes at `span` are replaced by `replacement`.
/// An empty span is a pure insertion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edit {
    pub span: Span,
    pub replacement: String,
}

/// An ordered set of pairwise-disjoint edits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patch {
    pub edits: Vec<Edit>,
    pub description: String,
}

impl Patch {
    pub fn new(description: impl Into<String>) -> Self {
        Patch {
            edits: Vec::new(),
            description: description.into(),
        }
    }

    pub fn single(description: impl Into<String>, span: Span, replacement: impl Into<String>) -> Self {
        Patch {
            edits: vec![Edit {
                span,
                replacement: replacement.into(),
            }],
            description: description.into(),
        }
    }

    pub fn push(&mut self, span: Span, replacement: impl Into<String>) {
        self.edits.push(Edit {
            span,
            replacement: replacement.into(),
        });
    }

    pub fn is_empty(&self) -> bool {
        self.edits.is_empty()
    }

    /// Maps an original-document span to its position after this patch is
    /// applied (shifting by edits that lie strictly before it).
    pub fn remap_span(&self, span: Span) -> Span {
        let mut delta: isize = 0;
        for edit in &self.edits {
            if edit.span.end <= span.start {
                delta += edit.replacement.len() as isize - edit.span.len() as isize;
            }
        }
        Span {
            start: (span.start as isize + delta).max(0) as usize,
            end: (span.end as isize + delta).max(0) as usize,
            line: span.line,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PatchError {
    #[error("edit spans overlap at byte {0}")]
    OverlappingEdits(usize),
    #[error("edit span {start}..{end} exceeds document length {len}")]
    SpanOutOfRange { start: usize, end: usize, len: usize },
}

/// Applies a patch, returning a new document. Edits are applied in descending
/// offset order so earlier spans stay valid; the input is untouched.
pub fn apply_patch(doc: &SourceDocument, patch: &Patch) -> Result<SourceDocument, PatchError> {
    let len = doc.len();
    let mut sorted: Vec<&Edit> = patch.edits.iter().collect();
    sorted.sort_by_key(|e| (e.span.start, e.span.end));
    for e in &sorted {
        if e.span.end > len || e.span.start > e.span.end {
            return Err(PatchError::SpanOutOfRange {
                start: e.span.start,
                end: e.span.end,
                len,
            });
        }
    }
    for pair in sorted.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b.span.start < a.span.end || (a.span.start == b.span.start) {
            return Err(PatchError::OverlappingEdits(b.span.start));
        }
    }
    let mut bytes = doc.bytes().to_vec();
    for e in sorted.iter().rev() {
        bytes.splice(e.span.start..e.span.end, e.replacement.bytes());
    }
    Ok(SourceDocument::new(doc.path().to_string(), bytes))
}

/// Renders a unified diff of a patch against its document, for display.
pub fn unified_diff(doc: &SourceDocument, patch: &Patch) -> String {
    let patched = match apply_patch(doc, patch) {
        Ok(p) => p,
        Err(e) => return format!("(patch not applicable: {e})"),
    };
    let old_lines: Vec<&str> = split_lines(&doc.text_lossy());
    let new_text = patched.text_lossy();
    let new_lines: Vec<&str> = split_lines(&new_text);

    // Touched 1-based line ranges in the original document.
    let mut touched: Vec<u32> = patch
        .edits
        .iter()
        .flat_map(|e| {
            let first = doc.line_of(e.span.start);
            let last = doc.line_of(e.span.end.max(e.span.start));
            first..=last
        })
        .collect();
    touched.sort_unstable();
    touched.dedup();
    if touched.is_empty() {
        return String::new();
    }

    let mut out = String::new();
    out.push_str(&format!("--- a/{}\n+++ b/{}\n", doc.path(), doc.path()));

    // One hunk per contiguous run of touched lines, with 2 lines of context.
    let mut runs: Vec<(u32, u32)> = Vec::new();
    for &line in &touched {
        match runs.last_mut() {
            Some((_, end)) if line <= *end + 3 => *end = line,
            _ => runs.push((line, line)),
        }
    }
    // Line shift accumulated from earlier hunks.
    let mut shift: i64 = 0;
    for (first, last) in runs {
        let ctx_start = first.saturating_sub(2).max(1);
        let ctx_end = (last + 2).min(old_lines.len().max(1) as u32);
        let old_count = ctx_end - ctx_start + 1;

        // Rebuild replacement lines for this range from the patched document.
        let new_start = (ctx_start as i64 + shift).max(1) as u32;
        let hunk_old: Vec<&str> = (ctx_start..=ctx_end)
            .filter_map(|l| old_lines.get((l - 1) as usize).copied())
            .collect();
        // Patched hunk: locate via byte offsets.
        let hunk_span_start = doc.line_start(ctx_start).unwrap_or(0);
        let hunk_span_end = doc
            .line_bounds(ctx_end)
            .map(|(_, e)| e)
            .unwrap_or(doc.len());
        let mapped = patch.remap_span(Span::new(hunk_span_start, hunk_span_end, ctx_start));
        let new_first = patched.line_of(mapped.start);
        let new_last = patched.line_of(mapped.end.saturating_sub(1).max(mapped.start));
        let hunk_new: Vec<&str> = (new_first..=new_last)
            .filter_map(|l| new_lines.get((l - 1) as usize).copied())
            .collect();

        out.push_str(&format!(
            "@@ -{},{} +{},{} @@\n",
            ctx_start,
            old_count,
            new_start,
            hunk_new.len()
        ));
        for l in &hunk_old {
            out.push_str(&format!("-{l}\n"));
        }
        for l in &hunk_new {
            out.push_str(&format!("+{l}\n"));
        }
        shift += hunk_new.len() as i64 - hunk_old.len() as i64;
    }
    out
}

fn split_lines(text: &str) -> Vec<&str> {
    let mut v: Vec<&str> = text.split('\n').collect();
    if v.last() == Some(&"") {
        v.pop();
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(s: &str) -> SourceDocument {
        SourceDocument::from_str("t.tex", s)
    }

    #[test]
    fn empty_patch_is_identity() {
        let d = doc("hello\nworld\n");
        let p = Patch::new("noop");
        let out = apply_patch(&d, &p).unwrap();
        assert_eq!(out.bytes(), d.bytes());
    }

    #[test]
    fn insertion_after_preamble_line() {
        let d = doc("\\documentclass{article}\n\\usepackage{graphicx}\nbody\n");
        let at = d.line_start(3).unwrap();
        let p = Patch::single(
            "add package",
            Span::point(at, 3),
            "\\usepackage[ruled,vlined]{algorithm2e}\n",
        );
        let out = apply_patch(&d, &p).unwrap();
        assert!(out
            .text_lossy()
            .contains("\\usepackage[ruled,vlined]{algorithm2e}\n"));
        // Original untouched.
        assert!(!d.text_lossy().contains("algorithm2e"));
    }

    #[test]
    fn overlapping_edits_rejected() {
        let d = doc("abcdef");
        let mut p = Patch::new("bad");
        p.push(Span::new(1, 4, 1), "X");
        p.push(Span::new(3, 5, 1), "Y");
        assert!(matches!(
            apply_patch(&d, &p),
            Err(PatchError::OverlappingEdits(_))
        ));
    }

    #[test]
    fn out_of_range_rejected() {
        let d = doc("abc");
        let p = Patch::single("bad", Span::new(2, 9, 1), "X");
        assert!(matches!(
            apply_patch(&d, &p),
            Err(PatchError::SpanOutOfRange { .. })
        ));
    }

    #[test]
    fn patch_locality_only_edited_bytes_change() {
        let d = doc("aaa bbb ccc ddd");
        let mut p = Patch::new("two edits");
        p.push(Span::new(4, 7, 1), "XY");
        p.push(Span::new(12, 15, 1), "Z");
        let out = apply_patch(&d, &p).unwrap();
        assert_eq!(out.bytes(), b"aaa XY ccc Z");
    }

    #[test]
    fn remap_span_shifts_past_edits() {
        let p = Patch::single("ins", Span::point(3, 1), "XXXX");
        let mapped = p.remap_span(Span::new(5, 8, 1));
        assert_eq!((mapped.start, mapped.end), (9, 12));
        let unmoved = p.remap_span(Span::new(0, 2, 1));
        assert_eq!((unmoved.start, unmoved.end), (0, 2));
    }

    #[test]
    fn same_start_insertions_rejected() {
        let d = doc("abc");
        let mut p = Patch::new("dup inserts");
        p.push(Span::point(1, 1), "X");
        p.push(Span::point(1, 1), "Y");
        assert!(apply_patch(&d, &p).is_err());
    }

    #[test]
    fn unified_diff_shows_insertion() {
        let d = doc("line1\nline2\nline3\n");
        let at = d.line_start(2).unwrap();
        let p = Patch::single("ins", Span::point(at, 2), "inserted\n");
        let diff = unified_diff(&d, &p);
        assert!(diff.contains("+inserted"));
        assert!(diff.starts_with("--- a/t.tex"));
    }
}
