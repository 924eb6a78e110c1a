//! Source documents and byte spans.
//!
//! A [`SourceDocument`] is an immutable byte buffer plus a line index. All
//! parsing and patching works on raw bytes so that arbitrary input (including
//! invalid UTF-8) round-trips byte-exactly. Lines are 1-based, matching the
//! `l.<n>` convention of TeX logs.

use serde::{Deserialize, Serialize};

/// Half-open byte range `[start, end)` with the 1-based line of `start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    /// 1-based line number of `start`.
    pub line: u32,
}

impl Span {
    pub fn new(start: usize, end: usize, line: u32) -> Self {
        debug_assert!(start <= end);
        Span { start, end, line }
    }

    /// Empty span (an insertion point).
    pub fn point(at: usize, line: u32) -> Self {
        Span::new(at, at, line)
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn contains(&self, offset: usize) -> bool {
        offset >= self.start && offset < self.end
    }

    /// Intersection test against a half-open byte range. Empty spans are
    /// treated as points: they intersect a range that contains the point.
    pub fn intersects_range(&self, start: usize, end: usize) -> bool {
        if self.is_empty() {
            if start == end {
                return self.start == start;
            }
            self.start >= start && self.start < end
        } else if start == end {
            self.contains(start)
        } else {
            self.start < end && start < self.end
        }
    }

    pub fn intersects(&self, other: &Span) -> bool {
        if other.is_empty() {
            return self.intersects_range(other.start, other.start.max(other.end));
        }
        self.intersects_range(other.start, other.end)
    }
}

/// An immutable source file: raw bytes plus a 1-based line index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceDocument {
    path: String,
    bytes: Vec<u8>,
    /// Byte offset at which each line starts; `line_starts[0] == 0`.
    line_starts: Vec<usize>,
}

impl SourceDocument {
    pub fn new(path: impl Into<String>, bytes: Vec<u8>) -> Self {
        let mut line_starts = vec![0];
        for (i, &b) in bytes.iter().enumerate() {
            if b == b'\n' {
                line_starts.push(i + 1);
            }
        }
        SourceDocument {
            path: path.into(),
            bytes,
            line_starts,
        }
    }

    pub fn from_str(path: impl Into<String>, text: &str) -> Self {
        SourceDocument::new(path, text.as_bytes().to_vec())
    }

    pub fn read(path: &std::path::Path) -> std::io::Result<Self> {
        let bytes = std::fs::read(path)?;
        Ok(SourceDocument::new(path.display().to_string(), bytes))
    }

    pub fn path(&self) -> &str {
        &self.path
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn slice(&self, span: Span) -> &[u8] {
        &self.bytes[span.start.min(self.len())..span.end.min(self.len())]
    }

    pub fn text_lossy(&self) -> String {
        String::from_utf8_lossy(&self.bytes).into_owned()
    }

    /// Number of lines; the empty document has one (empty) line.
    pub fn line_count(&self) -> u32 {
        self.line_starts.len() as u32
    }

    /// 1-based line containing `offset`. Offsets at or past the end map to the
    /// last line.
    pub fn line_of(&self, offset: usize) -> u32 {
        match self.line_starts.binary_search(&offset) {
            Ok(i) => (i + 1) as u32,
            Err(i) => i as u32,
        }
    }

    /// Full byte range of a 1-based line, including its trailing newline.
    /// Returns `None` when the line is beyond the document.
    pub fn line_bounds(&self, line: u32) -> Option<(usize, usize)> {
        if line == 0 {
            return None;
        }
        let idx = (line - 1) as usize;
        let start = *self.line_starts.get(idx)?;
        let end = self
            .line_starts
            .get(idx + 1)
            .copied()
            .unwrap_or(self.bytes.len());
        Some((start, end))
    }

    /// Span of a line's content, excluding the trailing `\r\n` / `\n`.
    pub fn line_span(&self, line: u32) -> Option<Span> {
        let (start, mut end) = self.line_bounds(line)?;
        if end > start && self.bytes[end - 1] == b'\n' {
            end -= 1;
        }
        if end > start && self.bytes[end - 1] == b'\r' {
            end -= 1;
        }
        Some(Span::new(start, end, line))
    }

    /// Byte offset where `line` starts, if it exists.
    pub fn line_start(&self, line: u32) -> Option<usize> {
        self.line_bounds(line).map(|(s, _)| s)
    }

    pub fn span_of(&self, start: usize, end: usize) -> Span {
        Span::new(start, end, self.line_of(start))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_index_covers_every_byte_once() {
        let doc = SourceDocument::from_str("t", "ab\ncd\n\nxyz");
        let mut covered = vec![0u8; doc.len()];
        for line in 1..=doc.line_count() {
            let (s, e) = doc.line_bounds(line).unwrap();
            for c in covered.iter_mut().take(e).skip(s) {
                *c += 1;
            }
        }
        assert!(covered.iter().all(|&c| c == 1));
    }

    #[test]
    fn line_of_matches_bounds() {
        let doc = SourceDocument::from_str("t", "one\ntwo\nthree");
        assert_eq!(doc.line_of(0), 1);
        assert_eq!(doc.line_of(3), 1); // the newline belongs to line 1
        assert_eq!(doc.line_of(4), 2);
        assert_eq!(doc.line_of(8), 3);
        assert_eq!(doc.line_of(doc.len()), 3);
    }

    #[test]
    fn empty_document_has_one_line() {
        let doc = SourceDocument::from_str("t", "");
        assert_eq!(doc.line_count(), 1);
        assert_eq!(doc.line_bounds(1), Some((0, 0)));
        assert_eq!(doc.line_bounds(2), None);
    }

    #[test]
    fn trailing_newline_yields_final_empty_line() {
        let doc = SourceDocument::from_str("t", "a\n");
        assert_eq!(doc.line_count(), 2);
        assert_eq!(doc.line_bounds(2), Some((2, 2)));
    }

    #[test]
    fn span_intersection() {
        let a = Span::new(2, 6, 1);
        assert!(a.intersects_range(0, 3));
        assert!(a.intersects_range(5, 9));
        assert!(!a.intersects_range(6, 9));
        assert!(!a.intersects_range(0, 2));
        let p = Span::point(4, 1);
        assert!(p.intersects(&a));
        assert!(a.intersects(&p));
        let q = Span::point(6, 1);
        assert!(!q.intersects(&a));
    }

    #[test]
    fn crlf_line_span_trims_both() {
        let doc = SourceDocument::from_str("t", "ab\r\ncd");
        let s = doc.line_span(1).unwrap();
        assert_eq!(doc.slice(s), b"ab");
    }
}
