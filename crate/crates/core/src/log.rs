//! TeX engine log parsing.
//!
//! Raw logs are first unwrapped (engines hard-wrap at `max_print_line`,
//! 79 by default), then scanned line by line. A parenthesis stack tracks the
//! currently open source file so each record can be attributed. Parsing is
//! total: unrecognized `! ...` errors become `Unclassified` records with the
//! raw excerpt retained.

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};

/// Default engine print-line width; overridable via [`LogParseConfig`].
pub const DEFAULT_MAX_PRINT_LINE: usize = 79;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Severity {
    Error,
    Warning,
    BadBox,
}

/// Canonical message family a record was matched against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LogPattern {
    UndefinedControlSequence,
    MissingDollar,
    EnvironmentUndefined,
    FileNotFound,
    PackageError,
    EnvironmentMismatch,
    ExtraAlignmentTab,
    NotInOuterParMode,
    IllegalArrayArg,
    UnicodeCharError,
    FontNotLoadable,
    CitationUndefined,
    ReferenceUndefined,
    OverfullBox,
    UnderfullBox,
    GenericWarning,
    Unclassified,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub severity: Severity,
    pub pattern: LogPattern,
    /// Canonical message text (continuation lines merged).
    pub message: String,
    /// Verbatim lines from the unwrapped log.
    pub raw_excerpt: String,
    /// File from the open-file stack, when one was open.
    #[serde(default)]
    pub file: Option<String>,
    /// 1-based line from `l.<n>` or `on input line <n>`.
    #[serde(default)]
    pub reported_line: Option<u32>,
    /// Offending token: control-sequence name, environment name, cite/ref
    /// key, or character, depending on the pattern.
    #[serde(default)]
    pub token: Option<String>,
    #[serde(default)]
    pub package: Option<String>,
    /// `\begin{env} on input line <n> ended by \end{other}` details.
    #[serde(default)]
    pub env_begin: Option<String>,
    #[serde(default)]
    pub env_begin_line: Option<u32>,
    #[serde(default)]
    pub env_end: Option<String>,
}

impl LogRecord {
    fn new(severity: Severity, pattern: LogPattern, message: impl Into<String>) -> Self {
        LogRecord {
            severity,
            pattern,
            message: message.into(),
            raw_excerpt: String::new(),
            file: None,
            reported_line: None,
            token: None,
            package: None,
            env_begin: None,
            env_begin_line: None,
            env_end: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogReport {
    pub records: Vec<LogRecord>,
    /// Engine name detected from the banner line, or "unknown".
    pub engine: String,
    /// True iff no record has Error severity.
    pub clean: bool,
}

impl LogReport {
    pub fn errors(&self) -> impl Iterator<Item = (usize, &LogRecord)> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.severity == Severity::Error)
    }
}

#[derive(Debug, Clone)]
pub struct LogParseConfig {
    pub max_print_line: usize,
}

impl Default for LogParseConfig {
    fn default() -> Self {
        LogParseConfig {
            max_print_line: DEFAULT_MAX_PRINT_LINE,
        }
    }
}

/// Rejoins lines hard-wrapped at the engine's print-line width. Lines shorter
/// than the width pass through unchanged.
pub fn unwrap_lines(raw: &str, max_print_line: usize) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut iter = raw.lines().map(|l| l.strip_suffix('\r').unwrap_or(l));
    while let Some(line) = iter.next() {
        let mut merged = line.to_string();
        while merged.chars().count() > 0
            && merged.chars().count() % max_print_line == 0
            && merged.chars().count() / max_print_line >= 1
        {
            match iter.next() {
                Some(next) => {
                    merged.push_str(next);
                    if next.is_empty() {
                        break;
                    }
                }
                None => break,
            }
        }
        out.push(merged);
    }
    out
}

static BANNER: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"^This is (pdfTeX|XeTeX|LuaTeX|LuaHBTeX|e?TeX|pdfeTeX)\b").unwrap());
static FILE_OPEN: Lazy<Regex> = Lazy::new(|| {
    Regex::new(r"^\(([^()\s]+\.(?:tex|sty|cls|clo|def|ldf|fd|bbx|cbx|lbx|cfg|aux|toc|lof|lot|out|bbl|bst|map))")
        .unwrap()
});
static LINE_CONTEXT: Lazy<Regex> = Lazy::new(|| Regex::new(r"^l\.(\d+)(.*)$").unwrap());
static CONTROL_SEQ: Lazy<Regex> = Lazy::new(|| Regex::new(r"\\([a-zA-Z@]+\*?)").unwrap());
static ENV_UNDEFINED: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"^! LaTeX Error: Environment (\S+) undefined\.").unwrap());
static FILE_NOT_FOUND: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"^! LaTeX Error: File `([^']+)' not found\.").unwrap());
static ENDED_BY: Lazy<Regex> = Lazy::new(|| {
    Regex::new(r"^! LaTeX Error: \\begin\{([^}]+)\} on input line (\d+) ended by \\end\{([^}]*)\}")
        .unwrap()
});
static PACKAGE_ERROR: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"^! Package ([\w\-]+) Error: (.*)$").unwrap());
static UNICODE_CHAR: Lazy<Regex> = Lazy::new(|| {
    Regex::new(r"^! Package inputenc Error: Unicode character (.+?) \(U\+([0-9A-Fa-f]+)\)").unwrap()
});
static FONT_NOT_LOADABLE: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"^! Font (\S+=[^\s]+)").unwrap());
static CITATION_WARN: Lazy<Regex> = Lazy::new(|| {
    Regex::new(r"^LaTeX Warning: Citation `([^']+)' (?:on page \S+ )?undefined(?: on input line (\d+))?")
        .unwrap()
});
static REFERENCE_WARN: Lazy<Regex> = Lazy::new(|| {
    Regex::new(r"^LaTeX Warning: Reference `([^']+)' (?:on page \S+ )?undefined(?: on input line (\d+))?")
        .unwrap()
});
static GENERIC_LATEX_WARN: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"^LaTeX Warning: (.*)$").unwrap());
static PACKAGE_WARN: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"^Package ([\w\-]+) Warning: (.*)$").unwrap());
static BAD_BOX: Lazy<Regex> = Lazy::new(|| {
    Regex::new(r"^((Ov|Und)erfull \\[hv]box .*?)(?: in paragraph)?(?: at lines? (\d+))").unwrap()
});
static CONTINUATION: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"^\(([\w\-]+)\)\s+(.*)$").unwrap());

/// Parses a raw engine log into structured records. Total: never fails on
/// arbitrary input.
pub fn parse_log(raw: &str) -> LogReport {
    parse_log_with(raw, &LogParseConfig::default())
}

pub fn parse_log_with(raw: &str, config: &LogParseConfig) -> LogReport {
    let lines = unwrap_lines(raw, config.max_print_line);
    let mut engine = String::from("unknown");
    if let Some(first) = lines.first() {
        if let Some(m) = BANNER.captures(first) {
            engine = m[1].to_string();
        }
    }

    let mut records = Vec::new();
    let mut stack: Vec<Option<String>> = Vec::new();

    for (i, line) in lines.iter().enumerate() {
        if let Some(mut record) = match_line(line, &lines, i) {
            record.file = stack.iter().rev().flatten().next().cloned();
            records.push(record);
        }
        update_file_stack(&mut stack, line);
    }

    let clean = !records.iter().any(|r| r.severity == Severity::Error);
    LogReport {
        records,
        engine,
        clean,
    }
}

/// Pushes path opens and pops on `)`. Non-path parens still participate in
/// balancing (as anonymous frames) so message text does not corrupt the
/// attribution; a surplus `)` is ignored rather than failing.
fn update_file_stack(stack: &mut Vec<Option<String>>, line: &str) {
    let bytes = line.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'(' => {
                if let Some(m) = FILE_OPEN.captures(&line[i..]) {
                    stack.push(Some(m[1].to_string()));
                    i += m.get(0).unwrap().end();
                } else {
                    stack.push(None);
                    i += 1;
                }
            }
            b')' => {
                stack.pop();
                i += 1;
            }
            _ => i += 1,
        }
    }
}

fn match_line(line: &str, lines: &[String], i: usize) -> Option<LogRecord> {
    if let Some(rec) = match_error_line(line, lines, i) {
        return Some(rec);
    }
    if let Some(c) = CITATION_WARN.captures(line) {
        let mut rec = LogRecord::new(
            Severity::Warning,
            LogPattern::CitationUndefined,
            line.trim_start_matches("LaTeX Warning: ").to_string(),
        );
        rec.token = Some(c[1].to_string());
        rec.reported_line = c.get(2).and_then(|m| m.as_str().parse().ok());
        rec.raw_excerpt = line.to_string();
        return Some(rec);
    }
    if let Some(c) = REFERENCE_WARN.captures(line) {
        let mut rec = LogRecord::new(
            Severity::Warning,
            LogPattern::ReferenceUndefined,
            line.trim_start_matches("LaTeX Warning: ").to_string(),
        );
        rec.token = Some(c[1].to_string());
        rec.reported_line = c.get(2).and_then(|m| m.as_str().parse().ok());
        rec.raw_excerpt = line.to_string();
        return Some(rec);
    }
    if let Some(c) = BAD_BOX.captures(line) {
        let over = &c[2] == "Ov";
        let mut rec = LogRecord::new(
            Severity::BadBox,
            if over {
                LogPattern::OverfullBox
            } else {
                LogPattern::UnderfullBox
            },
            c[1].to_string(),
        );
        rec.reported_line = c.get(3).and_then(|m| m.as_str().parse().ok());
        rec.raw_excerpt = line.to_string();
        return Some(rec);
    }
    if let Some(c) = PACKAGE_WARN.captures(line) {
        let (message, excerpt) = merge_continuations(&c[2], &c[1], lines, i);
        let mut rec = LogRecord::new(Severity::Warning, LogPattern::GenericWarning, message);
        rec.package = Some(c[1].to_string());
        rec.raw_excerpt = excerpt;
        return Some(rec);
    }
    if let Some(c) = GENERIC_LATEX_WARN.captures(line) {
        let mut rec = LogRecord::new(
            Severity::Warning,
            LogPattern::GenericWarning,
            c[1].to_string(),
        );
        rec.raw_excerpt = line.to_string();
        return Some(rec);
    }
    None
}

fn match_error_line(line: &str, lines: &[String], i: usize) -> Option<LogRecord> {
    if !line.starts_with("! ") {
        return None;
    }
    let (reported_line, context, excerpt_end) = find_line_context(lines, i);

    let mut rec = if line == "! Undefined control sequence." {
        let mut r = LogRecord::new(
            Severity::Error,
            LogPattern::UndefinedControlSequence,
            "Undefined control sequence.",
        );
        // The offending control sequence is printed last on the context line.
        if let Some(ctx) = &context {
            r.token = CONTROL_SEQ
                .captures_iter(ctx)
                .last()
                .map(|c| c[1].trim_end_matches('*').to_string());
        }
        r
    } else if line.starts_with("! Missing $ inserted") {
        LogRecord::new(
            Severity::Error,
            LogPattern::MissingDollar,
            "Missing $ inserted.",
        )
    } else if let Some(c) = ENV_UNDEFINED.captures(line) {
        let mut r = LogRecord::new(
            Severity::Error,
            LogPattern::EnvironmentUndefined,
            line.trim_start_matches("! ").to_string(),
        );
        r.token = Some(c[1].to_string());
        r
    } else if let Some(c) = FILE_NOT_FOUND.captures(line) {
        let mut r = LogRecord::new(
            Severity::Error,
            LogPattern::FileNotFound,
            line.trim_start_matches("! ").to_string(),
        );
        let file = c[1].to_string();
        r.package = file.strip_suffix(".sty").map(|s| s.to_string());
        r.token = Some(file);
        r
    } else if let Some(c) = ENDED_BY.captures(line) {
        let mut r = LogRecord::new(
            Severity::Error,
            LogPattern::EnvironmentMismatch,
            line.trim_start_matches("! ").to_string(),
        );
        r.env_begin = Some(c[1].to_string());
        r.env_begin_line = c[2].parse().ok();
        r.env_end = Some(c[3].to_string());
        r
    } else if line.starts_with("! Extra alignment tab has been changed") {
        LogRecord::new(
            Severity::Error,
            LogPattern::ExtraAlignmentTab,
            line.trim_start_matches("! ").to_string(),
        )
    } else if line.starts_with("! LaTeX Error: Not in outer par mode") {
        LogRecord::new(
            Severity::Error,
            LogPattern::NotInOuterParMode,
            line.trim_start_matches("! ").to_string(),
        )
    } else if line.starts_with("! Illegal character in array arg") {
        LogRecord::new(
            Severity::Error,
            LogPattern::IllegalArrayArg,
            line.trim_start_matches("! ").to_string(),
        )
    } else if let Some(c) = UNICODE_CHAR.captures(line) {
        let mut r = LogRecord::new(
            Severity::Error,
            LogPattern::UnicodeCharError,
            line.trim_start_matches("! ").to_string(),
        );
        r.package = Some("inputenc".to_string());
        r.token = Some(c[1].to_string());
        r
    } else if let Some(c) = PACKAGE_ERROR.captures(line) {
        let (message, _) = merge_continuations(line.trim_start_matches("! "), &c[1], lines, i);
        let mut r = LogRecord::new(Severity::Error, LogPattern::PackageError, message);
        r.package = Some(c[1].to_string());
        r
    } else if let Some(c) = FONT_NOT_LOADABLE.captures(line) {
        if line.contains("not loadable") {
            let mut r = LogRecord::new(
                Severity::Error,
                LogPattern::FontNotLoadable,
                line.trim_start_matches("! ").to_string(),
            );
            r.token = Some(c[1].to_string());
            r
        } else {
            LogRecord::new(Severity::Error, LogPattern::Unclassified, "unclassified")
        }
    } else {
        LogRecord::new(Severity::Error, LogPattern::Unclassified, "unclassified")
    };

    rec.reported_line = rec.reported_line.or(reported_line);
    rec.raw_excerpt = lines[i..excerpt_end.min(lines.len())].join("\n");
    Some(rec)
}

/// Scans forward from an error line for the `l.<n> ...` context, stopping at
/// the next error or after a bounded window.
fn find_line_context(lines: &[String], from: usize) -> (Option<u32>, Option<String>, usize) {
    let window_end = (from + 14).min(lines.len());
    for (j, line) in lines.iter().enumerate().take(window_end).skip(from + 1) {
        if line.starts_with("! ") {
            return (None, None, j);
        }
        if let Some(c) = LINE_CONTEXT.captures(line) {
            let n = c[1].parse().ok();
            let ctx = c[2].to_string();
            return (n, Some(ctx), j + 1);
        }
    }
    (None, None, from + 1)
}

/// Appends `(pkgname)   continuation` lines to a package message, returning
/// the merged message and the verbatim excerpt.
fn merge_continuations(
    first: &str,
    package: &str,
    lines: &[String],
    i: usize,
) -> (String, String) {
    let mut message = first.to_string();
    let mut end = i + 1;
    while end < lines.len() {
        match CONTINUATION.captures(&lines[end]) {
            Some(c) if &c[1] == package => {
                message.push(' ');
                message.push_str(c[2].trim());
                end += 1;
            }
            _ => break,
        }
    }
    (message, lines[i..end].join("\n"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unwrap_rejoins_exact_width_lines() {
        let long: String = "x".repeat(120);
        let wrapped = format!("{}\n{}", &long[..79], &long[79..]);
        let lines = unwrap_lines(&wrapped, 79);
        assert_eq!(lines, vec![long]);
    }

    #[test]
    fn unwrap_empty_log() {
        assert!(unwrap_lines("", 79).is_empty());
    }

    #[test]
    fn unwrap_passes_short_lines_through() {
        let raw = "line one\nline two\n";
        assert_eq!(unwrap_lines(raw, 79), vec!["line one", "line two"]);
    }

    #[test]
    fn undefined_control_sequence_with_token_and_line() {
        let raw = "This is pdfTeX, Version 3.141592653\n(./main.tex\n! Undefined control sequence.\nl.9 \\foo\n\nmore prose\n)";
        let report = parse_log(raw);
        assert_eq!(report.engine, "pdfTeX");
        assert!(!report.clean);
        let rec = &report.records[0];
        assert_eq!(rec.pattern, LogPattern::UndefinedControlSequence);
        assert_eq!(rec.token.as_deref(), Some("foo"));
        assert_eq!(rec.reported_line, Some(9));
        assert_eq!(rec.file.as_deref(), Some("./main.tex"));
    }

    #[test]
    fn clean_log_is_clean() {
        let raw = "This is pdfTeX, Version 3.14\n(./main.tex)\nOutput written on main.pdf (1 page).\n";
        let report = parse_log(raw);
        assert!(report.clean);
        assert!(report.records.is_empty());
    }

    #[test]
    fn environment_undefined() {
        let raw = "(./main.tex\n! LaTeX Error: Environment algorithm undefined.\n\nSee the LaTeX manual or LaTeX Companion for explanation.\nType  H <return>  for immediate help.\n ...\n\nl.9 \\begin{algorithm}\n)";
        let report = parse_log(raw);
        let rec = &report.records[0];
        assert_eq!(rec.pattern, LogPattern::EnvironmentUndefined);
        assert!(rec.message.contains("algorithm"));
        assert_eq!(rec.token.as_deref(), Some("algorithm"));
        assert_eq!(rec.reported_line, Some(9));
    }

    #[test]
    fn citation_warning() {
        let raw = "(./d.tex\nLaTeX Warning: Citation `smith99' on page 1 undefined on input line 12.\n)";
        let report = parse_log(raw);
        let rec = &report.records[0];
        assert_eq!(rec.severity, Severity::Warning);
        assert_eq!(rec.pattern, LogPattern::CitationUndefined);
        assert_eq!(rec.token.as_deref(), Some("smith99"));
        assert_eq!(rec.reported_line, Some(12));
        assert!(report.clean);
    }

    #[test]
    fn overfull_hbox_is_badbox_not_error() {
        let raw = "Overfull \\hbox (200.0pt too wide) in paragraph at lines 8--9\n";
        let report = parse_log(raw);
        assert_eq!(report.records[0].severity, Severity::BadBox);
        assert_eq!(report.records[0].reported_line, Some(8));
        assert!(report.clean);
    }

    #[test]
    fn unrecognized_error_is_unclassified() {
        let raw = "! Emergency stop.\n<*> main.tex\n";
        let report = parse_log(raw);
        assert_eq!(report.records[0].pattern, LogPattern::Unclassified);
        assert_eq!(report.records[0].message, "unclassified");
        assert!(report.records[0].raw_excerpt.contains("Emergency stop"));
        assert!(!report.clean);
    }

    #[test]
    fn ended_by_mismatch_carries_both_envs() {
        let raw = "! LaTeX Error: \\begin{itemize} on input line 4 ended by \\end{document}.\n\nl.40 \\end{document}\n";
        let report = parse_log(raw);
        let rec = &report.records[0];
        assert_eq!(rec.pattern, LogPattern::EnvironmentMismatch);
        assert_eq!(rec.env_begin.as_deref(), Some("itemize"));
        assert_eq!(rec.env_begin_line, Some(4));
        assert_eq!(rec.env_end.as_deref(), Some("document"));
        assert_eq!(rec.reported_line, Some(40));
    }

    #[test]
    fn file_stack_degrades_on_surplus_parens() {
        let raw = ")))\n! Undefined control sequence.\nl.1 \\x\n";
        let report = parse_log(raw);
        assert_eq!(report.records[0].file, None);
    }

    #[test]
    fn raw_excerpt_is_verbatim_substring() {
        let raw = "(./main.tex\n! Undefined control sequence.\nl.9 \\foo\n)";
        let lines = unwrap_lines(raw, 79);
        let joined = lines.join("\n");
        let report = parse_log(raw);
        assert!(joined.contains(&report.records[0].raw_excerpt));
    }
}
