//! Error-recovering LaTeX parser.
//!
//! The parser is total: any byte sequence yields an [`Ast`], with malformed
//! regions turned into `Error` nodes carrying best-effort spans. It works on
//! raw bytes so invalid UTF-8 flows through untouched.
//!
//! Grammar scope: commands, environments, groups, `$...$`, `\(...\)`,
//! `\[...\]`, `$$...$$`, comments, `\usepackage`/`\documentclass`,
//! cite/ref/label families, verbatim environments (opaque contents), and
//! `\newcommand` recording. Everything else is text.

use crate::ast::{ArgGroup, Ast, AstNode, KeyUse, MacroDef, NodeKind, PackageUse, RecoveryKind};
use crate::source::{SourceDocument, Span};

/// Environments whose body is taken verbatim (no parsing inside).
const VERBATIM_ENVS: &[&str] = &[
    "verbatim",
    "verbatim*",
    "Verbatim",
    "lstlisting",
    "minted",
    "alltt",
    "comment",
    "filecontents",
    "filecontents*",
];

const CITE_COMMANDS: &[&str] = &[
    "cite", "citep", "citet", "citealp", "citealt", "citeauthor", "citeyear", "citeyearpar",
    "parencite", "textcite", "autocite", "footcite", "footcitetext", "smartcite", "supercite",
    "Cite", "Parencite", "Textcite", "Autocite", "nocite",
];

const REF_COMMANDS: &[&str] = &[
    "ref", "eqref", "pageref", "autoref", "nameref", "vref", "Vref", "cref", "Cref", "crefrange",
    "Crefrange", "cpageref", "Cpageref",
];

const MACRO_DEF_COMMANDS: &[&str] = &[
    "newcommand",
    "renewcommand",
    "providecommand",
    "DeclareRobustCommand",
    "DeclareMathOperator",
];

/// Parses a document into a lossless, error-recovering tree.
pub fn parse(doc: &SourceDocument) -> Ast {
    let mut parser = Parser {
        doc,
        bytes: doc.bytes(),
        pos: 0,
        env_stack: Vec::new(),
        packages: Vec::new(),
        documentclass: None,
        macros: Vec::new(),
        environment_defs: Vec::new(),
        labels: Vec::new(),
        refs: Vec::new(),
        cites: Vec::new(),
        bibitems: Vec::new(),
        begin_document: None,
    };
    let len = parser.bytes.len();
    let seq = parser.parse_seq(Scope::Top, MathCtx::None, len);
    let mut root = AstNode::new(NodeKind::Group, doc.span_of(0, len));
    root.children = seq.nodes;
    Ast::assemble(
        doc.clone(),
        root,
        parser.packages,
        parser.documentclass,
        parser.macros,
        parser.environment_defs,
        parser.labels,
        parser.refs,
        parser.cites,
        parser.bibitems,
        parser.begin_document,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scope {
    /// Whole document; terminates at EOF.
    Top,
    /// Inside `{...}`; terminates at `}`.
    Group,
    /// Pre-scanned region (math body or optional argument); terminates at the
    /// byte limit.
    Region,
    /// Environment body; terminates at a matching `\end`.
    Env,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MathCtx {
    None,
    Inline,
    Display,
}

#[derive(Debug)]
enum Close {
    /// Hit EOF or the region limit.
    Limit,
    /// Consumed `}`; holds the offset just past it.
    Brace(usize),
    /// Consumed a matching `\end{name}`; holds the offset just past it.
    End(usize),
    /// Saw `\end{outer}` for an enclosing scope; position is reset to its
    /// backslash and the tag is left for an outer frame to consume.
    DeferredEnd,
}

struct Seq {
    nodes: Vec<AstNode>,
    close: Close,
}

struct Parser<'a> {
    doc: &'a SourceDocument,
    bytes: &'a [u8],
    pos: usize,
    env_stack: Vec<String>,
    packages: Vec<PackageUse>,
    documentclass: Option<(String, Span)>,
    macros: Vec<MacroDef>,
    environment_defs: Vec<MacroDef>,
    labels: Vec<KeyUse>,
    refs: Vec<KeyUse>,
    cites: Vec<KeyUse>,
    bibitems: Vec<KeyUse>,
    begin_document: Option<usize>,
}

impl<'a> Parser<'a> {
    fn span(&self, start: usize, end: usize) -> Span {
        self.doc.span_of(start, end)
    }

    fn peek(&self, at: usize) -> Option<u8> {
        self.bytes.get(at).copied()
    }

    /// End of the line containing `at`, excluding the newline.
    fn line_content_end(&self, at: usize) -> usize {
        let mut p = at;
        while p < self.bytes.len() && self.bytes[p] != b'\n' {
            p += 1;
        }
        if p > at && self.bytes[p - 1] == b'\r' {
            p - 1
        } else {
            p
        }
    }

    fn push_node(nodes: &mut Vec<AstNode>, node: AstNode) {
        // Merge contiguous text runs so degenerate inputs don't produce chains
        // of one-byte nodes.
        if node.kind == NodeKind::Text {
            if let Some(last) = nodes.last_mut() {
                if last.kind == NodeKind::Text && last.span.end == node.span.start {
                    last.span.end = node.span.end;
                    return;
                }
            }
        }
        nodes.push(node);
    }

    fn parse_seq(&mut self, scope: Scope, math: MathCtx, limit: usize) -> Seq {
        let mut nodes = Vec::new();
        while self.pos < limit {
            let b = self.bytes[self.pos];
            match b {
                b'%' => {
                    let start = self.pos;
                    let end = self.line_content_end(start).min(limit);
                    self.pos = end;
                    Self::push_node(
                        &mut nodes,
                        AstNode::new(NodeKind::Comment, self.span(start, end)),
                    );
                }
                b'{' => {
                    let node = self.parse_group(math, limit);
                    let deferred = node.kind == NodeKind::Error(RecoveryKind::UnbalancedGroup)
                        && self.peek(self.pos) == Some(b'\\');
                    Self::push_node(&mut nodes, node);
                    if deferred && scope != Scope::Top {
                        // Let the enclosing environment frame re-read the \end.
                        if let Some((name, _, _)) = self.peek_end_tag(self.pos, limit) {
                            if self.should_defer(scope, &name) {
                                return Seq {
                                    nodes,
                                    close: Close::DeferredEnd,
                                };
                            }
                        }
                    }
                }
                b'}' => {
                    if scope == Scope::Group {
                        self.pos += 1;
                        return Seq {
                            nodes,
                            close: Close::Brace(self.pos),
                        };
                    }
                    let start = self.pos;
                    self.pos += 1;
                    Self::push_node(
                        &mut nodes,
                        AstNode::new(
                            NodeKind::Error(RecoveryKind::UnbalancedGroup),
                            self.span(start, self.pos),
                        ),
                    );
                }
                b'$' => {
                    if math == MathCtx::None {
                        let node = self.parse_dollar_math(limit);
                        Self::push_node(&mut nodes, node);
                    } else {
                        // A math shift inside an existing math context stays
                        // literal; same-kind math never nests.
                        let start = self.pos;
                        self.pos += 1;
                        self.extend_text(limit);
                        Self::push_node(
                            &mut nodes,
                            AstNode::new(NodeKind::Text, self.span(start, self.pos)),
                        );
                    }
                }
                b'\\' => match self.dispatch_backslash(scope, math, limit) {
                    BackslashOutcome::Node(node) => Self::push_node(&mut nodes, node),
                    BackslashOutcome::CloseEnd(end) => {
                        return Seq {
                            nodes,
                            close: Close::End(end),
                        }
                    }
                    BackslashOutcome::Defer => {
                        return Seq {
                            nodes,
                            close: Close::DeferredEnd,
                        }
                    }
                },
                _ => {
                    let start = self.pos;
                    self.pos += 1;
                    self.extend_text(limit);
                    Self::push_node(
                        &mut nodes,
                        AstNode::new(NodeKind::Text, self.span(start, self.pos)),
                    );
                }
            }
        }
        Seq {
            nodes,
            close: Close::Limit,
        }
    }

    /// Extends a text run up to the next structurally significant byte.
    fn extend_text(&mut self, limit: usize) {
        while self.pos < limit {
            match self.bytes[self.pos] {
                b'\\' | b'{' | b'}' | b'$' | b'%' => break,
                _ => self.pos += 1,
            }
        }
    }

    fn parse_group(&mut self, math: MathCtx, limit: usize) -> AstNode {
        let start = self.pos;
        self.pos += 1;
        let seq = self.parse_seq(Scope::Group, math, limit);
        let (kind, end) = match seq.close {
            Close::Brace(end) => (NodeKind::Group, end),
            Close::Limit | Close::DeferredEnd | Close::End(_) => (
                NodeKind::Error(RecoveryKind::UnbalancedGroup),
                self.pos.min(limit),
            ),
        };
        let mut node = AstNode::new(kind, self.span(start, end));
        node.children = seq.nodes;
        node
    }

    /// `$...$` or `$$...$$`. Unterminated math becomes an error leaf whose
    /// span runs to the end of the opening line.
    fn parse_dollar_math(&mut self, limit: usize) -> AstNode {
        let start = self.pos;
        let display = self.peek(start + 1) == Some(b'$');
        let open_len = if display { 2 } else { 1 };
        let closer: &[u8] = if display { b"$$" } else { b"$" };
        let body_start = start + open_len;
        match self.scan_math_close(body_start, closer, limit) {
            Some(close_at) => {
                self.pos = body_start;
                let ctx = if display {
                    MathCtx::Display
                } else {
                    MathCtx::Inline
                };
                let seq = self.parse_seq(Scope::Region, ctx, close_at);
                let end = close_at + closer.len();
                self.pos = end;
                let kind = if display {
                    NodeKind::MathDisplay
                } else {
                    NodeKind::MathInline
                };
                let mut node = AstNode::new(kind, self.span(start, end));
                node.children = seq.nodes;
                node
            }
            None => {
                let end = self.line_content_end(start).min(limit).max(start + open_len).min(limit.max(start + open_len));
                let end = end.min(self.bytes.len());
                self.pos = end;
                AstNode::new(
                    NodeKind::Error(RecoveryKind::UnterminatedMath),
                    self.span(start, end),
                )
            }
        }
    }

    /// `\(...\)` / `\[...\]` handled by the backslash dispatcher.
    fn parse_delim_math(&mut self, limit: usize, display: bool) -> AstNode {
        let start = self.pos;
        let closer: &[u8] = if display { b"\\]" } else { b"\\)" };
        let body_start = start + 2;
        match self.scan_math_close(body_start, closer, limit) {
            Some(close_at) => {
                self.pos = body_start;
                let ctx = if display {
                    MathCtx::Display
                } else {
                    MathCtx::Inline
                };
                let seq = self.parse_seq(Scope::Region, ctx, close_at);
                let end = close_at + 2;
                self.pos = end;
                let kind = if display {
                    NodeKind::MathDisplay
                } else {
                    NodeKind::MathInline
                };
                let mut node = AstNode::new(kind, self.span(start, end));
                node.children = seq.nodes;
                node
            }
            None => {
                let end = self.line_content_end(start).min(limit).max(body_start.min(limit));
                let end = end.min(self.bytes.len());
                self.pos = end;
                AstNode::new(
                    NodeKind::Error(RecoveryKind::UnterminatedMath),
                    self.span(start, end),
                )
            }
        }
    }

    /// Finds the closing delimiter of a math region: brace-aware, skips
    /// escapes and comments, and gives up at a paragraph break, an `\end`
    /// control word at depth zero, an unbalanced `}`, or the limit.
    fn scan_math_close(&self, from: usize, closer: &[u8], limit: usize) -> Option<usize> {
        let mut depth: i32 = 0;
        let mut i = from;
        while i < limit {
            if depth == 0 && self.bytes[i..limit.min(self.bytes.len())].starts_with(closer) {
                return Some(i);
            }
            match self.bytes[i] {
                b'\\' => {
                    if depth == 0 && self.is_word_at(i + 1, b"end") {
                        return None;
                    }
                    i += 2; // skip the escaped character
                }
                b'%' => {
                    i = self.line_content_end(i);
                    i += 1;
                }
                b'{' => {
                    depth += 1;
                    i += 1;
                }
                b'}' => {
                    depth -= 1;
                    if depth < 0 {
                        return None;
                    }
                    i += 1;
                }
                b'\n' => {
                    // Paragraph break: blank line terminates math.
                    let mut j = i + 1;
                    while j < limit && (self.bytes[j] == b' ' || self.bytes[j] == b'\t' || self.bytes[j] == b'\r') {
                        j += 1;
                    }
                    if j < limit && self.bytes[j] == b'\n' {
                        return None;
                    }
                    i += 1;
                }
                _ => i += 1,
            }
        }
        None
    }

    /// True if a full control word `word` starts at `at` (not a prefix of a
    /// longer word).
    fn is_word_at(&self, at: usize, word: &[u8]) -> bool {
        if !self.bytes[at.min(self.bytes.len())..].starts_with(word) {
            return false;
        }
        match self.peek(at + word.len()) {
            Some(c) => !c.is_ascii_alphabetic(),
            None => true,
        }
    }

    fn should_defer(&self, scope: Scope, end_name: &str) -> bool {
        match scope {
            Scope::Env => {
                let top = self.env_stack.last().map(|s| s.as_str());
                if top == Some(end_name) {
                    false
                } else {
                    self.env_stack[..self.env_stack.len().saturating_sub(1)]
                        .iter()
                        .any(|n| n == end_name)
                }
            }
            Scope::Group => self.env_stack.iter().any(|n| n == end_name),
            _ => false,
        }
    }

    /// Reads `\end { name }` starting at the backslash, without consuming.
    /// Returns (name, end_offset_after_closing_brace, name_span).
    fn peek_end_tag(&self, at: usize, limit: usize) -> Option<(String, usize, Span)> {
        if self.peek(at) != Some(b'\\') || !self.is_word_at(at + 1, b"end") {
            return None;
        }
        let mut p = at + 4;
        while p < limit && matches!(self.bytes[p], b' ' | b'\t') {
            p += 1;
        }
        if self.peek(p) != Some(b'{') {
            return None;
        }
        let name_start = p + 1;
        let line_end = self.line_content_end(name_start);
        let mut q = name_start;
        while q < limit.min(line_end) && self.bytes[q] != b'}' {
            q += 1;
        }
        if self.peek(q) != Some(b'}') || q >= limit {
            return None;
        }
        let name = String::from_utf8_lossy(&self.bytes[name_start..q])
            .trim()
            .to_string();
        Some((name, q + 1, self.span(name_start, q)))
    }

    fn dispatch_backslash(&mut self, scope: Scope, math: MathCtx, limit: usize) -> BackslashOutcome {
        let start = self.pos;
        let next = match self.peek(start + 1) {
            Some(c) => c,
            None => {
                // Lone trailing backslash.
                self.pos = (start + 1).min(limit);
                return BackslashOutcome::Node(AstNode::new(
                    NodeKind::Text,
                    self.span(start, self.pos),
                ));
            }
        };

        if next.is_ascii_alphabetic() {
            let mut p = start + 1;
            while p < limit && self.bytes[p].is_ascii_alphabetic() {
                p += 1;
            }
            let mut name_end = p;
            let starred = self.peek(p) == Some(b'*');
            if starred {
                name_end = p + 1;
            }
            let word = String::from_utf8_lossy(&self.bytes[start + 1..p]).into_owned();
            match word.as_str() {
                "begin" => return self.parse_environment(start, name_end.min(limit), math, limit),
                "end" => return self.handle_end(scope, start, limit),
                _ => {
                    return BackslashOutcome::Node(self.parse_command(
                        start,
                        word,
                        name_end.min(limit),
                        math,
                        limit,
                    ))
                }
            }
        }

        // Control symbols and math delimiters.
        match next {
            b'(' if math == MathCtx::None => {
                return BackslashOutcome::Node(self.parse_delim_math(limit, false))
            }
            b'[' if math == MathCtx::None => {
                return BackslashOutcome::Node(self.parse_delim_math(limit, true))
            }
            _ => {}
        }
        let sym_len = utf8_len(next);
        let end = (start + 1 + sym_len).min(limit.max(start + 1)).min(self.bytes.len());
        self.pos = end;
        let name = String::from_utf8_lossy(&self.bytes[start + 1..end]).into_owned();
        BackslashOutcome::Node(AstNode::named(
            NodeKind::Command,
            name,
            self.span(start, end),
        ))
    }

    fn handle_end(&mut self, scope: Scope, start: usize, limit: usize) -> BackslashOutcome {
        match self.peek_end_tag(start, limit) {
            Some((name, after, _)) => {
                if scope == Scope::Env && self.env_stack.last().map(|s| s.as_str()) == Some(name.as_str()) {
                    self.pos = after;
                    return BackslashOutcome::CloseEnd(after);
                }
                if self.should_defer(scope, &name) {
                    // Leave the tag in place for the matching outer frame.
                    return BackslashOutcome::Defer;
                }
                self.pos = after;
                BackslashOutcome::Node(AstNode::named(
                    NodeKind::Error(RecoveryKind::OrphanEnd),
                    name,
                    self.span(start, after),
                ))
            }
            None => {
                // Malformed \end: treat as an ordinary command.
                let name_end = start + 4;
                BackslashOutcome::Node(self.parse_command(
                    start,
                    "end".to_string(),
                    name_end.min(limit),
                    MathCtx::None,
                    limit,
                ))
            }
        }
    }

    fn parse_environment(
        &mut self,
        start: usize,
        after_word: usize,
        math: MathCtx,
        limit: usize,
    ) -> BackslashOutcome {
        let mut p = after_word;
        while p < limit && matches!(self.bytes[p], b' ' | b'\t') {
            p += 1;
        }
        if self.peek(p) != Some(b'{') {
            // \begin without a name group.
            return BackslashOutcome::Node(self.parse_command(
                start,
                "begin".to_string(),
                after_word,
                math,
                limit,
            ));
        }
        let name_start = p + 1;
        let line_end = self.line_content_end(name_start);
        let mut q = name_start;
        while q < limit.min(line_end) && self.bytes[q] != b'}' {
            q += 1;
        }
        if self.peek(q) != Some(b'}') || q >= limit {
            return BackslashOutcome::Node(self.parse_command(
                start,
                "begin".to_string(),
                after_word,
                math,
                limit,
            ));
        }
        let name = String::from_utf8_lossy(&self.bytes[name_start..q])
            .trim()
            .to_string();
        let header_end = q + 1;
        self.pos = header_end;

        if name == "document" && self.begin_document.is_none() {
            self.begin_document = Some(start);
        }

        if VERBATIM_ENVS.contains(&name.as_str()) {
            return BackslashOutcome::Node(self.parse_verbatim_env(start, &name, header_end, limit));
        }

        let args = self.consume_args(math, limit);
        self.env_stack.push(name.clone());
        let seq = self.parse_seq(Scope::Env, math, limit);
        self.env_stack.pop();

        let (kind, end) = match seq.close {
            Close::End(end) => (NodeKind::Environment, end),
            Close::DeferredEnd | Close::Limit | Close::Brace(_) => (
                NodeKind::Error(RecoveryKind::UnclosedEnvironment),
                self.pos.min(limit),
            ),
        };
        let mut node = AstNode::named(kind, name, self.span(start, end));
        node.args = args;
        node.children = seq.nodes;
        BackslashOutcome::Node(node)
    }

    fn parse_verbatim_env(
        &mut self,
        start: usize,
        name: &str,
        header_end: usize,
        limit: usize,
    ) -> AstNode {
        let marker = format!("\\end{{{name}}}");
        let marker = marker.as_bytes();
        let hay = &self.bytes[header_end..limit];
        let found = hay
            .windows(marker.len().max(1))
            .position(|w| w == marker)
            .map(|off| header_end + off);
        match found {
            Some(end_start) => {
                let end = end_start + marker.len();
                self.pos = end;
                let mut node =
                    AstNode::named(NodeKind::Environment, name, self.span(start, end));
                if end_start > header_end {
                    node.children
                        .push(AstNode::new(NodeKind::Text, self.span(header_end, end_start)));
                }
                node
            }
            None => {
                self.pos = limit;
                let mut node = AstNode::named(
                    NodeKind::Error(RecoveryKind::UnclosedEnvironment),
                    name,
                    self.span(start, limit),
                );
                if limit > header_end {
                    node.children
                        .push(AstNode::new(NodeKind::Text, self.span(header_end, limit)));
                }
                node
            }
        }
    }

    fn parse_command(
        &mut self,
        start: usize,
        word: String,
        name_end: usize,
        math: MathCtx,
        limit: usize,
    ) -> AstNode {
        self.pos = name_end;

        if word == "verb" {
            return self.parse_verb(start, limit);
        }

        if MACRO_DEF_COMMANDS.contains(&word.as_str()) {
            return self.parse_macro_def(start, &word, math, limit);
        }

        let args = self.consume_args(math, limit);
        let end = args
            .last()
            .map(|a| a.node.span.end)
            .unwrap_or(self.pos)
            .max(name_end);
        self.pos = end;
        let span = self.span(start, end);

        let kind = match word.as_str() {
            "usepackage" | "RequirePackage" => NodeKind::PackageDecl,
            "documentclass" | "documentstyle" => NodeKind::DocumentClassDecl,
            w if CITE_COMMANDS.contains(&w) => NodeKind::CiteRef,
            w if REF_COMMANDS.contains(&w) => NodeKind::LabelRef,
            "label" => NodeKind::LabelRef,
            _ => NodeKind::Command,
        };

        let mut node = AstNode::named(kind, word.clone(), span);
        node.args = args;

        match kind {
            NodeKind::PackageDecl => {
                let options = node
                    .args
                    .iter()
                    .find(|a| a.optional)
                    .map(|a| self.group_text(&a.node));
                if let Some(names_arg) = node.args.iter().find(|a| !a.optional) {
                    for (pkg, _span) in self.split_keys(&names_arg.node) {
                        self.packages.push(PackageUse {
                            name: pkg,
                            options: options.clone(),
                            span,
                        });
                    }
                    node.name = Some(self.group_text(&names_arg.node));
                }
            }
            NodeKind::DocumentClassDecl => {
                if let Some(class_arg) = node.args.iter().find(|a| !a.optional) {
                    let class = self.group_text(&class_arg.node);
                    node.name = Some(class.clone());
                    if self.documentclass.is_none() {
                        self.documentclass = Some((class, span));
                    }
                }
            }
            NodeKind::CiteRef | NodeKind::LabelRef => {
                if let Some(key_arg) = node.args.iter().rev().find(|a| !a.optional) {
                    node.name = Some(self.group_text(&key_arg.node));
                    let keys = self.split_keys(&key_arg.node);
                    match (kind, word.as_str()) {
                        (NodeKind::LabelRef, "label") => {
                            self.labels
                                .extend(keys.into_iter().map(|(key, span)| KeyUse { key, span }));
                        }
                        (NodeKind::LabelRef, _) => {
                            self.refs
                                .extend(keys.into_iter().map(|(key, span)| KeyUse { key, span }));
                        }
                        (NodeKind::CiteRef, _) => {
                            self.cites
                                .extend(keys.into_iter().map(|(key, span)| KeyUse { key, span }));
                        }
                        _ => {}
                    }
                }
            }
            NodeKind::Command if word == "bibitem" => {
                if let Some(key_arg) = node.args.iter().rev().find(|a| !a.optional) {
                    for (key, span) in self.split_keys(&key_arg.node) {
                        self.bibitems.push(KeyUse { key, span });
                    }
                }
            }
            NodeKind::Command if word == "newenvironment" || word == "renewenvironment" || word == "newtheorem" => {
                if let Some(arg) = node.args.iter().find(|a| !a.optional) {
                    let name = self.group_text(&arg.node);
                    if !name.is_empty() {
                        self.environment_defs.push(MacroDef {
                            name,
                            arity: 0,
                            span,
                        });
                    }
                }
            }
            _ => {}
        }
        node
    }

    /// `\newcommand{\name}[arity][default]{body}` and variants, including the
    /// brace-less `\newcommand\name...` form. The definition is recorded but
    /// never expanded.
    fn parse_macro_def(&mut self, start: usize, word: &str, math: MathCtx, limit: usize) -> AstNode {
        let mut target: Option<String> = None;

        // Brace-less form: \newcommand\foo{...}
        let save = self.pos;
        let mut p = self.pos;
        while p < limit && matches!(self.bytes[p], b' ' | b'\t') {
            p += 1;
        }
        if self.peek(p) == Some(b'\\') {
            let mut q = p + 1;
            while q < limit && self.bytes[q].is_ascii_alphabetic() {
                q += 1;
            }
            if q > p + 1 {
                target = Some(String::from_utf8_lossy(&self.bytes[p + 1..q]).into_owned());
                self.pos = q;
            } else {
                self.pos = save;
            }
        }

        let args = self.consume_args(math, limit);

        if target.is_none() {
            if let Some(first) = args.iter().find(|a| !a.optional) {
                let text = self.group_text(&first.node);
                let trimmed = text.trim();
                if let Some(stripped) = trimmed.strip_prefix('\\') {
                    let name: String = stripped
                        .chars()
                        .take_while(|c| c.is_ascii_alphabetic())
                        .collect();
                    if !name.is_empty() {
                        target = Some(name);
                    }
                }
            }
        }

        let arity = args
            .iter()
            .find(|a| a.optional)
            .map(|a| self.group_text(&a.node).trim().parse::<u8>().unwrap_or(0))
            .unwrap_or(0);

        let end = args.last().map(|a| a.node.span.end).unwrap_or(self.pos);
        self.pos = end.max(self.pos);
        let span = self.span(start, self.pos);

        if let Some(name) = target {
            self.macros.push(MacroDef { name, arity, span });
        }

        let mut node = AstNode::named(NodeKind::Command, word, span);
        node.args = args;
        node
    }

    fn parse_verb(&mut self, start: usize, limit: usize) -> AstNode {
        let mut p = self.pos;
        if self.peek(p) == Some(b'*') {
            p += 1;
        }
        if let Some(delim) = self.peek(p) {
            if delim != b'\n' {
                let content_start = p + 1;
                let line_end = self.line_content_end(content_start).min(limit);
                let mut q = content_start;
                while q < line_end && self.bytes[q] != delim {
                    q += 1;
                }
                let end = if q < line_end { q + 1 } else { line_end };
                self.pos = end;
                return AstNode::named(NodeKind::Command, "verb", self.span(start, end));
            }
        }
        AstNode::named(NodeKind::Command, "verb", self.span(start, self.pos))
    }

    /// Consumes `{...}` and `[...]` argument groups following a command, with
    /// only spaces/tabs between them. A `[` with no matching `]` before a
    /// paragraph break is left alone (it is ordinary text).
    fn consume_args(&mut self, math: MathCtx, limit: usize) -> Vec<ArgGroup> {
        let mut args = Vec::new();
        while args.len() < 9 {
            let save = self.pos;
            let mut p = self.pos;
            while p < limit && matches!(self.bytes[p], b' ' | b'\t') {
                p += 1;
            }
            match self.peek(p) {
                Some(b'{') if p < limit => {
                    self.pos = p;
                    let node = self.parse_group(math, limit);
                    let broke = node.kind == NodeKind::Error(RecoveryKind::UnbalancedGroup);
                    args.push(ArgGroup {
                        optional: false,
                        node,
                    });
                    if broke {
                        break;
                    }
                }
                Some(b'[') if p < limit => {
                    match self.scan_bracket_close(p + 1, limit) {
                        Some(close_at) => {
                            self.pos = p + 1;
                            let seq = self.parse_seq(Scope::Region, math, close_at);
                            let end = close_at + 1;
                            self.pos = end;
                            let mut node = AstNode::new(NodeKind::Group, self.span(p, end));
                            node.children = seq.nodes;
                            args.push(ArgGroup {
                                optional: true,
                                node,
                            });
                        }
                        None => {
                            self.pos = save;
                            break;
                        }
                    }
                }
                _ => {
                    self.pos = save;
                    break;
                }
            }
        }
        args
    }

    /// Finds the `]` closing an optional argument: brace-aware, gives up at a
    /// paragraph break, an unbalanced `}`, or the limit.
    fn scan_bracket_close(&self, from: usize, limit: usize) -> Option<usize> {
        let mut depth: i32 = 0;
        let mut i = from;
        while i < limit {
            match self.bytes[i] {
                b']' if depth == 0 => return Some(i),
                b'\\' => i += 2,
                b'{' => {
                    depth += 1;
                    i += 1;
                }
                b'}' => {
                    depth -= 1;
                    if depth < 0 {
                        return None;
                    }
                    i += 1;
                }
                b'%' => {
                    i = self.line_content_end(i) + 1;
                }
                b'\n' => {
                    let mut j = i + 1;
                    while j < limit && matches!(self.bytes[j], b' ' | b'\t' | b'\r') {
                        j += 1;
                    }
                    if j < limit && self.bytes[j] == b'\n' {
                        return None;
                    }
                    i += 1;
                }
                _ => i += 1,
            }
        }
        None
    }

    /// Raw source text of a group node, delimiters stripped.
    fn group_text(&self, node: &AstNode) -> String {
        let span = node.span;
        let inner_start = (span.start + 1).min(span.end);
        let inner_end = span.end.saturating_sub(1).max(inner_start);
        String::from_utf8_lossy(&self.bytes[inner_start..inner_end]).into_owned()
    }

    /// Splits a group's content at commas, returning trimmed keys with the
    /// span of each key's bytes.
    fn split_keys(&self, node: &AstNode) -> Vec<(String, Span)> {
        let span = node.span;
        let inner_start = (span.start + 1).min(span.end);
        let inner_end = span.end.saturating_sub(1).max(inner_start);
        let content = &self.bytes[inner_start..inner_end];
        let mut out = Vec::new();
        let mut piece_start = 0;
        for i in 0..=content.len() {
            if i == content.len() || content[i] == b',' {
                let mut s = piece_start;
                let mut e = i;
                while s < e && content[s].is_ascii_whitespace() {
                    s += 1;
                }
                while e > s && content[e - 1].is_ascii_whitespace() {
                    e -= 1;
                }
                if e > s {
                    out.push((
                        String::from_utf8_lossy(&content[s..e]).into_owned(),
                        self.span(inner_start + s, inner_start + e),
                    ));
                }
                piece_start = i + 1;
            }
        }
        out
    }
}

enum BackslashOutcome {
    Node(AstNode),
    CloseEnd(usize),
    Defer,
}

fn utf8_len(first: u8) -> usize {
    match first {
        0x00..=0x7f => 1,
        0xc0..=0xdf => 2,
        0xe0..=0xef => 3,
        0xf0..=0xf7 => 4,
        _ => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::{NodeKind, RecoveryKind};

    fn parse_str(s: &str) -> Ast {
        parse(&SourceDocument::from_str("test.tex", s))
    }

    fn count_kind(ast: &Ast, pred: impl Fn(&AstNode) -> bool) -> usize {
        let mut n = 0;
        ast.walk(|node, _| {
            if pred(node) {
                n += 1;
            }
        });
        n
    }

    #[test]
    fn empty_input() {
        let ast = parse_str("");
        assert_eq!(ast.root.children.len(), 0);
        assert_eq!(ast.recovery_count, 0);
        assert_eq!(ast.render(), b"");
    }

    #[test]
    fn minimal_document() {
        let src = "\\documentclass{article}\\begin{document}Hi\\end{document}";
        let ast = parse_str(src);
        assert_eq!(ast.recovery_count, 0);
        assert_eq!(ast.root.children.len(), 2);
        assert_eq!(ast.root.children[0].kind, NodeKind::DocumentClassDecl);
        let doc_env = &ast.root.children[1];
        assert_eq!(doc_env.kind, NodeKind::Environment);
        assert_eq!(doc_env.name(), Some("document"));
        assert_eq!(doc_env.children.len(), 1);
        assert_eq!(doc_env.children[0].kind, NodeKind::Text);
        assert_eq!(ast.render(), src.as_bytes());
    }

    #[test]
    fn algorithm_env_parses_without_package_knowledge() {
        let src = "\\begin{algorithm}\\KwIn{data $x$}\\Return $f(x)$\\end{algorithm}";
        let ast = parse_str(src);
        assert_eq!(ast.recovery_count, 0);
        let env = &ast.root.children[0];
        assert_eq!(env.kind, NodeKind::Environment);
        assert_eq!(env.name(), Some("algorithm"));
        let commands = count_kind(&ast, |n| {
            n.kind == NodeKind::Command && matches!(n.name(), Some("KwIn") | Some("Return"))
        });
        let inline_math = count_kind(&ast, |n| n.kind == NodeKind::MathInline);
        assert_eq!(commands, 2);
        assert_eq!(inline_math, 2);
        assert_eq!(ast.render(), src.as_bytes());
    }

    #[test]
    fn unterminated_inline_math_spans_to_end_of_line() {
        let src = "a $b c\nnext line";
        let ast = parse_str(src);
        assert_eq!(ast.recovery_count, 1);
        let (_, err) = ast
            .find(|n| n.kind == NodeKind::Error(RecoveryKind::UnterminatedMath))
            .expect("error node");
        assert_eq!(err.span.start, 2);
        assert_eq!(err.span.end, 6); // "$b c"
        assert_eq!(ast.render(), src.as_bytes());
    }

    #[test]
    fn unclosed_environment_keeps_begin_span() {
        let src = "\\begin{itemize}\n\\item a\n\\end{document}";
        let ast = parse_str(src);
        // No document env is open, so \end{document} is an orphan and itemize
        // runs to EOF.
        let (_, env) = ast
            .find(|n| n.kind == NodeKind::Error(RecoveryKind::UnclosedEnvironment))
            .expect("unclosed env");
        assert_eq!(env.name(), Some("itemize"));
        assert_eq!(env.span.start, 0);
        assert_eq!(ast.render(), src.as_bytes());
    }

    #[test]
    fn mismatched_end_defers_to_outer_environment() {
        let src = "\\begin{document}\\begin{align}x\\end{aligned}\n\\end{document}";
        let ast = parse_str(src);
        let (_, align) = ast
            .find(|n| n.kind == NodeKind::Error(RecoveryKind::UnclosedEnvironment))
            .expect("align unclosed");
        assert_eq!(align.name(), Some("align"));
        let (_, orphan) = ast
            .find(|n| n.kind == NodeKind::Error(RecoveryKind::OrphanEnd))
            .expect("orphan end");
        assert_eq!(orphan.name(), Some("aligned"));
        let doc_env = &ast.root.children[0];
        assert_eq!(doc_env.kind, NodeKind::Environment);
        assert_eq!(ast.render(), src.as_bytes());
    }

    #[test]
    fn packages_recorded_in_order() {
        let src = "\\documentclass{article}\n\\usepackage{booktabs}\n\\usepackage[utf8]{inputenc}\n\\usepackage{amsmath,amssymb}\n";
        let ast = parse_str(src);
        let names: Vec<&str> = ast.packages.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, vec!["booktabs", "inputenc", "amsmath", "amssymb"]);
        assert_eq!(ast.packages[1].options.as_deref(), Some("utf8"));
        assert_eq!(ast.documentclass.as_ref().unwrap().0, "article");
    }

    #[test]
    fn cite_ref_label_keys_collected_with_spans() {
        let src = "\\label{sec:a}\\ref{sec:a}\\cite{x, y}\\bibitem{x}";
        let ast = parse_str(src);
        assert_eq!(ast.labels.len(), 1);
        assert_eq!(ast.labels[0].key, "sec:a");
        assert_eq!(ast.refs.len(), 1);
        assert_eq!(ast.cites.len(), 2);
        assert_eq!(ast.cites[1].key, "y");
        assert_eq!(ast.bibitems.len(), 1);
        // Key spans cover exactly the key bytes.
        let d = ast.doc().clone();
        assert_eq!(d.slice(ast.cites[1].span), b"y");
    }

    #[test]
    fn newcommand_recorded_with_arity() {
        let src = "\\newcommand{\\norm}[1]{\\lVert #1\\rVert}\\newcommand\\eps{\\varepsilon}";
        let ast = parse_str(src);
        assert_eq!(ast.macros.len(), 2);
        assert_eq!(ast.macros[0].name, "norm");
        assert_eq!(ast.macros[0].arity, 1);
        assert_eq!(ast.macros[1].name, "eps");
        assert_eq!(ast.macros[1].arity, 0);
    }

    #[test]
    fn verbatim_contents_are_opaque() {
        let src = "\\begin{verbatim}\n\\begin{x} $ } {\n\\end{verbatim} after";
        let ast = parse_str(src);
        assert_eq!(ast.recovery_count, 0);
        let env = &ast.root.children[0];
        assert_eq!(env.kind, NodeKind::Environment);
        assert_eq!(env.name(), Some("verbatim"));
        assert_eq!(env.children.len(), 1);
        assert_eq!(env.children[0].kind, NodeKind::Text);
        assert_eq!(ast.render(), src.as_bytes());
    }

    #[test]
    fn stray_close_brace_is_recovered() {
        let src = "a } b";
        let ast = parse_str(src);
        assert_eq!(ast.recovery_count, 1);
        assert_eq!(ast.render(), src.as_bytes());
    }

    #[test]
    fn display_math_and_delim_math() {
        let src = "$$x$$ and \\[y\\] and \\(z\\)";
        let ast = parse_str(src);
        assert_eq!(ast.recovery_count, 0);
        assert_eq!(count_kind(&ast, |n| n.kind == NodeKind::MathDisplay), 2);
        assert_eq!(count_kind(&ast, |n| n.kind == NodeKind::MathInline), 1);
        assert_eq!(ast.render(), src.as_bytes());
    }

    #[test]
    fn math_never_nests_same_kind() {
        // A $ inside a group inside math stays literal.
        let src = "$a \\text{b $c$ d} e$";
        let ast = parse_str(src);
        assert_eq!(count_kind(&ast, |n| n.kind == NodeKind::MathInline), 1);
        assert_eq!(ast.render(), src.as_bytes());
    }

    #[test]
    fn invalid_utf8_round_trips() {
        let mut bytes = b"\\section{a}".to_vec();
        bytes.extend_from_slice(&[0xff, 0xfe, 0x80]);
        bytes.extend_from_slice(b" tail");
        let doc = SourceDocument::new("bin.tex", bytes.clone());
        let ast = parse(&doc);
        assert_eq!(ast.render(), bytes);
    }

    #[test]
    fn begin_document_offset_recorded() {
        let src = "\\documentclass{article}\n\\usepackage{amsmath}\n\\begin{document}\nx\n\\end{document}\n";
        let ast = parse_str(src);
        let off = ast.begin_document.expect("begin doc");
        assert_eq!(&src.as_bytes()[off..off + 6], b"\\begin");
        assert_eq!(ast.preamble().len(), 4); // class, newline text, package, newline text
    }

    #[test]
    fn spans_obey_laws_on_tricky_input() {
        let srcs = [
            "\\foo[a][b]{c}{d} rest",
            "{unbalanced",
            "\\begin{tabular}{ll}a & b\\\\\\end{tabular}",
            "x $ \\begin{aligned}y\\end{aligned} $ z",
            "% comment\n\\item [0,1) half-open",
        ];
        for s in srcs {
            let ast = parse_str(s);
            ast.check_invariants().unwrap();
            assert_eq!(ast.render(), s.as_bytes(), "render mismatch for {s:?}");
        }
    }
}
