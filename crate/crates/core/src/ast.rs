//! Typed, span-preserving LaTeX syntax tree.
//!
//! The tree is lossless: every node carries the byte span it was parsed from,
//! child spans are disjoint and contained in their parent, and [`Ast::render`]
//! reassembles the original bytes exactly (structural bytes such as braces and
//! `\begin{...}` headers live in the gaps between child spans).

use serde::{Deserialize, Serialize};

use crate::source::{SourceDocument, Span};

/// What went wrong at an error-recovery node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RecoveryKind {
    UnclosedEnvironment,
    UnterminatedMath,
    UnbalancedGroup,
    OrphanEnd,
}

/// Node classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    Command,
    Environment,
    Group,
    MathInline,
    MathDisplay,
    Text,
    Comment,
    PackageDecl,
    DocumentClassDecl,
    CiteRef,
    LabelRef,
    Error(RecoveryKind),
}

impl NodeKind {
    pub fn is_error(&self) -> bool {
        matches!(self, NodeKind::Error(_))
    }

    pub fn is_math(&self) -> bool {
        matches!(self, NodeKind::MathInline | NodeKind::MathDisplay)
    }
}

/// An argument group attached to a command or environment header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArgGroup {
    /// `[...]` argument when true, `{...}` when false.
    pub optional: bool,
    /// The group node covering the bracketed extent, delimiters included.
    pub node: AstNode,
}

/// One node of the syntax tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AstNode {
    pub kind: NodeKind,
    /// Command name without backslash, environment name, package name, or
    /// cite/ref key text, where applicable.
    pub name: Option<String>,
    pub span: Span,
    /// Argument groups; these always precede `children` in span order.
    pub args: Vec<ArgGroup>,
    pub children: Vec<AstNode>,
}

impl AstNode {
    pub fn new(kind: NodeKind, span: Span) -> Self {
        AstNode {
            kind,
            name: None,
            span,
            args: Vec::new(),
            children: Vec::new(),
        }
    }

    pub fn named(kind: NodeKind, name: impl Into<String>, span: Span) -> Self {
        AstNode {
            kind,
            name: Some(name.into()),
            span,
            args: Vec::new(),
            children: Vec::new(),
        }
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    /// All direct pieces of this node (argument groups, then body children),
    /// which the parser guarantees to be in span order.
    pub fn pieces(&self) -> impl Iterator<Item = &AstNode> {
        self.args.iter().map(|a| &a.node).chain(self.children.iter())
    }

    pub fn piece(&self, index: usize) -> Option<&AstNode> {
        if index < self.args.len() {
            Some(&self.args[index].node)
        } else {
            self.children.get(index - self.args.len())
        }
    }

    pub fn piece_count(&self) -> usize {
        self.args.len() + self.children.len()
    }

    fn render_into(&self, bytes: &[u8], out: &mut Vec<u8>) {
        if self.piece_count() == 0 {
            out.extend_from_slice(&bytes[self.span.start..self.span.end]);
            return;
        }
        let mut pos = self.span.start;
        for piece in self.pieces() {
            out.extend_from_slice(&bytes[pos..piece.span.start]);
            piece.render_into(bytes, out);
            pos = piece.span.end;
        }
        out.extend_from_slice(&bytes[pos..self.span.end]);
    }

    fn count_errors(&self) -> usize {
        let own = usize::from(self.kind.is_error());
        self.pieces().map(|p| p.count_errors()).sum::<usize>() + own
    }

    /// Checks the span laws on this subtree: pieces sorted, disjoint, and
    /// contained in the parent span. Returns the first violation found.
    pub fn check_span_laws(&self) -> Result<(), String> {
        let mut prev_end = self.span.start;
        for piece in self.pieces() {
            if piece.span.start < prev_end {
                return Err(format!(
                    "piece at {}..{} overlaps or is out of order (prev end {})",
                    piece.span.start, piece.span.end, prev_end
                ));
            }
            if piece.span.end > self.span.end {
                return Err(format!(
                    "piece at {}..{} escapes parent {}..{}",
                    piece.span.start, piece.span.end, self.span.start, self.span.end
                ));
            }
            piece.check_span_laws()?;
            prev_end = piece.span.end;
        }
        Ok(())
    }
}

/// Path from the root to a node, as piece indexes (see [`AstNode::piece`]).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodePath(pub Vec<usize>);

impl NodePath {
    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn parent(&self) -> Option<NodePath> {
        if self.0.is_empty() {
            None
        } else {
            Some(NodePath(self.0[..self.0.len() - 1].to_vec()))
        }
    }
}

/// A recorded `\usepackage` / `\RequirePackage` (one entry per package name;
/// a multi-package declaration yields several entries with the same span).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackageUse {
    pub name: String,
    pub options: Option<String>,
    /// Span of the whole declaration.
    pub span: Span,
}

/// A `\newcommand`-family definition (recorded, never expanded).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MacroDef {
    pub name: String,
    pub arity: u8,
    pub span: Span,
}

/// A cite/ref/label key occurrence; `span` covers just the key bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyUse {
    pub key: String,
    pub span: Span,
}

/// Parsed document: the tree plus derived indexes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ast {
    doc: SourceDocument,
    pub root: AstNode,
    /// `\usepackage` entries in document order.
    pub packages: Vec<PackageUse>,
    pub documentclass: Option<(String, Span)>,
    pub recovery_count: usize,
    pub macros: Vec<MacroDef>,
    pub environment_defs: Vec<MacroDef>,
    /// `\label{...}` definitions.
    pub labels: Vec<KeyUse>,
    /// `\ref`-family uses.
    pub refs: Vec<KeyUse>,
    /// `\cite`-family uses.
    pub cites: Vec<KeyUse>,
    /// `\bibitem{...}` definitions.
    pub bibitems: Vec<KeyUse>,
    /// Byte offset where `\begin{document}` starts, if present.
    pub begin_document: Option<usize>,
}

impl Ast {
    pub(crate) fn assemble(
        doc: SourceDocument,
        root: AstNode,
        packages: Vec<PackageUse>,
        documentclass: Option<(String, Span)>,
        macros: Vec<MacroDef>,
        environment_defs: Vec<MacroDef>,
        labels: Vec<KeyUse>,
        refs: Vec<KeyUse>,
        cites: Vec<KeyUse>,
        bibitems: Vec<KeyUse>,
        begin_document: Option<usize>,
    ) -> Self {
        let recovery_count = root.count_errors();
        Ast {
            doc,
            root,
            packages,
            documentclass,
            recovery_count,
            macros,
            environment_defs,
            labels,
            refs,
            cites,
            bibitems,
            begin_document,
        }
    }

    pub fn doc(&self) -> &SourceDocument {
        &self.doc
    }

    /// Reassembles the original source bytes from the tree.
    pub fn render(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.doc.len());
        self.root.render_into(self.doc.bytes(), &mut out);
        out
    }

    /// Root children lying before `\begin{document}` (the whole document when
    /// there is no `document` environment).
    pub fn preamble(&self) -> Vec<&AstNode> {
        let cutoff = self.begin_document.unwrap_or(self.doc.len());
        self.root
            .children
            .iter()
            .filter(|n| n.span.end <= cutoff)
            .collect()
    }

    pub fn node_at(&self, path: &NodePath) -> Option<&AstNode> {
        let mut node = &self.root;
        for &i in &path.0 {
            node = node.piece(i)?;
        }
        Some(node)
    }

    /// Deepest nodes whose span intersects the 1-based line, innermost first
    /// (depth descending, then span start). Empty when the line is beyond the
    /// document or nothing lies on it.
    pub fn locate(&self, line: u32) -> Vec<NodePath> {
        let Some((ls, le)) = self.doc.line_bounds(line) else {
            return Vec::new();
        };
        let mut out = Vec::new();
        fn walk(
            node: &AstNode,
            path: &mut Vec<usize>,
            ls: usize,
            le: usize,
            out: &mut Vec<NodePath>,
        ) {
            let mut any = false;
            for (i, piece) in node.pieces().enumerate() {
                if piece.span.intersects_range(ls, le) {
                    any = true;
                    path.push(i);
                    walk(piece, path, ls, le, out);
                    path.pop();
                }
            }
            if !any && !path.is_empty() {
                out.push(NodePath(path.clone()));
            }
        }
        let mut path = Vec::new();
        walk(&self.root, &mut path, ls, le, &mut out);
        out.sort_by(|a, b| {
            b.depth()
                .cmp(&a.depth())
                .then_with(|| {
                    let sa = self.node_at(a).map(|n| n.span.start).unwrap_or(0);
                    let sb = self.node_at(b).map(|n| n.span.start).unwrap_or(0);
                    sa.cmp(&sb)
                })
                .then_with(|| a.cmp(b))
        });
        out
    }

    /// Walks every node in the tree, depth-first.
    pub fn walk<'a>(&'a self, mut f: impl FnMut(&'a AstNode, &NodePath)) {
        fn inner<'a, F: FnMut(&'a AstNode, &NodePath)>(
            node: &'a AstNode,
            path: &mut Vec<usize>,
            f: &mut F,
        ) {
            for (i, piece) in node.pieces().enumerate() {
                path.push(i);
                f(piece, &NodePath(path.clone()));
                inner(piece, path, f);
                path.pop();
            }
        }
        let mut path = Vec::new();
        inner(&self.root, &mut path, &mut f);
    }

    /// First node (document order) matching the predicate.
    pub fn find(&self, mut pred: impl FnMut(&AstNode) -> bool) -> Option<(NodePath, &AstNode)> {
        let mut found: Option<(NodePath, &AstNode)> = None;
        self.walk(|node, path| {
            if found.is_none() && pred(node) {
                found = Some((path.clone(), node));
            }
        });
        found
    }

    /// Checks all tree invariants; used by tests and the fix validator.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.root.span.start != 0 || self.root.span.end != self.doc.len() {
            return Err("root span does not cover the document".into());
        }
        self.root.check_span_laws()?;
        let counted = self.root.count_errors();
        if counted != self.recovery_count {
            return Err(format!(
                "recovery_count {} != {} error nodes in tree",
                self.recovery_count, counted
            ));
        }
        Ok(())
    }
}
