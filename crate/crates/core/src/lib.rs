//! texmend-core: LaTeX error detection, localization, explanation, and repair.
//!
//! The pipeline fuses three signals — the compiler log, a typed
//! span-preserving AST, and a curated package database — to classify compile
//! errors into six categories, resolve their true source spans (including
//! errors the engine reports at the wrong line), explain them in plain
//! English, and generate validated minimal fixes through a bounded
//! suggest/validate/retry loop.

pub mod ast;
pub mod diagnose;
pub mod fix;
pub mod log;
pub mod parser;
pub mod patch;
pub mod pkgdb;
pub mod source;
pub mod statics;

pub use ast::{Ast, AstNode, NodeKind, NodePath, RecoveryKind};
pub use diagnose::{diagnose, Confidence, Diagnostic, ErrorCategory};
pub use log::{parse_log, LogPattern, LogRecord, LogReport, Severity};
pub use parser::parse;
pub use patch::{apply_patch, Patch, PatchError};
pub use pkgdb::{default_db, PackageDb, SymbolKind};
pub use source::{SourceDocument, Span};
