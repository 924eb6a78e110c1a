//! Declarative package knowledge: which packages provide which commands and
//! environments, plus known conflicts and load-order constraints.
//!
//! The database is data, not code: a JSON file shipped with the artifact (see
//! `data/packages.json`) so coverage can grow without recompilation. A
//! `builtin` record models the LaTeX kernel, which is always loaded.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use once_cell::sync::Lazy;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Required schema version of the db file.
pub const DB_SCHEMA_VERSION: u32 = 1;

/// The embedded seed database.
pub const DEFAULT_DB_JSON: &str = include_str!("../data/packages.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SymbolKind {
    Command,
    Environment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackageRecord {
    pub name: String,
    /// Higher priority ranks first in `provider_of`; ties break alphabetically.
    #[serde(default)]
    pub priority: i32,
    /// True for the kernel pseudo-package: always loaded, never suggested.
    #[serde(default)]
    pub builtin: bool,
    #[serde(default)]
    pub provides_commands: Vec<String>,
    #[serde(default)]
    pub provides_environments: Vec<String>,
    /// Canonical options used when suggesting `\usepackage[...]{name}`.
    #[serde(default)]
    pub default_options: Option<String>,
    #[serde(default)]
    pub notes: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictKind {
    Incompatible,
    OrderSensitive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictRule {
    pub a: String,
    pub b: String,
    pub kind: ConflictKind,
    /// For `OrderSensitive`: the required order is a-before-b when true,
    /// b-before-a when false.
    #[serde(default)]
    pub a_before_b: bool,
    pub resolution_hint: String,
}

#[derive(Debug, Deserialize)]
struct DbFile {
    version: u32,
    packages: Vec<PackageRecord>,
    #[serde(default)]
    conflicts: Vec<ConflictRule>,
}

#[derive(Debug, Error)]
pub enum DbError {
    #[error("cannot read db file: {0}")]
    Io(#[from] std::io::Error),
    #[error("schema error at line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("unsupported db schema version {0} (expected {DB_SCHEMA_VERSION})")]
    BadVersion(u32),
    #[error("duplicate package `{0}`")]
    DuplicatePackage(String),
}

/// Loaded database with a reverse symbol index.
#[derive(Debug, Clone)]
pub struct PackageDb {
    records: BTreeMap<String, PackageRecord>,
    conflicts: Vec<ConflictRule>,
    command_index: HashMap<String, Vec<String>>,
    environment_index: HashMap<String, Vec<String>>,
}

impl PackageDb {
    pub fn load(path: &Path) -> Result<Self, DbError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, DbError> {
        let file: DbFile = serde_json::from_str(text).map_err(|e| DbError::Schema {
            line: e.line(),
            message: e.to_string(),
        })?;
        if file.version != DB_SCHEMA_VERSION {
            return Err(DbError::BadVersion(file.version));
        }
        let mut records = BTreeMap::new();
        for rec in file.packages {
            if records.contains_key(&rec.name) {
                return Err(DbError::DuplicatePackage(rec.name));
            }
            records.insert(rec.name.clone(), rec);
        }
        let mut db = PackageDb {
            records,
            conflicts: file.conflicts,
            command_index: HashMap::new(),
            environment_index: HashMap::new(),
        };
        db.build_index();
        Ok(db)
    }

    fn build_index(&mut self) {
        for rec in self.records.values() {
            for c in &rec.provides_commands {
                self.command_index
                    .entry(c.clone())
                    .or_default()
                    .push(rec.name.clone());
            }
            for e in &rec.provides_environments {
                self.environment_index
                    .entry(e.clone())
                    .or_default()
                    .push(rec.name.clone());
            }
        }
        // Rank fixed at build time: priority descending, name ascending.
        let records = &self.records;
        let rank = |names: &mut Vec<String>| {
            names.sort_by(|a, b| {
                let pa = records.get(a).map(|r| r.priority).unwrap_or(0);
                let pb = records.get(b).map(|r| r.priority).unwrap_or(0);
                pb.cmp(&pa).then_with(|| a.cmp(b))
            });
        };
        for v in self.command_index.values_mut() {
            rank(v);
        }
        for v in self.environment_index.values_mut() {
            rank(v);
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&PackageRecord> {
        self.records.get(name)
    }

    pub fn packages(&self) -> impl Iterator<Item = &PackageRecord> {
        self.records.values()
    }

    pub fn conflicts(&self) -> &[ConflictRule] {
        &self.conflicts
    }

    /// All packages providing the symbol, best-ranked first.
    pub fn provider_of(&self, kind: SymbolKind, name: &str) -> Vec<&PackageRecord> {
        let index = match kind {
            SymbolKind::Command => &self.command_index,
            SymbolKind::Environment => &self.environment_index,
        };
        index
            .get(name)
            .map(|names| names.iter().filter_map(|n| self.records.get(n)).collect())
            .unwrap_or_default()
    }

    /// Non-builtin providers only (candidates for a `\usepackage` fix).
    pub fn loadable_providers(&self, kind: SymbolKind, name: &str) -> Vec<&PackageRecord> {
        self.provider_of(kind, name)
            .into_iter()
            .filter(|r| !r.builtin)
            .collect()
    }

    /// True if the symbol is provided by the kernel or any loaded package.
    pub fn symbol_available(&self, kind: SymbolKind, name: &str, loaded: &[String]) -> bool {
        self.provider_of(kind, name)
            .iter()
            .any(|r| r.builtin || loaded.iter().any(|l| l == &r.name))
    }

    /// Every rule violated by the given load list/order, in db order.
    pub fn conflicts_in(&self, loaded: &[String]) -> Vec<&ConflictRule> {
        let pos = |name: &str| loaded.iter().position(|l| l == name);
        self.conflicts
            .iter()
            .filter(|rule| {
                let (pa, pb) = (pos(&rule.a), pos(&rule.b));
                match (pa, pb) {
                    (Some(ia), Some(ib)) => match rule.kind {
                        ConflictKind::Incompatible => true,
                        ConflictKind::OrderSensitive => {
                            if rule.a_before_b {
                                ia > ib
                            } else {
                                ib > ia
                            }
                        }
                    },
                    _ => false,
                }
            })
            .collect()
    }

    /// Checks that the symbol index is exactly the inversion of the records'
    /// provides sets. Used by tests.
    pub fn check_inversion(&self) -> Result<(), String> {
        for rec in self.records.values() {
            for c in &rec.provides_commands {
                if !self
                    .command_index
                    .get(c)
                    .is_some_and(|v| v.contains(&rec.name))
                {
                    return Err(format!("command {c} missing from index for {}", rec.name));
                }
            }
            for e in &rec.provides_environments {
                if !self
                    .environment_index
                    .get(e)
                    .is_some_and(|v| v.contains(&rec.name))
                {
                    return Err(format!("env {e} missing from index for {}", rec.name));
                }
            }
        }
        for (sym, pkgs) in &self.command_index {
            for p in pkgs {
                let rec = self
                    .records
                    .get(p)
                    .ok_or_else(|| format!("index references unknown package {p}"))?;
                if !rec.provides_commands.contains(sym) {
                    return Err(format!("index maps {sym} to {p} which does not provide it"));
                }
            }
        }
        for (sym, pkgs) in &self.environment_index {
            for p in pkgs {
                let rec = self
                    .records
                    .get(p)
                    .ok_or_else(|| format!("index references unknown package {p}"))?;
                if !rec.provides_environments.contains(sym) {
                    return Err(format!("index maps {sym} to {p} which does not provide it"));
                }
            }
        }
        Ok(())
    }
}

static DEFAULT_DB: Lazy<PackageDb> = Lazy::new(|| {
    PackageDb::from_json(DEFAULT_DB_JSON).expect("embedded packages.json must be valid")
});

/// The embedded seed database.
pub fn default_db() -> &'static PackageDb {
    &DEFAULT_DB
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_db_loads_and_indexes() {
        let db = default_db();
        assert!(db.len() >= 25, "seed db must hold at least 25 packages");
        db.check_inversion().unwrap();
    }

    #[test]
    fn algorithm_env_ranked_providers() {
        let db = default_db();
        let providers = db.loadable_providers(SymbolKind::Environment, "algorithm");
        assert!(!providers.is_empty());
        assert_eq!(providers[0].name, "algorithm2e");
        assert_eq!(providers[0].default_options.as_deref(), Some("ruled,vlined"));
    }

    #[test]
    fn toprule_provided_by_booktabs() {
        let db = default_db();
        let providers = db.provider_of(SymbolKind::Command, "toprule");
        assert_eq!(providers.len(), 1);
        assert_eq!(providers[0].name, "booktabs");
    }

    #[test]
    fn unknown_symbol_has_no_providers() {
        let db = default_db();
        assert!(db
            .provider_of(SymbolKind::Command, "nonexistentcmd")
            .is_empty());
    }

    #[test]
    fn empty_db_loads() {
        let db = PackageDb::from_json(r#"{"version":1,"packages":[]}"#).unwrap();
        assert!(db.is_empty());
        assert!(db.provider_of(SymbolKind::Command, "toprule").is_empty());
    }

    #[test]
    fn duplicate_package_rejected() {
        let err = PackageDb::from_json(
            r#"{"version":1,"packages":[{"name":"x"},{"name":"x"}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, DbError::DuplicatePackage(n) if n == "x"));
    }

    #[test]
    fn malformed_file_reports_line() {
        let err = PackageDb::from_json("{\n  \"version\": 1,\n  oops\n}").unwrap_err();
        match err {
            DbError::Schema { line, .. } => assert_eq!(line, 3),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_version_rejected() {
        let err = PackageDb::from_json(r#"{"version":2,"packages":[]}"#).unwrap_err();
        assert!(matches!(err, DbError::BadVersion(2)));
    }

    #[test]
    fn conflicts_in_empty_load_list() {
        let db = default_db();
        assert!(db.conflicts_in(&[]).is_empty());
        assert!(db.conflicts_in(&["algorithm2e".into()]).is_empty());
    }

    #[test]
    fn order_sensitive_rule_detected() {
        let db = default_db();
        // cleveref must come after hyperref.
        let bad = vec!["cleveref".to_string(), "hyperref".to_string()];
        let hits = db.conflicts_in(&bad);
        assert!(hits
            .iter()
            .any(|r| r.a == "hyperref" && r.b == "cleveref"));
        let good = vec!["hyperref".to_string(), "cleveref".to_string()];
        assert!(db
            .conflicts_in(&good)
            .iter()
            .all(|r| !(r.a == "hyperref" && r.b == "cleveref")));
    }

    #[test]
    fn incompatible_pair_detected() {
        let db = default_db();
        let bad = vec!["natbib".to_string(), "biblatex".to_string()];
        assert!(db
            .conflicts_in(&bad)
            .iter()
            .any(|r| r.kind == ConflictKind::Incompatible));
    }

    #[test]
    fn symbol_available_respects_kernel_and_load_list() {
        let db = default_db();
        assert!(db.symbol_available(SymbolKind::Command, "section", &[]));
        assert!(!db.symbol_available(SymbolKind::Command, "toprule", &[]));
        assert!(db.symbol_available(
            SymbolKind::Command,
            "toprule",
            &["booktabs".to_string()]
        ));
    }
}
