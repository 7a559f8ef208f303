use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    User,
    Item,
    Context,
}

impl Side {
    pub const ALL: [Side; 3] = [Side::User, Side::Item, Side::Context];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Categorical,
    Text,
    /// Identifier without semantic text. Never rendered into prompts.
    AnonymousId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSchema {
    pub name: String,
    pub side: Side,
    pub kind: FieldKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocabulary: Option<Vec<String>>,
}

impl FieldSchema {
    pub fn new(name: &str, side: Side, kind: FieldKind) -> Self {
        Self {
            name: name.to_string(),
            side,
            kind,
            vocabulary: None,
        }
    }

    pub fn with_vocabulary(mut self, vocab: Vec<String>) -> Self {
        self.vocabulary = Some(vocab);
        self
    }
}

pub const RESERVED_COLUMNS: [&str; 3] = ["domain_id", "row_id", "label"];

/// Ordered field list. The JSON sidecar is a plain list of fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Schema {
    fields: Vec<FieldSchema>,
}

impl Schema {
    pub fn new(fields: Vec<FieldSchema>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for f in &fields {
            if f.name.is_empty() || f.name.contains(['\t', '\n', '\r']) {
                return Err(Error::Schema(format!("invalid field name {:?}", f.name)));
            }
            if RESERVED_COLUMNS.contains(&f.name.as_str()) {
                return Err(Error::Schema(format!(
                    "field name `{}` is reserved",
                    f.name
                )));
            }
            if !seen.insert(f.name.as_str()) {
                return Err(Error::Schema(format!("duplicate field `{}`", f.name)));
            }
        }
        Ok(Self { fields })
    }

    pub fn fields(&self) -> &[FieldSchema] {
        &self.fields
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| f.name == name)
    }

    /// Indices of fields of `kind`, in declared order.
    pub fn indices_of_kind(&self, kind: FieldKind) -> Vec<usize> {
        self.fields
            .iter()
            .enumerate()
            .filter(|(_, f)| f.kind == kind)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let parsed: Schema = serde_json::from_str(text)?;
        Self::new(parsed.fields)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingPath(path.to_path_buf()));
        }
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}
