//! Feature textualization: turning an [`InstanceRecord`] into a prompt.
//!
//! The base prompt describes the user, item and context sides in that order,
//! one sentence per side. Within a sentence, clauses are joined by `sep`
//! except the last one, which is joined by `last_sep`; sentences end with a
//! period. Anonymous-id fields and empty values are never rendered.
//!
//! How each side opens and how each field is phrased comes from a
//! [`PhraseTable`]; a [`PhraseBook`] holds one table per domain.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use csv::{ReaderBuilder, WriterBuilder};
use serde::{Deserialize, Serialize};

use crate::data::{FieldKind, InstanceRecord, Schema, Side};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PromptVariant {
    #[default]
    Base,
    /// `field: value;` pairs without auxiliary text.
    Prompt1,
    /// Field names replaced by the word "Field".
    Prompt2,
    /// Base with some fields removed.
    Prompt3,
}

impl FromStr for PromptVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "base" => Ok(Self::Base),
            "prompt1" => Ok(Self::Prompt1),
            "prompt2" => Ok(Self::Prompt2),
            "prompt3" => Ok(Self::Prompt3),
            other => Err(Error::invalid(format!(
                "unknown prompt variant `{other}` (expected base, prompt1, prompt2 or prompt3)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptTemplate {
    pub variant: PromptVariant,
    /// Fields removed by [`PromptVariant::Prompt3`].
    pub drop_fields: Vec<String>,
}

impl PromptTemplate {
    pub fn new(variant: PromptVariant) -> Self {
        Self {
            variant,
            drop_fields: Vec::new(),
        }
    }

    pub fn dropping(fields: &[&str]) -> Self {
        Self {
            variant: PromptVariant::Prompt3,
            drop_fields: fields.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SidePhrase {
    pub intro: String,
    pub sep: String,
    pub last_sep: String,
}

impl SidePhrase {
    pub fn new(intro: &str, sep: &str, last_sep: &str) -> Self {
        Self {
            intro: intro.into(),
            sep: sep.into(),
            last_sep: last_sep.into(),
        }
    }
}

/// How one field is phrased. `template` may use `{field}` and `{value}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClausePhrase {
    pub template: String,
    /// Word substituted for `{field}`; defaults to the field name with
    /// underscores replaced by spaces.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field_word: Option<String>,
    /// Name used by the `field: value` variant; defaults to `field_word`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default)]
    pub quote: bool,
}

impl ClausePhrase {
    pub fn new(template: &str) -> Self {
        Self {
            template: template.into(),
            field_word: None,
            label: None,
            quote: false,
        }
    }

    pub fn field_word(mut self, w: &str) -> Self {
        self.field_word = Some(w.into());
        self
    }

    pub fn label(mut self, l: &str) -> Self {
        self.label = Some(l.into());
        self
    }

    pub fn quoted(mut self) -> Self {
        self.quote = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhraseTable {
    pub user: SidePhrase,
    pub item: SidePhrase,
    pub context: SidePhrase,
    #[serde(default)]
    pub clauses: BTreeMap<String, ClausePhrase>,
}

impl Default for PhraseTable {
    fn default() -> Self {
        Self {
            user: SidePhrase::new("There is a user, whose ", ", ", ", and "),
            item: SidePhrase::new("There is an item, whose ", ", ", ", and "),
            context: SidePhrase::new("The ", ", ", ", and "),
            clauses: BTreeMap::new(),
        }
    }
}

impl PhraseTable {
    fn side(&self, side: Side) -> &SidePhrase {
        match side {
            Side::User => &self.user,
            Side::Item => &self.item,
            Side::Context => &self.context,
        }
    }

    pub fn with_clause(mut self, field: &str, clause: ClausePhrase) -> Self {
        self.clauses.insert(field.into(), clause);
        self
    }

    /// Phrasing of the e-commerce example: "The product is a jacket and its
    /// name is ...". Fields: gender, occupation, item, name, time.
    pub fn product_example() -> Self {
        Self {
            item: SidePhrase::new("The product is ", " and ", " and "),
            context: SidePhrase::new("The system ", ", ", ", and "),
            ..Self::default()
        }
        .with_clause("item", ClausePhrase::new("a {value}"))
        .with_clause("name", ClausePhrase::new("its {field} is {value}").quoted())
    }

    /// Phrasing of the movie example: "There is a movie, its title is ...".
    /// Fields: gender, occupation, title, genre, release_year.
    pub fn movie_example() -> Self {
        Self {
            item: SidePhrase::new("There is a movie, ", ", ", ", and "),
            context: SidePhrase::new("The system ", ", ", ", and "),
            ..Self::default()
        }
        .with_clause(
            "title",
            ClausePhrase::new("its {field} is {value}").quoted(),
        )
        .with_clause("genre", ClausePhrase::new("its {field} is {value}"))
        .with_clause(
            "release_year",
            ClausePhrase::new("it is {field} at {value}")
                .field_word("released")
                .label("release year"),
        )
    }

    /// Phrasing for a generated domain whose items are called `noun`.
    pub fn synthetic(noun: &str) -> Self {
        let its = || ClausePhrase::new("its {field} is {value}");
        Self {
            item: SidePhrase::new(&format!("There is a {noun}, "), ", ", ", and "),
            context: SidePhrase::new("The system ", ", ", ", and "),
            ..Self::default()
        }
        .with_clause("title", its().quoted())
        .with_clause("category", its())
        .with_clause("description", its())
    }
}

/// Phrase tables per domain with a fallback.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhraseBook {
    pub default: PhraseTable,
    pub domains: BTreeMap<usize, PhraseTable>,
}

impl PhraseBook {
    pub fn uniform(table: PhraseTable) -> Self {
        Self {
            default: table,
            domains: BTreeMap::new(),
        }
    }

    pub fn synthetic(item_nouns: &[String]) -> Self {
        Self {
            default: PhraseTable::synthetic("item"),
            domains: item_nouns
                .iter()
                .enumerate()
                .map(|(d, n)| (d, PhraseTable::synthetic(n)))
                .collect(),
        }
    }

    pub fn table(&self, domain_id: usize) -> &PhraseTable {
        self.domains.get(&domain_id).unwrap_or(&self.default)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingPath(path.to_path_buf()));
        }
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// Replace typographic quotes with ASCII ones.
pub fn normalize_quotes(s: &str) -> String {
    s.chars()
        .map(|c| match c {
            '\u{201C}' | '\u{201D}' | '\u{201E}' | '\u{00AB}' | '\u{00BB}' => '"',
            '\u{2018}' | '\u{2019}' => '\'',
            c => c,
        })
        .collect()
}

fn join_clauses(parts: &[String], sep: &str, last_sep: &str) -> String {
    match parts {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{}{last_sep}{last}", init.join(sep)),
    }
}

/// Render `record` under `template`. Pure and deterministic.
pub fn render(
    record: &InstanceRecord,
    schema: &Schema,
    table: &PhraseTable,
    template: &PromptTemplate,
) -> Result<String> {
    if record.values.len() != schema.len() {
        return Err(Error::invalid(format!(
            "row {} has {} values, schema has {} fields",
            record.row_id,
            record.values.len(),
            schema.len()
        )));
    }
    let dropped = |name: &str| {
        template.variant == PromptVariant::Prompt3 && template.drop_fields.iter().any(|d| d == name)
    };
    let default_clause = ClausePhrase::new("{field} is {value}");

    // (side, clause, value) for every field that will be rendered
    let mut visible = Vec::new();
    for (f, v) in schema.fields().iter().zip(&record.values) {
        if f.kind == FieldKind::AnonymousId || v.trim().is_empty() || dropped(&f.name) {
            continue;
        }
        let clause = table.clauses.get(&f.name).unwrap_or(&default_clause);
        let value = normalize_quotes(v.trim());
        let already = value.len() >= 2 && value.starts_with('"') && value.ends_with('"');
        let value = if clause.quote && !already {
            format!("\"{value}\"")
        } else {
            value
        };
        let field_word = clause
            .field_word
            .clone()
            .unwrap_or_else(|| f.name.replace('_', " "));
        visible.push((f.side, clause, field_word, value));
    }

    if template.variant == PromptVariant::Prompt1 {
        let mut pairs = Vec::new();
        for side in Side::ALL {
            for (s, clause, word, value) in &visible {
                if *s == side {
                    let label = clause.label.as_deref().unwrap_or(word);
                    pairs.push(format!("{label}: {value}"));
                }
            }
        }
        return Ok(if pairs.is_empty() {
            String::new()
        } else {
            format!("{}.", pairs.join("; "))
        });
    }

    let mut sentences = Vec::new();
    for side in Side::ALL {
        let clauses: Vec<String> = visible
            .iter()
            .filter(|(s, ..)| *s == side)
            .map(|(_, clause, word, value)| {
                let word = if template.variant == PromptVariant::Prompt2 {
                    "Field"
                } else {
                    word.as_str()
                };
                clause
                    .template
                    .replace("{field}", word)
                    .replace("{value}", value)
            })
            .collect();
        if clauses.is_empty() {
            continue;
        }
        let sp = table.side(side);
        sentences.push(format!(
            "{}{}.",
            sp.intro,
            join_clauses(&clauses, &sp.sep, &sp.last_sep)
        ));
    }
    Ok(sentences.join(" "))
}

/// Header of the prompt dump consumed by the offline embedding exporter.
pub const PROMPT_DUMP_HEADER: [&str; 2] = ["row_id", "prompt"];

/// Write `(row_id, prompt)` pairs as an unquoted two-column TSV.
pub fn write_prompt_dump<W: Write>(w: W, prompts: &[(u64, String)]) -> Result<()> {
    let mut out = WriterBuilder::new()
        .delimiter(b'\t')
        .quote_style(csv::QuoteStyle::Never)
        .from_writer(w);
    out.write_record(PROMPT_DUMP_HEADER)?;
    for (row_id, prompt) in prompts {
        if prompt.contains(['\t', '\n', '\r']) {
            return Err(Error::invalid(format!(
                "prompt for row {row_id} contains a tab or newline"
            )));
        }
        out.write_record([row_id.to_string().as_str(), prompt])?;
    }
    out.flush()?;
    Ok(())
}

/// Read a prompt dump written by [`write_prompt_dump`].
pub fn read_prompt_dump<R: Read>(r: R) -> Result<Vec<(u64, String)>> {
    let mut reader = ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .from_reader(r);
    if reader.headers()?.iter().ne(PROMPT_DUMP_HEADER) {
        return Err(Error::invalid(
            "prompt dump header must be `row_id<TAB>prompt`",
        ));
    }
    let mut prompts = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let row_id = rec[0]
            .parse()
            .map_err(|_| Error::invalid(format!("bad row_id `{}` in prompt dump", &rec[0])))?;
        prompts.push((row_id, rec[1].to_string()));
    }
    Ok(prompts)
}
