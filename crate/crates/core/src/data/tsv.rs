//! TSV record files and the on-disk dataset layout.
//!
//! Record files carry `domain_id`, `row_id`, `label`, then one column per
//! schema field. A prepared dataset directory looks like:
//!
//! ```text
//! schema.json
//! domain_<k>/train.tsv, valid.tsv, test.tsv
//! domain_<k>/oracle.tsv          (optional: row_id, p_star)
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use csv::{ReaderBuilder, WriterBuilder};

use crate::data::{DomainDataset, FieldKind, InstanceRecord, Schema, Split};
use crate::error::{Error, Result};

pub const SCHEMA_FILE: &str = "schema.json";

/// Parsed records plus the rows skipped in lenient mode.
#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub records: Vec<InstanceRecord>,
    /// `(line, message)` for every malformed row that was skipped.
    pub skipped: Vec<(usize, String)>,
}

fn check_cell(v: &str) -> Result<()> {
    if v.contains(['\t', '\n', '\r']) {
        return Err(Error::invalid(format!(
            "value {v:?} contains a tab or newline"
        )));
    }
    Ok(())
}

pub fn write_records<W: Write>(w: W, schema: &Schema, records: &[InstanceRecord]) -> Result<()> {
    let mut out = WriterBuilder::new()
        .delimiter(b'\t')
        .quote_style(csv::QuoteStyle::Never)
        .from_writer(w);
    let mut header: Vec<&str> = vec!["domain_id", "row_id", "label"];
    header.extend(schema.fields().iter().map(|f| f.name.as_str()));
    out.write_record(&header)?;
    for r in records {
        if r.values.len() != schema.len() {
            return Err(Error::invalid(format!(
                "row {} has {} values, schema has {} fields",
                r.row_id,
                r.values.len(),
                schema.len()
            )));
        }
        let mut row = vec![
            r.domain_id.to_string(),
            r.row_id.to_string(),
            r.label.to_string(),
        ];
        for v in &r.values {
            check_cell(v)?;
            row.push(v.clone());
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(
    r: R,
    origin: &str,
    schema: &Schema,
    lenient: bool,
) -> Result<LoadReport> {
    let mut reader = ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .flexible(true)
        .has_headers(true)
        .from_reader(r);
    let header = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let domain_col = col("domain_id")?;
    let row_col = col("row_id")?;
    let label_col = col("label")?;
    let field_cols = schema
        .fields()
        .iter()
        .map(|f| col(&f.name))
        .collect::<Result<Vec<_>>>()?;

    let mut report = LoadReport::default();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let parsed = (|| -> std::result::Result<InstanceRecord, String> {
            if rec.len() != header.len() {
                return Err(format!(
                    "expected {} columns, found {}",
                    header.len(),
                    rec.len()
                ));
            }
            let domain_id = rec[domain_col]
                .parse::<usize>()
                .map_err(|_| format!("bad domain_id `{}`", &rec[domain_col]))?;
            let row_id = rec[row_col]
                .parse::<u64>()
                .map_err(|_| format!("bad row_id `{}`", &rec[row_col]))?;
            let label = match &rec[label_col] {
                "0" => 0,
                "1" => 1,
                other => return Err(format!("bad label `{other}` (expected 0 or 1)")),
            };
            let mut values = Vec::with_capacity(field_cols.len());
            for (f, &c) in schema.fields().iter().zip(&field_cols) {
                let v = &rec[c];
                if let (FieldKind::Categorical, Some(vocab), false) =
                    (f.kind, &f.vocabulary, v.is_empty())
                {
                    if !vocab.iter().any(|w| w == v) {
                        return Err(format!("value `{v}` not in vocabulary of `{}`", f.name));
                    }
                }
                values.push(v.to_string());
            }
            Ok(InstanceRecord {
                domain_id,
                row_id,
                label,
                values,
            })
        })();
        match parsed {
            Ok(r) => report.records.push(r),
            Err(message) if lenient => report.skipped.push((line, message)),
            Err(message) => {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line,
                    message,
                })
            }
        }
    }
    Ok(report)
}

pub fn load_tsv(path: &Path, schema: &Schema, lenient: bool) -> Result<LoadReport> {
    if !path.exists() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    read_records(
        BufReader::new(File::open(path)?),
        &path.display().to_string(),
        schema,
        lenient,
    )
}

pub fn write_tsv(path: &Path, schema: &Schema, records: &[InstanceRecord]) -> Result<()> {
    write_records(BufWriter::new(File::create(path)?), schema, records)
}

pub fn domain_dir(root: &Path, domain_id: usize) -> PathBuf {
    root.join(format!("domain_{domain_id}"))
}

/// Write `schema.json` and one sub-directory per domain.
pub fn save_datasets(root: &Path, schema: &Schema, datasets: &[DomainDataset]) -> Result<()> {
    fs::create_dir_all(root)?;
    schema.save(&root.join(SCHEMA_FILE))?;
    for ds in datasets {
        let dir = domain_dir(root, ds.domain_id);
        fs::create_dir_all(&dir)?;
        for split in Split::ALL {
            write_tsv(
                &dir.join(format!("{}.tsv", split.name())),
                schema,
                ds.split(split),
            )?;
        }
        if !ds.oracle.is_empty() {
            let mut w = BufWriter::new(File::create(dir.join("oracle.tsv"))?);
            writeln!(w, "row_id\tp_star")?;
            for (row, p) in &ds.oracle {
                writeln!(w, "{row}\t{p}")?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn read_oracle(path: &Path) -> Result<BTreeMap<u64, f64>> {
    let mut out = BTreeMap::new();
    let text = fs::read_to_string(path)?;
    for (i, line) in text.lines().enumerate().skip(1) {
        let bad = || Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: format!("bad oracle row `{line}`"),
        };
        let (row, p) = line.split_once('\t').ok_or_else(bad)?;
        out.insert(
            row.parse().map_err(|_| bad())?,
            p.parse().map_err(|_| bad())?,
        );
    }
    Ok(out)
}

/// Load every `domain_<k>` directory under `root`, sorted by domain id.
pub fn load_datasets(root: &Path) -> Result<(Schema, Vec<DomainDataset>)> {
    let schema = Schema::load(&root.join(SCHEMA_FILE))?;
    let mut ids: Vec<usize> = fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            e.file_name()
                .to_str()
                .and_then(|n| n.strip_prefix("domain_"))
                .and_then(|k| k.parse().ok())
        })
        .collect();
    ids.sort_unstable();
    if ids.is_empty() {
        return Err(Error::Schema(format!(
            "no domain_<k> directories under {}",
            root.display()
        )));
    }
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let dir = domain_dir(root, id);
        let load = |s: Split| -> Result<Vec<InstanceRecord>> {
            let report = load_tsv(&dir.join(format!("{}.tsv", s.name())), &schema, false)?;
            if let Some(r) = report.records.iter().find(|r| r.domain_id != id) {
                return Err(Error::Schema(format!(
                    "row {} in {} has domain_id {}",
                    r.row_id,
                    dir.display(),
                    r.domain_id
                )));
            }
            Ok(report.records)
        };
        let oracle_path = dir.join("oracle.tsv");
        out.push(DomainDataset {
            domain_id: id,
            schema: schema.clone(),
            train: load(Split::Train)?,
            valid: load(Split::Valid)?,
            test: load(Split::Test)?,
            oracle: if oracle_path.exists() {
                read_oracle(&oracle_path)?
            } else {
                BTreeMap::new()
            },
        });
    }
    Ok((schema, out))
}
