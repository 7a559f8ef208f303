//! Dataset schema, TSV ingestion, label mapping, splitting and the synthetic
//! multi-domain generator.

mod dataset;
mod schema;
pub mod synth;
pub mod tsv;

pub use dataset::{map_rating_to_label, split, DomainDataset, InstanceRecord, Partitions, Split};
pub use schema::{FieldKind, FieldSchema, Schema, Side, RESERVED_COLUMNS};
pub use synth::{generate, Labeling, SynthConfig, SynthOutput};
pub use tsv::{
    load_datasets, load_tsv, read_records, save_datasets, write_records, write_tsv, LoadReport,
};
