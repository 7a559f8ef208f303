use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Schema;
use crate::error::{Error, Result};

/// One labelled event. `values` follows the schema's field order; an empty
/// string marks a missing value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceRecord {
    pub domain_id: usize,
    pub row_id: u64,
    pub label: u8,
    pub values: Vec<String>,
}

impl InstanceRecord {
    pub fn value<'a>(&'a self, schema: &Schema, field: &str) -> Option<&'a str> {
        schema.index_of(field).map(|i| self.values[i].as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split `{other}`"))),
        }
    }
}

/// Train/valid/test partitions of one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    pub domain_id: usize,
    pub schema: Schema,
    pub train: Vec<InstanceRecord>,
    pub valid: Vec<InstanceRecord>,
    pub test: Vec<InstanceRecord>,
    /// True click probability per row, when known (synthetic data).
    pub oracle: BTreeMap<u64, f64>,
}

impl DomainDataset {
    pub fn split(&self, split: Split) -> &[InstanceRecord] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.valid.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ratings 4–5 are clicks, 1–2 are non-clicks, 3 is dropped (`None`).
pub fn map_rating_to_label(rating: i64) -> Result<Option<u8>> {
    match rating {
        4 | 5 => Ok(Some(1)),
        1 | 2 => Ok(Some(0)),
        3 => Ok(None),
        r => Err(Error::invalid(format!("rating {r} outside 1..=5"))),
    }
}

pub type Partitions = (
    Vec<InstanceRecord>,
    Vec<InstanceRecord>,
    Vec<InstanceRecord>,
);

/// Seeded shuffle, then 80/10/10 by count; the remainder goes to train.
pub fn split(mut records: Vec<InstanceRecord>, seed: u64) -> Result<Partitions> {
    let n = records.len();
    if n < 10 {
        return Err(Error::invalid(format!(
            "split needs at least 10 records, got {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    records.shuffle(&mut rng);
    let n_eval = n / 10;
    let test = records.split_off(n - n_eval);
    let valid = records.split_off(n - 2 * n_eval);
    Ok((records, valid, test))
}
