//! Seeded multi-domain CTR generator with known click probabilities.
//!
//! Every domain shares one set of topics: each topic owns a word list, and
//! each occupation favours one topic and dislikes the opposite one. Items
//! are topic mixtures whose descriptions are sampled from the topic word
//! lists, so the text of an instance carries the user–item affinity. Item
//! identifiers, brand words and category names are private to a domain.
//!
//! The click logit is
//!
//! ```text
//! affinity_weight · ⟨pref_u, mix_i⟩            user × item
//! + context_weight · time_c · style_i          context × item
//! + age_weight · age_u · style_i               user × item
//! + category_bias + item_quality + gender_bias + domain_bias
//! ```
//!
//! where `pref_u` is the occupation profile plus `noise`-scaled Gaussian
//! idiosyncrasy and `style_i` is ±1 by the parity of the dominant topic.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{split, DomainDataset, FieldKind, FieldSchema, InstanceRecord, Schema, Side};
use crate::error::{Error, Result};
use crate::numeric::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Labeling {
    /// `label ~ Bernoulli(p*)`
    Bernoulli,
    /// `label = [p* > 0.5]`
    Threshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_domains: usize,
    pub n_users: usize,
    pub n_items: usize,
    pub n_interactions: usize,
    pub n_topics: usize,
    pub words_per_topic: usize,
    pub n_categories: usize,
    pub description_len: usize,
    /// Std of the per-user idiosyncratic preference (visible only via ids).
    pub noise: f64,
    pub affinity_weight: f64,
    pub context_weight: f64,
    pub age_weight: f64,
    pub category_std: f64,
    pub quality_std: f64,
    pub labeling: Labeling,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_domains: 3,
            n_users: 2000,
            n_items: 200,
            n_interactions: 50_000,
            n_topics: 8,
            words_per_topic: 12,
            n_categories: 10,
            description_len: 8,
            noise: 0.5,
            affinity_weight: 2.5,
            context_weight: 1.0,
            age_weight: 0.8,
            category_std: 0.5,
            quality_std: 0.3,
            labeling: Labeling::Bernoulli,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_topics < 2 {
            return Err(Error::invalid(format!(
                "n_topics must be >= 2, got {}",
                self.n_topics
            )));
        }
        if self.n_items < self.n_topics {
            return Err(Error::invalid(format!(
                "n_items ({}) must be >= n_topics ({})",
                self.n_items, self.n_topics
            )));
        }
        if self.words_per_topic == 0 || self.n_categories == 0 || self.description_len == 0 {
            return Err(Error::invalid(
                "word, category and description counts must be positive",
            ));
        }
        if self.n_domains == 0 || self.n_users == 0 {
            return Err(Error::invalid("need at least one domain and one user"));
        }
        if self.n_interactions < 10 {
            return Err(Error::invalid("need at least 10 interactions per domain"));
        }
        if ![self.noise, self.category_std, self.quality_std]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0)
        {
            return Err(Error::invalid(
                "noise and std parameters must be finite and >= 0",
            ));
        }
        Ok(())
    }
}

pub const GENDERS: [&str; 2] = ["male", "female"];
pub const AGES: [&str; 3] = ["young", "adult", "senior"];
pub const TIMES: [&str; 4] = ["morning", "afternoon", "evening", "night"];
const AGE_EFFECT: [f64; 3] = [1.0, 0.0, -1.0];
const TIME_EFFECT: [f64; 4] = [1.0, 0.5, -0.5, -1.0];
const OCCUPATIONS: [&str; 16] = [
    "student",
    "engineer",
    "artist",
    "doctor",
    "teacher",
    "farmer",
    "lawyer",
    "writer",
    "scientist",
    "musician",
    "chef",
    "nurse",
    "pilot",
    "designer",
    "clerk",
    "athlete",
];
const ITEM_NOUNS: [&str; 6] = ["book", "movie", "game", "song", "toy", "gadget"];
const ADJECTIVES: [&str; 8] = [
    "new", "classic", "deluxe", "simple", "modern", "vintage", "compact", "premium",
];

/// Column order of the generated schema.
pub const FIELDS: [&str; 9] = [
    "gender",
    "age",
    "occupation",
    "user_id",
    "title",
    "category",
    "description",
    "item_id",
    "time",
];

/// The field whose removal takes away all topic information about an item.
pub const MOST_INFORMATIVE_FIELD: &str = "description";

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub schema: Schema,
    pub datasets: Vec<DomainDataset>,
    /// Noun used for the item side of each domain's prompt ("There is a book, ...").
    pub item_nouns: Vec<String>,
    pub topic_words: Vec<Vec<String>>,
}

struct WordMint {
    used: BTreeSet<String>,
}

impl WordMint {
    fn new() -> Self {
        let used = OCCUPATIONS
            .iter()
            .chain(&ADJECTIVES)
            .chain(&ITEM_NOUNS)
            .chain(&GENDERS)
            .chain(&AGES)
            .chain(&TIMES)
            .map(|s| s.to_string())
            .collect();
        Self { used }
    }

    /// Fresh consonant-vowel pseudo-word.
    fn mint<R: Rng>(&mut self, rng: &mut R) -> String {
        const C: &[u8] = b"bdfgklmnprstvz";
        const V: &[u8] = b"aeiou";
        loop {
            let syllables = rng.random_range(2..=3);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push(C[rng.random_range(0..C.len())] as char);
                w.push(V[rng.random_range(0..V.len())] as char);
            }
            if rng.random_bool(0.5) {
                w.push(C[rng.random_range(0..C.len())] as char);
            }
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }
}

pub fn schema() -> Schema {
    let cat = |n: &str, s: Side| FieldSchema::new(n, s, FieldKind::Categorical);
    Schema::new(vec![
        cat("gender", Side::User).with_vocabulary(GENDERS.iter().map(|s| s.to_string()).collect()),
        cat("age", Side::User).with_vocabulary(AGES.iter().map(|s| s.to_string()).collect()),
        cat("occupation", Side::User),
        FieldSchema::new("user_id", Side::User, FieldKind::AnonymousId),
        FieldSchema::new("title", Side::Item, FieldKind::Text),
        cat("category", Side::Item),
        FieldSchema::new("description", Side::Item, FieldKind::Text),
        FieldSchema::new("item_id", Side::Item, FieldKind::AnonymousId),
        cat("time", Side::Context).with_vocabulary(TIMES.iter().map(|s| s.to_string()).collect()),
    ])
    .expect("static schema is valid")
}

struct Item {
    mix: Vec<f64>,
    style: f64,
    quality: f64,
    category: usize,
    title: String,
    description: String,
}

struct User {
    occupation: usize,
    gender: usize,
    age: usize,
    pref: Vec<f64>,
}

pub fn generate(config: &SynthConfig, seed: u64) -> Result<SynthOutput> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = config.n_topics;
    let mut mint = WordMint::new();

    let topic_words: Vec<Vec<String>> = (0..t)
        .map(|_| {
            (0..config.words_per_topic)
                .map(|_| mint.mint(&mut rng))
                .collect()
        })
        .collect();
    let occupations: Vec<String> = (0..t)
        .map(|k| match OCCUPATIONS.get(k) {
            Some(o) => o.to_string(),
            None => mint.mint(&mut rng),
        })
        .collect();
    let item_nouns: Vec<String> = (0..config.n_domains)
        .map(|d| ITEM_NOUNS[d % ITEM_NOUNS.len()].to_string())
        .collect();

    let schema = schema();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut datasets = Vec::with_capacity(config.n_domains);

    for d in 0..config.n_domains {
        let categories: Vec<String> = (0..config.n_categories)
            .map(|_| mint.mint(&mut rng))
            .collect();
        let cat_bias: Vec<f64> = (0..config.n_categories)
            .map(|_| config.category_std * normal.sample(&mut rng))
            .collect();
        let domain_bias = 0.3 * normal.sample(&mut rng);

        let items: Vec<Item> = (0..config.n_items)
            .map(|_| {
                let t1 = rng.random_range(0..t);
                let t2 = (t1 + rng.random_range(1..t)) % t;
                let mut mix = vec![0.0; t];
                mix[t1] = 0.7;
                mix[t2] = 0.3;
                let words: Vec<&str> = (0..config.description_len)
                    .map(|_| {
                        let topic = if rng.random_bool(0.7) { t1 } else { t2 };
                        topic_words[topic].choose(&mut rng).unwrap().as_str()
                    })
                    .collect();
                let title = format!(
                    "{} {}",
                    ADJECTIVES.choose(&mut rng).unwrap(),
                    mint.mint(&mut rng)
                );
                Item {
                    style: if t1 % 2 == 0 { 1.0 } else { -1.0 },
                    quality: config.quality_std * normal.sample(&mut rng),
                    category: rng.random_range(0..config.n_categories),
                    title,
                    description: words.join(" "),
                    mix,
                }
            })
            .collect();

        let users: Vec<User> = (0..config.n_users)
            .map(|_| {
                let occupation = rng.random_range(0..t);
                let mut pref: Vec<f64> = (0..t)
                    .map(|_| config.noise * normal.sample(&mut rng))
                    .collect();
                pref[occupation] += 1.0;
                pref[(occupation + t / 2) % t] -= 1.0;
                User {
                    occupation,
                    gender: rng.random_range(0..GENDERS.len()),
                    age: rng.random_range(0..AGES.len()),
                    pref,
                }
            })
            .collect();

        let mut records = Vec::with_capacity(config.n_interactions);
        let mut oracle = BTreeMap::new();
        for k in 0..config.n_interactions {
            let ui = rng.random_range(0..config.n_users);
            let ii = rng.random_range(0..config.n_items);
            let c = rng.random_range(0..TIMES.len());
            let (u, it) = (&users[ui], &items[ii]);
            let affinity: f64 = u.pref.iter().zip(&it.mix).map(|(a, b)| a * b).sum();
            let logit = config.affinity_weight * affinity
                + config.context_weight * TIME_EFFECT[c] * it.style
                + config.age_weight * AGE_EFFECT[u.age] * it.style
                + cat_bias[it.category]
                + it.quality
                + if u.gender == 0 { 0.1 } else { -0.1 }
                + domain_bias;
            let p = sigmoid(logit);
            let label = match config.labeling {
                Labeling::Bernoulli => rng.random_bool(p) as u8,
                Labeling::Threshold => (p > 0.5) as u8,
            };
            let row_id = (d * config.n_interactions + k) as u64;
            oracle.insert(row_id, p);
            records.push(InstanceRecord {
                domain_id: d,
                row_id,
                label,
                values: vec![
                    GENDERS[u.gender].to_string(),
                    AGES[u.age].to_string(),
                    occupations[u.occupation].clone(),
                    format!("d{d}u{ui}"),
                    it.title.clone(),
                    categories[it.category].clone(),
                    it.description.clone(),
                    format!("d{d}i{ii}"),
                    TIMES[c].to_string(),
                ],
            });
        }
        let (train, valid, test) = split(records, rng.random())?;
        datasets.push(DomainDataset {
            domain_id: d,
            schema: schema.clone(),
            train,
            valid,
            test,
            oracle,
        });
    }

    Ok(SynthOutput {
        schema,
        datasets,
        item_nouns,
        topic_words,
    })
}
