use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DomainDataset, FieldKind, InstanceRecord, Schema};
use crate::encoder::AnonymousVocab;
use crate::error::{Error, Result};
use crate::eval::{EvalMode, EvalReport};
use crate::interaction::EulerExpert;
use crate::numeric::{checkpoint, sigmoid, ParamId, ParamStore, Tape, Tensor, Var};
use crate::training::{ctr_loss, fit, History, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherConfig {
    pub dim: usize,
    pub n_orders: usize,
    /// Std of the initial field embeddings (used as phases).
    pub embed_std: f64,
    /// Non-text fields the teacher ignores. Names absent from the schema
    /// are skipped.
    pub exclude_fields: Vec<String>,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            n_orders: 7,
            embed_std: 0.5,
            exclude_fields: vec!["user_id".to_string()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherMeta {
    pub domain_id: usize,
    pub config: TeacherConfig,
    /// One vocabulary per raw (categorical or identifier) field.
    pub fields: Vec<AnonymousVocab>,
}

/// Per-domain guided network: field embeddings fed to one Euler expert.
#[derive(Debug, Clone)]
pub struct TeacherModel {
    pub meta: TeacherMeta,
    pub store: ParamStore,
    pub tables: Vec<ParamId>,
    pub expert: EulerExpert,
    lookups: Vec<HashMap<String, usize>>,
}

impl TeacherModel {
    pub fn new<R: Rng + ?Sized>(
        domain_id: usize,
        schema: &Schema,
        train: &[InstanceRecord],
        config: TeacherConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::invalid(format!(
                "domain {domain_id} has no training rows"
            )));
        }
        let fields = schema
            .fields()
            .iter()
            .enumerate()
            .filter(|(_, f)| f.kind != FieldKind::Text && !config.exclude_fields.contains(&f.name))
            .map(|(i, f)| {
                let values: BTreeSet<&str> = train.iter().map(|r| r.values[i].as_str()).collect();
                AnonymousVocab {
                    name: f.name.clone(),
                    schema_index: i,
                    values: values.into_iter().map(str::to_string).collect(),
                }
            })
            .collect();
        Self::build(
            TeacherMeta {
                domain_id,
                config,
                fields,
            },
            rng,
        )
    }

    fn build<R: Rng + ?Sized>(meta: TeacherMeta, rng: &mut R) -> Result<Self> {
        if meta.fields.is_empty() {
            return Err(Error::invalid("teacher needs at least one non-text field"));
        }
        let c = &meta.config;
        let mut store = ParamStore::new();
        let tables = meta
            .fields
            .iter()
            .map(|f| {
                store.add(
                    format!("teacher.{}.embedding", f.name),
                    Tensor::randn(&[f.values.len().max(1), c.dim], c.embed_std, rng),
                )
            })
            .collect();
        let expert = EulerExpert::new(
            &mut store,
            "teacher.euler",
            meta.fields.len(),
            c.n_orders,
            c.dim,
            rng,
        );
        let lookups = meta
            .fields
            .iter()
            .map(|f| {
                f.values
                    .iter()
                    .enumerate()
                    .map(|(i, v)| (v.clone(), i))
                    .collect()
            })
            .collect();
        Ok(Self {
            meta,
            store,
            tables,
            expert,
            lookups,
        })
    }

    pub fn domain_id(&self) -> usize {
        self.meta.domain_id
    }

    /// `ids[k][n]` for every field `k` and row `n`.
    pub fn ids(&self, records: &[&InstanceRecord]) -> Vec<Vec<Option<usize>>> {
        self.meta
            .fields
            .iter()
            .zip(&self.lookups)
            .map(|(f, lk)| {
                records
                    .iter()
                    .map(|r| lk.get(&r.values[f.schema_index]).copied())
                    .collect()
            })
            .collect()
    }

    pub fn forward_with(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        ids: &[Vec<Option<usize>>],
        idx: &[usize],
    ) -> Result<Var> {
        let mut parts = Vec::with_capacity(self.tables.len());
        for (table, col) in self.tables.iter().zip(ids) {
            let t = tape.param(store, *table);
            let rows: Vec<Option<usize>> = idx.iter().map(|&i| col[i]).collect();
            parts.push(tape.gather_rows(t, &rows)?);
        }
        let theta = tape.concat(&parts)?;
        self.expert.forward(tape, store, theta)
    }

    /// Guidance logits `ζᴳ`.
    pub fn logits(&self, records: &[&InstanceRecord]) -> Result<Vec<f64>> {
        if let Some(r) = records.iter().find(|r| r.domain_id != self.domain_id()) {
            return Err(Error::invalid(format!(
                "teacher for domain {} asked to score domain {}",
                self.domain_id(),
                r.domain_id
            )));
        }
        let ids = self.ids(records);
        let all: Vec<usize> = (0..records.len()).collect();
        let mut out = Vec::with_capacity(records.len());
        for chunk in all.chunks(1024) {
            let mut tape = Tape::new();
            let y = self.forward_with(&self.store, &mut tape, &ids, chunk)?;
            out.extend_from_slice(tape.value(y).data());
        }
        Ok(out)
    }

    /// BCE-only training on the teacher's own domain.
    pub fn train(&mut self, data: &DomainDataset, config: &TrainConfig) -> Result<History> {
        let train: Vec<&InstanceRecord> = data.train.iter().collect();
        let valid: Vec<&InstanceRecord> = data.valid.iter().collect();
        let train_ids = self.ids(&train);
        let valid_ids = self.ids(&valid);
        let labels: Vec<u8> = train.iter().map(|r| r.label).collect();
        let valid_labels: Vec<u8> = valid.iter().map(|r| r.label).collect();
        let valid_domains = vec![self.domain_id(); valid.len()];
        let mut store = std::mem::take(&mut self.store);
        let params: Vec<ParamId> = store.ids().collect();
        let me = &*self;
        let result = fit(
            &mut store,
            &params,
            train.len(),
            config,
            |tape, st, idx| {
                let y = me.forward_with(st, tape, &train_ids, idx)?;
                let p = tape.sigmoid(y);
                let l: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
                ctr_loss(tape, &l, p)
            },
            |st| {
                let all: Vec<usize> = (0..valid.len()).collect();
                let mut probs = Vec::with_capacity(valid.len());
                for chunk in all.chunks(1024) {
                    let mut tape = Tape::new();
                    let y = me.forward_with(st, &mut tape, &valid_ids, chunk)?;
                    probs.extend(tape.value(y).data().iter().map(|&z| sigmoid(z)));
                }
                EvalReport::from_predictions(
                    EvalMode::InDomain,
                    &valid_domains,
                    &valid_labels,
                    &probs,
                )
            },
        );
        self.store = store;
        result
    }

    pub fn path_in(dir: &Path, domain_id: usize) -> PathBuf {
        dir.join(format!("teacher_{domain_id}.ufnp"))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.store)?;
        fs::write(
            path.with_extension("json"),
            serde_json::to_string_pretty(&self.meta)? + "\n",
        )?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let meta_path = path.with_extension("json");
        if !meta_path.exists() {
            return Err(Error::MissingPath(meta_path));
        }
        let meta: TeacherMeta = serde_json::from_str(&fs::read_to_string(&meta_path)?)?;
        let params = checkpoint::load(path)?;
        let mut t = Self::build(meta, &mut ChaCha8Rng::seed_from_u64(0))?;
        t.store.load_from(&params)?;
        Ok(t)
    }
}

/// One teacher per domain, each seeded from `config.seed` and its domain id.
pub fn pretrain_teachers(
    schema: &Schema,
    datasets: &[DomainDataset],
    teacher: &TeacherConfig,
    config: &TrainConfig,
) -> Result<Vec<(TeacherModel, History)>> {
    datasets
        .iter()
        .map(|ds| {
            let seed = config.seed
                ^ (0x7ea_c4e5 + ds.domain_id as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut t =
                TeacherModel::new(ds.domain_id, schema, &ds.train, teacher.clone(), &mut rng)?;
            let cfg = TrainConfig {
                seed,
                ..config.clone()
            };
            let h = t.train(ds, &cfg)?;
            Ok((t, h))
        })
        .collect()
}

/// Guidance logits for mixed-domain `records`, each from its own domain's
/// teacher.
pub fn teacher_logits(teachers: &[TeacherModel], records: &[&InstanceRecord]) -> Result<Vec<f64>> {
    let by_domain: HashMap<usize, &TeacherModel> =
        teachers.iter().map(|t| (t.domain_id(), t)).collect();
    let mut out = vec![0.0; records.len()];
    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        groups.entry(r.domain_id).or_default().push(i);
    }
    let mut domains: Vec<usize> = groups.keys().copied().collect();
    domains.sort_unstable();
    for d in domains {
        let t = by_domain.get(&d).ok_or(Error::MissingTeacher(d))?;
        let idx = &groups[&d];
        let rows: Vec<&InstanceRecord> = idx.iter().map(|&i| records[i]).collect();
        for (&i, v) in idx.iter().zip(t.logits(&rows)?) {
            out[i] = v;
        }
    }
    Ok(out)
}
