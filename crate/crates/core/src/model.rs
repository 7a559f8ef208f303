//! The full student network and the inputs it consumes.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::data::{FieldKind, InstanceRecord, Schema};
use crate::encoder::{
    AnonymousTable, AnonymousVocab, EmbeddingCache, HashEncoder, SemanticFusion, TextBackend,
};
use crate::error::{Error, Result};
use crate::interaction::{
    write_universal_csv, AdaptorIndex, AdaptorInput, FeatureAdaptor, InteractionMoE,
    UniversalDecoder,
};
use crate::numeric::{checkpoint, LayerNorm, ParamStore, Tape, Tensor, Var};
use crate::prompting::{render, PhraseBook, PromptTemplate};

/// `UFIN_t` scores from text alone; `UFIN_t+f` adds the feature adaptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Mode {
    #[serde(rename = "ufin_t")]
    Text,
    #[default]
    #[serde(rename = "ufin_t+f")]
    TextFeature,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Text => "ufin_t",
            Mode::TextFeature => "ufin_t+f",
        }
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ufin_t" | "t" => Ok(Mode::Text),
            "ufin_t+f" | "ufin_tf" | "t+f" | "tf" => Ok(Mode::TextFeature),
            other => Err(Error::invalid(format!(
                "unknown mode `{other}` (expected ufin_t or ufin_t+f)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_v: usize,
    pub d_a: usize,
    /// Universal feature fields `n_u`.
    pub n_fields: usize,
    /// Order vectors per Euler expert `n_o`.
    pub n_orders: usize,
    /// Universal feature width `d`.
    pub dim: usize,
    /// Experts in both mixtures; defaults to the number of domains.
    pub n_experts: Option<usize>,
    /// Defaults to `min(5, L)`.
    pub top_k: Option<usize>,
    /// Require `K > ⌈L/2⌉` whenever `L ≥ 2`.
    pub enforce_overlap: bool,
    /// Fuse identifier embeddings into the semantic vector.
    pub anonymous: bool,
    pub mode: Mode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_v: 128,
            d_a: 16,
            n_fields: 7,
            n_orders: 7,
            dim: 16,
            n_experts: None,
            top_k: None,
            enforce_overlap: true,
            anonymous: true,
            mode: Mode::TextFeature,
        }
    }
}

impl ModelConfig {
    /// Fill in `n_experts` and `top_k` for `n_domains` and validate.
    pub fn resolve(&self, n_domains: usize) -> Result<Self> {
        let l = self.n_experts.unwrap_or(n_domains).max(1);
        let k = self.top_k.unwrap_or(5.min(l));
        if k == 0 || k > l {
            return Err(Error::invalid(format!(
                "top_k must lie in [1, {l}], got {k}"
            )));
        }
        if self.enforce_overlap && l >= 2 && k <= l.div_ceil(2) {
            return Err(Error::invalid(format!(
                "top_k={k} with {l} experts lets two domains select disjoint experts; \
                 need top_k > {} (or set enforce_overlap = false)",
                l.div_ceil(2)
            )));
        }
        if self.d_v < 2 || self.dim < 2 || self.n_fields == 0 || self.n_orders == 0 || self.d_a == 0
        {
            return Err(Error::invalid(
                "model dimensions must be positive (d_v, d >= 2)",
            ));
        }
        Ok(Self {
            n_experts: Some(l),
            top_k: Some(k),
            ..self.clone()
        })
    }

    pub fn experts(&self) -> usize {
        self.n_experts.expect("resolved config")
    }

    pub fn k(&self) -> usize {
        self.top_k.expect("resolved config")
    }
}

/// Where pooled text vectors come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case", deny_unknown_fields)]
pub enum EncoderSpec {
    Hash { seed: u64 },
    Cache { path: PathBuf },
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec::Hash { seed: 0 }
    }
}

impl EncoderSpec {
    pub fn open(&self, d_v: usize) -> Result<TextBackend> {
        let backend = match self {
            EncoderSpec::Hash { seed } => TextBackend::Hash(HashEncoder::new(d_v, *seed)?),
            EncoderSpec::Cache { path } => TextBackend::Cache(EmbeddingCache::load(path)?),
        };
        if backend.dim() != d_v {
            return Err(Error::invalid(format!(
                "encoder produces d_v={}, model expects {d_v}",
                backend.dim()
            )));
        }
        Ok(backend)
    }
}

/// Records to prompts to pooled vectors.
pub struct Featurizer<'a> {
    pub schema: &'a Schema,
    pub book: &'a PhraseBook,
    pub template: &'a PromptTemplate,
    pub backend: &'a TextBackend,
}

impl Featurizer<'_> {
    pub fn prompt(&self, record: &InstanceRecord) -> Result<String> {
        render(
            record,
            self.schema,
            self.book.table(record.domain_id),
            self.template,
        )
    }

    /// Row-major `[N, d_v]` pooled vectors.
    pub fn pooled(&self, records: &[&InstanceRecord]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(records.len() * self.backend.dim());
        for r in records {
            let text = self.prompt(r)?;
            out.extend(self.backend.pooled(r.row_id, &text)?);
        }
        Ok(out)
    }
}

/// Everything a forward pass needs for a set of rows, precomputed once.
#[derive(Debug, Clone)]
pub struct FeatureSet {
    pub row_ids: Vec<u64>,
    pub domains: Vec<usize>,
    pub labels: Vec<u8>,
    pub d_v: usize,
    pub pooled: Vec<f64>,
    /// `anon[k][n]`: vocabulary index of anonymous field `k` for row `n`.
    pub anon: Vec<Vec<Option<usize>>>,
    pub adaptor: Option<Vec<AdaptorInput>>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.row_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_ids.is_empty()
    }

    fn pooled_rows(&self, idx: &[usize]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(idx.len() * self.d_v);
        for &i in idx {
            data.extend_from_slice(&self.pooled[i * self.d_v..(i + 1) * self.d_v]);
        }
        Tensor::new(vec![idx.len(), self.d_v], data)
    }
}

/// Outputs of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    /// Interaction logit `ζ`, `[B, 1]`.
    pub zeta: Var,
    pub zeta_f: Option<Var>,
    /// `ζ + ζ_f` (or `ζ`).
    pub logit: Var,
    /// Universal features `[B, n_u·d]`.
    pub universal: Var,
    pub gate: Var,
}

/// Scores for a [`FeatureSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Scores {
    pub zeta: Vec<f64>,
    pub logit: Vec<f64>,
}

/// Non-parameter state saved next to the checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMeta {
    pub config: ModelConfig,
    /// Domains seen in training.
    #[serde(default)]
    pub domains: Vec<usize>,
    pub schema: Schema,
    pub anonymous: Vec<AnonymousVocab>,
    pub adaptor: Option<AdaptorIndex>,
    pub prompt: PromptTemplate,
    pub encoder: EncoderSpec,
}

pub const SCORE_BATCH: usize = 1024;

#[derive(Debug, Clone)]
pub struct UfinModel {
    pub meta: ModelMeta,
    pub store: ParamStore,
    pub input_norm: LayerNorm,
    pub fusion: SemanticFusion,
    pub anon: AnonymousTable,
    pub decoder: UniversalDecoder,
    pub moe: InteractionMoE,
    pub adaptor: Option<FeatureAdaptor>,
}

/// Sorted distinct values of every anonymous field in `records`.
pub fn anonymous_vocabs(schema: &Schema, records: &[&InstanceRecord]) -> Vec<AnonymousVocab> {
    schema
        .indices_of_kind(FieldKind::AnonymousId)
        .into_iter()
        .map(|f| {
            let values: BTreeSet<&str> = records
                .iter()
                .map(|r| r.values[f].as_str())
                .filter(|v| !v.is_empty())
                .collect();
            AnonymousVocab {
                name: schema.fields()[f].name.clone(),
                schema_index: f,
                values: values.into_iter().map(str::to_string).collect(),
            }
        })
        .collect()
}

impl UfinModel {
    /// Fresh model whose vocabularies come from `train`.
    pub fn new<R: Rng + ?Sized>(
        config: &ModelConfig,
        schema: &Schema,
        domains: &[usize],
        train: &[&InstanceRecord],
        prompt: PromptTemplate,
        encoder: EncoderSpec,
        rng: &mut R,
    ) -> Result<Self> {
        let config = config.resolve(domains.len())?;
        let anonymous = if config.anonymous {
            anonymous_vocabs(schema, train)
        } else {
            Vec::new()
        };
        let adaptor = (config.mode == Mode::TextFeature)
            .then(|| AdaptorIndex::build(schema, domains, train.iter().copied()));
        let meta = ModelMeta {
            config,
            domains: domains.to_vec(),
            schema: schema.clone(),
            anonymous,
            adaptor,
            prompt,
            encoder,
        };
        Self::build(meta, rng)
    }

    fn build<R: Rng + ?Sized>(meta: ModelMeta, rng: &mut R) -> Result<Self> {
        let c = &meta.config;
        let mut store = ParamStore::new();
        let input_norm = LayerNorm::new(&mut store, "input_norm", c.d_v);
        let fusion = SemanticFusion::new(&mut store, c.experts(), c.d_v, rng);
        let anon = AnonymousTable::new(&mut store, &meta.anonymous, c.d_a, c.d_v, rng);
        let decoder = UniversalDecoder::new(&mut store, c.n_fields, c.d_v, c.dim, rng)?;
        let moe = InteractionMoE::new(
            &mut store,
            c.experts(),
            c.k(),
            c.d_v,
            c.n_fields,
            c.n_orders,
            c.dim,
            rng,
        )?;
        let adaptor = meta
            .adaptor
            .clone()
            .map(|index| FeatureAdaptor::new(&mut store, "adaptor", index));
        Ok(Self {
            meta,
            store,
            input_norm,
            fusion,
            anon,
            decoder,
            moe,
            adaptor,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.meta.config
    }

    pub fn mode(&self) -> Mode {
        self.meta.config.mode
    }

    /// Anonymous ids and adaptor inputs for `records`, with precomputed
    /// pooled text vectors.
    pub fn inputs(&self, records: &[&InstanceRecord], pooled: Vec<f64>) -> Result<FeatureSet> {
        let d_v = self.config().d_v;
        if pooled.len() != records.len() * d_v {
            return Err(Error::shape(
                "inputs",
                &[records.len(), d_v],
                &[pooled.len()],
            ));
        }
        let anon = self
            .anon
            .fields
            .iter()
            .map(|f| {
                records
                    .iter()
                    .map(|r| f.id(&r.values[f.schema_index]))
                    .collect()
            })
            .collect();
        let adaptor = match &self.adaptor {
            Some(a) => Some(
                records
                    .iter()
                    .map(|r| a.encode(r))
                    .collect::<Result<Vec<_>>>()?,
            ),
            None => None,
        };
        Ok(FeatureSet {
            row_ids: records.iter().map(|r| r.row_id).collect(),
            domains: records.iter().map(|r| r.domain_id).collect(),
            labels: records.iter().map(|r| r.label).collect(),
            d_v,
            pooled,
            anon,
            adaptor,
        })
    }

    /// Featurize and build inputs in one go.
    pub fn featurize(
        &self,
        records: &[&InstanceRecord],
        book: &PhraseBook,
        backend: &TextBackend,
    ) -> Result<FeatureSet> {
        let f = Featurizer {
            schema: &self.meta.schema,
            book,
            template: &self.meta.prompt,
            backend,
        };
        self.inputs(records, f.pooled(records)?)
    }

    pub fn forward(&self, tape: &mut Tape, set: &FeatureSet, idx: &[usize]) -> Result<Forward> {
        self.forward_with(&self.store, tape, set, idx)
    }

    /// Forward pass reading parameters from `store`, which must have this
    /// model's layout (used while the model's own store is being trained).
    pub fn forward_with(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        set: &FeatureSet,
        idx: &[usize],
    ) -> Result<Forward> {
        let x = tape.constant(set.pooled_rows(idx)?);
        let s = self.input_norm.forward(tape, store, x)?;
        let (z, _) = self.fusion.forward(tape, store, s)?;
        let ids: Vec<Vec<Option<usize>>> = set
            .anon
            .iter()
            .map(|col| idx.iter().map(|&i| col[i]).collect())
            .collect();
        let z = self.anon.fuse(tape, store, z, &ids)?;
        let universal = self.decoder.forward(tape, store, z)?;
        let moe = self.moe.forward(tape, store, universal, z)?;
        let zeta_f = match (&self.adaptor, &set.adaptor) {
            (Some(a), Some(inputs)) => {
                let batch: Vec<AdaptorInput> = idx.iter().map(|&i| inputs[i].clone()).collect();
                Some(a.forward(tape, store, &batch)?)
            }
            (Some(_), None) => return Err(Error::invalid("feature set lacks adaptor inputs")),
            (None, _) => None,
        };
        let logit = match zeta_f {
            Some(f) => tape.add(moe.logit, f)?,
            None => moe.logit,
        };
        Ok(Forward {
            zeta: moe.logit,
            zeta_f,
            logit,
            universal,
            gate: moe.gate,
        })
    }

    /// Logits for every row, in batches.
    pub fn score(&self, set: &FeatureSet) -> Result<Scores> {
        self.score_with(&self.store, set)
    }

    pub fn score_with(&self, store: &ParamStore, set: &FeatureSet) -> Result<Scores> {
        let mut zeta = Vec::with_capacity(set.len());
        let mut logit = Vec::with_capacity(set.len());
        let all: Vec<usize> = (0..set.len()).collect();
        for chunk in all.chunks(SCORE_BATCH) {
            let mut tape = Tape::new();
            let out = self.forward_with(store, &mut tape, set, chunk)?;
            zeta.extend_from_slice(tape.value(out.zeta).data());
            logit.extend_from_slice(tape.value(out.logit).data());
        }
        Ok(Scores { zeta, logit })
    }

    /// Universal features `[N, n_u·d]`.
    pub fn universal(&self, set: &FeatureSet) -> Result<Tensor> {
        let width = self.config().n_fields * self.config().dim;
        let mut data = Vec::with_capacity(set.len() * width);
        let all: Vec<usize> = (0..set.len()).collect();
        for chunk in all.chunks(SCORE_BATCH) {
            let mut tape = Tape::new();
            let out = self.forward(&mut tape, set, chunk)?;
            data.extend_from_slice(tape.value(out.universal).data());
        }
        Tensor::new(vec![set.len(), width], data)
    }

    /// CSV of universal features keyed by `(row_id, domain_id)`.
    pub fn export_universal<W: std::io::Write>(&self, set: &FeatureSet, w: W) -> Result<()> {
        let keys: Vec<(u64, usize)> = set
            .row_ids
            .iter()
            .copied()
            .zip(set.domains.iter().copied())
            .collect();
        let c = self.config();
        write_universal_csv(w, &keys, &self.universal(set)?, c.n_fields, c.dim)
    }

    /// Per-instance TopK selections (expert indices), useful for inspecting
    /// which experts each domain routes to.
    pub fn selections(&self, set: &FeatureSet) -> Result<Vec<Vec<usize>>> {
        let mut out = Vec::with_capacity(set.len());
        let all: Vec<usize> = (0..set.len()).collect();
        for chunk in all.chunks(SCORE_BATCH) {
            let mut tape = Tape::new();
            let f = self.forward(&mut tape, set, chunk)?;
            let g = tape.value(f.gate);
            for b in 0..g.rows() {
                out.push(
                    (0..g.cols())
                        .filter(|&j| g.row_slice(b)[j] != 0.0)
                        .collect(),
                );
            }
        }
        Ok(out)
    }

    pub fn meta_path(checkpoint: &Path) -> PathBuf {
        checkpoint.with_extension("json")
    }

    /// Writes `path` (UFNP) and the metadata sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.store)?;
        fs::write(
            Self::meta_path(path),
            serde_json::to_string_pretty(&self.meta)? + "\n",
        )?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let meta_path = Self::meta_path(path);
        if !meta_path.exists() {
            return Err(Error::MissingPath(meta_path));
        }
        let meta: ModelMeta = serde_json::from_str(&fs::read_to_string(&meta_path)?)?;
        let params = checkpoint::load(path)?;
        // structure only; every value is overwritten from the checkpoint
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut model = Self::build(meta, &mut rng)?;
        model.store.load_from(&params)?;
        Ok(model)
    }

    /// Copy every parameter whose name and shape match in `other`; returns
    /// how many were copied.
    pub fn init_from(&mut self, other: &UfinModel) -> usize {
        let mut n = 0;
        let ids: Vec<_> = self.store.ids().collect();
        for id in ids {
            let name = self.store.name(id).to_string();
            if let Some(src) = other.store.id(&name) {
                let v = other.store.get(src);
                if v.shape() == self.store.get(id).shape() {
                    *self.store.get_mut(id) = v.clone();
                    n += 1;
                }
            }
        }
        n
    }
}
