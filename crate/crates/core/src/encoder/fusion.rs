use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Linear, ParamId, ParamStore, Tape, Tensor, Var};

/// Mixture of single-layer experts over the normalised text vector:
/// `z = Σ_j relu(W_j s + b_j) · g_j` with `g = softmax(W_g s)`.
#[derive(Debug, Clone)]
pub struct SemanticFusion {
    pub experts: Vec<Linear>,
    pub gate: Linear,
}

impl SemanticFusion {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        n_experts: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        let experts = (0..n_experts)
            .map(|j| Linear::new(store, &format!("fusion.expert{j}"), dim, dim, true, rng))
            .collect();
        let gate = Linear::new(store, "fusion.gate", dim, n_experts, false, rng);
        Self { experts, gate }
    }

    /// Returns `(z, gate)` with shapes `[B, d_v]` and `[B, L]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, s: Var) -> Result<(Var, Var)> {
        let logits = self.gate.forward(tape, store, s)?;
        let gate = tape.softmax_rows(logits)?;
        let mut z: Option<Var> = None;
        for (j, expert) in self.experts.iter().enumerate() {
            let h = expert.forward(tape, store, s)?;
            let h = tape.relu(h);
            let g = tape.column(gate, j)?;
            let weighted = tape.mul_col(h, g)?;
            z = Some(match z {
                Some(acc) => tape.add(acc, weighted)?,
                None => weighted,
            });
        }
        Ok((z.expect("at least one expert"), gate))
    }
}

/// Vocabulary of one anonymous field plus its embedding table and projection.
#[derive(Debug, Clone)]
pub struct AnonymousField {
    pub name: String,
    pub schema_index: usize,
    vocab: Vec<String>,
    lookup: HashMap<String, usize>,
    pub table: ParamId,
    pub projection: ParamId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnonymousVocab {
    pub name: String,
    pub schema_index: usize,
    pub values: Vec<String>,
}

impl AnonymousField {
    pub fn id(&self, value: &str) -> Option<usize> {
        self.lookup.get(value).copied()
    }

    pub fn vocab(&self) -> AnonymousVocab {
        AnonymousVocab {
            name: self.name.clone(),
            schema_index: self.schema_index,
            values: self.vocab.clone(),
        }
    }
}

/// Additive fusion of identifier embeddings: `z̃ = z + Σ_k U_k h_k`.
/// Ids outside the training vocabulary contribute nothing.
#[derive(Debug, Clone, Default)]
pub struct AnonymousTable {
    pub fields: Vec<AnonymousField>,
    pub d_a: usize,
}

impl AnonymousTable {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        vocabs: &[AnonymousVocab],
        d_a: usize,
        d_v: usize,
        rng: &mut R,
    ) -> Self {
        let fields = vocabs
            .iter()
            .map(|v| {
                let table = store.add(
                    format!("anon.{}.table", v.name),
                    Tensor::randn(&[v.values.len().max(1), d_a], 0.05, rng),
                );
                let bound = 1.0 / (d_a as f64).sqrt();
                let projection = store.add(
                    format!("anon.{}.proj", v.name),
                    Tensor::uniform(&[d_v, d_a], bound, rng),
                );
                AnonymousField {
                    name: v.name.clone(),
                    schema_index: v.schema_index,
                    lookup: v
                        .values
                        .iter()
                        .enumerate()
                        .map(|(i, s)| (s.clone(), i))
                        .collect(),
                    vocab: v.values.clone(),
                    table,
                    projection,
                }
            })
            .collect();
        Self { fields, d_a }
    }

    pub fn vocabs(&self) -> Vec<AnonymousVocab> {
        self.fields.iter().map(AnonymousField::vocab).collect()
    }

    /// `ids[k][b]` is the vocabulary index of field `k` for row `b`.
    pub fn fuse(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        z: Var,
        ids: &[Vec<Option<usize>>],
    ) -> Result<Var> {
        if ids.len() > self.fields.len() {
            return Err(Error::invalid(format!(
                "anonymous field index {} out of range ({} fields)",
                ids.len() - 1,
                self.fields.len()
            )));
        }
        let mut out = z;
        for (field, field_ids) in self.fields.iter().zip(ids) {
            let table = tape.param(store, field.table);
            let h = tape.gather_rows(table, field_ids)?;
            let proj = tape.param(store, field.projection);
            let contrib = tape.matmul_nt(h, proj)?;
            out = tape.add(out, contrib)?;
        }
        Ok(out)
    }
}
