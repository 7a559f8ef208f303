use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::data::{FieldKind, InstanceRecord, Schema};
use crate::error::{Error, Result};
use crate::numeric::{ParamId, ParamStore, Tape, Tensor, Var};

/// Domain-specific one-hot vocabulary: every `(domain, field, value)` seen in
/// training gets its own weight, so nothing is shared across domains.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdaptorIndex {
    /// Schema indices of the categorical fields used.
    pub fields: Vec<usize>,
    pub domains: Vec<usize>,
    pub features: Vec<(usize, usize, String)>,
}

impl AdaptorIndex {
    pub fn build<'a>(
        schema: &Schema,
        domains: &[usize],
        records: impl IntoIterator<Item = &'a InstanceRecord>,
    ) -> Self {
        let fields = schema.indices_of_kind(FieldKind::Categorical);
        let mut seen = BTreeMap::new();
        for r in records {
            for &f in &fields {
                let v = &r.values[f];
                if !v.is_empty() {
                    seen.entry((r.domain_id, f, v.clone())).or_insert(());
                }
            }
        }
        let mut domains = domains.to_vec();
        domains.sort_unstable();
        domains.dedup();
        Self {
            fields,
            domains,
            features: seen.into_keys().collect(),
        }
    }
}

/// Input for one record: its domain row and one optional feature per field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdaptorInput {
    pub domain: usize,
    pub features: Vec<Option<usize>>,
}

/// Per-domain logistic-regression head `ζ_f = b_domain + Σ w_feature`.
#[derive(Debug, Clone)]
pub struct FeatureAdaptor {
    pub index: AdaptorIndex,
    lookup: HashMap<(usize, usize, String), usize>,
    domain_rows: HashMap<usize, usize>,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl FeatureAdaptor {
    /// Weights and biases start at zero.
    pub fn new(store: &mut ParamStore, name: &str, index: AdaptorIndex) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::zeros(&[index.features.len().max(1), 1]),
        );
        let bias = store.add(
            format!("{name}.bias"),
            Tensor::zeros(&[index.domains.len().max(1), 1]),
        );
        let lookup = index
            .features
            .iter()
            .enumerate()
            .map(|(i, k)| (k.clone(), i))
            .collect();
        let domain_rows = index
            .domains
            .iter()
            .enumerate()
            .map(|(i, d)| (*d, i))
            .collect();
        Self {
            index,
            lookup,
            domain_rows,
            weight,
            bias,
        }
    }

    pub fn has_domain(&self, domain: usize) -> bool {
        self.domain_rows.contains_key(&domain)
    }

    /// Unseen values map to `None`; an unknown domain is an error.
    pub fn encode(&self, record: &InstanceRecord) -> Result<AdaptorInput> {
        let domain = *self
            .domain_rows
            .get(&record.domain_id)
            .ok_or(Error::UnknownDomain(record.domain_id))?;
        let features = self
            .index
            .fields
            .iter()
            .map(|&f| {
                self.lookup
                    .get(&(record.domain_id, f, record.values[f].clone()))
                    .copied()
            })
            .collect();
        Ok(AdaptorInput { domain, features })
    }

    pub fn logit(&self, store: &ParamStore, input: &AdaptorInput) -> f64 {
        let w = store.get(self.weight).data();
        store.get(self.bias).data()[input.domain]
            + input.features.iter().flatten().map(|&i| w[i]).sum::<f64>()
    }

    /// Logits `[B, 1]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        inputs: &[AdaptorInput],
    ) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::invalid("adaptor forward with empty batch"));
        }
        let values: Vec<f64> = inputs.iter().map(|x| self.logit(store, x)).collect();
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let n_w = store.get(self.weight).rows();
        let n_b = store.get(self.bias).rows();
        let inputs = inputs.to_vec();
        Ok(tape.custom(
            &[w, b],
            Tensor::new(vec![values.len(), 1], values)?,
            Box::new(move |c| {
                let mut gw = vec![0.0; n_w];
                let mut gb = vec![0.0; n_b];
                for (x, g) in inputs.iter().zip(c.grad.data()) {
                    gb[x.domain] += g;
                    for &i in x.features.iter().flatten() {
                        gw[i] += g;
                    }
                }
                vec![
                    Some(Tensor::new(vec![n_w, 1], gw).unwrap()),
                    Some(Tensor::new(vec![n_b, 1], gb).unwrap()),
                ]
            }),
        ))
    }
}

/// `ζ_f` for one record.
pub fn adaptor_logit(
    record: &InstanceRecord,
    adaptor: &FeatureAdaptor,
    store: &ParamStore,
) -> Result<f64> {
    Ok(adaptor.logit(store, &adaptor.encode(record)?))
}
