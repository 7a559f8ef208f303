//! Universal features, Euler interaction experts, the TopK interaction
//! mixture, the per-domain feature adaptor and the prediction head.

mod adaptor;
mod euler;
mod moe;

use std::io::Write;

use itertools::Itertools;

pub use adaptor::{adaptor_logit, AdaptorIndex, AdaptorInput, FeatureAdaptor};
pub use euler::{euler_terms, EulerExpert, MAX_LOG_MODULUS};
pub use moe::{topk_mask, InteractionMoE, MoeOutput, UniversalDecoder};

use crate::error::{Error, Result};
use crate::numeric::{sigmoid, Tensor};

/// `sigmoid(ζ)` or `sigmoid(ζ + ζ_f)`.
pub fn predict(zeta: f64, zeta_f: Option<f64>) -> f64 {
    sigmoid(zeta + zeta_f.unwrap_or(0.0))
}

/// Smallest pairwise intersection among `selections`, each a `K`-subset of
/// `[0, L)`. A single selection is compared with itself.
pub fn verify_overlap(l: usize, k: usize, selections: &[Vec<usize>]) -> Result<usize> {
    if selections.is_empty() {
        return Err(Error::invalid("no selections"));
    }
    let mut sets = Vec::with_capacity(selections.len());
    for s in selections {
        let mut bits = vec![false; l];
        if s.len() != k {
            return Err(Error::invalid(format!(
                "selection {s:?} does not have {k} elements"
            )));
        }
        for &i in s {
            if i >= l || bits[i] {
                return Err(Error::invalid(format!(
                    "selection {s:?} is not a subset of [0,{l})"
                )));
            }
            bits[i] = true;
        }
        sets.push(bits);
    }
    let overlap = |a: &[bool], b: &[bool]| a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    if sets.len() == 1 {
        return Ok(k);
    }
    Ok(sets
        .iter()
        .tuple_combinations()
        .map(|(a, b)| overlap(a, b))
        .min()
        .expect("at least one pair"))
}

/// Minimum pairwise intersection over every `K`-subset of `[0, L)`.
pub fn min_overlap_exhaustive(l: usize, k: usize) -> Result<usize> {
    let all: Vec<Vec<usize>> = (0..l).combinations(k).collect();
    verify_overlap(l, k, &all)
}

/// CSV with header `row_id,domain_id,e_0_0,...`; `features` is `[N, n_u·d]`.
pub fn write_universal_csv<W: Write>(
    w: W,
    keys: &[(u64, usize)],
    features: &Tensor,
    n_fields: usize,
    dim: usize,
) -> Result<()> {
    if features.shape() != [keys.len(), n_fields * dim] {
        return Err(Error::shape(
            "export_universal",
            features.shape(),
            &[keys.len(), n_fields * dim],
        ));
    }
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["row_id".to_string(), "domain_id".to_string()];
    for j in 0..n_fields {
        for k in 0..dim {
            header.push(format!("e_{j}_{k}"));
        }
    }
    out.write_record(&header)?;
    for (i, (row, domain)) in keys.iter().enumerate() {
        let mut rec = vec![row.to_string(), domain.to_string()];
        rec.extend(features.row_slice(i).iter().map(|v| format!("{v:?}")));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}
