use rand::Rng;

use crate::error::{Error, Result};
use crate::interaction::EulerExpert;
use crate::numeric::{LayerNorm, Linear, ParamStore, Tape, Tensor, Var};

/// `ẽ_j = LayerNorm_j(V_j z̃)` for `j = 1..n_u`, concatenated to `[B, n_u·d]`.
#[derive(Debug, Clone)]
pub struct UniversalDecoder {
    pub projections: Vec<Linear>,
    pub norms: Vec<LayerNorm>,
    pub dim: usize,
}

impl UniversalDecoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        n_fields: usize,
        d_v: usize,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if n_fields == 0 || dim < 2 {
            return Err(Error::invalid("decoder needs n_u >= 1 and d >= 2"));
        }
        let projections = (0..n_fields)
            .map(|j| Linear::new(store, &format!("decoder.v{j}"), d_v, dim, false, rng))
            .collect();
        let norms = (0..n_fields)
            .map(|j| LayerNorm::new(store, &format!("decoder.norm{j}"), dim))
            .collect();
        Ok(Self {
            projections,
            norms,
            dim,
        })
    }

    pub fn n_fields(&self) -> usize {
        self.projections.len()
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, z: Var) -> Result<Var> {
        let mut rows = Vec::with_capacity(self.n_fields());
        for (v, norm) in self.projections.iter().zip(&self.norms) {
            let e = v.forward(tape, store, z)?;
            rows.push(norm.forward(tape, store, e)?);
        }
        tape.concat(&rows)
    }
}

/// 0/1 mask keeping the `k` largest entries of `weights`; ties go to the
/// lower index.
pub fn topk_mask(weights: &[f64], k: usize) -> Result<Vec<f64>> {
    if k == 0 || k > weights.len() {
        return Err(Error::invalid(format!(
            "TopK needs 1 <= K <= L, got K={k}, L={}",
            weights.len()
        )));
    }
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    let mut mask = vec![0.0; weights.len()];
    for &i in &order[..k] {
        mask[i] = 1.0;
    }
    Ok(mask)
}

/// `ζ = Σ_j Euler_j(Ẽ) · g̃_j` with `g̃ = TopK(softmax(W̃_g z̃))`.
#[derive(Debug, Clone)]
pub struct InteractionMoE {
    pub experts: Vec<EulerExpert>,
    pub gate: Linear,
    pub k: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct MoeOutput {
    pub logit: Var,
    /// Sparse gate weights `[B, L]`.
    pub gate: Var,
}

impl InteractionMoE {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        n_experts: usize,
        k: usize,
        d_v: usize,
        n_fields: usize,
        n_orders: usize,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if k == 0 || k > n_experts {
            return Err(Error::invalid(format!(
                "TopK needs 1 <= K <= L, got K={k}, L={n_experts}"
            )));
        }
        let experts = (0..n_experts)
            .map(|j| {
                EulerExpert::new(
                    store,
                    &format!("moe.expert{j}"),
                    n_fields,
                    n_orders,
                    dim,
                    rng,
                )
            })
            .collect();
        let gate = Linear::new(store, "moe.gate", d_v, n_experts, false, rng);
        Ok(Self { experts, gate, k })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        theta: Var,
        z: Var,
    ) -> Result<MoeOutput> {
        let logits = self.gate.forward(tape, store, z)?;
        let dense = tape.softmax_rows(logits)?;
        let d = tape.value(dense);
        let (batch, l) = (d.rows(), d.cols());
        let mut mask = Vec::with_capacity(batch * l);
        for b in 0..batch {
            mask.extend(topk_mask(d.row_slice(b), self.k)?);
        }
        let mask = tape.constant(Tensor::new(vec![batch, l], mask)?);
        let gate = tape.mul(dense, mask)?;
        let mut logit: Option<Var> = None;
        for (j, expert) in self.experts.iter().enumerate() {
            let y = expert.forward(tape, store, theta)?;
            let g = tape.column(gate, j)?;
            let term = tape.mul(y, g)?;
            logit = Some(match logit {
                Some(acc) => tape.add(acc, term)?,
                None => term,
            });
        }
        Ok(MoeOutput {
            logit: logit.expect("at least one expert"),
            gate,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::gradcheck::{check_params, DEFAULT_STEP};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn topk_examples() {
        let w = [0.6652, 0.2447, 0.0900];
        assert_eq!(topk_mask(&w, 2).unwrap(), [1.0, 1.0, 0.0]);
        assert_eq!(topk_mask(&[0.5, 0.5, 0.0], 1).unwrap(), [1.0, 0.0, 0.0]);
        assert_eq!(topk_mask(&[0.2, 0.4, 0.4], 1).unwrap(), [0.0, 1.0, 0.0]);
        assert!(topk_mask(&w, 0).is_err());
        assert!(topk_mask(&w, 4).is_err());
    }

    #[test]
    fn decoder_rows_are_normalised_and_zero_projection_gives_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut store = ParamStore::new();
        let dec = UniversalDecoder::new(&mut store, 3, 5, 4, &mut rng).unwrap();
        *store.get_mut(dec.projections[1].weight) = Tensor::zeros(&[4, 5]);
        *store.get_mut(dec.norms[1].bias) =
            Tensor::row(&[1.0, 2.0, 3.0, 4.0]).reshape(&[4]).unwrap();
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::randn(&[2, 5], 1.0, &mut rng));
        let out = dec.forward(&mut tape, &store, z).unwrap();
        let v = tape.value(out);
        assert_eq!(v.shape(), &[2, 12]);
        for b in 0..2 {
            let r = v.row_slice(b);
            let mean: f64 = r[0..4].iter().sum::<f64>() / 4.0;
            // variance is s²/(s²+eps), a little under 1 for small projections
            let var: f64 = r[0..4].iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(
                mean.abs() < 1e-12 && (var - 1.0).abs() < 5e-3,
                "{mean} {var}"
            );
            assert_eq!(&r[4..8], &[1.0, 2.0, 3.0, 4.0]);
        }
    }

    #[test]
    fn full_k_is_dense_mixture() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let moe = InteractionMoE::new(&mut store, 3, 3, 4, 2, 2, 2, &mut rng).unwrap();
        let theta = Tensor::randn(&[5, 4], 1.0, &mut rng);
        let z = Tensor::randn(&[5, 4], 1.0, &mut rng);
        let mut tape = Tape::new();
        let tv = tape.constant(theta);
        let zv = tape.constant(z);
        let out = moe.forward(&mut tape, &store, tv, zv).unwrap();
        let logits = moe.gate.forward(&mut tape, &store, zv).unwrap();
        let dense = tape.softmax_rows(logits).unwrap();
        let ys: Vec<Var> = moe
            .experts
            .iter()
            .map(|e| e.forward(&mut tape, &store, tv).unwrap())
            .collect();
        for b in 0..5 {
            let expect: f64 = (0..3)
                .map(|j| tape.value(ys[j]).data()[b] * tape.value(dense).data()[b * 3 + j])
                .sum();
            assert!((tape.value(out.logit).data()[b] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn sparse_gate_and_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut store = ParamStore::new();
        let moe = InteractionMoE::new(&mut store, 4, 2, 3, 2, 2, 2, &mut rng).unwrap();
        let th = store.add("theta", Tensor::randn(&[3, 4], 1.0, &mut rng));
        let z = store.add("z", Tensor::randn(&[3, 3], 1.0, &mut rng));
        let mut tape = Tape::new();
        let tv = tape.param(&store, th);
        let zv = tape.param(&store, z);
        let out = moe.forward(&mut tape, &store, tv, zv).unwrap();
        for b in 0..3 {
            let r = tape.value(out.gate).row_slice(b);
            assert_eq!(r.iter().filter(|v| **v != 0.0).count(), 2);
            assert!(r.iter().sum::<f64>() <= 1.0);
        }
        let ids: Vec<_> = store.ids().collect();
        let err = check_params(&mut store, &ids, DEFAULT_STEP, |tape, st| {
            let tv = tape.param(st, th);
            let zv = tape.param(st, z);
            let o = moe.forward(tape, st, tv, zv)?;
            Ok(tape.sum(o.logit))
        })
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
