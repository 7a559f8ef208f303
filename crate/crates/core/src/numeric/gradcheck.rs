//! Central finite-difference gradient checks.
//!
//! Only forward evaluations are used for the numeric side, so a check is
//! independent of the backward rule it validates. Error is reported per
//! operand as `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`, falling
//! back to the absolute norm when both gradients are below `1e-8`.

use crate::error::{Error, Result};
use crate::numeric::{ParamId, ParamStore, Tape, Tensor, Var};

pub const DEFAULT_STEP: f64 = 1e-5;

fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale < 1e-8 {
        diff
    } else {
        diff / scale
    }
}

fn scalar_of(tape: &Tape, out: Var) -> Result<f64> {
    let v = tape.value(out);
    if v.numel() != 1 {
        return Err(Error::invalid(format!(
            "gradient check needs a scalar output, got shape {:?}",
            v.shape()
        )));
    }
    Ok(v.item())
}

/// Check the gradient of a scalar function of `inputs`. Returns the worst
/// relative error over all operands.
pub fn check_inputs<F>(inputs: &[Tensor], step: f64, build: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let out = build(&mut tape, &vars)?;
    scalar_of(&tape, out)?;
    let grads = tape.backward(out);

    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = build(&mut tape, &vars)?;
        scalar_of(&tape, out)
    };

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads
            .wrt(*v)
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        let mut numeric = vec![0.0; inputs[i].numel()];
        for j in 0..inputs[i].numel() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + step;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - step;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            numeric[j] = (plus - minus) / (2.0 * step);
        }
        worst = worst.max(rel_error(&analytic, &numeric));
    }
    Ok(worst)
}

/// Check gradients of stored parameters `ids` for a scalar function built
/// from `store`. The store is restored before returning.
pub fn check_params<F>(store: &mut ParamStore, ids: &[ParamId], step: f64, build: F) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = build(&mut tape, store)?;
    scalar_of(&tape, out)?;
    let grads = tape.backward(out);

    let mut worst = 0.0f64;
    for &id in ids {
        let n = store.get(id).numel();
        let analytic = grads
            .param(id)
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; n]);
        let mut numeric = vec![0.0; n];
        for j in 0..n {
            let orig = store.get(id).data()[j];
            store.get_mut(id).data_mut()[j] = orig + step;
            let mut t = Tape::new();
            let o = build(&mut t, store)?;
            let plus = scalar_of(&t, o)?;
            store.get_mut(id).data_mut()[j] = orig - step;
            let mut t = Tape::new();
            let o = build(&mut t, store)?;
            let minus = scalar_of(&t, o)?;
            store.get_mut(id).data_mut()[j] = orig;
            numeric[j] = (plus - minus) / (2.0 * step);
        }
        worst = worst.max(rel_error(&analytic, &numeric));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Weighted sum with a fixed random projection so every output element
    /// contributes a distinct gradient.
    fn project(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = tape.value(y).shape().to_vec();
        let w = tape.constant(Tensor::randn(&shape, 1.0, &mut rng));
        let p = tape.mul(y, w)?;
        Ok(tape.sum(p))
    }

    fn check_unary(f: impl Fn(&mut Tape, Var) -> Result<Var>, lo: f64, hi: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..20 {
            let mut x = Tensor::uniform(&[3, 4], 1.0, &mut rng);
            for v in x.data_mut() {
                *v = lo + (*v + 1.0) / 2.0 * (hi - lo);
            }
            let err = check_inputs(&[x], DEFAULT_STEP, |t, v| {
                let y = f(t, v[0])?;
                project(t, y, trial)
            })
            .unwrap();
            assert!(err < 1e-4, "trial {trial}: rel err {err}");
        }
    }

    #[test]
    fn elementwise_ops() {
        check_unary(|t, x| Ok(t.sigmoid(x)), -4.0, 4.0);
        check_unary(|t, x| Ok(t.softplus(x)), -4.0, 4.0);
        check_unary(|t, x| Ok(t.relu(x)), -2.0, 2.0);
        check_unary(|t, x| Ok(t.exp(x)), -2.0, 2.0);
        check_unary(|t, x| t.log(x), 0.2, 3.0);
        check_unary(|t, x| Ok(t.affine(x, -1.5, 0.2)), -2.0, 2.0);
        check_unary(|t, x| t.softmax_rows(x), -3.0, 3.0);
        check_unary(|t, x| t.sum_cols(x), -3.0, 3.0);
        check_unary(|t, x| t.column(x, 2), -3.0, 3.0);
    }

    #[test]
    fn binary_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..10 {
            let a = Tensor::randn(&[3, 4], 1.0, &mut rng);
            let b = Tensor::randn(&[4, 2], 1.0, &mut rng);
            let bt = Tensor::randn(&[5, 4], 1.0, &mut rng);
            let c = Tensor::randn(&[3, 4], 1.0, &mut rng);
            let row = Tensor::randn(&[4], 1.0, &mut rng);
            let col = Tensor::randn(&[3, 1], 1.0, &mut rng);
            let checks: Vec<f64> = vec![
                check_inputs(&[a.clone(), b.clone()], DEFAULT_STEP, |t, v| {
                    let y = t.matmul(v[0], v[1])?;
                    project(t, y, trial)
                })
                .unwrap(),
                check_inputs(&[a.clone(), bt.clone()], DEFAULT_STEP, |t, v| {
                    let y = t.matmul_nt(v[0], v[1])?;
                    project(t, y, trial)
                })
                .unwrap(),
                check_inputs(&[a.clone(), c.clone()], DEFAULT_STEP, |t, v| {
                    let y = t.mul(v[0], v[1])?;
                    let z = t.sub(y, v[1])?;
                    let w = t.add(z, v[0])?;
                    project(t, w, trial)
                })
                .unwrap(),
                check_inputs(&[a.clone(), row.clone()], DEFAULT_STEP, |t, v| {
                    let y = t.add_row(v[0], v[1])?;
                    project(t, y, trial)
                })
                .unwrap(),
                check_inputs(&[a.clone(), col.clone()], DEFAULT_STEP, |t, v| {
                    let y = t.mul_col(v[0], v[1])?;
                    project(t, y, trial)
                })
                .unwrap(),
                check_inputs(&[a.clone(), c.clone()], DEFAULT_STEP, |t, v| {
                    let y = t.concat(&[v[0], v[1]])?;
                    project(t, y, trial)
                })
                .unwrap(),
            ];
            for (i, e) in checks.iter().enumerate() {
                assert!(*e < 1e-4, "trial {trial} check {i}: {e}");
            }
        }
    }

    #[test]
    fn layer_norm_grad() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for trial in 0..20 {
            let x = Tensor::randn(&[3, 5], 2.0, &mut rng);
            let g = Tensor::randn(&[5], 1.0, &mut rng);
            let b = Tensor::randn(&[5], 1.0, &mut rng);
            let err = check_inputs(&[x, g, b], DEFAULT_STEP, |t, v| {
                let y = t.layer_norm_rows(v[0], v[1], v[2], 1e-5)?;
                project(t, y, trial)
            })
            .unwrap();
            assert!(err < 1e-4, "trial {trial}: {err}");
        }
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // backward claims d/dx = 1 for x^2
        let err = check_inputs(&[Tensor::scalar(3.0)], DEFAULT_STEP, |t, v| {
            let x = t.value(v[0]).clone();
            let y = x.map(|a| a * a);
            Ok(t.custom(&[v[0]], y, Box::new(|c| vec![Some(c.grad.clone())])))
        })
        .unwrap();
        assert!(err > 0.5);
    }
}
