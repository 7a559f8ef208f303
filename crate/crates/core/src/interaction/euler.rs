//! Adaptive-order interaction in complex log-polar form.
//!
//! Field `j` becomes `z_j = λ_j · e^{iθ_j}` (elementwise over `d`). An order
//! vector `α_k` gives `∏_j z_j^{α_kj}`, which in log-polar form is modulus
//! `exp(Σ_j α_kj ln λ_j)` and phase `Σ_j α_kj θ_j`. Real orders are fine.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::{sigmoid, softplus, softplus_inv, ParamId, ParamStore, Tape, Tensor, Var};

/// Largest log-modulus accepted before `exp` is considered an overflow.
pub const MAX_LOG_MODULUS: f64 = 700.0;
/// Std of the initial interaction orders.
pub const ORDER_INIT_STD: f64 = 0.3;

#[derive(Debug, Clone)]
pub struct EulerExpert {
    pub orders: ParamId,
    pub mu: ParamId,
    pub w_re: ParamId,
    pub w_im: ParamId,
    pub bias: ParamId,
    pub n_fields: usize,
    pub n_orders: usize,
    pub dim: usize,
}

/// Complex terms `∏_j z_j^{α_kj}` for one instance, row-major `[n_o, d]`.
///
/// `theta` is `[n_u, d]`, `orders` is `[n_o, n_u]`, `lambda` is `[n_u, d]`.
pub fn euler_terms(
    theta: &[f64],
    orders: &[f64],
    lambda: &[f64],
    n_fields: usize,
    dim: usize,
) -> Result<Vec<(f64, f64)>> {
    if theta.len() != n_fields * dim || lambda.len() != n_fields * dim {
        return Err(Error::shape(
            "euler_terms",
            &[n_fields, dim],
            &[theta.len()],
        ));
    }
    if n_fields == 0 || !orders.len().is_multiple_of(n_fields) {
        return Err(Error::shape("euler_terms", &[n_fields], &[orders.len()]));
    }
    let n_orders = orders.len() / n_fields;
    let mut out = Vec::with_capacity(n_orders * dim);
    for k in 0..n_orders {
        let a = &orders[k * n_fields..(k + 1) * n_fields];
        for c in 0..dim {
            let mut l = 0.0;
            let mut phi = 0.0;
            for j in 0..n_fields {
                if lambda[j * dim + c] <= 0.0 {
                    return Err(Error::invalid("modulus must be positive"));
                }
                l += a[j] * lambda[j * dim + c].ln();
                phi += a[j] * theta[j * dim + c];
            }
            if l > MAX_LOG_MODULUS {
                return Err(Error::OrderOverflow {
                    order: k,
                    log_modulus: l,
                });
            }
            let m = l.exp();
            out.push((m * phi.cos(), m * phi.sin()));
        }
    }
    Ok(out)
}

impl EulerExpert {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        n_fields: usize,
        n_orders: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        let orders = store.add(
            format!("{name}.orders"),
            Tensor::randn(&[n_orders, n_fields], ORDER_INIT_STD, rng),
        );
        let mu = store.add(
            format!("{name}.mu"),
            Tensor::full(&[n_fields, dim], softplus_inv(1.0)),
        );
        let bound = 1.0 / ((n_orders * dim) as f64).sqrt();
        let w_re = store.add(
            format!("{name}.w_re"),
            Tensor::uniform(&[n_orders, dim], bound, rng),
        );
        let w_im = store.add(
            format!("{name}.w_im"),
            Tensor::uniform(&[n_orders, dim], bound, rng),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[1]));
        Self {
            orders,
            mu,
            w_re,
            w_im,
            bias,
            n_fields,
            n_orders,
            dim,
        }
    }

    /// Moduli `λ = softplus(μ)`.
    pub fn lambda(&self, store: &ParamStore) -> Vec<f64> {
        store
            .get(self.mu)
            .data()
            .iter()
            .map(|&m| softplus(m))
            .collect()
    }

    /// Complex terms for one instance (`theta` of length `n_u·d`).
    pub fn terms(&self, store: &ParamStore, theta: &[f64]) -> Result<Vec<(f64, f64)>> {
        euler_terms(
            theta,
            store.get(self.orders).data(),
            &self.lambda(store),
            self.n_fields,
            self.dim,
        )
    }

    /// Logits `[B, 1]` for `theta: [B, n_u·d]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, theta: Var) -> Result<Var> {
        let (n_u, n_o, d) = (self.n_fields, self.n_orders, self.dim);
        let th = tape.value(theta);
        if th.shape().len() != 2 || th.cols() != n_u * d {
            return Err(Error::shape("euler_forward", th.shape(), &[0, n_u * d]));
        }
        let batch = th.rows();
        let a = tape.param(store, self.orders);
        let mu = tape.param(store, self.mu);
        let w_re = tape.param(store, self.w_re);
        let w_im = tape.param(store, self.w_im);
        let bias = tape.param(store, self.bias);

        let log_mod = log_moduli(tape.value(a).data(), tape.value(mu).data(), n_u, n_o, d)?;
        let mut out = vec![0.0; batch];
        {
            let th = tape.value(theta).data();
            let av = tape.value(a).data();
            let wr = tape.value(w_re).data();
            let wi = tape.value(w_im).data();
            let b0 = tape.value(bias).data()[0];
            for (b, o) in out.iter_mut().enumerate() {
                let row = &th[b * n_u * d..(b + 1) * n_u * d];
                let mut acc = b0;
                for k in 0..n_o {
                    for c in 0..d {
                        let phi = phase(row, &av[k * n_u..(k + 1) * n_u], c, d);
                        let m = log_mod[k * d + c].exp();
                        acc += wr[k * d + c] * m * phi.cos() + wi[k * d + c] * m * phi.sin();
                    }
                }
                *o = acc;
            }
        }
        let value = Tensor::new(vec![batch, 1], out)?;
        Ok(tape.custom(
            &[theta, a, mu, w_re, w_im, bias],
            value,
            Box::new(move |c| euler_backward(c, n_u, n_o, d)),
        ))
    }
}

fn phase(row: &[f64], a: &[f64], c: usize, d: usize) -> f64 {
    a.iter()
        .enumerate()
        .map(|(j, aj)| aj * row[j * d + c])
        .sum()
}

fn log_moduli(a: &[f64], mu: &[f64], n_u: usize, n_o: usize, d: usize) -> Result<Vec<f64>> {
    let ln_lambda: Vec<f64> = mu.iter().map(|&m| softplus(m).ln()).collect();
    let mut l = vec![0.0; n_o * d];
    for k in 0..n_o {
        for c in 0..d {
            let v: f64 = (0..n_u)
                .map(|j| a[k * n_u + j] * ln_lambda[j * d + c])
                .sum();
            if v > MAX_LOG_MODULUS || !v.is_finite() {
                return Err(Error::OrderOverflow {
                    order: k,
                    log_modulus: v,
                });
            }
            l[k * d + c] = v;
        }
    }
    Ok(l)
}

fn euler_backward(
    ctx: &crate::numeric::BackwardCtx,
    n_u: usize,
    n_o: usize,
    d: usize,
) -> Vec<Option<Tensor>> {
    let th = ctx.inputs[0].data();
    let a = ctx.inputs[1].data();
    let mu = ctx.inputs[2].data();
    let wr = ctx.inputs[3].data();
    let wi = ctx.inputs[4].data();
    let batch = ctx.grad.rows();
    let g = ctx.grad.data();
    let log_mod = log_moduli(a, mu, n_u, n_o, d).expect("checked in forward");
    let ln_lambda: Vec<f64> = mu.iter().map(|&m| softplus(m).ln()).collect();

    let mut d_theta = vec![0.0; th.len()];
    let mut d_a = vec![0.0; n_o * n_u];
    let mut d_ln_lambda = vec![0.0; n_u * d];
    let mut d_wr = vec![0.0; n_o * d];
    let mut d_wi = vec![0.0; n_o * d];
    for b in 0..batch {
        let row = &th[b * n_u * d..(b + 1) * n_u * d];
        let gb = g[b];
        for k in 0..n_o {
            let ak = &a[k * n_u..(k + 1) * n_u];
            for c in 0..d {
                let phi = phase(row, ak, c, d);
                let m = log_mod[k * d + c].exp();
                let (r, im) = (m * phi.cos(), m * phi.sin());
                d_wr[k * d + c] += gb * r;
                d_wi[k * d + c] += gb * im;
                let dr = gb * wr[k * d + c];
                let dm = gb * wi[k * d + c];
                let dl = dr * r + dm * im;
                let dphi = dm * r - dr * im;
                for j in 0..n_u {
                    d_a[k * n_u + j] += dl * ln_lambda[j * d + c] + dphi * row[j * d + c];
                    d_ln_lambda[j * d + c] += dl * ak[j];
                    d_theta[b * n_u * d + j * d + c] += dphi * ak[j];
                }
            }
        }
    }
    // d ln softplus(μ) / dμ = sigmoid(μ) / softplus(μ)
    let d_mu: Vec<f64> = d_ln_lambda
        .iter()
        .zip(mu)
        .map(|(g, &m)| g * sigmoid(m) / softplus(m))
        .collect();
    let d_bias: f64 = g.iter().sum();
    let t = |shape: &[usize], v: Vec<f64>| Some(Tensor::new(shape.to_vec(), v).unwrap());
    vec![
        t(ctx.inputs[0].shape(), d_theta),
        t(&[n_o, n_u], d_a),
        t(&[n_u, d], d_mu),
        t(&[n_o, d], d_wr),
        t(&[n_o, d], d_wi),
        t(&[1], vec![d_bias]),
    ]
}
