//! Reverse-mode automatic differentiation over a linear tape.
//!
//! A [`Tape`] is built fresh for every forward pass. Each operation appends a
//! node holding its value and a backward closure; [`Tape::backward`] walks the
//! nodes in reverse and accumulates gradients additively into operands.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numeric::tensor::{gemm_nn, gemm_nt, gemm_tn};
use crate::numeric::{ParamId, ParamStore, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// What a backward closure sees: the upstream gradient, the operand values,
/// the op output, and which operands actually need a gradient.
pub struct BackwardCtx<'a> {
    pub grad: &'a Tensor,
    pub inputs: Vec<&'a Tensor>,
    pub output: &'a Tensor,
    pub needs: Vec<bool>,
}

pub type BackwardFn = Box<dyn Fn(&BackwardCtx) -> Vec<Option<Tensor>>>;

struct Node {
    value: Tensor,
    inputs: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<ParamId, Var>,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: BTreeMap<ParamId, Var>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].as_ref()
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id).and_then(|v| self.nodes[v.0].as_ref())
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.params.keys().copied()
    }
}

fn require_2d(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::shape(op, s, &[0, 0])),
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            inputs: Vec::new(),
            backward: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Untracked leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Tracked leaf whose gradient can be read back via [`Gradients::wrt`].
    pub fn input(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Tracked leaf bound to a stored parameter. Repeated calls with the same
    /// id return the same node, so gradients accumulate in one place.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.params.get(&id) {
            return *v;
        }
        let v = self.leaf(store.get(id).clone(), true);
        self.params.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Record an op with a caller-supplied backward rule.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, backward: BackwardFn) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            inputs: inputs.iter().map(|v| v.0).collect(),
            backward: requires_grad.then_some(backward),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Seed `output` with ones and propagate to every tracked node.
    pub fn backward(&self, output: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::full(self.nodes[output.0].value.shape(), 1.0));
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            let ctx = BackwardCtx {
                grad: &grad,
                inputs: node.inputs.iter().map(|&i| &self.nodes[i].value).collect(),
                output: &node.value,
                needs: node
                    .inputs
                    .iter()
                    .map(|&i| self.nodes[i].requires_grad)
                    .collect(),
            };
            let input_grads = backward(&ctx);
            for (&i, g) in node.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[i].requires_grad {
                    continue;
                }
                match &mut grads[i] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
            // keep the gradient of leaves and intermediates for inspection
            grads[idx] = Some(grad);
        }
        Gradients {
            nodes: grads,
            params: self.params.clone(),
        }
    }

    // ---- linear algebra ----

    /// `a[m,k] * b[k,n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = require_2d("matmul", self.value(a))?;
        let (k2, n) = require_2d("matmul", self.value(b))?;
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                self.value(a).shape(),
                self.value(b).shape(),
            ));
        }
        let out = gemm_nn(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.custom(
            &[a, b],
            value,
            Box::new(move |c| {
                let g = c.grad.data();
                let ga = c.needs[0].then(|| {
                    Tensor::new(vec![m, k], gemm_nt(g, c.inputs[1].data(), m, n, k)).unwrap()
                });
                let gb = c.needs[1].then(|| {
                    Tensor::new(vec![k, n], gemm_tn(c.inputs[0].data(), g, m, k, n)).unwrap()
                });
                vec![ga, gb]
            }),
        ))
    }

    /// `a[m,k] * b[n,k]^T`, the usual shape for `x W^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = require_2d("matmul_nt", self.value(a))?;
        let (n, k2) = require_2d("matmul_nt", self.value(b))?;
        if k != k2 {
            return Err(Error::shape(
                "matmul_nt",
                self.value(a).shape(),
                self.value(b).shape(),
            ));
        }
        let out = gemm_nt(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.custom(
            &[a, b],
            value,
            Box::new(move |c| {
                let g = c.grad.data();
                let ga = c.needs[0].then(|| {
                    Tensor::new(vec![m, k], gemm_nn(g, c.inputs[1].data(), m, n, k)).unwrap()
                });
                let gb = c.needs[1].then(|| {
                    Tensor::new(vec![n, k], gemm_tn(g, c.inputs[0].data(), m, n, k)).unwrap()
                });
                vec![ga, gb]
            }),
        ))
    }

    // ---- elementwise binary ----

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        Ok(self.custom(
            &[a, b],
            value,
            Box::new(|c| vec![Some(c.grad.clone()), Some(c.grad.clone())]),
        ))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.custom(
            &[a, b],
            value,
            Box::new(|c| vec![Some(c.grad.clone()), Some(c.grad.map(|g| -g))]),
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.custom(
            &[a, b],
            value,
            Box::new(|c| {
                let prod = |u: &Tensor, v: &Tensor| {
                    let d = u.data().iter().zip(v.data()).map(|(x, y)| x * y).collect();
                    Tensor::new(u.shape().to_vec(), d).unwrap()
                };
                vec![
                    c.needs[0].then(|| prod(c.grad, c.inputs[1])),
                    c.needs[1].then(|| prod(c.grad, c.inputs[0])),
                ]
            }),
        ))
    }

    /// `scale * x + shift`
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let value = self.value(x).map(|v| scale * v + shift);
        self.custom(
            &[x],
            value,
            Box::new(move |c| vec![Some(c.grad.map(|g| scale * g))]),
        )
    }

    /// Add a length-`n` bias to every row of `x[B,n]`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (rows, n) = require_2d("add_row", self.value(x))?;
        if self.value(bias).numel() != n {
            return Err(Error::shape(
                "add_row",
                self.value(x).shape(),
                self.value(bias).shape(),
            ));
        }
        let mut value = self.value(x).clone();
        let b = self.value(bias).data().to_vec();
        for r in 0..rows {
            for (v, bv) in value.data_mut()[r * n..(r + 1) * n].iter_mut().zip(&b) {
                *v += bv;
            }
        }
        Ok(self.custom(
            &[x, bias],
            value,
            Box::new(move |c| {
                let gb = c.needs[1].then(|| {
                    let mut acc = vec![0.0; n];
                    for r in 0..rows {
                        for (a, g) in acc.iter_mut().zip(c.grad.row_slice(r)) {
                            *a += g;
                        }
                    }
                    Tensor::new(c.inputs[1].shape().to_vec(), acc).unwrap()
                });
                vec![Some(c.grad.clone()), gb]
            }),
        ))
    }

    /// Scale row `b` of `x[B,n]` by `col[b,0]`.
    pub fn mul_col(&mut self, x: Var, col: Var) -> Result<Var> {
        let (rows, n) = require_2d("mul_col", self.value(x))?;
        if self.value(col).shape() != [rows, 1] {
            return Err(Error::shape(
                "mul_col",
                self.value(x).shape(),
                self.value(col).shape(),
            ));
        }
        let mut value = self.value(x).clone();
        let cv = self.value(col).data().to_vec();
        for r in 0..rows {
            for v in &mut value.data_mut()[r * n..(r + 1) * n] {
                *v *= cv[r];
            }
        }
        Ok(self.custom(
            &[x, col],
            value,
            Box::new(move |c| {
                let xv = c.inputs[0];
                let cv = c.inputs[1].data();
                let gx = c.needs[0].then(|| {
                    let mut g = c.grad.clone();
                    for r in 0..rows {
                        for v in &mut g.data_mut()[r * n..(r + 1) * n] {
                            *v *= cv[r];
                        }
                    }
                    g
                });
                let gc = c.needs[1].then(|| {
                    let d = (0..rows)
                        .map(|r| {
                            c.grad
                                .row_slice(r)
                                .iter()
                                .zip(xv.row_slice(r))
                                .map(|(g, x)| g * x)
                                .sum()
                        })
                        .collect();
                    Tensor::new(vec![rows, 1], d).unwrap()
                });
                vec![gx, gc]
            }),
        ))
    }

    // ---- reductions and reshaping ----

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).data().iter().sum());
        self.custom(
            &[x],
            value,
            Box::new(|c| vec![Some(Tensor::full(c.inputs[0].shape(), c.grad.item()))]),
        )
    }

    /// Per-row sum of `x[B,n]`, shape `[B,1]`.
    pub fn sum_cols(&mut self, x: Var) -> Result<Var> {
        let (rows, n) = require_2d("sum_cols", self.value(x))?;
        let d = (0..rows)
            .map(|r| self.value(x).row_slice(r).iter().sum())
            .collect();
        let value = Tensor::new(vec![rows, 1], d)?;
        Ok(self.custom(
            &[x],
            value,
            Box::new(move |c| {
                let mut g = Tensor::zeros(&[rows, n]);
                for r in 0..rows {
                    let gv = c.grad.data()[r];
                    g.data_mut()[r * n..(r + 1) * n].fill(gv);
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Concatenate `[B, n_i]` blocks along columns.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::invalid("concat of zero tensors"));
        }
        let rows = require_2d("concat", self.value(parts[0]))?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, c) = require_2d("concat", self.value(*p))?;
            if r != rows {
                return Err(Error::shape(
                    "concat",
                    self.value(parts[0]).shape(),
                    self.value(*p).shape(),
                ));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row_slice(r));
            }
        }
        let value = Tensor::new(vec![rows, total], data)?;
        Ok(self.custom(
            parts,
            value,
            Box::new(move |c| {
                let mut offset = 0;
                widths
                    .iter()
                    .enumerate()
                    .map(|(i, &w)| {
                        let start = offset;
                        offset += w;
                        c.needs[i].then(|| {
                            let mut d = Vec::with_capacity(rows * w);
                            for r in 0..rows {
                                d.extend_from_slice(&c.grad.row_slice(r)[start..start + w]);
                            }
                            Tensor::new(vec![rows, w], d).unwrap()
                        })
                    })
                    .collect()
            }),
        ))
    }

    /// Column `j` of `x[B,n]` as `[B,1]`.
    pub fn column(&mut self, x: Var, j: usize) -> Result<Var> {
        let (rows, n) = require_2d("column", self.value(x))?;
        if j >= n {
            return Err(Error::invalid(format!(
                "column {j} out of range for width {n}"
            )));
        }
        let d = (0..rows).map(|r| self.value(x).data()[r * n + j]).collect();
        let value = Tensor::new(vec![rows, 1], d)?;
        Ok(self.custom(
            &[x],
            value,
            Box::new(move |c| {
                let mut g = Tensor::zeros(&[rows, n]);
                for r in 0..rows {
                    g.data_mut()[r * n + j] = c.grad.data()[r];
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Rows of `table[V,d]` selected by `ids`; `None` selects a zero row.
    pub fn gather_rows(&mut self, table: Var, ids: &[Option<usize>]) -> Result<Var> {
        let (vocab, d) = require_2d("gather_rows", self.value(table))?;
        if ids.is_empty() {
            return Err(Error::invalid("gather_rows with no ids"));
        }
        if let Some(bad) = ids.iter().flatten().find(|&&i| i >= vocab) {
            return Err(Error::invalid(format!(
                "row {bad} out of range for table of {vocab}"
            )));
        }
        let mut data = vec![0.0; ids.len() * d];
        for (r, id) in ids.iter().enumerate() {
            if let Some(i) = id {
                data[r * d..(r + 1) * d].copy_from_slice(self.value(table).row_slice(*i));
            }
        }
        let value = Tensor::new(vec![ids.len(), d], data)?;
        let ids = ids.to_vec();
        Ok(self.custom(
            &[table],
            value,
            Box::new(move |c| {
                let mut g = Tensor::zeros(&[vocab, d]);
                for (r, id) in ids.iter().enumerate() {
                    if let Some(i) = id {
                        for (a, gv) in g.data_mut()[i * d..(i + 1) * d]
                            .iter_mut()
                            .zip(c.grad.row_slice(r))
                        {
                            *a += gv;
                        }
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    // ---- elementwise unary ----

    fn unary(
        &mut self,
        x: Var,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var {
        let value = self.value(x).map(f);
        self.custom(
            &[x],
            value,
            Box::new(move |c| {
                let d = c
                    .grad
                    .data()
                    .iter()
                    .zip(c.inputs[0].data())
                    .zip(c.output.data())
                    .map(|((g, x), y)| g * df(*x, *y))
                    .collect();
                vec![Some(Tensor::new(c.grad.shape().to_vec(), d).unwrap())]
            }),
        )
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus, |x, _| sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, |_, y| y)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self
            .value(x)
            .data()
            .iter()
            .find(|&&v| v <= 0.0 || v.is_nan())
        {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        Ok(self.unary(x, f64::ln, |x, _| 1.0 / x))
    }

    /// Clamp into `[lo, hi]`; gradient is zero where clamping is active.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(
            x,
            move |v| v.clamp(lo, hi),
            move |x, _| if x < lo || x > hi { 0.0 } else { 1.0 },
        )
    }

    // ---- normalisation ----

    /// Row-wise softmax of `x[B,n]` with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (rows, n) = require_2d("softmax_rows", self.value(x))?;
        let mut value = self.value(x).clone();
        for r in 0..rows {
            softmax_in_place(&mut value.data_mut()[r * n..(r + 1) * n]);
        }
        Ok(self.custom(
            &[x],
            value,
            Box::new(move |c| {
                let mut g = Tensor::zeros(&[rows, n]);
                for r in 0..rows {
                    let y = c.output.row_slice(r);
                    let gy = c.grad.row_slice(r);
                    let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                    for ((o, yv), gv) in g.data_mut()[r * n..(r + 1) * n].iter_mut().zip(y).zip(gy)
                    {
                        *o = yv * (gv - dot);
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Row-wise LayerNorm of `x[B,n]` followed by `gain ⊙ x̂ + bias`.
    pub fn layer_norm_rows(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (rows, n) = require_2d("layer_norm", self.value(x))?;
        if n < 2 {
            return Err(Error::Domain {
                op: "layer_norm",
                detail: format!("row length {n} < 2"),
            });
        }
        if self.value(gain).numel() != n || self.value(bias).numel() != n {
            return Err(Error::shape(
                "layer_norm",
                self.value(x).shape(),
                self.value(gain).shape(),
            ));
        }
        let gv = self.value(gain).data().to_vec();
        let bv = self.value(bias).data().to_vec();
        let mut value = Tensor::zeros(&[rows, n]);
        for r in 0..rows {
            let (xhat, _) = normalize(self.value(x).row_slice(r), eps);
            for (i, o) in value.data_mut()[r * n..(r + 1) * n].iter_mut().enumerate() {
                *o = gv[i] * xhat[i] + bv[i];
            }
        }
        Ok(self.custom(
            &[x, gain, bias],
            value,
            Box::new(move |c| {
                let gain = c.inputs[1].data();
                let mut gx = Tensor::zeros(&[rows, n]);
                let mut ggain = vec![0.0; n];
                let mut gbias = vec![0.0; n];
                for r in 0..rows {
                    let (xhat, inv_std) = normalize(c.inputs[0].row_slice(r), eps);
                    let gy = c.grad.row_slice(r);
                    let gxhat: Vec<f64> = gy.iter().zip(gain).map(|(g, w)| g * w).collect();
                    let mean_g = gxhat.iter().sum::<f64>() / n as f64;
                    let mean_gx =
                        gxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                    for i in 0..n {
                        gx.data_mut()[r * n + i] =
                            inv_std * (gxhat[i] - mean_g - xhat[i] * mean_gx);
                        ggain[i] += gy[i] * xhat[i];
                        gbias[i] += gy[i];
                    }
                }
                vec![
                    Some(gx),
                    c.needs[1].then(|| Tensor::new(c.inputs[1].shape().to_vec(), ggain).unwrap()),
                    c.needs[2].then(|| Tensor::new(c.inputs[2].shape().to_vec(), gbias).unwrap()),
                ]
            }),
        ))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for positive inputs.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in v.iter_mut() {
        *x /= total;
    }
}

/// Standardised row and `1/sqrt(var + eps)`.
pub(crate) fn normalize(row: &[f64], eps: f64) -> (Vec<f64>, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + eps).sqrt();
    (row.iter().map(|v| (v - mean) * inv_std).collect(), inv_std)
}
