use crate::error::{Error, Result};
use crate::eval::PROB_EPS;
use crate::numeric::{Tape, Tensor, Var};

fn labels_tensor(labels: &[u8]) -> Result<Tensor> {
    if let Some(bad) = labels.iter().find(|&&y| y > 1) {
        return Err(Error::invalid(format!("label {bad} outside {{0,1}}")));
    }
    Tensor::new(
        vec![labels.len(), 1],
        labels.iter().map(|&y| y as f64).collect(),
    )
}

/// `Σ (ζᴳ − ζ)²`; the teacher logits are constants.
pub fn kd_loss(tape: &mut Tape, teacher: &[f64], student: Var) -> Result<Var> {
    let n = tape.value(student).numel();
    if teacher.len() != n {
        return Err(Error::shape("kd_loss", &[teacher.len()], &[n]));
    }
    let shape = tape.value(student).shape().to_vec();
    let t = tape.constant(Tensor::new(shape, teacher.to_vec())?);
    let diff = tape.sub(student, t)?;
    let sq = tape.mul(diff, diff)?;
    Ok(tape.sum(sq))
}

/// `−Σ [y ln ŷ + (1−y) ln(1−ŷ)]` with `ŷ` clamped to `[ε, 1−ε]`.
pub fn ctr_loss(tape: &mut Tape, labels: &[u8], preds: Var) -> Result<Var> {
    let n = tape.value(preds).numel();
    if labels.len() != n {
        return Err(Error::shape("ctr_loss", &[labels.len()], &[n]));
    }
    let y = labels_tensor(labels)?.reshape(tape.value(preds).shape())?;
    let not_y = y.map(|v| 1.0 - v);
    let p = tape.clamp(preds, PROB_EPS, 1.0 - PROB_EPS);
    let q = tape.affine(p, -1.0, 1.0);
    let lp = tape.log(p)?;
    let lq = tape.log(q)?;
    let y = tape.constant(y);
    let not_y = tape.constant(not_y);
    let a = tape.mul(lp, y)?;
    let b = tape.mul(lq, not_y)?;
    let s = tape.add(a, b)?;
    let s = tape.sum(s);
    Ok(tape.affine(s, -1.0, 0.0))
}

/// `L = L_KD + L_CTR`.
pub fn total_loss(tape: &mut Tape, kd: Var, ctr: Var) -> Result<Var> {
    tape.add(kd, ctr)
}

/// Plain-number versions for reporting and tests.
pub fn kd_loss_value(teacher: &[f64], student: &[f64]) -> Result<f64> {
    if teacher.len() != student.len() {
        return Err(Error::shape("kd_loss", &[teacher.len()], &[student.len()]));
    }
    Ok(teacher
        .iter()
        .zip(student)
        .map(|(t, s)| (t - s).powi(2))
        .sum())
}

pub fn ctr_loss_value(labels: &[u8], preds: &[f64]) -> Result<f64> {
    Ok(crate::eval::logloss(labels, preds)? * preds.len() as f64)
}
