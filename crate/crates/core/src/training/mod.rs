//! Teacher pretraining, distillation and CTR losses, and the optimisation loop.

mod baseline;
mod losses;
mod teacher;

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use baseline::LogisticBaseline;
pub use losses::{ctr_loss, ctr_loss_value, kd_loss, kd_loss_value, total_loss};
pub use teacher::{pretrain_teachers, teacher_logits, TeacherConfig, TeacherMeta, TeacherModel};

use crate::error::{Error, Result};
use crate::eval::{EvalMode, EvalReport};
use crate::model::{FeatureSet, UfinModel};
use crate::numeric::{sigmoid, AdamConfig, AdamState, ParamId, ParamStore, Tape, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without a validation-AUC improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Add the distillation term when teacher logits are available.
    pub distill: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 1e-5,
            batch_size: 256,
            epochs: 50,
            patience: 5,
            seed: 42,
            distill: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.weight_decay < 0.0 || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid(
                "training needs lr > 0, weight_decay >= 0, batch_size > 0 and epochs > 0",
            ));
        }
        Ok(())
    }

    /// Learning-rate and weight-decay values worth searching over.
    pub const LR_GRID: [f64; 3] = [1e-3, 1e-4, 1e-5];
    pub const WEIGHT_DECAY_GRID: [f64; 3] = [1e-3, 1e-5, 1e-7];

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-instance training loss.
    pub train_loss: f64,
    pub valid: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (1-based), 0 if none.
    pub best_epoch: usize,
}

impl History {
    pub fn best_auc(&self) -> Option<f64> {
        self.epochs
            .get(self.best_epoch.checked_sub(1)?)
            .and_then(|e| e.valid.overall.auc)
    }

    /// `epoch,train_loss,val_auc,val_logloss,d{k}_auc,d{k}_logloss,...`
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let domains: Vec<usize> = self
            .epochs
            .first()
            .map(|e| e.valid.domains.keys().copied().collect())
            .unwrap_or_default();
        let mut header = vec![
            "epoch".to_string(),
            "train_loss".into(),
            "val_auc".into(),
            "val_logloss".into(),
        ];
        for d in &domains {
            header.push(format!("d{d}_auc"));
            header.push(format!("d{d}_logloss"));
        }
        out.write_record(&header)?;
        let f = |a: Option<f64>| a.map_or(String::new(), |v| format!("{v:?}"));
        for e in &self.epochs {
            let mut row = vec![
                e.epoch.to_string(),
                format!("{:?}", e.train_loss),
                f(e.valid.overall.auc),
                format!("{:?}", e.valid.overall.logloss),
            ];
            for d in &domains {
                let m = &e.valid.domains[d];
                row.push(f(m.auc));
                row.push(format!("{:?}", m.logloss));
            }
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Mini-batch Adam with early stopping on validation AUC. The best
/// parameters are left in `store`.
///
/// `batch_loss` returns the summed loss of a batch; `validate` scores the
/// validation split.
pub fn fit<L, V>(
    store: &mut ParamStore,
    params: &[ParamId],
    n_train: usize,
    config: &TrainConfig,
    mut batch_loss: L,
    mut validate: V,
) -> Result<History>
where
    L: FnMut(&mut Tape, &ParamStore, &[usize]) -> Result<Var>,
    V: FnMut(&ParamStore) -> Result<EvalReport>,
{
    config.validate()?;
    if n_train == 0 {
        return Err(Error::invalid("empty training set"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(config.adam(), store);
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut history = History::default();
    let mut best: Option<(f64, ParamStore)> = None;
    let mut stale = 0;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let mut tape = Tape::new();
            let loss = batch_loss(&mut tape, store, batch)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    detail: format!("loss {value} over {} rows", batch.len()),
                });
            }
            total += value;
            let grads = tape.backward(loss);
            adam.step(store, &grads, params)?;
        }
        let valid = validate(store)?;
        let auc = valid.overall.auc.unwrap_or(0.5);
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: total / n_train as f64,
            valid,
        });
        if best.as_ref().is_none_or(|(b, _)| auc > *b) {
            best = Some((auc, store.clone()));
            history.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    if let Some((_, params)) = best {
        *store = params;
    }
    Ok(history)
}

/// Train the student on a mixed multi-domain set. `teacher` holds one
/// guidance logit per training row and is required when `config.distill`.
pub fn train_ufin(
    model: &mut UfinModel,
    train: &FeatureSet,
    valid: &FeatureSet,
    teacher: Option<&[f64]>,
    config: &TrainConfig,
) -> Result<History> {
    let teacher = match (config.distill, teacher) {
        (true, Some(t)) if t.len() == train.len() => Some(t),
        (true, Some(t)) => return Err(Error::shape("teacher logits", &[t.len()], &[train.len()])),
        (true, None) => {
            let d = train.domains.first().copied().unwrap_or(0);
            return Err(Error::MissingTeacher(d));
        }
        (false, _) => None,
    };
    let mut store = std::mem::take(&mut model.store);
    let params: Vec<ParamId> = store.ids().collect();
    let m = &*model;
    let result = fit(
        &mut store,
        &params,
        train.len(),
        config,
        |tape, st, idx| {
            let out = m.forward_with(st, tape, train, idx)?;
            let labels: Vec<u8> = idx.iter().map(|&i| train.labels[i]).collect();
            let preds = tape.sigmoid(out.logit);
            let ctr = ctr_loss(tape, &labels, preds)?;
            match teacher {
                Some(t) => {
                    let tl: Vec<f64> = idx.iter().map(|&i| t[i]).collect();
                    let kd = kd_loss(tape, &tl, out.zeta)?;
                    total_loss(tape, kd, ctr)
                }
                None => Ok(ctr),
            }
        },
        |st| {
            let s = m.score_with(st, valid)?;
            let probs: Vec<f64> = s.logit.iter().map(|&z| sigmoid(z)).collect();
            EvalReport::from_predictions(EvalMode::InDomain, &valid.domains, &valid.labels, &probs)
        },
    );
    model.store = store;
    result
}
