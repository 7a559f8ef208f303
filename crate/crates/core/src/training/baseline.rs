use crate::data::{InstanceRecord, Schema};
use crate::error::Result;
use crate::eval::{EvalMode, EvalReport};
use crate::interaction::{AdaptorIndex, AdaptorInput, FeatureAdaptor};
use crate::numeric::{sigmoid, ParamId, ParamStore, Tape};
use crate::training::{ctr_loss, fit, History, TrainConfig};

/// The feature adaptor on its own: a per-domain logistic regression over
/// one-hot categorical features.
#[derive(Debug, Clone)]
pub struct LogisticBaseline {
    pub adaptor: FeatureAdaptor,
    pub store: ParamStore,
}

impl LogisticBaseline {
    /// Vocabulary comes from `vocab_records`, which may include rows that
    /// are never trained on.
    pub fn new(schema: &Schema, domains: &[usize], vocab_records: &[&InstanceRecord]) -> Self {
        let mut store = ParamStore::new();
        let index = AdaptorIndex::build(schema, domains, vocab_records.iter().copied());
        let adaptor = FeatureAdaptor::new(&mut store, "lr", index);
        Self { adaptor, store }
    }

    pub fn encode(&self, records: &[&InstanceRecord]) -> Result<Vec<AdaptorInput>> {
        records.iter().map(|r| self.adaptor.encode(r)).collect()
    }

    pub fn probabilities(&self, records: &[&InstanceRecord]) -> Result<Vec<f64>> {
        Ok(self
            .encode(records)?
            .iter()
            .map(|x| sigmoid(self.adaptor.logit(&self.store, x)))
            .collect())
    }

    pub fn evaluate(&self, records: &[&InstanceRecord], mode: EvalMode) -> Result<EvalReport> {
        let probs = self.probabilities(records)?;
        let domains: Vec<usize> = records.iter().map(|r| r.domain_id).collect();
        let labels: Vec<u8> = records.iter().map(|r| r.label).collect();
        EvalReport::from_predictions(mode, &domains, &labels, &probs)
    }

    pub fn train(
        &mut self,
        train: &[&InstanceRecord],
        valid: &[&InstanceRecord],
        config: &TrainConfig,
    ) -> Result<History> {
        let inputs = self.encode(train)?;
        let labels: Vec<u8> = train.iter().map(|r| r.label).collect();
        let mut store = std::mem::take(&mut self.store);
        let params: Vec<ParamId> = store.ids().collect();
        let me = &*self;
        let result = fit(
            &mut store,
            &params,
            train.len(),
            config,
            |tape: &mut Tape, st, idx| {
                let batch: Vec<AdaptorInput> = idx.iter().map(|&i| inputs[i].clone()).collect();
                let y = me.adaptor.forward(tape, st, &batch)?;
                let p = tape.sigmoid(y);
                let l: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
                ctr_loss(tape, &l, p)
            },
            |st| {
                let probe = LogisticBaseline {
                    adaptor: me.adaptor.clone(),
                    store: st.clone(),
                };
                probe.evaluate(valid, EvalMode::InDomain)
            },
        );
        self.store = store;
        result
    }
}
