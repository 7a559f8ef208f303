//! Glue for the end-to-end runs shared by the command line and the
//! experiment suite: teacher pretraining, student training and scoring over
//! whole domain datasets.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{DomainDataset, InstanceRecord, Schema, Split};
use crate::error::Result;
use crate::eval::{EvalMode, EvalReport};
use crate::model::{EncoderSpec, ModelConfig, UfinModel};
use crate::prompting::{PhraseBook, PromptTemplate};
use crate::training::{
    teacher_logits, train_ufin, History, LogisticBaseline, TeacherModel, TrainConfig,
};

/// Seed for a named stage, derived from the root seed.
pub fn stage_seed(root: u64, stage: &str) -> u64 {
    let h = stage.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    });
    root ^ h.rotate_left(17)
}

/// Rows of `split` across `datasets`, domain by domain.
pub fn rows(datasets: &[DomainDataset], split: Split) -> Vec<&InstanceRecord> {
    datasets.iter().flat_map(|d| d.split(split)).collect()
}

/// Everything that shapes a student run besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentSpec {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub prompt: PromptTemplate,
    pub encoder: EncoderSpec,
    /// Seeds parameter initialisation; `train.seed` drives shuffling.
    pub init_seed: u64,
}

/// Build and train a student on the mixed train split of `datasets`,
/// validating on their mixed valid split. Teachers are consulted only when
/// `spec.train.distill`. Parameters matching `init` by name and shape are
/// copied in before training (fine-tuning a pretrained model).
pub fn train_student(
    schema: &Schema,
    datasets: &[DomainDataset],
    book: &PhraseBook,
    teachers: &[TeacherModel],
    spec: &StudentSpec,
    init: Option<&UfinModel>,
) -> Result<(UfinModel, History)> {
    let train = rows(datasets, Split::Train);
    let valid = rows(datasets, Split::Valid);
    let domains: Vec<usize> = datasets.iter().map(|d| d.domain_id).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.init_seed);
    let mut model = UfinModel::new(
        &spec.model,
        schema,
        &domains,
        &train,
        spec.prompt.clone(),
        spec.encoder.clone(),
        &mut rng,
    )?;
    if let Some(src) = init {
        model.init_from(src);
    }
    let backend = model.meta.encoder.open(model.config().d_v)?;
    let train_set = model.featurize(&train, book, &backend)?;
    let valid_set = model.featurize(&valid, book, &backend)?;
    let guidance = if spec.train.distill {
        Some(teacher_logits(teachers, &train)?)
    } else {
        None
    };
    let history = train_ufin(
        &mut model,
        &train_set,
        &valid_set,
        guidance.as_deref(),
        &spec.train,
    )?;
    Ok((model, history))
}

/// Score `records` with `model`, featurizing through its own encoder.
pub fn evaluate_rows(
    model: &UfinModel,
    records: &[&InstanceRecord],
    book: &PhraseBook,
    mode: EvalMode,
) -> Result<EvalReport> {
    let backend = model.meta.encoder.open(model.config().d_v)?;
    let set = model.featurize(records, book, &backend)?;
    crate::eval::evaluate(model, &set, mode)
}

/// Teachers scored on `records` (each row by its own domain's teacher).
pub fn evaluate_teachers(
    teachers: &[TeacherModel],
    records: &[&InstanceRecord],
    mode: EvalMode,
) -> Result<EvalReport> {
    let probs: Vec<f64> = teacher_logits(teachers, records)?
        .into_iter()
        .map(crate::numeric::sigmoid)
        .collect();
    let domains: Vec<usize> = records.iter().map(|r| r.domain_id).collect();
    let labels: Vec<u8> = records.iter().map(|r| r.label).collect();
    EvalReport::from_predictions(mode, &domains, &labels, &probs)
}

/// The feature adaptor trained alone on the mixed train split. Its
/// vocabulary covers `vocab` so unseen domains score a constant.
pub fn train_baseline(
    schema: &Schema,
    datasets: &[DomainDataset],
    vocab: &[DomainDataset],
    config: &TrainConfig,
) -> Result<(LogisticBaseline, History)> {
    let domains: Vec<usize> = vocab.iter().map(|d| d.domain_id).collect();
    let vocab_rows = rows(vocab, Split::Train);
    let mut lr = LogisticBaseline::new(schema, &domains, &vocab_rows);
    let h = lr.train(
        &rows(datasets, Split::Train),
        &rows(datasets, Split::Valid),
        config,
    )?;
    Ok((lr, h))
}
