//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Positional arguments filter criteria by substring.

use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::time::Instant;

use itertools::Itertools;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ufin::data::synth::{generate, SynthConfig, SynthOutput, MOST_INFORMATIVE_FIELD};
use ufin::data::{DomainDataset, Split};
use ufin::encoder::SemanticFusion;
use ufin::eval::{auc, EvalMode, EvalReport};
use ufin::interaction::{
    euler_terms, min_overlap_exhaustive, AdaptorIndex, AdaptorInput, EulerExpert, FeatureAdaptor,
    InteractionMoE, UniversalDecoder,
};
use ufin::model::{EncoderSpec, Mode, ModelConfig, UfinModel};
use ufin::numeric::gradcheck::{check_params, DEFAULT_STEP};
use ufin::numeric::{checkpoint, LayerNorm, ParamId, ParamStore, Tape, Tensor, Var};
use ufin::pipeline::{self, rows, StudentSpec};
use ufin::prompting::{PhraseBook, PromptTemplate, PromptVariant};
use ufin::training::{
    ctr_loss, kd_loss, pretrain_teachers, TeacherConfig, TeacherModel, TrainConfig,
};

type Check = Result<String, String>;

struct Suite {
    filters: Vec<String>,
    failed: usize,
    ran: usize,
}

impl Suite {
    fn wants(&self, name: &str) -> bool {
        self.filters.is_empty() || self.filters.iter().any(|f| name.contains(f.as_str()))
    }

    fn report(&mut self, name: &str, outcome: Check, secs: f64) {
        self.ran += 1;
        match outcome {
            Ok(detail) => println!("PASS  {name:<32} {detail} [{secs:.1}s]"),
            Err(detail) => {
                self.failed += 1;
                println!("FAIL  {name:<32} {detail} [{secs:.1}s]");
            }
        }
    }

    fn run(&mut self, name: &str, f: impl FnOnce() -> Check) {
        if !self.wants(name) {
            return;
        }
        let t = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .map_or("panicked".into(), |m| format!("panicked: {m}")))
        });
        self.report(name, outcome, t.elapsed().as_secs_f64());
    }
}

fn main() {
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut suite = Suite {
        filters,
        failed: 0,
        ran: 0,
    };
    suite.run("gradient_suite", gradient_suite);
    suite.run("euler_oracle", euler_oracle);
    suite.run("theorem1_exhaustive", theorem1_exhaustive);
    suite.run("auc_oracle", auc_oracle);
    suite.run("metric_sanity_random", metric_sanity_random);
    suite.run("metric_sanity_bayes_ceiling", metric_sanity_bayes);
    if suite.wants("end_to_end") {
        end_to_end(&mut suite);
    }
    suite.run("zero_shot", zero_shot);
    if suite.wants("prompt_ablation") {
        prompt_ablation(&mut suite);
    }
    suite.run("determinism", determinism);
    println!("{} criteria, {} failed", suite.ran, suite.failed);
    if suite.failed > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- gradients

const POINTS: u64 = 100;
const GRAD_TOL: f64 = 1e-4;

/// Random weighted sum of `y`, so every output element gets its own weight.
fn project(tape: &mut Tape, y: Var, rng: &mut ChaCha8Rng) -> Result<Var, ufin::Error> {
    let shape = tape.value(y).shape().to_vec();
    let w = tape.constant(Tensor::randn(&shape, 1.0, rng));
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

/// Jitter every parameter so checks do not sit at the initial values.
fn jitter(store: &mut ParamStore, rng: &mut ChaCha8Rng, std: f64) {
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        for v in store.get_mut(id).data_mut() {
            *v += std * rng.random::<f64>() - std / 2.0;
        }
    }
}

/// Worst error over `POINTS` random points of one operation. `setup` builds
/// a store (with the input stored as parameter `x`) and returns a closure
/// producing the scalar under test.
fn grad_check_op<S>(setup: S) -> Result<f64, String>
where
    S: Fn(
        &mut ChaCha8Rng,
    ) -> (
        ParamStore,
        Box<dyn Fn(&mut Tape, &ParamStore) -> Result<Var, ufin::Error>>,
    ),
{
    let mut worst = 0.0f64;
    for point in 0..POINTS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + point);
        let (mut store, build) = setup(&mut rng);
        let ids: Vec<ParamId> = store.ids().collect();
        let err = check_params(&mut store, &ids, DEFAULT_STEP, |t, st| build(t, st))
            .map_err(|e| e.to_string())?;
        worst = worst.max(err);
    }
    Ok(worst)
}

fn gradient_suite() -> Check {
    let t0 = Instant::now();
    let mut results: Vec<(&str, f64)> = Vec::new();

    results.push((
        "layer_norm",
        grad_check_op(|rng| {
            let mut s = ParamStore::new();
            let x = s.add("x", Tensor::randn(&[3, 5], 1.0, rng));
            let ln = LayerNorm::new(&mut s, "ln", 5);
            jitter(&mut s, rng, 0.4);
            let seed = rng.random::<u64>();
            (
                s,
                Box::new(move |t, st| {
                    let xv = t.param(st, x);
                    let y = ln.forward(t, st, xv)?;
                    project(t, y, &mut ChaCha8Rng::seed_from_u64(seed))
                }),
            )
        })?,
    ));

    results.push((
        "semantic_moe",
        grad_check_op(|rng| {
            let mut s = ParamStore::new();
            let x = s.add("x", Tensor::randn(&[2, 4], 1.0, rng));
            let fusion = SemanticFusion::new(&mut s, 3, 4, rng);
            jitter(&mut s, rng, 0.2);
            let seed = rng.random::<u64>();
            (
                s,
                Box::new(move |t, st| {
                    let xv = t.param(st, x);
                    let (z, g) = fusion.forward(t, st, xv)?;
                    let mut r = ChaCha8Rng::seed_from_u64(seed);
                    let a = project(t, z, &mut r)?;
                    let b = project(t, g, &mut r)?;
                    t.add(a, b)
                }),
            )
        })?,
    ));

    results.push((
        "decoder",
        grad_check_op(|rng| {
            let mut s = ParamStore::new();
            let x = s.add("x", Tensor::randn(&[2, 4], 1.0, rng));
            let dec = UniversalDecoder::new(&mut s, 2, 4, 3, rng).expect("decoder");
            jitter(&mut s, rng, 0.2);
            let seed = rng.random::<u64>();
            (
                s,
                Box::new(move |t, st| {
                    let xv = t.param(st, x);
                    let y = dec.forward(t, st, xv)?;
                    project(t, y, &mut ChaCha8Rng::seed_from_u64(seed))
                }),
            )
        })?,
    ));

    results.push((
        "euler_expert",
        grad_check_op(|rng| {
            let mut s = ParamStore::new();
            let theta = s.add("x", Tensor::randn(&[2, 6], 1.0, rng));
            let e = EulerExpert::new(&mut s, "euler", 3, 2, 2, rng);
            jitter(&mut s, rng, 0.6);
            let seed = rng.random::<u64>();
            (
                s,
                Box::new(move |t, st| {
                    let th = t.param(st, theta);
                    let y = e.forward(t, st, th)?;
                    project(t, y, &mut ChaCha8Rng::seed_from_u64(seed))
                }),
            )
        })?,
    ));

    results.push((
        "interaction_moe_gate",
        grad_check_op(|rng| {
            let mut s = ParamStore::new();
            let theta = s.add("x", Tensor::randn(&[2, 4], 1.0, rng));
            let z = s.add("z", Tensor::randn(&[2, 3], 1.0, rng));
            let moe = InteractionMoE::new(&mut s, 3, 2, 3, 2, 2, 2, rng).expect("moe");
            jitter(&mut s, rng, 0.4);
            let seed = rng.random::<u64>();
            (
                s,
                Box::new(move |t, st| {
                    let th = t.param(st, theta);
                    let zv = t.param(st, z);
                    let out = moe.forward(t, st, th, zv)?;
                    let mut r = ChaCha8Rng::seed_from_u64(seed);
                    let a = project(t, out.logit, &mut r)?;
                    let b = project(t, out.gate, &mut r)?;
                    t.add(a, b)
                }),
            )
        })?,
    ));

    results.push((
        "feature_adaptor",
        grad_check_op(|rng| {
            let mut s = ParamStore::new();
            let index = AdaptorIndex {
                fields: vec![0, 1],
                domains: vec![0, 1],
                features: (0..6).map(|i| (i % 2, i / 3, format!("v{i}"))).collect(),
            };
            let adaptor = FeatureAdaptor::new(&mut s, "adaptor", index);
            jitter(&mut s, rng, 1.0);
            let inputs: Vec<AdaptorInput> = (0..5)
                .map(|_| AdaptorInput {
                    domain: rng.random_range(0..2),
                    features: (0..2)
                        .map(|_| rng.random_bool(0.8).then(|| rng.random_range(0..6)))
                        .collect(),
                })
                .collect();
            let seed = rng.random::<u64>();
            (
                s,
                Box::new(move |t, st| {
                    let y = adaptor.forward(t, st, &inputs)?;
                    let p = t.sigmoid(y);
                    project(t, p, &mut ChaCha8Rng::seed_from_u64(seed))
                }),
            )
        })?,
    ));

    results.push((
        "losses",
        grad_check_op(|rng| {
            let mut s = ParamStore::new();
            let x = s.add("x", Tensor::randn(&[6, 1], 1.5, rng));
            let teacher: Vec<f64> = (0..6).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let labels: Vec<u8> = (0..6).map(|_| rng.random_range(0..2)).collect();
            (
                s,
                Box::new(move |t, st| {
                    let z = t.param(st, x);
                    let p = t.sigmoid(z);
                    let c = ctr_loss(t, &labels, p)?;
                    let k = kd_loss(t, &teacher, z)?;
                    ufin::training::total_loss(t, k, c)
                }),
            )
        })?,
    ));

    let secs = t0.elapsed().as_secs_f64();
    let worst = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let detail = format!(
        "{} ops x {POINTS} points, worst rel err {worst:.2e} ({}), {secs:.1}s",
        results.len(),
        results
            .iter()
            .map(|(n, e)| format!("{n} {e:.1e}"))
            .join(", ")
    );
    if worst < GRAD_TOL && secs < 60.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ------------------------------------------------------------------ oracles

fn euler_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n_u = rng.random_range(1..=4);
        let d = rng.random_range(1..=3);
        let n_o = rng.random_range(1..=3);
        let theta: Vec<f64> = (0..n_u * d)
            .map(|_| rng.random::<f64>() * 6.0 - 3.0)
            .collect();
        let lambda: Vec<f64> = (0..n_u * d)
            .map(|_| 0.2 + rng.random::<f64>() * 2.0)
            .collect();
        let orders: Vec<f64> = (0..n_o * n_u)
            .map(|_| rng.random_range(0..=4) as f64)
            .collect();
        let got = euler_terms(&theta, &orders, &lambda, n_u, d).map_err(|e| e.to_string())?;
        for k in 0..n_o {
            for c in 0..d {
                let mut prod = Complex64::new(1.0, 0.0);
                for j in 0..n_u {
                    let z = Complex64::from_polar(lambda[j * d + c], theta[j * d + c]);
                    prod *= z.powu(orders[k * n_u + j] as u32);
                }
                let (re, im) = got[k * d + c];
                let err = (Complex64::new(re, im) - prod).norm() / prod.norm().max(1e-12);
                worst = worst.max(err);
            }
        }
    }
    if worst < 1e-9 {
        Ok(format!("1000 cases, worst rel err {worst:.2e}"))
    } else {
        Err(format!("worst rel err {worst:.2e} >= 1e-9"))
    }
}

fn theorem1_exhaustive() -> Check {
    let mut cases = Vec::new();
    for l in 2..=8usize {
        for k in (l.div_ceil(2) + 1)..=l {
            let got = min_overlap_exhaustive(l, k).map_err(|e| e.to_string())?;
            if got != 2 * k - l {
                return Err(format!(
                    "L={l}, K={k}: min overlap {got}, expected {}",
                    2 * k - l
                ));
            }
            cases.push((l, k));
        }
    }
    let l7k5 = min_overlap_exhaustive(7, 5).map_err(|e| e.to_string())?;
    if l7k5 != 3 {
        return Err(format!("L=7, K=5 gave {l7k5}"));
    }
    Ok(format!(
        "{} (L,K) pairs, min overlap = 2K-L; L=7,K=5 -> 3",
        cases.len()
    ))
}

/// Quadratic pair count with the half-credit tie rule.
fn pairwise_auc(labels: &[u8], scores: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &yi) in labels.iter().enumerate() {
        for (j, &yj) in labels.iter().enumerate() {
            if yi == 1 && yj == 0 {
                den += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / den
}

fn auc_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut cases = 0;
    while cases < 500 {
        let n = rng.random_range(2..=200);
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        if labels.iter().all(|&y| y == labels[0]) {
            continue;
        }
        // coarse grid so ties are common
        let levels = rng.random_range(2..=20);
        let scores: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0..levels) as f64 / levels as f64)
            .collect();
        let fast = auc(&labels, &scores).map_err(|e| e.to_string())?;
        let slow = pairwise_auc(&labels, &scores);
        if fast != slow {
            return Err(format!("n={n}: fast {fast} vs pairwise {slow}"));
        }
        cases += 1;
    }
    Ok("500 random instances equal exactly".into())
}

fn metric_sanity_random() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let labels: Vec<u8> = (0..10_000).map(|i| (i % 2) as u8).collect();
    let scores: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
    let a = auc(&labels, &scores).map_err(|e| e.to_string())?;
    let detail = format!("random scores on 10^4 balanced rows: AUC {a:.4}");
    if (a - 0.5).abs() <= 0.02 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Expected AUC of scoring by `p` when labels are Bernoulli(`p`).
fn expected_auc(p: &[f64]) -> f64 {
    let mut sorted: Vec<f64> = p.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let (mut num, mut below_neg) = (0.0, 0.0);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let group = &sorted[i..j];
        let pos: f64 = group.iter().sum();
        let neg: f64 = group.iter().map(|v| 1.0 - v).sum();
        let self_pairs: f64 = group.iter().map(|v| v * (1.0 - v)).sum();
        num += pos * below_neg + 0.5 * (pos * neg - self_pairs);
        below_neg += neg;
        i = j;
    }
    let total_pos: f64 = p.iter().sum();
    let total_neg: f64 = p.iter().map(|v| 1.0 - v).sum();
    let self_pairs: f64 = p.iter().map(|v| v * (1.0 - v)).sum();
    num / (total_pos * total_neg - self_pairs)
}

fn metric_sanity_bayes() -> Check {
    let data = generate(&SynthConfig::default(), 42).map_err(|e| e.to_string())?;
    let mut lines = Vec::new();
    let mut ok = true;
    for ds in &data.datasets {
        let all: Vec<_> = Split::ALL.iter().flat_map(|&s| ds.split(s)).collect();
        let labels: Vec<u8> = all.iter().map(|r| r.label).collect();
        let probs: Vec<f64> = all.iter().map(|r| ds.oracle[&r.row_id]).collect();
        let domains = vec![ds.domain_id; all.len()];
        let report = EvalReport::from_predictions(EvalMode::InDomain, &domains, &labels, &probs)
            .map_err(|e| e.to_string())?;
        let got = report.overall.auc.ok_or("single class")?;
        let ceiling = expected_auc(&probs);
        ok &= (got - ceiling).abs() <= 0.005;
        lines.push(format!(
            "d{} {got:.4} vs ceiling {ceiling:.4}",
            ds.domain_id
        ));
    }
    let detail = format!("oracle p* scores: {}", lines.join(", "));
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ------------------------------------------------------------- experiments

const SEED: u64 = 42;

fn student_spec(mode: Mode, prompt: PromptTemplate) -> StudentSpec {
    StudentSpec {
        model: ModelConfig {
            mode,
            ..ModelConfig::default()
        },
        train: TrainConfig {
            seed: pipeline::stage_seed(SEED, "train"),
            ..TrainConfig::default()
        },
        prompt,
        encoder: EncoderSpec::default(),
        init_seed: pipeline::stage_seed(SEED, "init"),
    }
}

fn teacher_train() -> TrainConfig {
    TrainConfig {
        seed: pipeline::stage_seed(SEED, "teachers"),
        distill: false,
        ..TrainConfig::default()
    }
}

fn per_domain(r: &EvalReport) -> BTreeMap<usize, f64> {
    r.domains
        .iter()
        .map(|(d, m)| (*d, m.auc.unwrap_or(f64::NAN)))
        .collect()
}

fn fmt_domains(m: &BTreeMap<usize, f64>) -> String {
    m.iter().map(|(d, a)| format!("d{d} {a:.4}")).join(" ")
}

struct Trained {
    model: UfinModel,
    test: EvalReport,
}

fn train_eval(
    data: &SynthOutput,
    seen: &[DomainDataset],
    book: &PhraseBook,
    teachers: &[TeacherModel],
    spec: &StudentSpec,
) -> Result<Trained, String> {
    let (model, _) = pipeline::train_student(&data.schema, seen, book, teachers, spec, None)
        .map_err(|e| e.to_string())?;
    let test = rows(seen, Split::Test);
    let report = pipeline::evaluate_rows(&model, &test, book, EvalMode::InDomain)
        .map_err(|e| e.to_string())?;
    Ok(Trained {
        model,
        test: report,
    })
}

fn default_data() -> Result<(SynthOutput, PhraseBook), String> {
    let data = generate(&SynthConfig::default(), SEED).map_err(|e| e.to_string())?;
    let book = PhraseBook::synthetic(&data.item_nouns);
    Ok((data, book))
}

fn end_to_end(suite: &mut Suite) {
    let t0 = Instant::now();
    let setup = (|| -> Result<_, String> {
        let (data, book) = default_data()?;
        let teachers: Vec<TeacherModel> = pretrain_teachers(
            &data.schema,
            &data.datasets,
            &TeacherConfig::default(),
            &teacher_train(),
        )
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|(t, _)| t)
        .collect();
        Ok((data, book, teachers))
    })();
    let (data, book, teachers) = match setup {
        Ok(v) => v,
        Err(e) => {
            suite.report("end_to_end_setup", Err(e), t0.elapsed().as_secs_f64());
            return;
        }
    };
    let test_rows = rows(&data.datasets, Split::Test);

    let tf = train_eval(
        &data,
        &data.datasets,
        &book,
        &teachers,
        &student_spec(Mode::TextFeature, PromptTemplate::default()),
    );
    let t_only = train_eval(
        &data,
        &data.datasets,
        &book,
        &teachers,
        &student_spec(Mode::Text, PromptTemplate::default()),
    );
    let baseline = pipeline::train_baseline(
        &data.schema,
        &data.datasets,
        &data.datasets,
        &TrainConfig {
            seed: pipeline::stage_seed(SEED, "baseline"),
            ..TrainConfig::default()
        },
    )
    .and_then(|(lr, _)| lr.evaluate(&test_rows, EvalMode::InDomain))
    .map_err(|e| e.to_string());
    let teacher_report = pipeline::evaluate_teachers(&teachers, &test_rows, EvalMode::InDomain)
        .map_err(|e| e.to_string());
    let e2e_secs = t0.elapsed().as_secs_f64();

    let detail = format!("teachers + UFIN_t+f + UFIN_t + LR in {e2e_secs:.0}s");
    suite.report(
        "end_to_end_runtime",
        if e2e_secs < 600.0 {
            Ok(detail)
        } else {
            Err(detail)
        },
        e2e_secs,
    );
    let (a, b, c) = match (&tf, &t_only, &baseline, &teacher_report) {
        (Ok(tf), Ok(t), Ok(lr), Ok(teach)) => {
            let (s, l, g) = (per_domain(&tf.test), per_domain(lr), per_domain(teach));
            let a_ok = s.iter().all(|(d, v)| *v >= l[d] + 0.05);
            let a = format!("UFIN_t+f {} vs LR {}", fmt_domains(&s), fmt_domains(&l));
            let (tf_all, t_all) = (
                tf.test.overall.auc.unwrap_or(0.0),
                t.test.overall.auc.unwrap_or(0.0),
            );
            let b_ok = tf_all >= t_all - 0.005;
            let b = format!("mixed test AUC UFIN_t+f {tf_all:.4} vs UFIN_t {t_all:.4}");
            let c_ok = s.iter().all(|(d, v)| *v >= g[d] - 0.03);
            let c = format!(
                "student {} vs teachers {}",
                fmt_domains(&s),
                fmt_domains(&g)
            );
            (
                if a_ok { Ok(a) } else { Err(a) },
                if b_ok { Ok(b) } else { Err(b) },
                if c_ok { Ok(c) } else { Err(c) },
            )
        }
        _ => {
            let e: Vec<String> = [
                tf.as_ref().err(),
                t_only.as_ref().err(),
                baseline.as_ref().err(),
                teacher_report.as_ref().err(),
            ]
            .into_iter()
            .flatten()
            .cloned()
            .collect();
            let msg = e.join("; ");
            (Err(msg.clone()), Err(msg.clone()), Err(msg))
        }
    };
    suite.report("end_to_end_a_beats_lr", a, 0.0);
    suite.report("end_to_end_b_tf_vs_t", b, 0.0);
    suite.report("end_to_end_c_student_vs_teacher", c, 0.0);

    if let Ok(tf) = &tf {
        // TopK keeps every pair of instances sharing at least 2K - L experts
        let set_rows = rows(&data.datasets, Split::Test);
        if let Ok(backend) = tf.model.meta.encoder.open(tf.model.config().d_v) {
            if let Ok(set) =
                tf.model
                    .featurize(&set_rows[..300.min(set_rows.len())], &book, &backend)
            {
                if let Ok(sel) = tf.model.selections(&set) {
                    let c = tf.model.config();
                    let shared = ufin::interaction::verify_overlap(c.experts(), c.k(), &sel);
                    println!(
                        "info  routed experts on 300 test rows: min pairwise overlap {shared:?}"
                    );
                }
            }
        }
    }
}

fn zero_shot() -> Check {
    let (data, book) = default_data()?;
    let seen = &data.datasets[..2];
    let held: Vec<_> = data.datasets[2].test.iter().collect();
    // no teacher exists for the held-out domain, so train on labels alone
    let mut spec = student_spec(Mode::Text, PromptTemplate::default());
    spec.train.distill = false;
    let (model, _) = pipeline::train_student(&data.schema, seen, &book, &[], &spec, None)
        .map_err(|e| e.to_string())?;
    let ufin_auc = pipeline::evaluate_rows(&model, &held, &book, EvalMode::ZeroShot)
        .map_err(|e| e.to_string())?
        .overall
        .auc
        .ok_or("single class")?;
    let (lr, _) = pipeline::train_baseline(
        &data.schema,
        seen,
        &data.datasets,
        &TrainConfig {
            seed: pipeline::stage_seed(SEED, "baseline"),
            ..TrainConfig::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let lr_auc = lr
        .evaluate(&held, EvalMode::ZeroShot)
        .map_err(|e| e.to_string())?
        .overall
        .auc
        .ok_or("single class")?;
    let detail =
        format!("held-out d2: UFIN_t {ufin_auc:.4} (>= 0.60), LR {lr_auc:.4} (0.5 +- 0.03)");
    if ufin_auc >= 0.60 && (lr_auc - 0.5).abs() <= 0.03 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn prompt_ablation(suite: &mut Suite) {
    let (data, book) = match default_data() {
        Ok(v) => v,
        Err(e) => {
            suite.report("prompt_ablation_setup", Err(e), 0.0);
            return;
        }
    };
    let t = Instant::now();
    // labels only: ID teachers would hand the student the item topic
    // through a non-text channel and mask the prompt change
    let variant = |p: PromptTemplate| -> Result<f64, String> {
        let mut spec = student_spec(Mode::Text, p);
        spec.train.distill = false;
        let r = train_eval(&data, &data.datasets, &book, &[], &spec)?;
        Ok(r.test.overall.auc.unwrap_or(0.0))
    };
    let base = variant(PromptTemplate::default());
    let p2 = variant(PromptTemplate::new(PromptVariant::Prompt2));
    let p3 = variant(PromptTemplate::dropping(&[MOST_INFORMATIVE_FIELD]));
    let secs = t.elapsed().as_secs_f64();
    match (base, p2, p3) {
        (Ok(base), Ok(p2), Ok(p3)) => {
            let d3 = base - p3;
            let d2 = (base - p2).abs();
            let drop = format!(
                "dropping `{MOST_INFORMATIVE_FIELD}`: {base:.4} -> {p3:.4} (drop {d3:.4} >= 0.02)"
            );
            let mask = format!("field-name masking: {base:.4} -> {p2:.4} (change {d2:.4} < 0.01)");
            suite.report(
                "prompt_ablation_drop_field",
                if d3 >= 0.02 { Ok(drop) } else { Err(drop) },
                secs,
            );
            suite.report(
                "prompt_ablation_mask_names",
                if d2 < 0.01 { Ok(mask) } else { Err(mask) },
                0.0,
            );
        }
        (b, p2, p3) => {
            let msg = [b.err(), p2.err(), p3.err()]
                .into_iter()
                .flatten()
                .join("; ");
            suite.report("prompt_ablation_drop_field", Err(msg.clone()), secs);
            suite.report("prompt_ablation_mask_names", Err(msg), 0.0);
        }
    }
}

/// Full pipeline on a reduced configuration, twice: teacher and student
/// checkpoints and the evaluation report must match byte for byte.
fn determinism() -> Check {
    let run = || -> Result<(Vec<Vec<u8>>, String), String> {
        let cfg = SynthConfig {
            n_users: 200,
            n_items: 60,
            n_interactions: 3000,
            ..SynthConfig::default()
        };
        let data = generate(&cfg, SEED).map_err(|e| e.to_string())?;
        let book = PhraseBook::synthetic(&data.item_nouns);
        let tcfg = TrainConfig {
            epochs: 3,
            ..teacher_train()
        };
        let teachers: Vec<TeacherModel> = pretrain_teachers(
            &data.schema,
            &data.datasets,
            &TeacherConfig::default(),
            &tcfg,
        )
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|(t, _)| t)
        .collect();
        let mut spec = student_spec(Mode::TextFeature, PromptTemplate::default());
        spec.model.d_v = 32;
        spec.train.epochs = 2;
        let (model, history) =
            pipeline::train_student(&data.schema, &data.datasets, &book, &teachers, &spec, None)
                .map_err(|e| e.to_string())?;
        let report = pipeline::evaluate_rows(
            &model,
            &rows(&data.datasets, Split::Test),
            &book,
            EvalMode::InDomain,
        )
        .map_err(|e| e.to_string())?;
        let mut blobs = Vec::new();
        for t in &teachers {
            let mut b = Vec::new();
            checkpoint::write_params(&mut b, &t.store).map_err(|e| e.to_string())?;
            blobs.push(b);
        }
        let mut b = Vec::new();
        checkpoint::write_params(&mut b, &model.store).map_err(|e| e.to_string())?;
        blobs.push(b);
        let mut h = Vec::new();
        history.write_csv(&mut h).map_err(|e| e.to_string())?;
        blobs.push(h);
        Ok((blobs, report.to_json().map_err(|e| e.to_string())?))
    };
    let (a, ra) = run()?;
    let (b, rb) = run()?;
    if a == b && ra == rb {
        Ok(format!(
            "{} checkpoints/histories and the report are byte-identical",
            a.len()
        ))
    } else {
        Err("runs differ".into())
    }
}
