use num_complex::Complex64;
use proptest::prelude::*;

use ufin::data::synth::{self, FIELDS};
use ufin::data::{read_records, write_records, FieldKind, FieldSchema, InstanceRecord, Schema};
use ufin::encoder::EmbeddingCache;
use ufin::eval::auc;
use ufin::interaction::euler_terms;
use ufin::numeric::{softmax_in_place, LayerNorm, ParamStore, Tape, Tensor};
use ufin::prompting::{
    read_prompt_dump, render, write_prompt_dump, PhraseTable, PromptTemplate, PromptVariant,
};

fn pairwise_auc(labels: &[u8], scores: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &yi) in labels.iter().enumerate() {
        for (j, &yj) in labels.iter().enumerate() {
            if yi == 1 && yj == 0 {
                den += 1.0;
                num += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Less => 0.0,
                };
            }
        }
    }
    num / den
}

/// Labels with both classes present and scores on a coarse grid.
fn scored_labels() -> impl Strategy<Value = (Vec<u8>, Vec<f64>)> {
    (2usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec(0u8..2, n)
                .prop_filter("both classes", |l| l.contains(&0) && l.contains(&1)),
            prop::collection::vec((0u32..12).prop_map(|v| v as f64 / 4.0 - 1.0), n),
        )
    })
}

fn synth_record() -> impl Strategy<Value = InstanceRecord> {
    (
        0usize..3,
        any::<u64>(),
        0u8..2,
        prop::collection::vec("[a-z0-9]{0,8}", FIELDS.len()),
    )
        .prop_map(|(domain_id, row_id, label, values)| InstanceRecord {
            domain_id,
            row_id,
            label,
            values,
        })
}

proptest! {
    #[test]
    fn auc_matches_pairwise_count((labels, scores) in scored_labels()) {
        prop_assert_eq!(auc(&labels, &scores).unwrap(), pairwise_auc(&labels, &scores));
    }

    #[test]
    fn auc_ignores_strictly_increasing_transforms((labels, scores) in scored_labels()) {
        let squashed: Vec<f64> = scores.iter().map(|s| (3.0 * s).tanh() + s.powi(3)).collect();
        prop_assert_eq!(auc(&labels, &scores).unwrap(), auc(&labels, &squashed).unwrap());
    }

    #[test]
    fn records_round_trip_through_tsv(records in prop::collection::vec(synth_record(), 0..20)) {
        // free-text values, so drop the closed vocabularies
        let fields = synth::schema()
            .fields()
            .iter()
            .map(|f| FieldSchema { vocabulary: None, ..f.clone() })
            .collect();
        let schema = Schema::new(fields).unwrap();
        let mut buf = Vec::new();
        write_records(&mut buf, &schema, &records).unwrap();
        let back = read_records(buf.as_slice(), "mem", &schema, false).unwrap();
        prop_assert!(back.skipped.is_empty());
        prop_assert_eq!(back.records, records);
    }

    #[test]
    fn prompt_dump_round_trips(prompts in prop::collection::vec((any::<u64>(), "[^\t\n\r]{0,40}"), 0..20)) {
        let mut buf = Vec::new();
        write_prompt_dump(&mut buf, &prompts).unwrap();
        prop_assert_eq!(read_prompt_dump(buf.as_slice()).unwrap(), prompts);
    }

    #[test]
    fn prompts_never_leak_anonymous_values(
        mut record in synth_record(),
        secret in "[A-Z]{12}",
        variant in prop_oneof![
            Just(PromptVariant::Base),
            Just(PromptVariant::Prompt1),
            Just(PromptVariant::Prompt2),
            Just(PromptVariant::Prompt3),
        ],
    ) {
        let schema = synth::schema();
        let anonymous = schema.indices_of_kind(FieldKind::AnonymousId);
        prop_assert!(!anonymous.is_empty());
        for &i in &anonymous {
            record.values[i] = secret.clone();
        }
        let text = render(&record, &schema, &PhraseTable::synthetic("film"), &PromptTemplate::new(variant)).unwrap();
        prop_assert!(!text.contains(&secret));
    }

    #[test]
    fn ufec_round_trips(dim in 1usize..8, rows in prop::collection::btree_map(any::<u64>(), any::<u32>(), 0..10)) {
        let mut cache = EmbeddingCache::new(dim).unwrap();
        for (&id, &seed) in &rows {
            let v: Vec<f32> = (0..dim).map(|k| (seed as f32) * 1e-6 - k as f32).collect();
            cache.insert(id, &v).unwrap();
        }
        let mut buf = Vec::new();
        cache.write(&mut buf).unwrap();
        prop_assert_eq!(buf.len(), 20 + rows.len() * (8 + 4 * dim));
        let back = EmbeddingCache::read(buf.as_slice(), "mem").unwrap();
        prop_assert_eq!(back.dim(), dim);
        for &id in rows.keys() {
            prop_assert_eq!(back.get(id).unwrap(), cache.get(id).unwrap());
        }
    }

    #[test]
    fn softmax_is_a_distribution(mut v in prop::collection::vec(-50.0f64..50.0, 1..12)) {
        let max_at = v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        softmax_in_place(&mut v);
        prop_assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(v.iter().all(|&p| (0.0..=1.0).contains(&p)));
        prop_assert!(v.iter().all(|&p| p <= v[max_at]));
    }

    #[test]
    fn layer_norm_standardizes_rows(rows in prop::collection::vec(prop::collection::vec(-20.0f64..20.0, 6), 1..5)) {
        prop_assume!(rows.iter().all(|r| r.iter().any(|&x| (x - r[0]).abs() > 1e-3)));
        let mut store = ParamStore::new();
        let ln = LayerNorm::new(&mut store, "ln", 6);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&rows).unwrap());
        let y = ln.forward(&mut tape, &store, x).unwrap();
        let out = tape.value(y);
        for r in 0..rows.len() {
            let row = out.row_slice(r);
            let mean = row.iter().sum::<f64>() / 6.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn euler_terms_match_complex_powers(
        n_u in 1usize..4,
        d in 1usize..3,
        seed in prop::collection::vec((-3.0f64..3.0, 0.3f64..2.0, 0u32..4), 12),
    ) {
        let theta: Vec<f64> = (0..n_u * d).map(|i| seed[i % 12].0).collect();
        let lambda: Vec<f64> = (0..n_u * d).map(|i| seed[(i + 5) % 12].1).collect();
        let orders: Vec<f64> = (0..n_u).map(|j| seed[j].2 as f64).collect();
        let got = euler_terms(&theta, &orders, &lambda, n_u, d).unwrap();
        for c in 0..d {
            let want = (0..n_u).fold(Complex64::new(1.0, 0.0), |acc, j| {
                acc * Complex64::from_polar(lambda[j * d + c], theta[j * d + c]).powu(orders[j] as u32)
            });
            let (re, im) = got[c];
            prop_assert!((Complex64::new(re, im) - want).norm() <= 1e-9 * want.norm().max(1e-12));
        }
    }
}
