mod common;

use std::collections::{BTreeMap, HashSet};

use lens::finetune::{
    accuracy, build_prompt, decode_label, dr, evaluate, finetune, jsd, label_target, macro_f1, tvd, EvalReport,
    FinetuneError, HeaderField, LabeledExample, TaskKind, TaskSpec, ValueKind,
};
use lens::ingest::{to_hex_unit, Granularity};
use lens::model::{ModelParams, TrainConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Dist = BTreeMap<u32, f64>;

fn random_dist(rng: &mut ChaCha8Rng, domain: u32) -> Dist {
    let mut d = Dist::new();
    for k in 0..domain {
        if rng.random::<f64>() < 0.7 {
            d.insert(k, rng.random::<f64>() + 1e-3);
        }
    }
    if d.is_empty() {
        d.insert(rng.random_range(0..domain), 1.0);
    }
    let s: f64 = d.values().sum();
    d.values_mut().for_each(|v| *v /= s);
    d
}

/// Natural-log divergences summed over the full domain, converted to bits.
fn brute_jsd(p: &Dist, q: &Dist, domain: u32) -> f64 {
    let mut kl_p = 0.0;
    let mut kl_q = 0.0;
    for k in 0..domain {
        let a = p.get(&k).copied().unwrap_or(0.0);
        let b = q.get(&k).copied().unwrap_or(0.0);
        let m = (a + b) / 2.0;
        if a > 0.0 {
            kl_p += a * (a.ln() - m.ln());
        }
        if b > 0.0 {
            kl_q += b * (b.ln() - m.ln());
        }
    }
    (kl_p + kl_q) / 2.0 / std::f64::consts::LN_2
}

fn brute_tvd(p: &Dist, q: &Dist, domain: u32) -> f64 {
    let diff: f64 = (0..domain)
        .map(|k| (p.get(&k).copied().unwrap_or(0.0) - q.get(&k).copied().unwrap_or(0.0)).abs())
        .sum();
    diff / 2.0
}

#[test]
fn divergences_match_brute_force_sums() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let domain = rng.random_range(1..40);
        let (p, q) = (random_dist(&mut rng, domain), random_dist(&mut rng, domain));
        assert!((jsd(&p, &q).unwrap() - brute_jsd(&p, &q, domain)).abs() < 1e-9);
        assert!((tvd(&p, &q).unwrap() - brute_tvd(&p, &q, domain)).abs() < 1e-9);
    }
}

#[test]
fn divergence_landmarks() {
    let half: BTreeMap<&str, f64> = [("a", 0.5), ("b", 0.5)].into();
    let point: BTreeMap<&str, f64> = [("a", 1.0)].into();
    let other: BTreeMap<&str, f64> = [("c", 1.0)].into();
    // 1.5 - 0.75 log2 3
    assert!((jsd(&half, &point).unwrap() - 0.311_278_124_459_132_8).abs() < 1e-4);
    assert_eq!(tvd(&half, &point).unwrap(), 0.5);
    assert_eq!(jsd(&point, &other).unwrap(), 1.0);
    assert_eq!(tvd(&point, &other).unwrap(), 1.0);
    assert_eq!(jsd(&half, &half).unwrap(), 0.0);
    assert_eq!(tvd(&half, &half).unwrap(), 0.0);
    let short: BTreeMap<&str, f64> = [("a", 0.5)].into();
    assert!(matches!(jsd(&short, &half), Err(FinetuneError::NotNormalized { .. })));
}

proptest! {
    #[test]
    fn divergences_are_bounded_symmetric_metrics(seed in any::<u64>(), domain in 1u32..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, q, r) = (random_dist(&mut rng, domain), random_dist(&mut rng, domain), random_dist(&mut rng, domain));
        for f in [jsd::<u32>, tvd::<u32>] {
            let (pq, qp) = (f(&p, &q).unwrap(), f(&q, &p).unwrap());
            prop_assert!((0.0..=1.0).contains(&pq));
            prop_assert!((pq - qp).abs() < 1e-12);
            prop_assert!(f(&p, &p).unwrap() < 1e-12);
        }
        let t = |a: &Dist, b: &Dist| tvd(a, b).unwrap();
        prop_assert!(t(&p, &r) <= t(&p, &q) + t(&q, &r) + 1e-12);
        let s = |a: &Dist, b: &Dist| jsd(a, b).unwrap().sqrt();
        prop_assert!(s(&p, &r) <= s(&p, &q) + s(&q, &r) + 1e-9);
    }

    #[test]
    fn classification_metrics_are_fractions(golds in prop::collection::vec(0usize..3, 1..40), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let space: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let g: Vec<String> = golds.iter().map(|&i| space[i].clone()).collect();
        let p: Vec<String> = golds.iter().map(|_| space[rng.random_range(0..3)].clone()).collect();
        let (acc, f1) = (accuracy(&p, &g).unwrap(), macro_f1(&p, &g, &space).unwrap());
        prop_assert!((0.0..=1.0).contains(&acc) && (0.0..=1.0).contains(&f1));
        prop_assert_eq!(accuracy(&g, &g).unwrap(), 1.0);
    }

    #[test]
    fn labels_round_trip_through_targets(label in "[ -~]{1,12}") {
        let vocab = vocab();
        let ids = label_target(vocab, &label).unwrap();
        prop_assert_eq!(decode_label(vocab, &ids).unwrap(), label);
    }
}

#[test]
fn macro_f1_hand_case() {
    let space: Vec<String> = vec!["A".into(), "B".into()];
    let golds: Vec<String> = ["A", "A", "B", "B"].iter().map(|s| s.to_string()).collect();
    let preds: Vec<String> = vec!["A".into(); 4];
    assert_eq!(accuracy(&preds, &golds).unwrap(), 0.5);
    assert!((macro_f1(&preds, &golds, &space).unwrap() - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn diversity_ratio_counts_distinct_valid_values() {
    let ips: Vec<String> = ["1.2.3.4", "5.6.7.8", "9.9.9.9", "10.0.0.1"].iter().map(|s| s.to_string()).collect();
    assert_eq!(dr(&ips, ValueKind::Ip).unwrap(), 1.0);
    assert_eq!(dr(&["999.1.1.1".to_string()], ValueKind::Ip).unwrap(), 0.0);
    assert!(matches!(dr(&[], ValueKind::Port), Err(FinetuneError::EmptyList)));
}

fn generation_task() -> TaskSpec {
    TaskSpec {
        name: "dst-port".into(),
        kind: TaskKind::Generation,
        description_text: "dst port".into(),
        label_space: vec![],
        field: Some(HeaderField::DstPort),
        granularity: Granularity::Packet,
    }
}

#[test]
fn perfect_generation_gives_zero_divergence_and_matching_tables() {
    let real: Vec<String> = ["80", "443", "53", "80", "8080", "443", "80"].iter().map(|s| s.to_string()).collect();
    let r = EvalReport::from_predictions(&generation_task(), &real, &real, 0).unwrap();
    assert_eq!((r.jsd, r.tvd), (Some(0.0), Some(0.0)));
    assert!(r.topk_table.iter().all(|row| row.real_freq == row.generated_freq));
    assert!(r.cdf_table.iter().all(|row| row.real_cdf == row.generated_cdf));
    let cdf: Vec<f64> = r.cdf_table.iter().map(|row| row.real_cdf).collect();
    assert!(cdf.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(cdf.last(), Some(&1.0));
    assert_eq!(r.topk_table[0].value, "80");
}

fn vocab() -> &'static lens::tokenizer::Vocabulary {
    static V: std::sync::OnceLock<lens::tokenizer::Vocabulary> = std::sync::OnceLock::new();
    V.get_or_init(|| common::tokenized(&common::synth_anonymized(3, 24, 3), 1024).0)
}

fn toy_task() -> TaskSpec {
    TaskSpec {
        name: "toy".into(),
        kind: TaskKind::Understanding,
        description_text: "classify".into(),
        label_space: vec!["benign".into(), "malware".into()],
        field: None,
        granularity: Granularity::Flow,
    }
}

fn toy_examples(n: usize) -> Vec<LabeledExample> {
    common::synth_anonymized(4, n, 2)
        .iter()
        .map(|f| LabeledExample {
            input_unit: to_hex_unit(f, Granularity::Flow, None).unwrap().remove(0),
            label: ["benign", "malware"][(f.packets[0].payload_bytes[0] & 1) as usize].into(),
        })
        .collect()
}

#[test]
fn distinct_inputs_give_distinct_prompts() {
    let task = toy_task();
    let ex = toy_examples(40);
    let prompts: HashSet<Vec<u32>> = ex
        .iter()
        .map(|e| build_prompt(&task, &e.input_unit, vocab()).unwrap().ids)
        .collect();
    let units: HashSet<String> = ex.iter().map(|e| format!("{:?}", e.input_unit)).collect();
    assert_eq!(prompts.len(), units.len());
}

#[test]
fn more_epochs_fit_better() {
    let task = toy_task();
    let data = toy_examples(24);
    let params = ModelParams::<f64>::init(&common::toy_model_config(vocab().len())).unwrap();
    let cfg = TrainConfig {
        batch_size: 8,
        lr: 3e-3,
        warmup_steps: 0,
        total_steps: 1000,
        ..TrainConfig::default()
    };
    let last = |epochs| {
        let (p, log) = finetune(params.clone(), &data, &task, vocab(), &cfg, epochs).unwrap();
        assert_eq!(log.len(), epochs * 3);
        (p, log.last().unwrap().total)
    };
    let (_, one) = last(1);
    let (tuned, ten) = last(10);
    assert!(ten < one, "{one} -> {ten}");
    let (report, preds) = evaluate(&tuned, vocab(), &task, &data, 16).unwrap();
    assert_eq!(preds.len(), data.len());
    assert!(report.accuracy.unwrap() >= 0.0);
    assert!(matches!(
        finetune(params, &[], &task, vocab(), &cfg, 1),
        Err(FinetuneError::EmptyDataset)
    ));
}
