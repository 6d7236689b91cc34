use super::net::dropout_mask;
use super::*;
use crate::numerics::{grad_check, GradCheckConfig, Tensor};
use crate::tokenizer::{EncodedExample, BOS_ID, CLS_ID, EOS_ID, PAD_ID, SEP_ID};

fn tiny_config(arch: ArchKind) -> ModelConfig {
    ModelConfig {
        arch,
        hidden_size: 8,
        num_layers: 1,
        num_heads: 2,
        ffn_size: 32,
        max_seq_len: 4,
        vocab_size: 16,
        num_classes: 3,
        dropout: 0.0,
    }
}

fn manual_example(arch: ArchKind, words: &[u32], label: u32, t: usize) -> EncodedExample {
    let (open, close) = match arch {
        ArchKind::Encoder => (CLS_ID, SEP_ID),
        ArchKind::Decoder => (BOS_ID, EOS_ID),
    };
    let mut ids = vec![open];
    ids.extend_from_slice(words);
    ids.push(close);
    let real = ids.len();
    assert!(real <= t);
    ids.resize(t, PAD_ID);
    let mut mask = vec![1u8; real];
    mask.resize(t, 0);
    EncodedExample {
        ids,
        mask,
        label_id: label,
        last_real_pos: real - 1,
    }
}

fn random_qkv(shape: &[usize], seed: u64) -> (Tensor, Tensor, Tensor) {
    let mut rng = Rng::seed_from_u64(seed);
    let mut mk = || {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.uniform_in(-1.0, 1.0)).collect()).unwrap()
    };
    (mk(), mk(), mk())
}

#[test]
fn attention_single_key_returns_value() {
    let (q, k, v) = random_qkv(&[1, 2, 1, 4], 3);
    let out = attention(&q, &k, &v, None, None).unwrap();
    assert_eq!(out.data(), v.data());
}

#[test]
fn attention_causal_position_zero_sees_only_itself() {
    let (q, k, mut v) = random_qkv(&[1, 1, 3, 2], 4);
    let mask = causal_mask(3);
    let base = attention(&q, &k, &v, Some(&mask), None).unwrap();
    // Perturb values at positions 1 and 2; position 0's output must not move.
    for i in 2..6 {
        v.data_mut()[i] += 7.5;
    }
    let perturbed = attention(&q, &k, &v, Some(&mask), None).unwrap();
    assert_eq!(base.data()[0].to_bits(), perturbed.data()[0].to_bits());
    assert_eq!(base.data()[1].to_bits(), perturbed.data()[1].to_bits());
    assert_ne!(base.data()[4], perturbed.data()[4]);
}

#[test]
fn attention_uniform_scores_average_visible_values() {
    // q.k identical for every pair -> softmax uniform over visible keys.
    let t = 3;
    let q = Tensor::from_vec(&[1, 1, t, 2], vec![1.0; t * 2]).unwrap();
    let k = Tensor::from_vec(&[1, 1, t, 2], vec![1.0; t * 2]).unwrap();
    let v = Tensor::from_vec(&[1, 1, t, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    let out = attention(&q, &k, &v, None, None).unwrap();
    for row in 0..t {
        assert!((out.data()[row * 2] - 3.0).abs() < 1e-12);
        assert!((out.data()[row * 2 + 1] - 4.0).abs() < 1e-12);
    }
    // Padding key 2 away leaves the mean of the first two values.
    let pad = Tensor::from_vec(&[1, t], vec![1.0, 1.0, 0.0]).unwrap();
    let out = attention(&q, &k, &v, None, Some(&pad)).unwrap();
    assert!((out.data()[0] - 2.0).abs() < 1e-12);
    assert!((out.data()[1] - 3.0).abs() < 1e-12);
}

#[test]
fn attention_rejects_mismatched_shapes() {
    let (q, k, _) = random_qkv(&[1, 2, 3, 4], 5);
    let v = Tensor::zeros(&[1, 2, 3, 5]);
    assert!(matches!(
        attention(&q, &k, &v, None, None),
        Err(ModelError::Shape { .. })
    ));
    let (q, k, v) = random_qkv(&[1, 2, 3, 4], 5);
    let bad_mask = Tensor::zeros(&[2, 2]);
    assert!(attention(&q, &k, &v, Some(&bad_mask), None).is_err());
}

#[test]
fn forward_logits_have_batch_by_classes_shape() {
    for arch in [ArchKind::Encoder, ArchKind::Decoder] {
        let model = ClassifierModel::init(tiny_config(arch), 0, 9).unwrap();
        let examples = vec![
            manual_example(arch, &[7, 8], 0, 4),
            manual_example(arch, &[9], 1, 4),
        ];
        let batch = Batch::from_slice(&examples).unwrap();
        let fwd = model.forward(&batch, None).unwrap();
        assert_eq!(fwd.logits.len(), 2 * 3);
        assert!(fwd.logits.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn forward_rejects_sequences_beyond_max_len() {
    let model = ClassifierModel::init(tiny_config(ArchKind::Encoder), 0, 9).unwrap();
    let long = manual_example(ArchKind::Encoder, &[7, 8, 9], 0, 5);
    let batch = Batch::from_slice(&[long]).unwrap();
    assert!(matches!(
        model.forward(&batch, None),
        Err(ModelError::SequenceTooLong { got: 5, max: 4 })
    ));
}

#[test]
fn forward_rejects_out_of_vocab_token_ids() {
    let model = ClassifierModel::init(tiny_config(ArchKind::Encoder), 0, 9).unwrap();
    let bad = manual_example(ArchKind::Encoder, &[99], 0, 4);
    let batch = Batch::from_slice(&[bad]).unwrap();
    assert!(matches!(
        model.forward(&batch, None),
        Err(ModelError::TokenOutOfRange { id: 99, .. })
    ));
}

#[test]
fn logits_are_bitwise_invariant_to_trailing_padding() {
    // Same sentence encoded with different pad counts -> identical logits.
    for arch in [ArchKind::Encoder, ArchKind::Decoder] {
        let config = ModelConfig {
            max_seq_len: 16,
            ..tiny_config(arch)
        };
        let model = ClassifierModel::init(config, 0, 13).unwrap();
        let short = manual_example(arch, &[7, 8, 9], 0, 6);
        let long = manual_example(arch, &[7, 8, 9], 0, 16);
        let a = model
            .forward(&Batch::from_slice(&[short]).unwrap(), None)
            .unwrap();
        let b = model
            .forward(&Batch::from_slice(&[long]).unwrap(), None)
            .unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.logits), bits(&b.logits), "arch {arch}");
    }
}

#[test]
fn decoder_hidden_states_are_causal_bitwise() {
    let config = ModelConfig {
        num_layers: 2,
        max_seq_len: 8,
        ..tiny_config(ArchKind::Decoder)
    };
    let model = ClassifierModel::init(config, 0, 17).unwrap();
    let base_ex = manual_example(ArchKind::Decoder, &[7, 8, 9, 10, 11, 12], 0, 8);
    let mut changed_ex = base_ex.clone();
    // Perturb everything after position 3.
    for p in 4..8 {
        changed_ex.ids[p] = 15 - changed_ex.ids[p] % 4;
    }
    let a = model
        .forward(&Batch::from_slice(&[base_ex]).unwrap(), None)
        .unwrap();
    let b = model
        .forward(&Batch::from_slice(&[changed_ex]).unwrap(), None)
        .unwrap();
    let c = model.config().hidden_size;
    for layer in 0..a.num_hidden_states() {
        let ha = a.hidden_state(layer);
        let hb = b.hidden_state(layer);
        for pos in 0..=3 {
            for j in 0..c {
                assert_eq!(
                    ha[pos * c + j].to_bits(),
                    hb[pos * c + j].to_bits(),
                    "layer {layer} pos {pos}"
                );
            }
        }
    }
}

#[test]
fn encoder_logits_react_to_non_cls_tokens() {
    let model = ClassifierModel::init(tiny_config(ArchKind::Encoder), 0, 23).unwrap();
    let a = manual_example(ArchKind::Encoder, &[7, 8], 0, 4);
    let mut b = a.clone();
    b.ids[1] = 9;
    let fa = model.forward(&Batch::from_slice(&[a]).unwrap(), None).unwrap();
    let fb = model.forward(&Batch::from_slice(&[b]).unwrap(), None).unwrap();
    assert_ne!(fa.logits, fb.logits);
}

#[test]
fn encoder_with_only_cls_pools_that_position() {
    let config = tiny_config(ArchKind::Encoder);
    let model = ClassifierModel::init(config, 0, 29).unwrap();
    let ex = EncodedExample {
        ids: vec![CLS_ID, SEP_ID, PAD_ID, PAD_ID],
        mask: vec![1, 1, 0, 0],
        label_id: 0,
        last_real_pos: 1,
    };
    let fwd = model.forward(&Batch::from_slice(&[ex]).unwrap(), None).unwrap();
    let c = model.config().hidden_size;
    assert_eq!(&fwd.pooled()[..c], &fwd.normed_hidden()[..c]);
}

#[test]
fn count_parameters_matches_enumeration() {
    for arch in [ArchKind::Encoder, ArchKind::Decoder] {
        for config in [
            tiny_config(arch),
            ModelConfig::desk(arch),
            ModelConfig {
                num_layers: 3,
                num_heads: 8,
                ..ModelConfig::desk(arch)
            },
        ] {
            let model = ClassifierModel::init(config.clone(), 0, 1).unwrap();
            assert_eq!(count_parameters(&config), model.num_parameters());
        }
    }
}

#[test]
fn doubling_layers_adds_exactly_one_block_of_parameters_per_layer() {
    let base = ModelConfig::desk(ArchKind::Encoder);
    let doubled = ModelConfig {
        num_layers: base.num_layers * 2,
        ..base.clone()
    };
    let single = ModelConfig {
        num_layers: 1,
        ..base.clone()
    };
    let zero_block = count_parameters(&ModelConfig {
        num_layers: 1,
        ..base.clone()
    }) - count_parameters(&single);
    assert_eq!(zero_block, 0);
    let per_layer = count_parameters(&ModelConfig {
        num_layers: 2,
        ..base.clone()
    }) - count_parameters(&single);
    assert_eq!(
        count_parameters(&doubled) - count_parameters(&base),
        per_layer * base.num_layers as u64
    );
}

#[test]
fn bert_base_like_preset_lands_near_110m_parameters() {
    let count = count_parameters(&ModelConfig::bert_base_like()) as f64;
    let target = 110e6;
    assert!(
        (count - target).abs() <= 0.15 * target,
        "count {count} not within 15% of {target}"
    );
}

#[test]
fn config_validation_rejects_bad_shapes() {
    let mut config = tiny_config(ArchKind::Encoder);
    config.num_heads = 3; // 8 % 3 != 0
    assert!(config.validate().is_err());
    let mut config = tiny_config(ArchKind::Encoder);
    config.dropout = 1.0;
    assert!(config.validate().is_err());
    let mut config = tiny_config(ArchKind::Encoder);
    config.max_seq_len = 2;
    assert!(config.validate().is_err());
}

#[test]
fn checkpoint_roundtrip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ctag");
    let model = ClassifierModel::init(tiny_config(ArchKind::Decoder), 0xfeed, 31).unwrap();
    save_checkpoint(&model, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.config(), model.config());
    assert_eq!(loaded.vocab_hash(), 0xfeed);
    let ex = manual_example(ArchKind::Decoder, &[7, 8], 1, 4);
    let batch = Batch::from_slice(&[ex]).unwrap();
    let a = model.forward(&batch, None).unwrap();
    let b = loaded.forward(&batch, None).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.logits), bits(&b.logits));
}

#[test]
fn checkpoint_corruption_yields_distinct_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ctag");
    let model = ClassifierModel::init(tiny_config(ArchKind::Encoder), 7, 31).unwrap();
    save_checkpoint(&model, &path).unwrap();
    let original = std::fs::read(&path).unwrap();

    let mut bad_magic = original.clone();
    bad_magic[0] = b'X';
    std::fs::write(&path, &bad_magic).unwrap();
    assert!(matches!(
        load_checkpoint(&path),
        Err(ModelError::NotACheckpoint)
    ));

    let mut bad_version = original.clone();
    bad_version[4] = 99;
    std::fs::write(&path, &bad_version).unwrap();
    assert!(matches!(
        load_checkpoint(&path),
        Err(ModelError::VersionMismatch(99))
    ));

    let truncated = &original[..original.len() - 9];
    std::fs::write(&path, truncated).unwrap();
    assert!(matches!(
        load_checkpoint(&path),
        Err(ModelError::Truncated { .. })
    ));

    let mut trailing = original.clone();
    trailing.extend_from_slice(&[0u8; 4]);
    std::fs::write(&path, &trailing).unwrap();
    assert!(matches!(
        load_checkpoint(&path),
        Err(ModelError::TrailingBytes(4))
    ));
}

#[test]
fn vocab_hash_mismatch_is_detected() {
    let corpus: Vec<crate::corpus::LabeledSentence> = ["a b", "c d"]
        .iter()
        .map(|s| crate::corpus::LabeledSentence {
            text: s.to_string(),
            label: "x".to_string(),
        })
        .collect();
    let vocab_a = crate::tokenizer::build_vocab(&corpus[..1], 8).unwrap();
    let vocab_b = crate::tokenizer::build_vocab(&corpus[1..], 8).unwrap();
    let model =
        ClassifierModel::init(tiny_config(ArchKind::Encoder), vocab_a.content_hash(), 3).unwrap();
    assert!(model.verify_vocab(&vocab_a).is_ok());
    assert!(matches!(
        model.verify_vocab(&vocab_b),
        Err(ModelError::VocabHashMismatch { .. })
    ));
}

/// Shared harness: finite-difference check of d(cross_entropy(forward))/d(params).
pub(crate) fn end_to_end_grad_check(arch: ArchKind, seed: u64) -> f64 {
    let config = tiny_config(arch);
    let mut rng = Rng::seed_from_u64(seed ^ 0x5eed);
    let mut model = ClassifierModel::init(config, 0, seed).unwrap();
    let examples: Vec<EncodedExample> = (0..2)
        .map(|i| {
            let words: Vec<u32> = (0..(1 + rng.below(2)))
                .map(|_| 6 + rng.below(10) as u32)
                .collect();
            manual_example(arch, &words, (i % 3) as u32, 4)
        })
        .collect();
    let batch = Batch::from_slice(&examples).unwrap();
    let mut params = model.export_params();
    let cfg = GradCheckConfig {
        step: 1e-5,
        tolerance: 1e-4,
        max_coords_per_param: 32,
        seed,
    };
    let report = grad_check(
        |params, want_grad| {
            model.import_params(params).expect("shapes preserved");
            if want_grad {
                model.zero_grads();
                let fwd = model.forward(&batch, None).expect("forward");
                let logits = Tensor::from_vec(
                    &[batch.batch_size, model.config().num_classes],
                    fwd.logits.clone(),
                )?;
                let (loss, dlogits) =
                    crate::numerics::cross_entropy_backward(&logits, &batch.labels)?;
                model
                    .backward(&batch, &fwd, dlogits.data())
                    .expect("backward");
                model.export_grads_into(params).expect("grads exported");
                Ok(loss)
            } else {
                let fwd = model.forward(&batch, None).expect("forward");
                let logits = Tensor::from_vec(
                    &[batch.batch_size, model.config().num_classes],
                    fwd.logits.clone(),
                )?;
                crate::numerics::cross_entropy(&logits, &batch.labels)
            }
        },
        &mut params,
        &cfg,
    )
    .expect("grad check runs");
    report.max_rel_error
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    for arch in [ArchKind::Encoder, ArchKind::Decoder] {
        let err = end_to_end_grad_check(arch, 12345);
        assert!(err < 1e-4, "{arch}: max rel error {err}");
    }
}

#[test]
fn eval_forward_is_deterministic_and_dropout_mask_is_unbiased() {
    let model = ClassifierModel::init(
        ModelConfig {
            dropout: 0.1,
            ..tiny_config(ArchKind::Encoder)
        },
        0,
        41,
    )
    .unwrap();
    let ex = manual_example(ArchKind::Encoder, &[7, 8], 0, 4);
    let batch = Batch::from_slice(&[ex]).unwrap();
    let a = model.forward(&batch, None).unwrap();
    let b = model.forward(&batch, None).unwrap();
    assert_eq!(a.logits, b.logits);

    // Inverted dropout: the mask averages to 1, so train-mode activations
    // match eval activations in expectation.
    let p = 0.25;
    let mut rng = Rng::seed_from_u64(99);
    let samples = 20_000;
    let mut mean = 0.0;
    for _ in 0..samples {
        mean += dropout_mask(&mut rng, 1, p)[0];
    }
    mean /= samples as f64;
    // std of one mask value is sqrt(p/(1-p)) ~ 0.577; 4 sigma over 20k draws.
    let tolerance = 4.0 * (p / (1.0 - p) as f64).sqrt() / (samples as f64).sqrt();
    assert!((mean - 1.0).abs() < tolerance, "mean {mean}");
}

#[test]
fn training_mode_consumes_rng_and_changes_activations() {
    let model = ClassifierModel::init(
        ModelConfig {
            dropout: 0.5,
            ..tiny_config(ArchKind::Encoder)
        },
        0,
        43,
    )
    .unwrap();
    let ex = manual_example(ArchKind::Encoder, &[7, 8], 0, 4);
    let batch = Batch::from_slice(&[ex]).unwrap();
    let eval = model.forward(&batch, None).unwrap();
    let mut rng = Rng::seed_from_u64(3);
    let train = model.forward(&batch, Some(&mut rng)).unwrap();
    assert_ne!(eval.logits, train.logits);
    // Same rng seed -> same dropout draw.
    let mut rng2 = Rng::seed_from_u64(3);
    let train2 = model.forward(&batch, Some(&mut rng2)).unwrap();
    assert_eq!(train.logits, train2.logits);
}

#[test]
fn predict_breaks_ties_toward_lowest_class_and_normalizes_probs() {
    let corpus: Vec<crate::corpus::LabeledSentence> = vec![crate::corpus::LabeledSentence {
        text: "merhaba dünya".to_string(),
        label: "x".to_string(),
    }];
    let vocab = crate::tokenizer::build_vocab(&corpus, 8).unwrap();
    let labels = crate::corpus::LabelVocab::from_labels(["alpha", "beta", "gamma"]).unwrap();
    let mut model =
        ClassifierModel::init(tiny_config(ArchKind::Encoder), vocab.content_hash(), 47).unwrap();
    // Zero head => all logits equal => tie resolves to class 0.
    {
        let mut params = model.params_mut();
        let head_w = params.len() - 2;
        for idx in [head_w, head_w + 1] {
            params[idx].data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let pred = predict(&model, "Merhaba, dünya!", CaseMode::Uncased, &vocab, &labels).unwrap();
    assert_eq!(pred.label, "alpha");
    assert_eq!(pred.label_id, 0);
    let sum: f64 = pred.probs.iter().sum();
    assert!((sum - 1.0).abs() < 1e-12);

    // Empty-after-normalization input is an error.
    assert!(matches!(
        predict(&model, "123 ?!", CaseMode::Uncased, &vocab, &labels),
        Err(ModelError::EmptyInput)
    ));

    // Label set size must match the model.
    let two = crate::corpus::LabelVocab::from_labels(["a", "b"]).unwrap();
    assert!(matches!(
        predict(&model, "merhaba", CaseMode::Uncased, &vocab, &two),
        Err(ModelError::LabelCountMismatch { .. })
    ));
}

#[test]
fn overfit_model_recalls_memorized_sentences() {
    use crate::trainer::{adam_step, AdamState, TrainConfig};
    let sentences = [
        ("fiyat bilgisi almak istiyorum", "pricing"),
        ("reklam vermek istiyorum", "ads"),
        ("fiyat listesi var mı", "pricing"),
        ("reklam kampanyası nasıl", "ads"),
    ];
    let corpus: Vec<crate::corpus::LabeledSentence> = sentences
        .iter()
        .map(|(t, l)| crate::corpus::LabeledSentence {
            text: t.to_string(),
            label: l.to_string(),
        })
        .collect();
    let labels = crate::corpus::LabelVocab::from_records(&corpus).unwrap();
    let vocab = crate::tokenizer::build_vocab(&corpus, 32).unwrap();
    let config = ModelConfig {
        arch: ArchKind::Encoder,
        hidden_size: 16,
        num_layers: 1,
        num_heads: 2,
        ffn_size: 64,
        max_seq_len: 8,
        vocab_size: vocab.size(),
        num_classes: 2,
        dropout: 0.0,
    };
    let mut model = ClassifierModel::init(config, vocab.content_hash(), 53).unwrap();
    let examples: Vec<EncodedExample> = corpus
        .iter()
        .map(|r| {
            let mut ex =
                crate::tokenizer::encode(&r.text, &vocab, 8, ArchKind::Encoder).unwrap();
            ex.label_id = labels.id(&r.label).unwrap() as u32;
            ex
        })
        .collect();
    let batch = Batch::from_slice(&examples).unwrap();
    let cfg = TrainConfig::default();
    let mut state = AdamState::new(&model);
    for _ in 0..120 {
        model.zero_grads();
        let fwd = model.forward(&batch, None).unwrap();
        let logits = Tensor::from_vec(&[4, 2], fwd.logits.clone()).unwrap();
        let (_, dlogits) = crate::numerics::cross_entropy_backward(&logits, &batch.labels).unwrap();
        model.backward(&batch, &fwd, dlogits.data()).unwrap();
        adam_step(&mut model, &mut state, &cfg).unwrap();
    }
    for (text, gold) in sentences {
        let pred = predict(&model, text, CaseMode::Uncased, &vocab, &labels).unwrap();
        assert_eq!(pred.label, gold, "sentence '{text}'");
    }
}
