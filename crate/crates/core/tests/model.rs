mod common;

use common::{max_abs_diff, random_spec};
use lgfa::model::{Ablation, ForwardOptions, LgfaConfig, LgfaModel, Variant};
use lgfa::nn::{ParamStore, SelfAttention};
use lgfa::tensor::{Graph, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn traced(model: &LgfaModel, cfg: &LgfaConfig, seed: u64, opts: ForwardOptions) -> (Vec<f64>, lgfa::model::ForwardTrace) {
    let spec = random_spec(cfg, seed);
    let mut g = Graph::new();
    let out = model
        .forward(
            &mut g,
            &spec,
            ForwardOptions {
                capture_trace: true,
                ..opts
            },
        )
        .unwrap();
    (g.value(out.logits).data().to_vec(), out.trace.unwrap())
}

#[test]
fn default_shape_chain() {
    let cfg = LgfaConfig::default();
    let model = LgfaModel::new(cfg.clone(), 0).unwrap();
    let (logits, trace) = traced(&model, &cfg, 1, ForwardOptions::default());
    assert_eq!(trace.branches.len(), 1);
    let b = &trace.branches[0];
    assert_eq!(b.frame_embeddings.as_ref().unwrap().shape(), [128, 16]);
    assert_eq!(b.frame_encoding.as_ref().unwrap().shape(), [128, 16]);
    assert_eq!(b.segment_embeddings.shape(), [16, 256]);
    assert_eq!(b.segment_sequence.shape(), [17, 256]);
    assert_eq!(b.output.shape(), [17, 256]);
    assert_eq!(trace.classifier_input.unwrap().shape(), [1, 256]);
    assert_eq!(logits.len(), cfg.n_classes);
    // 7 frame blocks and 7 segment blocks, 4 heads each.
    assert_eq!(b.attention.len(), 56);
    assert_eq!(b.attention[0].shape(), [128, 128]);
    assert_eq!(b.attention[55].shape(), [17, 17]);
}

#[test]
fn token_counts_and_classifier_widths() {
    let expect = [
        (Variant::TimeOnly, Ablation::Full, vec![17, 128], 256),
        (Variant::FrequencyOnly, Ablation::Full, vec![9, 64], 256),
        (Variant::TimeFrequency, Ablation::Full, vec![17, 128, 9, 64], 512),
        (Variant::TimeOnly, Ablation::FrameOnly, vec![129], 256),
        (Variant::TimeOnly, Ablation::SegmentOnly, vec![17], 256),
        (Variant::TimeOnly, Ablation::VitSquare, vec![33], 256),
    ];
    for (variant, ablation, tokens, width) in expect {
        let cfg = LgfaConfig {
            variant,
            ablation,
            ..LgfaConfig::default()
        };
        let model = LgfaModel::new(cfg.clone(), 0).unwrap();
        let s = model.summary();
        assert_eq!(s.token_counts, tokens, "{variant:?}/{ablation:?}");
        assert_eq!(s.classifier_input_width, width, "{variant:?}/{ablation:?}");
        assert_eq!(model.logits(&random_spec(&cfg, 0)).unwrap().len(), 4);
    }
}

#[test]
fn time_frequency_concatenates_class_tokens() {
    let cfg = LgfaConfig {
        variant: Variant::TimeFrequency,
        ..LgfaConfig::gradcheck()
    };
    let model = LgfaModel::new(cfg.clone(), 3).unwrap();
    let (_, trace) = traced(&model, &cfg, 4, ForwardOptions::default());
    let input = trace.classifier_input.unwrap();
    assert_eq!(input.shape(), [1, 16]);
    let time_cls = trace.branches[0].output.row(0);
    let freq_cls = trace.branches[1].output.row(0);
    assert_eq!(&input.data()[..8], time_cls);
    assert_eq!(&input.data()[8..], freq_cls);
}

fn all_configs(base: LgfaConfig) -> Vec<LgfaConfig> {
    let mut out = Vec::new();
    for variant in [Variant::TimeOnly, Variant::FrequencyOnly, Variant::TimeFrequency] {
        out.push(LgfaConfig {
            variant,
            ..base.clone()
        });
    }
    for ablation in [Ablation::FrameOnly, Ablation::SegmentOnly, Ablation::VitSquare] {
        out.push(LgfaConfig {
            ablation,
            ..base.clone()
        });
    }
    out
}

#[test]
fn zero_initialised_offsets_are_bitwise_inert() {
    for cfg in all_configs(LgfaConfig::default()) {
        let model = LgfaModel::new(cfg.clone(), 11).unwrap();
        let (with, _) = traced(&model, &cfg, 12, ForwardOptions::default());
        let (without, _) = traced(
            &model,
            &cfg,
            12,
            ForwardOptions {
                omit_learned_offsets: true,
                ..Default::default()
            },
        );
        assert_eq!(
            with.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            without.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            "{:?}/{:?}",
            cfg.variant,
            cfg.ablation
        );
    }
}

#[test]
fn nonzero_offsets_change_the_output() {
    let cfg = LgfaConfig::gradcheck();
    let mut model = LgfaModel::new(cfg.clone(), 2).unwrap();
    let before = model.logits(&random_spec(&cfg, 0)).unwrap();
    let cls = model.learned_offsets()[0];
    model.params_mut().get_mut(cls).data_mut()[0] = 0.5;
    let after = model.logits(&random_spec(&cfg, 0)).unwrap();
    assert_ne!(before, after);
}

#[test]
fn zeroed_blocks_are_identity_maps() {
    for cfg in all_configs(LgfaConfig::default()) {
        let mut model = LgfaModel::new(cfg.clone(), 5).unwrap();
        model.zero_block_internals();
        let (_, trace) = traced(&model, &cfg, 6, ForwardOptions::default());
        for b in &trace.branches {
            if let (Some(x), Some(x_hat)) = (&b.frame_embeddings, &b.frame_encoding) {
                assert_eq!(max_abs_diff(x.data(), x_hat.data()), 0.0, "{} frame stack", b.name);
            }
            assert_eq!(
                max_abs_diff(b.segment_sequence.data(), b.output.data()),
                0.0,
                "{} segment stack",
                b.name
            );
        }
    }
}

#[test]
fn every_parameter_receives_gradient() {
    // With a single block the zero class token row normalises to zero, so
    // its query projection has no input to learn from; two blocks suffice.
    let base = LgfaConfig {
        depth: 2,
        ..LgfaConfig::gradcheck()
    };
    for cfg in all_configs(base) {
        for seed in 0..5 {
            let mut model = LgfaModel::new(cfg.clone(), seed).unwrap();
            let spec = random_spec(&cfg, 100 + seed);
            let (loss, _) = model.accumulate_gradients(&spec, seed as usize % 3, 1.0).unwrap();
            assert!(loss.is_finite());
            for (name, t) in model.params().iter() {
                let grad = t.grad().unwrap_or_else(|| panic!("{name} has no gradient"));
                assert!(grad.iter().all(|g| g.is_finite()), "{name}");
                assert!(grad.iter().any(|&g| g != 0.0), "{name} gradient is all zero, seed {seed}");
            }
        }
    }
}

#[test]
fn frequency_branch_is_time_branch_on_transposed_input() {
    let time_cfg = LgfaConfig::gradcheck();
    let freq_cfg = LgfaConfig {
        variant: Variant::FrequencyOnly,
        ..time_cfg.clone()
    };
    let time = LgfaModel::new(time_cfg.clone(), 9).unwrap();
    let mut freq = LgfaModel::new(freq_cfg, 1234).unwrap();
    let names: Vec<String> = freq.params().iter().map(|(n, _)| n.to_string()).collect();
    for name in names {
        let source = name.replacen("freq.", "time.", 1);
        let value = time.params().by_name(&source).unwrap().data().to_vec();
        freq.params_mut().by_name_mut(&name).unwrap().data_mut().copy_from_slice(&value);
    }
    for seed in 0..3 {
        let spec = random_spec(&time_cfg, seed);
        let a = freq.logits(&spec).unwrap();
        let b = time.logits(&spec.transposed()).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn same_seed_same_weights() {
    let cfg = LgfaConfig::gradcheck();
    let a = LgfaModel::new(cfg.clone(), 42).unwrap();
    let b = LgfaModel::new(cfg.clone(), 42).unwrap();
    let c = LgfaModel::new(cfg, 43).unwrap();
    let flat = |m: &LgfaModel| m.params().iter().flat_map(|(_, t)| t.data().to_vec()).collect::<Vec<_>>();
    assert_eq!(flat(&a), flat(&b));
    assert_ne!(flat(&a), flat(&c));
}

#[test]
fn invalid_geometry_is_rejected() {
    let cfg = LgfaConfig {
        frames_per_segment: 7,
        ..LgfaConfig::default()
    };
    assert!(LgfaModel::new(cfg, 0).is_err());
    let cfg = LgfaConfig {
        segment_dim: 30,
        ..LgfaConfig::default()
    };
    assert!(LgfaModel::new(cfg, 0).is_err());
}

fn matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
}

fn permute_rows(t: &Tensor, perm: &[usize]) -> Tensor {
    let cols = t.shape()[1];
    let data = perm.iter().flat_map(|&r| t.row(r).to_vec()).collect();
    Tensor::new(vec![perm.len(), cols], data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_distributions(seed in any::<u64>(), rows in 1usize..5, cols in 1usize..7, shift in -50.0f64..50.0) {
        let x = matrix(rows, cols, seed);
        let shifted = Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v + shift).collect()).unwrap();
        let mut g = Graph::new();
        let a = g.constant(x);
        let b = g.constant(shifted);
        let sa = g.softmax_rows(a).unwrap();
        let sb = g.softmax_rows(b).unwrap();
        for r in 0..rows {
            let row = g.value(sa).row(r);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&p| p > 0.0));
        }
        prop_assert!(max_abs_diff(g.value(sa).data(), g.value(sb).data()) < 1e-12);
    }

    #[test]
    fn layer_norm_rows_are_standardised(seed in any::<u64>(), rows in 1usize..5, cols in 2usize..9) {
        let x = matrix(rows, cols, seed);
        let mut g = Graph::new();
        let xv = g.constant(x);
        let gamma = g.constant(Tensor::filled(&[cols], 1.0));
        let beta = g.constant(Tensor::zeros(&[cols]));
        let y = g.layer_norm(xv, gamma, beta, 1e-5).unwrap();
        let moments = |row: &[f64]| {
            let mean = row.iter().sum::<f64>() / cols as f64;
            (mean, row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64)
        };
        for r in 0..rows {
            let (_, input_var) = moments(g.value(xv).row(r));
            let (mean, var) = moments(g.value(y).row(r));
            prop_assert!(mean.abs() < 1e-12);
            prop_assert!((var - input_var / (input_var + 1e-5)).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_is_permutation_equivariant(seed in any::<u64>(), n in 2usize..6, perm_seed in any::<u64>()) {
        let d = 8;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let attn = SelfAttention::new(&mut store, "attn", d, 2, &mut rng).unwrap();
        let x = matrix(n, d, seed ^ 1);
        let mut perm: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(perm_seed));

        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let xv = g.constant(x.clone());
        let y = attn.forward(&mut g, &p, xv).unwrap();
        let xp = g.constant(permute_rows(&x, &perm));
        let yp = attn.forward(&mut g, &p, xp).unwrap();
        let expected = permute_rows(g.value(y), &perm);
        prop_assert!(max_abs_diff(expected.data(), g.value(yp).data()) < 1e-12);
    }
}
