mod common;

use common::{permute, random_mab, random_perm, rng};
use picaso::mog::{
    gmm_log_likelihood, mog_head, read_dataset, sample_mog, write_dataset, DatasetHeader, GmmParams, MogConfig,
};
use picaso::set_ops::{eval, read_attention_csv, write_attention_csv, Templates};
use picaso::trainer::{build_model, EncoderKind, ModelConfig, PoolKind};
use picaso::Tensor;
use proptest::prelude::*;

fn config(encoder: EncoderKind, pool: PoolKind, steps: usize) -> ModelConfig {
    ModelConfig {
        encoder,
        encoder_depth: 1,
        pool,
        steps,
        d: 8,
        heads: 2,
        k: 3,
        post_sa: false,
        input_dim: 2,
    }
}

fn encoders() -> impl Strategy<Value = EncoderKind> {
    prop_oneof![Just(EncoderKind::Rff), Just(EncoderKind::Sa), Just(EncoderKind::Ae(4))]
}

fn pools() -> impl Strategy<Value = (PoolKind, usize)> {
    prop_oneof![
        Just((PoolKind::Mean, 1)),
        Just((PoolKind::Max, 1)),
        Just((PoolKind::Pma, 1)),
        (1..=3usize).prop_map(|l| (PoolKind::Pb, l)),
        (1..=2usize).prop_map(|l| (PoolKind::Gpb, l)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn model_output_ignores_element_order(
        enc in encoders(),
        (pool, steps) in pools(),
        post_sa in any::<bool>(),
        n in 1usize..24,
        seed in any::<u64>(),
    ) {
        let mut cfg = config(enc, pool, steps);
        cfg.post_sa = post_sa;
        let model = build_model(&cfg, seed).unwrap();
        let mut r = rng(seed);
        let x = Tensor::randn(n, 2, 3.0, &mut r);
        let px = permute(&x, &random_perm(n, &mut r));
        let a = model.predict(&x).unwrap();
        let b = model.predict(&px).unwrap();
        prop_assert!(a.templates.max_abs_diff(&b.templates).unwrap() < 1e-10);
        prop_assert!(a.gmm.means.max_abs_diff(&b.gmm.means).unwrap() < 1e-10);
    }

    #[test]
    fn element_wise_blocks_commute_with_permutation(n in 1usize..20, seed in any::<u64>()) {
        let mut r = rng(seed);
        let (p, q) = (random_mab(4, 2, &mut r), random_mab(4, 2, &mut r));
        let x = Tensor::randn(n, 4, 1.0, &mut r);
        let perm = random_perm(n, &mut r);
        let px = permute(&x, &perm);
        let sab = eval::sab(&x, &p).unwrap();
        prop_assert!(permute(&sab, &perm).max_abs_diff(&eval::sab(&px, &p).unwrap()).unwrap() < 1e-10);
        let ind = Templates::learned(Tensor::randn(3, 4, 1.0, &mut r));
        let ae = eval::ae_block(&x, &ind, &p, &q).unwrap();
        prop_assert!(permute(&ae, &perm).max_abs_diff(&eval::ae_block(&px, &ind, &p, &q).unwrap()).unwrap() < 1e-10);
        let t0 = Templates::learned(Tensor::randn(3, 4, 1.0, &mut r));
        let (_, set, _) = eval::generalized_picaso_block(&x, &t0, &p, &q, 3).unwrap();
        let (_, pset, _) = eval::generalized_picaso_block(&px, &t0, &p, &q, 3).unwrap();
        prop_assert!(permute(&set, &perm).max_abs_diff(&pset).unwrap() < 1e-10);
    }

    #[test]
    fn likelihood_is_translation_consistent(delta in -20.0f64..20.0, seed in any::<u64>()) {
        let batch = sample_mog(&MogConfig { n_min: 20, n_max: 40, ..MogConfig::default() }, 1, seed).unwrap();
        let set = &batch.sets[0];
        let p = set.params.as_ref().unwrap();
        let a = gmm_log_likelihood(&set.points, p).unwrap();
        let b = gmm_log_likelihood(&picaso::mog::shift_set(&set.points, delta), &p.shifted(delta)).unwrap();
        prop_assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn head_stds_positive(scale in 0.0f64..1e3, seed in any::<u64>()) {
        let mut r = rng(seed);
        let t = Tensor::randn(4, 3, scale, &mut r);
        let w = Tensor::randn(3, 4, 1.0, &mut r);
        let p = mog_head(&t, &w, &Tensor::zeros(1, 4)).unwrap();
        prop_assert!(p.stds.iter().all(|&s| s > 0.0 && s.is_finite()));
    }

    #[test]
    fn head_is_row_equivariant(seed in any::<u64>()) {
        let mut r = rng(seed);
        let t = Tensor::randn(4, 3, 1.0, &mut r);
        let (w, b) = (Tensor::randn(3, 4, 1.0, &mut r), Tensor::randn(1, 4, 1.0, &mut r));
        let perm = random_perm(4, &mut r);
        let a = mog_head(&t, &w, &b).unwrap();
        let pa = mog_head(&permute(&t, &perm), &w, &b).unwrap();
        prop_assert_eq!(permute(&a.means, &perm), pa.means);
        for (i, &j) in perm.iter().enumerate() {
            prop_assert_eq!(pa.stds[i], a.stds[j]);
            prop_assert_eq!(pa.mix_logits[i], a.mix_logits[j]);
        }
    }

    #[test]
    fn tensor_json_round_trip(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
        let t = Tensor::randn(rows, cols, 1e3, &mut rng(seed));
        let back: Tensor = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn dataset_round_trip(num_sets in 1usize..4, seed in any::<u64>()) {
        let cfg = MogConfig { n_min: 4, n_max: 9, ..MogConfig::default() };
        let batch = sample_mog(&cfg, num_sets, seed).unwrap();
        let header = DatasetHeader::new(cfg, seed, num_sets);
        let mut buf = vec![];
        write_dataset(&header, &batch, &mut buf).unwrap();
        let (h, b) = read_dataset(&buf[..]).unwrap();
        prop_assert_eq!(h, header);
        prop_assert_eq!(b, batch);
    }

    #[test]
    fn attention_csv_round_trip(n in 1usize..12, steps in 1usize..4, seed in any::<u64>()) {
        let mut r = rng(seed);
        let p = random_mab(4, 2, &mut r);
        let x = Tensor::randn(n, 4, 1.0, &mut r);
        let t0 = Templates::learned(Tensor::randn(3, 4, 1.0, &mut r));
        let (_, recs) = eval::picaso_block(&x, &t0, &p, steps).unwrap();
        let mut buf = vec![];
        write_attention_csv(&recs, &mut buf).unwrap();
        let back = read_attention_csv(&buf[..]).unwrap();
        prop_assert_eq!(back.len(), recs.len());
        for (a, b) in back.iter().zip(&recs) {
            prop_assert_eq!((a.step, a.head), (b.step, b.head));
            prop_assert_eq!(&a.weights, &b.weights);
            prop_assert!(a.max_row_sum_error().unwrap() < 1e-8);
        }
    }

    #[test]
    fn mixture_weights_normalized(logits in prop::collection::vec(-50.0f64..50.0, 1..6)) {
        let k = logits.len();
        let p = GmmParams { means: Tensor::zeros(k, 2), stds: vec![1.0; k], mix_logits: logits };
        prop_assert!((p.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
