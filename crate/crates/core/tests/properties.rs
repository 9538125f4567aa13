use proptest::prelude::*;
use tabimpute::baselines::baseline_impute;
use tabimpute::data::{gen_mar_mask, gen_mcar_mask, MinMaxScaler};
use tabimpute::metrics::{mse_missing, pearson_missing, rank_table, SettingScores};
use tabimpute::sampling::impute;
use tabimpute::{
    sample_gaussian, Architecture, BaselineKind, Denoiser, DenoiserConfig, DiffusionSchedule, MaskedTable, Rng,
    SamplerOptions, Tensor,
};

fn table(rows: usize, cols: usize, seed: u64) -> Tensor {
    sample_gaussian(&mut Rng::new(seed), &[rows, cols])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn scaler_inverse_recovers_input(rows in 1usize..20, cols in 1usize..5, seed in any::<u64>(), spread in 1e-3f64..1e3) {
        let x = table(rows, cols, seed).map(|v| v * spread + 7.0);
        let s = MinMaxScaler::fit(&x).unwrap();
        let t = s.transform(&x).unwrap();
        prop_assert!(t.data().iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
        let back = s.inverse_transform(&t).unwrap();
        for (a, b) in back.data().iter().zip(x.data()) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(spread));
        }
    }

    #[test]
    fn masks_are_reproducible(rows in 1usize..40, cols in 2usize..6, p in 0.05f64..0.95, seed in any::<u64>()) {
        let m = gen_mcar_mask(rows, cols, p, seed).unwrap();
        prop_assert_eq!(&m, &gen_mcar_mask(rows, cols, p, seed).unwrap());
        prop_assert_eq!(m.shape(), [rows, cols]);
        let n = 1 + (seed as usize % (cols - 1));
        let m = gen_mar_mask(rows, cols, n, seed).unwrap();
        prop_assert_eq!(m.n_missing(), rows * n);
        for c in 0..cols {
            prop_assert!((0..rows).all(|r| m.is_known(r, c) == m.is_known(0, c)));
        }
    }

    #[test]
    fn baselines_keep_known_entries(seed in any::<u64>(), p in 0.1f64..0.9, kind in 0usize..7) {
        let x = table(25, 4, seed);
        let ctx = table(30, 4, seed ^ 1);
        let m = gen_mcar_mask(25, 4, p, seed).unwrap();
        if let Ok(out) = baseline_impute(BaselineKind::ALL[kind], &x, &m, &ctx) {
            for (i, &k) in m.known().iter().enumerate() {
                if k {
                    prop_assert_eq!(out.data()[i].to_bits(), x.data()[i].to_bits());
                } else {
                    prop_assert!(out.data()[i].is_finite());
                }
            }
        }
    }

    #[test]
    fn metrics_ignore_known_entries(seed in any::<u64>(), p in 0.2f64..0.9, fill in -1e3f64..1e3) {
        let x = table(20, 3, seed);
        let y = table(20, 3, seed ^ 7);
        let m = gen_mcar_mask(20, 3, p, seed).unwrap();
        prop_assume!(m.n_missing() >= 2);
        let z = Tensor::from_fn(&[20, 3], |i| if m.known()[i] { fill } else { y.data()[i] });
        prop_assert_eq!(mse_missing(&x, &y, &m).unwrap(), mse_missing(&x, &z, &m).unwrap());
        let (a, b) = (pearson_missing(&x, &y, &m).unwrap(), pearson_missing(&x, &z, &m).unwrap());
        prop_assert_eq!(a, b);
        prop_assert!((-1.0..=1.0).contains(&a));
    }

    #[test]
    fn ranks_ignore_method_order(scores in prop::collection::vec(prop::collection::vec(0u8..5, 4), 1..6), rot in 0usize..4) {
        let names = ["a", "b", "c", "d"];
        let settings = |rot: usize| -> Vec<SettingScores> {
            scores.iter().enumerate().map(|(i, s)| {
                let mut v: Vec<(String, f64)> = names.iter().zip(s).map(|(n, &x)| (n.to_string(), x as f64)).collect();
                v.rotate_left(rot);
                SettingScores { setting: i.to_string(), scores: v }
            }).collect()
        };
        let a = rank_table(&settings(0), true).unwrap();
        prop_assert_eq!(&a, &rank_table(&settings(rot), true).unwrap());
        let total: f64 = a.iter().map(|r| r.mean).sum();
        prop_assert!((total - 10.0).abs() < 1e-12);
        prop_assert!(a.iter().all(|r| (1.0..=4.0).contains(&r.mean)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sampler_keeps_known_entries(
        seed in any::<u64>(),
        p in 0.1f64..0.9,
        tau in prop::option::of(1usize..30),
        jl in 1usize..4,
        jn in 1usize..4,
        eta in 0.0f64..1.0,
    ) {
        let mut c = DenoiserConfig::new(Architecture::Mlp, 3);
        c.hidden = 4;
        c.blocks = 1;
        let model = Denoiser::new(c, seed).unwrap();
        let x = table(8, 3, seed);
        let m = gen_mcar_mask(8, 3, p, seed).unwrap();
        let tab = MaskedTable::new(m.apply(&x, f64::NAN).unwrap(), m.clone()).unwrap();
        let opts = SamplerOptions {
            t_sampling: 30,
            t_training: 60,
            tau,
            eta,
            jump_length: jl,
            jump_n_sample: jn,
            n_inferences: 2,
            seed,
            ..SamplerOptions::default()
        };
        let out = impute(&model, &tab, &DiffusionSchedule::cosine(30).unwrap(), &opts).unwrap();
        for (i, &k) in m.known().iter().enumerate() {
            if k {
                prop_assert_eq!(out.data()[i].to_bits(), x.data()[i].to_bits());
            }
        }
    }
}
