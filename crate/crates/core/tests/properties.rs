use cirnet::data::{flip_horizontal, SceneSpec};
use cirnet::fusion::{CmwrMode, CmwrUnit};
use cirnet::metrics::{mae, max_f_measure, pr_curve, s_measure};
use cirnet::nn_ops::softmax_rows;
use cirnet::params::{evaluate, ParamStore};
use cirnet::{Rng, Tensor};
use proptest::prelude::*;

fn map_and_mask(seed: u64, h: usize, w: usize) -> (Tensor, Tensor) {
    let mut rng = Rng::new(seed);
    let s = Tensor::rand_uniform([1, 1, h, w], 0.0, 1.0, &mut rng);
    let mut g = Tensor::rand_uniform([1, 1, h, w], 0.0, 1.0, &mut rng).map(|v| (v > 0.6) as u8 as f64);
    g.data_mut()[rng.below(h * w)] = 1.0;
    (s, g)
}

fn flip(t: &Tensor) -> Tensor {
    let [_, _, h, w] = t.shape();
    let mut out = t.clone();
    for y in 0..h {
        for x in 0..w {
            out.set(0, 0, y, x, t.at(0, 0, y, w - 1 - x));
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mae_is_symmetric(seed in any::<u64>(), h in 1usize..20, w in 1usize..20) {
        let (s, g) = map_and_mask(seed, h, w);
        prop_assert_eq!(mae(&s, &g).unwrap(), mae(&g, &s).unwrap());
    }

    #[test]
    fn pixel_order_free_scores_ignore_flips(seed in any::<u64>(), h in 1usize..20, w in 1usize..20) {
        let (s, g) = map_and_mask(seed, h, w);
        let (fs, fg) = (flip(&s), flip(&g));
        prop_assert!((mae(&s, &g).unwrap() - mae(&fs, &fg).unwrap()).abs() < 1e-12);
        let (a, b) = (pr_curve(&s, &g).unwrap(), pr_curve(&fs, &fg).unwrap());
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(max_f_measure(&a), max_f_measure(&b));
    }

    #[test]
    fn scores_are_bounded_and_recall_monotone(seed in any::<u64>(), h in 1usize..24, w in 1usize..24) {
        let (s, g) = map_and_mask(seed, h, w);
        let c = pr_curve(&s, &g).unwrap();
        prop_assert!(c.recall.windows(2).all(|p| p[1] <= p[0]));
        prop_assert!(c.precision.iter().chain(&c.recall).all(|v| (0.0..=1.0).contains(v)));
        let f = max_f_measure(&c);
        let sm = s_measure(&s, &g).unwrap();
        prop_assert!((0.0..=1.0).contains(&f), "maxF {}", f);
        prop_assert!((0.0..=1.0).contains(&sm), "S {}", sm);
    }

    #[test]
    fn softmax_rows_are_distributions(seed in any::<u64>(), rows in 1usize..8, cols in 1usize..12, scale in 0.1f64..100.0) {
        let mut rng = Rng::new(seed);
        let x = Tensor::rand_uniform([2, 2, rows, cols], -scale, scale, &mut rng);
        let s = softmax_rows(&x);
        for row in s.data().chunks(cols) {
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cmwr_weights_are_row_stochastic(seed in any::<u64>(), half in 1usize..4, h in 1usize..5, w in 1usize..5, mode in 0usize..3) {
        let mode = [CmwrMode::Full, CmwrMode::M1Only, CmwrMode::M2Only][mode];
        let mut rng = Rng::new(seed);
        let mut store = ParamStore::new();
        let unit = CmwrUnit::new(&mut store, &mut rng, "cmwr", 2 * half, mode).unwrap();
        let f: Vec<Tensor> = (0..3).map(|_| Tensor::rand_uniform([2, 2 * half, h, w], -3.0, 3.0, &mut rng)).collect();
        let wts = evaluate(&store, false, |ctx| {
            let v: Vec<_> = f.iter().map(|t| ctx.tape.constant(t.clone())).collect();
            unit.weights(ctx, v[0], v[1], v[2])
        }).unwrap();
        prop_assert_eq!(wts.shape(), [2, 1, h * w, h * w]);
        for row in wts.data().chunks(h * w) {
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn generation_is_pure_and_well_formed(seed in any::<u64>(), index in 0u64..1000, contrast in 0.0f64..1.0, noise in 0.0f64..1.0) {
        let spec = SceneSpec { seed, size: 32, contrast, depth_noise: noise, ..SceneSpec::default() };
        let a = spec.sample(index).unwrap();
        prop_assert_eq!(&a, &spec.sample(index).unwrap());
        prop_assert!(a.gt.data().iter().all(|&v| v == 0.0 || v == 1.0));
        prop_assert!(a.gt.data().contains(&1.0));
        prop_assert!(a.depth.data().iter().chain(a.rgb.data()).all(|v| (0.0..=1.0).contains(v)));
        let f = flip_horizontal(&a);
        prop_assert_eq!(flip_horizontal(&f), a);
    }
}
