mod common;

use poolsmooth::data::{pool_homogeneous, pool_random, IndividualDataset, PooledDataset};
use poolsmooth::estimators::{
    build_pseudo_data, fit_average_weighted, fit_individual, fit_marginal_integration, fit_product_weighted,
    FitConfig, LocalFit,
};
use poolsmooth::Result;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type PooledFit = fn(&PooledDataset, &FitConfig, f64) -> Result<LocalFit>;

const POOLED: [PooledFit; 3] = [fit_average_weighted, fit_product_weighted, fit_marginal_integration];

fn pairs(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-1.0..1.0f64, -5.0..5.0f64), n)
}

fn both_designs(d: &IndividualDataset, c: usize, seed: u64) -> [PooledDataset; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    [pool_random(d, c, &mut rng).unwrap(), pool_homogeneous(d, c).unwrap()]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn unit_pools_collapse(data in pairs(8..40), p in 0usize..=2, h in 0.3..1.5f64, at in -0.8..0.8f64) {
        let d = common::dataset(&data);
        let cfg = FitConfig::new(p, h).unwrap();
        let m0 = fit_individual(&d, &cfg, at);
        for pooled in both_designs(&d, 1, 3) {
            for fit in POOLED {
                if let (Ok(a), Ok(b)) = (&m0, fit(&pooled, &cfg, at)) {
                    prop_assert!((a.m_hat() - b.m_hat()).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn affine_equivariance(
        data in pairs(12..40), c in 1usize..=3, p in 0usize..=2, h in 0.4..1.5f64,
        at in -0.7..0.7f64, a in -3.0..3.0f64, b in -10.0..10.0f64, seed in any::<u64>(),
    ) {
        let d = common::dataset(&data);
        let n = d.len() - d.len() % c;
        let d = common::dataset(&data[..n]);
        let cfg = FitConfig::new(p, h).unwrap();
        let mapped = d.map_responses(|y| a * y + b).unwrap();
        if let (Ok(u), Ok(v)) = (fit_individual(&d, &cfg, at), fit_individual(&mapped, &cfg, at)) {
            prop_assert!((a * u.m_hat() + b - v.m_hat()).abs() < 1e-8);
        }
        for pooled in both_designs(&d, c, seed) {
            let mapped = pooled.map_responses(|z| a * z + b).unwrap();
            for fit in POOLED {
                if let (Ok(u), Ok(v)) = (fit(&pooled, &cfg, at), fit(&mapped, &cfg, at)) {
                    prop_assert!((a * u.m_hat() + b - v.m_hat()).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn translation_equivariance(
        data in pairs(12..40), c in 1usize..=3, p in 0usize..=2, h in 0.4..1.5f64,
        at in -0.7..0.7f64, s in -5.0..5.0f64, seed in any::<u64>(),
    ) {
        let n = data.len() - data.len() % c;
        let d = common::dataset(&data[..n]);
        let cfg = FitConfig::new(p, h).unwrap();
        let shifted = common::dataset(&data[..n].iter().map(|&(x, y)| (x + s, y)).collect::<Vec<_>>());
        if let (Ok(u), Ok(v)) = (fit_individual(&d, &cfg, at), fit_individual(&shifted, &cfg, at + s)) {
            prop_assert!((u.m_hat() - v.m_hat()).abs() < 1e-8);
        }
        for pooled in both_designs(&d, c, seed) {
            let moved = pooled.shift_covariates(s).unwrap();
            for fit in POOLED {
                if let (Ok(u), Ok(v)) = (fit(&pooled, &cfg, at), fit(&moved, &cfg, at + s)) {
                    prop_assert!((u.m_hat() - v.m_hat()).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn constants_reproduced(
        xs in prop::collection::vec(-1.0..1.0f64, 12..40), k in -10.0..10.0f64, c in 1usize..=4,
        p in 0usize..=3, h in 0.2..2.0f64, at in -0.9..0.9f64, seed in any::<u64>(),
    ) {
        let n = xs.len() - xs.len() % c;
        let d = IndividualDataset::new(xs[..n].to_vec(), vec![k; n]).unwrap();
        let cfg = FitConfig::new(p, h).unwrap();
        if let Ok(f) = fit_individual(&d, &cfg, at) {
            prop_assert!((f.m_hat() - k).abs() < 1e-10);
        }
        for pooled in both_designs(&d, c, seed) {
            for fit in POOLED {
                if let Ok(f) = fit(&pooled, &cfg, at) {
                    prop_assert!((f.m_hat() - k).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn lines_reproduced(
        xs in prop::collection::vec(-1.0..1.0f64, 12..40), slope in -4.0..4.0f64, icpt in -4.0..4.0f64,
        c in 1usize..=4, p in 1usize..=2, h in 0.3..2.0f64, at in -0.8..0.8f64, seed in any::<u64>(),
    ) {
        let n = xs.len() - xs.len() % c;
        let ys: Vec<f64> = xs[..n].iter().map(|x| icpt + slope * x).collect();
        let d = IndividualDataset::new(xs[..n].to_vec(), ys).unwrap();
        let cfg = FitConfig::new(p, h).unwrap();
        let truth = icpt + slope * at;
        if let Ok(f) = fit_individual(&d, &cfg, at) {
            prop_assert!((f.m_hat() - truth).abs() < 1e-8);
        }
        for pooled in both_designs(&d, c, seed) {
            for fit in [fit_average_weighted, fit_product_weighted] {
                if let Ok(f) = fit(&pooled, &cfg, at) {
                    prop_assert!((f.m_hat() - truth).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn pseudo_data_invariants(data in pairs(4..40), c in 1usize..=4, seed in any::<u64>()) {
        let n = data.len() - data.len() % c;
        prop_assume!(n > 0);
        let d = common::dataset(&data[..n]);
        let pooled = pool_random(&d, c, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let pseudo = build_pseudo_data(&pooled);
        prop_assert_eq!(pseudo.points.len(), n);
        for w in pseudo.points.windows(2) {
            if w[0].pool == w[1].pool {
                prop_assert_eq!(w[0].r, w[1].r);
            }
        }
        let mean_r = pseudo.points.iter().map(|p| p.r).sum::<f64>() / n as f64;
        prop_assert!((mean_r - pseudo.mu_hat).abs() < 1e-10);
        let (_, oracle) = common::pseudo_points(&pooled);
        for (p, r) in pseudo.points.iter().zip(oracle) {
            prop_assert!((p.r - r).abs() < 1e-12);
        }
    }
}

#[test]
fn marginal_two_pool_example_matches_direct_minimization() {
    use poolsmooth::data::{Pool, PoolingDesign};
    use poolsmooth::kernels::KernelKind;
    let pools = vec![Pool::new(vec![0.0, 1.0], 2.0).unwrap(), Pool::new(vec![2.0, 3.0], 4.0).unwrap()];
    let d = PooledDataset::new(pools, PoolingDesign::External).unwrap();
    let cfg = FitConfig::new(0, 10.0).unwrap();
    let (xs, rs) = common::pseudo_points(&d);
    assert_eq!(rs, vec![1.0, 1.0, 5.0, 5.0]);
    let at = 1.2;
    let oracle = common::coordinate_descent(|b| common::q_individual(&xs, &rs, KernelKind::Epanechnikov, 10.0, at, b), 1);
    let got = fit_marginal_integration(&d, &cfg, at).unwrap();
    assert!((got.m_hat() - oracle[0]).abs() < 1e-9);
}
