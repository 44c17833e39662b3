use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spanib_core::bottleneck::{js_mc_estimate, kl_diag_gaussians, kl_to_standard_normal, symmetric_kl, GaussianPosterior};

fn posterior(dim: usize) -> impl Strategy<Value = GaussianPosterior> {
    (prop::collection::vec(-2.0f64..2.0, dim), prop::collection::vec(0.2f64..3.0, dim))
        .prop_map(|(m, s)| GaussianPosterior::new(m, s).unwrap())
}

fn pair() -> impl Strategy<Value = (GaussianPosterior, GaussianPosterior)> {
    (1usize..5).prop_flat_map(|d| (posterior(d), posterior(d)))
}

/// One-dimensional closed form, written out independently.
fn kl_1d(m1: f64, s1: f64, m2: f64, s2: f64) -> f64 {
    (s2 / s1).ln() + (s1 * s1 + (m1 - m2).powi(2)) / (2.0 * s2 * s2) - 0.5
}

proptest! {
    #[test]
    fn kl_is_nonnegative_and_zero_on_self((p, q) in pair()) {
        let pq = kl_diag_gaussians(&p, &q).unwrap();
        prop_assert!(pq >= -1e-12);
        prop_assert!(kl_diag_gaussians(&p, &p).unwrap().abs() < 1e-12);
        let sum: f64 = (0..p.dim()).map(|i| kl_1d(p.mean[i], p.scale[i], q.mean[i], q.scale[i])).sum();
        prop_assert!((pq - sum).abs() < 1e-9);
        let sym = symmetric_kl(&p, &q).unwrap();
        prop_assert!((sym - symmetric_kl(&q, &p).unwrap()).abs() < 1e-12);
        prop_assert!((sym - pq - kl_diag_gaussians(&q, &p).unwrap()).abs() < 1e-12);
        let std = GaussianPosterior::standard(p.dim());
        prop_assert!((kl_to_standard_normal(&p) - kl_diag_gaussians(&p, &std).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn js_terms_are_bounded((p, q) in pair(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (js, _) = js_mc_estimate(&p, &q, 64, &mut rng).unwrap();
        prop_assert!(js <= std::f64::consts::LN_2 + 1e-12);
        prop_assert!(js > -std::f64::consts::LN_2);
        let (same, _) = js_mc_estimate(&p, &p, 8, &mut rng).unwrap();
        prop_assert!(same.abs() < 1e-12);
    }
}

#[test]
fn mismatched_dimensions_are_rejected() {
    let a = GaussianPosterior::standard(2);
    let b = GaussianPosterior::standard(3);
    assert!(kl_diag_gaussians(&a, &b).is_err());
    assert!(js_mc_estimate(&a, &b, 4, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}
