use bmpursuit::data::{coef_error, signal_error, support_error};
use bmpursuit::exact::map_message_passing;
use bmpursuit::learning::{log_pl, log_pl_hessian, PackedParams};
use bmpursuit::model::{exhaustive_map, posterior_bias};
use bmpursuit::rng::rng_from_seed;
use bmpursuit::synthetic::{banded_weights, gaussian_vector, random_orthogonal, uniform_vector, SyntheticSetup};
use bmpursuit::{BoltzmannParams, SignalModel, SupportPattern};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;

fn unitary_instance(m: usize, band: usize, sigma: f64, seed: u64) -> (SignalModel, DVector<f64>) {
    let mut rng = rng_from_seed(seed);
    let dict = random_orthogonal(m, &mut rng);
    let model = SyntheticSetup::small_unitary(m, band)
        .model_with_dictionary(dict, sigma, seed ^ 0x5a5a)
        .unwrap();
    let y = gaussian_vector(m, 0.0, 30.0, &mut rng);
    (model, y)
}

fn random_params(m: usize, seed: u64) -> BoltzmannParams {
    let mut rng = rng_from_seed(seed);
    let w = banded_weights(m, m - 1, -1.0, 1.0, &mut rng);
    BoltzmannParams::new(w, uniform_vector(m, -2.0, 1.0, &mut rng)).unwrap()
}

fn random_supports(m: usize, n: usize, seed: u64) -> Vec<SupportPattern> {
    let mut rng = rng_from_seed(seed);
    (0..n)
        .map(|_| {
            let x = uniform_vector(m, 0.0, 1.0, &mut rng);
            let idx: Vec<usize> = (0..m).filter(|&i| x[i] < 0.3).collect();
            SupportPattern::from_indices(m, &idx).unwrap()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn message_passing_matches_enumeration(m in 3usize..=11, band in 1usize..=4, sigma in 2.0f64..30.0, seed in any::<u64>()) {
        let band = band.min(m - 1);
        let (model, y) = unitary_instance(m, band, sigma, seed);
        prop_assert_eq!(map_message_passing(&model, &y, band).unwrap(), exhaustive_map(&model, &y).unwrap());
    }

    #[test]
    fn posterior_bias_ranks_like_the_posterior(m in 2usize..=8, seed in any::<u64>()) {
        // With W = 0 the posterior factorizes and each atom is active iff q_i > 0.
        let (model, y) = unitary_instance(m, 1, 8.0, seed);
        let m0 = model.with_prior(BoltzmannParams::independent(model.prior().bias().clone()).unwrap()).unwrap();
        let q = posterior_bias(&m0, &y).unwrap();
        let s = exhaustive_map(&m0, &y).unwrap();
        for i in 0..m {
            prop_assert_eq!(s.is_active(i), q[i] > 0.0);
        }
    }

    #[test]
    fn packing_round_trips(m in 1usize..=9, seed in any::<u64>()) {
        let p = random_params(m.max(2), seed);
        let packed = PackedParams::pack(&p);
        prop_assert_eq!(packed.dim(), p.dim());
        prop_assert_eq!(packed.as_vector().len(), PackedParams::len_for(p.dim()));
        prop_assert_eq!(packed.unpack().unwrap(), p);
    }

    #[test]
    fn log_pl_is_concave(m in 2usize..=6, n in 1usize..=40, seed in any::<u64>()) {
        let p = random_params(m, seed);
        let s = random_supports(m, n, seed.wrapping_add(1));
        let h = log_pl_hessian(&p, &s).unwrap();
        let top = SymmetricEigen::new(h).eigenvalues.max();
        prop_assert!(top <= 1e-8, "largest eigenvalue {}", top);
        prop_assert!(log_pl(&p, &s).unwrap() <= 0.0);
    }

    #[test]
    fn support_error_is_a_bounded_symmetric_distance(m in 1usize..=12, n in 1usize..=10, seed in any::<u64>()) {
        let a = random_supports(m, n, seed);
        let b = random_supports(m, n, seed ^ 1);
        let ab = support_error(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab - support_error(&b, &a).unwrap()).abs() < 1e-15);
        prop_assert_eq!(support_error(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn unitary_dictionaries_preserve_errors(m in 2usize..=10, seed in any::<u64>()) {
        let mut rng = rng_from_seed(seed);
        let dict = random_orthogonal(m, &mut rng);
        let truth: Vec<DVector<f64>> = (0..4).map(|_| gaussian_vector(m, 0.0, 5.0, &mut rng)).collect();
        let est: Vec<DVector<f64>> = truth.iter().map(|x| x + gaussian_vector(m, 0.0, 1.0, &mut rng)).collect();
        let c = coef_error(&truth, &est).unwrap();
        let s = signal_error(&dict, &truth, &est).unwrap();
        prop_assert!((c - s).abs() < 1e-10 * c.max(1.0));
    }

    #[test]
    fn relabeling_preserves_prior_scores(m in 2usize..=8, seed in any::<u64>()) {
        let p = random_params(m, seed);
        let mut rng = rng_from_seed(seed ^ 7);
        let keys = uniform_vector(m, 0.0, 1.0, &mut rng);
        let mut perm: Vec<usize> = (0..m).collect();
        perm.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]));
        let q = p.permuted(&perm).unwrap();
        for s in random_supports(m, 5, seed) {
            let a = p.log_score(&s).unwrap();
            let b = q.log_score(&s.permuted(&perm)).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_interactions_are_reported_as_independent() {
    let p = BoltzmannParams::new(DMatrix::zeros(3, 3), DVector::from_element(3, -1.0)).unwrap();
    assert!(p.is_independent());
}
