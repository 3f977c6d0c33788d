use lcapa_core::gnn::nets::{equivariance_defect, NetKind, Network, Normalization};
use lcapa_core::linalg::rel_diff;
use lcapa_core::objective::{exact_sum_se, project_weights, scene_gram};
use lcapa_core::par::Execution;
use lcapa_core::quadrature::{build_grid, direct_integral_check, integral_couplings, integral_power, Basis, WeightMatrix};
use lcapa_core::scene::{sample_scene, SceneParams};
use lcapa_core::{CMat, Complex64};
use proptest::prelude::*;

fn weights(k: usize) -> impl Strategy<Value = WeightMatrix> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), k * k)
        .prop_map(move |v| WeightMatrix(CMat::from_fn(k, k, |i, j| Complex64::new(v[i * k + j].0, v[i * k + j].1))))
}

fn basis() -> impl Strategy<Value = Basis> {
    prop_oneof![Just(Basis::ConjugateChannel), Just(Basis::Channel)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gram_path_matches_pointwise_integrals(seed in 0u64..10_000, k in 1usize..6, grid_idx in 0usize..4, basis in basis(),
                                             a in weights(5)) {
        let params = SceneParams { num_users: k, ..SceneParams::default() };
        let scene = sample_scene(seed, &params).unwrap();
        let a = WeightMatrix(a.0.view((0, 0), (k, k)).into_owned());
        let m = [16, 64, 256, 1024][grid_idx];
        let grid = build_grid(&scene.aperture, m).unwrap();
        let gram = scene_gram(&scene, m, basis, Execution::Sequential).unwrap();
        let (p_ref, g_ref) = direct_integral_check(&scene, &grid, &a, basis).unwrap();
        let p = integral_power(&a, &gram.c).unwrap();
        let g = integral_couplings(&a, &gram.b).unwrap();
        for (x, y) in p.0.iter().zip(&p_ref.0) {
            prop_assert!((x - y).abs() <= 1e-10 * y.abs());
        }
        prop_assert!(rel_diff(&g.0, &g_ref.0) <= 1e-10);
    }

    #[test]
    fn projection_spends_exactly_the_budget(seed in 0u64..10_000, a in weights(4), p_max in 0.01f64..100.0) {
        let scene = sample_scene(seed, &SceneParams { p_max, ..SceneParams::default() }).unwrap();
        let gram = scene_gram(&scene, 64, Basis::default(), Execution::Sequential).unwrap();
        let (a_bar, report) = exact_sum_se(&scene, &gram, &a).unwrap();
        let total: f64 = integral_power(&a_bar, &gram.c).unwrap().0.iter().sum();
        prop_assert!((total - p_max).abs() <= 1e-10 * p_max);
        prop_assert!(report.sum.is_finite() && report.sum >= 0.0);
        // projecting an already projected point is the identity
        let again = project_weights(&a_bar, &integral_power(&a_bar, &gram.c).unwrap(), p_max).unwrap();
        prop_assert!(rel_diff(&again.0, &a_bar.0) <= 1e-12);
    }

    #[test]
    fn networks_commute_with_user_relabelling(seed in 0u64..10_000, init in 0u64..1_000, a in weights(4)) {
        let scene = sample_scene(seed, &SceneParams::default()).unwrap();
        for kind in [NetKind::Policy, NetKind::Proj, NetKind::Value] {
            let net = Network::new(kind, kind.spec(2, 8), Normalization::default(), init).unwrap();
            let weights = (kind != NetKind::Policy).then_some(&a);
            prop_assert!(equivariance_defect(&net, &scene.positions, weights).unwrap() <= 1e-9);
        }
    }
}
