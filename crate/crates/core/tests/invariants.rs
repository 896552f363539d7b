//! Structural invariants checked through the public API on small problems.

use std::sync::{Arc, OnceLock};

use lgrb::fullorder::{kkt_relative_residual, FullKkt};
use lgrb::greedy::{direct_estimate, GreedyOptions};
use lgrb::grid::FineGrid;
use lgrb::pipeline::{load_online, offline, OfflineModel, OfflineOptions};
use lgrb::rb::downscale;
use lgrb::scenario::{Scenario, ScenarioKind, ScenarioOptions};
use lgrb::stochastic::kl::uniform_points;
use lgrb::stochastic::{kl_expand, realize_boundary, HarmonicMapper};
use proptest::prelude::*;

fn scenario() -> Arc<Scenario> {
    static S: OnceLock<Arc<Scenario>> = OnceLock::new();
    S.get_or_init(|| {
        Arc::new(
            Scenario::build(
                ScenarioKind::DistributedDeterministic,
                16,
                16,
                &ScenarioOptions::default(),
            )
            .unwrap(),
        )
    })
    .clone()
}

fn trained() -> &'static OfflineModel {
    static M: OnceLock<OfflineModel> = OnceLock::new();
    M.get_or_init(|| {
        let s = scenario();
        let training = s.sample(12, 0).unwrap();
        let greedy = GreedyOptions {
            tolerance: 1e-12,
            max_samples: 4,
        };
        offline(
            s,
            &training,
            OfflineOptions {
                coarse: (4, 4),
                modes: 3,
                greedy,
            },
        )
        .unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn kkt_matrix_is_symmetric_and_solved_to_roundoff(mu in 0.0f64..1.0) {
        let s = scenario();
        let sys = s.system(&[mu]).unwrap();
        let kkt = FullKkt::new(sys.clone()).unwrap();
        let a = kkt.matrix.to_dense();
        prop_assert!((&a - a.transpose()).abs().max() <= 1e-14 * a.abs().max());
        let t = s.solve(&[mu]).unwrap();
        for r in kkt_relative_residual(&sys, &t) {
            prop_assert!(r < 1e-9);
        }
    }

    #[test]
    fn online_solve_is_consistent_and_estimator_nonnegative(mu in 0.0f64..1.0) {
        let off = trained();
        let sol = off.online.solve(&[mu]).unwrap();
        prop_assert!(sol.cost >= 0.0);
        let fine = off.online.solve_fine(&[mu]).unwrap();
        let direct = off.online.fine_solution(&sol);
        prop_assert_eq!(&fine.state, &direct.state);
        let local_sys = off.local.system(&[mu]).unwrap();
        let (z1, z2) = (off.greedy.spaces.state_basis(), off.greedy.spaces.control_basis());
        let (_, est) = direct_estimate(&local_sys, &z1, &z2, &off.local.state_inner, &off.local.control_inner).unwrap();
        prop_assert!(est.value >= 0.0 && est.components.iter().all(|&c| c >= 0.0));
        let local = downscale(&off.local_state_basis, &off.online.control_basis, &sol);
        prop_assert_eq!(local.state.len(), off.local.space.dim());
    }

    #[test]
    fn kl_draws_give_positive_jacobians(xi in prop::collection::vec(-1.0f64..1.0, 4)) {
        let grid = FineGrid::new(16, 16).unwrap();
        let kl = kl_expand(&uniform_points(17), 4, 0.1).unwrap();
        let s = realize_boundary(&kl, &xi).unwrap();
        let map = HarmonicMapper::new(&grid).unwrap().map(&grid, &s).unwrap();
        prop_assert!(map.min_det() > 0.0);
    }
}

#[test]
fn zero_kl_draw_is_flat() {
    let kl = kl_expand(&uniform_points(33), 5, 0.1).unwrap();
    assert!(realize_boundary(&kl, &[0.0; 5])
        .unwrap()
        .iter()
        .all(|&v| v == 0.0));
}

#[test]
fn bundle_round_trip_is_bit_exact() {
    let off = trained();
    let dir = tempfile::tempdir().unwrap();
    off.save(dir.path()).unwrap();
    let loaded = load_online(dir.path(), scenario()).unwrap();
    for mu in scenario().sample(5, 9).unwrap() {
        let (a, b) = (
            off.online.solve_fine(&mu).unwrap(),
            loaded.solve_fine(&mu).unwrap(),
        );
        assert_eq!(a.state, b.state);
        assert_eq!(a.control, b.control);
        assert_eq!(a.adjoint, b.adjoint);
    }
}
