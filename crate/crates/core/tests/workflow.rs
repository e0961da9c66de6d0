use condmom_core::dgp;
use condmom_core::efficient_score::{backfit_solve, chamberlain_score, efficient_information, oracle_projection};
use condmom_core::estimation::{estimate, EstimationOptions, Target, WeightedSample};
use condmom_core::infobound::info_bound_sequence;
use condmom_core::instruments::default_family;
use condmom_core::numerics::spectral_norm;
use condmom_core::probability::sample_from;
use proptest::prelude::*;

fn agreement(case: &dgp::Case) -> (f64, f64, f64) {
    let th = case.model.theta0().to_vec();
    let (bf, _) = backfit_solve(&case.model, &case.law, &th, 1e-13, 10_000).unwrap();
    let info = |f: &condmom_core::efficient_score::ScoreField| efficient_information(&case.law, &case.model, &th, f).unwrap();
    let i_bf = info(&bf);
    let i_or = info(&oracle_projection(&case.model, &case.law, &th).unwrap());
    // only defined when every block shares its conditioning variables
    let ch = match chamberlain_score(&case.model, &case.law, &th) {
        Ok(f) => spectral_norm(&(&i_bf - &info(&f))),
        Err(_) => 0.0,
    };
    let fam = default_family(&case.law);
    let seq = info_bound_sequence(&case.model, &case.law, &th, &fam, fam.len(), 0.0).unwrap();
    (
        spectral_norm(&(&i_bf - &i_or)),
        ch,
        spectral_norm(&(seq.last() - &i_bf)),
    )
}

#[test]
fn every_builtin_design_agrees_across_methods() {
    for name in dgp::BUILTIN_NAMES {
        if name == "random" {
            continue;
        }
        let case = dgp::by_name(name).unwrap();
        let (a, b, c) = agreement(&case);
        assert!(a < 1e-8 && b < 1e-8 && c < 1e-8, "{name}: {a:e} {b:e} {c:e}");
    }
    let case = dgp::dgp_b_common_conditioning();
    assert!(chamberlain_score(&case.model, &case.law, &case.model.theta0().to_vec()).is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn random_designs_agree(seed in any::<u64>()) {
        let (a, b, c) = agreement(&dgp::random_two_block(seed));
        prop_assert!(a < 1e-8 && b < 1e-8 && c < 1e-8, "{:e} {:e} {:e}", a, b, c);
    }
}

#[test]
fn estimation_recovers_dgp_b_parameters() {
    let case = dgp::dgp_b();
    let th = case.model.theta0().to_vec();
    let sample = WeightedSample::from_set(&sample_from(&case.law, 20_000, 11).unwrap()).unwrap();
    let res = estimate(&Target::Model(case.model.clone()), &sample, &th, &EstimationOptions::default()).unwrap();
    for (k, (a, b)) in res.theta_hat.to_vec().iter().zip(&th).enumerate() {
        let se = res.variance_estimate[(k, k)].sqrt();
        assert!((a - b).abs() < 5.0 * se, "θ{k}: {a} vs {b}, se {se}");
    }
}
