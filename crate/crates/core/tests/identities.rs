//! Cross-module identities checked on random inputs.

use lockdown_core::cost::{evaluate_j, evaluate_j_tilde};
use lockdown_core::verify::check_output_identity;
use lockdown_core::{ControlSignal, FullState, ModelParams, MortalityCurve};

#[test]
fn expected_output_identity_with_prior_deaths() {
    let params = ModelParams::default();
    let rep = check_output_identity(&params, 20, 1e-4, 3, false).unwrap();
    assert!(rep.passed, "{rep:?}");
}

#[test]
fn plain_identity_is_off_by_the_initial_deaths() {
    // With d0 > 0 the expected output is (1 - d0) w / r - J, not w / r - J.
    let params = ModelParams::default();
    let x0 = FullState::new(0.6, 0.1, 0.2, 0.1).unwrap();
    let ctl = ControlSignal::new(vec![0.0, 5.0], vec![0.4, 0.0], params.l_bar).unwrap();
    let jt = evaluate_j_tilde(x0, &ctl, &params, 1e-6).unwrap();
    let (j, _) = evaluate_j(x0.reduced(), &ctl, &params, 1e-6).unwrap();
    let scale = params.w / params.r;
    assert!(((1.0 - x0.d) * scale - j - jt).abs() < 1e-5 * scale);
    let plain_gap = (scale - j - jt).abs();
    assert!((plain_gap - x0.d * scale).abs() < 1e-5 * scale, "{plain_gap}");
}

#[test]
fn identity_holds_for_state_dependent_mortality() {
    let params = ModelParams {
        phi: MortalityCurve::AffineSaturating {
            phi0: 0.005,
            slope: 0.2,
            cap: 0.05,
        },
        ..ModelParams::default()
    };
    let rep = check_output_identity(&params, 20, 1e-4, 4, true).unwrap();
    assert!(rep.passed, "{rep:?}");
}
