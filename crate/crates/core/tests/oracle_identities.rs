//! Plug-in estimates on exact population tables against enumeration truth.

use trialfusion::estimators::{EstimatorForm, Estimator, Interpretation, NamedEstimand};
use trialfusion::nuisance::NuisanceConfig;
use trialfusion::oracle::{applicable, check_conditions, population, true_named, Scenario};

fn interpretations(name: NamedEstimand) -> Vec<Interpretation> {
    if name.has_joint_reading() {
        vec![Interpretation::AbsentEngagement, Interpretation::JointIntervention]
    } else {
        vec![Interpretation::AbsentEngagement]
    }
}

#[test]
fn applicable_functionals_recover_truth_on_every_scenario() {
    let mut checked = 0;
    for scenario in Scenario::builtin_names() {
        let scn = Scenario::builtin(scenario).unwrap();
        let flags = check_conditions(&scn).unwrap();
        let data = population(&scn).unwrap();
        let est = Estimator::new(&data, NuisanceConfig::saturated());
        for name in NamedEstimand::ALL {
            if !applicable(name, &scn, &flags) {
                continue;
            }
            for interp in interpretations(name) {
                if interp == Interpretation::JointIntervention && !flags.engagement_absent {
                    // The joint reading targets a different quantity whose
                    // identification is checked separately below.
                    continue;
                }
                let truth = true_named(&scn, name, interp).unwrap();
                for form in [EstimatorForm::Gformula, EstimatorForm::Ipw] {
                    let got = est
                        .point(&name.target(interp, form))
                        .unwrap_or_else(|e| panic!("{scenario} {name} {form:?}: {e}"));
                    assert!((got - truth).abs() < 1e-10, "{scenario} {name} {interp:?} {form:?}: {got} vs {truth}");
                    checked += 1;
                }
            }
        }
    }
    assert!(checked >= 60, "only {checked} checks ran");
}

#[test]
fn joint_reading_targets_trial_participation_means() {
    // Under engagement effects the anchored functionals still identify the
    // outcome mean under trial participation.
    let scn = Scenario::builtin("dgp-c").unwrap();
    let data = population(&scn).unwrap();
    let est = Estimator::new(&data, NuisanceConfig::saturated());
    for name in [NamedEstimand::Gamma11, NamedEstimand::Lambda, NamedEstimand::Phi] {
        let truth = true_named(&scn, name, Interpretation::JointIntervention).unwrap();
        let got = est
            .point(&name.target(Interpretation::JointIntervention, EstimatorForm::Gformula))
            .unwrap();
        assert!((got - truth).abs() < 1e-10, "{name}: {got} vs {truth}");
    }
}

#[test]
fn shifted_external_means_bias_only_the_unanchored_contrast() {
    let scn = Scenario::builtin("dgp-c").unwrap();
    let data = population(&scn).unwrap();
    let est = Estimator::new(&data, NuisanceConfig::saturated());
    let bias = |name: NamedEstimand| {
        est.point(&name.target(Interpretation::AbsentEngagement, EstimatorForm::Gformula)).unwrap()
            - true_named(&scn, name, Interpretation::AbsentEngagement).unwrap()
    };
    assert!((bias(NamedEstimand::Gamma02) + 0.05).abs() < 1e-10);
    assert!((bias(NamedEstimand::Psi) - 0.05).abs() < 1e-10);
    assert!(bias(NamedEstimand::Phi).abs() < 1e-10);
    // A constant additive shift breaks ratio transport.
    assert!(bias(NamedEstimand::Theta).abs() > 1e-3);
}

#[test]
fn scale_mismatch_separates_difference_and_ratio_anchoring() {
    let scn = Scenario::builtin("dgp-r").unwrap();
    let flags = check_conditions(&scn).unwrap();
    assert!(flags.ratio_transport && !flags.diff_transport);
    let data = population(&scn).unwrap();
    let est = Estimator::new(&data, NuisanceConfig::saturated());
    let value = |name: NamedEstimand| {
        est.point(&name.target(Interpretation::AbsentEngagement, EstimatorForm::Gformula)).unwrap()
    };
    let truth = true_named(&scn, NamedEstimand::Rho, Interpretation::AbsentEngagement).unwrap();
    assert!((value(NamedEstimand::Rho) - truth).abs() < 1e-10);
    assert!((value(NamedEstimand::Lambda) - truth).abs() > 1e-3);
}
