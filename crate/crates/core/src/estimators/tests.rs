use super::*;
use crate::dataset::{read_csv, LoadOptions};
use crate::oracle::{population, Scenario};

fn pop(name: &str) -> CompositeDataset {
    population(&Scenario::builtin(name).unwrap()).unwrap()
}

fn named(data: &CompositeDataset, name: NamedEstimand, form: EstimatorForm) -> Result<f64> {
    Estimator::new(data, NuisanceConfig::saturated()).point(&name.target(Interpretation::AbsentEngagement, form))
}

fn assert_close(got: f64, want: f64, tol: f64) {
    assert!((got - want).abs() <= tol, "got {got}, want {want}");
}

#[test]
fn population_level_values() {
    use NamedEstimand::*;
    let cases = [
        ("dgp-a", Gamma11, 0.64),
        ("dgp-a", Gamma10, 0.34),
        ("dgp-a", Gamma02, 0.525),
        ("dgp-b", Gamma02, 0.525),
        ("dgp-b", Eta, 0.525),
        ("dgp-a6", Beta, 0.34),
        ("dgp-a", Lambda, 0.525),
        ("dgp-a", Rho, 0.525),
        ("dgp-c", Lambda, 0.525),
        ("dgp-c", Gamma02, 0.475),
        ("dgp-c", Psi, 0.165),
        ("dgp-c", Phi, 0.115),
        ("dgp-r", Rho, 0.525),
        ("dgp-d", GammaStar11, 0.60),
        ("dgp-d", RhoStar2, 0.475),
        ("dgp-d", Nu, 0.125),
        ("dgp-w", Mu, 0.525),
    ];
    for (scn, name, want) in cases {
        for form in [EstimatorForm::Gformula, EstimatorForm::Ipw] {
            let got = named(&pop(scn), name, form).unwrap();
            assert!((got - want).abs() < 1e-10, "{scn} {name} {form:?}: {got} vs {want}");
        }
    }
}

#[test]
fn naive_external_mean_is_confounded_by_w() {
    let got = named(&pop("dgp-w"), NamedEstimand::Gamma02, EstimatorForm::Gformula).unwrap();
    assert_close(got, 0.7 * 0.65 + 0.3 * (0.35 + 0.1 * (0.45 - 0.25) / 0.7), 1e-12);
}

#[test]
fn constant_outcome_gives_constant() {
    let mut text = String::from("x_1,s,a,y\n");
    for (x, s, a) in [(0, 1, 0), (1, 1, 0), (0, 1, 1), (1, 1, 1), (0, 0, 0), (1, 0, 0), (0, 0, 2), (1, 0, 2), (1, 0, 2)] {
        text.push_str(&format!("{x},{s},{a},0.3\n"));
    }
    let d = read_csv(text.as_bytes(), &LoadOptions::default()).unwrap();
    use NamedEstimand::*;
    for name in [Gamma11, Gamma10, Gamma02, Lambda, Rho] {
        for form in [EstimatorForm::Gformula, EstimatorForm::Ipw] {
            assert_close(named(&d, name, form).unwrap(), 0.3, 1e-12);
        }
    }
}

#[test]
fn pooled_control_without_external_rows_equals_trial_arm() {
    let text = "x_1,s,a,y\n0,1,0,1\n1,1,0,0\n0,1,0,0\n0,1,1,1\n1,1,1,1\n";
    let d = read_csv(text.as_bytes(), &LoadOptions::default()).unwrap();
    let e = Estimator::new(&d, NuisanceConfig::saturated());
    let beta = e.pom_pooled_control().unwrap().point;
    let gamma = e.pom_gform(Source::TRIAL, 0, Source::TRIAL).unwrap().point;
    assert_eq!(beta, gamma);
}

#[test]
fn external_mean_with_identical_covariate_law_is_plain_mean() {
    let text = "x_1,s,a,y\n0,1,1,1\n1,1,1,0\n0,1,0,1\n1,1,0,0\n0,0,2,1\n1,0,2,0\n0,0,2,0\n1,0,2,0\n";
    let d = read_csv(text.as_bytes(), &LoadOptions::default()).unwrap();
    let e = Estimator::new(&d, NuisanceConfig::saturated());
    assert_close(e.pom_external_uniform().unwrap().point, 0.25, 1e-15);
}

#[test]
fn diff_anchor_collapses_when_sources_coincide() {
    // External rows copy the trial control arm, with a=2 a relabelled a=0.
    let mut text = String::from("x_1,s,a,y\n");
    let control = [(0, 1), (0, 0), (1, 1), (1, 0), (1, 0)];
    for (x, y) in control {
        text.push_str(&format!("{x},1,0,{y}\n{x},0,0,{y}\n{x},0,2,{y}\n"));
    }
    text.push_str("0,1,1,1\n1,1,1,0\n");
    let d = read_csv(text.as_bytes(), &LoadOptions::default()).unwrap();
    let e = Estimator::new(&d, NuisanceConfig::saturated());
    let lambda = e.pom_diff_anchor(Interpretation::AbsentEngagement).unwrap().point;
    let gamma10 = e.pom_gform(Source::TRIAL, 0, Source::TRIAL).unwrap().point;
    assert_close(lambda, gamma10, 1e-12);
    // The fitted control means agree, so both anchors reduce to γ_{0,2}.
    let rho = e.pom_ratio_anchor(Source::TRIAL, Source::TRIAL).unwrap().point;
    let gamma02 = e.pom_gform(Source::EXTERNAL, 2, Source::TRIAL).unwrap().point;
    assert_close(lambda, gamma02, 1e-12);
    assert_close(rho, gamma02, 1e-12);
}

#[test]
fn unit_ratio_returns_anchor_mean() {
    let mut text = String::from("x_1,s,a,y\n0,1,0,1\n1,1,0,0\n1,1,0,1\n0,1,1,1\n1,1,1,1\n");
    for (x, y) in [(0, 1), (0, 0), (1, 1)] {
        text.push_str(&format!("{x},0,0,{y}\n{x},0,2,{y}\n"));
    }
    let d = read_csv(text.as_bytes(), &LoadOptions::default()).unwrap();
    let e = Estimator::new(&d, NuisanceConfig::saturated());
    let rho = e.pom_ratio_anchor(Source::TRIAL, Source::TRIAL).unwrap().point;
    let anchor = e.pom_gform(Source::TRIAL, 0, Source::TRIAL).unwrap().point;
    assert_close(rho, anchor, 1e-12);
}

#[test]
fn nested_w_with_inert_w_equals_external_mean() {
    let mut spec = Scenario::builtin("dgp-w").unwrap().spec().clone();
    let a_law = spec.treatment_law.get_mut(&Source::EXTERNAL).unwrap();
    for (cell, law) in a_law.iter_mut() {
        let p2 = if cell.0[0] == 0 { 0.4 } else { 0.7 };
        law.insert(0, 1.0 - p2);
        law.insert(2, p2);
    }
    for by_a in spec.po_mean.values_mut() {
        for cells in by_a.values_mut() {
            for (cell, m) in cells.iter_mut() {
                *m = if cell.0[1] == 1 { *m - 0.1 } else { *m + 0.1 };
            }
        }
    }
    let d = population(&Scenario::new(spec).unwrap()).unwrap();
    let e = Estimator::new(&d, NuisanceConfig::saturated());
    let mu = e.pom_nested_w().unwrap().point;
    let gamma02 = e.pom_gform(Source::EXTERNAL, 2, Source::TRIAL).unwrap().point;
    assert_close(mu, gamma02, 1e-12);
    assert_close(mu, 0.525, 1e-12);
}

#[test]
fn estimand_preconditions() {
    let a = pop("dgp-a");
    let e = Estimator::new(&a, NuisanceConfig::saturated());
    assert!(matches!(e.pom_pooled_control(), Err(Error::ExternalNotUniform(_))));
    assert!(matches!(e.pom_external_uniform(), Err(Error::ExternalNotUniform(_))));
    assert!(matches!(e.pom_gform(Source::TRIAL, 1, Source::TARGET), Err(Error::EmptyTarget(_))));
    assert!(matches!(e.pom_nested_w(), Err(Error::MissingW(_))));
    assert!(matches!(e.pom_gform(Source::TRIAL, 7, Source::TRIAL), Err(Error::EmptyCell { .. })));
    let joint_beta = Target::named(NamedEstimand::Beta).with_interpretation(Interpretation::JointIntervention);
    assert!(matches!(e.report(&joint_beta), Err(Error::InvalidEstimand(_))));
    let mismatched = ContrastSpec::difference(
        EstimandSpec::gform(Source::TRIAL, 1, Source::TRIAL),
        EstimandSpec::gform(Source::TRIAL, 0, Source::TARGET),
    );
    assert!(matches!(e.contrast(&mismatched), Err(Error::InvalidEstimand(_))));

    let b = pop("dgp-b");
    let e = Estimator::new(&b, NuisanceConfig::saturated());
    assert!(matches!(
        e.pom_diff_anchor(Interpretation::AbsentEngagement),
        Err(Error::MissingAnchorArm { .. })
    ));
}

#[test]
fn near_zero_denominator_is_an_error() {
    let text = "x_1,s,a,y\n0,1,0,1\n1,1,0,0\n0,1,1,1\n1,1,1,1\n0,0,0,0\n1,0,0,1\n0,0,2,1\n1,0,2,1\n";
    let d = read_csv(text.as_bytes(), &LoadOptions::default()).unwrap();
    let e = Estimator::new(&d, NuisanceConfig::saturated());
    for form in [EstimatorForm::Gformula, EstimatorForm::Ipw] {
        let r = e.report(&Target::named(NamedEstimand::Rho).with_form(form));
        assert!(matches!(r, Err(Error::DenominatorNearZero { .. })), "{form:?}: {r:?}");
    }
}

#[test]
fn positivity_floor_escalates() {
    // The trial cell x=2 has no external counterpart.
    let text = "x_1,s,a,y\n0,1,1,1\n1,1,1,0\n2,1,1,1\n0,1,0,1\n1,1,0,0\n2,1,0,1\n0,0,2,1\n1,0,2,0\n";
    let d = read_csv(text.as_bytes(), &LoadOptions::default()).unwrap();
    let e = Estimator::new(&d, NuisanceConfig::saturated());
    let r = e.report(&Target::named(NamedEstimand::Gamma02).with_form(EstimatorForm::Ipw));
    assert!(matches!(r, Err(Error::PositivityFloorTriggered { .. })), "{r:?}");
}

#[test]
fn reports_carry_metadata() {
    let b = pop("dgp-b");
    let e = Estimator::new(&b, NuisanceConfig::saturated());
    let r = e.report(&Target::named(NamedEstimand::Zeta)).unwrap();
    assert_eq!(r.estimand_id, "zeta");
    assert_eq!(r.proposition, Some(6));
    assert_eq!(r.causal_estimand, "E[Y^{a=1} - Y^{a=2} | S=1]");
    assert!(r.ci_lo.is_none());
    assert!((r.n_by_source["0"] - 0.5).abs() < 1e-12);
    let json = serde_json::to_value(&r).unwrap();
    for field in ["estimand_id", "proposition", "point", "ci_lo", "ci_hi", "n_by_source", "assumptions", "warnings"] {
        assert!(json.get(field).is_some(), "{field}");
    }
}

#[test]
fn interval_is_widened_to_contain_point() {
    let a = pop("dgp-a");
    let e = Estimator::new(&a, NuisanceConfig::saturated());
    let mut r = e.pom_gform(Source::TRIAL, 1, Source::TRIAL).unwrap();
    let info = IntervalInfo {
        method: "percentile".into(),
        level: 0.95,
        replicates: 2,
        failed_replicates: 0,
    };
    r.set_interval(0.7, 0.8, info);
    assert_eq!(r.contains(r.point), Some(true));
    assert_eq!(r.warnings.len(), 1);
}

#[test]
fn engagement_flag_changes_only_metadata() {
    let c = pop("dgp-c");
    let e = Estimator::new(&c, NuisanceConfig::saturated());
    for name in [NamedEstimand::Lambda, NamedEstimand::Phi, NamedEstimand::Rho, NamedEstimand::Theta] {
        let absent = e.report(&name.target(Interpretation::AbsentEngagement, EstimatorForm::Gformula)).unwrap();
        let joint = e.report(&name.target(Interpretation::JointIntervention, EstimatorForm::Gformula)).unwrap();
        assert_eq!(absent.point.to_bits(), joint.point.to_bits());
        assert_ne!(absent.assumptions, joint.assumptions);
    }
}

#[test]
fn concurrent_use_shares_the_cache() {
    let a = pop("dgp-a");
    let e = Estimator::new(&a, NuisanceConfig::saturated());
    let values: Vec<f64> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..4)
            .map(|_| scope.spawn(|| e.point(&Target::named(NamedEstimand::Phi)).unwrap()))
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert!(values.iter().all(|v| v.to_bits() == values[0].to_bits()));
    assert!(e.fitted_models().len() >= 3);
}
