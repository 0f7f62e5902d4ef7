//! Exact causal quantities by enumeration over covariate cells.

use std::collections::BTreeMap;

use serde::Serialize;

use super::scenario::Scenario;
use crate::dataset::{Source, Treatment};
use crate::estimators::{describe_target, CausalTarget, EstimatorForm, Interpretation, NamedEstimand};
use crate::error::{Error, Result};

/// E[Y^{s,a} | S=population] with s the intervened participation, or the
/// population's own participation when `participation` is `None`.
pub fn true_mean(scn: &Scenario, a: Treatment, population: Source, participation: Option<Source>) -> Result<f64> {
    if !scn.has_source(population) {
        return Err(Error::InvalidScenario(format!(
            "population s={population} does not occur in scenario `{}`",
            scn.name()
        )));
    }
    let s = participation.unwrap_or(population);
    let mut total = 0.0;
    for (x, p) in scn.x_law(population) {
        total += p * scn.po_x(s, a, x)?;
    }
    Ok(total)
}

pub fn true_estimand(scn: &Scenario, target: &CausalTarget) -> Result<f64> {
    match *target {
        CausalTarget::Mean {
            treatment,
            population,
            participation,
        } => true_mean(scn, treatment, population, participation),
        CausalTarget::Effect {
            treatment,
            reference,
            population,
            participation,
        } => Ok(true_mean(scn, treatment, population, participation)?
            - true_mean(scn, reference, population, participation)?),
    }
}

/// The causal quantity a named functional targets, evaluated exactly.
pub fn true_named(scn: &Scenario, name: NamedEstimand, interpretation: Interpretation) -> Result<f64> {
    let d = describe_target(&name.target(interpretation, EstimatorForm::Gformula))?;
    true_estimand(scn, &d.causal)
}

/// Exact means and pairwise differences for every treatment and population.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct TruthTable(pub BTreeMap<String, f64>);

pub fn truth_table(scn: &Scenario) -> Result<TruthTable> {
    let mut out = BTreeMap::new();
    for &population in scn.sources().iter().filter(|&&s| s != Source::EXTERNAL) {
        for &a in scn.treatments() {
            let target = CausalTarget::Mean {
                treatment: a,
                population,
                participation: None,
            };
            out.insert(target.to_string(), true_estimand(scn, &target)?);
            for &b in scn.treatments().iter().filter(|&&b| b != a) {
                let target = CausalTarget::Effect {
                    treatment: a,
                    reference: b,
                    population,
                    participation: None,
                };
                out.insert(target.to_string(), true_estimand(scn, &target)?);
            }
        }
    }
    Ok(TruthTable(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean(name: &str, a: Treatment, population: Source) -> f64 {
        true_mean(&Scenario::builtin(name).unwrap(), a, population, None).unwrap()
    }

    #[test]
    fn dgp_a_truths() {
        assert!((mean("dgp-a", 1, Source::TRIAL) - 0.64).abs() < 1e-12);
        assert!((mean("dgp-a", 0, Source::TRIAL) - 0.34).abs() < 1e-12);
        assert!((mean("dgp-a", 2, Source::TRIAL) - 0.525).abs() < 1e-12);
    }

    #[test]
    fn dgp_c_truth_uses_trial_participation() {
        assert!((mean("dgp-c", 2, Source::TRIAL) - 0.525).abs() < 1e-12);
        let scn = Scenario::builtin("dgp-c").unwrap();
        let joint = true_mean(&scn, 2, Source::TRIAL, Some(Source::EXTERNAL)).unwrap();
        assert!((joint - 0.475).abs() < 1e-12);
    }

    #[test]
    fn dgp_d_third_population() {
        assert!((mean("dgp-d", 1, Source::TARGET) - 0.60).abs() < 1e-12);
        assert!((mean("dgp-d", 2, Source::TARGET) - 0.475).abs() < 1e-12);
        assert!((mean("dgp-d", 0, Source::TARGET) - 0.30).abs() < 1e-12);
    }

    #[test]
    fn named_truths() {
        let scn = Scenario::builtin("dgp-a").unwrap();
        let psi = true_named(&scn, NamedEstimand::Psi, Interpretation::AbsentEngagement).unwrap();
        assert!((psi - 0.115).abs() < 1e-12);
        let table = truth_table(&scn).unwrap();
        assert!((table.0["E[Y^{a=1} - Y^{a=2} | S=1]"] - 0.115).abs() < 1e-12);
    }

    #[test]
    fn constant_means_give_constant_truths() {
        let mut spec = Scenario::builtin("dgp-w").unwrap().spec().clone();
        for by_a in spec.po_mean.values_mut() {
            for cells in by_a.values_mut() {
                for m in cells.values_mut() {
                    *m = 0.25;
                }
            }
        }
        let scn = Scenario::new(spec).unwrap();
        for v in truth_table(&scn).unwrap().0.values() {
            assert!(*v == 0.25 || v.abs() < 1e-15);
        }
    }
}
