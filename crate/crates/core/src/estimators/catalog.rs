//! Names, identification-result numbers, causal targets and condition lists
//! for every supported functional.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use super::{ContrastSpec, EstimandSpec, EstimatorForm, Interpretation, Strategy, Target};
use crate::dataset::{Source, Treatment};
use crate::error::{Error, Result};

/// The potential-outcome quantity a functional identifies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CausalTarget {
    /// E[Y^{a} | S = population], or E[Y^{s=participation, a} | S = population].
    Mean {
        treatment: Treatment,
        population: Source,
        participation: Option<Source>,
    },
    /// E[Y^{a} - Y^{a'} | S = population], likewise under joint intervention.
    Effect {
        treatment: Treatment,
        reference: Treatment,
        population: Source,
        participation: Option<Source>,
    },
}

impl fmt::Display for CausalTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let po = |a: Treatment, p: Option<Source>| match p {
            Some(s) => format!("Y^{{s={s},a={a}}}"),
            None => format!("Y^{{a={a}}}"),
        };
        match *self {
            CausalTarget::Mean {
                treatment,
                population,
                participation,
            } => write!(f, "E[{} | S={population}]", po(treatment, participation)),
            CausalTarget::Effect {
                treatment,
                reference,
                population,
                participation,
            } => write!(
                f,
                "E[{} - {} | S={population}]",
                po(treatment, participation),
                po(reference, participation)
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Description {
    pub id: String,
    pub proposition: Option<u8>,
    pub causal: CausalTarget,
    pub assumptions: Vec<String>,
}

fn cond(id: &str, qualifier: &str) -> String {
    if qualifier.is_empty() {
        id.to_string()
    } else {
        format!("{id} ({qualifier})")
    }
}

fn a(t: Treatment) -> String {
    format!("a={t}")
}

fn pair(t0: Treatment, t1: Treatment) -> String {
    format!("a={t0},{t1}")
}

fn joint(interp: Interpretation) -> bool {
    interp == Interpretation::JointIntervention
}

fn unsupported(spec: &EstimandSpec, why: &str) -> Error {
    Error::InvalidEstimand(format!("{:?} with source {}, treatment {}, target {}: {why}", spec.strategy, spec.source, spec.treatment, spec.target))
}

/// Identification result, id and condition list for a single functional.
pub fn describe(spec: &EstimandSpec) -> Result<Description> {
    let (s, t, tgt) = (spec.source.code(), spec.treatment, spec.target.code());
    let a0 = spec.anchor_treatment;
    let anchor = spec.anchor_source.code();
    let is_joint = joint(spec.interpretation);
    if tgt == 0 {
        return Err(unsupported(spec, "the target population must be 1 or 2"));
    }
    let causal = CausalTarget::Mean {
        treatment: t,
        population: spec.target,
        participation: is_joint.then_some(Source::TRIAL),
    };
    if is_joint && tgt != 1 {
        return Err(unsupported(spec, "joint-intervention results target the index trial population"));
    }
    let (id, proposition, assumptions): (String, Option<u8>, Vec<String>) = match spec.strategy {
        Strategy::PomGform => match (s, tgt) {
            (1, 1) if is_joint => (
                format!("gamma_1_{t}"),
                (t == 1).then_some(15),
                vec![cond("A1†", &format!("s=1,{}", a(t))), cond("A2†", &a(t)), cond("A3", &a(t))],
            ),
            (1, 1) => (
                format!("gamma_1_{t}"),
                (t == 1).then_some(1),
                vec![cond("A1", &a(t)), cond("A2", &a(t)), cond("A3", &a(t))],
            ),
            (0, 1) if !is_joint => (
                format!("gamma_0_{t}"),
                (t == 2).then_some(7),
                vec![cond("A1", &a(t)), cond("A4", &a(t)), cond("A7", &a(t)), cond("A8", &a(t)), cond("A5", "")],
            ),
            (1, 2) => (
                format!("gamma_star_1_{t}"),
                (t == 1).then_some(20),
                vec![
                    cond("A1", &a(t)),
                    cond("A2", &a(t)),
                    cond("A3", &a(t)),
                    cond("A4*", &format!("s=1,{}", a(t))),
                    cond("A5*", "s=1"),
                ],
            ),
            (0, 2) => (
                format!("gamma_star_0_{t}"),
                (t == 2).then_some(21),
                vec![
                    cond("A1", &a(t)),
                    cond("A7", &a(t)),
                    cond("A8", &a(t)),
                    cond("A4*", &format!("s=0,{}", a(t))),
                    cond("A5*", "s=0"),
                ],
            ),
            (2, 2) => (
                format!("gamma_star_2_{t}"),
                None,
                vec![cond("A1", &a(t)), cond("A7*", &a(t)), cond("A8*", &a(t))],
            ),
            _ => return Err(unsupported(spec, "no identification result for this source/target pair")),
        },
        Strategy::PomPooledControl => {
            if is_joint || tgt != 1 {
                return Err(unsupported(spec, "pooled-control identification targets the trial population without engagement effects"));
            }
            (
                "beta".into(),
                (t == 0).then_some(3),
                vec![cond("A1", &a(t)), cond("A2", &a(t)), cond("A3", &a(t)), cond("A4", &a(t)), cond("A6", "")],
            )
        }
        Strategy::PomExternalUniform => {
            if is_joint || tgt != 1 || s != 0 {
                return Err(unsupported(spec, "uniform-external identification uses source 0 and targets the trial population"));
            }
            (
                "eta".into(),
                (t == 2).then_some(5),
                vec![cond("A1", &a(t)), cond("A4", &a(t)), cond("A5", ""), cond("A6′", "")],
            )
        }
        Strategy::PomDiffAnchor => {
            if s != 0 || anchor != 1 {
                return Err(unsupported(spec, "difference anchoring uses source 0 for the effect and the trial as anchor"));
            }
            let standard = t == 2 && a0 == 0;
            match (tgt, is_joint) {
                (1, false) => (
                    "lambda".into(),
                    standard.then_some(9),
                    vec![
                        cond("A1", &a(a0)),
                        cond("A2", &a(a0)),
                        cond("A3", &a(a0)),
                        cond("A7", &a(a0)),
                        cond("A1", &a(t)),
                        cond("A7", &a(t)),
                        cond("A5", ""),
                        cond("A8", &pair(a0, t)),
                        cond("A9", &pair(a0, t)),
                    ],
                ),
                (1, true) => (
                    "lambda".into(),
                    standard.then_some(16),
                    vec![
                        cond("A1†", &format!("s=0,{}", a(a0))),
                        cond("A1†", &format!("s=0,{}", a(t))),
                        cond("A1†", &format!("s=1,{}", a(a0))),
                        cond("A2†", &a(a0)),
                        cond("A3", &a(a0)),
                        cond("A5", ""),
                        cond("A7†", &pair(a0, t)),
                        cond("A8", &pair(a0, t)),
                        cond("A9†", &pair(a0, t)),
                        cond("A11", &pair(a0, t)),
                    ],
                ),
                // Only meaningful as the subtrahend of the difference-scale
                // effect in the third population.
                _ => (
                    "lambda_star".into(),
                    None,
                    vec![
                        cond("A1", &pair(a0, t)),
                        cond("A2", &a(a0)),
                        cond("A3", &a(a0)),
                        cond("A4*", &format!("s=1,{}", a(a0))),
                        cond("A5*", "s=0,1"),
                        cond("A7", &pair(a0, t)),
                        cond("A8", &pair(a0, t)),
                        cond("A9*", &format!("s=0,{}", pair(a0, t))),
                    ],
                ),
            }
        }
        Strategy::PomRatioAnchor => match (s, anchor, tgt) {
            (0, 1, 1) => {
                let standard = (t == 2 && a0 == 0).then_some(());
                if is_joint {
                    (
                        "rho".into(),
                        standard.map(|_| 18),
                        vec![
                            cond("A1†", &format!("s=0,{}", a(a0))),
                            cond("A1†", &format!("s=0,{}", a(t))),
                            cond("A1†", &format!("s=1,{}", a(a0))),
                            cond("A2†", &a(a0)),
                            cond("A3", &a(a0)),
                            cond("A5", ""),
                            cond("A7†", &pair(a0, t)),
                            cond("A8", &pair(a0, t)),
                            cond("A10†", &pair(a0, t)),
                            cond("A11′", &pair(a0, t)),
                        ],
                    )
                } else {
                    (
                        "rho".into(),
                        standard.map(|_| 11),
                        vec![
                            cond("A1", &a(a0)),
                            cond("A2", &a(a0)),
                            cond("A3", &a(a0)),
                            cond("A1", &a(t)),
                            cond("A7", &a(t)),
                            cond("A5", ""),
                            cond("A8", &pair(a0, t)),
                            cond("A10", &pair(a0, t)),
                        ],
                    )
                }
            }
            (1, 2, 2) => (
                "rho_star_1".into(),
                (t == 1 && a0 == 0).then_some(24),
                vec![
                    cond("A1", &pair(a0, t)),
                    cond("A2", &pair(a0, t)),
                    cond("A3", &pair(a0, t)),
                    cond("A5*", "s=1"),
                    cond("A7*", &a(a0)),
                    cond("A8*", &a(a0)),
                    cond("A10*", &format!("s=1,{}", pair(a0, t))),
                ],
            ),
            (0, 2, 2) => (
                "rho_star_2".into(),
                (t == 2 && a0 == 0).then_some(25),
                vec![
                    cond("A1", &pair(a0, t)),
                    cond("A7", &pair(a0, t)),
                    cond("A8", &pair(a0, t)),
                    cond("A5*", "s=0"),
                    cond("A7*", &a(a0)),
                    cond("A8*", &a(a0)),
                    cond("A10*", &format!("s=0,{}", pair(a0, t))),
                ],
            ),
            _ => return Err(unsupported(spec, "no ratio-anchored identification result for this source/anchor/target")),
        },
        Strategy::PomNestedW => {
            if is_joint || s != 0 || tgt != 1 {
                return Err(unsupported(spec, "nested adjustment uses source 0 and targets the trial population"));
            }
            (
                "mu".into(),
                (t == 2).then_some(13),
                vec![cond("A1", &a(t)), cond("A4", &a(t)), cond("A7′", &a(t)), cond("A8′", &a(t)), cond("A5", "")],
            )
        }
    };
    Ok(Description {
        id,
        proposition,
        causal,
        assumptions,
    })
}

/// Description of a difference contrast. Condition lists are the union of the
/// two legs, except where an identification result carries its own list.
pub fn describe_contrast(spec: &ContrastSpec) -> Result<Description> {
    let l = &spec.left;
    let r = &spec.right;
    if l.target != r.target || l.interpretation != r.interpretation {
        return Err(Error::InvalidEstimand(
            "contrast legs must share the target population and interpretation".into(),
        ));
    }
    let left = describe(l)?;
    let right = describe(r)?;
    let is_joint = joint(l.interpretation);
    let proposition = match (left.proposition, right.proposition) {
        (Some(1), Some(3)) => Some(4),
        (Some(1), Some(5)) => Some(6),
        (Some(1), Some(7)) => Some(8),
        (Some(1), Some(9)) => Some(10),
        (Some(1), Some(11)) => Some(12),
        (Some(1), Some(13)) => Some(14),
        (Some(15), Some(16)) => Some(17),
        (Some(15), Some(18)) => Some(19),
        (Some(20), Some(21)) => Some(22),
        (Some(24), Some(25)) => Some(26),
        (Some(20), None) if right.id == "lambda_star" && r.treatment == 2 && r.anchor_treatment == 0 => Some(23),
        _ => None,
    };
    let id = match proposition {
        Some(4) => "kappa".to_string(),
        Some(6) => "zeta".into(),
        Some(8) => "psi".into(),
        Some(10) | Some(17) => "phi".into(),
        Some(12) | Some(19) => "theta".into(),
        Some(14) => "xi".into(),
        Some(22) => "psi_star".into(),
        Some(23) => "phi_star".into(),
        Some(26) => "nu".into(),
        _ => format!("{}_minus_{}", left.id, right.id),
    };
    let assumptions = if proposition == Some(23) {
        let (a0, a1, a2) = (r.anchor_treatment, l.treatment, r.treatment);
        vec![
            cond("A1", "all a"),
            cond("A2", &pair(a0, a1)),
            cond("A3", &pair(a0, a1)),
            cond("A5*", "s=0,1"),
            cond("A7", &pair(a0, a2)),
            cond("A8", &pair(a0, a2)),
            cond("A9*", &format!("s=1,{}", pair(a0, a1))),
            cond("A9*", &format!("s=0,{}", pair(a0, a2))),
        ]
    } else {
        let mut all = left.assumptions.clone();
        for c in right.assumptions {
            if !all.contains(&c) {
                all.push(c);
            }
        }
        all
    };
    let (CausalTarget::Mean { treatment, population, .. }, CausalTarget::Mean { treatment: reference, .. }) =
        (left.causal, right.causal)
    else {
        unreachable!("legs are potential-outcome means")
    };
    Ok(Description {
        id,
        proposition,
        causal: CausalTarget::Effect {
            treatment,
            reference,
            population,
            participation: is_joint.then_some(Source::TRIAL),
        },
        assumptions,
    })
}

pub fn describe_target(target: &Target) -> Result<Description> {
    match target {
        Target::Estimand(e) => describe(e),
        Target::Contrast(c) => describe_contrast(c),
    }
}

/// Functionals addressable by name.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NamedEstimand {
    Gamma11,
    Gamma10,
    Gamma02,
    Gamma00,
    Beta,
    Eta,
    Lambda,
    Rho,
    Mu,
    GammaStar11,
    GammaStar10,
    GammaStar02,
    GammaStar00,
    LambdaStar,
    RhoStar1,
    RhoStar2,
    Kappa,
    Zeta,
    Psi,
    Phi,
    Theta,
    Xi,
    PsiStar,
    PhiStar,
    Nu,
}

impl NamedEstimand {
    pub const ALL: [NamedEstimand; 25] = [
        NamedEstimand::Gamma11,
        NamedEstimand::Gamma10,
        NamedEstimand::Gamma02,
        NamedEstimand::Gamma00,
        NamedEstimand::Beta,
        NamedEstimand::Eta,
        NamedEstimand::Lambda,
        NamedEstimand::Rho,
        NamedEstimand::Mu,
        NamedEstimand::GammaStar11,
        NamedEstimand::GammaStar10,
        NamedEstimand::GammaStar02,
        NamedEstimand::GammaStar00,
        NamedEstimand::LambdaStar,
        NamedEstimand::RhoStar1,
        NamedEstimand::RhoStar2,
        NamedEstimand::Kappa,
        NamedEstimand::Zeta,
        NamedEstimand::Psi,
        NamedEstimand::Phi,
        NamedEstimand::Theta,
        NamedEstimand::Xi,
        NamedEstimand::PsiStar,
        NamedEstimand::PhiStar,
        NamedEstimand::Nu,
    ];

    pub fn name(self) -> &'static str {
        use NamedEstimand::*;
        match self {
            Gamma11 => "gamma_1_1",
            Gamma10 => "gamma_1_0",
            Gamma02 => "gamma_0_2",
            Gamma00 => "gamma_0_0",
            Beta => "beta",
            Eta => "eta",
            Lambda => "lambda",
            Rho => "rho",
            Mu => "mu",
            GammaStar11 => "gamma_star_1_1",
            GammaStar10 => "gamma_star_1_0",
            GammaStar02 => "gamma_star_0_2",
            GammaStar00 => "gamma_star_0_0",
            LambdaStar => "lambda_star",
            RhoStar1 => "rho_star_1",
            RhoStar2 => "rho_star_2",
            Kappa => "kappa",
            Zeta => "zeta",
            Psi => "psi",
            Phi => "phi",
            Theta => "theta",
            Xi => "xi",
            PsiStar => "psi_star",
            PhiStar => "phi_star",
            Nu => "nu",
        }
    }

    /// Whether the result carries a separate reading under joint intervention
    /// on participation and treatment.
    pub fn has_joint_reading(self) -> bool {
        use NamedEstimand::*;
        matches!(self, Gamma11 | Gamma10 | Lambda | Rho | Phi | Theta)
    }

    pub fn target(self, interpretation: Interpretation, form: EstimatorForm) -> Target {
        use NamedEstimand::*;
        let e = |strategy, source: u8, treatment, target: u8, anchor_source: u8| {
            EstimandSpec {
                strategy,
                source: Source::new(source).expect("static"),
                treatment,
                target: Source::new(target).expect("static"),
                anchor_treatment: 0,
                anchor_source: Source::new(anchor_source).expect("static"),
                interpretation,
                form,
            }
        };
        let gamma = |s, a, t| e(Strategy::PomGform, s, a, t, 1);
        let contrast = |left: EstimandSpec, right: EstimandSpec| {
            Target::Contrast(ContrastSpec::difference(left, right))
        };
        let lambda = |t| e(Strategy::PomDiffAnchor, 0, 2, t, 1);
        let rho = e(Strategy::PomRatioAnchor, 0, 2, 1, 1);
        let rho1 = e(Strategy::PomRatioAnchor, 1, 1, 2, 2);
        let rho2 = e(Strategy::PomRatioAnchor, 0, 2, 2, 2);
        match self {
            Gamma11 => Target::Estimand(gamma(1, 1, 1)),
            Gamma10 => Target::Estimand(gamma(1, 0, 1)),
            Gamma02 => Target::Estimand(gamma(0, 2, 1)),
            Gamma00 => Target::Estimand(gamma(0, 0, 1)),
            Beta => Target::Estimand(e(Strategy::PomPooledControl, 1, 0, 1, 1)),
            Eta => Target::Estimand(e(Strategy::PomExternalUniform, 0, 2, 1, 1)),
            Lambda => Target::Estimand(lambda(1)),
            Rho => Target::Estimand(rho),
            Mu => Target::Estimand(e(Strategy::PomNestedW, 0, 2, 1, 1)),
            GammaStar11 => Target::Estimand(gamma(1, 1, 2)),
            GammaStar10 => Target::Estimand(gamma(1, 0, 2)),
            GammaStar02 => Target::Estimand(gamma(0, 2, 2)),
            GammaStar00 => Target::Estimand(gamma(0, 0, 2)),
            LambdaStar => Target::Estimand(lambda(2)),
            RhoStar1 => Target::Estimand(rho1),
            RhoStar2 => Target::Estimand(rho2),
            Kappa => contrast(gamma(1, 1, 1), e(Strategy::PomPooledControl, 1, 0, 1, 1)),
            Zeta => contrast(gamma(1, 1, 1), e(Strategy::PomExternalUniform, 0, 2, 1, 1)),
            Psi => contrast(gamma(1, 1, 1), gamma(0, 2, 1)),
            Phi => contrast(gamma(1, 1, 1), lambda(1)),
            Theta => contrast(gamma(1, 1, 1), rho),
            Xi => contrast(gamma(1, 1, 1), e(Strategy::PomNestedW, 0, 2, 1, 1)),
            PsiStar => contrast(gamma(1, 1, 2), gamma(0, 2, 2)),
            PhiStar => contrast(gamma(1, 1, 2), lambda(2)),
            Nu => contrast(rho1, rho2),
        }
    }
}

impl fmt::Display for NamedEstimand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NamedEstimand {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        NamedEstimand::ALL
            .iter()
            .copied()
            .find(|n| n.name() == s)
            .ok_or_else(|| Error::InvalidEstimand(format!("unknown estimand name `{s}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn describe_named(n: NamedEstimand, interp: Interpretation) -> Description {
        describe_target(&n.target(interp, EstimatorForm::Gformula)).unwrap()
    }

    #[test]
    fn named_ids_round_trip() {
        for n in NamedEstimand::ALL {
            let d = describe_named(n, Interpretation::AbsentEngagement);
            assert_eq!(d.id, n.name(), "{n:?}");
            assert_eq!(n.name().parse::<NamedEstimand>().unwrap(), n);
        }
    }

    #[test]
    fn proposition_field_matches_functionals() {
        use NamedEstimand::*;
        let absent = [
            (Gamma11, 1),
            (Beta, 3),
            (Kappa, 4),
            (Eta, 5),
            (Zeta, 6),
            (Gamma02, 7),
            (Psi, 8),
            (Lambda, 9),
            (Phi, 10),
            (Rho, 11),
            (Theta, 12),
            (Mu, 13),
            (Xi, 14),
            (GammaStar11, 20),
            (GammaStar02, 21),
            (PsiStar, 22),
            (PhiStar, 23),
            (RhoStar1, 24),
            (RhoStar2, 25),
            (Nu, 26),
        ];
        for (n, p) in absent {
            assert_eq!(describe_named(n, Interpretation::AbsentEngagement).proposition, Some(p), "{n:?}");
        }
        let joint = [(Gamma11, 15), (Lambda, 16), (Phi, 17), (Rho, 18), (Theta, 19)];
        for (n, p) in joint {
            assert_eq!(describe_named(n, Interpretation::JointIntervention).proposition, Some(p), "{n:?}");
        }
    }

    #[test]
    fn condition_lists() {
        let d = describe_named(NamedEstimand::Beta, Interpretation::AbsentEngagement);
        assert_eq!(d.assumptions, ["A1 (a=0)", "A2 (a=0)", "A3 (a=0)", "A4 (a=0)", "A6"]);
        let d = describe_named(NamedEstimand::Eta, Interpretation::AbsentEngagement);
        assert_eq!(d.assumptions, ["A1 (a=2)", "A4 (a=2)", "A5", "A6′"]);
        let d = describe_named(NamedEstimand::Psi, Interpretation::AbsentEngagement);
        assert_eq!(
            d.assumptions,
            ["A1 (a=1)", "A2 (a=1)", "A3 (a=1)", "A1 (a=2)", "A4 (a=2)", "A7 (a=2)", "A8 (a=2)", "A5"]
        );
        let d = describe_named(NamedEstimand::Gamma11, Interpretation::JointIntervention);
        assert_eq!(d.assumptions, ["A1† (s=1,a=1)", "A2† (a=1)", "A3 (a=1)"]);
        assert_eq!(d.causal.to_string(), "E[Y^{s=1,a=1} | S=1]");
        let d = describe_named(NamedEstimand::PhiStar, Interpretation::AbsentEngagement);
        assert_eq!(d.assumptions[0], "A1 (all a)");
        assert_eq!(d.causal.to_string(), "E[Y^{a=1} - Y^{a=2} | S=2]");
    }

    #[test]
    fn joint_reading_only_where_defined() {
        for n in NamedEstimand::ALL {
            let r = describe_target(&n.target(Interpretation::JointIntervention, EstimatorForm::Gformula));
            assert_eq!(r.is_ok(), n.has_joint_reading(), "{n:?}");
        }
    }
}
