//! Identification conditions decided exactly from scenario tables.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::scenario::Scenario;
use crate::dataset::{CellKey, Source, Treatment};
use crate::estimators::NamedEstimand;
use crate::error::Result;

/// Two table entries are equal when they differ by at most this much.
pub const FLAG_TOLERANCE: f64 = 1e-12;

/// The shared control treatment all anchoring conditions refer to.
const ANCHOR: Treatment = 0;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= FLAG_TOLERANCE
}

/// Positivity conditions (A3, A5, A8, A8′).
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Positivity {
    /// A3: every trial treatment has positive probability in every trial cell.
    pub trial: bool,
    /// A5: every trial covariate cell also occurs in the external population.
    pub participation: bool,
    /// A8 per external treatment, over trial covariate cells.
    pub external: BTreeMap<Treatment, bool>,
    /// A8′ per external treatment, over (X, W) cells.
    pub external_given_w: BTreeMap<Treatment, bool>,
}

/// Conditions relating the third population (s=2) to the other two.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TargetFlags {
    /// A4* per treatment, trial versus third population.
    pub mean_transport_trial: BTreeMap<Treatment, bool>,
    /// A4* per treatment, external versus third population.
    pub mean_transport_external: BTreeMap<Treatment, bool>,
    /// A9*: difference effects against treatment 0, trial versus third population.
    pub diff_transport_trial: bool,
    pub diff_transport_external: bool,
    /// A10*: ratio effects against treatment 0.
    pub ratio_transport_trial: bool,
    pub ratio_transport_external: bool,
    /// A5*: third-population covariate cells occur in the trial / external population.
    pub support_trial: bool,
    pub support_external: bool,
    /// A8*: treatment 0 has positive probability in every third-population cell.
    pub anchor_positivity: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ConditionFlags {
    /// Potential-outcome means do not depend on the intervened participation.
    pub engagement_absent: bool,
    /// A4 per treatment: E[Y^a | X, S=1] = E[Y^a | X, S=0] on shared cells.
    pub mean_transport: BTreeMap<Treatment, bool>,
    /// A9: difference effects against treatment 0 agree across the two sources.
    pub diff_transport: bool,
    /// A10: ratio effects against treatment 0 agree across the two sources.
    pub ratio_transport: bool,
    /// A11: no interaction between participation and treatment on the difference scale.
    pub no_interaction_diff: bool,
    /// A11′: the same on the ratio scale.
    pub no_interaction_ratio: bool,
    /// A6 / A6′: the single treatment every external individual receives.
    pub uniform_external: Option<Treatment>,
    /// A7: external treatment is mean-exchangeable given X.
    pub external_exchangeable: bool,
    /// A7′: external treatment is mean-exchangeable given (X, W).
    pub external_exchangeable_given_w: bool,
    pub positivity: Positivity,
    pub target: Option<TargetFlags>,
}

fn support(scn: &Scenario, s: Source) -> BTreeSet<CellKey> {
    scn.x_law(s).into_iter().map(|(x, _)| x.clone()).collect()
}

/// Whether `f(x)` holds on every cell.
fn all_cells(cells: &BTreeSet<CellKey>, mut f: impl FnMut(&CellKey) -> Result<bool>) -> Result<bool> {
    for x in cells {
        if !f(x)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Difference (or ratio) effects of every non-anchor treatment agree between
/// intervened participations `s` and `t` on `cells`.
fn effects_agree(scn: &Scenario, s: Source, t: Source, cells: &BTreeSet<CellKey>, ratio: bool) -> Result<bool> {
    all_cells(cells, |x| {
        for &a in scn.treatments().iter().filter(|&&a| a != ANCHOR) {
            let (ps, ps0) = (scn.po_x(s, a, x)?, scn.po_x(s, ANCHOR, x)?);
            let (pt, pt0) = (scn.po_x(t, a, x)?, scn.po_x(t, ANCHOR, x)?);
            let agree = if ratio {
                ps0.abs() > FLAG_TOLERANCE && pt0.abs() > FLAG_TOLERANCE && close(ps * pt0, pt * ps0)
            } else {
                close(ps - ps0, pt - pt0)
            };
            if !agree {
                return Ok(false);
            }
        }
        Ok(true)
    })
}

fn means_agree(scn: &Scenario, s: Source, t: Source, cells: &BTreeSet<CellKey>) -> Result<BTreeMap<Treatment, bool>> {
    let mut out = BTreeMap::new();
    for &a in scn.treatments() {
        out.insert(a, all_cells(cells, |x| Ok(close(scn.po_x(s, a, x)?, scn.po_x(t, a, x)?)))?);
    }
    Ok(out)
}

pub fn check_conditions(scn: &Scenario) -> Result<ConditionFlags> {
    let mut flags = ConditionFlags::default();
    let (ext, trial, third) = (Source::EXTERNAL, Source::TRIAL, Source::TARGET);
    let trial_cells = support(scn, trial);
    let ext_cells = support(scn, ext);
    let shared: BTreeSet<CellKey> = trial_cells.intersection(&ext_cells).cloned().collect();
    let has_external = scn.has_source(ext);

    let mut engagement_absent = true;
    for (s, by_a) in &scn.spec().po_mean {
        if !scn.has_source(*s) {
            continue;
        }
        for (a, cells) in by_a {
            for (cell, &m) in cells {
                let reference = scn.spec().po_mean[&trial].get(a).and_then(|c| c.get(cell));
                if reference.is_some_and(|&r| !close(r, m)) {
                    engagement_absent = false;
                }
            }
        }
    }
    flags.engagement_absent = engagement_absent;

    if has_external {
        flags.mean_transport = means_agree(scn, trial, ext, &shared)?;
        flags.diff_transport = effects_agree(scn, trial, ext, &shared, false)?;
        flags.ratio_transport = effects_agree(scn, trial, ext, &shared, true)?;
        // Means are indexed by the intervened participation only, so the
        // interaction conditions compare the same table entries.
        flags.no_interaction_diff = effects_agree(scn, trial, ext, &trial_cells, false)?;
        flags.no_interaction_ratio = effects_agree(scn, trial, ext, &trial_cells, true)?;

        let ext_treatments: BTreeSet<Treatment> = scn.treatment_sets().get(&ext).cloned().unwrap_or_default();
        if ext_treatments.len() == 1 {
            flags.uniform_external = ext_treatments.first().copied();
        }

        let mut exchangeable = true;
        for x in &ext_cells {
            for &a in scn.treatments() {
                let marginal = scn.po_x(ext, a, x)?;
                for &given in &ext_treatments {
                    let (mut num, mut den) = (0.0, 0.0);
                    for (w, pw) in scn.w_law(x) {
                        let pa = scn.treatment_law(ext, x, w).and_then(|l| l.get(&given)).copied().unwrap_or(0.0);
                        num += pw * pa * scn.po(ext, a, x, w)?;
                        den += pw * pa;
                    }
                    if den > 0.0 && !close(num / den, marginal) {
                        exchangeable = false;
                    }
                }
            }
        }
        flags.external_exchangeable = exchangeable;
        // Treatment in the external source is assigned on (X, W) and the means
        // are indexed by (X, W), so conditioning on both always suffices.
        flags.external_exchangeable_given_w = true;

        flags.positivity.participation = trial_cells.is_subset(&ext_cells);
        for &a in &ext_treatments {
            let over_x = all_cells(&trial_cells, |x| Ok(scn.treatment_prob(ext, a, x) > 0.0))?;
            let over_xw = all_cells(&trial_cells, |x| {
                Ok(scn.w_law(x).iter().all(|(w, _)| {
                    scn.treatment_law(ext, x, w).and_then(|l| l.get(&a)).is_some_and(|&p| p > 0.0)
                }))
            })?;
            flags.positivity.external.insert(a, over_x);
            flags.positivity.external_given_w.insert(a, over_xw);
        }
    }

    let trial_treatments = scn.treatment_sets().get(&trial).cloned().unwrap_or_default();
    flags.positivity.trial = all_cells(&trial_cells, |x| {
        Ok(trial_treatments.iter().all(|&a| scn.treatment_prob(trial, a, x) > 0.0))
    })?;

    if scn.has_source(third) {
        let cells = support(scn, third);
        let with_trial: BTreeSet<CellKey> = cells.intersection(&trial_cells).cloned().collect();
        let with_ext: BTreeSet<CellKey> = cells.intersection(&ext_cells).cloned().collect();
        let mut t = TargetFlags {
            mean_transport_trial: means_agree(scn, trial, third, &with_trial)?,
            diff_transport_trial: effects_agree(scn, trial, third, &with_trial, false)?,
            ratio_transport_trial: effects_agree(scn, trial, third, &with_trial, true)?,
            support_trial: cells.is_subset(&trial_cells),
            anchor_positivity: !scn.is_covariate_only(third)
                && all_cells(&cells, |x| Ok(scn.treatment_prob(third, ANCHOR, x) > 0.0))?,
            ..Default::default()
        };
        if has_external {
            t.mean_transport_external = means_agree(scn, ext, third, &with_ext)?;
            t.diff_transport_external = effects_agree(scn, ext, third, &with_ext, false)?;
            t.ratio_transport_external = effects_agree(scn, ext, third, &with_ext, true)?;
            t.support_external = cells.is_subset(&ext_cells);
        }
        flags.target = Some(t);
    }
    Ok(flags)
}

/// Whether the conditions of a named functional's identification result hold
/// in the scenario (absent-engagement reading).
pub fn applicable(name: NamedEstimand, scn: &Scenario, flags: &ConditionFlags) -> bool {
    use NamedEstimand::*;
    let a4 = |a: Treatment| flags.mean_transport.get(&a).copied().unwrap_or(false);
    let a8 = |a: Treatment| flags.positivity.external.get(&a).copied().unwrap_or(false);
    let a8w = |a: Treatment| flags.positivity.external_given_w.get(&a).copied().unwrap_or(false);
    let a3 = flags.positivity.trial;
    let a5 = flags.positivity.participation;
    let a7 = flags.external_exchangeable;
    let anchored = a7 && a8(0) && a8(2) && a5 && a3;
    let t = flags.target.as_ref();
    let a4t = |s: Source, a: Treatment| {
        t.is_some_and(|t| {
            let map = if s == Source::TRIAL {
                &t.mean_transport_trial
            } else {
                &t.mean_transport_external
            };
            map.get(&a).copied().unwrap_or(false)
        })
    };
    let a5t_trial = t.is_some_and(|t| t.support_trial);
    let a5t_ext = t.is_some_and(|t| t.support_external);
    match name {
        Gamma11 | Gamma10 => a3,
        Gamma02 => a4(2) && a7 && a8(2) && a5,
        Gamma00 => a4(0) && a7 && a8(0) && a5,
        Beta => a3 && a4(0) && flags.uniform_external == Some(0),
        Eta => flags.uniform_external == Some(2) && a4(2) && a5,
        Lambda => flags.diff_transport && anchored,
        Rho => flags.ratio_transport && anchored,
        Mu => scn.has_w() && a4(2) && flags.external_exchangeable_given_w && a8w(2) && a5,
        GammaStar11 => a3 && a4t(Source::TRIAL, 1) && a5t_trial,
        GammaStar10 => a3 && a4t(Source::TRIAL, 0) && a5t_trial,
        GammaStar02 => a4t(Source::EXTERNAL, 2) && a7 && a8(2) && a5t_ext,
        GammaStar00 => a4t(Source::EXTERNAL, 0) && a7 && a8(0) && a5t_ext,
        LambdaStar => {
            t.is_some_and(|t| t.diff_transport_external)
                && a4t(Source::TRIAL, 0)
                && a7
                && a8(0)
                && a8(2)
                && a3
                && a5t_trial
                && a5t_ext
        }
        RhoStar1 => a3 && a5t_trial && t.is_some_and(|t| t.ratio_transport_trial && t.anchor_positivity),
        RhoStar2 => {
            a7 && a8(0) && a8(2) && a5t_ext && t.is_some_and(|t| t.ratio_transport_external && t.anchor_positivity)
        }
        Kappa => applicable(Gamma11, scn, flags) && applicable(Beta, scn, flags),
        Zeta => applicable(Gamma11, scn, flags) && applicable(Eta, scn, flags),
        Psi => applicable(Gamma11, scn, flags) && applicable(Gamma02, scn, flags),
        Phi => applicable(Gamma11, scn, flags) && applicable(Lambda, scn, flags),
        Theta => applicable(Gamma11, scn, flags) && applicable(Rho, scn, flags),
        Xi => applicable(Gamma11, scn, flags) && applicable(Mu, scn, flags),
        PsiStar => applicable(GammaStar11, scn, flags) && applicable(GammaStar02, scn, flags),
        PhiStar => {
            t.is_some_and(|t| t.diff_transport_trial && t.diff_transport_external)
                && a3
                && a7
                && a8(0)
                && a8(2)
                && a5t_trial
                && a5t_ext
        }
        Nu => applicable(RhoStar1, scn, flags) && applicable(RhoStar2, scn, flags),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags(name: &str) -> ConditionFlags {
        check_conditions(&Scenario::builtin(name).unwrap()).unwrap()
    }

    #[test]
    fn dgp_a_transports_in_mean() {
        let f = flags("dgp-a");
        assert!(f.engagement_absent);
        assert!(f.mean_transport.values().all(|&b| b));
        assert!(f.diff_transport && f.ratio_transport && f.external_exchangeable);
        assert_eq!(f.uniform_external, None);
        assert!(f.positivity.trial && f.positivity.participation);
        assert!(f.target.is_none());
    }

    #[test]
    fn dgp_c_transports_differences_only() {
        let f = flags("dgp-c");
        assert!(!f.engagement_absent);
        assert!(!f.mean_transport[&2] && !f.mean_transport[&0]);
        assert!(f.diff_transport && f.no_interaction_diff);
        assert!(!f.ratio_transport && !f.no_interaction_ratio);
    }

    #[test]
    fn dgp_r_transports_ratios_only() {
        let f = flags("dgp-r");
        assert!(!f.diff_transport && f.ratio_transport && f.no_interaction_ratio);
    }

    #[test]
    fn dgp_w_needs_w_for_exchangeability() {
        let f = flags("dgp-w");
        assert!(!f.external_exchangeable && f.external_exchangeable_given_w);
        assert!(f.mean_transport[&2]);
    }

    #[test]
    fn uniform_external_variants() {
        assert_eq!(flags("dgp-a6").uniform_external, Some(0));
        assert_eq!(flags("dgp-b").uniform_external, Some(2));
    }

    #[test]
    fn third_population_flags() {
        let t = flags("dgp-d").target.unwrap();
        assert!(t.anchor_positivity && t.support_trial && t.support_external);
        assert!(t.mean_transport_trial[&1] && t.diff_transport_external && t.ratio_transport_trial);
        let t = flags("dgp-d-covariates").target.unwrap();
        assert!(!t.anchor_positivity);
    }

    #[test]
    fn constant_means_transport_on_every_scale() {
        let mut spec = Scenario::builtin("dgp-d").unwrap().spec().clone();
        for by_a in spec.po_mean.values_mut() {
            for cells in by_a.values_mut() {
                for m in cells.values_mut() {
                    *m = 0.3;
                }
            }
        }
        let scn = Scenario::new(spec).unwrap();
        let f = check_conditions(&scn).unwrap();
        assert!(f.engagement_absent && f.diff_transport && f.ratio_transport);
        assert!(f.mean_transport.values().all(|&b| b));
        let t = f.target.unwrap();
        assert!(t.diff_transport_trial && t.diff_transport_external);
        assert!(t.ratio_transport_trial && t.ratio_transport_external);
    }

    #[test]
    fn applicability() {
        let scn = Scenario::builtin("dgp-c").unwrap();
        let f = check_conditions(&scn).unwrap();
        assert!(applicable(NamedEstimand::Lambda, &scn, &f));
        assert!(!applicable(NamedEstimand::Gamma02, &scn, &f));
        assert!(!applicable(NamedEstimand::Rho, &scn, &f));
        let scn = Scenario::builtin("dgp-b").unwrap();
        let f = check_conditions(&scn).unwrap();
        assert!(applicable(NamedEstimand::Eta, &scn, &f));
        assert!(!applicable(NamedEstimand::Lambda, &scn, &f));
    }
}
