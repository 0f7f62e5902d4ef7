//! Scenario tables: source shares, covariate laws, treatment laws and
//! potential-outcome means indexed by the intervened participation.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{CellKey, CovariateColumn, CovariateSchema, OutcomeKind, Source, Treatment};
use crate::error::{Error, Result};

/// Probabilities summing to one must do so within this tolerance.
pub const TABLE_TOLERANCE: f64 = 1e-12;

pub type Law<K> = BTreeMap<K, f64>;

fn unit() -> f64 {
    1.0
}

/// Serialized form of a scenario. Cells are comma-joined covariate levels;
/// when external-only covariates exist, treatment laws of source 0 and all
/// potential-outcome means are keyed by the joint (X, W) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    #[serde(default)]
    pub version: u32,
    #[serde(default)]
    pub description: String,
    pub outcome_kind: OutcomeKind,
    /// Standard deviation of the normal noise around the mean for continuous outcomes.
    #[serde(default = "unit")]
    pub noise_sd: f64,
    pub covariates: Vec<String>,
    #[serde(default)]
    pub external_covariates: Vec<String>,
    pub source_probs: BTreeMap<Source, f64>,
    pub covariate_law: BTreeMap<Source, Law<CellKey>>,
    /// Pr[W | X], shared by every population. W is recorded for source 0 only.
    #[serde(default)]
    pub w_given_x: BTreeMap<CellKey, Law<CellKey>>,
    pub treatment_law: BTreeMap<Source, BTreeMap<CellKey, Law<Treatment>>>,
    /// E[Y^{s,a} | cell], indexed by intervened participation s, then treatment.
    pub po_mean: BTreeMap<Source, BTreeMap<Treatment, BTreeMap<CellKey, f64>>>,
    /// Sources whose rows carry covariates only.
    #[serde(default)]
    pub covariate_only: Vec<Source>,
}

/// A validated scenario.
#[derive(Clone, Debug)]
pub struct Scenario {
    spec: ScenarioSpec,
    schema: CovariateSchema,
    sources: Vec<Source>,
    w_law: BTreeMap<CellKey, Vec<(CellKey, f64)>>,
    treatments: BTreeSet<Treatment>,
}

const BUILTIN: [(&str, &str); 8] = [
    ("dgp-a", include_str!("../../scenarios/dgp-a.json")),
    ("dgp-a6", include_str!("../../scenarios/dgp-a6.json")),
    ("dgp-b", include_str!("../../scenarios/dgp-b.json")),
    ("dgp-c", include_str!("../../scenarios/dgp-c.json")),
    ("dgp-d", include_str!("../../scenarios/dgp-d.json")),
    ("dgp-d-covariates", include_str!("../../scenarios/dgp-d-covariates.json")),
    ("dgp-r", include_str!("../../scenarios/dgp-r.json")),
    ("dgp-w", include_str!("../../scenarios/dgp-w.json")),
];

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidScenario(msg.into())
}

fn check_law<K: std::fmt::Debug>(law: &Law<K>, what: &str) -> Result<()> {
    if law.values().any(|&p| !(0.0..=1.0 + TABLE_TOLERANCE).contains(&p)) {
        return Err(invalid(format!("{what}: probabilities must lie in [0, 1]")));
    }
    let total: f64 = law.values().sum();
    if (total - 1.0).abs() > TABLE_TOLERANCE {
        return Err(invalid(format!("{what}: probabilities sum to {total}, not 1")));
    }
    Ok(())
}

pub(crate) fn join(x: &CellKey, w: &CellKey) -> CellKey {
    CellKey(x.0.iter().chain(&w.0).copied().collect())
}

impl Scenario {
    pub fn builtin_names() -> impl Iterator<Item = &'static str> {
        BUILTIN.iter().map(|(n, _)| *n)
    }

    pub fn builtin(name: &str) -> Result<Scenario> {
        let (_, text) = BUILTIN
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::UnknownScenario(name.to_string()))?;
        Scenario::from_json(text)
    }

    pub fn from_json(text: &str) -> Result<Scenario> {
        Scenario::new(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Scenario> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Scenario::from_json(&text)
    }

    /// A built-in name, or otherwise a path to a scenario file.
    pub fn resolve(name_or_path: &str) -> Result<Scenario> {
        match Scenario::builtin(name_or_path) {
            Err(Error::UnknownScenario(_)) if Path::new(name_or_path).exists() => Scenario::load(name_or_path),
            r => r,
        }
    }

    pub fn new(spec: ScenarioSpec) -> Result<Scenario> {
        let schema = CovariateSchema::new(
            spec.covariates.iter().map(CovariateColumn::categorical).collect(),
            spec.external_covariates.iter().map(CovariateColumn::categorical).collect(),
        )?;
        if spec.covariates.is_empty() {
            return Err(invalid("at least one covariate is required"));
        }
        check_law(&spec.source_probs, "source_probs")?;
        let sources: Vec<Source> = spec
            .source_probs
            .iter()
            .filter(|(_, &p)| p > 0.0)
            .map(|(&s, _)| s)
            .collect();
        if !sources.contains(&Source::TRIAL) {
            return Err(invalid("the index trial (s=1) needs a positive share"));
        }
        if spec.covariate_only.contains(&Source::TRIAL) {
            return Err(invalid("the index trial cannot be covariate-only"));
        }
        if spec.outcome_kind == OutcomeKind::Continuous && !(spec.noise_sd.is_finite() && spec.noise_sd >= 0.0) {
            return Err(invalid("noise_sd must be finite and non-negative"));
        }
        let has_w = !spec.external_covariates.is_empty();
        let (px, pw) = (spec.covariates.len(), spec.external_covariates.len());

        let mut all_x = BTreeSet::new();
        for &s in &sources {
            let law = spec
                .covariate_law
                .get(&s)
                .ok_or_else(|| invalid(format!("no covariate law for source {s}")))?;
            check_law(law, &format!("covariate_law[{s}]"))?;
            for (x, &p) in law {
                if x.0.len() != px {
                    return Err(invalid(format!("covariate cell `{x}` has the wrong arity")));
                }
                if p > 0.0 {
                    all_x.insert(x.clone());
                }
            }
        }

        let mut w_law = BTreeMap::new();
        for x in &all_x {
            let cells = if has_w {
                let law = spec
                    .w_given_x
                    .get(x)
                    .ok_or_else(|| invalid(format!("no law for W given X={x}")))?;
                check_law(law, &format!("w_given_x[{x}]"))?;
                if law.keys().any(|w| w.0.len() != pw) {
                    return Err(invalid(format!("w_given_x[{x}] has a cell of the wrong arity")));
                }
                law.iter().filter(|(_, &p)| p > 0.0).map(|(w, &p)| (w.clone(), p)).collect()
            } else {
                vec![(CellKey(Vec::new()), 1.0)]
            };
            w_law.insert(x.clone(), cells);
        }

        let mut treatments = BTreeSet::new();
        for &s in sources.iter().filter(|s| !spec.covariate_only.contains(s)) {
            let by_cell = spec
                .treatment_law
                .get(&s)
                .ok_or_else(|| invalid(format!("no treatment law for source {s}")))?;
            for (x, &p) in &spec.covariate_law[&s] {
                if p == 0.0 {
                    continue;
                }
                let keyed_by_w = s == Source::EXTERNAL && has_w;
                let keys: Vec<CellKey> = if keyed_by_w {
                    w_law[x].iter().map(|(w, _)| join(x, w)).collect()
                } else {
                    vec![x.clone()]
                };
                for key in keys {
                    let law = by_cell
                        .get(&key)
                        .ok_or_else(|| invalid(format!("no treatment law for source {s}, cell {key}")))?;
                    check_law(law, &format!("treatment_law[{s}][{key}]"))?;
                    treatments.extend(law.iter().filter(|(_, &p)| p > 0.0).map(|(&a, _)| a));
                }
            }
        }

        for &s in &sources {
            for &a in &treatments {
                for x in &all_x {
                    for (w, _) in &w_law[x] {
                        let key = join(x, w);
                        let m = spec
                            .po_mean
                            .get(&s)
                            .and_then(|t| t.get(&a))
                            .and_then(|t| t.get(&key))
                            .ok_or_else(|| invalid(format!("no potential-outcome mean for s={s}, a={a}, cell {key}")))?;
                        if !m.is_finite() {
                            return Err(invalid(format!("potential-outcome mean for s={s}, a={a}, cell {key} is not finite")));
                        }
                        if spec.outcome_kind == OutcomeKind::Binary && !(0.0..=1.0).contains(m) {
                            return Err(invalid(format!(
                                "potential-outcome mean {m} for s={s}, a={a}, cell {key} is outside [0, 1]"
                            )));
                        }
                    }
                }
            }
        }

        Ok(Scenario {
            spec,
            schema,
            sources,
            w_law,
            treatments,
        })
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn schema(&self) -> &CovariateSchema {
        &self.schema
    }

    pub fn outcome_kind(&self) -> OutcomeKind {
        self.spec.outcome_kind
    }

    pub fn has_w(&self) -> bool {
        !self.spec.external_covariates.is_empty()
    }

    /// Sources with a positive share.
    pub fn sources(&self) -> &[Source] {
        &self.sources
    }

    pub fn has_source(&self, s: Source) -> bool {
        self.sources.contains(&s)
    }

    pub fn share(&self, s: Source) -> f64 {
        self.spec.source_probs.get(&s).copied().unwrap_or(0.0)
    }

    pub fn is_covariate_only(&self, s: Source) -> bool {
        self.spec.covariate_only.contains(&s)
    }

    /// Every treatment given with positive probability somewhere.
    pub fn treatments(&self) -> &BTreeSet<Treatment> {
        &self.treatments
    }

    /// Covariate cells with positive probability in source `s`.
    pub fn x_law(&self, s: Source) -> Vec<(&CellKey, f64)> {
        self.spec
            .covariate_law
            .get(&s)
            .map(|law| law.iter().filter(|(_, &p)| p > 0.0).map(|(x, &p)| (x, p)).collect())
            .unwrap_or_default()
    }

    pub fn x_prob(&self, s: Source, x: &CellKey) -> f64 {
        self.spec
            .covariate_law
            .get(&s)
            .and_then(|law| law.get(x))
            .copied()
            .unwrap_or(0.0)
    }

    /// Pr[W | X=x]; a single empty cell when the scenario has no W.
    pub fn w_law(&self, x: &CellKey) -> &[(CellKey, f64)] {
        self.w_law.get(x).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Pr[A | X=x, W=w, S=s]; `None` for covariate-only sources.
    pub fn treatment_law(&self, s: Source, x: &CellKey, w: &CellKey) -> Option<&Law<Treatment>> {
        let by_cell = self.spec.treatment_law.get(&s)?;
        if s == Source::EXTERNAL && self.has_w() {
            by_cell.get(&join(x, w))
        } else {
            by_cell.get(x)
        }
    }

    /// Pr[A=a | X=x, S=s] with W marginalized.
    pub fn treatment_prob(&self, s: Source, a: Treatment, x: &CellKey) -> f64 {
        self.w_law(x)
            .iter()
            .map(|(w, pw)| pw * self.treatment_law(s, x, w).and_then(|l| l.get(&a)).copied().unwrap_or(0.0))
            .sum()
    }

    /// E[Y^{s,a} | X=x, W=w].
    pub fn po(&self, s: Source, a: Treatment, x: &CellKey, w: &CellKey) -> Result<f64> {
        let key = join(x, w);
        self.spec
            .po_mean
            .get(&s)
            .and_then(|t| t.get(&a))
            .and_then(|t| t.get(&key))
            .copied()
            .ok_or_else(|| invalid(format!("no potential-outcome mean for s={s}, a={a}, cell {key}")))
    }

    /// E[Y^{s,a} | X=x] with W marginalized.
    pub fn po_x(&self, s: Source, a: Treatment, x: &CellKey) -> Result<f64> {
        let mut total = 0.0;
        for (w, pw) in self.w_law(x) {
            total += pw * self.po(s, a, x, w)?;
        }
        Ok(total)
    }

    /// Declared treatment sets: every treatment with positive probability per source.
    pub fn treatment_sets(&self) -> BTreeMap<Source, BTreeSet<Treatment>> {
        let mut out = BTreeMap::new();
        for &s in &self.sources {
            if self.is_covariate_only(s) {
                continue;
            }
            let set: BTreeSet<Treatment> = self.spec.treatment_law[&s]
                .values()
                .flat_map(|law| law.iter().filter(|(_, &p)| p > 0.0).map(|(&a, _)| a))
                .collect();
            out.insert(s, set);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_validate() {
        for name in Scenario::builtin_names() {
            let s = Scenario::builtin(name).unwrap();
            assert_eq!(s.name(), name);
        }
        assert!(matches!(Scenario::builtin("nope"), Err(Error::UnknownScenario(_))));
    }

    #[test]
    fn tables_must_sum_to_one() {
        let mut spec = Scenario::builtin("dgp-a").unwrap().spec().clone();
        spec.covariate_law.get_mut(&Source::TRIAL).unwrap().insert("1".parse().unwrap(), 0.31);
        assert!(matches!(Scenario::new(spec), Err(Error::InvalidScenario(_))));
    }

    #[test]
    fn binary_means_must_be_probabilities() {
        let mut spec = Scenario::builtin("dgp-a").unwrap().spec().clone();
        spec.po_mean.get_mut(&Source::TRIAL).unwrap().get_mut(&1).unwrap().insert("0".parse().unwrap(), 1.2);
        assert!(Scenario::new(spec).is_err());
    }

    #[test]
    fn marginal_external_treatment_law_in_dgp_w() {
        let s = Scenario::builtin("dgp-w").unwrap();
        let x0: CellKey = "0".parse().unwrap();
        let x1: CellKey = "1".parse().unwrap();
        assert!((s.treatment_prob(Source::EXTERNAL, 2, &x0) - 0.4).abs() < 1e-15);
        assert!((s.treatment_prob(Source::EXTERNAL, 2, &x1) - 0.7).abs() < 1e-15);
        assert!((s.po_x(Source::TRIAL, 2, &x0).unwrap() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn json_round_trip() {
        let s = Scenario::builtin("dgp-d").unwrap();
        let text = serde_json::to_string(s.spec()).unwrap();
        let back = Scenario::from_json(&text).unwrap();
        assert_eq!(back.spec(), s.spec());
    }
}
