//! Plug-in estimators of the identifying functionals, their weighting
//! re-expressions, and difference contrasts.
//!
//! An [`Estimator`] borrows a dataset and memoizes every nuisance fit it
//! triggers, so evaluating several functionals on the same data reuses the
//! shared conditional means and propensities.

pub mod catalog;
mod gformula;
mod ipw;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

pub use catalog::{describe, describe_contrast, describe_target, CausalTarget, Description, NamedEstimand};

use crate::dataset::{CompositeDataset, CovariateSet, Source, Treatment};
use crate::error::{Error, Result};
use crate::nuisance::{fit_model, NuisanceConfig, OutcomeModel, Response, Subset};

/// Which identifying functional to compute.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Strategy {
    /// E[E[Y | X, S=s, A=a] | S=target].
    PomGform,
    /// Outcome mean fitted on the pooled control arms of trial and external data.
    PomPooledControl,
    /// Outcome mean of an external source that received a single treatment.
    PomExternalUniform,
    /// External arm mean corrected by the anchor-arm difference between sources.
    PomDiffAnchor,
    /// External arm mean rescaled by the anchor-arm ratio between sources.
    PomRatioAnchor,
    /// Two-stage adjustment for external-only covariates W.
    PomNestedW,
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpretation {
    /// Effects of treatment alone, assuming trial engagement has no effect.
    #[default]
    AbsentEngagement,
    /// Effects of jointly setting trial participation and treatment.
    JointIntervention,
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorForm {
    #[default]
    Gformula,
    Ipw,
}

fn trial() -> Source {
    Source::TRIAL
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EstimandSpec {
    pub strategy: Strategy,
    pub source: Source,
    pub treatment: Treatment,
    pub target: Source,
    #[serde(default)]
    pub anchor_treatment: Treatment,
    /// Source whose anchor-arm mean is carried over (the trial for the
    /// two-source functionals, the third population for the starred ratios).
    #[serde(default = "trial")]
    pub anchor_source: Source,
    #[serde(default)]
    pub interpretation: Interpretation,
    #[serde(default)]
    pub form: EstimatorForm,
}

impl EstimandSpec {
    /// γ_{s,a} marginalized over the covariates of `target`.
    pub fn gform(source: Source, treatment: Treatment, target: Source) -> Self {
        EstimandSpec {
            strategy: Strategy::PomGform,
            source,
            treatment,
            target,
            anchor_treatment: 0,
            anchor_source: Source::TRIAL,
            interpretation: Interpretation::AbsentEngagement,
            form: EstimatorForm::Gformula,
        }
    }

    pub fn with_form(mut self, form: EstimatorForm) -> Self {
        self.form = form;
        self
    }

    pub fn with_interpretation(mut self, interpretation: Interpretation) -> Self {
        self.interpretation = interpretation;
        self
    }
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    #[default]
    Difference,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContrastSpec {
    pub left: EstimandSpec,
    pub right: EstimandSpec,
    #[serde(default)]
    pub scale: Scale,
}

impl ContrastSpec {
    pub fn difference(left: EstimandSpec, right: EstimandSpec) -> Self {
        ContrastSpec {
            left,
            right,
            scale: Scale::Difference,
        }
    }

    pub fn reversed(&self) -> Self {
        ContrastSpec::difference(self.right.clone(), self.left.clone())
    }
}

/// A single functional or a contrast of two.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Estimand(EstimandSpec),
    Contrast(ContrastSpec),
}

impl Target {
    pub fn named(name: NamedEstimand) -> Self {
        name.target(Interpretation::AbsentEngagement, EstimatorForm::Gformula)
    }

    pub fn form(&self) -> EstimatorForm {
        match self {
            Target::Estimand(e) => e.form,
            Target::Contrast(c) => c.left.form,
        }
    }

    /// The same target with every leg computed in `form`.
    pub fn with_form(&self, form: EstimatorForm) -> Self {
        match self {
            Target::Estimand(e) => Target::Estimand(e.clone().with_form(form)),
            Target::Contrast(c) => Target::Contrast(ContrastSpec::difference(
                c.left.clone().with_form(form),
                c.right.clone().with_form(form),
            )),
        }
    }

    pub fn with_interpretation(&self, interpretation: Interpretation) -> Self {
        match self {
            Target::Estimand(e) => Target::Estimand(e.clone().with_interpretation(interpretation)),
            Target::Contrast(c) => Target::Contrast(ContrastSpec::difference(
                c.left.clone().with_interpretation(interpretation),
                c.right.clone().with_interpretation(interpretation),
            )),
        }
    }

    pub fn legs(&self) -> Vec<&EstimandSpec> {
        match self {
            Target::Estimand(e) => vec![e],
            Target::Contrast(c) => vec![&c.left, &c.right],
        }
    }
}

/// Point estimate, optional interval, and the conditions it relies on.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimateReport {
    pub estimand_id: String,
    pub proposition: Option<u8>,
    pub causal_estimand: String,
    pub interpretation: Interpretation,
    pub estimator_form: EstimatorForm,
    pub point: f64,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interval: Option<IntervalInfo>,
    /// Total row weight per source ("0", "1", "2").
    pub n_by_source: BTreeMap<String, f64>,
    pub assumptions: Vec<String>,
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub diagnostics: BTreeMap<String, serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IntervalInfo {
    pub method: String,
    pub level: f64,
    pub replicates: usize,
    pub failed_replicates: usize,
}

impl EstimateReport {
    /// Attaches an interval. An interval that misses the point estimate (which
    /// can happen for percentile intervals of skewed replicate distributions)
    /// is widened to include it and the widening is recorded as a warning.
    pub fn set_interval(&mut self, lo: f64, hi: f64, info: IntervalInfo) {
        let (mut lo, mut hi) = (lo.min(hi), lo.max(hi));
        if self.point < lo || self.point > hi {
            self.warnings.push(format!(
                "bootstrap interval [{lo:.6}, {hi:.6}] excluded the point estimate and was widened to include it"
            ));
            lo = lo.min(self.point);
            hi = hi.max(self.point);
        }
        self.ci_lo = Some(lo);
        self.ci_hi = Some(hi);
        self.interval = Some(info);
    }

    pub fn contains(&self, value: f64) -> Option<bool> {
        Some(self.ci_lo? <= value && value <= self.ci_hi?)
    }
}

/// A point value plus warnings raised while computing it.
#[derive(Clone, Debug, Default)]
pub(crate) struct Value {
    pub point: f64,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum ModelKey {
    Outcome { set: CovariateSet, subset: Subset },
    Participation { source: Source },
    Treatment { source: Source, treatment: Treatment, set: CovariateSet },
    StageTwo { treatment: Treatment },
}

impl fmt::Display for ModelKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKey::Outcome { set, subset } => write!(f, "E[Y | {set:?}, {subset}]"),
            ModelKey::Participation { source } => write!(f, "Pr[S={source} | X]"),
            ModelKey::Treatment { source, treatment, set } => {
                write!(f, "Pr[A={treatment} | {set:?}, S={source}]")
            }
            ModelKey::StageTwo { treatment } => {
                write!(f, "E[E[Y | X, W, S=0, A={treatment}] | X, S=0]")
            }
        }
    }
}

/// Evaluates functionals on one dataset, memoizing nuisance fits.
pub struct Estimator<'a> {
    data: &'a CompositeDataset,
    config: NuisanceConfig,
    cache: Mutex<HashMap<ModelKey, Arc<OutcomeModel>>>,
}

impl<'a> Estimator<'a> {
    pub fn new(data: &'a CompositeDataset, config: NuisanceConfig) -> Self {
        Estimator {
            data,
            config,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn data(&self) -> &'a CompositeDataset {
        self.data
    }

    pub fn config(&self) -> &NuisanceConfig {
        &self.config
    }

    fn cached(&self, key: ModelKey, fit: impl FnOnce() -> Result<OutcomeModel>) -> Result<Arc<OutcomeModel>> {
        if let Some(m) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(Arc::clone(m));
        }
        // Fit outside the lock; a concurrent duplicate fit is harmless.
        let model = Arc::new(fit()?);
        let mut cache = self.cache.lock().expect("cache lock");
        Ok(Arc::clone(cache.entry(key).or_insert(model)))
    }

    pub(crate) fn outcome_model(&self, set: CovariateSet, subset: Subset) -> Result<Arc<OutcomeModel>> {
        let key = ModelKey::Outcome {
            set,
            subset: subset.clone(),
        };
        self.cached(key, || {
            fit_model(self.data, set, &subset, Response::Outcome, self.config.outcome_family, &self.config)
        })
    }

    /// E[Y | X, S=s, A=a]; an empty cell is reported as such.
    pub(crate) fn cell_mean(&self, s: Source, a: Treatment) -> Result<Arc<OutcomeModel>> {
        self.outcome_model(CovariateSet::X, Subset::cell(s, a))
            .map_err(|e| match e {
                Error::EmptySubset(_) => Error::EmptyCell {
                    s,
                    a,
                },
                e => e,
            })
    }

    /// Pr[S=s | X] among all rows.
    pub(crate) fn participation(&self, s: Source) -> Result<Arc<OutcomeModel>> {
        self.cached(ModelKey::Participation { source: s }, || {
            fit_model(
                self.data,
                CovariateSet::X,
                &Subset::all(),
                Response::SourceIs(s),
                self.config.propensity_family,
                &self.config,
            )
        })
    }

    /// Pr[A=a | covariates, S=s].
    pub(crate) fn treatment_propensity(&self, s: Source, a: Treatment, set: CovariateSet) -> Result<Arc<OutcomeModel>> {
        let key = ModelKey::Treatment {
            source: s,
            treatment: a,
            set,
        };
        self.cached(key, || {
            fit_model(
                self.data,
                set,
                &Subset::source(s),
                Response::TreatmentIs(a),
                self.config.propensity_family,
                &self.config,
            )
        })
        .map_err(|e| match e {
            Error::EmptySubset(_) => Error::EmptyCell {
                s,
                a,
            },
            e => e,
        })
    }

    /// Every nuisance model fitted so far, in a stable order.
    pub fn fitted_models(&self) -> Vec<(String, Arc<OutcomeModel>)> {
        let cache = self.cache.lock().expect("cache lock");
        let mut models: Vec<(&ModelKey, &Arc<OutcomeModel>)> = cache.iter().collect();
        models.sort_by(|a, b| a.0.cmp(b.0));
        models
            .into_iter()
            .map(|(k, m)| (k.to_string(), Arc::clone(m)))
            .collect()
    }

    pub(crate) fn cell_weight(&self, s: Source, a: Treatment) -> f64 {
        (0..self.data.len())
            .filter(|&i| self.data.source(i) == s && self.data.treatment(i) == Some(a))
            .map(|i| self.data.weight(i))
            .sum()
    }

    fn check_target(&self, target: Source) -> Result<()> {
        let total: f64 = self.data.rows_in(target).map(|i| self.data.weight(i)).sum();
        if total > 0.0 {
            Ok(())
        } else {
            Err(Error::EmptyTarget(target))
        }
    }

    /// Weighted mean of `f` over rows of `target`.
    pub(crate) fn marginalize(&self, target: Source, mut f: impl FnMut(usize) -> Result<f64>) -> Result<f64> {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..self.data.len() {
            let w = self.data.weight(i);
            if w > 0.0 && self.data.source(i) == target {
                num += w * f(i)?;
                den += w;
            }
        }
        if den > 0.0 {
            Ok(num / den)
        } else {
            Err(Error::EmptyTarget(target))
        }
    }

    pub(crate) fn value(&self, spec: &EstimandSpec) -> Result<Value> {
        describe(spec)?;
        self.check_target(spec.target)?;
        match spec.form {
            EstimatorForm::Gformula => self.gformula_value(spec),
            EstimatorForm::Ipw => self.ipw_value(spec),
        }
    }

    pub(crate) fn target_value(&self, target: &Target) -> Result<Value> {
        match target {
            Target::Estimand(e) => self.value(e),
            Target::Contrast(c) => {
                describe_contrast(c)?;
                let l = self.value(&c.left)?;
                let r = self.value(&c.right)?;
                let mut warnings = l.warnings;
                for w in r.warnings {
                    if !warnings.contains(&w) {
                        warnings.push(w);
                    }
                }
                Ok(Value {
                    point: l.point - r.point,
                    warnings,
                })
            }
        }
    }

    /// Point estimate only.
    pub fn point(&self, target: &Target) -> Result<f64> {
        self.target_value(target).map(|v| v.point)
    }

    /// Point estimate with identification metadata, no interval.
    pub fn report(&self, target: &Target) -> Result<EstimateReport> {
        let description = describe_target(target)?;
        let value = self.target_value(target)?;
        let leg = target.legs()[0];
        Ok(EstimateReport {
            estimand_id: description.id,
            proposition: description.proposition,
            causal_estimand: description.causal.to_string(),
            interpretation: leg.interpretation,
            estimator_form: leg.form,
            point: value.point,
            ci_lo: None,
            ci_hi: None,
            interval: None,
            n_by_source: self
                .data
                .source_totals()
                .into_iter()
                .map(|(s, n)| (s.to_string(), n))
                .collect(),
            assumptions: description.assumptions,
            warnings: value.warnings,
            diagnostics: BTreeMap::new(),
        })
    }

    pub fn estimate(&self, spec: &EstimandSpec) -> Result<EstimateReport> {
        self.report(&Target::Estimand(spec.clone()))
    }

    pub fn contrast(&self, spec: &ContrastSpec) -> Result<EstimateReport> {
        self.report(&Target::Contrast(spec.clone()))
    }

    /// γ_{s,a} over the covariates of `target`.
    pub fn pom_gform(&self, s: Source, a: Treatment, target: Source) -> Result<EstimateReport> {
        self.estimate(&EstimandSpec::gform(s, a, target))
    }

    /// β: control mean from the pooled control arms.
    pub fn pom_pooled_control(&self) -> Result<EstimateReport> {
        self.report(&Target::named(NamedEstimand::Beta))
    }

    /// η: treatment-2 mean from a uniformly treated external source.
    pub fn pom_external_uniform(&self) -> Result<EstimateReport> {
        self.report(&Target::named(NamedEstimand::Eta))
    }

    /// λ: external treatment-2 mean with a difference-scale anchor correction.
    pub fn pom_diff_anchor(&self, interpretation: Interpretation) -> Result<EstimateReport> {
        self.report(&Target::named(NamedEstimand::Lambda).with_interpretation(interpretation))
    }

    /// ρ (anchor in the trial, target 1) or ρ*₂ (anchor in source 2, target 2).
    pub fn pom_ratio_anchor(&self, anchor_source: Source, target: Source) -> Result<EstimateReport> {
        let spec = EstimandSpec {
            strategy: Strategy::PomRatioAnchor,
            source: Source::EXTERNAL,
            treatment: 2,
            target,
            anchor_treatment: 0,
            anchor_source,
            interpretation: Interpretation::AbsentEngagement,
            form: EstimatorForm::Gformula,
        };
        self.estimate(&spec)
    }

    /// μ: two-stage adjustment for external-only covariates.
    pub fn pom_nested_w(&self) -> Result<EstimateReport> {
        self.report(&Target::named(NamedEstimand::Mu))
    }

    /// The weighting re-expression of `spec`.
    pub fn pom_ipw(&self, spec: &EstimandSpec) -> Result<EstimateReport> {
        self.estimate(&spec.clone().with_form(EstimatorForm::Ipw))
    }
}

#[cfg(test)]
mod tests;
